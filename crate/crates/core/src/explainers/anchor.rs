//! Greedy hyperrectangle anchors found on a search sample.

use std::collections::BTreeMap;

use super::rule::{Bound, ScopedRule};
use crate::error::{Error, Result};
use crate::trace::{FeatureValue, Instance, Label, Trace};

/// One tightening step on the greedy path.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// Keep `x[feature] <= cut`.
    AtMost { feature: usize, cut: f64 },
    /// Keep `x[feature] > cut`.
    Above { feature: usize, cut: f64 },
    /// Keep `x[feature] == token`.
    Equals { feature: usize, token: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub rule: ScopedRule,
    /// Constraints in the order they were added.
    pub path: Vec<Constraint>,
    /// Empirical precision on the search sample.
    pub precision: f64,
    /// Number of search-sample records the rule covers.
    pub coverage: usize,
    /// False when the threshold could not be met on the sample; `rule` is
    /// then the end of the greedy path.
    pub reached: bool,
}

/// Grows an anchor around `x` by greedy constraint addition.
///
/// Each step adds the single constraint with the highest empirical precision
/// for `label` on the records still covered: a midpoint cut between
/// consecutive covered values of a numeric feature (kept on `x`'s side), or a
/// pin of a categorical feature to `x`'s value. Ties prefer larger coverage,
/// then the lower feature index. The search stops once precision reaches
/// `threshold`, or when no constraint can shrink the covered set (for
/// example, all covered records equal `x`).
///
/// The path does not depend on `threshold`, so a higher threshold always
/// returns an extension of a lower threshold's path.
pub fn find_anchor(x: &Instance, label: &Label, sample: &Trace, threshold: f64) -> Result<Anchor> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    if sample.is_empty() {
        return Err(Error::Empty("anchor search sample"));
    }
    let d = sample.schema().len();
    if x.features.len() != d {
        return Err(Error::invalid(format!(
            "instance has {} features, sample schema has {d}",
            x.features.len()
        )));
    }
    let records = sample.records();
    let hit: Vec<bool> = records.iter().map(|r| &r.prediction == label).collect();
    let mut covered: Vec<usize> = (0..records.len()).collect();
    let mut path = Vec::new();

    loop {
        let hits = covered.iter().filter(|&&i| hit[i]).count();
        let precision = hits as f64 / covered.len() as f64;
        if precision >= threshold {
            return Ok(finish(sample, path, precision, covered.len(), true));
        }
        let mut best: Option<(f64, usize, Constraint)> = None;
        let mut offer = |prec: f64, cov: usize, c: Constraint| {
            let better = match &best {
                None => true,
                Some((bp, bc, _)) => prec > *bp || (prec == *bp && cov > *bc),
            };
            if better {
                best = Some((prec, cov, c));
            }
        };
        for f in 0..d {
            match &x.features[f] {
                FeatureValue::Num(xv) => {
                    let mut vals: Vec<(f64, bool)> = Vec::with_capacity(covered.len());
                    for &i in &covered {
                        let v = records[i].instance.features[f].as_num().ok_or_else(|| {
                            Error::invalid(format!("feature {f} is categorical in the sample"))
                        })?;
                        vals.push((v, hit[i]));
                    }
                    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let m = vals.len();
                    let total_hits = hits;
                    let mut below_hits = 0usize;
                    for j in 0..m.saturating_sub(1) {
                        below_hits += vals[j].1 as usize;
                        if vals[j].0 == vals[j + 1].0 {
                            continue;
                        }
                        let cut = vals[j].0 + (vals[j + 1].0 - vals[j].0) / 2.0;
                        let (cov, h, c) = if *xv <= cut {
                            (j + 1, below_hits, Constraint::AtMost { feature: f, cut })
                        } else {
                            (m - j - 1, total_hits - below_hits, Constraint::Above { feature: f, cut })
                        };
                        offer(h as f64 / cov as f64, cov, c);
                    }
                }
                FeatureValue::Cat(xc) => {
                    let mut cov = 0usize;
                    let mut h = 0usize;
                    for &i in &covered {
                        let v = records[i].instance.features[f].as_cat().ok_or_else(|| {
                            Error::invalid(format!("feature {f} is numeric in the sample"))
                        })?;
                        if v == xc {
                            cov += 1;
                            h += hit[i] as usize;
                        }
                    }
                    if cov > 0 && cov < covered.len() {
                        offer(
                            h as f64 / cov as f64,
                            cov,
                            Constraint::Equals {
                                feature: f,
                                token: xc.clone(),
                            },
                        );
                    }
                }
            }
        }
        let Some((_, _, c)) = best else {
            return Ok(finish(sample, path, precision, covered.len(), false));
        };
        covered.retain(|&i| satisfies(&records[i].instance.features, &c));
        path.push(c);
    }
}

fn satisfies(features: &[FeatureValue], c: &Constraint) -> bool {
    match c {
        Constraint::AtMost { feature, cut } => features[*feature].as_num().is_some_and(|v| v <= *cut),
        Constraint::Above { feature, cut } => features[*feature].as_num().is_some_and(|v| v > *cut),
        Constraint::Equals { feature, token } => features[*feature].as_cat() == Some(token.as_str()),
    }
}

/// Folds a constraint path into a hyperrectangle.
pub fn path_to_rule(schema: &[String], path: &[Constraint]) -> ScopedRule {
    let mut bounds: BTreeMap<String, Bound> = BTreeMap::new();
    for c in path {
        match c {
            Constraint::AtMost { feature, cut } => {
                let b = bounds.entry(schema[*feature].clone()).or_default();
                b.hi = Some(b.hi.map_or(*cut, |h| h.min(*cut)));
            }
            Constraint::Above { feature, cut } => {
                let b = bounds.entry(schema[*feature].clone()).or_default();
                b.lo = Some(b.lo.map_or(*cut, |l| l.max(*cut)));
            }
            Constraint::Equals { feature, token } => {
                bounds.entry(schema[*feature].clone()).or_default().eq = Some(token.clone());
            }
        }
    }
    ScopedRule::Hyperrectangle { bounds }
}

fn finish(sample: &Trace, path: Vec<Constraint>, precision: f64, coverage: usize, reached: bool) -> Anchor {
    Anchor {
        rule: path_to_rule(sample.schema(), &path),
        path,
        precision,
        coverage,
        reached,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::rule::{precision, rule_applies};
    use crate::trace::{ExplanationPayload, TraceRecord};

    fn xor_sample() -> Trace {
        let coords: Vec<f64> = (0..8).map(|i| -3.5 + i as f64).collect();
        let mut recs = Vec::new();
        for &a in &coords {
            for &b in &coords {
                let l = if (a > 0.0) == (b > 0.0) { "1" } else { "0" };
                recs.push(TraceRecord::new(
                    Instance::numeric(format!("{a},{b}"), &[a, b]),
                    Label::from(l),
                    ExplanationPayload::opaque("_"),
                ));
            }
        }
        Trace::new(vec!["f0".into(), "f1".into()], recs).unwrap()
    }

    #[test]
    fn tiny_threshold_returns_unconstrained_rule() {
        let s = xor_sample();
        let x = Instance::numeric("x", &[2.5, 0.5]);
        let a = find_anchor(&x, &Label::from("1"), &s, 1e-9).unwrap();
        assert!(a.path.is_empty());
        assert!(a.reached);
        assert_eq!(a.rule, ScopedRule::unconstrained());
    }

    #[test]
    fn pure_sample_needs_no_constraints() {
        let recs = (0..10)
            .map(|i| {
                TraceRecord::new(
                    Instance::numeric(i.to_string(), &[i as f64]),
                    Label::from("y"),
                    ExplanationPayload::opaque("_"),
                )
            })
            .collect();
        let s = Trace::new(vec!["v".into()], recs).unwrap();
        let a = find_anchor(&Instance::numeric("x", &[3.0]), &Label::from("y"), &s, 1.0).unwrap();
        assert!(a.path.is_empty());
        assert_eq!(a.precision, 1.0);
    }

    /// Every x-containing box built from midpoint cuts, enumerated exhaustively.
    fn best_box_precision(s: &Trace, x: &[f64], label: &Label) -> f64 {
        let cuts: Vec<f64> = (0..7).map(|i| -3.0 + i as f64).collect();
        let mut lows: Vec<Option<f64>> = vec![None];
        lows.extend(cuts.iter().copied().map(Some));
        let mut best: f64 = 0.0;
        for lo0 in &lows {
            for hi0 in &lows {
                for lo1 in &lows {
                    for hi1 in &lows {
                        let inside = |v: f64, lo: &Option<f64>, hi: &Option<f64>| {
                            lo.is_none_or(|l| v > l) && hi.is_none_or(|h| v <= h)
                        };
                        if !inside(x[0], lo0, hi0) || !inside(x[1], lo1, hi1) {
                            continue;
                        }
                        let (mut cov, mut h) = (0, 0);
                        for r in s.records() {
                            let f = r.instance.numeric_values().unwrap();
                            if inside(f[0], lo0, hi0) && inside(f[1], lo1, hi1) {
                                cov += 1;
                                h += (&r.prediction == label) as usize;
                            }
                        }
                        if cov > 0 {
                            best = best.max(h as f64 / cov as f64);
                        }
                    }
                }
            }
        }
        best
    }

    #[test]
    fn xor_anchor_lands_in_the_quadrant() {
        let s = xor_sample();
        let x = Instance::numeric("x", &[2.5, 0.5]);
        let label = Label::from("1");
        let a = find_anchor(&x, &label, &s, 0.95).unwrap();
        assert!(a.reached);
        assert!(rule_applies(&a.rule, s.schema(), &x).unwrap());
        let p = precision(&a.rule, &label, &s).unwrap().unwrap();
        assert_eq!(p, a.precision);
        assert!(p >= 0.95);
        assert!(best_box_precision(&s, &[2.5, 0.5], &label) >= 0.95);
        match &a.rule {
            ScopedRule::Hyperrectangle { bounds } => {
                assert!(bounds["f0"].lo.is_some_and(|c| c >= 0.0));
                assert!(bounds["f1"].lo.is_some_and(|c| c >= 0.0));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn higher_threshold_extends_the_path() {
        let s = xor_sample();
        let label = Label::from("0");
        for (a, b) in [(-2.5, 0.5), (1.5, -3.5), (0.5, -0.5)] {
            let x = Instance::numeric("x", &[a, b]);
            let lo = find_anchor(&x, &label, &s, 0.5).unwrap();
            let hi = find_anchor(&x, &label, &s, 0.95).unwrap();
            assert!(hi.path.len() >= lo.path.len());
            assert_eq!(&hi.path[..lo.path.len()], &lo.path[..]);
        }
    }

    #[test]
    fn unreachable_threshold_is_flagged() {
        let recs = (0..4)
            .map(|i| {
                TraceRecord::new(
                    Instance::numeric(i.to_string(), &[1.0]),
                    Label::from(if i % 2 == 0 { "a" } else { "b" }),
                    ExplanationPayload::opaque("_"),
                )
            })
            .collect();
        let s = Trace::new(vec!["v".into()], recs).unwrap();
        let a = find_anchor(&Instance::numeric("x", &[1.0]), &Label::from("a"), &s, 0.9).unwrap();
        assert!(!a.reached);
        assert_eq!(a.precision, 0.5);
    }

    #[test]
    fn categorical_features_are_pinned() {
        let recs = [("red", "1"), ("red", "1"), ("blue", "0"), ("blue", "1")]
            .iter()
            .enumerate()
            .map(|(i, (c, l))| {
                TraceRecord::new(
                    Instance::new(i.to_string(), vec![(*c).into()]),
                    Label::from(*l),
                    ExplanationPayload::opaque("_"),
                )
            })
            .collect();
        let s = Trace::new(vec!["color".into()], recs).unwrap();
        let x = Instance::new("x", vec!["red".into()]);
        let a = find_anchor(&x, &Label::from("1"), &s, 1.0).unwrap();
        assert!(a.reached);
        assert_eq!(
            a.path,
            vec![Constraint::Equals {
                feature: 0,
                token: "red".into()
            }]
        );
    }
}
