//! Explicitly scoped rules: explanations that describe a checkable region of
//! instance space, so the applicability relation is just region membership.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::trace::{render_number, FeatureValue, Instance, Label, Trace};

/// Per-feature constraint inside a hyperrectangle.
///
/// `lo` is exclusive and `hi` inclusive, matching `x <= t` / `x > t` tree
/// tests. `eq` pins a categorical value; `neq` excludes categorical values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eq: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neq: Vec<String>,
}

impl Bound {
    pub fn lower(lo: f64) -> Self {
        Bound {
            lo: Some(lo),
            ..Bound::default()
        }
    }

    pub fn upper(hi: f64) -> Self {
        Bound {
            hi: Some(hi),
            ..Bound::default()
        }
    }

    pub fn between(lo: f64, hi: f64) -> Self {
        Bound {
            lo: Some(lo),
            hi: Some(hi),
            ..Bound::default()
        }
    }

    pub fn equals(token: impl Into<String>) -> Self {
        Bound {
            eq: Some(token.into()),
            ..Bound::default()
        }
    }

    fn is_numeric(&self) -> bool {
        self.lo.is_some() || self.hi.is_some()
    }

    fn is_categorical(&self) -> bool {
        self.eq.is_some() || !self.neq.is_empty()
    }

    fn is_empty(&self) -> bool {
        !self.is_numeric() && !self.is_categorical()
    }

    fn admits_num(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v > lo) && self.hi.is_none_or(|hi| v <= hi)
    }

    fn admits_cat(&self, v: &str) -> bool {
        self.eq.as_deref().is_none_or(|e| e == v) && !self.neq.iter().any(|n| n == v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L2,
    Linf,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Metric::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Linf => diffs.fold(0.0, f64::max),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::Linf => "linf",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "linf" => Ok(Metric::Linf),
            other => Err(Error::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// A region `S_π` of instance space. `A(x, π)` holds iff `x ∈ S_π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ScopedRule {
    /// Conjunction of per-feature constraints keyed by feature name.
    Hyperrectangle { bounds: BTreeMap<String, Bound> },
    /// Highlighted tokens: every `(position, token)` pair must be present.
    TokenSubset { tokens: Vec<(usize, String)> },
    /// Points strictly closer than `radius` to `center`.
    OpenBall {
        center: Vec<f64>,
        radius: f64,
        metric: Metric,
    },
}

impl ScopedRule {
    /// The rule with no constraints, covering everything.
    pub fn unconstrained() -> Self {
        ScopedRule::Hyperrectangle {
            bounds: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScopedRule::Hyperrectangle { bounds } => {
                for (name, b) in bounds {
                    for v in [b.lo, b.hi].into_iter().flatten() {
                        if !v.is_finite() {
                            return Err(Error::invalid(format!("non-finite bound on `{name}`")));
                        }
                    }
                    if let (Some(lo), Some(hi)) = (b.lo, b.hi) {
                        if lo > hi {
                            return Err(Error::invalid(format!(
                                "lower bound {lo} exceeds upper bound {hi} on `{name}`"
                            )));
                        }
                    }
                    if b.is_numeric() && b.is_categorical() {
                        return Err(Error::invalid(format!(
                            "`{name}` mixes numeric and categorical constraints"
                        )));
                    }
                }
                Ok(())
            }
            ScopedRule::TokenSubset { .. } => Ok(()),
            ScopedRule::OpenBall { center, radius, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::DegenerateRule(format!(
                        "open ball radius must be positive, got {radius}"
                    )));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("non-finite open ball center"));
                }
                Ok(())
            }
        }
    }

    /// Number of constraints (bounded dimensions, tokens, or 1 for a ball).
    pub fn constraint_count(&self) -> usize {
        match self {
            ScopedRule::Hyperrectangle { bounds } => bounds.values().filter(|b| !b.is_empty()).count(),
            ScopedRule::TokenSubset { tokens } => tokens.len(),
            ScopedRule::OpenBall { .. } => 1,
        }
    }

    /// Canonical JSON rendering used for keys.
    pub(crate) fn canonical_value(&self) -> Value {
        match self {
            ScopedRule::Hyperrectangle { bounds } => {
                let mut m = Map::new();
                for (name, b) in bounds.iter().filter(|(_, b)| !b.is_empty()) {
                    let mut c = Map::new();
                    if let Some(lo) = b.lo {
                        c.insert("lo".into(), Value::String(render_number(lo)));
                    }
                    if let Some(hi) = b.hi {
                        c.insert("hi".into(), Value::String(render_number(hi)));
                    }
                    if let Some(eq) = &b.eq {
                        c.insert("eq".into(), Value::String(eq.clone()));
                    }
                    if !b.neq.is_empty() {
                        let mut neq = b.neq.clone();
                        neq.sort();
                        neq.dedup();
                        c.insert("neq".into(), json!(neq));
                    }
                    m.insert(name.clone(), Value::Object(c));
                }
                json!({ "hyperrectangle": m })
            }
            ScopedRule::TokenSubset { tokens } => {
                let mut t = tokens.clone();
                t.sort();
                t.dedup();
                json!({ "token_subset": t })
            }
            ScopedRule::OpenBall {
                center,
                radius,
                metric,
            } => {
                let c: Vec<String> = center.iter().map(|v| render_number(*v)).collect();
                json!({ "open_ball": { "center": c, "radius": render_number(*radius), "metric": metric.as_str() } })
            }
        }
    }

    /// Resolves feature names against `schema` for repeated evaluation.
    pub fn compile(&self, schema: &[String]) -> Result<CompiledRule> {
        self.validate()?;
        let width = schema.len();
        let inner = match self {
            ScopedRule::Hyperrectangle { bounds } => {
                let mut checks = Vec::with_capacity(bounds.len());
                for (name, b) in bounds {
                    if b.is_empty() {
                        continue;
                    }
                    let idx = schema.iter().position(|s| s == name).ok_or_else(|| {
                        Error::invalid(format!("rule constrains unknown feature `{name}`"))
                    })?;
                    checks.push((idx, b.clone()));
                }
                Compiled::Rect(checks)
            }
            ScopedRule::TokenSubset { tokens } => {
                if let Some((pos, _)) = tokens.iter().find(|(p, _)| *p >= width) {
                    return Err(Error::invalid(format!(
                        "token position {pos} outside schema of width {width}"
                    )));
                }
                Compiled::Tokens(tokens.clone())
            }
            ScopedRule::OpenBall {
                center,
                radius,
                metric,
            } => {
                if center.len() != width {
                    return Err(Error::invalid(format!(
                        "open ball center has {} coordinates, schema has {width}",
                        center.len()
                    )));
                }
                Compiled::Ball {
                    center: center.clone(),
                    radius: *radius,
                    metric: *metric,
                }
            }
        };
        Ok(CompiledRule { width, inner })
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Rect(Vec<(usize, Bound)>),
    Tokens(Vec<(usize, String)>),
    Ball {
        center: Vec<f64>,
        radius: f64,
        metric: Metric,
    },
}

/// A rule bound to a schema.
#[derive(Debug, Clone)]
pub struct CompiledRule {
    width: usize,
    inner: Compiled,
}

impl CompiledRule {
    pub fn applies(&self, features: &[FeatureValue]) -> Result<bool> {
        if features.len() != self.width {
            return Err(Error::invalid(format!(
                "instance has {} features, rule schema has {}",
                features.len(),
                self.width
            )));
        }
        match &self.inner {
            Compiled::Rect(checks) => {
                for (idx, b) in checks {
                    let ok = match (&features[*idx], b.is_numeric()) {
                        (FeatureValue::Num(v), true) => b.admits_num(*v),
                        (FeatureValue::Cat(s), false) => b.admits_cat(s),
                        (FeatureValue::Num(_), false) => {
                            return Err(Error::invalid(format!(
                                "categorical constraint on numeric feature {idx}"
                            )))
                        }
                        (FeatureValue::Cat(_), true) => {
                            return Err(Error::invalid(format!(
                                "numeric constraint on categorical feature {idx}"
                            )))
                        }
                    };
                    if !ok {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Compiled::Tokens(tokens) => Ok(tokens
                .iter()
                .all(|(pos, tok)| features[*pos].as_cat() == Some(tok.as_str()))),
            Compiled::Ball {
                center,
                radius,
                metric,
            } => {
                let x: Vec<f64> = features
                    .iter()
                    .map(FeatureValue::as_num)
                    .collect::<Option<_>>()
                    .ok_or_else(|| Error::invalid("open ball applied to categorical features"))?;
                Ok(metric.distance(&x, center) < *radius)
            }
        }
    }
}

/// Whether `rule` applies to `x` under `schema`.
pub fn rule_applies(rule: &ScopedRule, schema: &[String], x: &Instance) -> Result<bool> {
    rule.compile(schema)?.applies(&x.features)
}

/// Same-label fraction among trace records covered by `rule`; `None` if the
/// rule covers nothing.
pub fn precision(rule: &ScopedRule, label: &Label, trace: &Trace) -> Result<Option<f64>> {
    let compiled = rule.compile(trace.schema())?;
    let mut covered = 0usize;
    let mut hits = 0usize;
    for r in trace.records() {
        if compiled.applies(&r.instance.features)? {
            covered += 1;
            if &r.prediction == label {
                hits += 1;
            }
        }
    }
    Ok((covered > 0).then(|| hits as f64 / covered as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{ExplanationPayload, TraceRecord};

    fn adult_schema() -> Vec<String> {
        ["age", "education-num", "capital-gain", "fnlwgt"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn adult_anchor_covers_its_record() {
        let mut bounds = BTreeMap::new();
        bounds.insert("education-num".to_owned(), Bound::upper(9.0));
        bounds.insert("capital-gain".to_owned(), Bound::upper(0.0));
        bounds.insert("fnlwgt".to_owned(), Bound::upper(116736.0));
        let rule = ScopedRule::Hyperrectangle { bounds };
        let x = Instance::numeric("fig3a", &[39.0, 9.0, 0.0, 89814.0]);
        assert!(rule_applies(&rule, &adult_schema(), &x).unwrap());
        let y = Instance::numeric("other", &[39.0, 10.0, 0.0, 89814.0]);
        assert!(!rule_applies(&rule, &adult_schema(), &y).unwrap());
    }

    #[test]
    fn open_ball_excludes_its_boundary() {
        let schema = vec!["x".to_owned(), "y".to_owned()];
        let ball = ScopedRule::OpenBall {
            center: vec![0.0, 0.0],
            radius: 5.0,
            metric: Metric::L2,
        };
        assert!(!rule_applies(&ball, &schema, &Instance::numeric("a", &[3.0, 4.0])).unwrap());
        assert!(rule_applies(&ball, &schema, &Instance::numeric("b", &[3.0, 3.9])).unwrap());
    }

    #[test]
    fn unconstrained_rule_applies_everywhere() {
        let schema = vec!["x".to_owned(), "c".to_owned()];
        let r = ScopedRule::unconstrained();
        for x in [
            Instance::new("a", vec![1e300.into(), "foo".into()]),
            Instance::new("b", vec![(-3.0).into(), "".into()]),
        ] {
            assert!(rule_applies(&r, &schema, &x).unwrap());
        }
    }

    #[test]
    fn bounds_are_half_open() {
        let schema = vec!["x".to_owned()];
        let mut bounds = BTreeMap::new();
        bounds.insert("x".to_owned(), Bound::between(1.0, 2.0));
        let r = ScopedRule::Hyperrectangle { bounds };
        let at = |v| rule_applies(&r, &schema, &Instance::numeric("p", &[v])).unwrap();
        assert!(!at(1.0));
        assert!(at(1.5));
        assert!(at(2.0));
        assert!(!at(2.0000001));
    }

    #[test]
    fn token_subset_requires_all_tokens() {
        let schema: Vec<String> = (0..3).map(|i| format!("w{i}")).collect();
        let r = ScopedRule::TokenSubset {
            tokens: vec![(0, "not".into()), (2, "good".into())],
        };
        let hit = Instance::new("a", vec!["not".into(), "very".into(), "good".into()]);
        let miss = Instance::new("b", vec!["not".into(), "very".into(), "bad".into()]);
        assert!(rule_applies(&r, &schema, &hit).unwrap());
        assert!(!rule_applies(&r, &schema, &miss).unwrap());
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let r = ScopedRule::OpenBall {
            center: vec![0.0],
            radius: 1.0,
            metric: Metric::Linf,
        };
        let schema = vec!["x".to_owned(), "y".to_owned()];
        assert!(rule_applies(&r, &schema, &Instance::numeric("a", &[0.0, 0.0])).is_err());
        let mut bounds = BTreeMap::new();
        bounds.insert("z".to_owned(), Bound::upper(1.0));
        let r = ScopedRule::Hyperrectangle { bounds };
        assert!(rule_applies(&r, &schema, &Instance::numeric("a", &[0.0, 0.0])).is_err());
    }

    #[test]
    fn inverted_bounds_rejected() {
        let mut bounds = BTreeMap::new();
        bounds.insert("x".to_owned(), Bound::between(2.0, 1.0));
        assert!(ScopedRule::Hyperrectangle { bounds }.validate().is_err());
    }

    #[test]
    fn rule_json_matches_wire_format() {
        let mut bounds = BTreeMap::new();
        bounds.insert("age".to_owned(), Bound::between(30.0, 40.0));
        bounds.insert("sex".to_owned(), Bound::equals("F"));
        let r = ScopedRule::Hyperrectangle { bounds };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(
            v,
            json!({"variant":"hyperrectangle","bounds":{"age":{"lo":30.0,"hi":40.0},"sex":{"eq":"F"}}})
        );
        let ball: ScopedRule = serde_json::from_value(
            json!({"variant":"open_ball","center":[0.0,1.0],"radius":2.5,"metric":"linf"}),
        )
        .unwrap();
        assert!(matches!(ball, ScopedRule::OpenBall { metric: Metric::Linf, .. }));
        let toks: ScopedRule =
            serde_json::from_value(json!({"variant":"token_subset","tokens":[[1,"great"]]})).unwrap();
        assert_eq!(
            toks,
            ScopedRule::TokenSubset {
                tokens: vec![(1, "great".into())]
            }
        );
    }

    #[test]
    fn precision_counts_covered_records() {
        let schema = vec!["x".to_owned()];
        let recs = [(0.5, "a"), (1.5, "a"), (2.5, "b"), (3.5, "a")]
            .iter()
            .enumerate()
            .map(|(i, (v, l))| {
                TraceRecord::new(
                    Instance::numeric(format!("r{i}"), &[*v]),
                    Label::from(*l),
                    ExplanationPayload::opaque("k"),
                )
            })
            .collect();
        let trace = Trace::new(schema, recs).unwrap();
        let mut bounds = BTreeMap::new();
        bounds.insert("x".to_owned(), Bound::upper(3.0));
        let r = ScopedRule::Hyperrectangle { bounds };
        let p = precision(&r, &Label::from("a"), &trace).unwrap().unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        let mut bounds = BTreeMap::new();
        bounds.insert("x".to_owned(), Bound::lower(10.0));
        let none = ScopedRule::Hyperrectangle { bounds };
        assert_eq!(precision(&none, &Label::from("a"), &trace).unwrap(), None);
    }
}
