//! Estimating faithfulness from finite traces.
//!
//! Both measures are instances of one quantity, the probability that
//! `f(X') = f(X)` given `R(X', e(X))`. With `R` the key-equality relation it
//! is consistency; with `R` the applicability relation `A` it is sufficiency.
//! The global estimator counts, for each observed explanation `π`,
//!
//! ```text
//! N_π   = |{i : R(x_i, π)}|
//! N_π,y = |{i : R(x_i, π), f(x_i) = y}|
//! ```
//!
//! and averages `(N_{e(x_i), f(x_i)} - 1) / (N_{e(x_i)} - 1)` over records,
//! scoring records whose explanation never recurs (`N ≤ 1`) as zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::CompiledRule;
use crate::oracle::FiniteSystem;
use crate::trace::{ExplanationKey, ExplanationPayload, Instance, Label, Trace, TraceRecord};

/// The relation `R(x, π)` the estimator counts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    /// `e(x) = π`; estimates consistency.
    #[serde(rename = "consistency")]
    Equality,
    /// `A(x, π)`, evaluated through each explanation's scoped rule;
    /// estimates sufficiency.
    #[serde(rename = "sufficiency")]
    Applicability,
}

impl Relation {
    pub fn measure_name(self) -> &'static str {
        match self {
            Relation::Equality => "consistency",
            Relation::Applicability => "sufficiency",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.measure_name())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistency" | "equality" => Ok(Relation::Equality),
            "sufficiency" | "applicability" => Ok(Relation::Applicability),
            other => Err(Error::invalid(format!("unknown measure `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyCounts {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_y")]
    pub n_y: BTreeMap<Label, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundSource {
    /// Computed from the true `p`, `q` of a known system.
    #[serde(rename = "oracle")]
    Oracle,
    /// Computed from empirical frequencies; a diagnostic only.
    #[serde(rename = "plug-in")]
    PlugIn,
}

/// Variance, bias, and mean-squared-error bounds for the global estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    pub variance_bound: f64,
    pub bias_bound: f64,
    pub mse_bound: f64,
    pub source: BoundSource,
}

impl BoundDiagnostics {
    fn new(n: usize, bias: f64, source: BoundSource) -> Self {
        let variance_bound = 4.0 / n as f64;
        BoundDiagnostics {
            variance_bound,
            bias_bound: bias,
            mse_bound: variance_bound + bias * bias,
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub measure: Relation,
    pub estimate: f64,
    pub n: usize,
    pub uniqueness: f64,
    pub skipped: usize,
    pub per_key: BTreeMap<ExplanationKey, KeyCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundDiagnostics>,
}

/// Dense re-indexing of a trace's keys and labels.
struct Indexed<'a> {
    keys: Vec<&'a ExplanationKey>,
    key_of: Vec<usize>,
    /// First record carrying each key.
    exemplar: Vec<usize>,
    labels: Vec<&'a Label>,
    label_of: Vec<usize>,
}

impl<'a> Indexed<'a> {
    fn new(records: &'a [TraceRecord]) -> Self {
        let mut key_ids: HashMap<&ExplanationKey, usize> = HashMap::new();
        let mut label_ids: HashMap<&Label, usize> = HashMap::new();
        let mut keys = Vec::new();
        let mut exemplar = Vec::new();
        let mut labels = Vec::new();
        let mut key_of = Vec::with_capacity(records.len());
        let mut label_of = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let k = *key_ids.entry(r.key()).or_insert_with(|| {
                keys.push(r.key());
                exemplar.push(i);
                keys.len() - 1
            });
            let y = *label_ids.entry(&r.prediction).or_insert_with(|| {
                labels.push(&r.prediction);
                labels.len() - 1
            });
            key_of.push(k);
            label_of.push(y);
        }
        Indexed {
            keys,
            key_of,
            exemplar,
            labels,
            label_of,
        }
    }
}

/// `N_π` and `N_π,y` tables, indexed by dense key and label ids.
#[derive(Debug, Clone)]
pub(crate) struct CountTable {
    pub n_pi: Vec<usize>,
    pub n_pi_y: Vec<Vec<usize>>,
}

impl CountTable {
    fn equality(key_of: &[usize], label_of: &[usize], n_keys: usize, n_labels: usize) -> Self {
        let mut n_pi = vec![0; n_keys];
        let mut n_pi_y = vec![vec![0; n_labels]; n_keys];
        for (&k, &y) in key_of.iter().zip(label_of) {
            n_pi[k] += 1;
            n_pi_y[k][y] += 1;
        }
        CountTable { n_pi, n_pi_y }
    }

    /// One column per key, each filled by scanning every record.
    fn by_relation(
        n_keys: usize,
        label_of: &[usize],
        n_labels: usize,
        holds: impl Fn(usize, usize) -> Result<bool> + Sync,
    ) -> Result<Self> {
        let cols: Vec<(usize, Vec<usize>)> = (0..n_keys)
            .into_par_iter()
            .map(|k| {
                let mut n = 0;
                let mut per = vec![0; n_labels];
                for (j, &y) in label_of.iter().enumerate() {
                    if holds(j, k)? {
                        n += 1;
                        per[y] += 1;
                    }
                }
                Ok((n, per))
            })
            .collect::<Result<_>>()?;
        let (n_pi, n_pi_y) = cols.into_iter().unzip();
        Ok(CountTable { n_pi, n_pi_y })
    }

    /// The global estimate and the number of records with `N ≤ 1`.
    fn score(&self, key_of: &[usize], label_of: &[usize]) -> (f64, usize) {
        let n = key_of.len();
        let mut sum = 0.0;
        let mut skipped = 0;
        for (&k, &y) in key_of.iter().zip(label_of) {
            let big_n = self.n_pi[k];
            if big_n > 1 {
                sum += (self.n_pi_y[k][y] - 1) as f64 / (big_n - 1) as f64;
            } else {
                skipped += 1;
            }
        }
        (sum / n as f64, skipped)
    }
}

fn compile_rules(trace: &Trace, idx: &Indexed<'_>) -> Result<Vec<CompiledRule>> {
    idx.exemplar
        .iter()
        .map(|&i| {
            let rule = trace.records()[i].explanation.rule.as_ref().ok_or_else(|| Error::Config {
                record: i,
                detail: "applicability relation needs a scoped rule on every record".into(),
            })?;
            rule.compile(trace.schema()).map_err(|e| Error::Config {
                record: i,
                detail: e.to_string(),
            })
        })
        .collect()
}

fn check_rules_present(trace: &Trace) -> Result<()> {
    match trace.records().iter().position(|r| r.explanation.rule.is_none()) {
        Some(i) => Err(Error::Config {
            record: i,
            detail: "applicability relation needs a scoped rule on every record".into(),
        }),
        None => Ok(()),
    }
}

fn count_table(trace: &Trace, idx: &Indexed<'_>, relation: Relation) -> Result<CountTable> {
    let n_keys = idx.keys.len();
    let n_labels = idx.labels.len();
    match relation {
        Relation::Equality => Ok(CountTable::equality(&idx.key_of, &idx.label_of, n_keys, n_labels)),
        Relation::Applicability => {
            check_rules_present(trace)?;
            let rules = compile_rules(trace, idx)?;
            let records = trace.records();
            let table = CountTable::by_relation(n_keys, &idx.label_of, n_labels, |j, k| {
                rules[k].applies(&records[j].instance.features)
            })?;
            // every record must lie inside its own explanation's region
            for (i, r) in records.iter().enumerate() {
                if !rules[idx.key_of[i]].applies(&r.instance.features)? {
                    return Err(Error::Config {
                        record: i,
                        detail: "explanation rule does not apply to its own instance".into(),
                    });
                }
            }
            Ok(table)
        }
    }
}

/// Global consistency (`Equality`) or sufficiency (`Applicability`) estimate.
pub fn estimate_global(trace: &Trace, relation: Relation) -> Result<FaithfulnessReport> {
    if trace.is_empty() {
        return Err(Error::Empty("estimation needs at least one record"));
    }
    let idx = Indexed::new(trace.records());
    let table = count_table(trace, &idx, relation)?;
    let (estimate, skipped) = table.score(&idx.key_of, &idx.label_of);
    let per_key = idx
        .keys
        .iter()
        .enumerate()
        .map(|(k, key)| {
            let n_y = table.n_pi_y[k]
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(y, c)| (idx.labels[y].clone(), *c))
                .collect();
            (
                (*key).clone(),
                KeyCounts {
                    n: table.n_pi[k],
                    n_y,
                },
            )
        })
        .collect();
    Ok(FaithfulnessReport {
        measure: relation,
        estimate,
        n: trace.len(),
        uniqueness: uniqueness_of(&idx),
        skipped,
        per_key,
        bounds: None,
    })
}

fn uniqueness_of(idx: &Indexed<'_>) -> f64 {
    let mut occ = vec![0usize; idx.keys.len()];
    for &k in &idx.key_of {
        occ[k] += 1;
    }
    let singles = idx.key_of.iter().filter(|&&k| occ[k] == 1).count();
    singles as f64 / idx.key_of.len() as f64
}

/// Fraction of records whose key occurs exactly once.
pub fn uniqueness(trace: &Trace) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Empty("uniqueness needs at least one record"));
    }
    Ok(uniqueness_of(&Indexed::new(trace.records())))
}

/// Bounds evaluated at empirical `p̂(π) = N^=_π / n`, `q̂(π) = N_π / n`.
pub fn plug_in_bounds(trace: &Trace, relation: Relation) -> Result<BoundDiagnostics> {
    if trace.is_empty() {
        return Err(Error::Empty("bounds need at least one record"));
    }
    let idx = Indexed::new(trace.records());
    let n = trace.len();
    let eq = CountTable::equality(&idx.key_of, &idx.label_of, idx.keys.len(), idx.labels.len());
    let rel = match relation {
        Relation::Equality => eq.clone(),
        Relation::Applicability => count_table(trace, &idx, relation)?,
    };
    let p: Vec<f64> = eq.n_pi.iter().map(|c| *c as f64 / n as f64).collect();
    let q: Vec<f64> = rel.n_pi.iter().map(|c| *c as f64 / n as f64).collect();
    Ok(BoundDiagnostics::new(n, bias_bound(&p, &q, n)?, BoundSource::PlugIn))
}

/// Counts behind one local estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalCounts {
    pub matches: usize,
    pub total: usize,
}

impl LocalCounts {
    pub fn estimate(self) -> Option<f64> {
        (self.total > 0).then(|| self.matches as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEstimate {
    pub consistency: Option<f64>,
    pub sufficiency: Option<f64>,
    pub consistency_counts: LocalCounts,
    pub sufficiency_counts: Option<LocalCounts>,
}

/// Local consistency and sufficiency of `query` against the trace.
///
/// Records sharing the query's instance id are left out of both counts.
/// Estimates are `None` when their denominator is zero; sufficiency is also
/// `None` when the query carries no rule.
pub fn estimate_local(trace: &Trace, query: &TraceRecord) -> Result<LocalEstimate> {
    let others = || {
        trace
            .records()
            .iter()
            .filter(move |r| r.instance.id != query.instance.id)
    };
    let mut con = LocalCounts { matches: 0, total: 0 };
    for r in others().filter(|r| r.key() == query.key()) {
        con.total += 1;
        con.matches += (r.prediction == query.prediction) as usize;
    }
    let suf = match &query.explanation.rule {
        None => None,
        Some(rule) => {
            let compiled = rule.compile(trace.schema())?;
            let mut c = LocalCounts { matches: 0, total: 0 };
            for r in others() {
                if compiled.applies(&r.instance.features)? {
                    c.total += 1;
                    c.matches += (r.prediction == query.prediction) as usize;
                }
            }
            Some(c)
        }
    };
    Ok(LocalEstimate {
        consistency: con.estimate(),
        sufficiency: suf.and_then(LocalCounts::estimate),
        consistency_counts: con,
        sufficiency_counts: suf,
    })
}

/// `Σ_π p(π) · exp(-(n-1) q(π))`.
pub fn bias_bound(p: &[f64], q: &[f64], n: usize) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!("p has {} entries, q has {}", p.len(), q.len())));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("p sums to {total}, expected 1")));
    }
    let mut sum = 0.0;
    for (i, (&pk, &qk)) in p.iter().zip(q).enumerate() {
        if !(0.0..=1.0).contains(&pk) || !(0.0..=1.0 + 1e-12).contains(&qk) {
            return Err(Error::invalid(format!("entry {i}: p = {pk}, q = {qk} out of range")));
        }
        if qk < pk - 1e-12 {
            return Err(Error::invalid(format!("entry {i}: q = {qk} is below p = {pk}")));
        }
        sum += pk * (-((n - 1) as f64) * qk).exp();
    }
    Ok(sum)
}

/// `4/n + bias²`.
pub fn mse_bound(n: usize, bias: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if !(bias.is_finite() && bias >= 0.0) {
        return Err(Error::invalid(format!("bias must be non-negative, got {bias}")));
    }
    Ok(4.0 / n as f64 + bias * bias)
}

/// Smallest `n` with `n ≥ range_e · (12/ε) · ln(3/ε)`.
pub fn sample_size_for_epsilon(range_e: u64, epsilon: f64) -> Result<u64> {
    if range_e == 0 {
        return Err(Error::invalid("range of the explainer must be positive"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok((range_e as f64 * (12.0 / epsilon) * (3.0 / epsilon).ln()).ceil() as u64)
}

/// `E[M̂]` at sample size `n` on a known system:
/// `Σ_x µ(x) (1 - (1 - q(e(x)))^{n-1}) q(f(x) | e(x))`.
pub fn expected_estimate(sys: &FiniteSystem, relation: Relation, n: usize) -> f64 {
    let q = sys.relation_masses(relation);
    let cond = sys.conditional_label_masses(relation);
    let m = n.saturating_sub(1) as i32;
    sys.points()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let k = sys.key_index(j);
            let seen = 1.0 - (1.0 - q[k]).powi(m);
            p.mass * seen * cond[k][sys.label_index(j)]
        })
        .sum()
}

/// Bounds at sample size `n` from the system's true `p` and `q`.
pub fn oracle_bounds(sys: &FiniteSystem, relation: Relation, n: usize) -> Result<BoundDiagnostics> {
    let p = sys.key_masses();
    let q = sys.relation_masses(relation);
    Ok(BoundDiagnostics::new(n, bias_bound(&p, &q, n)?, BoundSource::Oracle))
}

/// Draws `n` point indices i.i.d. from the system's masses.
pub fn sample_points<R: Rng + ?Sized>(sys: &FiniteSystem, n: usize, rng: &mut R) -> Vec<usize> {
    let w = WeightedIndex::new(sys.points().iter().map(|p| p.mass)).expect("positive masses");
    (0..n).map(|_| w.sample(rng)).collect()
}

/// The global estimator on a sample of system points, with `R` read from
/// the system's relation table.
pub fn estimate_on_points(sys: &FiniteSystem, sample: &[usize], relation: Relation) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("estimation needs at least one record"));
    }
    // dense ids over keys that occur in the sample
    let mut dense: HashMap<usize, usize> = HashMap::new();
    let mut sys_key = Vec::new();
    let key_of: Vec<usize> = sample
        .iter()
        .map(|&j| {
            *dense.entry(sys.key_index(j)).or_insert_with(|| {
                sys_key.push(sys.key_index(j));
                sys_key.len() - 1
            })
        })
        .collect();
    let label_of: Vec<usize> = sample.iter().map(|&j| sys.label_index(j)).collect();
    let n_labels = sys.labels().len();
    let table = match relation {
        Relation::Equality => CountTable::equality(&key_of, &label_of, sys_key.len(), n_labels),
        Relation::Applicability => CountTable::by_relation(sys_key.len(), &label_of, n_labels, |r, k| {
            Ok(sys.applies(sample[r], sys_key[k]))
        })?,
    };
    Ok(table.score(&key_of, &label_of).0)
}

/// A keyed trace of the sampled points (ids as instance ids, no features).
pub fn points_to_trace(sys: &FiniteSystem, sample: &[usize]) -> Trace {
    let records = sample
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let p = &sys.points()[j];
            TraceRecord::new(
                Instance::new(format!("{}#{i}", p.id), Vec::new()),
                p.label.clone(),
                ExplanationPayload::opaque(p.key.as_str()),
            )
        })
        .collect();
    Trace::new(Vec::new(), records).expect("system points form a valid trace")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::{Bound, ScopedRule};
    use crate::oracle::SystemPoint;

    fn keyed(keys: &[&str], labels: &[&str]) -> Trace {
        let records = keys
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (k, l))| {
                TraceRecord::new(
                    Instance::numeric(format!("r{i}"), &[i as f64]),
                    Label::from(*l),
                    ExplanationPayload::opaque(*k),
                )
            })
            .collect();
        Trace::new(vec!["x".into()], records).unwrap()
    }

    /// Ordered pairs (i, j), i ≠ j, sharing a key: the fraction with equal
    /// labels, averaged per record.
    fn pair_enumeration(t: &Trace) -> f64 {
        let r = t.records();
        let mut total = 0.0;
        for i in 0..r.len() {
            let (mut same, mut all) = (0, 0);
            for j in 0..r.len() {
                if i != j && r[i].key() == r[j].key() {
                    all += 1;
                    same += (r[i].prediction == r[j].prediction) as usize;
                }
            }
            if all > 0 {
                total += same as f64 / all as f64;
            }
        }
        total / r.len() as f64
    }

    #[test]
    fn pure_groups_score_one() {
        let t = keyed(&["a", "a", "b", "b"], &["1", "1", "0", "0"]);
        let r = estimate_global(&t, Relation::Equality).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.skipped, 0);
        assert_eq!(r.uniqueness, 0.0);
    }

    #[test]
    fn one_mixed_group_scores_a_third() {
        let t = keyed(&["a", "a", "a", "a"], &["1", "1", "0", "0"]);
        let r = estimate_global(&t, Relation::Equality).unwrap();
        assert!((r.estimate - 1.0 / 3.0).abs() < 1e-15);
        assert!((pair_enumeration(&t) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_key[&ExplanationKey::new("a")].n, 4);
        assert_eq!(r.per_key[&ExplanationKey::new("a")].n_y[&Label::from("0")], 2);
    }

    #[test]
    fn all_unique_scores_zero() {
        let t = keyed(&["a", "b", "c", "d", "e"], &["1", "0", "1", "0", "1"]);
        let r = estimate_global(&t, Relation::Equality).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.uniqueness, 1.0);
        assert_eq!(r.skipped, 5);
    }

    #[test]
    fn uniqueness_counts_singletons() {
        assert!((uniqueness(&keyed(&["a", "a", "b"], &["1", "1", "1"])).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(uniqueness(&Trace::empty(vec![])).is_err());
    }

    #[test]
    fn applicability_needs_rules() {
        let t = keyed(&["a", "a"], &["1", "1"]);
        let err = estimate_global(&t, Relation::Applicability).unwrap_err();
        assert!(matches!(err, Error::Config { record: 0, .. }));
    }

    fn interval_rule(lo: Option<f64>, hi: Option<f64>) -> ScopedRule {
        let mut bounds = BTreeMap::new();
        bounds.insert("x".to_owned(), Bound { lo, hi, ..Bound::default() });
        ScopedRule::Hyperrectangle { bounds }
    }

    #[test]
    fn applicability_counts_covered_records() {
        // record 0 has a broad rule covering records 0..=2; others cover themselves
        let labels = ["1", "1", "0", "0"];
        let records: Vec<TraceRecord> = (0..4)
            .map(|i| {
                let rule = if i == 0 {
                    interval_rule(None, Some(2.5))
                } else {
                    interval_rule(Some(i as f64 - 0.5), Some(i as f64 + 0.5))
                };
                TraceRecord::new(
                    Instance::numeric(format!("r{i}"), &[i as f64]),
                    Label::from(labels[i]),
                    ExplanationPayload::rule(rule),
                )
            })
            .collect();
        let t = Trace::new(vec!["x".into()], records).unwrap();
        let r = estimate_global(&t, Relation::Applicability).unwrap();
        // only record 0 has N > 1: N = 3, N_{π,1} = 2 → (2-1)/(3-1)
        assert!((r.estimate - 0.5 / 4.0).abs() < 1e-15);
        assert_eq!(r.skipped, 3);
    }

    #[test]
    fn rule_must_cover_its_own_instance() {
        let records = vec![
            TraceRecord::new(
                Instance::numeric("r0", &[5.0]),
                Label::from("1"),
                ExplanationPayload::rule(interval_rule(None, Some(1.0))),
            ),
            TraceRecord::new(
                Instance::numeric("r1", &[0.0]),
                Label::from("1"),
                ExplanationPayload::rule(interval_rule(None, Some(1.0))),
            ),
        ];
        let t = Trace::new(vec!["x".into()], records).unwrap();
        assert!(matches!(
            estimate_global(&t, Relation::Applicability),
            Err(Error::Config { record: 0, .. })
        ));
    }

    #[test]
    fn local_estimates_exclude_the_query() {
        let t = keyed(&["a", "a", "a", "b"], &["1", "1", "0", "1"]);
        let q = t.records()[0].clone();
        let est = estimate_local(&t, &q).unwrap();
        assert_eq!(est.consistency_counts, LocalCounts { matches: 1, total: 2 });
        assert_eq!(est.consistency, Some(0.5));
        assert_eq!(est.sufficiency, None);

        let lone = keyed(&["z"], &["1"]);
        let est = estimate_local(&lone, &lone.records()[0]).unwrap();
        assert_eq!(est.consistency, None);

        let q = TraceRecord::new(Instance::numeric("new", &[0.0]), Label::from("1"), ExplanationPayload::opaque("zz"));
        assert_eq!(estimate_local(&t, &q).unwrap().consistency, None);
    }

    #[test]
    fn local_sufficiency_uses_the_query_rule() {
        let t = keyed(&["a", "b", "c", "d"], &["1", "1", "0", "1"]);
        let q = TraceRecord::new(
            Instance::numeric("q", &[0.0]),
            Label::from("1"),
            ExplanationPayload::rule(interval_rule(None, Some(2.5))),
        );
        let est = estimate_local(&t, &q).unwrap();
        assert_eq!(est.sufficiency_counts, Some(LocalCounts { matches: 2, total: 3 }));
    }

    #[test]
    fn bias_bound_values() {
        assert!((bias_bound(&[1.0], &[1.0], 2).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        for k in [1usize, 4, 10, 50] {
            let p = vec![1.0 / k as f64; k];
            let b = bias_bound(&p, &p, k + 1).unwrap();
            assert!((b - (-1.0f64).exp()).abs() < 1e-12, "k = {k}: {b}");
        }
        let p = [0.2, 0.3, 0.5];
        let q = [0.4, 0.3, 0.9];
        let mut prev = f64::INFINITY;
        for n in [1, 2, 5, 10, 100, 1000] {
            let b = bias_bound(&p, &q, n).unwrap();
            assert!(b < prev || n == 1);
            prev = b;
        }
        assert!(prev < 1e-100);
        assert!(bias_bound(&[0.5, 0.5], &[0.4, 0.5], 10).is_err());
    }

    #[test]
    fn mse_and_sample_size() {
        assert!((mse_bound(400, 0.0).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(sample_size_for_epsilon(64, 0.1).unwrap(), 26122);
        // 24 · ln 6 = 43.0022…, so the ceiling is 44
        assert_eq!(sample_size_for_epsilon(1, 0.5).unwrap(), 44);
        assert!(sample_size_for_epsilon(1, 1.0).is_err());
        assert!(sample_size_for_epsilon(0, 0.5).is_err());
        assert!(mse_bound(0, 0.0).is_err());
    }

    #[test]
    fn points_path_matches_trace_path() {
        let sys = FiniteSystem::new(
            vec![
                SystemPoint::new("a", 0.25, "1", "k"),
                SystemPoint::new("b", 0.25, "0", "k"),
                SystemPoint::new("c", 0.5, "1", "j"),
            ],
            None,
        )
        .unwrap();
        let sample = vec![0, 1, 0, 2, 2, 1, 0];
        let via_points = estimate_on_points(&sys, &sample, Relation::Equality).unwrap();
        let via_trace = estimate_global(&points_to_trace(&sys, &sample), Relation::Equality)
            .unwrap()
            .estimate;
        assert_eq!(via_points, via_trace);
        assert_eq!(
            estimate_on_points(&sys, &sample, Relation::Applicability).unwrap(),
            via_points
        );
    }

    #[test]
    fn report_json_shape() {
        let t = keyed(&["a", "a"], &["1", "0"]);
        let r = estimate_global(&t, Relation::Equality).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["measure"], "consistency");
        assert_eq!(v["per_key"]["a"]["N"], 2);
        assert_eq!(v["per_key"]["a"]["N_y"]["1"], 1);
        assert!(v.get("bounds").is_none());
    }
}
