//! Exact consistency and sufficiency on small, fully enumerated systems.
//!
//! A [`FiniteSystem`] lists every instance with its probability mass, its
//! prediction, and its explanation key, plus the applicability relation
//! `A(x, π)`. When no relation is given, `A(x, π)` is `e(x) = π`, so the
//! sufficiency oracle doubles as a second route to consistency.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Relation;
use crate::trace::{ExplanationKey, Label};

/// Tolerance on the total mass of a system.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPoint {
    pub id: String,
    pub mass: f64,
    pub label: Label,
    pub key: ExplanationKey,
}

impl SystemPoint {
    pub fn new(id: impl Into<String>, mass: f64, label: impl Into<String>, key: impl Into<String>) -> Self {
        SystemPoint {
            id: id.into(),
            mass,
            label: Label::new(label),
            key: ExplanationKey::new(key),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SystemWire {
    points: Vec<SystemPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    applicability: Option<BTreeMap<ExplanationKey, Vec<String>>>,
}

/// A fully enumerated explanation system `(µ, f, e, A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemWire", into = "SystemWire")]
pub struct FiniteSystem {
    points: Vec<SystemPoint>,
    keys: Vec<ExplanationKey>,
    key_of: Vec<usize>,
    labels: Vec<Label>,
    label_of: Vec<usize>,
    /// `applies[k][j]` is `A(point j, key k)`.
    applies: Vec<Vec<bool>>,
    explicit: bool,
}

impl TryFrom<SystemWire> for FiniteSystem {
    type Error = Error;

    fn try_from(w: SystemWire) -> Result<Self> {
        FiniteSystem::new(w.points, w.applicability)
    }
}

impl From<FiniteSystem> for SystemWire {
    fn from(s: FiniteSystem) -> Self {
        let applicability = s.explicit.then(|| {
            s.keys
                .iter()
                .enumerate()
                .map(|(k, key)| {
                    let ids = s.points
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| s.applies[k][*j])
                        .map(|(_, p)| p.id.clone())
                        .collect();
                    (key.clone(), ids)
                })
                .collect()
        });
        SystemWire {
            points: s.points,
            applicability,
        }
    }
}

/// Gibbs and deterministic decoding errors of a system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderReport {
    pub gibbs_error: f64,
    pub deterministic_error: f64,
    pub consistency_from_gibbs: f64,
}

impl FiniteSystem {
    /// Validates and indexes a system. `applicability` maps a key to the ids
    /// of the points it applies to; keys without an entry use equality.
    pub fn new(
        points: Vec<SystemPoint>,
        applicability: Option<BTreeMap<ExplanationKey, Vec<String>>>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("finite system has no points"));
        }
        let mut ids = BTreeSet::new();
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            if !(p.mass.is_finite() && p.mass > 0.0) {
                return Err(Error::Config {
                    record: i,
                    detail: format!("mass must be positive, got {}", p.mass),
                });
            }
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Config {
                    record: i,
                    detail: format!("duplicate point id `{}`", p.id),
                });
            }
            total += p.mass;
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::invalid(format!("masses sum to {total}, expected 1")));
        }
        let keys: Vec<ExplanationKey> = points
            .iter()
            .map(|p| p.key.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let labels: Vec<Label> = points
            .iter()
            .map(|p| p.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let key_of: Vec<usize> = points
            .iter()
            .map(|p| keys.binary_search(&p.key).expect("key indexed"))
            .collect();
        let label_of: Vec<usize> = points
            .iter()
            .map(|p| labels.binary_search(&p.label).expect("label indexed"))
            .collect();
        let mut applies: Vec<Vec<bool>> = (0..keys.len())
            .map(|k| key_of.iter().map(|&pk| pk == k).collect())
            .collect();
        let explicit = applicability.is_some();
        if let Some(map) = applicability {
            let index: HashMap<&str, usize> =
                points.iter().enumerate().map(|(j, p)| (p.id.as_str(), j)).collect();
            for (key, members) in map {
                let k = keys
                    .binary_search(&key)
                    .map_err(|_| Error::invalid(format!("applicability names unknown key `{key}`")))?;
                let mut col = vec![false; points.len()];
                for id in &members {
                    let j = *index.get(id.as_str()).ok_or_else(|| {
                        Error::invalid(format!("applicability of `{key}` names unknown point `{id}`"))
                    })?;
                    col[j] = true;
                }
                if let Some(j) = (0..points.len()).find(|&j| key_of[j] == k && !col[j]) {
                    return Err(Error::invalid(format!(
                        "key `{key}` does not apply to point `{}` that it explains",
                        points[j].id
                    )));
                }
                applies[k] = col;
            }
        }
        Ok(FiniteSystem {
            points,
            keys,
            key_of,
            labels,
            label_of,
            applies,
            explicit,
        })
    }

    /// The equality-relation system induced by leaves with the given masses
    /// and label distributions. Labels are named `"0"`, `"1"`, ...
    pub fn from_leaves(leaf_masses: &[f64], leaf_label_dists: &[Vec<f64>]) -> Result<Self> {
        if leaf_masses.len() != leaf_label_dists.len() {
            return Err(Error::invalid(format!(
                "{} leaf masses but {} label distributions",
                leaf_masses.len(),
                leaf_label_dists.len()
            )));
        }
        let mut points = Vec::new();
        for (leaf, (m, dist)) in leaf_masses.iter().zip(leaf_label_dists).enumerate() {
            for (y, p) in dist.iter().enumerate() {
                if m * p > 0.0 {
                    points.push(SystemPoint::new(
                        format!("leaf{leaf}/y{y}"),
                        m * p,
                        y.to_string(),
                        format!("leaf:{leaf}"),
                    ));
                }
            }
        }
        FiniteSystem::new(points, None)
    }

    pub fn points(&self) -> &[SystemPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn keys(&self) -> &[ExplanationKey] {
        &self.keys
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn key_index(&self, point: usize) -> usize {
        self.key_of[point]
    }

    pub fn label_index(&self, point: usize) -> usize {
        self.label_of[point]
    }

    pub fn point_index(&self, id: &str) -> Option<usize> {
        self.points.iter().position(|p| p.id == id)
    }

    /// `A(point, key)`.
    pub fn applies(&self, point: usize, key: usize) -> bool {
        self.applies[key][point]
    }

    /// `R(point, key)` for the given relation.
    pub fn relation_holds(&self, relation: Relation, point: usize, key: usize) -> bool {
        match relation {
            Relation::Equality => self.key_of[point] == key,
            Relation::Applicability => self.applies[key][point],
        }
    }

    /// `p(π)`: mass of points explained by each key.
    pub fn key_masses(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.keys.len()];
        for (j, pt) in self.points.iter().enumerate() {
            p[self.key_of[j]] += pt.mass;
        }
        p
    }

    /// `q(π)`: mass of points satisfying `R(x, π)` for each key.
    pub fn relation_masses(&self, relation: Relation) -> Vec<f64> {
        (0..self.keys.len())
            .map(|k| {
                self.points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| self.relation_holds(relation, *j, k))
                    .map(|(_, p)| p.mass)
                    .sum()
            })
            .collect()
    }

    /// `q(y | π)` for each key (rows) and label (columns).
    pub fn conditional_label_masses(&self, relation: Relation) -> Vec<Vec<f64>> {
        (0..self.keys.len())
            .map(|k| {
                let mut row = vec![0.0; self.labels.len()];
                let mut tot = 0.0;
                for (j, p) in self.points.iter().enumerate() {
                    if self.relation_holds(relation, j, k) {
                        row[self.label_of[j]] += p.mass;
                        tot += p.mass;
                    }
                }
                row.iter_mut().for_each(|v| *v /= tot);
                row
            })
            .collect()
    }

    fn local(&self, relation: Relation, point: usize) -> f64 {
        let k = self.key_of[point];
        let y = self.label_of[point];
        let mut same = 0.0;
        let mut tot = 0.0;
        for (j, p) in self.points.iter().enumerate() {
            if self.relation_holds(relation, j, k) {
                tot += p.mass;
                if self.label_of[j] == y {
                    same += p.mass;
                }
            }
        }
        same / tot
    }

    fn global(&self, relation: Relation) -> f64 {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| p.mass * self.local(relation, i))
            .sum()
    }

    /// `Σ_π p(π) Σ_y p(y|π)²`, an independent route to global consistency.
    pub fn consistency_by_label_purity(&self) -> f64 {
        let p = self.key_masses();
        self.conditional_label_masses(Relation::Equality)
            .iter()
            .zip(&p)
            .map(|(row, pk)| pk * row.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Deterministic decoder: most likely label per key, ties to the
    /// lexicographically smallest label.
    pub fn deterministic_decoder(&self) -> BTreeMap<ExplanationKey, Label> {
        self.conditional_label_masses(Relation::Equality)
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let mut best = 0;
                for (y, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = y;
                    }
                }
                (self.keys[k].clone(), self.labels[best].clone())
            })
            .collect()
    }
}

pub fn exact_local_consistency(sys: &FiniteSystem, point: usize) -> f64 {
    sys.local(Relation::Equality, point)
}

pub fn exact_local_sufficiency(sys: &FiniteSystem, point: usize) -> f64 {
    sys.local(Relation::Applicability, point)
}

pub fn exact_global_consistency(sys: &FiniteSystem) -> f64 {
    let m = sys.global(Relation::Equality);
    debug_assert!((m - sys.consistency_by_label_purity()).abs() < 1e-9);
    m
}

pub fn exact_global_sufficiency(sys: &FiniteSystem) -> f64 {
    sys.global(Relation::Applicability)
}

/// Exact value of the generic measure `m^R`.
pub fn exact_global(sys: &FiniteSystem, relation: Relation) -> f64 {
    match relation {
        Relation::Equality => exact_global_consistency(sys),
        Relation::Applicability => exact_global_sufficiency(sys),
    }
}

pub fn decoder_report(sys: &FiniteSystem) -> DecoderReport {
    let p = sys.key_masses();
    let cond = sys.conditional_label_masses(Relation::Equality);
    let decoded = sys.deterministic_decoder();
    let mut gibbs = 0.0;
    let mut det = 0.0;
    for (k, row) in cond.iter().enumerate() {
        gibbs += p[k] * row.iter().map(|q| q * (1.0 - q)).sum::<f64>();
        let y = sys
            .labels
            .binary_search(&decoded[&sys.keys[k]])
            .expect("decoded label indexed");
        det += p[k] * (1.0 - row[y]);
    }
    DecoderReport {
        gibbs_error: gibbs,
        deterministic_error: det,
        consistency_from_gibbs: 1.0 - gibbs,
    }
}

/// Tree consistency as one minus the mass-weighted Gini index of the leaves.
pub fn tree_consistency_via_gini(leaf_masses: &[f64], leaf_label_dists: &[Vec<f64>]) -> Result<f64> {
    if leaf_masses.len() != leaf_label_dists.len() {
        return Err(Error::invalid(format!(
            "{} leaf masses but {} label distributions",
            leaf_masses.len(),
            leaf_label_dists.len()
        )));
    }
    let total: f64 = leaf_masses.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::invalid(format!("leaf masses sum to {total}")));
    }
    let mut weighted_gini = 0.0;
    for (i, (m, dist)) in leaf_masses.iter().zip(leaf_label_dists).enumerate() {
        let s: f64 = dist.iter().sum();
        if (s - 1.0).abs() > 1e-9 || dist.iter().any(|p| *p < 0.0) {
            return Err(Error::invalid(format!("leaf {i} label distribution sums to {s}")));
        }
        weighted_gini += m * (1.0 - dist.iter().map(|p| p * p).sum::<f64>());
    }
    Ok(1.0 - weighted_gini)
}
