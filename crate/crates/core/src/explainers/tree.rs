//! Axis-aligned surrogate trees. Each leaf is one explanation; the
//! explanation of `x` is the conjunction of tests on its root-to-leaf path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rule::{Bound, ScopedRule};
use crate::error::{Error, Result};
use crate::trace::{
    ExplanationKey, ExplanationKind, ExplanationPayload, FeatureValue, Instance, Label,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTest {
    /// Left branch takes `x <= threshold`.
    Threshold(f64),
    /// Left branch takes `x == category`.
    Category(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        id: usize,
        label: Label,
    },
    Split {
        feature: usize,
        test: SplitTest,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateTree {
    pub schema: Vec<String>,
    pub root: Node,
}

impl SurrogateTree {
    /// Builds a tree from an explicit node structure, renumbering leaves in
    /// depth-first (left before right) order.
    pub fn from_root(schema: Vec<String>, mut root: Node) -> Self {
        let mut next = 0;
        renumber(&mut root, &mut next);
        SurrogateTree { schema, root }
    }

    pub fn leaf_count(&self) -> usize {
        fn count(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => count(left) + count(right),
            }
        }
        count(&self.root)
    }

    /// Leaf id and label reached by `features`.
    pub fn route(&self, features: &[FeatureValue]) -> Result<(usize, &Label)> {
        self.walk(features, |_, _, _| {})
    }

    fn walk<'a>(
        &'a self,
        features: &[FeatureValue],
        mut visit: impl FnMut(usize, &'a SplitTest, bool),
    ) -> Result<(usize, &'a Label)> {
        if features.len() != self.schema.len() {
            return Err(Error::invalid(format!(
                "instance has {} features, tree schema has {}",
                features.len(),
                self.schema.len()
            )));
        }
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { id, label } => return Ok((*id, label)),
                Node::Split {
                    feature,
                    test,
                    left,
                    right,
                } => {
                    let go_left = match (test, features.get(*feature)) {
                        (SplitTest::Threshold(t), Some(FeatureValue::Num(v))) => *v <= *t,
                        (SplitTest::Category(c), Some(FeatureValue::Cat(v))) => v == c,
                        _ => {
                            return Err(Error::invalid(format!(
                                "feature {feature} has the wrong type for its split"
                            )))
                        }
                    };
                    visit(*feature, test, go_left);
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    /// Leaf-path rule for `x`: the intersection of the tests along its path.
    pub fn leaf_rule(&self, x: &Instance) -> Result<(usize, ScopedRule)> {
        let mut bounds: BTreeMap<String, Bound> = BTreeMap::new();
        let (leaf, _) = self.walk(&x.features, |feature, test, go_left| {
            let b = bounds.entry(self.schema[feature].clone()).or_default();
            match (test, go_left) {
                (SplitTest::Threshold(t), true) => b.hi = Some(b.hi.map_or(*t, |h| h.min(*t))),
                (SplitTest::Threshold(t), false) => b.lo = Some(b.lo.map_or(*t, |l| l.max(*t))),
                (SplitTest::Category(c), true) => b.eq = Some(c.clone()),
                (SplitTest::Category(c), false) => {
                    if !b.neq.contains(c) {
                        b.neq.push(c.clone());
                    }
                }
            }
        })?;
        Ok((leaf, ScopedRule::Hyperrectangle { bounds }))
    }
}

fn renumber(node: &mut Node, next: &mut usize) {
    match node {
        Node::Leaf { id, .. } => {
            *id = *next;
            *next += 1;
        }
        Node::Split { left, right, .. } => {
            renumber(left, next);
            renumber(right, next);
        }
    }
}

/// Key used for the explanation attached to leaf `id`.
pub fn leaf_key(id: usize) -> ExplanationKey {
    ExplanationKey(format!("leaf:{id}"))
}

/// Explains `x` by its leaf: kind `rule`, keyed by leaf id.
pub fn explain_with_tree(tree: &SurrogateTree, x: &Instance) -> Result<ExplanationPayload> {
    let (leaf, rule) = tree.leaf_rule(x)?;
    Ok(ExplanationPayload {
        key: leaf_key(leaf),
        kind: ExplanationKind::Rule,
        rule: Some(rule),
        importance: None,
        counterfactual: None,
    })
}

/// Majority label, ties to the lexicographically smallest.
fn majority(counts: &BTreeMap<&Label, usize>) -> Label {
    let mut best: Option<(&Label, usize)> = None;
    for (l, c) in counts {
        if best.is_none_or(|(_, bc)| *c > bc) {
            best = Some((l, *c));
        }
    }
    best.map(|(l, _)| l.clone()).expect("non-empty node")
}

struct Candidate {
    /// Σ_children Σ_y c_y² / n_child; larger is purer.
    score: f64,
    feature: usize,
    test: SplitTest,
    left: Vec<usize>,
    right: Vec<usize>,
}

struct Growing {
    members: Vec<usize>,
    node: Option<(usize, SplitTest, usize, usize)>,
}

/// Greedy top-down Gini tree with best-first growth up to `max_leaves`.
///
/// At each step the leaf whose best split lowers weighted Gini impurity the
/// most is split (ties: earliest-created leaf). Impure leaves are split even
/// at zero gain. Within a leaf, ties go to the lowest feature index, then the
/// smallest threshold. Thresholds are midpoints of consecutive observed values.
pub fn fit_surrogate_tree(
    schema: Vec<String>,
    samples: &[(Instance, Label)],
    max_leaves: usize,
) -> Result<SurrogateTree> {
    if samples.is_empty() {
        return Err(Error::Empty("surrogate tree needs at least one sample"));
    }
    if max_leaves == 0 {
        return Err(Error::invalid("max_leaves must be at least 1"));
    }
    for (i, (x, _)) in samples.iter().enumerate() {
        if x.features.len() != schema.len() {
            return Err(Error::SchemaMismatch {
                record: i,
                detail: format!("{} features, schema has {}", x.features.len(), schema.len()),
            });
        }
    }
    let mut label_ids: BTreeMap<&Label, usize> = BTreeMap::new();
    for (_, l) in samples {
        let next = label_ids.len();
        label_ids.entry(l).or_insert(next);
    }
    let ys: Vec<usize> = samples.iter().map(|(_, l)| label_ids[l]).collect();
    let n_labels = label_ids.len();

    let mut nodes = vec![Growing {
        members: (0..samples.len()).collect(),
        node: None,
    }];
    let mut frontier: Vec<usize> = vec![0];
    let mut leaves = 1;
    let mut cache: BTreeMap<usize, Option<Candidate>> = BTreeMap::new();

    while leaves < max_leaves {
        let mut pick: Option<(usize, f64)> = None;
        for &node_id in &frontier {
            let cand = cache.entry(node_id).or_insert_with(|| {
                best_split(samples, &ys, n_labels, &nodes[node_id].members)
            });
            let Some(c) = cand else { continue };
            let gain = c.score - self_score(&ys, n_labels, &nodes[node_id].members);
            if pick.is_none_or(|(_, g)| gain > g + 1e-12) {
                pick = Some((node_id, gain));
            }
        }
        let Some((node_id, _)) = pick else { break };
        let c = cache.remove(&node_id).flatten().expect("cached candidate");
        let l = nodes.len();
        nodes.push(Growing {
            members: c.left,
            node: None,
        });
        nodes.push(Growing {
            members: c.right,
            node: None,
        });
        nodes[node_id].node = Some((c.feature, c.test, l, l + 1));
        frontier.retain(|&f| f != node_id);
        frontier.push(l);
        frontier.push(l + 1);
        leaves += 1;
    }

    fn build(nodes: &[Growing], id: usize, samples: &[(Instance, Label)]) -> Node {
        match &nodes[id].node {
            Some((feature, test, l, r)) => Node::Split {
                feature: *feature,
                test: test.clone(),
                left: Box::new(build(nodes, *l, samples)),
                right: Box::new(build(nodes, *r, samples)),
            },
            None => {
                let mut counts: BTreeMap<&Label, usize> = BTreeMap::new();
                for &i in &nodes[id].members {
                    *counts.entry(&samples[i].1).or_default() += 1;
                }
                Node::Leaf {
                    id: 0,
                    label: majority(&counts),
                }
            }
        }
    }
    Ok(SurrogateTree::from_root(schema, build(&nodes, 0, samples)))
}

fn sq_over_n(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n as f64
}

fn self_score(ys: &[usize], n_labels: usize, members: &[usize]) -> f64 {
    let mut counts = vec![0; n_labels];
    for &i in members {
        counts[ys[i]] += 1;
    }
    sq_over_n(&counts, members.len())
}

fn best_split(
    samples: &[(Instance, Label)],
    ys: &[usize],
    n_labels: usize,
    members: &[usize],
) -> Option<Candidate> {
    let first = ys[members[0]];
    if members.iter().all(|&i| ys[i] == first) {
        return None;
    }
    let d = samples[0].0.features.len();
    let mut total = vec![0usize; n_labels];
    for &i in members {
        total[ys[i]] += 1;
    }
    let mut best: Option<Candidate> = None;
    let mut consider = |score: f64, feature: usize, test: SplitTest| {
        if best.as_ref().is_none_or(|b| score > b.score + 1e-12) {
            best = Some(Candidate {
                score,
                feature,
                test,
                left: Vec::new(),
                right: Vec::new(),
            });
        }
    };
    for f in 0..d {
        let nums: Option<Vec<(f64, usize)>> = members
            .iter()
            .map(|&i| samples[i].0.features[f].as_num().map(|v| (v, ys[i])))
            .collect();
        if let Some(mut vals) = nums {
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = vec![0usize; n_labels];
            for j in 0..vals.len() - 1 {
                left[vals[j].1] += 1;
                if vals[j].0 == vals[j + 1].0 {
                    continue;
                }
                let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let nl = j + 1;
                let score = sq_over_n(&left, nl) + sq_over_n(&right, vals.len() - nl);
                let t = vals[j].0 + (vals[j + 1].0 - vals[j].0) / 2.0;
                consider(score, f, SplitTest::Threshold(t));
            }
            continue;
        }
        let cats: Option<Vec<(&str, usize)>> = members
            .iter()
            .map(|&i| samples[i].0.features[f].as_cat().map(|v| (v, ys[i])))
            .collect();
        let Some(cats) = cats else { continue };
        let mut per_cat: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (c, y) in &cats {
            per_cat.entry(c).or_insert_with(|| vec![0; n_labels])[*y] += 1;
        }
        if per_cat.len() < 2 {
            continue;
        }
        for (c, left) in &per_cat {
            let nl: usize = left.iter().sum();
            let right: Vec<usize> = total.iter().zip(left).map(|(t, l)| t - l).collect();
            let score = sq_over_n(left, nl) + sq_over_n(&right, members.len() - nl);
            consider(score, f, SplitTest::Category((*c).to_owned()));
        }
    }
    let mut best = best?;
    for &i in members {
        let go_left = match (&best.test, &samples[i].0.features[best.feature]) {
            (SplitTest::Threshold(t), FeatureValue::Num(v)) => *v <= *t,
            (SplitTest::Category(c), FeatureValue::Cat(v)) => v == c,
            _ => unreachable!("feature type checked above"),
        };
        if go_left {
            best.left.push(i);
        } else {
            best.right.push(i);
        }
    }
    Some(best)
}
