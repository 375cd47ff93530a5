//! Explicitly scoped rules and reference explainers.

mod anchor;
mod knn;
mod rule;
mod tree;

pub use anchor::{find_anchor, path_to_rule, Anchor, Constraint};
pub use knn::{counterfactual_to_rule, knn_explain, KnnOption, PrototypeSet, TAU_INFLATION};
pub use rule::{precision, rule_applies, Bound, CompiledRule, Metric, ScopedRule};
pub use tree::{explain_with_tree, fit_surrogate_tree, leaf_key, Node, SplitTest, SurrogateTree};
