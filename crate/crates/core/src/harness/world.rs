//! Synthetic explanation systems with known ground truth.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::{explain_with_tree, Node, SplitTest, SurrogateTree};
use crate::oracle::{FiniteSystem, SystemPoint};
use crate::trace::{ExplanationPayload, FeatureValue, Instance, Label, Trace, TraceRecord};

/// Name of the pseudo-random generator, recorded in trace provenance.
pub const GENERATOR: &str = "rand_chacha-0.3/ChaCha8Rng";

/// Default dimension of the tree world's unit hypercube.
pub const TREE_DIMS: usize = 4;

/// Split positions are drawn from this fraction range of each cell's side,
/// keeping leaf masses close to uniform.
const SPLIT_FRACTION: (f64, f64) = (0.4, 0.6);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorldSpec {
    /// A random full binary tree over `[0, 1)^dims` with `leaves` leaves,
    /// each leaf's label flipped per instance with probability `noise`.
    Tree { leaves: usize, noise: f64, dims: usize },
    /// XOR labels on the grid `{-extent + step (i + 1/2)}²`, explained by the
    /// band `|x1|` alone.
    Xor { extent: f64, step: f64 },
    /// Instances in opposite-label pairs; `e1` explains each instance by
    /// itself, `e2` by its pair. `domain = None` draws from a continuum.
    BalancedPair { domain: Option<usize> },
}

impl WorldSpec {
    pub fn tree(leaves: usize, noise: f64) -> Self {
        WorldSpec::Tree {
            leaves,
            noise,
            dims: TREE_DIMS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WorldSpec::Tree { leaves, noise, dims } => {
                if leaves == 0 || !leaves.is_power_of_two() {
                    return Err(Error::invalid(format!("leaves must be a power of two, got {leaves}")));
                }
                if !(0.0..1.0).contains(&noise) {
                    return Err(Error::invalid(format!("label noise must lie in [0, 1), got {noise}")));
                }
                if dims == 0 {
                    return Err(Error::invalid("tree world needs at least one dimension"));
                }
            }
            WorldSpec::Xor { extent, step } => {
                if !(extent.is_finite() && step.is_finite() && extent > 0.0 && step > 0.0) {
                    return Err(Error::invalid("xor world needs positive extent and step"));
                }
                let cells = 2.0 * extent / step;
                if (cells - cells.round()).abs() > 1e-9 || cells.round() < 2.0 {
                    return Err(Error::invalid(format!(
                        "2·extent / step must be an integer ≥ 2, got {cells}"
                    )));
                }
                if !(cells.round() as u64).is_multiple_of(2) {
                    return Err(Error::invalid("2·extent / step must be even"));
                }
            }
            WorldSpec::BalancedPair { domain: Some(d) } if d < 2 || d % 2 != 0 => {
                return Err(Error::invalid(format!("domain size must be even and ≥ 2, got {d}")));
            }
            WorldSpec::BalancedPair { .. } => {}
        }
        Ok(())
    }
}

impl fmt::Display for WorldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorldSpec::Tree { leaves, noise, dims } => write!(f, "tree(leaves={leaves},noise={noise},dims={dims})"),
            WorldSpec::Xor { extent, step } => write!(f, "xor(extent={extent},step={step})"),
            WorldSpec::BalancedPair { domain: Some(d) } => write!(f, "balanced-pair(domain={d})"),
            WorldSpec::BalancedPair { domain: None } => f.write_str("balanced-pair(continuous)"),
        }
    }
}

/// Exact measures of one explainer in a world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub m_c: f64,
    pub m_s: f64,
}

#[derive(Debug, Clone)]
enum Inner {
    Tree {
        tree: SurrogateTree,
        masses: Vec<f64>,
        labels: Vec<bool>,
        noise: f64,
    },
    Xor {
        coords: Vec<f64>,
    },
    BalancedPair {
        domain: Option<usize>,
    },
}

/// A generated world: its model, its explainers, and their ground truth.
#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    seed: u64,
    inner: Inner,
}

/// Builds the world described by `spec`; the seed fixes any random structure.
pub fn generate_world(spec: WorldSpec, seed: u64) -> Result<World> {
    spec.validate()?;
    let inner = match spec {
        WorldSpec::Tree { leaves, noise, dims } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut masses = Vec::with_capacity(leaves);
            let mut labels = Vec::with_capacity(leaves);
            let depth = leaves.trailing_zeros();
            let root = grow(
                depth,
                vec![0.0; dims],
                vec![1.0; dims],
                &mut rng,
                &mut masses,
                &mut labels,
            );
            let schema = (0..dims).map(|i| format!("x{i}")).collect();
            Inner::Tree {
                tree: SurrogateTree::from_root(schema, root),
                masses,
                labels,
                noise,
            }
        }
        WorldSpec::Xor { extent, step } => {
            let cells = (2.0 * extent / step).round() as usize;
            Inner::Xor {
                coords: (0..cells).map(|i| -extent + step * (i as f64 + 0.5)).collect(),
            }
        }
        WorldSpec::BalancedPair { domain } => Inner::BalancedPair { domain },
    };
    Ok(World { spec, seed, inner })
}

fn label_of(bit: bool) -> Label {
    Label::new(if bit { "1" } else { "0" })
}

/// Grows a complete tree of the given depth over the box `[lo, hi)`, pushing
/// each leaf's volume and label in depth-first order.
fn grow(
    depth: u32,
    lo: Vec<f64>,
    hi: Vec<f64>,
    rng: &mut ChaCha8Rng,
    masses: &mut Vec<f64>,
    labels: &mut Vec<bool>,
) -> Node {
    if depth == 0 {
        masses.push(lo.iter().zip(&hi).map(|(a, b)| b - a).product());
        let bit = rng.gen_bool(0.5);
        labels.push(bit);
        return Node::Leaf {
            id: 0,
            label: label_of(bit),
        };
    }
    let feature = rng.gen_range(0..lo.len());
    let t = lo[feature] + (hi[feature] - lo[feature]) * rng.gen_range(SPLIT_FRACTION.0..SPLIT_FRACTION.1);
    let mut left_hi = hi.clone();
    left_hi[feature] = t;
    let mut right_lo = lo.clone();
    right_lo[feature] = t;
    let left = grow(depth - 1, lo, left_hi, rng, masses, labels);
    let right = grow(depth - 1, right_lo, hi, rng, masses, labels);
    Node::Split {
        feature,
        test: SplitTest::Threshold(t),
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn hex_key(prefix: &str, x: f64) -> String {
    format!("{prefix}:{:016x}", x.to_bits())
}

impl World {
    pub fn spec(&self) -> WorldSpec {
        self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn schema(&self) -> Vec<String> {
        match &self.inner {
            Inner::Tree { tree, .. } => tree.schema.clone(),
            Inner::Xor { .. } => vec!["x1".into(), "x2".into()],
            Inner::BalancedPair { .. } => vec!["x".into()],
        }
    }

    /// Names of the world's explainers, in the order [`World::sample`] emits
    /// their traces.
    pub fn explainers(&self) -> Vec<&'static str> {
        match self.inner {
            Inner::Tree { .. } => vec!["tree"],
            Inner::Xor { .. } => vec!["bands"],
            Inner::BalancedPair { .. } => vec!["e1", "e2"],
        }
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        match &self.inner {
            Inner::Tree { noise, .. } => {
                let m = (1.0 - noise) * (1.0 - noise) + noise * noise;
                vec![GroundTruth { m_c: m, m_s: m }]
            }
            Inner::Xor { .. } => vec![GroundTruth { m_c: 0.5, m_s: 0.5 }],
            Inner::BalancedPair { .. } => vec![
                GroundTruth { m_c: 1.0, m_s: 1.0 },
                GroundTruth { m_c: 0.5, m_s: 0.5 },
            ],
        }
    }

    /// The tree world's model, which is also its explainer.
    pub fn tree(&self) -> Option<&SurrogateTree> {
        match &self.inner {
            Inner::Tree { tree, .. } => Some(tree),
            _ => None,
        }
    }

    /// Exact finite system of explainer `index`, when the world is finite.
    /// Tree worlds collapse each leaf to one point per label.
    pub fn system(&self, index: usize) -> Option<FiniteSystem> {
        if index >= self.explainers().len() {
            return None;
        }
        match &self.inner {
            Inner::Tree {
                masses, labels, noise, ..
            } => {
                let dists: Vec<Vec<f64>> = labels
                    .iter()
                    .map(|&b| if b { vec![*noise, 1.0 - noise] } else { vec![1.0 - noise, *noise] })
                    .collect();
                Some(FiniteSystem::from_leaves(masses, &dists).expect("leaf volumes sum to one"))
            }
            Inner::Xor { coords } => {
                let mass = 1.0 / (coords.len() * coords.len()) as f64;
                let mut points = Vec::with_capacity(coords.len() * coords.len());
                for (i, &a) in coords.iter().enumerate() {
                    for (j, &b) in coords.iter().enumerate() {
                        points.push(SystemPoint::new(
                            format!("g{i}_{j}"),
                            mass,
                            label_of((a > 0.0) != (b > 0.0)).as_str(),
                            xor_payload(a).key.as_str(),
                        ));
                    }
                }
                Some(FiniteSystem::new(points, None).expect("uniform grid is a valid system"))
            }
            Inner::BalancedPair { domain: None } => None,
            Inner::BalancedPair { domain: Some(d) } => {
                let mass = 1.0 / *d as f64;
                let points = (0..*d)
                    .map(|x| {
                        let key = if index == 0 {
                            format!("x:{x}")
                        } else {
                            format!("pair:{}", x / 2)
                        };
                        SystemPoint::new(format!("x{x}"), mass, (x % 2).to_string(), key)
                    })
                    .collect();
                Some(FiniteSystem::new(points, None).expect("uniform domain is a valid system"))
            }
        }
    }

    /// Draws `n` instances i.i.d. and returns one trace per explainer over
    /// the same instances and labels.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Trace>> {
        let schema = self.schema();
        let mut per_explainer: Vec<Vec<TraceRecord>> = vec![Vec::with_capacity(n); self.explainers().len()];
        for i in 0..n {
            let id = format!("x{i}");
            match &self.inner {
                Inner::Tree { tree, noise, .. } => {
                    let x = Instance::new(
                        id,
                        (0..schema.len()).map(|_| FeatureValue::Num(rng.gen::<f64>())).collect(),
                    );
                    let (_, clean) = tree.route(&x.features)?;
                    let flip = *noise > 0.0 && rng.gen_bool(*noise);
                    let label = if flip { label_of(clean.as_str() == "0") } else { clean.clone() };
                    let payload = explain_with_tree(tree, &x)?;
                    per_explainer[0].push(TraceRecord::new(x, label, payload));
                }
                Inner::Xor { coords } => {
                    let a = coords[rng.gen_range(0..coords.len())];
                    let b = coords[rng.gen_range(0..coords.len())];
                    let x = Instance::numeric(id, &[a, b]);
                    per_explainer[0].push(TraceRecord::new(x, label_of((a > 0.0) != (b > 0.0)), xor_payload(a)));
                }
                Inner::BalancedPair { domain } => {
                    let side = rng.gen_bool(0.5);
                    let (x, e1, e2) = match domain {
                        None => {
                            let u: f64 = rng.gen_range(0.0..0.5);
                            let x = if side { u + 0.5 } else { u };
                            (x, hex_key("x", x), hex_key("pair", u))
                        }
                        Some(d) => {
                            let pair = rng.gen_range(0..d / 2);
                            let x = 2 * pair + side as usize;
                            (x as f64, format!("x:{x}"), format!("pair:{pair}"))
                        }
                    };
                    let inst = Instance::numeric(id, &[x]);
                    let label = label_of(side);
                    per_explainer[0].push(TraceRecord::new(inst.clone(), label.clone(), ExplanationPayload::opaque(e1)));
                    per_explainer[1].push(TraceRecord::new(inst, label, ExplanationPayload::opaque(e2)));
                }
            }
        }
        per_explainer
            .into_iter()
            .zip(self.explainers())
            .map(|(records, name)| {
                let mut t = Trace::new(schema.clone(), records)?;
                t.set_provenance("world", self.spec.to_string());
                t.set_provenance("explainer", name);
                t.set_provenance("seed", self.seed.to_string());
                t.set_provenance("generator", GENERATOR);
                Ok(t)
            })
            .collect()
    }
}

/// Importance-shaped payload carrying only the band `|x1|`.
fn xor_payload(x1: f64) -> ExplanationPayload {
    ExplanationPayload::importance(vec![0.0, x1.abs()])
}

/// Generator for stream `stream` of a seeded experiment.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
