//! Synthetic worlds, experiment sweeps, and population splits.

mod split;
mod sweep;
mod world;

pub use split::{split_populations, split_populations_inclusive};
pub use sweep::{sweep_samples, sweep_threshold, SweepResult, SweepRow, ThresholdSweep};
pub use world::{generate_world, stream_rng, GroundTruth, World, WorldSpec, GENERATOR, TREE_DIMS};
