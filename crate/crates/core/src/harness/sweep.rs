//! Parameter sweeps over sample size and anchor precision threshold.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::world::{stream_rng, World};
use crate::error::{Error, Result};
use crate::estimators::{estimate_global, Relation};
use crate::explainers::{find_anchor, Anchor};
use crate::trace::{ExplanationPayload, Trace, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub mean: f64,
    pub std: f64,
    pub uniqueness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub measure: Relation,
    pub rows: Vec<SweepRow>,
    pub repetitions: usize,
    pub seed: u64,
}

impl SweepResult {
    /// Writes `param,mean,std,uniqueness` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// First grid value whose mean reaches `target`.
    pub fn first_reaching(&self, target: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.mean >= target).map(|r| r.param)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Estimates both measures for explainer `explainer` of `world` at each
/// sample size in `n_grid`, over `repetitions` independent traces.
///
/// Each `(grid point, repetition)` pair draws from its own generator stream,
/// so results do not depend on scheduling. Sufficiency is reported only
/// when the explainer attaches rules to its explanations.
pub fn sweep_samples(
    world: &World,
    explainer: usize,
    n_grid: &[usize],
    repetitions: usize,
    seed: u64,
) -> Result<Vec<SweepResult>> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    if explainer >= world.explainers().len() {
        return Err(Error::invalid(format!("world has no explainer {explainer}")));
    }
    if n_grid.contains(&0) {
        return Err(Error::invalid("sample sizes must be positive"));
    }
    let jobs: Vec<(usize, usize)> = (0..n_grid.len())
        .flat_map(|g| (0..repetitions).map(move |r| (g, r)))
        .collect();
    // (consistency, sufficiency if rules are present, uniqueness) per job
    let outcomes: Vec<(f64, Option<f64>, f64)> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let mut rng = stream_rng(seed, ((g as u64) << 32) | r as u64);
            let traces = world.sample(n_grid[g], &mut rng)?;
            let t = &traces[explainer];
            let con = estimate_global(t, Relation::Equality)?;
            let suf = if t.records().iter().all(|r| r.explanation.rule.is_some()) {
                Some(estimate_global(t, Relation::Applicability)?.estimate)
            } else {
                None
            };
            Ok((con.estimate, suf, con.uniqueness))
        })
        .collect::<Result<_>>()?;

    let mut con_rows = Vec::with_capacity(n_grid.len());
    let mut suf_rows = Vec::with_capacity(n_grid.len());
    for (g, chunk) in outcomes.chunks(repetitions).enumerate() {
        let uniq = chunk.iter().map(|o| o.2).sum::<f64>() / repetitions as f64;
        let param = n_grid[g] as f64;
        let (mean, std) = mean_std(&chunk.iter().map(|o| o.0).collect::<Vec<_>>());
        con_rows.push(SweepRow { param, mean, std, uniqueness: uniq });
        if let Some(s) = chunk.iter().map(|o| o.1).collect::<Option<Vec<_>>>() {
            let (mean, std) = mean_std(&s);
            suf_rows.push(SweepRow { param, mean, std, uniqueness: uniq });
        }
    }
    let mut out = vec![SweepResult {
        measure: Relation::Equality,
        rows: con_rows,
        repetitions,
        seed,
    }];
    if suf_rows.len() == n_grid.len() {
        out.push(SweepResult {
            measure: Relation::Applicability,
            rows: suf_rows,
            repetitions,
            seed,
        });
    }
    Ok(out)
}

/// Outcome of [`sweep_threshold`].
#[derive(Debug, Clone)]
pub struct ThresholdSweep {
    pub consistency: SweepResult,
    pub sufficiency: SweepResult,
    /// `anchors[t][i]`: the anchor of evaluation record `i` at threshold `t`.
    pub anchors: Vec<Vec<Anchor>>,
    /// The anchor-explained trace at each threshold.
    pub traces: Vec<Trace>,
}

/// Explains every record of `eval` with an anchor searched on `search`, at
/// each threshold, and estimates both measures of the resulting traces.
pub fn sweep_threshold(eval: &Trace, search: &Trace, thresholds: &[f64]) -> Result<ThresholdSweep> {
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold grid is empty"));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("thresholds must be ascending"));
    }
    if eval.schema() != search.schema() {
        return Err(Error::invalid("evaluation and search traces have different schemas"));
    }
    let mut con_rows = Vec::new();
    let mut suf_rows = Vec::new();
    let mut anchors = Vec::new();
    let mut traces = Vec::new();
    for &tau in thresholds {
        let found: Vec<Anchor> = eval
            .records()
            .par_iter()
            .map(|r| find_anchor(&r.instance, &r.prediction, search, tau))
            .collect::<Result<_>>()?;
        let records = eval
            .records()
            .iter()
            .zip(&found)
            .map(|(r, a)| {
                TraceRecord::new(
                    r.instance.clone(),
                    r.prediction.clone(),
                    ExplanationPayload::rule(a.rule.clone()),
                )
            })
            .collect();
        let mut t = eval.derive(records)?;
        t.set_provenance("anchor_threshold", tau.to_string());
        let con = estimate_global(&t, Relation::Equality)?;
        let suf = estimate_global(&t, Relation::Applicability)?;
        con_rows.push(SweepRow {
            param: tau,
            mean: con.estimate,
            std: 0.0,
            uniqueness: con.uniqueness,
        });
        suf_rows.push(SweepRow {
            param: tau,
            mean: suf.estimate,
            std: 0.0,
            uniqueness: con.uniqueness,
        });
        anchors.push(found);
        traces.push(t);
    }
    let wrap = |measure, rows| SweepResult {
        measure,
        rows,
        repetitions: 1,
        seed: 0,
    };
    Ok(ThresholdSweep {
        consistency: wrap(Relation::Equality, con_rows),
        sufficiency: wrap(Relation::Applicability, suf_rows),
        anchors,
        traces,
    })
}
