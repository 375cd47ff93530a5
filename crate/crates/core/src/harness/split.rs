//! Label-dependent splitting of a trace into two populations.

use rand::Rng;

use super::world::stream_rng;
use crate::error::{Error, Result};
use crate::trace::{Label, Trace};

/// Sends each record with label `positive` to the first population with
/// probability `p`, and every other record there with probability `1 - p`.
/// The two outputs partition the input and keep its order.
pub fn split_populations(trace: &Trace, positive: &Label, p: f64, seed: u64) -> Result<(Trace, Trace)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("split probability must lie in (0, 1), got {p}")));
    }
    split_inclusive(trace, positive, p, seed)
}

/// As [`split_populations`], but also accepting `p = 0` and `p = 1`, where
/// the split becomes deterministic by label.
pub fn split_populations_inclusive(trace: &Trace, positive: &Label, p: f64, seed: u64) -> Result<(Trace, Trace)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("split probability must lie in [0, 1], got {p}")));
    }
    split_inclusive(trace, positive, p, seed)
}

fn split_inclusive(trace: &Trace, positive: &Label, p: f64, seed: u64) -> Result<(Trace, Trace)> {
    let mut rng = stream_rng(seed, 0);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for r in trace.records() {
        let q = if &r.prediction == positive { p } else { 1.0 - p };
        // one draw per record keeps the stream aligned across p
        let u: f64 = rng.gen();
        if u < q {
            first.push(r.clone());
        } else {
            second.push(r.clone());
        }
    }
    let mut a = trace.derive(first)?;
    let mut b = trace.derive(second)?;
    for (t, name) in [(&mut a, "1"), (&mut b, "2")] {
        t.set_provenance("population", name);
        t.set_provenance("split_p", p.to_string());
        t.set_provenance("split_seed", seed.to_string());
    }
    Ok((a, b))
}
