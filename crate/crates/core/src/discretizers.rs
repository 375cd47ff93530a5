//! Coarsening maps `ψ: ℰ → ℰ'` for importance vectors and counterfactuals.
//!
//! Two explanations are treated as equal when their discretized keys agree.
//! Keys take the form `importance:<method>:[...]` or
//! `counterfactual:<method>:[...]`; `original` keeps the payload's canonical
//! full-precision key.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::trace::{
    canonical_key, render_numbers, ExplanationKey, ExplanationKind, ExplanationPayload, FeatureValue,
    Trace, TraceRecord,
};

/// Relative tolerance under which a scaled value counts as an integer before
/// flooring, so that `0.1` at one digit floors to `0.1` and not `0.0`.
const SNAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiscretizerSpec {
    /// Full-precision canonical key; valid for both payload kinds.
    Original,
    /// `⌊10^k · φ_i⌋ / 10^k`.
    FixedPoint(u32),
    /// `sign(φ_i)` with `sign(0) = 0`.
    Sign,
    /// Ascending stable argsort of `φ`.
    Rank,
    /// Sign on the `m` largest-magnitude coordinates, zero elsewhere.
    SignOfTop(usize),
    /// `x_cf - x`.
    Delta,
    /// `sign(x_cf_i - x_i)`.
    DeltaSign,
    /// `1` where `x_i = x_cf_i`, `0` where the feature changed.
    IsFeatureModified,
}

impl DiscretizerSpec {
    pub fn accepts(self, kind: ExplanationKind) -> bool {
        use DiscretizerSpec::*;
        match self {
            Original => matches!(kind, ExplanationKind::Importance | ExplanationKind::Counterfactual),
            FixedPoint(_) | Sign | Rank | SignOfTop(_) => kind == ExplanationKind::Importance,
            Delta | DeltaSign | IsFeatureModified => kind == ExplanationKind::Counterfactual,
        }
    }

    fn family(self) -> &'static str {
        use DiscretizerSpec::*;
        match self {
            Original => "importance|counterfactual",
            FixedPoint(_) | Sign | Rank | SignOfTop(_) => "importance",
            Delta | DeltaSign | IsFeatureModified => "counterfactual",
        }
    }
}

impl fmt::Display for DiscretizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscretizerSpec::Original => f.write_str("original"),
            DiscretizerSpec::FixedPoint(k) => write!(f, "fp:{k}"),
            DiscretizerSpec::Sign => f.write_str("sign"),
            DiscretizerSpec::Rank => f.write_str("rank"),
            DiscretizerSpec::SignOfTop(m) => write!(f, "sign-of-top:{m}"),
            DiscretizerSpec::Delta => f.write_str("delta"),
            DiscretizerSpec::DeltaSign => f.write_str("delta-sign"),
            DiscretizerSpec::IsFeatureModified => f.write_str("is-feature-modified"),
        }
    }
}

impl FromStr for DiscretizerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let positive = |arg: &str| -> Result<u64> {
            match arg.parse::<u64>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(Error::invalid(format!("`{s}`: parameter must be an integer ≥ 1"))),
            }
        };
        let spec = match s.split_once(':') {
            Some(("fp", k)) => {
                let k = positive(k)?;
                // 10^k must stay well inside f64's exact range
                if k > 15 {
                    return Err(Error::invalid(format!("`{s}`: at most 15 digits are supported")));
                }
                DiscretizerSpec::FixedPoint(k as u32)
            }
            Some(("sign-of-top", m)) => DiscretizerSpec::SignOfTop(positive(m)? as usize),
            Some(_) => return Err(Error::invalid(format!("unknown discretizer `{s}`"))),
            None => match s {
                "original" => DiscretizerSpec::Original,
                "sign" => DiscretizerSpec::Sign,
                "rank" => DiscretizerSpec::Rank,
                "delta" => DiscretizerSpec::Delta,
                "delta-sign" => DiscretizerSpec::DeltaSign,
                "is-feature-modified" => DiscretizerSpec::IsFeatureModified,
                _ => return Err(Error::invalid(format!("unknown discretizer `{s}`"))),
            },
        };
        Ok(spec)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn floor_fixed(x: f64, scale: f64) -> f64 {
    let s = x * scale;
    let r = s.round();
    let snapped = if (s - r).abs() <= SNAP_TOLERANCE * r.abs().max(1.0) {
        r
    } else {
        s.floor()
    };
    // keep -0 out of the output
    snapped / scale + 0.0
}

/// The discretized importance vector, before keying.
pub fn importance_values(phi: &[f64], method: DiscretizerSpec) -> Result<Vec<f64>> {
    if let Some(i) = phi.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("importance component {i} is not finite")));
    }
    let out = match method {
        DiscretizerSpec::Original => phi.to_vec(),
        DiscretizerSpec::FixedPoint(k) => {
            let scale = 10f64.powi(k as i32);
            phi.iter().map(|&x| floor_fixed(x, scale)).collect()
        }
        DiscretizerSpec::Sign => phi.iter().map(|&x| sign(x)).collect(),
        DiscretizerSpec::Rank => {
            let mut order: Vec<usize> = (0..phi.len()).collect();
            order.sort_by(|&a, &b| phi[a].total_cmp(&phi[b]));
            order.into_iter().map(|i| i as f64).collect()
        }
        DiscretizerSpec::SignOfTop(m) => {
            let mut order: Vec<usize> = (0..phi.len()).collect();
            order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()));
            let mut out = vec![0.0; phi.len()];
            for &i in order.iter().take(m) {
                out[i] = sign(phi[i]);
            }
            out
        }
        other => {
            return Err(Error::invalid(format!("`{other}` is not an importance discretizer")));
        }
    };
    Ok(out)
}

/// Key of an importance vector under `method`.
pub fn discretize_importance(phi: &[f64], method: DiscretizerSpec) -> Result<ExplanationKey> {
    let values = importance_values(phi, method)?;
    Ok(match method {
        DiscretizerSpec::Original => canonical_key(&ExplanationPayload::importance(values)),
        _ => keyed("importance", method, render_numbers(&values)),
    })
}

fn numeric_pair(x: &[FeatureValue], x_cf: &[FeatureValue], i: usize) -> Result<(f64, f64)> {
    match (x[i].as_num(), x_cf[i].as_num()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::invalid(format!("feature {i} is categorical; differences are undefined"))),
    }
}

/// The discretized counterfactual for the numeric methods.
pub fn counterfactual_values(
    x: &[FeatureValue],
    x_cf: &[FeatureValue],
    method: DiscretizerSpec,
) -> Result<Vec<f64>> {
    if x.len() != x_cf.len() {
        return Err(Error::invalid(format!(
            "instance has {} features, counterfactual has {}",
            x.len(),
            x_cf.len()
        )));
    }
    (0..x.len())
        .map(|i| match method {
            DiscretizerSpec::Delta => numeric_pair(x, x_cf, i).map(|(a, b)| b - a + 0.0),
            DiscretizerSpec::DeltaSign => numeric_pair(x, x_cf, i).map(|(a, b)| sign(b - a)),
            DiscretizerSpec::IsFeatureModified => Ok(if x[i] == x_cf[i] { 1.0 } else { 0.0 }),
            other => Err(Error::invalid(format!("`{other}` has no numeric counterfactual form"))),
        })
        .collect()
}

/// Key of the counterfactual `x_cf` of `x` under `method`.
pub fn discretize_counterfactual(
    x: &[FeatureValue],
    x_cf: &[FeatureValue],
    method: DiscretizerSpec,
) -> Result<ExplanationKey> {
    match method {
        DiscretizerSpec::Original => {
            if x.len() != x_cf.len() {
                return Err(Error::invalid("instance and counterfactual lengths differ"));
            }
            Ok(canonical_key(&ExplanationPayload::counterfactual(x_cf.to_vec())))
        }
        _ => Ok(keyed(
            "counterfactual",
            method,
            render_numbers(&counterfactual_values(x, x_cf, method)?),
        )),
    }
}

fn keyed(family: &str, method: DiscretizerSpec, body: Value) -> ExplanationKey {
    ExplanationKey::new(format!("{family}:{method}:{body}"))
}

fn rekey(i: usize, r: &TraceRecord, method: DiscretizerSpec) -> Result<TraceRecord> {
    let p = &r.explanation;
    if !method.accepts(p.kind) {
        return Err(Error::KindMismatch {
            record: i,
            expected: method.family().to_owned(),
            found: p.kind.as_str().to_owned(),
        });
    }
    let at = |e: Error| Error::Config {
        record: i,
        detail: e.to_string(),
    };
    let key = match p.kind {
        ExplanationKind::Importance => {
            let phi = p.importance.as_deref().unwrap_or_default();
            discretize_importance(phi, method).map_err(at)?
        }
        _ => {
            let cf = p.counterfactual.as_deref().unwrap_or_default();
            discretize_counterfactual(&r.instance.features, cf, method).map_err(at)?
        }
    };
    let mut out = r.clone();
    out.explanation.key = key;
    Ok(out)
}

/// Replaces every record's key by its discretized key; order, instances,
/// labels, and payload content are kept.
pub fn discretize_trace(trace: &Trace, method: DiscretizerSpec) -> Result<Trace> {
    let records = trace
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, r)| rekey(i, r, method))
        .collect::<Result<Vec<_>>>()?;
    let mut out = trace.derive(records)?;
    out.set_provenance("discretizer", method.to_string());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Instance;

    fn f(method: &str, phi: &[f64]) -> Vec<f64> {
        importance_values(phi, method.parse().unwrap()).unwrap()
    }

    #[test]
    fn fixed_point_floors_toward_negative_infinity() {
        assert_eq!(f("fp:1", &[0.447, -0.123]), vec![0.4, -0.2]);
        assert_eq!(f("fp:2", &[0.447, -0.123]), vec![0.44, -0.13]);
        assert_eq!(f("fp:1", &[0.1, 0.3, -0.1, 0.0]), vec![0.1, 0.3, -0.1, 0.0]);
        assert_eq!(f("fp:1", &[-0.0])[0].to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn sign_and_top_signs() {
        assert_eq!(f("sign", &[0.447, -0.123, 0.0]), vec![1.0, -1.0, 0.0]);
        assert_eq!(
            f("sign-of-top:5", &[0.9, -0.8, 0.05, -0.04, 0.3, 0.2]),
            vec![1.0, -1.0, 1.0, 0.0, 1.0, 1.0]
        );
        // ties in magnitude go to the lower index
        assert_eq!(f("sign-of-top:1", &[-0.5, 0.5]), vec![-1.0, 0.0]);
    }

    #[test]
    fn rank_is_a_stable_ascending_argsort() {
        assert_eq!(f("rank", &[0.3, -1.0, 0.3, 0.0]), vec![1.0, 3.0, 0.0, 2.0]);
    }

    #[test]
    fn counterfactual_formulas() {
        let x = [FeatureValue::Num(1.0), FeatureValue::Num(2.0)];
        let cf = [FeatureValue::Num(1.0), FeatureValue::Num(5.0)];
        let c = |m: &str| counterfactual_values(&x, &cf, m.parse().unwrap()).unwrap();
        assert_eq!(c("delta"), vec![0.0, 3.0]);
        assert_eq!(c("delta-sign"), vec![0.0, 1.0]);
        assert_eq!(c("is-feature-modified"), vec![1.0, 0.0]);
        assert_eq!(
            counterfactual_values(&[FeatureValue::Num(2.0)], &[FeatureValue::Num(0.0)], DiscretizerSpec::DeltaSign)
                .unwrap(),
            vec![-1.0]
        );
        assert_eq!(
            counterfactual_values(&x, &x, DiscretizerSpec::IsFeatureModified).unwrap(),
            vec![1.0, 1.0]
        );
        let cat = [FeatureValue::Cat("a".into()), FeatureValue::Num(2.0)];
        assert!(counterfactual_values(&cat, &cf, DiscretizerSpec::Delta).is_err());
        assert!(counterfactual_values(&x, &cf[..1], DiscretizerSpec::Delta).is_err());
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in [
            "original",
            "fp:1",
            "fp:2",
            "sign",
            "rank",
            "sign-of-top:5",
            "delta",
            "delta-sign",
            "is-feature-modified",
        ] {
            assert_eq!(s.parse::<DiscretizerSpec>().unwrap().to_string(), s);
        }
        for bad in ["fp:0", "fp:x", "sign-of-top:0", "signs", "fp", "top:3"] {
            assert!(bad.parse::<DiscretizerSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn keys_carry_family_and_method() {
        let k = discretize_importance(&[0.447, -0.123], DiscretizerSpec::FixedPoint(1)).unwrap();
        assert!(k.as_str().starts_with("importance:fp:1:["), "{}", k.as_str());
        let orig = discretize_importance(&[0.447, -0.123], DiscretizerSpec::Original).unwrap();
        assert_eq!(orig, ExplanationPayload::importance(vec![0.447, -0.123]).key);
    }

    #[test]
    fn trace_rekeying_checks_kind() {
        let rec = |i: usize, phi: Vec<f64>| {
            TraceRecord::new(
                Instance::numeric(format!("r{i}"), &[i as f64, 0.0]),
                "1".into(),
                ExplanationPayload::importance(phi),
            )
        };
        let t = Trace::new(
            vec!["a".into(), "b".into()],
            vec![rec(0, vec![0.41, 0.2]), rec(1, vec![0.49, 0.2])],
        )
        .unwrap();
        let d = discretize_trace(&t, DiscretizerSpec::FixedPoint(1)).unwrap();
        assert_eq!(d.records()[0].key(), d.records()[1].key());
        assert_ne!(t.records()[0].key(), t.records()[1].key());
        assert_eq!(d.records()[0].explanation.importance, t.records()[0].explanation.importance);
        assert!(matches!(
            discretize_trace(&t, DiscretizerSpec::Delta),
            Err(Error::KindMismatch { record: 0, .. })
        ));
        assert!(discretize_trace(&Trace::empty(vec![]), DiscretizerSpec::Sign).unwrap().is_empty());
    }
}
