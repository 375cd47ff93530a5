//! Example-based explanations: nearest prototypes and counterfactuals, both
//! mapped onto ball-shaped scoped rules.

use super::rule::{Metric, ScopedRule};
use crate::error::{Error, Result};
use crate::trace::{ExplanationKey, ExplanationKind, ExplanationPayload, Instance};

/// Slack applied to `tau` so the open ball also admits points at distance
/// exactly `tau`.
pub const TAU_INFLATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub prototypes: Vec<Instance>,
    pub metric: Metric,
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnnOption {
    /// Applicability is "p is x's nearest prototype"; only a key is emitted.
    Nearest,
    /// Applicability is `d(x, p) <= tau`; the ball rule is attached.
    TauBall,
}

fn numeric(x: &Instance) -> Result<Vec<f64>> {
    x.numeric_values()
        .ok_or_else(|| Error::invalid(format!("instance `{}` has categorical features", x.id)))
}

/// Explains `x` by its nearest prototype (ties to the lowest index).
pub fn knn_explain(protos: &PrototypeSet, x: &Instance, option: KnnOption) -> Result<ExplanationPayload> {
    if protos.prototypes.is_empty() {
        return Err(Error::Empty("prototype set"));
    }
    let xv = numeric(x)?;
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for (i, p) in protos.prototypes.iter().enumerate() {
        let pv = numeric(p)?;
        if pv.len() != xv.len() {
            return Err(Error::invalid(format!(
                "prototype {i} has {} features, instance has {}",
                pv.len(),
                xv.len()
            )));
        }
        let d = protos.metric.distance(&xv, &pv);
        if best.as_ref().is_none_or(|(_, bd, _)| d < *bd) {
            best = Some((i, d, pv));
        }
    }
    let (i, _, center) = best.expect("non-empty prototype set");
    let key = ExplanationKey::new(protos.prototypes[i].id.clone());
    let rule = match option {
        KnnOption::Nearest => None,
        KnnOption::TauBall => {
            let tau = protos
                .tau
                .filter(|t| t.is_finite() && *t > 0.0)
                .ok_or_else(|| Error::invalid("tau-ball option needs a positive tau"))?;
            Some(ScopedRule::OpenBall {
                center,
                radius: tau * (1.0 + TAU_INFLATION),
                metric: protos.metric,
            })
        }
    };
    Ok(ExplanationPayload {
        key,
        kind: if rule.is_some() {
            ExplanationKind::Rule
        } else {
            ExplanationKind::Opaque
        },
        rule,
        importance: None,
        counterfactual: None,
    })
}

/// The open ball around `x` reaching out to its counterfactual `x_cf`.
pub fn counterfactual_to_rule(x: &Instance, x_cf: &Instance, metric: Metric) -> Result<ScopedRule> {
    let a = numeric(x)?;
    let b = numeric(x_cf)?;
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "instance has {} features, counterfactual has {}",
            a.len(),
            b.len()
        )));
    }
    let radius = metric.distance(&a, &b);
    if radius <= 0.0 {
        return Err(Error::DegenerateRule(
            "counterfactual coincides with the instance".into(),
        ));
    }
    Ok(ScopedRule::OpenBall {
        center: a,
        radius,
        metric,
    })
}
