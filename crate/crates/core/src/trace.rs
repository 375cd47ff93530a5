//! Trace data model: instances, labels, explanation payloads, and canonical keys.
//!
//! A [`Trace`] is an ordered sample of `(instance, prediction, explanation)`
//! records drawn from the deployment distribution. Every estimator in this
//! crate consumes traces; nothing downstream needs access to the model or the
//! explainer themselves.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::explainers::ScopedRule;

/// Number of significant digits used when numbers are rendered into keys.
pub const KEY_SIGNIFICANT_DIGITS: usize = 12;

/// One feature value: numeric or a raw categorical token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
}

impl FeatureValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(v) => Some(*v),
            FeatureValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            FeatureValue::Num(_) => None,
            FeatureValue::Cat(s) => Some(s),
        }
    }
}

impl From<f64> for FeatureValue {
    fn from(v: f64) -> Self {
        FeatureValue::Num(v)
    }
}

impl From<&str> for FeatureValue {
    fn from(v: &str) -> Self {
        FeatureValue::Cat(v.to_owned())
    }
}

/// An input point. The feature schema lives on the owning [`Trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub features: Vec<FeatureValue>,
}

impl Instance {
    pub fn new(id: impl Into<String>, features: Vec<FeatureValue>) -> Self {
        Instance {
            id: id.into(),
            features,
        }
    }

    pub fn numeric(id: impl Into<String>, values: &[f64]) -> Self {
        Instance::new(id, values.iter().copied().map(FeatureValue::Num).collect())
    }

    /// All features as numbers, or `None` if any is categorical.
    pub fn numeric_values(&self) -> Option<Vec<f64>> {
        self.features.iter().map(FeatureValue::as_num).collect()
    }
}

/// A predicted label token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub String);

impl Label {
    pub fn new(s: impl Into<String>) -> Self {
        Label(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_owned())
    }
}

/// Canonical, equality-comparable token identifying an explanation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExplanationKey(pub String);

impl ExplanationKey {
    pub fn new(s: impl Into<String>) -> Self {
        ExplanationKey(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl fmt::Display for ExplanationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationKind {
    Opaque,
    Rule,
    Importance,
    Counterfactual,
}

impl ExplanationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExplanationKind::Opaque => "opaque",
            ExplanationKind::Rule => "rule",
            ExplanationKind::Importance => "importance",
            ExplanationKind::Counterfactual => "counterfactual",
        }
    }
}

impl fmt::Display for ExplanationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What an explainer returned for one instance.
///
/// `kind` names the primary content; the matching optional field must be
/// present. Other optional fields may ride along (a prototype explanation
/// keyed by prototype id can still carry its ball rule).
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationPayload {
    pub key: ExplanationKey,
    pub kind: ExplanationKind,
    pub rule: Option<ScopedRule>,
    pub importance: Option<Vec<f64>>,
    pub counterfactual: Option<Vec<FeatureValue>>,
}

impl ExplanationPayload {
    pub fn opaque(key: impl Into<String>) -> Self {
        ExplanationPayload {
            key: ExplanationKey::new(key),
            kind: ExplanationKind::Opaque,
            rule: None,
            importance: None,
            counterfactual: None,
        }
    }

    /// Rule payload keyed by its canonical rendering.
    pub fn rule(rule: ScopedRule) -> Self {
        let mut p = ExplanationPayload {
            key: ExplanationKey::new(""),
            kind: ExplanationKind::Rule,
            rule: Some(rule),
            importance: None,
            counterfactual: None,
        };
        p.key = canonical_key(&p);
        p
    }

    pub fn importance(phi: Vec<f64>) -> Self {
        let mut p = ExplanationPayload {
            key: ExplanationKey::new(""),
            kind: ExplanationKind::Importance,
            rule: None,
            importance: Some(phi),
            counterfactual: None,
        };
        p.key = canonical_key(&p);
        p
    }

    pub fn counterfactual(x_cf: Vec<FeatureValue>) -> Self {
        let mut p = ExplanationPayload {
            key: ExplanationKey::new(""),
            kind: ExplanationKind::Counterfactual,
            rule: None,
            importance: None,
            counterfactual: Some(x_cf),
        };
        p.key = canonical_key(&p);
        p
    }

    pub fn with_key(mut self, key: ExplanationKey) -> Self {
        self.key = key;
        self
    }

    pub fn with_rule(mut self, rule: ScopedRule) -> Self {
        self.rule = Some(rule);
        self
    }

    /// Checks the kind/field invariants against a schema of `width` features.
    pub(crate) fn validate(&self, record: usize, width: usize) -> Result<()> {
        let missing = |field: &str| Error::MissingField {
            record,
            field: field.to_owned(),
        };
        match self.kind {
            ExplanationKind::Opaque => {}
            ExplanationKind::Rule if self.rule.is_none() => return Err(missing("rule")),
            ExplanationKind::Importance if self.importance.is_none() => {
                return Err(missing("importance"))
            }
            ExplanationKind::Counterfactual if self.counterfactual.is_none() => {
                return Err(missing("counterfactual"))
            }
            _ => {}
        }
        if self.key.as_str().is_empty() {
            return Err(missing("key"));
        }
        if let Some(phi) = &self.importance {
            if phi.len() != width {
                return Err(Error::SchemaMismatch {
                    record,
                    detail: format!("importance has length {}, schema has {width}", phi.len()),
                });
            }
            if phi.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    record,
                    field: "importance".into(),
                });
            }
        }
        if let Some(cf) = &self.counterfactual {
            check_features(record, "counterfactual", cf, width)?;
        }
        if let Some(rule) = &self.rule {
            rule.validate().map_err(|e| Error::Config {
                record,
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }
}

fn check_features(record: usize, field: &str, values: &[FeatureValue], width: usize) -> Result<()> {
    if values.len() != width {
        return Err(Error::SchemaMismatch {
            record,
            detail: format!("{field} has {} values, schema has {width}", values.len()),
        });
    }
    if values
        .iter()
        .any(|v| matches!(v, FeatureValue::Num(x) if !x.is_finite()))
    {
        return Err(Error::NonFinite {
            record,
            field: field.to_owned(),
        });
    }
    Ok(())
}

/// One observed `(instance, f(instance), e(instance))` sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub instance: Instance,
    pub prediction: Label,
    pub explanation: ExplanationPayload,
}

impl TraceRecord {
    pub fn new(instance: Instance, prediction: Label, explanation: ExplanationPayload) -> Self {
        TraceRecord {
            instance,
            prediction,
            explanation,
        }
    }

    pub fn key(&self) -> &ExplanationKey {
        &self.explanation.key
    }
}

/// A validated, immutable sample of trace records sharing one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    schema: Vec<String>,
    records: Vec<TraceRecord>,
    provenance: BTreeMap<String, String>,
}

impl Trace {
    pub fn new(schema: Vec<String>, records: Vec<TraceRecord>) -> Result<Self> {
        Trace::with_provenance(schema, records, BTreeMap::new())
    }

    pub fn with_provenance(
        schema: Vec<String>,
        records: Vec<TraceRecord>,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        let width = schema.len();
        for (i, r) in records.iter().enumerate() {
            check_features(i, "features", &r.instance.features, width)?;
            r.explanation.validate(i, width)?;
        }
        Ok(Trace {
            schema,
            records,
            provenance,
        })
    }

    pub fn empty(schema: Vec<String>) -> Self {
        Trace {
            schema,
            records: Vec::new(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s == name)
    }

    /// Finds a record by instance id.
    pub fn find(&self, id: &str) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.instance.id == id)
    }

    /// Sorted label alphabet observed in the trace.
    pub fn labels(&self) -> Vec<Label> {
        let mut v: Vec<Label> = self.records.iter().map(|r| r.prediction.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Builds a new trace from a subset or transformation of this one's records,
    /// keeping schema and provenance.
    pub fn derive(&self, records: Vec<TraceRecord>) -> Result<Trace> {
        Trace::with_provenance(self.schema.clone(), records, self.provenance.clone())
    }

    /// Copy of the trace with every payload reduced to its key.
    pub fn to_keyed(&self) -> Trace {
        let records = self
            .records
            .iter()
            .map(|r| TraceRecord {
                instance: r.instance.clone(),
                prediction: r.prediction.clone(),
                explanation: ExplanationPayload {
                    key: r.explanation.key.clone(),
                    kind: ExplanationKind::Opaque,
                    rule: None,
                    importance: None,
                    counterfactual: None,
                },
            })
            .collect();
        Trace {
            schema: self.schema.clone(),
            records,
            provenance: self.provenance.clone(),
        }
    }

    pub fn set_provenance(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.provenance.insert(key.into(), value.into());
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }
}

/// Renders a number with [`KEY_SIGNIFICANT_DIGITS`] significant digits.
///
/// Zero (of either sign) renders as `"0"`.
pub fn render_number(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    format!("{:.*e}", KEY_SIGNIFICANT_DIGITS - 1, x)
}

pub(crate) fn render_value(v: &FeatureValue) -> Value {
    match v {
        FeatureValue::Num(x) => Value::String(format!("n:{}", render_number(*x))),
        FeatureValue::Cat(s) => Value::String(format!("s:{s}")),
    }
}

pub(crate) fn render_numbers(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| Value::String(render_number(*x))).collect())
}

/// Builds a key from a kind tag and a JSON body. `serde_json` maps keep their
/// keys sorted, so the rendering has a fixed field order.
pub(crate) fn tagged_key(tag: &str, body: &Value) -> ExplanationKey {
    ExplanationKey(format!("{tag}:{body}"))
}

/// Canonical key of a payload's primary content.
///
/// Opaque payloads have no content beyond their key, which is returned as is.
pub fn canonical_key(payload: &ExplanationPayload) -> ExplanationKey {
    match payload.kind {
        ExplanationKind::Opaque => payload.key.clone(),
        ExplanationKind::Rule => match &payload.rule {
            Some(rule) => tagged_key("rule", &rule.canonical_value()),
            None => payload.key.clone(),
        },
        ExplanationKind::Importance => match &payload.importance {
            Some(phi) => tagged_key("importance", &render_numbers(phi)),
            None => payload.key.clone(),
        },
        ExplanationKind::Counterfactual => match &payload.counterfactual {
            Some(cf) => tagged_key(
                "counterfactual",
                &Value::Array(cf.iter().map(render_value).collect()),
            ),
            None => payload.key.clone(),
        },
    }
}
