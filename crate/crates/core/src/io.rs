//! Reading and writing trace files.
//!
//! JSON-lines traces start with an optional header line
//! `{"schema":[...],"provenance":{...}}` followed by one record per line:
//!
//! ```text
//! {"id":"r0","features":[1.5,"blue"],"label":"1","explanation":{"kind":"rule","key":"...","rule":{...}}}
//! ```
//!
//! CSV traces are keyed only: header `id,label,explanation_key` plus one
//! `f_<name>` column per feature.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::ScopedRule;
use crate::trace::{
    canonical_key, ExplanationKey, ExplanationKind, ExplanationPayload, FeatureValue, Instance,
    Label, Trace, TraceRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Jsonl,
    Csv,
}

impl TraceFormat {
    /// Guesses the format from a file extension, defaulting to JSON lines.
    pub fn from_path(path: &Path) -> TraceFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => TraceFormat::Csv,
            _ => TraceFormat::Jsonl,
        }
    }
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(TraceFormat::Jsonl),
            "csv" => Ok(TraceFormat::Csv),
            other => Err(Error::invalid(format!("unknown trace format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderWire {
    schema: Vec<String>,
    #[serde(default)]
    provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplanationWire {
    kind: ExplanationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rule: Option<ScopedRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    importance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counterfactual: Option<Vec<FeatureValue>>,
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    id: String,
    features: Vec<FeatureValue>,
    label: String,
    explanation: ExplanationWire,
}

impl RecordWire {
    fn into_record(self, record: usize) -> Result<TraceRecord> {
        let e = self.explanation;
        let mut payload = ExplanationPayload {
            key: ExplanationKey::new(e.key.clone().unwrap_or_default()),
            kind: e.kind,
            rule: e.rule,
            importance: e.importance,
            counterfactual: e.counterfactual,
        };
        if e.key.is_none() {
            if payload.kind == ExplanationKind::Opaque {
                return Err(Error::MissingField {
                    record,
                    field: "explanation.key".into(),
                });
            }
            payload.key = canonical_key(&payload);
        }
        Ok(TraceRecord::new(
            Instance::new(self.id, self.features),
            Label::new(self.label),
            payload,
        ))
    }

    fn from_record(r: &TraceRecord) -> RecordWire {
        let e = &r.explanation;
        RecordWire {
            id: r.instance.id.clone(),
            features: r.instance.features.clone(),
            label: r.prediction.0.clone(),
            explanation: ExplanationWire {
                kind: e.kind,
                key: Some(e.key.0.clone()),
                rule: e.rule.clone(),
                importance: e.importance.clone(),
                counterfactual: e.counterfactual.clone(),
            },
        }
    }
}

pub fn load_trace(path: impl AsRef<Path>, format: TraceFormat) -> Result<Trace> {
    let file = File::open(path.as_ref())?;
    match format {
        TraceFormat::Jsonl => read_jsonl(BufReader::new(file)),
        TraceFormat::Csv => read_csv(file),
    }
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>, format: TraceFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    match format {
        TraceFormat::Jsonl => write_jsonl(trace, &mut w)?,
        TraceFormat::Csv => write_csv(trace, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Trace> {
    let mut schema: Option<Vec<String>> = None;
    let mut provenance = BTreeMap::new();
    let mut records = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 0 {
            let v: serde_json::Value =
                serde_json::from_str(&line).map_err(|source| Error::Json { record: 0, cause: source })?;
            if v.get("schema").is_some() && v.get("id").is_none() {
                let h: HeaderWire =
                    serde_json::from_value(v).map_err(|source| Error::Json { record: 0, cause: source })?;
                schema = Some(h.schema);
                provenance = h.provenance;
                continue;
            }
        }
        let idx = records.len();
        let wire: RecordWire =
            serde_json::from_str(&line).map_err(|source| Error::Json { record: idx, cause: source })?;
        records.push(wire.into_record(idx)?);
    }
    let schema = schema.unwrap_or_else(|| {
        let width = records.first().map_or(0, |r| r.instance.features.len());
        (0..width).map(|i| format!("f{i}")).collect()
    });
    Trace::with_provenance(schema, records, provenance)
}

pub fn write_jsonl(trace: &Trace, mut w: impl Write) -> Result<()> {
    let header = HeaderWire {
        schema: trace.schema().to_vec(),
        provenance: trace.provenance().clone(),
    };
    let line = serde_json::to_string(&header).map_err(|source| Error::Json { record: 0, cause: source })?;
    writeln!(w, "{line}")?;
    for (i, r) in trace.records().iter().enumerate() {
        let line = serde_json::to_string(&RecordWire::from_record(r))
            .map_err(|source| Error::Json { record: i, cause: source })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

const FEATURE_PREFIX: &str = "f_";

pub fn read_csv(reader: impl Read) -> Result<Trace> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingField {
            record: 0,
            field: name.to_owned(),
        })
    };
    let (id_col, label_col, key_col) = (col("id")?, col("label")?, col("explanation_key")?);
    let feature_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(FEATURE_PREFIX).map(|n| (i, n.to_owned())))
        .collect();
    let schema = feature_cols.iter().map(|(_, n)| n.clone()).collect();
    let mut records = Vec::new();
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let get = |c: usize| row.get(c).unwrap_or_default();
        let features = feature_cols
            .iter()
            .map(|(c, _)| {
                let raw = get(*c);
                match raw.parse::<f64>() {
                    Ok(v) => FeatureValue::Num(v),
                    Err(_) => FeatureValue::Cat(raw.to_owned()),
                }
            })
            .collect();
        let key = get(key_col);
        if key.is_empty() {
            return Err(Error::MissingField {
                record: idx,
                field: "explanation_key".into(),
            });
        }
        records.push(TraceRecord::new(
            Instance::new(get(id_col), features),
            Label::new(get(label_col)),
            ExplanationPayload::opaque(key),
        ));
    }
    Trace::new(schema, records)
}

/// Writes a keyed trace as CSV. Structured payloads are rejected; reduce them
/// with [`Trace::to_keyed`] first. Provenance is not stored.
pub fn write_csv(trace: &Trace, w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_owned(), "label".to_owned(), "explanation_key".to_owned()];
    header.extend(trace.schema().iter().map(|n| format!("{FEATURE_PREFIX}{n}")));
    wtr.write_record(&header)?;
    for (i, r) in trace.records().iter().enumerate() {
        if r.explanation.kind != ExplanationKind::Opaque {
            return Err(Error::KindMismatch {
                record: i,
                expected: "opaque".into(),
                found: r.explanation.kind.to_string(),
            });
        }
        let mut row = vec![
            r.instance.id.clone(),
            r.prediction.0.clone(),
            r.explanation.key.0.clone(),
        ];
        for v in &r.instance.features {
            row.push(match v {
                FeatureValue::Num(x) => x.to_string(),
                FeatureValue::Cat(s) if s.parse::<f64>().is_ok() => {
                    return Err(Error::Config {
                        record: i,
                        detail: format!("categorical value `{s}` would read back as numeric"),
                    })
                }
                FeatureValue::Cat(s) => s.clone(),
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
