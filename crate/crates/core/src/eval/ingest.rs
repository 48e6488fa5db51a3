use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::{Dataset, Split, Trajectory, COVARIATE_NAMES};

use super::EvalError;

/// Column roles of a long-format file: one row per (patient, step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub id: String,
    pub step: String,
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    /// Split column; without one, patients are split 70/15/15 in order of
    /// first appearance.
    pub split: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            step: "step".into(),
            covariates: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            split: Some("split".into()),
        }
    }
}

impl CsvSchema {
    pub fn for_dataset(dataset: &Dataset) -> Self {
        Self {
            covariates: dataset.meta.covariate_names.clone(),
            ..Self::default()
        }
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> EvalError {
    EvalError::Parse {
        line,
        message: message.into(),
    }
}

struct Row {
    line: u64,
    step: usize,
    split: Option<Split>,
    covariates: Vec<f64>,
    treatment: u8,
    outcome: f64,
}

/// Reads a long-format CSV into a dataset. Every error names the offending
/// line (the header is line 1).
pub fn ingest_longitudinal_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, EvalError> {
    let file = std::fs::File::open(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, schema)
}

pub(crate) fn ingest_reader(input: impl std::io::Read, schema: &CsvSchema) -> Result<Dataset, EvalError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = reader.headers()?.clone();
    let header_line = reader.position().line().max(1);
    let col = |name: &str| -> Result<usize, EvalError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(header_line, format!("missing column {name}")))
    };
    let id_col = col(&schema.id)?;
    let step_col = col(&schema.step)?;
    let cov_cols = schema.covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;
    let a_col = col(&schema.treatment)?;
    let y_col = col(&schema.outcome)?;
    let split_col = schema.split.as_deref().map(col).transpose()?;

    let mut order: Vec<u64> = Vec::new();
    let mut patients: HashMap<u64, Vec<Row>> = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| rec.get(i).ok_or_else(|| parse_err(line, format!("missing {name}")));
        let number = |i: usize, name: &str| -> Result<f64, EvalError> {
            let raw = field(i, name)?;
            match raw.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(parse_err(line, format!("{name} = {raw:?} is not a finite number"))),
            }
        };
        let raw_id = field(id_col, &schema.id)?;
        let id: u64 = raw_id
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("{} = {raw_id:?} is not a non-negative integer", schema.id)))?;
        let raw_step = field(step_col, &schema.step)?;
        let step: usize = raw_step
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("{} = {raw_step:?} is not a non-negative integer", schema.step)))?;
        let raw_a = field(a_col, &schema.treatment)?;
        let treatment = match raw_a.trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(parse_err(
                    line,
                    format!("{} = {other:?} is not binary (expected 0 or 1)", schema.treatment),
                ))
            }
        };
        let split = match split_col {
            Some(i) => {
                let raw = field(i, "split")?;
                Some(Split::parse(raw.trim()).ok_or_else(|| parse_err(line, format!("unknown split {raw:?}")))?)
            }
            None => None,
        };
        let covariates = cov_cols
            .iter()
            .zip(&schema.covariates)
            .map(|(&i, n)| number(i, n))
            .collect::<Result<Vec<_>, _>>()?;
        let outcome = number(y_col, &schema.outcome)?;
        let rows = patients.entry(id).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        if let Some(prev) = rows.iter().find(|r| r.step == step) {
            return Err(parse_err(
                line,
                format!("duplicate row for patient {id} step {step} (first seen on line {})", prev.line),
            ));
        }
        if let (Some(first), Some(s)) = (rows.first(), split) {
            if first.split != Some(s) {
                return Err(parse_err(line, format!("patient {id} changes split")));
            }
        }
        rows.push(Row {
            line,
            step,
            split,
            covariates,
            treatment,
            outcome,
        });
    }
    if order.is_empty() {
        return Err(parse_err(header_line, "no data rows"));
    }

    let n = order.len();
    let mut trajectories = Vec::with_capacity(n);
    for (ordinal, id) in order.into_iter().enumerate() {
        let mut rows = patients.remove(&id).expect("grouped above");
        rows.sort_by_key(|r| r.step);
        for pair in rows.windows(2) {
            if pair[1].step != pair[0].step + 1 {
                return Err(parse_err(
                    pair[1].line,
                    format!("patient {id} jumps from step {} to {}", pair[0].step, pair[1].step),
                ));
            }
        }
        let split = rows[0].split.unwrap_or_else(|| positional_split(ordinal, n));
        trajectories.push(Trajectory {
            id,
            split,
            statics: None,
            covariates: rows.iter().map(|r| r.covariates.clone()).collect(),
            treatments: rows.iter().map(|r| r.treatment).collect(),
            outcomes: rows.iter().map(|r| r.outcome).collect(),
        });
    }
    Dataset::from_trajectories(trajectories, schema.covariates.clone(), None, None)
        .map_err(|e| parse_err(header_line, e.to_string()))
}

fn positional_split(ordinal: usize, n: usize) -> Split {
    let f = ordinal as f64 / n as f64;
    if f < 0.7 {
        Split::Train
    } else if f < 0.85 {
        Split::Val
    } else {
        Split::Test
    }
}

/// Writes a dataset in the long format read by [`ingest_longitudinal_csv`],
/// with the default column names.
pub fn export_longitudinal_csv(dataset: &Dataset, out: impl Write) -> Result<(), EvalError> {
    let schema = CsvSchema::for_dataset(dataset);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![schema.id.clone(), schema.step.clone()];
    header.extend(schema.covariates.iter().cloned());
    header.extend([schema.treatment.clone(), schema.outcome.clone(), "split".to_string()]);
    w.write_record(&header)?;
    for t in &dataset.trajectories {
        for s in 0..t.len() {
            let mut rec = vec![t.id.to_string(), s.to_string()];
            rec.extend(t.covariates[s].iter().map(f64::to_string));
            rec.push(t.treatments[s].to_string());
            rec.push(t.outcomes[s].to_string());
            rec.push(t.split.as_str().to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
