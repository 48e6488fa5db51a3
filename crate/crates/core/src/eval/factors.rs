use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Lstm, ParamStore, Tensor};
use crate::losses::influence_values;
use crate::model::{Block, Layout, ModelConfig, FACTORS};

use super::{csv_reader, write_header_comment, EvalError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub covariate: String,
    /// Raw influence on I, C, O.
    pub raw: [f64; 3],
    /// `raw` scaled to sum to 1; uniform when every entry is zero.
    pub share: [f64; 3],
}

impl FactorRow {
    fn new(covariate: String, raw: [f64; 3]) -> Self {
        let total: f64 = raw.iter().sum();
        let share = if total > 0.0 {
            raw.map(|v| v / total)
        } else {
            [1.0 / 3.0; 3]
        };
        Self { covariate, raw, share }
    }

    /// Index of the largest share (0 = I, 1 = C, 2 = O).
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for k in 1..3 {
            if self.share[k] > self.share[best] {
                best = k;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub rows: Vec<FactorRow>,
}

const HEADER: [&str; 7] = ["covariate", "I", "C", "O", "share_I", "share_C", "share_O"];

impl FactorTable {
    pub fn row(&self, covariate: &str) -> Option<&FactorRow> {
        self.rows.iter().find(|r| r.covariate == covariate)
    }

    pub fn write_csv(&self, mut out: impl Write, seed: u64, config_hash: &str) -> Result<(), EvalError> {
        write_header_comment(&mut out, seed, config_hash, "")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for r in &self.rows {
            let mut rec = vec![r.covariate.clone()];
            rec.extend(r.raw.iter().chain(&r.share).map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl std::io::Read) -> Result<Self, EvalError> {
        let mut r = csv_reader(input);
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| -> Result<f64, EvalError> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| EvalError::Parse {
                        line,
                        message: format!("column {} is not a number", HEADER[i]),
                    })
            };
            rows.push(FactorRow {
                covariate: rec.get(0).unwrap_or_default().to_string(),
                raw: [num(1)?, num(2)?, num(3)?],
                share: [num(4)?, num(5)?, num(6)?],
            });
        }
        Ok(Self { rows })
    }
}

/// Influence of every covariate on the three factors, through the encoder's
/// input gates and each factor network.
pub fn factor_analysis(
    encoder: &ParamStore,
    model: &ModelConfig,
    covariate_names: &[String],
) -> Result<FactorTable, EvalError> {
    let layout = Layout::new(model, Block::Encoder, covariate_names.len());
    let fetch = |name: &str| -> Result<Tensor, EvalError> {
        encoder
            .by_name(name)
            .cloned()
            .ok_or_else(|| EvalError::Input(format!("encoder parameters lack {name}")))
    };
    let mut raw = vec![[0.0; 3]; covariate_names.len()];
    for (k, f) in FACTORS.iter().enumerate() {
        let stream: &Lstm = &layout.streams[model.stream_for_factor(k)];
        let gates = (0..4)
            .map(|g| fetch(&stream.input_name(g)))
            .collect::<Result<Vec<_>, _>>()?;
        if gates[0].rows() != covariate_names.len() {
            return Err(EvalError::Input(format!(
                "{} covariate names for an encoder reading {} covariates",
                covariate_names.len(),
                gates[0].rows()
            )));
        }
        let layers = [fetch(&format!("net_{f}.l1.w"))?, fetch(&format!("net_{f}.l2.w"))?];
        let v = influence_values(&gates, &layers).map_err(|e| EvalError::Input(e.to_string()))?;
        for (row, x) in raw.iter_mut().zip(v) {
            row[k] = x;
        }
    }
    Ok(FactorTable {
        rows: covariate_names
            .iter()
            .zip(raw)
            .map(|(n, r)| FactorRow::new(n.clone(), r))
            .collect(),
    })
}
