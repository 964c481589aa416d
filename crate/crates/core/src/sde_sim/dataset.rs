use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{sample_terminal, sample_uniform_inputs, EmConfig, RngStream};
use crate::error::{KolmoError, Result};
use crate::pde_model::PdeProblem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub stream: u64,
    pub problem_hash: String,
    pub m: usize,
}

/// `m` i.i.d. pairs `(x_i, phi(y_i))`; the raw terminals `y_i` are kept so
/// that truncated risks can be evaluated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<f64>,
    pub raw_terminals: Array2<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Writes `x_1..x_d,y_1..y_d,label` rows and a `<stem>.meta.json` sidecar.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = self.dim();
        let mut out = String::with_capacity(self.len() * (2 * d + 1) * 20);
        let header: Vec<String> = (1..=d)
            .map(|i| format!("x_{i}"))
            .chain((1..=d).map(|i| format!("y_{i}")))
            .chain(std::iter::once("label".to_string()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            for v in self.inputs.row(i).iter().chain(self.raw_terminals.row(i).iter()) {
                // `{}` on f64 is the shortest representation that round-trips
                write!(out, "{v},").unwrap();
            }
            writeln!(out, "{}", self.labels[i]).unwrap();
        }
        fs::write(path, out)?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path)?;
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| KolmoError::invalid("empty dataset file"))?;
        let cols = header.split(',').count();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return Err(KolmoError::invalid(format!("malformed header: {header}")));
        }
        let d = (cols - 1) / 2;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| KolmoError::invalid(format!("line {}: {e}", lineno + 2)))?;
            if vals.len() != cols {
                return Err(KolmoError::invalid(format!("line {}: wrong column count", lineno + 2)));
            }
            xs.extend_from_slice(&vals[..d]);
            ys.extend_from_slice(&vals[d..2 * d]);
            labels.push(vals[2 * d]);
        }
        let m = labels.len();
        Ok(Dataset {
            inputs: Array2::from_shape_vec((m, d), xs).expect("shape"),
            raw_terminals: Array2::from_shape_vec((m, d), ys).expect("shape"),
            labels,
            meta,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn make_dataset(p: &PdeProblem, m: usize, rng: &RngStream) -> Result<Dataset> {
    make_dataset_with(p, m, rng, &EmConfig::default())
}

pub fn make_dataset_with(
    p: &PdeProblem,
    m: usize,
    rng: &RngStream,
    em: &EmConfig,
) -> Result<Dataset> {
    p.validate()?;
    if m == 0 {
        return Err(KolmoError::invalid("dataset size m must be at least 1"));
    }
    let inputs = sample_uniform_inputs(&p.domain, m, &rng.split(0))?;
    let raw_terminals = sample_terminal(p, inputs.view(), &rng.split(1), em)?;
    let labels = raw_terminals
        .rows()
        .into_iter()
        .map(|r| p.initial.payoff.eval_unchecked(r.as_slice().expect("contiguous row")))
        .collect();
    Ok(Dataset {
        inputs,
        labels,
        raw_terminals,
        meta: DatasetMeta {
            seed: rng.seed,
            stream: rng.stream_id,
            problem_hash: p.content_hash(),
            m,
        },
    })
}
