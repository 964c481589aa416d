//! One-parameter sweeps over [`BoundInputs`].

use std::fmt::Write as _;
use std::str::FromStr;

use kolmo_core::bounds::{bound_report, BoundInputs};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// `name=start:stop:count`, spaced linearly or geometrically.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub param: String,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub geometric: bool,
}

impl FromStr for Sweep {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let bad = || CliError::validation("sweep", format!("expected name=start:stop:count, got {s:?}"));
        let (param, range) = s.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = range.split(':').collect();
        let [a, b, n] = parts.as_slice() else { return Err(bad()) };
        let sweep = Sweep {
            param: param.trim().to_string(),
            start: a.trim().parse().map_err(|_| bad())?,
            stop: b.trim().parse().map_err(|_| bad())?,
            count: n.trim().parse().map_err(|_| bad())?,
            geometric: false,
        };
        if sweep.param.is_empty() || sweep.count == 0 || !sweep.start.is_finite() || !sweep.stop.is_finite() {
            return Err(bad());
        }
        Ok(sweep)
    }
}

impl Sweep {
    pub fn values(&self) -> CliResult<Vec<f64>> {
        if self.geometric && !(self.start > 0.0 && self.stop > 0.0) {
            return Err(CliError::validation("sweep", "geometric sweeps need positive endpoints"));
        }
        if self.count == 1 {
            return Ok(vec![self.start]);
        }
        let last = (self.count - 1) as f64;
        Ok((0..self.count)
            .map(|i| {
                let t = i as f64 / last;
                if self.geometric {
                    self.start * (self.stop / self.start).powf(t)
                } else {
                    self.start + (self.stop - self.start) * t
                }
            })
            .collect())
    }
}

/// The base inputs with the numeric field `param` replaced by `value`.
pub fn with_param(base: &BoundInputs, param: &str, value: f64) -> CliResult<BoundInputs> {
    let mut v = serde_json::to_value(base).expect("inputs serialize");
    let obj = v.as_object_mut().expect("inputs are an object");
    if param == "arch" || (!obj.contains_key(param) && !["B_dK", "M4d", "truncation_K"].contains(&param)) {
        return Err(CliError::validation("sweep", format!("unknown numeric parameter {param:?}")));
    }
    obj.insert(param.to_string(), Value::from(value));
    serde_json::from_value(v).map_err(|e| CliError::validation("sweep", e.to_string()))
}

/// CSV with one row per sweep value. Rows whose inputs are invalid keep
/// their value and carry the error message in the last column.
pub fn sweep_csv(base: &BoundInputs, sweep: &Sweep) -> CliResult<String> {
    let mut out = format!("{},covering_log,m_truncated,K_truncation,g3_prob,m_combined,error\n", sweep.param);
    for value in sweep.values()? {
        let inputs = with_param(base, &sweep.param, value)?;
        match bound_report(&inputs) {
            Ok(r) => writeln!(
                out,
                "{value},{},{},{},{},{},",
                r.covering_log,
                r.m_truncated,
                r.k_truncation,
                r.g3_prob,
                r.m_combined.map(|m| m.to_string()).unwrap_or_default()
            ),
            Err(e) => writeln!(out, "{value},,,,,,\"{}\"", e.to_string().replace('"', "'")),
        }
        .unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kolmo_core::neural::Architecture;

    fn base() -> BoundInputs {
        BoundInputs {
            arch: Architecture::uniform(2, 4, 1).unwrap(),
            param_bound_r: 2.0,
            clip_d: 1.0,
            u: 0.0,
            v: 1.0,
            eps: 0.1,
            rho: 0.1,
            lambda: 2.0,
            c1: 2000.0,
            c2: 0.1,
            b_dk: None,
            m4d: Some(10.0),
            truncation_k: None,
        }
    }

    #[test]
    fn parse_and_space() {
        let s: Sweep = "eps=0.05:0.2:4".parse().unwrap();
        assert_eq!(s.param, "eps");
        let v = s.values().unwrap();
        assert_eq!(v.len(), 4);
        assert!((v[1] - 0.1).abs() < 1e-12 && (v[3] - 0.2).abs() < 1e-12);
        let g = Sweep { geometric: true, ..s.clone() };
        let v = g.values().unwrap();
        assert!((v[1] / v[0] - v[2] / v[1]).abs() < 1e-12);
        for bad in ["eps", "eps=1:2", "=1:2:3", "eps=a:2:3", "eps=1:2:0"] {
            assert_eq!(bad.parse::<Sweep>().unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn sweep_rows_track_monotone_sample_size() {
        let s: Sweep = "eps=0.05:0.4:5".parse().unwrap();
        let csv = sweep_csv(&base(), &s).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 5);
        let m: Vec<f64> = rows.iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
        assert!(m.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn unknown_or_structural_params_are_rejected() {
        assert!(with_param(&base(), "arch", 1.0).is_err());
        assert!(with_param(&base(), "nope", 1.0).is_err());
        assert_eq!(with_param(&base(), "truncation_K", 3.0).unwrap().truncation_k, Some(3.0));
    }

    #[test]
    fn invalid_values_become_error_rows() {
        let s: Sweep = "eps=0.5:1.5:2".parse().unwrap();
        let csv = sweep_csv(&base(), &s).unwrap();
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("1.5,,,,,,\""));
    }
}
