//! Result files. Floats in CSV carry 17 significant digits so they read back
//! bit-exactly; absent values are empty fields.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{ChainLengthRow, MetricPoint};
use crate::restore::LambdaSet;
use crate::solver::SolutionSet;

pub const METRIC_HEADER: [&str; 8] = [
    "tau",
    "s1",
    "s2",
    "s3",
    "s4",
    "s5",
    "lambda_best",
    "converged_count",
];

pub const CHAIN_LENGTH_HEADER: [&str; 6] = [
    "N",
    "lambda_opt",
    "tau_0",
    "s1_at_tau0",
    "s2_at_tau0",
    "eps_tilde",
];

pub const AMPLITUDE_HEADER: [&str; 3] = ["tau", "min_abs_amplitude", "max_abs_amplitude"];

pub const SOLUTION_EXTREMA_HEADER: [&str; 6] = [
    "start_index",
    "min_abs_amplitude",
    "max_abs_amplitude",
    "closure_abs_max",
    "residual_norm",
    "exact_offdiag_max",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metric_csv(path: &Path, points: &[MetricPoint]) -> Result<()> {
    write_rows(
        path,
        &METRIC_HEADER,
        points.iter().map(|p| {
            vec![
                fmt_f64(p.tau),
                fmt_opt(p.s1),
                fmt_opt(p.s2),
                fmt_opt(p.s3),
                fmt_opt(p.s4),
                fmt_f64(p.s5),
                fmt_f64(p.lambda_best),
                p.converged_count.to_string(),
            ]
        }),
    )
}

/// Amplitude extrema of the solution attaining `s1` at each grid point.
pub fn write_amplitude_csv(path: &Path, points: &[MetricPoint]) -> Result<()> {
    write_rows(
        path,
        &AMPLITUDE_HEADER,
        points.iter().map(|p| {
            let (lo, hi) = p.s1_amplitudes.unzip();
            vec![fmt_f64(p.tau), fmt_opt(lo), fmt_opt(hi)]
        }),
    )
}

pub fn write_chain_length_csv(path: &Path, rows: &[ChainLengthRow]) -> Result<()> {
    write_rows(
        path,
        &CHAIN_LENGTH_HEADER,
        rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                fmt_f64(r.lambda_opt),
                fmt_opt(r.tau_0),
                fmt_opt(r.s1_at_tau0),
                fmt_opt(r.s2_at_tau0),
                fmt_opt(r.eps_tilde),
            ]
        }),
    )
}

pub fn write_solution_extrema_csv(path: &Path, set: &SolutionSet) -> Result<()> {
    write_rows(
        path,
        &SOLUTION_EXTREMA_HEADER,
        set.solutions.iter().map(|s| {
            let (lo, hi) = s.free_amplitude_extrema();
            vec![
                s.start_index.to_string(),
                fmt_f64(lo),
                fmt_f64(hi),
                fmt_f64(s.closure_amplitude_max()),
                fmt_f64(s.residual_norm),
                fmt_f64(s.exact_offdiag_max),
            ]
        }),
    )
}

fn lambda_pairs(lam: &LambdaSet) -> Value {
    lam.lam.iter().map(|z| json!([z.re, z.im])).collect()
}

pub fn solution_json(config: &ExperimentConfig, set: &SolutionSet) -> Value {
    let solutions: Vec<Value> = set
        .solutions
        .iter()
        .map(|s| {
            json!({
                "angles": s.angles,
                "residual_norm": s.residual_norm,
                "exact_residual_norm": s.exact_residual_norm,
                "lambda_model": lambda_pairs(&s.lam_model),
                "lambda_exact": lambda_pairs(&s.lam_exact),
                "converged": s.converged,
            })
        })
        .collect();
    json!({
        "config": config,
        "tau_reg": set.tau_reg,
        "solutions": solutions,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

/// Provenance written next to the results of each command.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub n_total: usize,
    pub k_omega: usize,
    pub models: Vec<String>,
    pub tau_reg: Option<f64>,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

impl RunRecord {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            seed: config.solver.seed,
            n_total: config.chain.n_total,
            k_omega: config.solver.k_omega,
            models: config.models().iter().map(|m| m.label()).collect(),
            tau_reg: None,
            files: Vec::new(),
            config: config.clone(),
        }
    }
}

/// Numeric table read back from a result CSV; empty fields are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                if field.is_empty() {
                    Ok(None)
                } else {
                    field.parse::<f64>().map(Some).map_err(|_| {
                        Error::Plot(format!(
                            "{}: row {}: `{field}` is not a number",
                            path.display(),
                            line + 1
                        ))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(tau: f64, s1: Option<f64>) -> MetricPoint {
        MetricPoint {
            tau,
            s1,
            s2: s1.map(|_| 0.0),
            s3: s1,
            s4: s1.map(|_| 0.0),
            s5: 0.25,
            lambda_best: if s1.is_some() { 0.25 } else { 0.0 },
            converged_count: usize::from(s1.is_some()),
            s1_amplitudes: s1.map(|_| (0.1, 1.9)),
        }
    }

    #[test]
    fn metric_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let v = 0.1 + 0.2;
        write_metric_csv(&path, &[point(0.0, None), point(0.1, Some(v))]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("tau,s1,s2,s3,s4,s5,lambda_best,converged_count\n"));
        assert!(text.contains("\n0.0000000000000000e0,,,,,2.5000000000000000e-1,"));
        let t = read_table(&path).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.column("s1").unwrap(), vec![None, Some(v)]);
        assert_eq!(
            t.column("tau").unwrap()[1].unwrap().to_bits(),
            0.1f64.to_bits()
        );
    }

    #[test]
    fn chain_length_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.csv");
        let row = ChainLengthRow {
            n: 6,
            lambda_opt: 0.5,
            tau_0: Some(12.5),
            s1_at_tau0: Some(1e-3),
            s2_at_tau0: Some(2e-3),
            eps_tilde: None,
        };
        write_chain_length_csv(&path, &[row]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("N,lambda_opt,tau_0,s1_at_tau0,s2_at_tau0,eps_tilde")
        );
        assert!(lines
            .next()
            .unwrap()
            .starts_with("6,5.0000000000000000e-1,"));
    }

    #[test]
    fn seventeen_digits() {
        for v in [std::f64::consts::PI, 1e-300, -2.0 / 3.0, 123456.789] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
            assert_eq!(
                s.split('e').next().unwrap().replace(['-', '.'], "").len(),
                17
            );
        }
    }

    #[test]
    fn bad_cell_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x,y\n1,oops\n").unwrap();
        assert!(matches!(read_table(&path), Err(Error::Plot(_))));
    }
}
