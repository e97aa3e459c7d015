//! Result rows, run records and their CSV/JSON serializations.

use crate::error::Result;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

pub const HARNESS_COLUMNS: [&str; 13] = [
    "experiment",
    "model",
    "d",
    "alpha",
    "nu",
    "t",
    "r",
    "replicas",
    "estimate",
    "stderr",
    "renormalized",
    "limit_constant",
    "z_score",
];

pub const ORACLE_COLUMNS: [&str; 7] = ["t", "r", "alpha", "mc_mean", "mc_stderr", "oracle", "z_score"];

pub const SPECTRAL_COLUMNS: [&str; 4] = ["index", "lambda", "wavevector", "parity"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub model: String,
    pub d: usize,
    pub alpha: f64,
    pub nu: String,
    pub t: f64,
    pub r: f64,
    pub replicas: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub renormalized: f64,
    pub limit_constant: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub norm: String,
    pub t: f64,
    pub r: f64,
    pub alpha: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub oracle: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralRow {
    pub index: usize,
    pub lambda: f64,
    pub wavevector: String,
    pub parity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "schema", content = "rows", rename_all = "lowercase")]
pub enum Table {
    Harness(Vec<Row>),
    Oracle(Vec<OracleRow>),
    Spectral(Vec<SpectralRow>),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config_hash: String,
    /// FNV-1a of the CSV bytes, a content version of the rows.
    pub content_version: String,
    pub package_version: String,
    pub wall_time_s: f64,
    pub workers: usize,
    pub config: String,
    pub table: Table,
    pub assertions: Vec<Assertion>,
    pub extra: serde_json::Value,
}

fn field(out: &mut String, v: f64) {
    let _ = write!(out, "{v}");
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self {
            Table::Harness(rows) => {
                s.push_str(&HARNESS_COLUMNS.join(","));
                s.push('\n');
                for r in rows {
                    let _ = write!(s, "{},{},{},", r.experiment, r.model, r.d);
                    field(&mut s, r.alpha);
                    let _ = write!(s, ",{},", r.nu);
                    for (k, v) in [r.t, r.r].iter().enumerate() {
                        if k > 0 {
                            s.push(',');
                        }
                        field(&mut s, *v);
                    }
                    let _ = write!(s, ",{}", r.replicas);
                    for v in [r.estimate, r.stderr, r.renormalized, r.limit_constant, r.z_score] {
                        s.push(',');
                        field(&mut s, v);
                    }
                    s.push('\n');
                }
            }
            Table::Oracle(rows) => {
                s.push_str(&ORACLE_COLUMNS.join(","));
                s.push('\n');
                for r in rows {
                    let vals = [r.t, r.r, r.alpha, r.mc_mean, r.mc_stderr, r.oracle, r.z_score];
                    let line: Vec<String> = vals.iter().map(|v| format!("{v}")).collect();
                    s.push_str(&line.join(","));
                    s.push('\n');
                }
            }
            Table::Spectral(rows) => {
                s.push_str(&SPECTRAL_COLUMNS.join(","));
                s.push('\n');
                for r in rows {
                    let _ = writeln!(s, "{},{},{},{}", r.index, r.lambda, r.wavevector, r.parity);
                }
            }
            Table::None => {}
        }
        s
    }
}

impl RunRecord {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn csv(&self) -> String {
        self.table.to_csv()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv())?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn rows(&self) -> &[Row] {
        match &self.table {
            Table::Harness(r) => r,
            _ => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_order() {
        let row = Row {
            experiment: "limits".into(),
            model: "torus1".into(),
            d: 1,
            alpha: 1.0,
            nu: "stationary".into(),
            t: 400.0,
            r: 0.0,
            replicas: 100,
            estimate: 6.9e-6,
            stderr: 1e-7,
            renormalized: 2.76e-3,
            limit_constant: 1.0 / 360.0,
            z_score: -0.5,
        };
        let csv = Table::Harness(vec![row]).to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "experiment,model,d,alpha,nu,t,r,replicas,estimate,stderr,renormalized,limit_constant,z_score"
        );
        assert_eq!(
            lines.next().unwrap(),
            "limits,torus1,1,1,stationary,400,0,100,0.0000069,0.0000001,0.00276,0.002777777777777778,-0.5"
        );
        let o = Table::Oracle(vec![]).to_csv();
        assert_eq!(o.trim(), "t,r,alpha,mc_mean,mc_stderr,oracle,z_score");
    }
}
