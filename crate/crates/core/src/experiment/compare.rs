//! Side-by-side tables of estimation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BaseParameters, NUM_PARAMS};
use crate::error::{Error, Result};
use crate::estimators::EstimationReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub value: f64,
    pub two_sigma: f64,
    pub pct_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub parameter: String,
    pub cells: Vec<ComparisonCell>,
}

/// One column group per report, one row per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<String>,
    pub rows: Vec<ComparisonRow>,
    pub rel_error: Vec<f64>,
}

/// Aligns the parameter estimates of several reports.
pub fn compare_reports(reports: &[&EstimationReport]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(Error::ConfigInvalid("nothing to compare: no reports given".into()));
    }
    let rows = (0..NUM_PARAMS)
        .map(|i| ComparisonRow {
            parameter: BaseParameters::NAMES[i].to_string(),
            cells: reports
                .iter()
                .map(|r| ComparisonCell {
                    value: r.chi_hat.to_array()[i],
                    two_sigma: 2.0 * r.sigma[i],
                    pct_sigma: r.rel_sigma_pct[i],
                })
                .collect(),
        })
        .collect();
    Ok(Comparison {
        methods: reports.iter().map(|r| r.method.clone()).collect(),
        rows,
        rel_error: reports.iter().map(|r| r.rel_error).collect(),
    })
}

fn pct(p: Option<f64>, digits: usize) -> String {
    p.map_or_else(|| "n/a".to_string(), |p| format!("{p:.digits$}"))
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter");
        for m in &self.methods {
            write!(s, ",{m},{m}_two_sigma,{m}_pct_sigma").unwrap();
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.parameter);
            for c in &row.cells {
                write!(s, ",{:.10e},{:.10e},{}", c.value, c.two_sigma, pct(c.pct_sigma, 6)).unwrap();
            }
            s.push('\n');
        }
        s.push_str("rel_error");
        for e in &self.rel_error {
            write!(s, ",{e:.10e},,").unwrap();
        }
        s.push('\n');
        s
    }

    /// Fixed-width console table.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<10}", "parameter");
        for m in &self.methods {
            write!(s, " | {m:>10} {:>10} {:>7}", "2σ", "%σ").unwrap();
        }
        s.push('\n');
        for row in &self.rows {
            write!(s, "{:<10}", row.parameter).unwrap();
            for c in &row.cells {
                write!(s, " | {:>10.4} {:>10.4} {:>7}", c.value, c.two_sigma, pct(c.pct_sigma, 1)).unwrap();
            }
            s.push('\n');
        }
        write!(s, "{:<10}", "rel_error").unwrap();
        for e in &self.rel_error {
            write!(s, " | {e:>10.4} {:>10} {:>7}", "", "").unwrap();
        }
        s.push('\n');
        s
    }
}
