//! Identification methods: IDIM least squares, DIDIM and a position
//! output-error baseline, plus the shared least-squares machinery.

mod didim;
mod idim;
mod ls;
mod oe;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::{BaseParameters, NUM_PARAMS};

pub use didim::{didim_identify, jacobian_discrepancy, simulated_observation, DidimOptions, DidimOutcome, InitMode};
pub use idim::{idim_identify, measured_torque, IdimOptions};
pub use ls::{
    build_observation, condition_number, joint_weights, least_squares, ols_solve, rel_sigma_pct, wls_solve,
    EstimationReport, LsSolution, ObservationSystem, CONDITION_CAP, CONDITION_WARN,
};
pub use oe::{oe_position_identify, OeOptions, OeOutcome};

/// Least-squares variant used to solve an observation system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Ols,
    Wls,
}

impl Solver {
    pub fn solve(self, sys: &ObservationSystem) -> crate::error::Result<EstimationReport> {
        match self {
            Solver::Ols => ols_solve(sys),
            Solver::Wls => wls_solve(sys),
        }
    }
}

/// How an iterative identification run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Both stopping tests held.
    Converged,
    /// The iteration budget ran out; the best iterate is returned.
    MaxIterations,
    /// The stopping tests held but the simulated output still misses the
    /// measurement by more than the accepted residual.
    PoorFit,
}

impl Termination {
    pub fn is_success(self) -> bool {
        self == Termination::Converged
    }
}

/// One iteration of an iterative identification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Parameters simulated at this iteration.
    pub chi: BaseParameters,
    /// `|Y^j - W^j chi^k| / |Y^j|` per joint, using the simulation with `chi^k`.
    pub joint_rel_error: [f64; 2],
    /// Simulated velocity gains.
    pub kv: [f64; 2],
    /// `|chi^{k+1} - chi^k|`, absent for the final evaluation.
    pub delta_chi_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationHistory {
    pub iterations: Vec<IterationRecord>,
}

impl IterationHistory {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k");
        for n in BaseParameters::NAMES {
            write!(s, ",{n}").unwrap();
        }
        s.push_str(",rel_err1,rel_err2,kv1,kv2,delta_chi_norm\n");
        for it in &self.iterations {
            write!(s, "{}", it.k).unwrap();
            for v in it.chi.to_array() {
                write!(s, ",{v:.10e}").unwrap();
            }
            let [e1, e2] = it.joint_rel_error;
            let [k1, k2] = it.kv;
            let d = it.delta_chi_norm.map_or(String::new(), |d| format!("{d:.10e}"));
            writeln!(s, ",{e1:.10e},{e2:.10e},{k1:.10e},{k2:.10e},{d}").unwrap();
        }
        s
    }
}

/// Stopping rule shared by the iterative methods: the residual norm has
/// settled and no parameter moved by more than `tol2` relative to its value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub tol1: f64,
    pub tol2: f64,
}

/// Parameters smaller than this are judged by absolute change.
pub const SMALL_PARAM: f64 = 1e-6;

impl Default for StopRule {
    fn default() -> Self {
        Self { tol1: 1e-2, tol2: 1e-2 }
    }
}

impl StopRule {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.tol1 > 0.0 && self.tol2 > 0.0 {
            Ok(())
        } else {
            Err(crate::error::Error::InvalidInput(format!("stopping tolerances must be > 0: {self:?}")))
        }
    }

    /// Relative change of the residual norm between consecutive iterations.
    /// `floor` is the residual level treated as exactly zero (noise-free data).
    pub fn residual_settled(&self, prev: f64, next: f64, floor: f64) -> bool {
        if prev <= floor && next <= floor {
            return true;
        }
        (next - prev).abs() <= self.tol1 * prev
    }

    pub fn parameters_settled(&self, prev: &BaseParameters, next: &BaseParameters) -> bool {
        max_relative_change(prev, next, SMALL_PARAM) <= self.tol2
            && prev
                .to_array()
                .iter()
                .zip(next.to_array())
                .filter(|(p, _)| p.abs() < SMALL_PARAM)
                .all(|(p, n)| (n - p).abs() < SMALL_PARAM)
    }
}

/// Largest `|next_i - prev_i| / |prev_i|` over parameters with `|prev_i| >= small`.
pub fn max_relative_change(prev: &BaseParameters, next: &BaseParameters, small: f64) -> f64 {
    let (p, n) = (prev.to_array(), next.to_array());
    (0..NUM_PARAMS).filter(|&i| p[i].abs() >= small).map(|i| ((n[i] - p[i]) / p[i]).abs()).fold(0.0, f64::max)
}
