//! Inverse dynamic identification from measured positions and torques.

use serde::{Deserialize, Serialize};

use super::ls::{build_observation, EstimationReport};
use super::Solver;
use crate::control::DriveChain;
use crate::dynamics::SmoothSign;
use crate::error::{Error, Result};
use crate::signal::{estimate_kinematics, DecimationSpec, FilterSpec};
use crate::sim::SimRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdimOptions {
    /// Position lowpass before differentiation; `None` differentiates raw samples.
    #[serde(with = "crate::none_or")]
    pub filter: Option<FilterSpec>,
    #[serde(with = "crate::none_or")]
    pub decimation: Option<DecimationSpec>,
    pub solver: Solver,
    /// Samples dropped at each end, where one-sided differences are used.
    pub edge_trim: usize,
    pub ssign: SmoothSign,
}

impl Default for IdimOptions {
    fn default() -> Self {
        Self {
            filter: Some(FilterSpec::new(20.0)),
            decimation: Some(DecimationSpec::new(20)),
            solver: Solver::Wls,
            edge_trim: 2,
            ssign: SmoothSign::default(),
        }
    }
}

impl IdimOptions {
    /// Raw differentiation, no decimation.
    pub fn raw(solver: Solver) -> Self {
        Self { filter: None, decimation: None, solver, ..Self::default() }
    }
}

/// Torque seen by the identification: the control signal times the a priori drive gains.
pub fn measured_torque(record: &SimRecord, chain: &DriveChain) -> Vec<[f64; 2]> {
    record.v_tau.iter().map(|v| [v[0] * chain.g_apriori[0], v[1] * chain.g_apriori[1]]).collect()
}

/// Estimates velocities and accelerations from the measured positions, stacks
/// the regressor against the measured torque and solves by least squares.
pub fn idim_identify(measured: &SimRecord, chain: &DriveChain, opts: &IdimOptions) -> Result<EstimationReport> {
    measured.validate()?;
    let kin = estimate_kinematics(&measured.q, measured.fm, opts.filter.as_ref())?;
    let tau = measured_torque(measured, chain);
    let n = measured.len();
    let e = opts.edge_trim;
    if n <= 2 * e + 1 {
        return Err(Error::SeriesTooShort { needed: 2 * e + 2, got: n });
    }
    let r = e..n - e;
    let sys = build_observation(
        &kin.q[r.clone()],
        &kin.qd[r.clone()],
        &kin.qdd[r.clone()],
        &tau[r],
        measured.fm,
        opts.decimation.as_ref(),
        &opts.ssign,
    )?;
    let mut report = opts.solver.solve(&sys)?;
    report.method = format!("IDIM-{}", report.method);
    Ok(report)
}
