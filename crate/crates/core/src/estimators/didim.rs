//! DIDIM: torque output-error identification where the Gauss-Newton jacobian
//! is replaced by the inverse-model regressor evaluated on the simulated motion.

use serde::{Deserialize, Serialize};

use super::ls::{build_observation, EstimationReport, ObservationSystem};
use super::{IterationHistory, IterationRecord, Solver, StopRule, Termination};
use crate::control::{update_simulated_gains, DriveChain, GainSet, LoopTuning, PdGains};
use crate::dynamics::{BaseParameters, SmoothSign};
use crate::error::{Error, Result};
use crate::signal::DecimationSpec;
use crate::sim::{integrate_closed_loop, sample_times, transient_samples, SimConfig, SimRecord};
use crate::trajectory::ReferenceTrajectory;

/// Starting point of the iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "chi")]
pub enum InitMode {
    /// Unit rotor inertias, everything else zero.
    RegularRotor,
    /// Unit link inertias, everything else zero.
    RegularLink,
    Explicit(BaseParameters),
}

impl InitMode {
    pub fn parameters(&self) -> BaseParameters {
        match self {
            InitMode::RegularRotor => BaseParameters::regular_rotor_init(),
            InitMode::RegularLink => BaseParameters::regular_link_init(),
            InitMode::Explicit(c) => *c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DidimOptions {
    pub stop: StopRule,
    pub max_iterations: usize,
    pub init: InitMode,
    pub solver: Solver,
    /// Parallel decimation of the observation system; `"none"` in config files.
    #[serde(with = "crate::none_or")]
    pub decimation: Option<DecimationSpec>,
    /// Integrator settings; `fm` is taken from the measurement.
    pub sim: SimConfig,
    pub ssign: SmoothSign,
    /// Largest per-joint relative torque error accepted at the returned iterate.
    pub max_rel_residual: f64,
    /// Residual norm (relative to `|Y|`) treated as zero by the residual test.
    pub residual_floor: f64,
}

impl Default for DidimOptions {
    fn default() -> Self {
        Self {
            stop: StopRule::default(),
            max_iterations: 15,
            init: InitMode::RegularRotor,
            solver: Solver::Ols,
            decimation: Some(DecimationSpec::new(20)),
            sim: SimConfig::default(),
            ssign: SmoothSign::default(),
            max_rel_residual: 0.1,
            residual_floor: 1e-6,
        }
    }
}

impl DidimOptions {
    pub fn validate(&self) -> Result<()> {
        self.stop.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        if !(self.max_rel_residual > 0.0) {
            return Err(Error::InvalidInput("max_rel_residual must be > 0".into()));
        }
        self.sim.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DidimOutcome {
    pub report: EstimationReport,
    pub history: IterationHistory,
    pub status: Termination,
    /// Number of least-squares updates performed.
    pub iterations: usize,
}

/// Simulates the loop with `chi` and the gains it implies, and stacks the
/// regressor of the simulated motion against the measured torque, both trimmed
/// of the closed-loop transient.
#[allow(clippy::too_many_arguments)]
pub fn simulated_observation<R: ReferenceTrajectory + ?Sized>(
    chi: &BaseParameters,
    y_meas: &[[f64; 2]],
    fm: f64,
    traj: &R,
    tuning: &LoopTuning,
    chain: &DriveChain,
    opts: &DidimOptions,
) -> Result<(ObservationSystem, PdGains, SimRecord)> {
    let gains = update_simulated_gains(tuning, chi, chain)?;
    let cfg = SimConfig { fm, ..opts.sim };
    let rec = integrate_closed_loop(chi, &gains, chain, GainSet::Apriori, traj, &cfg, &opts.ssign)?;
    if rec.len() != y_meas.len() {
        return Err(Error::DimensionMismatch(format!(
            "measurement has {} samples, the trajectory sampled at {fm} Hz has {}",
            y_meas.len(),
            rec.len()
        )));
    }
    let drop = transient_samples(fm, tuning.min_omega_n());
    if drop >= rec.len() {
        return Err(Error::RecordTooShort { transient_s: 5.0 / tuning.min_omega_n(), duration_s: traj.duration() });
    }
    let qd = rec.qd.as_ref().expect("simulated record has velocities");
    let qdd = rec.qdd.as_ref().expect("simulated record has accelerations");
    let sys = build_observation(
        &rec.q[drop..],
        &qd[drop..],
        &qdd[drop..],
        &y_meas[drop..],
        fm,
        opts.decimation.as_ref(),
        &opts.ssign,
    )?;
    Ok((sys, gains, rec))
}

fn joint_errors(sys: &ObservationSystem, chi: &BaseParameters) -> [f64; 2] {
    let pred = &sys.w * chi.to_vector();
    std::array::from_fn(|j| {
        let b = &sys.joint_blocks[j];
        let y = sys.y.rows(b.start, b.len());
        let e = (y - pred.rows(b.start, b.len())).norm();
        let n = y.norm();
        if n > 0.0 {
            e / n
        } else {
            e
        }
    })
}

/// Runs DIDIM on torques `y_meas` sampled at `fm` along `traj`.
///
/// Each iteration simulates the loop with the current estimate (velocity gains
/// retuned to its inertia), regresses the measured torque on the simulated
/// motion and takes the least-squares solution as the next estimate. The
/// returned report describes the final estimate; the history holds the
/// per-joint torque error of every simulated iterate, including the last.
pub fn didim_identify<R: ReferenceTrajectory + ?Sized>(
    y_meas: &[[f64; 2]],
    fm: f64,
    traj: &R,
    tuning: &LoopTuning,
    chain: &DriveChain,
    opts: &DidimOptions,
) -> Result<DidimOutcome> {
    opts.validate()?;
    tuning.validate()?;
    chain.validate()?;
    let expected = sample_times(traj.duration(), fm).len();
    if y_meas.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "expected {expected} torque samples at {fm} Hz, got {}",
            y_meas.len()
        )));
    }

    let mut chi = opts.init.parameters();
    let mut history = IterationHistory::default();
    let mut prev_rho: Option<f64> = None;
    let mut status = Termination::MaxIterations;
    let mut last_report = None;
    let mut updates = 0;

    for k in 0..opts.max_iterations {
        let (sys, gains, _) = simulated_observation(&chi, y_meas, fm, traj, tuning, chain, opts)?;
        let report = opts.solver.solve(&sys)?;
        let next = report.chi_hat;
        let rho = report.rel_error;
        updates += 1;
        history.iterations.push(IterationRecord {
            k,
            chi,
            joint_rel_error: joint_errors(&sys, &chi),
            kv: gains.kv,
            delta_chi_norm: Some((next.to_vector() - chi.to_vector()).norm()),
        });
        log::debug!("didim k={k} rho={rho:.3e} errors={:?}", history.last().map(|h| h.joint_rel_error));

        let settled = prev_rho.is_some_and(|p| opts.stop.residual_settled(p, rho, opts.residual_floor))
            && opts.stop.parameters_settled(&chi, &next);
        prev_rho = Some(rho);
        chi = next;
        last_report = Some(report);
        if settled {
            status = Termination::Converged;
            break;
        }
    }

    // Evaluate the final estimate so the history ends with its torque error.
    let (sys, gains, _) = simulated_observation(&chi, y_meas, fm, traj, tuning, chain, opts)?;
    history.iterations.push(IterationRecord {
        k: updates,
        chi,
        joint_rel_error: joint_errors(&sys, &chi),
        kv: gains.kv,
        delta_chi_norm: None,
    });

    let mut report = last_report.expect("at least one iteration");
    if status == Termination::MaxIterations {
        // Hand back the iterate whose simulation fitted the torque best.
        let best = history.iterations.iter().min_by(|a, b| total(a).total_cmp(&total(b))).expect("non-empty history");
        if best.chi != report.chi_hat {
            let (sys, _, _) = simulated_observation(&best.chi, y_meas, fm, traj, tuning, chain, opts)?;
            let mut r = opts.solver.solve(&sys)?;
            r.chi_hat = best.chi;
            r.rel_sigma_pct = super::rel_sigma_pct(&r.chi_hat, &r.sigma);
            let resid = &sys.y - &sys.w * best.chi.to_vector();
            r.rel_error = resid.norm() / sys.y.norm();
            report = r;
        }
    }
    let final_err = history.last().map(|h| h.joint_rel_error[0].max(h.joint_rel_error[1])).unwrap_or(f64::INFINITY);
    if status == Termination::Converged && !(final_err <= opts.max_rel_residual) {
        status = Termination::PoorFit;
    }
    report.method = format!("DIDIM-{}", report.method);
    Ok(DidimOutcome { report, history, status, iterations: updates })
}

/// Compares, column by column, the regressor of the simulated motion with a
/// central finite-difference jacobian of the simulated torque `W(chi) chi`
/// at `chi`. Returns `|J_fd,i - W_i| / |J_fd,i|` per parameter.
///
/// The simulated gains follow each perturbed `chi`, as in the identification loop.
#[allow(clippy::too_many_arguments)]
pub fn jacobian_discrepancy<R: ReferenceTrajectory + ?Sized>(
    chi: &BaseParameters,
    y_meas: &[[f64; 2]],
    fm: f64,
    traj: &R,
    tuning: &LoopTuning,
    chain: &DriveChain,
    opts: &DidimOptions,
    rel_step: f64,
    abs_step: f64,
) -> Result<[f64; crate::dynamics::NUM_PARAMS]> {
    if !(rel_step > 0.0) || !(abs_step > 0.0) {
        return Err(Error::InvalidInput("finite-difference steps must be > 0".into()));
    }
    let (sys, _, _) = simulated_observation(chi, y_meas, fm, traj, tuning, chain, opts)?;
    let simulated_torque = |c: &BaseParameters| -> Result<nalgebra::DVector<f64>> {
        let (s, _, _) = simulated_observation(c, y_meas, fm, traj, tuning, chain, opts)?;
        Ok(&s.w * c.to_vector())
    };
    let base = chi.to_array();
    let mut out = [0.0; crate::dynamics::NUM_PARAMS];
    for (i, d) in out.iter_mut().enumerate() {
        let h = (rel_step * base[i].abs()).max(abs_step);
        let (mut up, mut dn) = (base, base);
        up[i] += h;
        dn[i] -= h;
        let fd = (simulated_torque(&BaseParameters::from_array(up))?
            - simulated_torque(&BaseParameters::from_array(dn))?)
            / (2.0 * h);
        *d = (&fd - sys.w.column(i)).norm() / fd.norm();
    }
    Ok(out)
}

fn total(r: &IterationRecord) -> f64 {
    r.joint_rel_error[0].hypot(r.joint_rel_error[1])
}
