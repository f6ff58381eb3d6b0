//! Position output-error baseline: Gauss-Newton on the simulated joint
//! positions with a finite-difference jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ls::{least_squares, rel_sigma_pct, EstimationReport};
use super::{IterationHistory, IterationRecord, StopRule, Termination};
use crate::control::{DriveChain, GainSet, LoopTuning, PdGains};
use crate::dynamics::{BaseParameters, ParamVector, SmoothSign, NUM_PARAMS};
use crate::error::{Error, Result};
use crate::sim::{integrate_closed_loop, sample_times, transient_samples, SimConfig};
use crate::trajectory::ReferenceTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OeOptions {
    pub stop: StopRule,
    pub max_iterations: usize,
    pub init: BaseParameters,
    /// Relative finite-difference step per parameter.
    pub rel_step: f64,
    /// Smallest absolute finite-difference step.
    pub abs_step: f64,
    pub sim: SimConfig,
    pub ssign: SmoothSign,
    /// Residual norm (relative to `|Y|`) treated as zero by the residual test.
    pub residual_floor: f64,
}

impl Default for OeOptions {
    fn default() -> Self {
        Self {
            stop: StopRule::default(),
            max_iterations: 15,
            init: BaseParameters::regular_rotor_init(),
            rel_step: 1e-4,
            abs_step: 1e-6,
            sim: SimConfig::default(),
            ssign: SmoothSign::default(),
            residual_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OeOutcome {
    pub report: EstimationReport,
    pub history: IterationHistory,
    pub status: Termination,
    pub iterations: usize,
    /// Closed-loop simulations performed.
    pub simulations: usize,
}

struct Simulator<'a, R: ?Sized> {
    traj: &'a R,
    gains: PdGains,
    chain: DriveChain,
    cfg: SimConfig,
    ssign: SmoothSign,
    drop: usize,
    runs: usize,
}

impl<R: ReferenceTrajectory + ?Sized> Simulator<'_, R> {
    /// Stacked simulated positions, joint 1 block then joint 2 block, after the transient.
    fn positions(&mut self, chi: &BaseParameters) -> Result<DVector<f64>> {
        self.runs += 1;
        let rec =
            integrate_closed_loop(chi, &self.gains, &self.chain, GainSet::Apriori, self.traj, &self.cfg, &self.ssign)?;
        Ok(stack(&rec.q[self.drop..]))
    }
}

fn stack(q: &[[f64; 2]]) -> DVector<f64> {
    let n = q.len();
    DVector::from_fn(2 * n, |i, _| q[i % n][i / n])
}

fn joint_errors(y: &DVector<f64>, ys: &DVector<f64>) -> [f64; 2] {
    let n = y.len() / 2;
    std::array::from_fn(|j| {
        let yj = y.rows(j * n, n);
        let e = (yj - ys.rows(j * n, n)).norm();
        let d = yj.norm();
        if d > 0.0 {
            e / d
        } else {
            e
        }
    })
}

/// Fits the parameters so that the simulated closed loop reproduces the
/// measured positions. The controller gains are the fixed ones running on the
/// robot, so the simulated motion depends on the parameters through the
/// dynamics only.
#[allow(clippy::too_many_arguments)]
pub fn oe_position_identify<R: ReferenceTrajectory + ?Sized>(
    q_meas: &[[f64; 2]],
    fm: f64,
    traj: &R,
    tuning: &LoopTuning,
    gains: &PdGains,
    chain: &DriveChain,
    opts: &OeOptions,
) -> Result<OeOutcome> {
    opts.stop.validate()?;
    if opts.max_iterations == 0 || !(opts.rel_step > 0.0) || !(opts.abs_step > 0.0) {
        return Err(Error::InvalidInput("invalid output-error options".into()));
    }
    let expected = sample_times(traj.duration(), fm).len();
    if q_meas.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "expected {expected} position samples at {fm} Hz, got {}",
            q_meas.len()
        )));
    }
    let drop = transient_samples(fm, tuning.min_omega_n());
    if drop >= q_meas.len() {
        return Err(Error::RecordTooShort { transient_s: 5.0 / tuning.min_omega_n(), duration_s: traj.duration() });
    }
    let y = stack(&q_meas[drop..]);
    let ynorm = y.norm();
    let mut sim = Simulator {
        traj,
        gains: *gains,
        chain: *chain,
        cfg: SimConfig { fm, ..opts.sim },
        ssign: opts.ssign,
        drop,
        runs: 0,
    };

    let mut chi = opts.init;
    let mut ys = sim.positions(&chi)?;
    let mut cost = (&y - &ys).norm();
    let mut history = IterationHistory::default();
    let mut status = Termination::MaxIterations;
    let mut last_jac = None;
    let mut updates = 0;

    for k in 0..opts.max_iterations {
        let mut jac = DMatrix::zeros(y.len(), NUM_PARAMS);
        let base = chi.to_array();
        for i in 0..NUM_PARAMS {
            let h = (opts.rel_step * base[i].abs()).max(opts.abs_step);
            let (mut up, mut dn) = (base, base);
            up[i] += h;
            dn[i] -= h;
            let col = (sim.positions(&BaseParameters::from_array(up))?
                - sim.positions(&BaseParameters::from_array(dn))?)
                / (2.0 * h);
            jac.set_column(i, &col);
        }
        let step = least_squares(&(&y - &ys), &jac)?.theta;

        // Full step, then one halving; a second increase means divergence.
        let mut accepted = None;
        for scale in [1.0, 0.5] {
            let cand = BaseParameters::from_vector(
                &(chi.to_vector() + ParamVector::from_column_slice(step.as_slice()) * scale),
            );
            let trial = sim.positions(&cand).and_then(|ys2| {
                let c = (&y - &ys2).norm();
                if c.is_finite() {
                    Ok((cand, ys2, c))
                } else {
                    Err(Error::IntegrationFailure { t: 0.0, reason: "non-finite output".into() })
                }
            });
            match trial {
                Ok((cand, ys2, c)) if c <= cost => {
                    accepted = Some((cand, ys2, c));
                    break;
                }
                Ok(_) | Err(Error::SingularInertia { .. }) | Err(Error::IntegrationFailure { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        history.iterations.push(IterationRecord {
            k,
            chi,
            joint_rel_error: joint_errors(&y, &ys),
            kv: gains.kv,
            delta_chi_norm: accepted.as_ref().map(|(c, _, _)| (c.to_vector() - chi.to_vector()).norm()),
        });
        let Some((next, ys_next, next_cost)) = accepted else {
            return Err(Error::NonConvergence {
                iterations: k + 1,
                reason: "output error increased after a full and a halved Gauss-Newton step".into(),
            });
        };
        updates += 1;
        let settled = opts.stop.residual_settled(cost, next_cost, opts.residual_floor * ynorm)
            && opts.stop.parameters_settled(&chi, &next);
        chi = next;
        ys = ys_next;
        cost = next_cost;
        last_jac = Some(jac);
        if settled {
            status = Termination::Converged;
            break;
        }
    }
    history.iterations.push(IterationRecord {
        k: updates,
        chi,
        joint_rel_error: joint_errors(&y, &ys),
        kv: gains.kv,
        delta_chi_norm: None,
    });

    let jac = last_jac.expect("at least one accepted step");
    let resid = &y - &ys;
    let (r, b) = jac.shape();
    let sigma_rho = (resid.norm_squared() / (r - b) as f64).sqrt();
    let cond = super::condition_number(&jac);
    let jtj_inv = (jac.transpose() * &jac).try_inverse().ok_or(Error::RankDeficient { condition_number: cond })?;
    let sigma: [f64; NUM_PARAMS] = std::array::from_fn(|i| (jtj_inv[(i, i)].max(0.0)).sqrt() * sigma_rho);
    let report = EstimationReport {
        method: "OE".into(),
        chi_hat: chi,
        sigma,
        rel_sigma_pct: rel_sigma_pct(&chi, &sigma),
        sigma_rho,
        rel_error: resid.norm() / ynorm,
        condition_number: cond,
        rows: r,
        joint_sigma_rho: None,
    };
    Ok(OeOutcome { report, history, status, iterations: updates, simulations: sim.runs })
}
