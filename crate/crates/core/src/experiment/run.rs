//! Running a scenario against the synthetic robot.

use serde::{Deserialize, Serialize};

use super::config::{NoiseReference, ScenarioConfig};
use crate::control::{tune_gains, update_simulated_gains, GainSet, PdGains};
use crate::dynamics::{effective_inertia, inverse_dynamics, BaseParameters, JointState, SmoothSign, NUM_PARAMS};
use crate::error::{Error, Result};
use crate::estimators::{
    didim_identify, idim_identify, oe_position_identify, DidimOptions, DidimOutcome, EstimationReport, InitMode,
    OeOptions, OeOutcome, Termination,
};
use crate::signal::{estimate_kinematics, DecimationSpec, FilterSpec};
use crate::sim::{
    integrate_closed_loop, synthesize_measurements, transient_samples, NoiseConfig, SimConfig, SimRecord,
};
use crate::trajectory::{QuinticReference, ReferenceTrajectory};

/// An estimator failure, kept in the bundle instead of aborting the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        Self { kind: e.kind().to_string(), message: e.to_string() }
    }
}

pub type MethodResult<T> = std::result::Result<T, ErrorRecord>;

/// Relative tracking errors of one simulated iterate (position, velocity, acceleration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub k: usize,
    /// Against the filtered measured motion.
    pub vs_actual: [f64; 3],
    /// Against the reference trajectory.
    pub vs_reference: [f64; 3],
}

/// Measured and reconstructed joint torques at the estimation rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorquePlot {
    pub times: Vec<f64>,
    pub measured: Vec<[f64; 2]>,
    pub idim: Option<Vec<[f64; 2]>>,
    pub didim: Option<Vec<[f64; 2]>>,
}

/// Spread of one method's estimates over repeated noise draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub method: String,
    pub runs: usize,
    pub failures: usize,
    pub truth: [f64; NUM_PARAMS],
    pub mean: [f64; NUM_PARAMS],
    pub empirical_std: [f64; NUM_PARAMS],
    /// Average of the reported standard deviations.
    pub mean_reported_sigma: [f64; NUM_PARAMS],
}

impl MonteCarloSummary {
    /// `empirical_std / mean_reported_sigma` per parameter.
    pub fn ratio(&self) -> [f64; NUM_PARAMS] {
        std::array::from_fn(|i| self.empirical_std[i] / self.mean_reported_sigma[i])
    }
}

/// Everything a scenario produced, before it is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub config: ScenarioConfig,
    pub noise: NoiseConfig,
    /// Noise-free run of the nominal robot at the acquisition rate.
    pub actual: SimRecord,
    /// What the estimators see: noisy, possibly downsampled.
    pub measured: SimRecord,
    pub idim: Option<MethodResult<EstimationReport>>,
    pub didim: Option<MethodResult<DidimOutcome>>,
    pub oe: Option<MethodResult<OeOutcome>>,
    pub tracking: Vec<TrackingRow>,
    pub torque_plot: TorquePlot,
    pub monte_carlo: Vec<MonteCarloSummary>,
}

impl ScenarioOutcome {
    /// Successful reports in IDIM, DIDIM, OE order.
    pub fn reports(&self) -> Vec<&EstimationReport> {
        let mut v = Vec::new();
        if let Some(Ok(r)) = &self.idim {
            v.push(r);
        }
        if let Some(Ok(o)) = &self.didim {
            v.push(&o.report);
        }
        if let Some(Ok(o)) = &self.oe {
            v.push(&o.report);
        }
        v
    }

    pub fn errors(&self) -> Vec<(&'static str, &ErrorRecord)> {
        let mut v = Vec::new();
        if let Some(Err(e)) = &self.idim {
            v.push(("idim", e));
        }
        if let Some(Err(e)) = &self.didim {
            v.push(("didim", e));
        }
        if let Some(Err(e)) = &self.oe {
            v.push(("oe", e));
        }
        v
    }
}

/// Shared set-up of one scenario: the reference, the actual loop and its record.
struct Plant {
    traj: QuinticReference,
    gains: PdGains,
    actual: SimRecord,
}

fn plant(cfg: &ScenarioConfig) -> Result<Plant> {
    let traj = cfg.trajectory();
    let chain = cfg.robot.chain;
    let gains = tune_gains(&cfg.tuning.actual(), effective_inertia(&cfg.robot.nominal_chi), chain.g_actual);
    let sim = SimConfig { fm: cfg.measurement.fm, ..cfg.sim };
    let actual = integrate_closed_loop(
        &cfg.robot.nominal_chi,
        &gains,
        &chain,
        GainSet::Actual,
        &traj,
        &sim,
        &SmoothSign::default(),
    )?;
    Ok(Plant { traj, gains, actual })
}

fn noise_config(cfg: &ScenarioConfig, actual: &SimRecord, seed: u64) -> Result<NoiseConfig> {
    let n = &cfg.noise;
    match n.reference {
        NoiseReference::Peak => Ok(NoiseConfig::relative_to_peak(actual, n.torque_fraction, n.position_sigma, seed)),
        NoiseReference::Observation => NoiseConfig::relative_to_observation(
            actual,
            n.torque_fraction,
            n.decimation_nd.map(DecimationSpec::new).as_ref(),
            n.position_sigma,
            seed,
        ),
    }
}

fn measure(cfg: &ScenarioConfig, actual: &SimRecord, noise: &NoiseConfig) -> Result<SimRecord> {
    synthesize_measurements(actual, noise, &cfg.robot.chain)?.downsample(cfg.measurement.downsample)
}

struct Estimates {
    idim: Option<MethodResult<EstimationReport>>,
    didim: Option<MethodResult<DidimOutcome>>,
    oe: Option<MethodResult<OeOutcome>>,
}

fn estimate(cfg: &ScenarioConfig, plant: &Plant, measured: &SimRecord, with_oe: bool) -> Estimates {
    let chain = cfg.robot.chain;
    let fe = measured.fm;
    let sim = SimConfig { fm: fe, ..cfg.sim };
    let idim = cfg.idim.as_ref().map(|o| idim_identify(measured, &chain, o).map_err(|e| ErrorRecord::from(&e)));
    let didim = cfg.didim.as_ref().map(|d| {
        let mut opts = DidimOptions { sim, ..d.options };
        if d.start_from_idim {
            match &idim {
                Some(Ok(r)) => opts.init = InitMode::Explicit(r.chi_hat),
                _ => {
                    return Err(ErrorRecord {
                        kind: "InvalidInput".into(),
                        message: "DIDIM was asked to start from the IDIM estimate, which is unavailable".into(),
                    })
                }
            }
        }
        let y = crate::estimators::measured_torque(measured, &chain);
        didim_identify(&y, fe, &plant.traj, &cfg.tuning.simulated(), &chain, &opts).map_err(|e| ErrorRecord::from(&e))
    });
    let oe = cfg.oe.as_ref().filter(|_| with_oe).map(|o| {
        let mut opts = OeOptions { sim, ..o.options };
        if let Some(s) = o.init_scale {
            opts.init = cfg.robot.nominal_chi.scaled(s);
        }
        oe_position_identify(&measured.q, fe, &plant.traj, &cfg.tuning.actual(), &plant.gains, &chain, &opts)
            .map_err(|e| ErrorRecord::from(&e))
    });
    Estimates { idim, didim, oe }
}

/// Filter used to obtain the "actual" motion for tracking comparisons: the
/// IDIM position filter when it is valid at this rate, else none.
fn tracking_filter(cfg: &ScenarioConfig, fm: f64) -> Option<FilterSpec> {
    let spec = cfg.idim.and_then(|o| o.filter).unwrap_or_default();
    spec.validate(fm).is_ok().then_some(spec)
}

fn rel_norm(a: &[[f64; 2]], b: &[[f64; 2]], range: std::ops::Range<usize>) -> f64 {
    let (mut e, mut d) = (0.0, 0.0);
    for k in range {
        for j in 0..2 {
            e += (a[k][j] - b[k][j]).powi(2);
            d += b[k][j].powi(2);
        }
    }
    if d > 0.0 {
        (e / d).sqrt()
    } else {
        e.sqrt()
    }
}

fn tracking_rows(
    cfg: &ScenarioConfig,
    plant: &Plant,
    measured: &SimRecord,
    out: &DidimOutcome,
) -> Result<Vec<TrackingRow>> {
    let fe = measured.fm;
    let kin = estimate_kinematics(&measured.q, fe, tracking_filter(cfg, fe).as_ref())?;
    let tuning = cfg.tuning.simulated();
    let chain = cfg.robot.chain;
    let sim = SimConfig { fm: fe, ..cfg.sim };
    let n = measured.len();
    // Skip the transient and the one-sided differences at both ends.
    let range = transient_samples(fe, tuning.min_omega_n()).max(2)..n.saturating_sub(2);
    let reference: Vec<_> = measured.times.iter().map(|&t| plant.traj.eval(t)).collect();
    let rq: Vec<_> = reference.iter().map(|r| r.q).collect();
    let rqd: Vec<_> = reference.iter().map(|r| r.qd).collect();
    let rqdd: Vec<_> = reference.iter().map(|r| r.qdd).collect();
    let mut rows = Vec::with_capacity(out.history.len());
    for h in &out.history.iterations {
        let gains = update_simulated_gains(&tuning, &h.chi, &chain)?;
        let rec =
            integrate_closed_loop(&h.chi, &gains, &chain, GainSet::Apriori, &plant.traj, &sim, &SmoothSign::default())?;
        let (qd, qdd) = (rec.qd.as_ref().expect("simulated"), rec.qdd.as_ref().expect("simulated"));
        rows.push(TrackingRow {
            k: h.k,
            vs_actual: [
                rel_norm(&rec.q, &kin.q, range.clone()),
                rel_norm(qd, &kin.qd, range.clone()),
                rel_norm(qdd, &kin.qdd, range.clone()),
            ],
            vs_reference: [
                rel_norm(&rec.q, &rq, range.clone()),
                rel_norm(qd, &rqd, range.clone()),
                rel_norm(qdd, &rqdd, range.clone()),
            ],
        });
    }
    Ok(rows)
}

fn torque_plot(cfg: &ScenarioConfig, plant: &Plant, measured: &SimRecord, est: &Estimates) -> Result<TorquePlot> {
    let chain = cfg.robot.chain;
    let fe = measured.fm;
    let ssign = SmoothSign::default();
    let idim = match (&est.idim, &cfg.idim) {
        (Some(Ok(r)), Some(o)) => {
            let kin = estimate_kinematics(&measured.q, fe, o.filter.as_ref())?;
            Some(
                (0..measured.len())
                    .map(|k| inverse_dynamics(&JointState::new(kin.q[k], kin.qd[k], kin.qdd[k]), &r.chi_hat, &o.ssign))
                    .collect(),
            )
        }
        _ => None,
    };
    let didim = match &est.didim {
        Some(Ok(o)) => {
            let tuning = cfg.tuning.simulated();
            let gains = update_simulated_gains(&tuning, &o.report.chi_hat, &chain)?;
            let sim = SimConfig { fm: fe, ..cfg.sim };
            let rec =
                integrate_closed_loop(&o.report.chi_hat, &gains, &chain, GainSet::Apriori, &plant.traj, &sim, &ssign)?;
            Some(rec.tau)
        }
        _ => None,
    };
    Ok(TorquePlot {
        times: measured.times.clone(),
        measured: crate::estimators::measured_torque(measured, &chain),
        idim,
        didim,
    })
}

/// Runs `f` over `items` on up to `workers` threads, keeping input order.
pub(crate) fn parallel_map<T: Sync, U: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn summarize(
    method: &str,
    truth: &BaseParameters,
    runs: usize,
    ok: &[(BaseParameters, [f64; NUM_PARAMS])],
) -> MonteCarloSummary {
    let n = ok.len().max(1) as f64;
    let mean: [f64; NUM_PARAMS] = std::array::from_fn(|i| ok.iter().map(|(c, _)| c.to_array()[i]).sum::<f64>() / n);
    let dof = (ok.len().max(2) - 1) as f64;
    let empirical_std = std::array::from_fn(|i| {
        (ok.iter().map(|(c, _)| (c.to_array()[i] - mean[i]).powi(2)).sum::<f64>() / dof).sqrt()
    });
    let mean_reported_sigma = std::array::from_fn(|i| ok.iter().map(|(_, s)| s[i]).sum::<f64>() / n);
    MonteCarloSummary {
        method: method.to_string(),
        runs,
        failures: runs - ok.len(),
        truth: truth.to_array(),
        mean,
        empirical_std,
        mean_reported_sigma,
    }
}

/// Repeats the scenario's estimators over `spec.runs` noise seeds.
pub fn monte_carlo(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<MonteCarloSummary>> {
    cfg.validate()?;
    let spec = cfg.monte_carlo.ok_or_else(|| Error::ConfigInvalid("scenario has no [monte_carlo] section".into()))?;
    let plant = plant(cfg)?;
    let first = spec.first_seed.or(cfg.seed).expect("validated");
    let seeds: Vec<u64> = (0..spec.runs as u64).map(|i| first + i).collect();
    let results = parallel_map(&seeds, workers, |&seed| -> Result<Estimates> {
        let noise = noise_config(cfg, &plant.actual, seed)?;
        let measured = measure(cfg, &plant.actual, &noise)?;
        Ok(estimate(cfg, &plant, &measured, false))
    });
    let mut idim = Vec::new();
    let mut didim = Vec::new();
    for r in results {
        let est = r?;
        if let Some(Ok(rep)) = est.idim {
            idim.push((rep.chi_hat, rep.sigma));
        }
        if let Some(Ok(o)) = est.didim {
            if o.status == Termination::Converged {
                didim.push((o.report.chi_hat, o.report.sigma));
            }
        }
    }
    let truth = cfg.robot.nominal_chi;
    let mut out = Vec::new();
    if cfg.idim.is_some() {
        out.push(summarize("IDIM", &truth, spec.runs, &idim));
    }
    if cfg.didim.is_some() {
        out.push(summarize("DIDIM", &truth, spec.runs, &didim));
    }
    Ok(out)
}

/// Simulates, measures and identifies. Estimator failures are recorded in the
/// outcome; only an invalid configuration or a failed simulation of the
/// actual robot is an error.
pub fn evaluate_scenario(cfg: &ScenarioConfig, workers: usize) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let plant = plant(cfg)?;
    let noise = noise_config(cfg, &plant.actual, cfg.seed.unwrap_or(0))?;
    let measured = measure(cfg, &plant.actual, &noise)?;
    let est = estimate(cfg, &plant, &measured, true);
    let tracking = match &est.didim {
        Some(Ok(o)) => tracking_rows(cfg, &plant, &measured, o)?,
        _ => Vec::new(),
    };
    let torque_plot = torque_plot(cfg, &plant, &measured, &est)?;
    let monte_carlo = if cfg.monte_carlo.is_some() { monte_carlo(cfg, workers)? } else { Vec::new() };
    Ok(ScenarioOutcome {
        config: cfg.clone(),
        noise,
        actual: plant.actual,
        measured,
        idim: est.idim,
        didim: est.didim,
        oe: est.oe,
        tracking,
        torque_plot,
        monte_carlo,
    })
}

/// One point of a bandwidth/noise grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub simulated_scale: f64,
    pub torque_fraction: f64,
    pub idim_rel_error: Option<f64>,
    pub didim_status: Option<String>,
    pub didim_iterations: Option<usize>,
    pub didim_rel_error: Option<f64>,
    /// Largest per-joint torque error of the final DIDIM iterate.
    pub didim_joint_error: Option<f64>,
    /// Largest relative parameter error of DIDIM against the ground truth.
    pub didim_max_param_error: Option<f64>,
}

/// Runs the scenario's IDIM and DIDIM over every (scale, noise) pair.
pub fn sweep(cfg: &ScenarioConfig, scales: &[f64], noise_fractions: &[f64], workers: usize) -> Result<Vec<SweepPoint>> {
    let mut grid = Vec::new();
    for &s in scales {
        for &n in noise_fractions {
            let mut c = cfg.clone();
            c.tuning.simulated_scale = s;
            c.noise.torque_fraction = n;
            c.oe = None;
            c.monte_carlo = None;
            c.validate()?;
            grid.push(c);
        }
    }
    let truth = cfg.robot.nominal_chi.to_array();
    parallel_map(&grid, workers, |c| -> Result<SweepPoint> {
        let plant = plant(c)?;
        let noise = noise_config(c, &plant.actual, c.seed.unwrap_or(0))?;
        let measured = measure(c, &plant.actual, &noise)?;
        let est = estimate(c, &plant, &measured, false);
        let didim = est.didim.as_ref().and_then(|r| r.as_ref().ok());
        Ok(SweepPoint {
            simulated_scale: c.tuning.simulated_scale,
            torque_fraction: c.noise.torque_fraction,
            idim_rel_error: est.idim.as_ref().and_then(|r| r.as_ref().ok()).map(|r| r.rel_error),
            didim_status: est.didim.as_ref().map(|r| match r {
                Ok(o) => format!("{:?}", o.status),
                Err(e) => e.kind.clone(),
            }),
            didim_iterations: didim.map(|o| o.iterations),
            didim_rel_error: didim.map(|o| o.report.rel_error),
            didim_joint_error: didim
                .and_then(|o| o.history.last())
                .map(|h| h.joint_rel_error[0].max(h.joint_rel_error[1])),
            didim_max_param_error: didim.map(|o| {
                let c = o.report.chi_hat.to_array();
                (0..NUM_PARAMS).map(|i| ((c[i] - truth[i]) / truth[i]).abs()).fold(0.0, f64::max)
            }),
        })
    })
    .into_iter()
    .collect()
}
