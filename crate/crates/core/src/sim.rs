//! Closed-loop simulation of the PD-controlled arm and synthetic measurements.
//!
//! The same routine produces the "actual robot" data (actual drive gains,
//! nominal parameters) and the simulated robot used inside the identification
//! loops (a priori drive gains, current estimate).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::{drive_torque, pd_control, DriveChain, GainSet, PdGains};
use crate::dynamics::{forward_dynamics, BaseParameters, SmoothSign, DEFAULT_DET_FLOOR};
use crate::error::{Error, Result};
use crate::ode::{self, OdeError, OdeOptions};
use crate::signal::{white_noise_gain, zero_phase_lowpass, DecimationSpec};
use crate::trajectory::ReferenceTrajectory;

/// Measurement rate of the prototype controller (Hz).
pub const DEFAULT_FM: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub q: [f64; 2],
    pub qd: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Record sampling rate (Hz).
    pub fm: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest integrator step (s).
    pub h_max: f64,
    /// `None` starts on the reference, `(q_r(0), qd_r(0))`.
    pub initial_state: Option<InitialState>,
    pub det_floor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fm: DEFAULT_FM,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            h_max: 0.05,
            initial_state: None,
            det_floor: DEFAULT_DET_FLOOR,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok =
            [self.fm, self.rel_tol, self.abs_tol, self.h_max, self.det_floor].iter().all(|&x| x > 0.0 && x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("simulation settings must be positive: {self:?}")))
        }
    }
}

/// Sampled closed-loop run. Measured records carry only `q`, `tau` and `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub fm: f64,
    pub times: Vec<f64>,
    pub q: Vec<[f64; 2]>,
    pub qd: Option<Vec<[f64; 2]>>,
    pub qdd: Option<Vec<[f64; 2]>>,
    /// Joint torque (N·m).
    pub tau: Vec<[f64; 2]>,
    /// Control signal.
    pub v_tau: Vec<[f64; 2]>,
}

pub const CSV_HEADER: &str = "time,q1,q2,qd1,qd2,qdd1,qdd2,tau1,tau2,v1,v2";

impl SimRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        let optional_ok = |s: &Option<Vec<[f64; 2]>>| s.as_ref().is_none_or(|v| v.len() == n);
        if self.q.len() != n
            || self.tau.len() != n
            || self.v_tau.len() != n
            || !optional_ok(&self.qd)
            || !optional_ok(&self.qdd)
        {
            return Err(Error::DimensionMismatch("record series have different lengths".into()));
        }
        if !(self.fm > 0.0) {
            return Err(Error::InvalidInput(format!("record rate must be > 0, got {}", self.fm)));
        }
        Ok(())
    }

    /// Per-joint maximum of `|tau|`.
    pub fn peak_abs_torque(&self) -> [f64; 2] {
        self.tau.iter().fold([0.0, 0.0], |m, t| [m[0].max(t[0].abs()), m[1].max(t[1].abs())])
    }

    /// Keeps samples `[start, len)`.
    pub fn tail_from(&self, start: usize) -> SimRecord {
        let cut = |v: &Vec<[f64; 2]>| v[start..].to_vec();
        SimRecord {
            fm: self.fm,
            times: self.times[start..].to_vec(),
            q: cut(&self.q),
            qd: self.qd.as_ref().map(cut),
            qdd: self.qdd.as_ref().map(cut),
            tau: cut(&self.tau),
            v_tau: cut(&self.v_tau),
        }
    }

    /// Keeps every `factor`-th sample without anti-alias filtering.
    pub fn downsample(&self, factor: usize) -> Result<SimRecord> {
        if factor == 0 {
            return Err(Error::InvalidInput("downsampling factor must be >= 1".into()));
        }
        let pick = |v: &Vec<[f64; 2]>| v.iter().step_by(factor).copied().collect::<Vec<_>>();
        Ok(SimRecord {
            fm: self.fm / factor as f64,
            times: self.times.iter().step_by(factor).copied().collect(),
            q: pick(&self.q),
            qd: self.qd.as_ref().map(pick),
            qdd: self.qdd.as_ref().map(pick),
            tau: pick(&self.tau),
            v_tau: pick(&self.v_tau),
        })
    }

    /// Joint `j` (0-based) of a two-column series.
    pub fn column(series: &[[f64; 2]], j: usize) -> Vec<f64> {
        series.iter().map(|x| x[j]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        writeln!(w, "{CSV_HEADER}")?;
        let mut line = String::with_capacity(256);
        for k in 0..self.len() {
            line.clear();
            write!(line, "{:.16e}", self.times[k]).unwrap();
            let mut push_pair = |p: Option<[f64; 2]>| match p {
                Some([a, b]) => write!(line, ",{a:.16e},{b:.16e}").unwrap(),
                None => line.push_str(",,"),
            };
            push_pair(Some(self.q[k]));
            push_pair(self.qd.as_ref().map(|v| v[k]));
            push_pair(self.qdd.as_ref().map(|v| v[k]));
            push_pair(Some(self.tau[k]));
            push_pair(Some(self.v_tau[k]));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("ascii csv"))
    }

    /// Reads a record written by [`SimRecord::write_csv`]. Empty `qd`/`qdd`
    /// columns are read back as absent. The rate is inferred from the time grid.
    pub fn read_csv<R: Read>(r: R) -> Result<SimRecord> {
        let mut lines = BufReader::new(r).lines();
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty csv".into()))??;
        if header.trim() != CSV_HEADER {
            return Err(Error::InvalidInput(format!("unexpected csv header: {header}")));
        }
        let (mut times, mut q, mut tau, mut v) = (vec![], vec![], vec![], vec![]);
        let (mut qd, mut qdd) = (vec![], vec![]);
        let (mut has_qd, mut has_qdd) = (true, true);
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(Error::InvalidInput(format!("row {}: expected 11 fields, got {}", row + 2, f.len())));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("row {}, column {}: {e}", row + 2, i + 1)))
            };
            let opt_pair = |i: usize, present: &mut bool| -> Result<[f64; 2]> {
                if f[i].trim().is_empty() && f[i + 1].trim().is_empty() {
                    *present = false;
                    Ok([f64::NAN; 2])
                } else {
                    Ok([num(i)?, num(i + 1)?])
                }
            };
            times.push(num(0)?);
            q.push([num(1)?, num(2)?]);
            qd.push(opt_pair(3, &mut has_qd)?);
            qdd.push(opt_pair(5, &mut has_qdd)?);
            tau.push([num(7)?, num(8)?]);
            v.push([num(9)?, num(10)?]);
        }
        if times.len() < 2 {
            return Err(Error::InvalidInput("record needs at least two samples".into()));
        }
        let fm = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
        let rec = SimRecord { fm, times, q, qd: has_qd.then_some(qd), qdd: has_qdd.then_some(qdd), tau, v_tau: v };
        rec.validate()?;
        Ok(rec)
    }
}

/// Uniform sampling grid `k / fm` covering `[0, duration)`.
pub fn sample_times(duration: f64, fm: f64) -> Vec<f64> {
    let n = (duration * fm).round() as usize;
    (0..n).map(|k| k as f64 / fm).collect()
}

/// Integrates the PD-controlled arm along `traj` and samples it at `cfg.fm`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_closed_loop<R: ReferenceTrajectory + ?Sized>(
    chi: &BaseParameters,
    gains: &PdGains,
    chain: &DriveChain,
    which_gain: GainSet,
    traj: &R,
    cfg: &SimConfig,
    ssign: &SmoothSign,
) -> Result<SimRecord> {
    cfg.validate()?;
    let times = sample_times(traj.duration(), cfg.fm);
    let start = traj.eval(0.0);
    let x0 = match cfg.initial_state {
        Some(s) => [s.q[0], s.q[1], s.qd[0], s.qd[1]],
        None => [start.q[0], start.q[1], start.qd[0], start.qd[1]],
    };

    let control = |t: f64, x: &[f64; 4]| {
        let r = traj.eval(t);
        let v = pd_control(r.q, [x[0], x[1]], [x[2], x[3]], gains);
        (v, drive_torque(v, chain, which_gain))
    };
    let rhs = |t: f64, x: &[f64; 4]| -> Result<[f64; 4]> {
        let (_, tau) = control(t, x);
        let qdd = forward_dynamics([x[0], x[1]], [x[2], x[3]], tau, chi, ssign, cfg.det_floor)?;
        Ok([x[2], x[3], qdd[0], qdd[1]])
    };
    let opts = OdeOptions { rel_tol: cfg.rel_tol, abs_tol: cfg.abs_tol, h_max: cfg.h_max, ..Default::default() };
    let (states, _) = ode::integrate(rhs, 0.0, x0, &times, &opts).map_err(|e| match e {
        OdeError::Rhs(inner) => inner,
        OdeError::StepUnderflow { t, h } => {
            Error::IntegrationFailure { t, reason: format!("step size underflow (h = {h:e})") }
        }
        OdeError::TooManySteps { t } => Error::IntegrationFailure { t, reason: "step budget exhausted".into() },
        OdeError::NonFinite { t } => Error::IntegrationFailure { t, reason: "non-finite state".into() },
    })?;

    let n = times.len();
    let mut rec = SimRecord {
        fm: cfg.fm,
        times: times.clone(),
        q: Vec::with_capacity(n),
        qd: Some(Vec::with_capacity(n)),
        qdd: Some(Vec::with_capacity(n)),
        tau: Vec::with_capacity(n),
        v_tau: Vec::with_capacity(n),
    };
    for (t, x) in times.iter().zip(&states) {
        let (v, tau) = control(*t, x);
        let qdd = forward_dynamics([x[0], x[1]], [x[2], x[3]], tau, chi, ssign, cfg.det_floor)?;
        rec.q.push([x[0], x[1]]);
        rec.qd.as_mut().unwrap().push([x[2], x[3]]);
        rec.qdd.as_mut().unwrap().push(qdd);
        rec.tau.push(tau);
        rec.v_tau.push(v);
    }
    Ok(rec)
}

/// Additive zero-mean Gaussian noise on measured torque and position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-joint torque noise std (N·m).
    pub torque_sigma: [f64; 2],
    /// Position noise std (rad).
    pub position_sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self { torque_sigma: [0.0, 0.0], position_sigma: 0.0, seed: 0 }
    }

    /// Torque noise std set to `fraction` of each joint's peak torque in `nominal`.
    pub fn relative_to_peak(nominal: &SimRecord, fraction: f64, position_sigma: f64, seed: u64) -> Self {
        let peak = nominal.peak_abs_torque();
        Self { torque_sigma: peak.map(|p| p * fraction), position_sigma, seed }
    }

    /// Torque noise std set to `fraction` of each joint's RMS torque in
    /// `nominal`, so that `|noise| / |tau|` is close to `fraction` per joint.
    pub fn relative_to_rms(nominal: &SimRecord, fraction: f64, position_sigma: f64, seed: u64) -> Self {
        let n = nominal.len().max(1) as f64;
        let rms = [0, 1].map(|j| (nominal.tau.iter().map(|t| t[j] * t[j]).sum::<f64>() / n).sqrt());
        Self { torque_sigma: rms.map(|r| r * fraction), position_sigma, seed }
    }

    /// Torque noise std chosen so that, after the parallel decimation used by
    /// the identification, the noise norm is `fraction` of the torque norm per
    /// joint. Without decimation this is [`NoiseConfig::relative_to_rms`].
    pub fn relative_to_observation(
        nominal: &SimRecord,
        fraction: f64,
        decimation: Option<&DecimationSpec>,
        position_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let Some(dec) = decimation else {
            return Ok(Self::relative_to_rms(nominal, fraction, position_sigma, seed));
        };
        let spec = dec.filter_for(nominal.fm);
        let gain = white_noise_gain(&spec, nominal.fm)?;
        let mut sigma = [0.0; 2];
        for (j, s) in sigma.iter_mut().enumerate() {
            let filtered = zero_phase_lowpass(&SimRecord::column(&nominal.tau, j), nominal.fm, &spec)?;
            let ms = filtered.iter().map(|t| t * t).sum::<f64>() / filtered.len() as f64;
            *s = fraction * (ms / gain).sqrt();
        }
        Ok(Self { torque_sigma: sigma, position_sigma, seed })
    }

    pub fn validate(&self) -> Result<()> {
        if self.torque_sigma.iter().chain([&self.position_sigma]).all(|&s| s >= 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("noise std must be >= 0: {self:?}")))
        }
    }
}

/// Turns a clean actual-robot record into controller measurements: noisy `q`
/// and `tau`, `v_tau = tau / g_actual`, and no velocity or acceleration.
pub fn synthesize_measurements(record: &SimRecord, noise: &NoiseConfig, chain: &DriveChain) -> Result<SimRecord> {
    record.validate()?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = record.clone();
    out.qd = None;
    out.qdd = None;
    for k in 0..out.len() {
        let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        for j in 0..2 {
            out.q[k][j] += noise.position_sigma * z[j];
            out.tau[k][j] += noise.torque_sigma[j] * z[2 + j];
            out.v_tau[k][j] = out.tau[k][j] / chain.g_actual[j];
        }
    }
    Ok(out)
}

/// Number of leading samples inside the closed-loop transient `5 / omega_n_min`.
pub fn transient_samples(fm: f64, omega_n_min: f64) -> usize {
    (5.0 / omega_n_min * fm + 1e-9).floor() as usize
}

/// Drops the leading samples that fall within the transient window `5 / omega_n_min`.
pub fn trim_transient(record: &SimRecord, omega_n_min: f64) -> Result<SimRecord> {
    if !(omega_n_min > 0.0) {
        return Err(Error::InvalidInput(format!("omega_n_min must be > 0, got {omega_n_min}")));
    }
    let drop = transient_samples(record.fm, omega_n_min);
    if drop >= record.len() {
        return Err(Error::RecordTooShort {
            transient_s: 5.0 / omega_n_min,
            duration_s: record.len() as f64 / record.fm,
        });
    }
    Ok(record.tail_from(drop))
}
