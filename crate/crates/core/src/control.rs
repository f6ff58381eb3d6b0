//! Joint PD control law, drive-chain torque mapping and pole-placement gain tuning.

use serde::{Deserialize, Serialize};

use crate::dynamics::{effective_inertia, BaseParameters};
use crate::error::{Error, Result};

/// Desired closed-loop natural frequency (rad/s) and damping per joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopTuning {
    pub omega_n: [f64; 2],
    pub zeta: [f64; 2],
}

impl LoopTuning {
    /// Full bandwidth of the direct-drive prototype: `omega_n = (1, 10)` rad/s, critically damped.
    pub const FULL_BANDWIDTH: LoopTuning = LoopTuning { omega_n: [1.0, 10.0], zeta: [1.0, 1.0] };

    pub fn new(omega_n: [f64; 2], zeta: [f64; 2]) -> Result<Self> {
        let t = Self { omega_n, zeta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega_n.iter().chain(&self.zeta).all(|&x| x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("loop tuning must be strictly positive: {self:?}")))
        }
    }

    /// Same damping, natural frequencies multiplied by `factor`.
    pub fn with_bandwidth_scale(&self, factor: f64) -> Self {
        Self { omega_n: self.omega_n.map(|w| w * factor), zeta: self.zeta }
    }

    pub fn min_omega_n(&self) -> f64 {
        self.omega_n[0].min(self.omega_n[1])
    }
}

impl Default for LoopTuning {
    fn default() -> Self {
        Self::FULL_BANDWIDTH
    }
}

/// Proportional (1/s) and velocity gains of the PD law `v = kp kv (qr - q) - kv qd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: [f64; 2],
    pub kv: [f64; 2],
}

/// Composite drive gains (gear ratio x amplifier x torque constant) mapping
/// the control signal to joint torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveChain {
    pub g_actual: [f64; 2],
    pub g_apriori: [f64; 2],
}

impl DriveChain {
    pub fn matched(g: [f64; 2]) -> Result<Self> {
        Self::new(g, g)
    }

    pub fn new(g_actual: [f64; 2], g_apriori: [f64; 2]) -> Result<Self> {
        let c = Self { g_actual, g_apriori };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g_actual.iter().chain(&self.g_apriori).all(|&g| g > 0.0 && g.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("drive gains must be strictly positive: {self:?}")))
        }
    }

    pub fn gains(&self, which: GainSet) -> [f64; 2] {
        match which {
            GainSet::Actual => self.g_actual,
            GainSet::Apriori => self.g_apriori,
        }
    }
}

impl Default for DriveChain {
    fn default() -> Self {
        Self { g_actual: [1.0, 1.0], g_apriori: [1.0, 1.0] }
    }
}

/// Which drive-gain set converts control signal into torque.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainSet {
    /// The physical robot's gains (Fig. 6 loop).
    Actual,
    /// The a priori gains used by the simulated loop and to convert recorded control signals.
    Apriori,
}

pub fn pd_control(qr: [f64; 2], q: [f64; 2], qd: [f64; 2], gains: &PdGains) -> [f64; 2] {
    std::array::from_fn(|j| gains.kp[j] * gains.kv[j] * (qr[j] - q[j]) - gains.kv[j] * qd[j])
}

pub fn drive_torque(v: [f64; 2], chain: &DriveChain, which: GainSet) -> [f64; 2] {
    let g = chain.gains(which);
    [g[0] * v[0], g[1] * v[1]]
}

/// Gains placing both poles of each decoupled double-integrator loop
/// `J s² + g kv s + g kv kp` at the desired `(omega_n, zeta)`:
/// `kp = omega_n / (2 zeta)`, `kv = 2 zeta omega_n J / g`.
pub fn tune_gains(tuning: &LoopTuning, inertia: [f64; 2], drive_gain: [f64; 2]) -> PdGains {
    PdGains {
        kp: std::array::from_fn(|j| tuning.omega_n[j] / (2.0 * tuning.zeta[j])),
        kv: std::array::from_fn(|j| 2.0 * tuning.zeta[j] * tuning.omega_n[j] * inertia[j] / drive_gain[j]),
    }
}

/// Simulated-loop gains for the current estimate `chi_k`.
///
/// Only `kv` moves with the estimate; `kp` depends on the tuning alone.
pub fn update_simulated_gains(tuning: &LoopTuning, chi_k: &BaseParameters, chain: &DriveChain) -> Result<PdGains> {
    let j = effective_inertia(chi_k);
    for (joint, &value) in j.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveInertia { joint: joint + 1, value });
        }
    }
    Ok(tune_gains(tuning, j, chain.g_apriori))
}

/// Ratio between actual and desired closed-loop natural frequency (equal to
/// the damping ratio) when gains were tuned with a priori values.
pub fn bandwidth_ratio(j_apriori: [f64; 2], j_actual: [f64; 2], g_actual: [f64; 2], g_apriori: [f64; 2]) -> [f64; 2] {
    std::array::from_fn(|j| ((j_apriori[j] / j_actual[j]) * (g_actual[j] / g_apriori[j])).sqrt())
}
