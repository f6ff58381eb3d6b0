//! Declarative scenario files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{DriveChain, LoopTuning};
use crate::dynamics::BaseParameters;
use crate::error::{Error, Result};
use crate::estimators::{DidimOptions, IdimOptions, OeOptions};
use crate::signal::DecimationSpec;
use crate::sim::{sample_times, transient_samples, SimConfig, DEFAULT_FM};
use crate::trajectory::{QuinticReference, ReferenceTrajectory};

/// Natural frequencies (rad/s) of the synthetic robot's loops. With these the
/// nominal closed loop tracks the built-in trajectory to about 1.5% in position.
pub const TWIN_OMEGA_N: [f64; 2] = [100.0, 1000.0];

/// One experiment: the synthetic robot, how it is measured, and which
/// estimators run on the measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Also the bundle directory name.
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Noise seed. Required whenever noise is injected.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub robot: RobotSection,
    #[serde(default)]
    pub tuning: TuningSection,
    /// Reference motion; absent means the built-in 20 s exciting trajectory.
    #[serde(default)]
    pub trajectory: Option<QuinticReference>,
    /// Integrator settings for every simulation; `fm` comes from `measurement`.
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub idim: Option<IdimOptions>,
    #[serde(default)]
    pub didim: Option<DidimSection>,
    #[serde(default)]
    pub oe: Option<OeSection>,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloSpec>,
    /// Parent directory of the bundle; the CLI flag takes precedence.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    /// Ground-truth parameters of the synthetic robot.
    pub nominal_chi: BaseParameters,
    pub chain: DriveChain,
}

impl Default for RobotSection {
    fn default() -> Self {
        Self { nominal_chi: BaseParameters::NOMINAL, chain: DriveChain::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSection {
    /// Desired natural frequency of the actual loops (rad/s).
    pub omega_n: [f64; 2],
    pub zeta: [f64; 2],
    /// Simulated bandwidth as a fraction of the actual one (DIDIM only).
    pub simulated_scale: f64,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self { omega_n: TWIN_OMEGA_N, zeta: [1.0, 1.0], simulated_scale: 1.0 }
    }
}

impl TuningSection {
    pub fn actual(&self) -> LoopTuning {
        LoopTuning { omega_n: self.omega_n, zeta: self.zeta }
    }

    pub fn simulated(&self) -> LoopTuning {
        self.actual().with_bandwidth_scale(self.simulated_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementSection {
    /// Acquisition rate of the controller (Hz).
    pub fm: f64,
    /// Keep one sample in `downsample`, without anti-alias filtering, before
    /// any estimator sees the data.
    pub downsample: usize,
}

impl Default for MeasurementSection {
    fn default() -> Self {
        Self { fm: DEFAULT_FM, downsample: 1 }
    }
}

impl MeasurementSection {
    pub fn estimation_rate(&self) -> f64 {
        self.fm / self.downsample as f64
    }
}

/// What the torque noise fraction is relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReference {
    /// Noise norm over torque norm after the decimation given by `decimation_nd`
    /// (per sample when absent).
    #[default]
    Observation,
    /// Each joint's peak nominal torque.
    Peak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub torque_fraction: f64,
    pub reference: NoiseReference,
    /// Decimation the observation-relative level refers to; `"none"` means per sample.
    #[serde(with = "crate::none_or")]
    pub decimation_nd: Option<usize>,
    /// Position noise std (rad).
    pub position_sigma: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            torque_fraction: 0.02,
            reference: NoiseReference::Observation,
            decimation_nd: Some(20),
            position_sigma: 0.0,
        }
    }
}

impl NoiseSection {
    pub fn is_noisy(&self) -> bool {
        self.torque_fraction > 0.0 || self.position_sigma > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DidimSection {
    /// Start from the IDIM estimate of the same scenario instead of `init`.
    #[serde(default)]
    pub start_from_idim: bool,
    /// `sim` is ignored here: the scenario's integrator settings apply.
    #[serde(flatten)]
    pub options: DidimOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OeSection {
    /// Start from the nominal parameters times this factor instead of `init`.
    #[serde(default)]
    pub init_scale: Option<f64>,
    #[serde(flatten)]
    pub options: OeOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub runs: usize,
    /// First seed; runs use consecutive seeds. Defaults to the scenario seed.
    #[serde(default)]
    pub first_seed: Option<u64>,
}

impl ScenarioConfig {
    /// A scenario with every section at its default and no estimator selected.
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: String::new(),
            seed: None,
            robot: RobotSection::default(),
            tuning: TuningSection::default(),
            trajectory: None,
            sim: SimConfig::default(),
            measurement: MeasurementSection::default(),
            noise: NoiseSection::default(),
            idim: None,
            didim: None,
            oe: None,
            monte_carlo: None,
            output_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_with_seed(text, None)
    }

    /// Parses, replaces the seed when `seed` is given, then validates.
    pub fn from_toml_str_with_seed(text: &str, seed: Option<u64>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        if seed.is_some() {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_file_with_seed(path, None)
    }

    pub fn from_file_with_seed(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str_with_seed(&text, seed).map_err(|e| match e {
            Error::ConfigInvalid(m) => Error::ConfigInvalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn trajectory(&self) -> QuinticReference {
        self.trajectory.clone().unwrap_or_else(QuinticReference::exciting_default)
    }

    /// Checks that the sections agree with each other.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad(format!("name {:?} must be non-empty and use only [A-Za-z0-9-_.]", self.name));
        }
        let wrap = |e: Error| Error::ConfigInvalid(e.to_string());
        self.tuning.actual().validate().map_err(wrap)?;
        if !(self.tuning.simulated_scale > 0.0) {
            return bad("tuning.simulated_scale must be > 0".into());
        }
        self.robot.chain.validate().map_err(wrap)?;
        if !self.robot.nominal_chi.is_finite() {
            return bad("robot.nominal_chi must be finite".into());
        }
        self.sim.validate().map_err(wrap)?;
        let m = &self.measurement;
        if !(m.fm > 0.0 && m.fm.is_finite()) || m.downsample == 0 {
            return bad("measurement.fm must be > 0 and measurement.downsample >= 1".into());
        }
        let n = &self.noise;
        if !(n.torque_fraction >= 0.0) || !(n.position_sigma >= 0.0) {
            return bad("noise levels must be >= 0".into());
        }
        if n.is_noisy() && self.seed.is_none() {
            return bad("a seed is required when noise is injected".into());
        }
        if let Some(nd) = n.decimation_nd {
            DecimationSpec::new(nd).validate(m.fm).map_err(wrap)?;
        }
        if self.idim.is_none() && self.didim.is_none() && self.oe.is_none() {
            return bad("select at least one estimator (idim, didim or oe)".into());
        }
        let fe = m.estimation_rate();
        let n_est = sample_times(self.trajectory().duration(), fe).len();
        if let Some(o) = &self.idim {
            if let Some(f) = &o.filter {
                f.validate(fe).map_err(wrap)?;
            }
            if let Some(d) = &o.decimation {
                d.validate(fe).map_err(wrap)?;
            }
        }
        if let Some(d) = &self.didim {
            d.options.validate().map_err(wrap)?;
            if let Some(dec) = &d.options.decimation {
                dec.validate(fe).map_err(wrap)?;
            }
            if d.start_from_idim && self.idim.is_none() {
                return bad("didim.start_from_idim needs an [idim] section".into());
            }
            if transient_samples(fe, self.tuning.simulated().min_omega_n()) >= n_est {
                return bad("the closed-loop transient covers the whole record".into());
            }
        }
        if let Some(o) = &self.oe {
            if o.init_scale.is_some_and(|s| !(s > 0.0)) {
                return bad("oe.init_scale must be > 0".into());
            }
        }
        if let Some(mc) = &self.monte_carlo {
            if mc.runs < 2 {
                return bad("monte_carlo.runs must be >= 2".into());
            }
            if self.idim.is_none() && self.didim.is_none() {
                return bad("monte_carlo needs idim or didim".into());
            }
            if mc.first_seed.or(self.seed).is_none() {
                return bad("monte_carlo needs a seed".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioConfig {
        ScenarioConfig { seed: Some(1), idim: Some(IdimOptions::default()), ..ScenarioConfig::new("t") }
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = minimal();
        cfg.didim = Some(DidimSection { start_from_idim: true, options: DidimOptions::default() });
        cfg.oe = Some(OeSection { init_scale: Some(0.8), options: OeOptions::default() });
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn sparse_file_takes_defaults() {
        let cfg = ScenarioConfig::from_toml_str("name = \"x\"\nseed = 3\n[didim]\nmax_iterations = 9\n").unwrap();
        assert_eq!(cfg.tuning.omega_n, TWIN_OMEGA_N);
        assert_eq!(cfg.robot.nominal_chi, BaseParameters::NOMINAL);
        let d = cfg.didim.unwrap();
        assert_eq!(d.options.max_iterations, 9);
        assert!(!d.start_from_idim);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let cases = [
            "name = \"x\"\n[idim]\n",
            "name = \"x\"\nseed = 1\n",
            "name = \"a b\"\nseed = 1\n[idim]\n",
            "name = \"x\"\nseed = 1\nunknown = 2\n[idim]\n",
            "name = \"x\"\nseed = 1\n[idim]\nfilter = { cutoff_hz = 150.0 }\n",
            "name = \"x\"\nseed = 1\n[measurement]\ndownsample = 0\n[idim]\n",
            "name = \"x\"\nseed = 1\n[didim]\nstart_from_idim = true\n",
            "name = \"x\"\nseed = 1\n[idim]\n[monte_carlo]\nruns = 1\n",
        ];
        for text in cases {
            let err = ScenarioConfig::from_toml_str(text).unwrap_err();
            assert_eq!(err.kind(), "ConfigInvalid", "{text}");
        }
    }

    #[test]
    fn optional_stages_can_be_switched_off() {
        let text = "name = \"x\"\nseed = 1\n[idim]\nfilter = \"none\"\ndecimation = \"none\"\n[didim]\ndecimation = \"none\"\n";
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        let idim = cfg.idim.unwrap();
        assert_eq!((idim.filter, idim.decimation), (None, None));
        assert_eq!(cfg.didim.unwrap().options.decimation, None);
        assert_eq!(ScenarioConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap(), cfg);
        let bad = "name = \"x\"\nseed = 1\n[idim]\nfilter = \"off\"\n";
        assert!(ScenarioConfig::from_toml_str(bad).is_err());
    }

    #[test]
    fn noise_free_scenario_needs_no_seed() {
        let text = "name = \"x\"\n[noise]\ntorque_fraction = 0.0\n[didim]\n";
        assert!(ScenarioConfig::from_toml_str(text).is_ok());
    }
}
