//! Scenario harness: declarative configs, deterministic runs against the
//! synthetic robot, artifact bundles and comparison tables.

mod bundle;
mod compare;
mod config;
mod run;

pub use bundle::{
    bundle_files, run_scenario, sha256_hex, summarize, verify_bundle, write_bundle, Manifest, ManifestEntry,
    MethodSummary, Summary, MANIFEST_FILE,
};
pub use compare::{compare_reports, Comparison, ComparisonCell, ComparisonRow};
pub use config::{
    DidimSection, MeasurementSection, MonteCarloSpec, NoiseReference, NoiseSection, OeSection, RobotSection,
    ScenarioConfig, TuningSection, TWIN_OMEGA_N,
};
pub use run::{
    evaluate_scenario, monte_carlo, sweep, ErrorRecord, MethodResult, MonteCarloSummary, ScenarioOutcome, SweepPoint,
    TorquePlot, TrackingRow,
};
