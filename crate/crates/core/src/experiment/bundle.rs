//! On-disk artifact bundles with a content-hash manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::compare::compare_reports;
use super::config::ScenarioConfig;
use super::run::{evaluate_scenario, ScenarioOutcome};
use crate::dynamics::{BaseParameters, NUM_PARAMS};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the bundle directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// Per-method headline numbers written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub status: String,
    pub iterations: Option<usize>,
    pub rel_error: Option<f64>,
    /// `100 (chi_hat - truth) / truth` per parameter.
    pub pct_error_vs_truth: Option<[f64; NUM_PARAMS]>,
    pub error: Option<super::run::ErrorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub torque_sigma: [f64; 2],
    pub position_sigma: f64,
    pub methods: Vec<MethodSummary>,
}

fn pct_error(chi: &BaseParameters, truth: &BaseParameters) -> [f64; NUM_PARAMS] {
    let (c, t) = (chi.to_array(), truth.to_array());
    std::array::from_fn(|i| 100.0 * (c[i] - t[i]) / t[i])
}

pub fn summarize(out: &ScenarioOutcome) -> Summary {
    let truth = out.config.robot.nominal_chi;
    let mut methods = Vec::new();
    let failed = |name: &str, e: &super::run::ErrorRecord| MethodSummary {
        method: name.into(),
        status: "error".into(),
        iterations: None,
        rel_error: None,
        pct_error_vs_truth: None,
        error: Some(e.clone()),
    };
    match &out.idim {
        Some(Ok(r)) => methods.push(MethodSummary {
            method: r.method.clone(),
            status: "ok".into(),
            iterations: None,
            rel_error: Some(r.rel_error),
            pct_error_vs_truth: Some(pct_error(&r.chi_hat, &truth)),
            error: None,
        }),
        Some(Err(e)) => methods.push(failed("IDIM", e)),
        None => {}
    }
    let iterative = |report: &crate::estimators::EstimationReport,
                     status: crate::estimators::Termination,
                     it: usize| MethodSummary {
        method: report.method.clone(),
        status: serde_json::to_value(status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
        iterations: Some(it),
        rel_error: Some(report.rel_error),
        pct_error_vs_truth: Some(pct_error(&report.chi_hat, &truth)),
        error: None,
    };
    match &out.didim {
        Some(Ok(o)) => methods.push(iterative(&o.report, o.status, o.iterations)),
        Some(Err(e)) => methods.push(failed("DIDIM", e)),
        None => {}
    }
    match &out.oe {
        Some(Ok(o)) => methods.push(iterative(&o.report, o.status, o.iterations)),
        Some(Err(e)) => methods.push(failed("OE", e)),
        None => {}
    }
    Summary {
        scenario: out.config.name.clone(),
        torque_sigma: out.noise.torque_sigma,
        position_sigma: out.noise.position_sigma,
        methods,
    }
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Error::Io(e.to_string()))
}

fn tracking_csv(out: &ScenarioOutcome) -> String {
    let mut s = String::from(
        "k,pos_vs_actual,vel_vs_actual,acc_vs_actual,pos_vs_reference,vel_vs_reference,acc_vs_reference\n",
    );
    for r in &out.tracking {
        let [a, b, c] = r.vs_actual;
        let [d, e, f] = r.vs_reference;
        writeln!(s, "{},{a:.10e},{b:.10e},{c:.10e},{d:.10e},{e:.10e},{f:.10e}", r.k).unwrap();
    }
    s
}

fn torque_csv(out: &ScenarioOutcome) -> String {
    let p = &out.torque_plot;
    let mut s = String::from("time,tau1,tau2,idim1,idim2,didim1,didim2\n");
    let pair = |v: &Option<Vec<[f64; 2]>>, k: usize| {
        v.as_ref().map_or_else(|| ",".to_string(), |v| format!("{:.10e},{:.10e}", v[k][0], v[k][1]))
    };
    for k in 0..p.times.len() {
        let [t1, t2] = p.measured[k];
        writeln!(s, "{:.10e},{t1:.10e},{t2:.10e},{},{}", p.times[k], pair(&p.idim, k), pair(&p.didim, k)).unwrap();
    }
    s
}

fn monte_carlo_csv(out: &ScenarioOutcome) -> String {
    let mut s = String::from("method,parameter,truth,mean,empirical_std,mean_reported_sigma,ratio,runs,failures\n");
    for m in &out.monte_carlo {
        let ratio = m.ratio();
        for i in 0..NUM_PARAMS {
            writeln!(
                s,
                "{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.6},{},{}",
                m.method,
                BaseParameters::NAMES[i],
                m.truth[i],
                m.mean[i],
                m.empirical_std[i],
                m.mean_reported_sigma[i],
                ratio[i],
                m.runs,
                m.failures
            )
            .unwrap();
        }
    }
    s
}

/// Files of the bundle, in a fixed order, as `(relative path, contents)`.
pub fn bundle_files(out: &ScenarioOutcome) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut add = |name: &str, text: String| files.push((name.to_string(), text.into_bytes()));
    add("config.toml", out.config.to_toml_string()?);
    add("actual.csv", out.actual.to_csv_string()?);
    add("measured.csv", out.measured.to_csv_string()?);
    if let Some(Ok(r)) = &out.idim {
        add("idim_report.json", json(r)?);
        add("idim_report.csv", r.to_csv());
    }
    if let Some(Ok(o)) = &out.didim {
        add("didim_report.json", json(o)?);
        add("didim_report.csv", o.report.to_csv());
        add("didim_history.csv", o.history.to_csv());
    }
    if let Some(Ok(o)) = &out.oe {
        add("oe_report.json", json(o)?);
        add("oe_report.csv", o.report.to_csv());
        add("oe_history.csv", o.history.to_csv());
    }
    let reports = out.reports();
    if !reports.is_empty() {
        add("comparison.csv", compare_reports(&reports)?.to_csv());
    }
    add("plot_torque.csv", torque_csv(out));
    if !out.tracking.is_empty() {
        add("plot_tracking.csv", tracking_csv(out));
    }
    if !out.monte_carlo.is_empty() {
        add("monte_carlo.csv", monte_carlo_csv(out));
    }
    let errors: Vec<_> = out
        .errors()
        .into_iter()
        .map(|(m, e)| serde_json::json!({ "method": m, "kind": e.kind, "message": e.message }))
        .collect();
    if !errors.is_empty() {
        add("errors.json", json(&errors)?);
    }
    add("summary.json", json(&summarize(out))?);
    Ok(files)
}

/// Writes the bundle into `dir` (created if needed) with its manifest.
/// Files listed by a previous manifest in `dir` are removed first, so an
/// optional file from an earlier run cannot linger next to the new one.
pub fn write_bundle(out: &ScenarioOutcome, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    if let Ok(text) = std::fs::read_to_string(dir.join(MANIFEST_FILE)) {
        if let Ok(old) = serde_json::from_str::<Manifest>(&text) {
            for f in old.files.iter().filter(|f| !f.path.contains(['/', '\\'])) {
                let _ = std::fs::remove_file(dir.join(&f.path));
            }
        }
    }
    let mut entries = Vec::new();
    for (name, data) in bundle_files(out)? {
        std::fs::write(dir.join(&name), &data)?;
        entries.push(ManifestEntry { path: name, bytes: data.len() as u64, sha256: sha256_hex(&data) });
    }
    let manifest = Manifest { scenario: out.config.name.clone(), files: entries };
    std::fs::write(dir.join(MANIFEST_FILE), json(&manifest)?)?;
    Ok(manifest)
}

/// Re-hashes every file listed in the bundle's manifest.
pub fn verify_bundle(dir: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("bad manifest: {e}")))?;
    let mut bad = Vec::new();
    for f in &manifest.files {
        match std::fs::read(dir.join(&f.path)) {
            Ok(data) if sha256_hex(&data) == f.sha256 && data.len() as u64 == f.bytes => {}
            Ok(_) => bad.push(format!("{} (content changed)", f.path)),
            Err(e) => bad.push(format!("{} ({e})", f.path)),
        }
    }
    if bad.is_empty() {
        Ok(manifest)
    } else {
        Err(Error::InvalidInput(format!("bundle verification failed: {}", bad.join(", "))))
    }
}

/// Evaluates the scenario and writes its bundle to `<out_root>/<name>`.
/// `out_root` falls back to the config's `output_dir`, then `runs/`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    out_root: Option<&Path>,
    workers: usize,
) -> Result<(ScenarioOutcome, PathBuf)> {
    let outcome = evaluate_scenario(cfg, workers)?;
    let root =
        out_root.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let dir = root.join(&cfg.name);
    write_bundle(&outcome, &dir)?;
    Ok((outcome, dir))
}
