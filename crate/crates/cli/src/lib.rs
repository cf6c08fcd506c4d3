//! Configuration, orchestration and artifacts for the blow-up verification suites.

pub mod config;
pub mod plot;
pub mod report;
pub mod suites;

use std::path::{Path, PathBuf};
use std::time::Instant;

use config::{ExperimentConfig, Suite};
use plot::{emit_plot_spec, PlotKind};
use report::{Manifest, Sink};
use suites::{run_suite, Run};

/// Plot kind implied by an artifact's file name, if any.
pub fn plot_kind_for(path: &Path) -> Option<PlotKind> {
    let name = path.file_name()?.to_str()?;
    if name == "decay.csv" {
        Some(PlotKind::DecayLoglog)
    } else if name.starts_with("profile_overlay_") {
        Some(PlotKind::ProfileOverlay)
    } else if name.starts_with("trajectory_") {
        Some(PlotKind::TrajectoryModes)
    } else if name.starts_with("probes_") {
        Some(PlotKind::WindingMap)
    } else {
        None
    }
}

/// Runs `suite` on `jobs` threads, writing CSVs, plot specs and the manifest
/// under `out`.
pub fn execute(suite: Suite, cfg: &ExperimentConfig, out: &Path, jobs: usize) -> anyhow::Result<(Manifest, PathBuf)> {
    let t0 = Instant::now();
    let hash = cfg.hash();
    let sink = Sink::new(out.to_path_buf(), hash.clone())?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let mut run = Run::new(cfg, sink);
    let criteria = pool.install(|| run_suite(suite, &mut run))?;
    let mut artifacts = run.artifacts.clone();
    for a in &run.artifacts {
        if let Some(kind) = plot_kind_for(a) {
            artifacts.push(emit_plot_spec(a, kind)?);
        }
    }
    let manifest = Manifest {
        suite: suite.name().into(),
        config_hash: hash,
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        jobs,
        wall_time_s: t0.elapsed().as_secs_f64(),
        pass: criteria.iter().all(|c| c.pass),
        criteria,
        artifacts: artifacts
            .iter()
            .map(|a| a.strip_prefix(out).unwrap_or(a).display().to_string())
            .collect(),
        details: run.details,
    };
    let path = manifest.write(out)?;
    Ok((manifest, path))
}
