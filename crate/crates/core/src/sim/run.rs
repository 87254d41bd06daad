use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::aggregate::{aggregate, emit_csv, MetricRow};
use super::config::ExperimentConfig;
use super::trial::{run_trial, run_trial_traced, Scenario, TrialOutcome, TrialTrace};
use crate::cfo::MlWorkspace;
use crate::error::{Error, Result};
use crate::timing::TimingMetrics;

/// Runs `trials` trials in parallel; the output is in trial order.
pub fn run_point(scn: &Scenario, root_seed: u64, trials: usize) -> Vec<TrialOutcome> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(scn, root_seed, t))
        .collect()
}

/// Metric table of one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryTable {
    pub m: usize,
    pub n: usize,
    pub rows: Vec<MetricRow>,
}

impl GeometryTable {
    pub fn file_name(&self) -> String {
        format!("metrics_M{}_N{}.csv", self.m, self.n)
    }
}

/// Every geometry, every sweep value. Trial `t` uses the same random
/// draws at every sweep point.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<GeometryTable>> {
    cfg.validate()?;
    let mut pool: Vec<Arc<MlWorkspace>> = Vec::new();
    let mut tables = Vec::new();
    for (m, n) in cfg.geometry_list() {
        let geo = cfg.with_geometry(m, n);
        let mut rows = Vec::new();
        for value in geo.sweep_values() {
            let point = geo.at_point(value);
            let scn = Scenario::with_pool(&point, &mut pool)?;
            let outcomes = run_point(&scn, point.seed, point.trials);
            for o in &outcomes {
                if let Err(f) = o {
                    log::warn!("{f}");
                }
            }
            let row = aggregate(value, &scn.params, &outcomes);
            log::info!(
                "M={m} N={n} point {value}: TO mean {:.3} var {:.3}, CFO MSE coarse {:.3e} fine {:.3e}, {} ok / {} failed",
                row.to_err_mean,
                row.to_err_var,
                row.cfo_mse_coarse,
                row.cfo_mse_fine,
                row.trials,
                row.failures
            );
            rows.push(row);
        }
        tables.push(GeometryTable { m, n, rows });
    }
    Ok(tables)
}

/// Writes the metric tables and a manifest into `out`. Returns the
/// written paths.
pub fn write_experiment(cfg: &ExperimentConfig, tables: &[GeometryTable], out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for t in tables {
        let path = out.join(t.file_name());
        emit_csv(&t.rows, &path)?;
        written.push(path);
    }
    written.push(write_manifest(cfg, out, &written)?);
    Ok(written)
}

/// `manifest.txt` with the resolved config and the produced files.
pub fn write_manifest(cfg: &ExperimentConfig, out: &Path, files: &[PathBuf]) -> Result<PathBuf> {
    let path = out.join("manifest.txt");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let io = |e| Error::io(&path, e);
    writeln!(f, "# otfs-sim {}", env!("CARGO_PKG_VERSION")).map_err(io)?;
    writeln!(f, "# outputs:").map_err(io)?;
    for file in files {
        let name = file.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        writeln!(f, "#   {name}").map_err(io)?;
    }
    writeln!(f, "# resolved config:").map_err(io)?;
    f.write_all(cfg.to_toml_string().as_bytes()).map_err(io)?;
    Ok(path)
}

/// One traced trial at the base point of `cfg`.
pub fn snapshot(cfg: &ExperimentConfig, trial: u64) -> Result<(Scenario, TrialTrace)> {
    let scn = Scenario::from_config(cfg)?;
    let trace = run_trial_traced(&scn, cfg.seed, trial)
        .map_err(|f| Error::InvalidArgument(f.to_string()))?;
    Ok((scn, trace))
}

/// Writes `p_d.csv`, `p_t.csv`, `cfo_cost.csv`, `channel.csv`, a summary
/// and the manifest for a snapshot.
pub fn write_snapshot(cfg: &ExperimentConfig, scn: &Scenario, trace: &TrialTrace, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let p_d = out.join("p_d.csv");
    TimingMetrics::write_trace(&trace.metrics.p_d, 0, &p_d)?;
    let p_t = out.join("p_t.csv");
    TimingMetrics::write_trace(&trace.metrics.p_t, trace.metrics.p_t_first_slot, &p_t)?;
    let cost = out.join("cfo_cost.csv");
    trace.cfo.write_trace(&cost)?;

    // the synchronized block only
    let start = (trace.origin as i64 + trace.result.theta_true).max(0) as usize;
    let end = (start + scn.params.block_len()).min(trace.channel.len());
    let taps: Vec<Vec<_>> = (0..trace.channel.taps())
        .map(|l| trace.channel.tap(l)[start..end].to_vec())
        .collect();
    let channel = out.join("channel.csv");
    crate::channel::ChannelRealization::from_taps(taps)?.write_csv(&channel)?;

    let summary = out.join("summary.txt");
    let text = format!(
        "theta_true = {}\ntheta_hat = {}\ntheta_d_hat = {}\ntheta_t_hat = {}\npilot_row = {}\neps_true = {}\neps_coarse = {}\neps_fine = {}\nfine_on_boundary = {}\n",
        trace.result.theta_true,
        trace.result.theta_hat,
        trace.to_estimate.theta_d_hat,
        trace.to_estimate.theta_t_hat,
        trace.to_estimate.pilot_row,
        trace.result.eps_true,
        trace.result.eps_coarse,
        trace.result.eps_fine,
        trace.cfo.on_boundary,
    );
    std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))?;
    let mut files = vec![p_d, p_t, cost, channel, summary];
    files.push(write_manifest(cfg, out, &files)?);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::{ChannelKind, DopplerKind, SweepAxis};

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            m: 32,
            n: 8,
            pilot_len: 4,
            channel: ChannelKind::SingleTap,
            doppler: DopplerKind::Static,
            nu_max_t: 0.0,
            trials: 6,
            sweep: SweepAxis::Snr,
            snr_list: vec![10.0, 30.0],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn order_independent_and_deterministic() {
        let scn = Scenario::from_config(&cfg()).unwrap();
        let par = run_point(&scn, 4, 6);
        let seq: Vec<_> = (0..6).map(|t| run_trial(&scn, 4, t)).collect();
        let strip = |v: &[TrialOutcome]| v.iter().map(|o| o.as_ref().unwrap().0).collect::<Vec<_>>();
        assert_eq!(strip(&par), strip(&seq));
    }

    #[test]
    fn geometry_files() {
        let c = ExperimentConfig {
            geometries: vec![(32, 8), (16, 16)],
            ..cfg()
        };
        let tables = run_experiment(&c).unwrap();
        assert_eq!(tables.len(), 2);
        assert!(tables.iter().all(|t| t.rows.len() == 2));
        let dir = tempfile::tempdir().unwrap();
        let files = write_experiment(&c, &tables, dir.path()).unwrap();
        let names: Vec<_> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["metrics_M32_N8.csv", "metrics_M16_N16.csv", "manifest.txt"]);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(manifest.contains("trials = 6"));
    }

    #[test]
    fn snapshot_files() {
        let c = cfg();
        let (scn, trace) = snapshot(&c, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_snapshot(&c, &scn, &trace, dir.path()).unwrap();
        assert_eq!(files.len(), 6);
        let p_t = std::fs::read_to_string(dir.path().join("p_t.csv")).unwrap();
        assert_eq!(p_t.lines().count(), 1 + 9);
        assert!(p_t.lines().nth(1).unwrap().starts_with("-4,"));
    }
}
