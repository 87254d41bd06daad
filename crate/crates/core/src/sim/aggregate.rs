use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trial::TrialOutcome;
use crate::error::{Error, Result};
use crate::modem::OtfsParams;

/// Metrics of one sweep point. Variances use the population convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sweep_value: f64,
    pub to_err_mean: f64,
    pub to_err_var: f64,
    pub cfo_mse_coarse: f64,
    pub cfo_mse_fine: f64,
    /// Successful trials.
    pub trials: usize,
    pub failures: usize,
}

/// Reduces trial outcomes in index order. Failed trials are only counted.
pub fn aggregate(sweep_value: f64, params: &OtfsParams, outcomes: &[TrialOutcome]) -> MetricRow {
    let ok: Vec<_> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failures = outcomes.len() - ok.len();
    let count = ok.len() as f64;
    let mean = |f: &dyn Fn(usize) -> f64| -> f64 {
        if ok.is_empty() {
            f64::NAN
        } else {
            (0..ok.len()).map(f).sum::<f64>() / count
        }
    };
    let to_err = |i: usize| ok[i].0.to_error(params) as f64;
    let to_mean = mean(&to_err);
    let to_var = mean(&|i| (to_err(i) - to_mean).powi(2));
    let coarse = mean(&|i| ok[i].0.coarse_error(params.n).powi(2));
    let fine = mean(&|i| ok[i].0.fine_error(params.n).powi(2));
    MetricRow {
        sweep_value,
        to_err_mean: to_mean,
        to_err_var: to_var,
        cfo_mse_coarse: coarse,
        cfo_mse_fine: fine,
        trials: ok.len(),
        failures,
    }
}

/// Header then one row per point. Floats are written in shortest
/// round-trip form.
pub fn emit_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record([
        "sweep_value",
        "to_err_mean",
        "to_err_var",
        "cfo_mse_coarse",
        "cfo_mse_fine",
        "trials",
        "failures",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trial::{StageTimes, TrialFailure, TrialResult};

    fn params() -> OtfsParams {
        OtfsParams::new(16, 4, 1e-6, 3, 4).unwrap()
    }

    fn outcome(to_err: i64, coarse: f64, fine: f64) -> TrialOutcome {
        Ok((
            TrialResult {
                theta_true: 10,
                theta_hat: 10 + to_err,
                eps_true: 0.5,
                eps_coarse: 0.5 + coarse,
                eps_fine: 0.5 + fine,
            },
            StageTimes::default(),
        ))
    }

    #[test]
    fn single_exact_trial() {
        let row = aggregate(20.0, &params(), &[outcome(0, 0.0, 0.0)]);
        assert_eq!((row.to_err_mean, row.to_err_var), (0.0, 0.0));
        assert_eq!((row.trials, row.failures), (1, 0));
    }

    #[test]
    fn population_variance_and_failures() {
        let fail = Err(TrialFailure {
            trial: 2,
            stage: "timing",
            message: "x".into(),
        });
        let row = aggregate(0.0, &params(), &[outcome(1, 0.1, 0.0), outcome(-1, -0.3, 0.02), fail]);
        assert_eq!(row.to_err_mean, 0.0);
        assert_eq!(row.to_err_var, 1.0);
        assert!((row.cfo_mse_coarse - 0.05).abs() < 1e-12);
        assert!((row.cfo_mse_fine - 2e-4).abs() < 1e-12);
        assert_eq!((row.trials, row.failures), (2, 1));
    }

    #[test]
    fn block_sized_errors_fold() {
        let p = params();
        // one whole block off is a correct block boundary
        let row = aggregate(0.0, &p, &[outcome(p.block_len() as i64, 0.0, 0.0)]);
        assert_eq!(row.to_err_mean, 0.0);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        emit_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.trim(),
            "sweep_value,to_err_mean,to_err_var,cfo_mse_coarse,cfo_mse_fine,trials,failures"
        );
        assert!(read_csv(&path).unwrap().is_empty());
        let row = MetricRow {
            sweep_value: 0.1 + 0.2,
            to_err_mean: -1.0 / 3.0,
            to_err_var: 1e-300,
            cfo_mse_coarse: std::f64::consts::PI,
            cfo_mse_fine: 2.0f64.sqrt(),
            trials: 500,
            failures: 3,
        };
        emit_csv(&[row], &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), vec![row]);
    }
}
