use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::modem::OtfsParams;
use crate::pilot::PcpSpec;
use crate::timing::{RxWindow, ToEstimate};

/// Wraps `x` into `[-period/2, period/2)`.
pub fn wrap(x: f64, period: f64) -> f64 {
    let half = period / 2.0;
    let y = (x + half).rem_euclid(period) - half;
    // rem_euclid can return `period` itself for tiny negative inputs
    if y >= half {
        y - period
    } else {
        y
    }
}

/// Wrapped CFO error, the distance between two estimates modulo `N`.
pub fn cfo_error(estimate: f64, truth: f64, n: usize) -> f64 {
    wrap(estimate - truth, n as f64)
}

/// Coarse CFO from the slot-to-slot phase of the `2L-1` pilot rows.
///
/// Each row contributes the angle of its correlation over the `N` slots
/// selected by `to`. Rows with a zero correlation are skipped. The row
/// angles are averaged as deviations from the angle of their sum, which
/// keeps the mean well defined near the `+-pi` cut.
pub fn coarse_cfo(
    rx: &RxWindow,
    to: &ToEstimate,
    params: &OtfsParams,
    spec: &PcpSpec,
) -> Result<f64> {
    let m = params.m as isize;
    let n = params.n as isize;
    let rows = to.pilot_row..to.pilot_row + 2 * spec.l as isize - 1;
    let lo = to.theta_t_hat * m + rows.start;
    let hi = (to.theta_t_hat + n - 1) * m + rows.end - 1;
    rx.require(lo, hi)?;

    let samples = rx.samples();
    let at = |k: isize| samples[(rx.origin() as isize + k) as usize];
    let corr: Vec<Complex64> = rows
        .map(|i| {
            (0..n - 1)
                .map(|v| {
                    at((to.theta_t_hat + v) * m + i).conj()
                        * at((to.theta_t_hat + v + 1) * m + i)
                })
                .sum()
        })
        .collect();

    let total: Complex64 = corr.iter().sum();
    let usable: Vec<&Complex64> = corr.iter().filter(|c| c.norm() > 0.0).collect();
    if usable.len() < corr.len() {
        log::warn!(
            "coarse CFO: skipped {} pilot rows with zero correlation",
            corr.len() - usable.len()
        );
    }
    if usable.is_empty() {
        return invalid("coarse CFO: every pilot row has zero correlation");
    }
    let reference = total.arg();
    let dev: f64 = usable
        .iter()
        .map(|c| wrap(c.arg() - reference, 2.0 * PI))
        .sum::<f64>()
        / usable.len() as f64;
    let upsilon = reference + dev;
    Ok(wrap(
        params.n as f64 * upsilon / (2.0 * PI) - spec.np as f64,
        params.n as f64,
    ))
}
