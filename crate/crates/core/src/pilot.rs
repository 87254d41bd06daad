//! Pilot with cyclic prefix (PCP).
//!
//! A length-`L` Zadoff-Chu sequence sits in Doppler column `n_p`, delay rows
//! `m_p .. m_p+L-1`. Its last `L-1` samples are repeated in rows
//! `m_p-L+1 .. m_p-1`, so that `D[m_p-k, n_p] = D[m_p+L-k, n_p]`. Row
//! `m_p-L` and every other Doppler column of rows `m_p-L .. m_p+L-1` are
//! zero guards.

use std::ops::Range;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::modem::{DdGrid, OtfsParams, Qam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcpSpec {
    /// Pilot sequence length, also the modeled channel length.
    pub l: usize,
    /// Delay row of the first (non-CP) pilot sample.
    pub mp: usize,
    /// Doppler column carrying the pilot.
    pub np: usize,
    pub zc_root: u64,
    /// Per-sample pilot power relative to unit-power data symbols.
    pub pilot_power_db: f64,
}

impl PcpSpec {
    /// Pilot centered in delay (`m_p = M/2`) and Doppler (`n_p = N/2`)
    /// with ZC root 1.
    pub fn centered(params: &OtfsParams, l: usize, pilot_power_db: f64) -> Self {
        PcpSpec {
            l,
            mp: params.m / 2,
            np: params.n / 2,
            zc_root: 1,
            pilot_power_db,
        }
    }

    pub fn validate(&self, params: &OtfsParams) -> Result<()> {
        if self.l == 0 {
            return invalid("pilot length must be >= 1");
        }
        if self.mp < self.l || self.mp + self.l > params.m {
            return invalid(format!(
                "pilot region rows {}..{} do not fit in M={}",
                self.mp as isize - self.l as isize,
                self.mp + self.l,
                params.m
            ));
        }
        if self.np >= params.n {
            return invalid(format!("pilot Doppler bin {} >= N={}", self.np, params.n));
        }
        if gcd(self.zc_root, self.l as u64) != 1 {
            return invalid(format!(
                "ZC root {} is not coprime with L={}",
                self.zc_root, self.l
            ));
        }
        if !self.pilot_power_db.is_finite() {
            return invalid("pilot power must be finite");
        }
        Ok(())
    }

    /// Linear per-sample pilot power.
    pub fn power(&self) -> f64 {
        10f64.powf(self.pilot_power_db / 10.0)
    }

    /// Reserved delay rows `m_p-L .. m_p+L`.
    pub fn region(&self) -> Range<usize> {
        self.mp - self.l..self.mp + self.l
    }

    /// Rows carrying the non-CP part of the pilot, `m_p .. m_p+L`.
    pub fn core_rows(&self) -> Range<usize> {
        self.mp..self.mp + self.l
    }

    /// Rows carrying pilot energy (CP and core), `2L-1` rows.
    pub fn occupied_rows(&self) -> Range<usize> {
        self.mp + 1 - self.l..self.mp + self.l
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Zadoff-Chu sequence of length `l` and root `root`.
pub fn make_zc(l: usize, root: u64) -> Result<Vec<Complex64>> {
    if l == 0 {
        return invalid("ZC length must be >= 1");
    }
    if gcd(root, l as u64) != 1 {
        return invalid(format!("ZC root {root} is not coprime with L={l}"));
    }
    let lf = l as f64;
    let odd = l % 2 == 1;
    Ok((0..l)
        .map(|n| {
            // reduce the quadratic index mod 2L before going to floating point
            let n = n as u128;
            let q = if odd { n * (n + 1) } else { n * n };
            let q = (root as u128 * q) % (2 * l as u128);
            Complex64::from_polar(1.0, -std::f64::consts::PI * q as f64 / lf)
        })
        .collect())
}

/// Writes the PCP into `data`. Fails when `data` has nonzero entries in the
/// reserved rows.
pub fn embed_pcp(data: &DdGrid, spec: &PcpSpec, params: &OtfsParams) -> Result<DdGrid> {
    spec.validate(params)?;
    if data.rows() != params.m || data.cols() != params.n {
        return invalid("data grid dimensions do not match params");
    }
    for r in spec.region() {
        if data.row(r).iter().any(|v| *v != Complex64::new(0.0, 0.0)) {
            return invalid(format!("data symbol inside pilot region at row {r}"));
        }
    }
    let z = make_zc(spec.l, spec.zc_root)?;
    let amp = spec.power().sqrt();
    let mut out = data.clone();
    for (i, zi) in z.iter().enumerate() {
        out.set(spec.mp + i, spec.np, zi * amp);
    }
    for k in 1..spec.l {
        let v = out.get(spec.mp + spec.l - k, spec.np);
        out.set(spec.mp - k, spec.np, v);
    }
    Ok(out)
}

/// Impulse pilot of the same total energy as the PCP, at `(m_p, n_p)`,
/// with the same guard rows. Used only as a PAPR reference.
pub fn embed_impulse(data: &DdGrid, spec: &PcpSpec, params: &OtfsParams) -> Result<DdGrid> {
    spec.validate(params)?;
    let mut out = data.clone();
    for r in spec.region() {
        out.row_mut(r).fill(Complex64::new(0.0, 0.0));
    }
    let energy = (2 * spec.l - 1) as f64 * spec.power();
    out.set(spec.mp, spec.np, Complex64::new(energy.sqrt(), 0.0));
    Ok(out)
}

/// Zeroes the reserved pilot rows.
pub fn clear_pilot_region(grid: &DdGrid, spec: &PcpSpec) -> DdGrid {
    let mut out = grid.clone();
    for r in spec.region() {
        out.row_mut(r).fill(Complex64::new(0.0, 0.0));
    }
    out
}

/// Random data symbols everywhere outside the pilot region.
pub fn random_data_grid<R: Rng + ?Sized>(
    spec: &PcpSpec,
    params: &OtfsParams,
    qam: Qam,
    rng: &mut R,
) -> DdGrid {
    let region = spec.region();
    let mut g = DdGrid::zeros(params.m, params.n);
    for m in 0..params.m {
        if region.contains(&m) {
            continue;
        }
        for v in g.row_mut(m) {
            *v = qam.random(rng);
        }
    }
    g
}
