//! Maximum-likelihood fine CFO search over the BEM pilot subspace.
//!
//! The stacked pilot samples follow `r_p = Gamma(eps) G c + noise`, where
//! `Gamma(eps)` is the diagonal CFO phase at the pilot indices and the
//! columns of `G` are the pilot, cyclically shifted per tap and weighted
//! by each basis function. The ML cost `g(eps) = |Lambda Gamma^H(eps) r_p|^2`
//! uses the orthogonal projector `Lambda` onto the range of `G`.
//!
//! When `Lambda` only couples stacked entries whose index difference is a
//! multiple of `L`, the cost collapses to a length-`N` trigonometric
//! polynomial whose coefficients `beta[m]` are computed once per block.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::bem::{pilot_indices, BemModel};
use crate::error::{invalid, Error, Result};
use crate::modem::{dd_to_dt, DdGrid, DtFrame, OtfsParams};
use crate::pilot::{embed_pcp, PcpSpec};

/// Relative singular value below which a direction of `G` is dropped.
pub const RANK_TOL: f64 = 1e-6;

/// Relative magnitude below which entries of the projection coupling
/// different pilot rows count as zero.
pub const BANDED_TOL: f64 = 1e-10;

/// Counts complex multiplies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MulCounter(pub u64);

impl MulCounter {
    #[inline]
    pub fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

/// `G` with `N L` rows in `(l, i)` order and `L Q` columns in `(tap, q)`
/// order, built from the transmitted delay-time pilot.
pub fn build_g(
    frame: &DtFrame,
    spec: &PcpSpec,
    params: &OtfsParams,
    bem: &BemModel,
) -> Result<DMatrix<Complex64>> {
    let (l_len, q_len) = (spec.l, bem.q());
    let mut g = DMatrix::zeros(params.n * l_len, l_len * q_len);
    for slot in 0..params.n {
        for i in 0..l_len {
            let row = slot * l_len + i;
            let k = bem.sample_index(params, spec, slot, i);
            for tap in 0..l_len {
                // delay rows m_p + i - tap stay inside the cyclic-prefixed pilot
                let s = frame.get(spec.mp + i - tap, slot);
                for q in 0..q_len {
                    g[(row, tap * q_len + q)] = s * bem.basis(k, q);
                }
            }
        }
    }
    Ok(g)
}

/// Delay-time frame holding only the pilot.
pub fn pilot_frame(spec: &PcpSpec, params: &OtfsParams) -> Result<DtFrame> {
    let grid = embed_pcp(&DdGrid::zeros(params.m, params.n), spec, params)?;
    dd_to_dt(&grid, params)
}

/// Per-geometry data for the fine CFO search, built once and shared.
#[derive(Debug, Clone)]
pub struct MlWorkspace {
    params: OtfsParams,
    spec: PcpSpec,
    bem: BemModel,
    g: DMatrix<Complex64>,
    lambda: DMatrix<Complex64>,
    pinv: DMatrix<Complex64>,
    phase_index: Vec<f64>,
    rank: usize,
    banded: bool,
}

impl MlWorkspace {
    pub fn new(params: &OtfsParams, spec: &PcpSpec, bem: BemModel) -> Result<Self> {
        spec.validate(params)?;
        if params.n < bem.q() {
            return Err(Error::SingularModel {
                l: spec.l,
                q: bem.q(),
                n: params.n,
            });
        }
        let frame = pilot_frame(spec, params)?;
        let g = build_g(&frame, spec, params, &bem)?;
        let svd = g.clone().svd(true, true);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let vt = svd.v_t.as_ref().expect("right singular vectors requested");
        let smax = svd.singular_values.max();
        if smax == 0.0 {
            return Err(Error::SingularModel {
                l: spec.l,
                q: bem.q(),
                n: params.n,
            });
        }
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&j| svd.singular_values[j] > RANK_TOL * smax)
            .collect();
        let rank = keep.len();
        if rank < g.ncols() {
            log::warn!(
                "BEM model (L={}, Q={}, N={}) has rank {} of {}; dropping weak directions",
                spec.l,
                bem.q(),
                params.n,
                rank,
                g.ncols()
            );
        }
        let uk = DMatrix::from_fn(g.nrows(), rank, |r, c| u[(r, keep[c])]);
        let lambda = &uk * uk.adjoint();
        let vk = DMatrix::from_fn(g.ncols(), rank, |r, c| vt[(keep[c], r)].conj());
        let sinv = DMatrix::from_fn(rank, rank, |r, c| {
            if r == c {
                Complex64::new(1.0 / svd.singular_values[keep[r]], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let pinv = vk * sinv * uk.adjoint();

        let l = spec.l;
        let scale = lambda.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let off_band = (0..lambda.nrows())
            .flat_map(|a| (0..lambda.ncols()).map(move |b| (a, b)))
            .filter(|(a, b)| a % l != b % l)
            .map(|(a, b)| lambda[(a, b)].norm())
            .fold(0.0, f64::max);
        log::debug!("projection off-band magnitude {:.3e} (scale {:.3e})", off_band, scale);
        let banded = off_band <= BANDED_TOL * scale;
        if !banded {
            log::info!("projection is not banded by L; fast cost path disabled");
        }
        let phase_index = pilot_indices(params, spec).iter().map(|&k| k as f64).collect();
        Ok(MlWorkspace {
            params: *params,
            spec: *spec,
            bem,
            g,
            lambda,
            pinv,
            phase_index,
            rank,
            banded,
        })
    }

    pub fn g(&self) -> &DMatrix<Complex64> {
        &self.g
    }

    pub fn lambda(&self) -> &DMatrix<Complex64> {
        &self.lambda
    }

    pub fn bem(&self) -> &BemModel {
        &self.bem
    }

    pub fn params(&self) -> &OtfsParams {
        &self.params
    }

    pub fn spec(&self) -> &PcpSpec {
        &self.spec
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// True when the fast cost form is exact for this geometry.
    pub fn is_banded(&self) -> bool {
        self.banded
    }

    pub fn pilot_len(&self) -> usize {
        self.params.n * self.spec.l
    }

    /// Diagonal of `Gamma(eps)`.
    pub fn gamma(&self, eps: f64) -> Vec<Complex64> {
        let mn = self.params.frame_len() as f64;
        self.phase_index
            .iter()
            .map(|&k| Complex64::from_polar(1.0, 2.0 * PI * eps * k / mn))
            .collect()
    }

    fn check_len(&self, rp: &[Complex64]) -> Result<()> {
        if rp.len() != self.pilot_len() {
            return invalid(format!(
                "pilot vector has {} samples, expected N*L = {}",
                rp.len(),
                self.pilot_len()
            ));
        }
        Ok(())
    }

    /// Received pilot samples of the block starting at `block_start`.
    pub fn extract_pilot(&self, received: &[Complex64], block_start: usize) -> Result<Vec<Complex64>> {
        let idx = pilot_indices(&self.params, &self.spec);
        let need = block_start + idx.last().copied().unwrap_or(0) + 1;
        if need > received.len() {
            return Err(Error::BufferTooShort {
                needed: need,
                available: received.len(),
            });
        }
        Ok(idx.iter().map(|&k| received[block_start + k]).collect())
    }

    /// Noiseless model output `Gamma(eps) G c`.
    pub fn synthesize(&self, c: &[Complex64], eps: f64) -> Result<Vec<Complex64>> {
        if c.len() != self.g.ncols() {
            return invalid(format!("expected {} BEM coefficients", self.g.ncols()));
        }
        let y = &self.g * DVector::from_column_slice(c);
        Ok(self.gamma(eps).iter().zip(y.iter()).map(|(a, b)| a * b).collect())
    }
}

/// Matrix-form cost `(Gamma^H r)^H Lambda (Gamma^H r)`.
pub fn ml_cost(rp: &[Complex64], ws: &MlWorkspace, eps: f64) -> Result<f64> {
    ml_cost_counted(rp, ws, eps, &mut MulCounter::default())
}

pub fn ml_cost_counted(
    rp: &[Complex64],
    ws: &MlWorkspace,
    eps: f64,
    counter: &mut MulCounter,
) -> Result<f64> {
    ws.check_len(rp)?;
    let nl = rp.len() as u64;
    let y = DVector::from_iterator(
        rp.len(),
        ws.gamma(eps).iter().zip(rp).map(|(g, r)| g.conj() * r),
    );
    let z = &ws.lambda * &y;
    counter.add(nl + nl * nl + nl);
    Ok(y.dotc(&z).re.max(0.0))
}

/// `beta[m] = sum_k Lambda[k+mL, k] r*[k+mL] r[k]` for `m = 0 .. N-1`.
pub fn beta(rp: &[Complex64], ws: &MlWorkspace) -> Result<Vec<Complex64>> {
    beta_counted(rp, ws, &mut MulCounter::default())
}

pub fn beta_counted(
    rp: &[Complex64],
    ws: &MlWorkspace,
    counter: &mut MulCounter,
) -> Result<Vec<Complex64>> {
    ws.check_len(rp)?;
    if !ws.banded {
        return invalid("fast cost requires a projection banded by L");
    }
    let (n, l) = (ws.params.n, ws.spec.l);
    let nl = n * l;
    Ok((0..n)
        .map(|m| {
            let shift = m * l;
            let terms = nl - shift;
            counter.add(2 * terms as u64);
            (0..terms)
                .map(|k| ws.lambda[(k + shift, k)] * rp[k + shift].conj() * rp[k])
                .sum()
        })
        .collect())
}

/// `g(eps) = -beta[0] + 2 Re sum_{m<N} beta[m] e^{j 2 pi m eps / N}`.
pub fn ml_cost_fast(beta: &[Complex64], eps: f64) -> f64 {
    ml_cost_fast_counted(beta, eps, &mut MulCounter::default())
}

pub fn ml_cost_fast_counted(beta: &[Complex64], eps: f64, counter: &mut MulCounter) -> f64 {
    let n = beta.len();
    if n == 0 {
        return 0.0;
    }
    let step = Complex64::from_polar(1.0, 2.0 * PI * eps / n as f64);
    let mut w = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for b in &beta[1..] {
        w *= step;
        acc += b * w;
    }
    counter.add(2 * (n as u64 - 1));
    (beta[0].re + 2.0 * acc.re).max(0.0)
}

/// Fine search grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineSearch {
    pub half_width: f64,
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Use the `beta` form when the workspace allows it.
    pub fast: bool,
}

impl Default for FineSearch {
    fn default() -> Self {
        FineSearch {
            half_width: 0.5,
            coarse_step: 1e-2,
            fine_step: 1e-4,
            fast: true,
        }
    }
}

impl FineSearch {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.half_width) && ok(self.coarse_step) && ok(self.fine_step)) {
            return invalid("fine search widths and steps must be finite and positive");
        }
        if self.fine_step > self.coarse_step || self.coarse_step > 2.0 * self.half_width {
            return invalid("fine search needs fine_step <= coarse_step <= 2 * half_width");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfoEstimate {
    pub eps_coarse: f64,
    pub eps_fine: f64,
    /// `(eps, g(eps))` for every evaluated point, coarse grid first.
    pub cost_trace: Vec<(f64, f64)>,
    /// The coarse-grid maximum fell on the edge of the search range.
    pub on_boundary: bool,
    pub multiplies: u64,
}

impl CfoEstimate {
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "eps,cost").map_err(io)?;
        for (e, g) in &self.cost_trace {
            writeln!(w, "{e},{g}").map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

fn grid(center: f64, half_width: f64, step: f64) -> Vec<f64> {
    let count = (2.0 * half_width / step).round() as i64;
    (0..=count).map(|i| center - half_width + i as f64 * step).collect()
}

/// Two-stage grid search for the cost maximum around `eps_coarse`.
pub fn fine_cfo(
    rp: &[Complex64],
    ws: &MlWorkspace,
    eps_coarse: f64,
    search: &FineSearch,
) -> Result<CfoEstimate> {
    search.validate()?;
    ws.check_len(rp)?;
    let mut counter = MulCounter::default();
    let fast = search.fast && ws.banded;
    let b = if fast {
        Some(beta_counted(rp, ws, &mut counter)?)
    } else {
        None
    };
    let mut eval = |eps: f64| -> Result<f64> {
        match &b {
            Some(b) => Ok(ml_cost_fast_counted(b, eps, &mut counter)),
            None => ml_cost_counted(rp, ws, eps, &mut counter),
        }
    };

    let mut trace = Vec::new();
    let first = grid(eps_coarse, search.half_width, search.coarse_step);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (idx, &e) in first.iter().enumerate() {
        let g = eval(e)?;
        trace.push((e, g));
        if g > best.1 {
            best = (idx, g);
        }
    }
    let on_boundary = best.0 == 0 || best.0 + 1 == first.len();
    if on_boundary {
        log::warn!(
            "fine CFO maximum at the search boundary {:.4} (coarse {:.4}); range may be too small",
            first[best.0],
            eps_coarse
        );
    }
    let center = first[best.0];
    let mut best_eps = (center, best.1);
    for e in grid(center, search.coarse_step, search.fine_step) {
        let g = eval(e)?;
        trace.push((e, g));
        if g > best_eps.1 {
            best_eps = (e, g);
        }
    }
    Ok(CfoEstimate {
        eps_coarse,
        eps_fine: best_eps.0,
        cost_trace: trace,
        on_boundary,
        multiplies: counter.0,
    })
}

/// Least-squares BEM channel estimate at a given CFO.
#[derive(Debug, Clone, PartialEq)]
pub struct BemChannelEstimate {
    /// `c[tap * Q + q]`.
    pub coeffs: Vec<Complex64>,
    bem: BemModel,
    taps: usize,
}

impl BemChannelEstimate {
    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn coeff(&self, tap: usize, q: usize) -> Complex64 {
        self.coeffs[tap * self.bem.q() + q]
    }

    /// `h[tap, k] = sum_q B[k, q] c_tap(q)` with `k` relative to the block start.
    pub fn tap_gain(&self, tap: usize, k: usize) -> Complex64 {
        (0..self.bem.q())
            .map(|q| self.bem.basis(k, q) * self.coeff(tap, q))
            .sum()
    }

    /// Gains for every tap over `0 .. len`, `out[tap][k]`.
    pub fn reconstruct(&self, len: usize) -> Vec<Vec<Complex64>> {
        (0..self.taps)
            .map(|t| (0..len).map(|k| self.tap_gain(t, k)).collect())
            .collect()
    }
}

/// `c = G^+ Gamma^H(eps) r_p`.
pub fn estimate_channel_bem(
    rp: &[Complex64],
    ws: &MlWorkspace,
    eps: f64,
) -> Result<BemChannelEstimate> {
    ws.check_len(rp)?;
    if ws.rank < ws.g.ncols() {
        return Err(Error::SingularModel {
            l: ws.spec.l,
            q: ws.bem.q(),
            n: ws.params.n,
        });
    }
    let y = DVector::from_iterator(
        rp.len(),
        ws.gamma(eps).iter().zip(rp).map(|(g, r)| g.conj() * r),
    );
    let c = &ws.pinv * y;
    Ok(BemChannelEstimate {
        coeffs: c.iter().copied().collect(),
        bem: ws.bem.clone(),
        taps: ws.spec.l,
    })
}
