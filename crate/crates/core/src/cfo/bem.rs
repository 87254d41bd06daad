//! Generalized complex-exponential basis expansion of a time-varying tap.
//!
//! `h[l, k] ~ sum_q B[k, q] c_l(q)` with `B[k, q] = exp(j 2 pi f_q k)` and
//! `f_q = (q + 1 - ceil(Q/2)) / (K M N)` for `q = 0 .. Q-1`. The centering
//! puts the zero frequency at `q = ceil(Q/2) - 1`, so `Q = 1` is the
//! time-invariant model.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{invalid, Result};
use crate::modem::OtfsParams;
use crate::pilot::PcpSpec;

/// Where the basis is evaluated for the pilot samples of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BemSampling {
    /// One evaluation per slot at `L_CP + lM + m_p`. The tap is treated as
    /// constant over the `L` pilot samples of the slot.
    #[default]
    PerSlot,
    /// Evaluation at every pilot sample index.
    PerSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BemModel {
    k: usize,
    q: usize,
    mn: usize,
    literal_exponent: bool,
    sampling: BemSampling,
}

impl BemModel {
    /// `Q = ceil(2 K nu_max M N Ts) + 1`.
    pub fn rule_q(params: &OtfsParams, k: usize, nu_max: f64) -> usize {
        let x = 2.0 * k as f64 * nu_max * params.frame_len() as f64 * params.ts;
        // guard against 2.0000000001 style round-off pushing the ceiling up
        let c = (x - 1e-9).ceil().max(0.0);
        c as usize + 1
    }

    pub fn auto(params: &OtfsParams, k: usize, nu_max: f64) -> Result<Self> {
        if !(nu_max.is_finite() && nu_max >= 0.0) {
            return invalid(format!("nu_max must be finite and >= 0, got {nu_max}"));
        }
        Self::with_q(params, k, Self::rule_q(params, k, nu_max))
    }

    pub fn with_q(params: &OtfsParams, k: usize, q: usize) -> Result<Self> {
        if k == 0 {
            return invalid("BEM oversampling factor K must be >= 1");
        }
        if q == 0 {
            return invalid("BEM needs at least one basis function");
        }
        Ok(BemModel {
            k,
            q,
            mn: params.frame_len(),
            literal_exponent: false,
            sampling: BemSampling::PerSlot,
        })
    }

    /// Doubles every basis frequency.
    pub fn literal_exponent(mut self, on: bool) -> Self {
        self.literal_exponent = on;
        self
    }

    pub fn sampling(mut self, sampling: BemSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn sampling_mode(&self) -> BemSampling {
        self.sampling
    }

    pub fn is_literal(&self) -> bool {
        self.literal_exponent
    }

    /// Frequency of column `q` in cycles per sample.
    pub fn frequency(&self, q: usize) -> f64 {
        let centered = q as f64 + 1.0 - self.q.div_ceil(2) as f64;
        let scale = if self.literal_exponent { 2.0 } else { 1.0 };
        scale * centered / (self.k * self.mn) as f64
    }

    pub fn basis(&self, k: usize, q: usize) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * self.frequency(q) * k as f64)
    }

    /// `B[k, q]` for the given sample indices, one row per index.
    pub fn basis_matrix(&self, ks: &[usize]) -> DMatrix<Complex64> {
        DMatrix::from_fn(ks.len(), self.q, |r, c| self.basis(ks[r], c))
    }

    /// Sample index at which the basis is evaluated for pilot sample `i`
    /// of slot `l`, relative to the block start.
    pub fn sample_index(&self, params: &OtfsParams, spec: &PcpSpec, l: usize, i: usize) -> usize {
        let anchor = params.lcp + l * params.m + spec.mp;
        match self.sampling {
            BemSampling::PerSlot => anchor,
            BemSampling::PerSample => anchor + i,
        }
    }
}

/// Rule-selected model, `K`-times oversampled.
pub fn build_bem(params: &OtfsParams, k: usize, nu_max: f64) -> Result<BemModel> {
    BemModel::auto(params, k, nu_max)
}

/// Stream indices of the received pilot samples relative to the block
/// start, `L_CP + lM + m_p + i`, in stacking order `l * L + i`.
pub fn pilot_indices(params: &OtfsParams, spec: &PcpSpec) -> Vec<usize> {
    (0..params.n)
        .flat_map(|l| (0..spec.l).map(move |i| params.lcp + l * params.m + spec.mp + i))
        .collect()
}

/// Least-squares fit of one realized tap onto the basis at the sample
/// indices `ks` (relative to `offset` in the realization). Returns the
/// coefficients and the normalized residual energy.
pub fn fit_tap(
    bem: &BemModel,
    real: &ChannelRealization,
    tap: usize,
    offset: usize,
    ks: &[usize],
) -> Result<(Vec<Complex64>, f64)> {
    if tap >= real.taps() {
        return invalid(format!("tap {tap} beyond {} taps", real.taps()));
    }
    if let Some(&kmax) = ks.iter().max() {
        if offset + kmax >= real.len() {
            return invalid("fit indices beyond the realization");
        }
    }
    let b = bem.basis_matrix(ks);
    let h = DVector::from_iterator(ks.len(), ks.iter().map(|&k| real.get(tap, offset + k)));
    let svd = b.clone().svd(true, true);
    let c = svd
        .solve(&h, 1e-10)
        .map_err(|e| crate::error::Error::InvalidArgument(e.to_string()))?;
    let resid = (&b * &c - &h).norm_squared();
    let energy = h.norm_squared();
    let nmse = if energy > 0.0 { resid / energy } else { 0.0 };
    Ok((c.iter().copied().collect(), nmse))
}
