//! Two-stage timing offset estimation on the received delay-time stream.
//!
//! Stage one slides a window of two `L-1` sample halves, `L` samples apart,
//! along delay and accumulates over `N` slots (`P_d`). Its peak fixes the
//! delay component of the offset modulo `M`. Stage two correlates adjacent
//! time slots over the `2L-1` pilot rows found by stage one (`P_t`) and
//! fixes the slot component. The offset is `theta = theta_d + M theta_t`.
//!
//! All indices are relative to a search origin inside the buffer (the
//! nominal start of the block being synchronized). The slot search runs
//! over `theta_t` in `[-floor(N/2), ceil(N/2)]`, so the buffer must hold
//! `floor(N/2)` slots before the origin.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{mean_delay, ChannelModel};
use crate::error::{invalid, Error, Result};
use crate::modem::OtfsParams;
use crate::pilot::PcpSpec;

/// A received buffer and the search origin inside it.
#[derive(Debug, Clone, Copy)]
pub struct RxWindow<'a> {
    samples: &'a [Complex64],
    origin: usize,
}

impl<'a> RxWindow<'a> {
    pub fn new(samples: &'a [Complex64], origin: usize) -> Result<Self> {
        if origin > samples.len() {
            return invalid(format!(
                "search origin {origin} beyond buffer of {} samples",
                samples.len()
            ));
        }
        Ok(RxWindow { samples, origin })
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn samples(&self) -> &'a [Complex64] {
        self.samples
    }

    /// Sample at offset `k` from the origin. Callers check the span first.
    #[inline]
    fn at(&self, k: isize) -> Complex64 {
        self.samples[(self.origin as isize + k) as usize]
    }

    /// The same buffer with the origin moved by `delta` samples.
    pub fn shifted(&self, delta: isize) -> Result<Self> {
        let origin = self.origin as isize + delta;
        if origin < 0 {
            return invalid(format!("shifted origin {origin} is before the buffer"));
        }
        RxWindow::new(self.samples, origin as usize)
    }

    /// Checks that offsets `lo ..= hi` relative to the origin are available.
    pub fn require(&self, lo: isize, hi: isize) -> Result<()> {
        let start = self.origin as isize + lo;
        if start < 0 {
            return invalid(format!(
                "search needs {} samples before the origin, buffer has {}",
                -lo, self.origin
            ));
        }
        let end = self.origin as isize + hi + 1;
        if end as usize > self.samples.len() {
            return Err(Error::BufferTooShort {
                needed: end as usize,
                available: self.samples.len(),
            });
        }
        Ok(())
    }
}

/// How the multipath bias of the delay peak is handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BiasCorrection {
    /// Subtract `floor(mu_h)` computed from the known PDP.
    KnownPdp { mu_h: f64 },
    /// Subtract nothing. The transmitter lengthens the CP by `floor(mu_h)`
    /// instead, and the estimates keep that positive bias.
    CpExtension,
}

impl BiasCorrection {
    pub fn from_model(model: &ChannelModel) -> Self {
        BiasCorrection::KnownPdp {
            mu_h: mean_delay(model),
        }
    }

    pub fn offset(&self) -> isize {
        match *self {
            BiasCorrection::KnownPdp { mu_h } => mu_h.floor() as isize,
            BiasCorrection::CpExtension => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingMetrics {
    /// `P_d[m]`, `m = 0 .. M-1`.
    pub p_d: Vec<Complex64>,
    /// `P_t` over consecutive slot candidates.
    pub p_t: Vec<Complex64>,
    /// Slot offset of `p_t[0]`.
    pub p_t_first_slot: isize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToEstimate {
    pub theta_d_hat: isize,
    pub theta_t_hat: isize,
    /// `theta_d_hat + M theta_t_hat`, relative to the search origin.
    pub theta_hat: isize,
    /// `theta_d_hat + m_p`.
    pub mprime_p: isize,
    /// First of the `2L-1` pilot rows, i.e. the delay peak position.
    pub pilot_row: isize,
}

impl ToEstimate {
    /// Offset folded into `[-N_T/2, N_T/2)`.
    pub fn folded(&self, params: &OtfsParams) -> isize {
        fold(self.theta_hat, params.block_len())
    }

    /// Estimate a perfect synchronizer would return for a true offset.
    pub fn genie(theta: isize, params: &OtfsParams, spec: &PcpSpec, bias: &BiasCorrection) -> Self {
        let m = params.m as isize;
        let theta_t = theta.div_euclid(m);
        let theta_d = theta.rem_euclid(m);
        ToEstimate {
            theta_d_hat: theta_d,
            theta_t_hat: theta_t,
            theta_hat: theta,
            mprime_p: theta_d + spec.mp as isize,
            pilot_row: theta_d + delay_anchor(params, spec, bias),
        }
    }
}

/// Folds `x` into `[-period/2, period/2)`.
pub fn fold(x: isize, period: usize) -> isize {
    let p = period as isize;
    (x + p / 2).rem_euclid(p) - p / 2
}

/// `(m_p - L) + L_CP + bias`: the delay peak position for a zero offset.
pub fn delay_anchor(params: &OtfsParams, spec: &PcpSpec, bias: &BiasCorrection) -> isize {
    (spec.mp as isize - spec.l as isize) + params.lcp as isize + bias.offset()
}

/// Index of the largest magnitude, smallest index on ties.
pub fn argmax_abs(v: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_mag = f64::NEG_INFINITY;
    for (i, x) in v.iter().enumerate() {
        let mag = x.norm_sqr();
        if mag > best_mag {
            best = i;
            best_mag = mag;
        }
    }
    best
}

fn delay_span(params: &OtfsParams, spec: &PcpSpec) -> isize {
    (params.frame_len() + 2 * spec.l) as isize - 2
}

/// `P_d[m] = sum_{i<N} sum_{u<L-1} r*[iM+m+u] r[iM+m+u+L]`, by direct summation.
pub fn metric_delay(rx: &RxWindow, params: &OtfsParams, spec: &PcpSpec) -> Result<Vec<Complex64>> {
    rx.require(0, delay_span(params, spec))?;
    let (m_bins, n_slots, l) = (params.m, params.n, spec.l as isize);
    Ok((0..m_bins)
        .map(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n_slots {
                let base = (i * m_bins + m) as isize;
                for u in 0..l - 1 {
                    acc += rx.at(base + u).conj() * rx.at(base + u + l);
                }
            }
            acc
        })
        .collect())
}

/// Same metric with the sliding update
/// `P_d[m+1] = P_d[m] - sum_i c[iM+m] + sum_i c[iM+m+L-1]`,
/// `c[k] = r*[k] r[k+L]`.
pub fn metric_delay_iterative(
    rx: &RxWindow,
    params: &OtfsParams,
    spec: &PcpSpec,
) -> Result<Vec<Complex64>> {
    metric_delay_iterative_counted(rx, params, spec).map(|(p, _)| p)
}

/// [`metric_delay_iterative`] plus the number of complex multiplies spent
/// per sliding step.
pub fn metric_delay_iterative_counted(
    rx: &RxWindow,
    params: &OtfsParams,
    spec: &PcpSpec,
) -> Result<(Vec<Complex64>, u64)> {
    rx.require(0, delay_span(params, spec))?;
    let (m_bins, n_slots, l) = (params.m, params.n, spec.l as isize);
    let c = |k: isize| rx.at(k).conj() * rx.at(k + l);
    let mut out = Vec::with_capacity(m_bins);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n_slots {
        for u in 0..l - 1 {
            acc += c((i * m_bins) as isize + u);
        }
    }
    out.push(acc);
    let mut step_mults = 0;
    for m in 0..m_bins.saturating_sub(1) {
        let mut mults = 0;
        if l > 1 {
            for i in 0..n_slots {
                let base = (i * m_bins + m) as isize;
                acc -= c(base);
                acc += c(base + l - 1);
                mults += 2;
            }
        }
        step_mults = mults;
        out.push(acc);
    }
    Ok((out, step_mults))
}

/// `theta_d = argmax_m |P_d[m]| - (m_p - L) - L_CP - bias`, not folded.
pub fn estimate_theta_d(
    p_d: &[Complex64],
    spec: &PcpSpec,
    params: &OtfsParams,
    bias: &BiasCorrection,
) -> isize {
    argmax_abs(p_d) as isize - delay_anchor(params, spec, bias)
}

/// First slot candidate of the time metric.
pub fn first_slot_candidate(params: &OtfsParams) -> isize {
    -((params.n / 2) as isize)
}

/// Number of slot candidates, `N + 1`.
pub fn slot_candidates(params: &OtfsParams) -> usize {
    params.n + 1
}

fn time_span(params: &OtfsParams, spec: &PcpSpec, first_row: isize) -> (isize, isize) {
    let m = params.m as isize;
    let j0 = first_slot_candidate(params);
    let j1 = j0 + slot_candidates(params) as isize - 1;
    let lo = j0 * m + first_row;
    let hi = (j1 + params.n as isize - 1) * m + first_row + 2 * spec.l as isize - 2;
    (lo, hi)
}

/// `P_t[j] = sum_{i} sum_{v<N-1} r*[(j+v)M+i] r[(j+v+1)M+i]` over the
/// `2L-1` rows `i = first_row .. first_row+2L-2`, for every slot candidate
/// `j` (see [`first_slot_candidate`]).
pub fn metric_time(
    rx: &RxWindow,
    params: &OtfsParams,
    spec: &PcpSpec,
    first_row: isize,
) -> Result<Vec<Complex64>> {
    let (lo, hi) = time_span(params, spec, first_row);
    rx.require(lo, hi)?;
    let m = params.m as isize;
    let rows = 2 * spec.l as isize - 1;
    let j0 = first_slot_candidate(params);
    Ok((0..slot_candidates(params) as isize)
        .map(|idx| {
            let j = j0 + idx;
            let mut acc = Complex64::new(0.0, 0.0);
            for i in first_row..first_row + rows {
                for v in 0..params.n as isize - 1 {
                    acc += rx.at((j + v) * m + i).conj() * rx.at((j + v + 1) * m + i);
                }
            }
            acc
        })
        .collect())
}

/// Same metric with the update
/// `P_t[j+1] = P_t[j] - sum_i r*[jM+i] r[(j+1)M+i] + sum_i r*[(j+N-1)M+i] r[(j+N)M+i]`.
pub fn metric_time_iterative(
    rx: &RxWindow,
    params: &OtfsParams,
    spec: &PcpSpec,
    first_row: isize,
) -> Result<Vec<Complex64>> {
    let (lo, hi) = time_span(params, spec, first_row);
    rx.require(lo, hi)?;
    let m = params.m as isize;
    let n = params.n as isize;
    let rows = first_row..first_row + 2 * spec.l as isize - 1;
    let pair = |slot: isize| -> Complex64 {
        rows.clone()
            .map(|i| rx.at(slot * m + i).conj() * rx.at((slot + 1) * m + i))
            .sum()
    };
    let j0 = first_slot_candidate(params);
    let mut acc: Complex64 = (0..n - 1).map(|v| pair(j0 + v)).sum();
    let mut out = Vec::with_capacity(slot_candidates(params));
    out.push(acc);
    for idx in 0..slot_candidates(params) as isize - 1 {
        let j = j0 + idx;
        if n > 1 {
            acc -= pair(j);
            acc += pair(j + n - 1);
        }
        out.push(acc);
    }
    Ok(out)
}

/// `theta_t = argmax_j |P_t[j]|`, as a slot offset.
pub fn estimate_theta_t(p_t: &[Complex64], first_slot: isize) -> isize {
    argmax_abs(p_t) as isize + first_slot
}

/// Full two-stage estimate.
pub fn estimate_timing(
    rx: &RxWindow,
    params: &OtfsParams,
    spec: &PcpSpec,
    bias: &BiasCorrection,
) -> Result<(ToEstimate, TimingMetrics)> {
    let p_d = metric_delay_iterative(rx, params, spec)?;
    let peak = argmax_abs(&p_d) as isize;
    let theta_d_hat = peak - delay_anchor(params, spec, bias);
    let p_t = metric_time_iterative(rx, params, spec, peak)?;
    let first_slot = first_slot_candidate(params);
    let theta_t_hat = estimate_theta_t(&p_t, first_slot);
    let est = ToEstimate {
        theta_d_hat,
        theta_t_hat,
        theta_hat: theta_d_hat + params.m as isize * theta_t_hat,
        mprime_p: theta_d_hat + spec.mp as isize,
        pilot_row: peak,
    };
    Ok((
        est,
        TimingMetrics {
            p_d,
            p_t,
            p_t_first_slot: first_slot,
        },
    ))
}

/// Two passes of [`estimate_timing`]. The first pass sums `N` slots from
/// the origin, which may straddle two blocks; when their pilots contribute
/// equally the delay peak flattens. The second pass repeats the search
/// from the origin moved by `M theta_t`, where nearly all `N` slots belong
/// to the detected block. The returned metrics are those of the first pass.
pub fn estimate_timing_refined(
    rx: &RxWindow,
    params: &OtfsParams,
    spec: &PcpSpec,
    bias: &BiasCorrection,
) -> Result<(ToEstimate, TimingMetrics)> {
    let (first, metrics) = estimate_timing(rx, params, spec, bias)?;
    let shift = first.theta_t_hat * params.m as isize;
    if shift == 0 {
        return Ok((first, metrics));
    }
    let (second, _) = estimate_timing(&rx.shifted(shift)?, params, spec, bias)?;
    let theta_t_hat = second.theta_t_hat + first.theta_t_hat;
    Ok((
        ToEstimate {
            theta_t_hat,
            theta_hat: second.theta_d_hat + params.m as isize * theta_t_hat,
            ..second
        },
        metrics,
    ))
}

impl TimingMetrics {
    /// Writes `index,abs,arg` rows for one metric. `offset` is added to the
    /// vector index.
    pub fn write_trace(values: &[Complex64], offset: isize, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "index,abs,arg").map_err(io)?;
        for (i, v) in values.iter().enumerate() {
            writeln!(w, "{},{},{}", i as isize + offset, v.norm(), v.arg()).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}
