//! Delay-Doppler / delay-time transforms, serialization and CP framing.
//!
//! The transmitter spreads each delay row of the `M x N` delay-Doppler grid
//! across time with a unitary inverse DFT of length `N`, serializes the
//! resulting delay-time frame slot by slot (`x[l*M + m] = X[m, l]`) and
//! prepends one cyclic prefix per block.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Grid geometry and framing of an OTFS stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtfsParams {
    /// Delay bins.
    pub m: usize,
    /// Doppler bins (time slots per block).
    pub n: usize,
    /// Sampling period in seconds.
    pub ts: f64,
    /// Cyclic prefix length in samples, one CP per block.
    pub lcp: usize,
    /// Number of blocks in the transmitted stream.
    pub blocks: usize,
}

impl OtfsParams {
    pub fn new(m: usize, n: usize, ts: f64, lcp: usize, blocks: usize) -> Result<Self> {
        let p = OtfsParams {
            m,
            n,
            ts,
            lcp,
            blocks,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.blocks == 0 {
            return invalid(format!(
                "M, N and B must be >= 1 (got M={}, N={}, B={})",
                self.m, self.n, self.blocks
            ));
        }
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return invalid(format!("sampling period must be positive, got {}", self.ts));
        }
        if self.lcp > self.m * self.n {
            return invalid(format!(
                "CP length {} exceeds block payload {}",
                self.lcp,
                self.m * self.n
            ));
        }
        Ok(())
    }

    /// Samples per block without CP, `M*N`.
    pub fn frame_len(&self) -> usize {
        self.m * self.n
    }

    /// Samples per block including CP, `N_T = M*N + Lcp`.
    pub fn block_len(&self) -> usize {
        self.m * self.n + self.lcp
    }

    /// Block duration `T = M*N*Ts` in seconds.
    pub fn block_duration(&self) -> f64 {
        self.frame_len() as f64 * self.ts
    }

    /// Doppler resolution `1/(M*N*Ts)` in Hz.
    pub fn doppler_resolution(&self) -> f64 {
        1.0 / self.block_duration()
    }

    /// Delay resolution in seconds (one sample).
    pub fn delay_resolution(&self) -> f64 {
        self.ts
    }

    /// Checks the CP against a channel of `taps` taps. Without bias
    /// correction the CP must also absorb `floor(mu_h)` samples.
    pub fn check_cp(&self, taps: usize, extra: usize) -> Result<()> {
        let need = taps.saturating_sub(1) + extra;
        if self.lcp < need {
            return invalid(format!(
                "CP length {} shorter than required {} for a {}-tap channel",
                self.lcp, need, taps
            ));
        }
        Ok(())
    }
}

/// Delay-Doppler symbol grid, `M` delay rows by `N` Doppler columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid {
    m: usize,
    n: usize,
    data: Vec<Complex64>,
}

impl DdGrid {
    pub fn zeros(m: usize, n: usize) -> Self {
        DdGrid {
            m,
            n,
            data: vec![Complex64::new(0.0, 0.0); m * n],
        }
    }

    pub fn from_fn(m: usize, n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut g = DdGrid::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                g.data[r * n + c] = f(r, c);
            }
        }
        g
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.data[m * self.n + n]
    }

    pub fn set(&mut self, m: usize, n: usize, v: Complex64) {
        self.data[m * self.n + n] = v;
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.data[m * self.n..(m + 1) * self.n]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [Complex64] {
        &mut self.data[m * self.n..(m + 1) * self.n]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    fn check(&self, params: &OtfsParams) -> Result<()> {
        if self.m != params.m || self.n != params.n {
            return invalid(format!(
                "grid is {}x{}, params expect {}x{}",
                self.m, self.n, params.m, params.n
            ));
        }
        Ok(())
    }
}

/// Delay-time frame. Stored serialized, `x[l*M + m] = X[m, l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtFrame {
    m: usize,
    n: usize,
    serial: Vec<Complex64>,
}

impl DtFrame {
    pub fn from_serial(m: usize, n: usize, serial: Vec<Complex64>) -> Result<Self> {
        if serial.len() != m * n {
            return invalid(format!(
                "serialized frame has {} samples, expected {}",
                serial.len(),
                m * n
            ));
        }
        Ok(DtFrame { m, n, serial })
    }

    /// `X[m, l]`.
    pub fn get(&self, m: usize, l: usize) -> Complex64 {
        self.serial[l * self.m + m]
    }

    pub fn serialized(&self) -> &[Complex64] {
        &self.serial
    }

    pub fn into_serialized(self) -> Vec<Complex64> {
        self.serial
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn energy(&self) -> f64 {
        self.serial.iter().map(|v| v.norm_sqr()).sum()
    }

    fn check(&self, params: &OtfsParams) -> Result<()> {
        if self.m != params.m || self.n != params.n {
            return invalid(format!(
                "frame is {}x{}, params expect {}x{}",
                self.m, self.n, params.m, params.n
            ));
        }
        Ok(())
    }
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

/// Unitary IDFT across the Doppler axis:
/// `X[m,l] = 1/sqrt(N) * sum_n D[m,n] e^{j 2 pi l n / N}`.
pub fn dd_to_dt(grid: &DdGrid, params: &OtfsParams) -> Result<DtFrame> {
    grid.check(params)?;
    let (m, n) = (params.m, params.n);
    let fft = plan(n, true);
    let scale = 1.0 / (n as f64).sqrt();
    let mut serial = vec![Complex64::new(0.0, 0.0); m * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..m {
        buf.copy_from_slice(grid.row(r));
        fft.process(&mut buf);
        for (l, v) in buf.iter().enumerate() {
            serial[l * m + r] = v * scale;
        }
    }
    Ok(DtFrame { m, n, serial })
}

/// Inverse of [`dd_to_dt`]: unitary forward DFT across the time index.
pub fn dt_to_dd(frame: &DtFrame, params: &OtfsParams) -> Result<DdGrid> {
    frame.check(params)?;
    let (m, n) = (params.m, params.n);
    let fft = plan(n, false);
    let scale = 1.0 / (n as f64).sqrt();
    let mut grid = DdGrid::zeros(m, n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..m {
        for (l, b) in buf.iter_mut().enumerate() {
            *b = frame.serial[l * m + r];
        }
        fft.process(&mut buf);
        for (dst, v) in grid.row_mut(r).iter_mut().zip(&buf) {
            *dst = v * scale;
        }
    }
    Ok(grid)
}

/// Prepends the last `Lcp` samples of the serialized frame.
pub fn add_cp(frame: &DtFrame, params: &OtfsParams) -> Result<Vec<Complex64>> {
    frame.check(params)?;
    let x = &frame.serial;
    if params.lcp > x.len() {
        return invalid(format!(
            "CP length {} exceeds frame length {}",
            params.lcp,
            x.len()
        ));
    }
    let mut out = Vec::with_capacity(x.len() + params.lcp);
    out.extend_from_slice(&x[x.len() - params.lcp..]);
    out.extend_from_slice(x);
    Ok(out)
}

/// Drops the CP of the block starting at `stream[0]` and reshapes the
/// following `M*N` samples into a frame.
pub fn remove_cp(stream: &[Complex64], params: &OtfsParams) -> Result<DtFrame> {
    let need = params.block_len();
    if stream.len() < need {
        return Err(Error::BufferTooShort {
            needed: need,
            available: stream.len(),
        });
    }
    DtFrame::from_serial(
        params.m,
        params.n,
        stream[params.lcp..need].to_vec(),
    )
}

/// Peak-to-average power ratio in dB.
pub fn measure_papr(stream: &[Complex64]) -> Result<f64> {
    if stream.is_empty() {
        return invalid("PAPR of an empty stream");
    }
    let (peak, sum) = stream
        .iter()
        .map(|v| v.norm_sqr())
        .fold((0.0_f64, 0.0_f64), |(p, s), e| (p.max(e), s + e));
    if peak == 0.0 {
        return invalid("PAPR of an all-zero stream");
    }
    let mean = sum / stream.len() as f64;
    Ok(10.0 * (peak / mean).log10())
}

/// Square QAM alphabets normalized to unit average power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qam {
    Qpsk,
    Qam16,
    Qam64,
}

impl Qam {
    fn side(self) -> usize {
        match self {
            Qam::Qpsk => 2,
            Qam::Qam16 => 4,
            Qam::Qam64 => 8,
        }
    }

    pub fn order(self) -> usize {
        self.side() * self.side()
    }

    /// Constellation point for symbol index `idx < order()`.
    pub fn point(self, idx: usize) -> Complex64 {
        let s = self.side();
        let level = |k: usize| (2 * k) as f64 - (s - 1) as f64;
        // mean |level|^2 over both axes: 2 (s^2 - 1) / 3
        let norm = (2.0 * ((s * s - 1) as f64) / 3.0).sqrt();
        Complex64::new(level(idx % s), level(idx / s)) / norm
    }

    pub fn random<R: Rng + ?Sized>(self, rng: &mut R) -> Complex64 {
        self.point(rng.random_range(0..self.order()))
    }
}
