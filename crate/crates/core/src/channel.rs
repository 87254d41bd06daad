//! Linear time-varying multipath channel with timing offset, CFO and AWGN.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::modem::OtfsParams;

/// Extended Vehicular A profile: excess delay (ns) and relative power (dB).
pub const EVA_DELAYS_NS: [f64; 9] = [0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0];
pub const EVA_POWERS_DB: [f64; 9] = [0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9];

/// Sinusoids per tap in the sum-of-sinusoids Jakes generator.
pub const JAKES_SINUSOIDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DopplerSpectrum {
    Jakes,
    Static,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pdp: Vec<f64>,
    /// Maximum Doppler frequency in Hz.
    pub nu_max: f64,
    pub doppler: DopplerSpectrum,
}

impl ChannelModel {
    /// Builds a model from per-tap average powers; the profile is
    /// renormalized to unit total power.
    pub fn new(pdp: Vec<f64>, nu_max: f64, doppler: DopplerSpectrum) -> Result<Self> {
        if pdp.is_empty() {
            return invalid("power delay profile is empty");
        }
        if pdp.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("power delay profile entries must be finite and nonnegative");
        }
        let total: f64 = pdp.iter().sum();
        if total <= 0.0 {
            return invalid("power delay profile has zero total power");
        }
        if !(nu_max.is_finite() && nu_max >= 0.0) {
            return invalid(format!("maximum Doppler must be >= 0, got {nu_max}"));
        }
        Ok(ChannelModel {
            pdp: pdp.into_iter().map(|p| p / total).collect(),
            nu_max,
            doppler,
        })
    }

    /// Single unit tap.
    pub fn single_tap(nu_max: f64, doppler: DopplerSpectrum) -> Self {
        ChannelModel::new(vec![1.0], nu_max, doppler).expect("valid profile")
    }

    /// EVA resampled onto `taps` sample-spaced taps at period `ts`: each
    /// path goes to its nearest tap (clamped to the last tap), powers that
    /// land in the same tap add up.
    pub fn eva(ts: f64, taps: usize, nu_max: f64, doppler: DopplerSpectrum) -> Result<Self> {
        if taps == 0 {
            return invalid("EVA needs at least one tap");
        }
        let mut pdp = vec![0.0; taps];
        for (d, p) in EVA_DELAYS_NS.iter().zip(EVA_POWERS_DB) {
            let bin = ((d * 1e-9 / ts).round() as usize).min(taps - 1);
            pdp[bin] += 10f64.powf(p / 10.0);
        }
        ChannelModel::new(pdp, nu_max, doppler)
    }

    pub fn pdp(&self) -> &[f64] {
        &self.pdp
    }

    pub fn taps(&self) -> usize {
        self.pdp.len()
    }

    /// The same profile with a different Doppler spread.
    pub fn with_nu_max(&self, nu_max: f64) -> Self {
        ChannelModel {
            nu_max,
            ..self.clone()
        }
    }
}

/// PDP-weighted mean delay with the `(l+1)` weighting, so a single tap at
/// `l = 0` gives 1.
pub fn mean_delay(model: &ChannelModel) -> f64 {
    let num: f64 = model
        .pdp
        .iter()
        .enumerate()
        .map(|(l, a)| (l + 1) as f64 * a)
        .sum();
    num / model.pdp.iter().sum::<f64>()
}

/// Sampled impulse response `h[l, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    taps: Vec<Vec<Complex64>>,
}

impl ChannelRealization {
    pub fn from_taps(taps: Vec<Vec<Complex64>>) -> Result<Self> {
        let len = taps.first().map(|t| t.len()).unwrap_or(0);
        if taps.is_empty() || taps.iter().any(|t| t.len() != len) {
            return invalid("channel taps must be nonempty and of equal length");
        }
        Ok(ChannelRealization { taps })
    }

    /// Identity channel: a single unit tap.
    pub fn identity(len: usize) -> Self {
        ChannelRealization {
            taps: vec![vec![Complex64::new(1.0, 0.0); len]],
        }
    }

    pub fn taps(&self) -> usize {
        self.taps.len()
    }

    pub fn len(&self) -> usize {
        self.taps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, tap: usize, k: usize) -> Complex64 {
        self.taps[tap][k]
    }

    pub fn tap(&self, tap: usize) -> &[Complex64] {
        &self.taps[tap]
    }

    /// Columnar text export: `k,l,re,im`, one line per sample and tap.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "k,l,re,im").map_err(io)?;
        for k in 0..self.len() {
            for (l, tap) in self.taps.iter().enumerate() {
                writeln!(w, "{},{},{},{}", k, l, tap[k].re, tap[k].im).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Draws a realization of `duration` samples. Each tap is an independent
/// sum of [`JAKES_SINUSOIDS`] equal-power complex sinusoids with random
/// arrival angles and phases.
pub fn realize_channel(
    model: &ChannelModel,
    params: &OtfsParams,
    duration: usize,
    seed: u64,
) -> Result<ChannelRealization> {
    params.validate()?;
    let need = params.blocks * params.block_len();
    if duration < need {
        return invalid(format!(
            "channel duration {duration} shorter than the {need}-sample stream"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_max = 2.0 * PI * model.nu_max * params.ts;
    let taps = model
        .pdp
        .iter()
        .map(|&power| {
            // draw for every tap so that zero-power taps do not shift the stream
            let sines: Vec<(f64, f64)> = (0..JAKES_SINUSOIDS)
                .map(|_| {
                    let angle: f64 = rng.random_range(0.0..2.0 * PI);
                    let phase: f64 = rng.random_range(0.0..2.0 * PI);
                    (w_max * angle.cos(), phase)
                })
                .collect();
            if power == 0.0 {
                return vec![Complex64::new(0.0, 0.0); duration];
            }
            let amp = (power / JAKES_SINUSOIDS as f64).sqrt();
            match model.doppler {
                DopplerSpectrum::Static => {
                    let h0: Complex64 = sines
                        .iter()
                        .map(|&(_, ph)| Complex64::from_polar(amp, ph))
                        .sum();
                    vec![h0; duration]
                }
                DopplerSpectrum::Jakes => sum_of_sinusoids(&sines, amp, duration),
            }
        })
        .collect();
    Ok(ChannelRealization { taps })
}

fn sum_of_sinusoids(sines: &[(f64, f64)], amp: f64, duration: usize) -> Vec<Complex64> {
    // phasor recursion, re-anchored every RESYNC samples to bound drift
    const RESYNC: usize = 2048;
    let mut out = vec![Complex64::new(0.0, 0.0); duration];
    for &(w, ph) in sines {
        let step = Complex64::from_polar(1.0, w);
        for (chunk_idx, chunk) in out.chunks_mut(RESYNC).enumerate() {
            let k0 = (chunk_idx * RESYNC) as f64;
            let mut p = Complex64::from_polar(amp, ph + w * k0);
            for v in chunk {
                *v += p;
                p *= step;
            }
        }
    }
    out
}

/// Timing offset, CFO and noise level applied to a stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impairments {
    /// Integer timing offset in samples.
    pub theta: i64,
    /// CFO normalized by the Doppler resolution.
    pub epsilon: f64,
    /// SNR per data sample in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
}

impl Impairments {
    pub fn noiseless(theta: i64, epsilon: f64) -> Self {
        Impairments {
            theta,
            epsilon,
            snr_db: f64::INFINITY,
        }
    }

    /// `theta ~ U{-MN/2 .. MN/2-1}`, `epsilon ~ U[-(N - nu_max T)/2, (N - nu_max T)/2)`.
    pub fn random<R: Rng + ?Sized>(
        params: &OtfsParams,
        nu_max_t: f64,
        snr_db: f64,
        rng: &mut R,
    ) -> Self {
        let half = (params.frame_len() / 2) as i64;
        let theta = rng.random_range(-half..half);
        let span = (params.n as f64 - nu_max_t).max(0.0) / 2.0;
        let epsilon = if span > 0.0 {
            rng.random_range(-span..span)
        } else {
            0.0
        };
        Impairments {
            theta,
            epsilon,
            snr_db,
        }
    }

    /// Noise variance for unit-power data samples.
    pub fn noise_variance(&self) -> f64 {
        if self.snr_db.is_infinite() && self.snr_db > 0.0 {
            0.0
        } else {
            10f64.powf(-self.snr_db / 10.0)
        }
    }
}

/// `r[k] = e^{j 2 pi eps k / MN} sum_l h[l,k] s[k - l - theta] + eta[k]` with
/// `s` zero outside the stream. The output has the length of `stream`.
pub fn apply_impairments(
    stream: &[Complex64],
    real: &ChannelRealization,
    imp: &Impairments,
    params: &OtfsParams,
    seed: u64,
) -> Result<Vec<Complex64>> {
    if real.len() < stream.len() {
        return invalid(format!(
            "channel realization has {} samples, stream needs {}",
            real.len(),
            stream.len()
        ));
    }
    let len = stream.len() as i64;
    let sample = |idx: i64| {
        if (0..len).contains(&idx) {
            stream[idx as usize]
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let mn = params.frame_len() as f64;
    let sigma = (imp.noise_variance() / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(stream.len());
    for k in 0..len {
        let mut acc = Complex64::new(0.0, 0.0);
        for l in 0..real.taps() {
            acc += real.get(l, k as usize) * sample(k - l as i64 - imp.theta);
        }
        let phase = Complex64::from_polar(1.0, 2.0 * PI * imp.epsilon * k as f64 / mn);
        let mut v = phase * acc;
        if sigma > 0.0 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            v += Complex64::new(re, im) * sigma;
        }
        out.push(v);
    }
    Ok(out)
}
