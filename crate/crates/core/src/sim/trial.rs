use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{BiasMode, ChannelKind, DopplerKind, ExperimentConfig};
use crate::cfo::{coarse_cfo, fine_cfo, wrap, BemModel, CfoEstimate, FineSearch, MlWorkspace};
use crate::channel::{
    apply_impairments, mean_delay, realize_channel, ChannelModel, ChannelRealization,
    DopplerSpectrum, Impairments,
};
use crate::error::{Error, Result};
use crate::modem::{add_cp, dd_to_dt, OtfsParams, Qam};
use crate::pilot::{embed_pcp, random_data_grid, PcpSpec};
use crate::timing::{estimate_timing, estimate_timing_refined, fold, BiasCorrection, RxWindow, TimingMetrics, ToEstimate};

/// Everything a trial needs, resolved from a config for one sweep point.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: OtfsParams,
    pub spec: PcpSpec,
    pub model: ChannelModel,
    /// Bypass fading and use a unit-gain tap.
    pub unit_channel: bool,
    pub bias: BiasCorrection,
    pub workspace: Arc<MlWorkspace>,
    pub search: FineSearch,
    pub qam: Qam,
    pub snr_db: f64,
    pub nu_max_t: f64,
    pub theta: Option<i64>,
    pub epsilon: Option<f64>,
    pub isolated_block: bool,
    pub timing_refine: bool,
    pub genie_timing_for_cfo: bool,
}

impl Scenario {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Self::with_pool(cfg, &mut Vec::new())
    }

    /// Takes the workspace from `pool` when one matches the geometry and
    /// basis of `cfg`, otherwise builds it and adds it to the pool.
    pub fn with_pool(cfg: &ExperimentConfig, pool: &mut Vec<Arc<MlWorkspace>>) -> Result<Self> {
        cfg.validate()?;
        let ts = cfg.ts();
        let doppler = match cfg.doppler {
            DopplerKind::Jakes => DopplerSpectrum::Jakes,
            DopplerKind::Static => DopplerSpectrum::Static,
        };
        let nu_max = cfg.nu_max_t / (cfg.m * cfg.n) as f64 / ts;
        let model = match cfg.channel {
            ChannelKind::Eva => ChannelModel::eva(ts, cfg.pilot_len, nu_max, doppler)?,
            ChannelKind::SingleTap => ChannelModel::single_tap(nu_max, doppler),
            ChannelKind::Unit => ChannelModel::single_tap(0.0, DopplerSpectrum::Static),
        };
        let mu_h = mean_delay(&model);
        let (bias, extra) = match cfg.bias_correction {
            BiasMode::KnownPdp => (BiasCorrection::KnownPdp { mu_h }, 0),
            BiasMode::CpExtension => (BiasCorrection::CpExtension, mu_h.floor() as usize),
        };
        let lcp = cfg.lcp.unwrap_or(cfg.pilot_len.saturating_sub(1)) + extra;
        let params = OtfsParams::new(cfg.m, cfg.n, ts, lcp, cfg.blocks)?;
        params.check_cp(model.taps(), 0)?;
        let spec = PcpSpec {
            l: cfg.pilot_len,
            mp: cfg.pilot_mp.unwrap_or(cfg.m / 2),
            np: cfg.pilot_np.unwrap_or(cfg.n / 2),
            zc_root: cfg.zc_root,
            pilot_power_db: cfg.pilot_power_db,
        };
        spec.validate(&params)?;
        if model.taps() > spec.l {
            return Err(Error::InvalidArgument(format!(
                "channel has {} taps, pilot models only L={}",
                model.taps(),
                spec.l
            )));
        }
        let bem = match cfg.bem_q {
            Some(q) => BemModel::with_q(&params, cfg.bem_k, q)?,
            None => BemModel::auto(&params, cfg.bem_k, nu_max)?,
        }
        .literal_exponent(cfg.bem_literal_exponent)
        .sampling(cfg.bem_sampling);
        let found = pool
            .iter()
            .find(|ws| ws.params() == &params && ws.spec() == &spec && ws.bem() == &bem)
            .cloned();
        let workspace = match found {
            Some(ws) => ws,
            None => {
                let ws = Arc::new(MlWorkspace::new(&params, &spec, bem)?);
                pool.push(ws.clone());
                ws
            }
        };
        let search = FineSearch {
            half_width: cfg.fine_half_width,
            coarse_step: cfg.fine_coarse_step,
            fine_step: cfg.fine_step,
            fast: cfg.fast_cost,
        };
        search.validate()?;
        Ok(Scenario {
            params,
            spec,
            model,
            unit_channel: cfg.channel == ChannelKind::Unit,
            bias,
            workspace,
            search,
            qam: cfg.qam,
            snr_db: cfg.snr_db,
            nu_max_t: cfg.nu_max_t,
            theta: cfg.theta,
            epsilon: cfg.epsilon,
            isolated_block: cfg.isolated_block,
            timing_refine: cfg.timing_refine,
            genie_timing_for_cfo: cfg.genie_timing_for_cfo,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub theta_true: i64,
    pub theta_hat: i64,
    pub eps_true: f64,
    pub eps_coarse: f64,
    pub eps_fine: f64,
}

impl TrialResult {
    /// Timing error folded into one block.
    pub fn to_error(&self, params: &OtfsParams) -> i64 {
        fold((self.theta_hat - self.theta_true) as isize, params.block_len()) as i64
    }

    pub fn coarse_error(&self, n: usize) -> f64 {
        wrap(self.eps_coarse - self.eps_true, n as f64)
    }

    pub fn fine_error(&self, n: usize) -> f64 {
        wrap(self.eps_fine - self.eps_true, n as f64)
    }
}

/// Wall-clock seconds per stage. Kept apart from [`TrialResult`] so that
/// results stay bit-reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub generate: f64,
    pub timing: f64,
    pub coarse_cfo: f64,
    pub fine_cfo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: u64,
    pub stage: &'static str,
    pub message: String,
}

impl std::fmt::Display for TrialFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "trial {} failed in {}: {}", self.trial, self.stage, self.message)
    }
}

pub type TrialOutcome = std::result::Result<(TrialResult, StageTimes), TrialFailure>;

/// Intermediate data of one trial, for snapshots.
#[derive(Debug, Clone)]
pub struct TrialTrace {
    pub result: TrialResult,
    pub times: StageTimes,
    pub to_estimate: ToEstimate,
    pub metrics: TimingMetrics,
    pub cfo: CfoEstimate,
    pub channel: ChannelRealization,
    /// Buffer index of the nominal start of the synchronized block.
    pub origin: usize,
}

/// Random draws of one trial.
struct Draws {
    theta: i64,
    eps: f64,
    data_seed: u64,
    channel_seed: u64,
    noise_seed: u64,
}

fn draw(scn: &Scenario, root_seed: u64, trial: u64) -> Draws {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(trial);
    // the random draws happen even for fixed offsets so that every other
    // stream keeps its position
    let random = Impairments::random(&scn.params, scn.nu_max_t, scn.snr_db, &mut rng);
    Draws {
        theta: scn.theta.unwrap_or(random.theta),
        eps: scn.epsilon.unwrap_or(random.epsilon),
        data_seed: rng.random(),
        channel_seed: rng.random(),
        noise_seed: rng.random(),
    }
}

/// Index of the block the receiver synchronizes to.
pub const SYNC_BLOCK: usize = 1;

/// Transmitted stream of `blocks` independent frames, each with the pilot.
/// With `isolated_block` only [`SYNC_BLOCK`] is sent and the rest is silence.
pub fn build_stream(scn: &Scenario, seed: u64) -> Result<Vec<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = Vec::with_capacity(scn.params.blocks * scn.params.block_len());
    for b in 0..scn.params.blocks {
        let data = random_data_grid(&scn.spec, &scn.params, scn.qam, &mut rng);
        if scn.isolated_block && b != SYNC_BLOCK {
            stream.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), scn.params.block_len()));
            continue;
        }
        let grid = embed_pcp(&data, &scn.spec, &scn.params)?;
        stream.extend(add_cp(&dd_to_dt(&grid, &scn.params)?, &scn.params)?);
    }
    Ok(stream)
}

fn fail(trial: u64, stage: &'static str) -> impl Fn(Error) -> TrialFailure {
    move |e| TrialFailure {
        trial,
        stage,
        message: e.to_string(),
    }
}

/// Runs one trial and keeps the intermediate data.
pub fn run_trial_traced(
    scn: &Scenario,
    root_seed: u64,
    trial: u64,
) -> std::result::Result<TrialTrace, TrialFailure> {
    let p = &scn.params;
    let d = draw(scn, root_seed, trial);
    let mut times = StageTimes::default();

    let t = Instant::now();
    let stream = build_stream(scn, d.data_seed).map_err(fail(trial, "transmit"))?;
    let channel = if scn.unit_channel {
        ChannelRealization::identity(stream.len())
    } else {
        realize_channel(&scn.model, p, stream.len(), d.channel_seed)
            .map_err(fail(trial, "channel"))?
    };
    let imp = Impairments {
        theta: d.theta,
        epsilon: d.eps,
        snr_db: scn.snr_db,
    };
    let rx = apply_impairments(&stream, &channel, &imp, p, d.noise_seed)
        .map_err(fail(trial, "channel"))?;
    times.generate = t.elapsed().as_secs_f64();

    let origin = SYNC_BLOCK * p.block_len();
    let t = Instant::now();
    let win = RxWindow::new(&rx, origin).map_err(fail(trial, "timing"))?;
    let estimator = if scn.timing_refine {
        estimate_timing_refined
    } else {
        estimate_timing
    };
    let (to_est, metrics) = estimator(&win, p, &scn.spec, &scn.bias).map_err(fail(trial, "timing"))?;
    times.timing = t.elapsed().as_secs_f64();

    let to_cfo = if scn.genie_timing_for_cfo {
        ToEstimate::genie(d.theta as isize, p, &scn.spec, &scn.bias)
    } else {
        to_est
    };
    let t = Instant::now();
    let eps_coarse = coarse_cfo(&win, &to_cfo, p, &scn.spec).map_err(fail(trial, "coarse_cfo"))?;
    times.coarse_cfo = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let start = origin as isize + fold(to_cfo.theta_hat, p.block_len());
    let rp = scn
        .workspace
        .extract_pilot(&rx, start as usize)
        .map_err(fail(trial, "fine_cfo"))?;
    let cfo = fine_cfo(&rp, &scn.workspace, eps_coarse, &scn.search)
        .map_err(fail(trial, "fine_cfo"))?;
    times.fine_cfo = t.elapsed().as_secs_f64();

    let result = TrialResult {
        theta_true: d.theta,
        theta_hat: to_est.theta_hat as i64,
        eps_true: d.eps,
        eps_coarse,
        eps_fine: wrap(cfo.eps_fine, p.n as f64),
    };
    let values = [result.eps_true, result.eps_coarse, result.eps_fine];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(TrialFailure {
            trial,
            stage: "result",
            message: "non-finite estimate".into(),
        });
    }
    Ok(TrialTrace {
        result,
        times,
        to_estimate: to_est,
        metrics,
        cfo,
        channel,
        origin,
    })
}

/// Runs one trial. Errors become a labeled failure record.
pub fn run_trial(scn: &Scenario, root_seed: u64, trial: u64) -> TrialOutcome {
    run_trial_traced(scn, root_seed, trial).map(|t| (t.result, t.times))
}
