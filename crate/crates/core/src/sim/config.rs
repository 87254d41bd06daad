use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cfo::BemSampling;
use crate::error::{invalid, Error, Result};
use crate::modem::Qam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Eva,
    /// One Rayleigh-faded tap.
    SingleTap,
    /// One tap of fixed unit gain.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DopplerKind {
    Jakes,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    KnownPdp,
    CpExtension,
}

/// Inner sweep axis. Geometries always form the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    None,
    Snr,
    NuMaxT,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SweepAxis::None),
            "snr" | "snr_db" => Ok(SweepAxis::Snr),
            "nu_max_t" | "doppler" => Ok(SweepAxis::NuMaxT),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected none, snr or nu_max_t)"
            ))),
        }
    }
}

/// Flat key/value experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n: usize,
    /// Sampling rate in Hz; `Ts = 1 / sample_rate`.
    pub sample_rate: f64,
    /// CP length; `None` means `L - 1`.
    pub lcp: Option<usize>,
    pub blocks: usize,

    pub pilot_len: usize,
    /// Pilot delay row; `None` means `M/2`.
    pub pilot_mp: Option<usize>,
    /// Pilot Doppler column; `None` means `N/2`.
    pub pilot_np: Option<usize>,
    pub zc_root: u64,
    pub pilot_power_db: f64,
    pub qam: Qam,

    pub channel: ChannelKind,
    pub doppler: DopplerKind,
    /// Maximum Doppler normalized by the Doppler resolution, `nu_max M N Ts`.
    pub nu_max_t: f64,
    pub snr_db: f64,

    /// Fixed offsets instead of random draws.
    pub theta: Option<i64>,
    pub epsilon: Option<f64>,

    pub bias_correction: BiasMode,
    pub bem_k: usize,
    /// Explicit basis size; `None` applies the Doppler rule.
    pub bem_q: Option<usize>,
    pub bem_literal_exponent: bool,
    pub bem_sampling: BemSampling,
    pub fast_cost: bool,
    pub fine_half_width: f64,
    pub fine_coarse_step: f64,
    pub fine_step: f64,
    /// Transmit only the synchronized block; the other block slots of the
    /// stream stay silent.
    pub isolated_block: bool,
    /// Repeat the timing search from the detected slot.
    pub timing_refine: bool,
    /// Feed the true offset to the CFO stages instead of the estimate.
    pub genie_timing_for_cfo: bool,

    pub trials: usize,
    pub seed: u64,
    pub sweep: SweepAxis,
    pub snr_list: Vec<f64>,
    pub nu_max_t_list: Vec<f64>,
    /// `(M, N)` pairs; empty means the single `(m, n)` above.
    pub geometries: Vec<(usize, usize)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: 128,
            n: 32,
            sample_rate: 8.25e6,
            lcp: None,
            blocks: 4,
            pilot_len: 21,
            pilot_mp: None,
            pilot_np: None,
            zc_root: 1,
            pilot_power_db: 40.0,
            qam: Qam::Qam16,
            channel: ChannelKind::Eva,
            doppler: DopplerKind::Jakes,
            nu_max_t: 1.36,
            snr_db: 20.0,
            theta: None,
            epsilon: None,
            bias_correction: BiasMode::KnownPdp,
            bem_k: 4,
            bem_q: None,
            bem_literal_exponent: false,
            bem_sampling: BemSampling::PerSlot,
            fast_cost: true,
            fine_half_width: 0.5,
            fine_coarse_step: 1e-2,
            fine_step: 1e-4,
            isolated_block: false,
            timing_refine: true,
            genie_timing_for_cfo: true,
            trials: 100,
            seed: 1,
            sweep: SweepAxis::None,
            snr_list: vec![0.0, 10.0, 20.0, 30.0],
            nu_max_t_list: vec![0.0, 0.33, 0.81, 1.36],
            geometries: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Sample period in seconds.
    pub fn ts(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn geometry_list(&self) -> Vec<(usize, usize)> {
        if self.geometries.is_empty() {
            vec![(self.m, self.n)]
        } else {
            self.geometries.clone()
        }
    }

    /// Values of the inner axis. `None` yields one point at the base value.
    pub fn sweep_values(&self) -> Vec<f64> {
        match self.sweep {
            SweepAxis::None => vec![self.snr_db],
            SweepAxis::Snr => self.snr_list.clone(),
            SweepAxis::NuMaxT => self.nu_max_t_list.clone(),
        }
    }

    /// Copy with the inner axis set to `value`.
    pub fn at_point(&self, value: f64) -> Self {
        let mut c = self.clone();
        match self.sweep {
            SweepAxis::None => {}
            SweepAxis::Snr => c.snr_db = value,
            SweepAxis::NuMaxT => c.nu_max_t = value,
        }
        c
    }

    pub fn with_geometry(&self, m: usize, n: usize) -> Self {
        let mut c = self.clone();
        c.m = m;
        c.n = n;
        c
    }

    /// Every config key, including the optional ones.
    pub fn keys() -> Vec<String> {
        Self::template().keys().cloned().collect()
    }

    fn template() -> toml::Table {
        let full = ExperimentConfig {
            lcp: Some(0),
            pilot_mp: Some(0),
            pilot_np: Some(0),
            theta: Some(0),
            epsilon: Some(0.0),
            bem_q: Some(1),
            geometries: vec![(1, 1)],
            ..ExperimentConfig::default()
        };
        toml::Table::try_from(&full).expect("config is always serializable")
    }

    /// Copy with `key = value` pairs applied. A value is read as a TOML
    /// literal when possible and as a bare string otherwise, then coerced
    /// to the type of the key (integers become floats where needed).
    pub fn with_overrides<K: AsRef<str>, V: AsRef<str>>(&self, pairs: &[(K, V)]) -> Result<Self> {
        let template = Self::template();
        let mut table = toml::Table::try_from(self).expect("config is always serializable");
        for (key, raw) in pairs {
            let key = key.as_ref().replace('-', "_");
            let Some(shape) = template.get(&key) else {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            };
            let raw = raw.as_ref();
            let parsed = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key, coerce(parsed, shape));
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be >= 1");
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return invalid("sample_rate must be positive");
        }
        if self.blocks < 3 {
            return invalid("blocks must be >= 3 so the timing search window fits");
        }
        if !(self.nu_max_t.is_finite() && self.nu_max_t >= 0.0) {
            return invalid("nu_max_t must be finite and >= 0");
        }
        if self.snr_db.is_nan() {
            return invalid("snr_db must be a number");
        }
        if self.bem_k == 0 {
            return invalid("bem_k must be >= 1");
        }
        match self.sweep {
            SweepAxis::Snr if self.snr_list.is_empty() => return invalid("snr_list is empty"),
            SweepAxis::NuMaxT if self.nu_max_t_list.is_empty() => {
                return invalid("nu_max_t_list is empty")
            }
            _ => {}
        }
        if self.nu_max_t_list.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("nu_max_t_list entries must be finite and >= 0");
        }
        if self.geometries.iter().any(|&(m, n)| m == 0 || n == 0) {
            return invalid("geometries must have M, N >= 1");
        }
        Ok(())
    }
}

fn coerce(value: toml::Value, shape: &toml::Value) -> toml::Value {
    use toml::Value;
    match (value, shape) {
        (Value::Integer(i), Value::Float(_)) => Value::Float(i as f64),
        (Value::Array(items), Value::Array(proto)) => match proto.first() {
            Some(p) => Value::Array(items.into_iter().map(|v| coerce(v, p)).collect()),
            None => Value::Array(items),
        },
        (v, _) => v,
    }
}
