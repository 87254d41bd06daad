//! OTFS modem with a cyclic-prefixed Zadoff-Chu pilot, a doubly selective
//! channel simulator, and joint timing offset / CFO synchronization.

pub mod cfo;
pub mod channel;
pub mod error;
pub mod modem;
pub mod pilot;
pub mod sim;
pub mod timing;

pub use num_complex::Complex64;

pub use cfo::{
    coarse_cfo, estimate_channel_bem, fine_cfo, ml_cost, ml_cost_fast, BemModel, CfoEstimate,
    FineSearch, MlWorkspace,
};
pub use channel::{
    apply_impairments, mean_delay, realize_channel, ChannelModel, ChannelRealization,
    DopplerSpectrum, Impairments,
};
pub use error::{Error, Result};
pub use modem::{add_cp, dd_to_dt, dt_to_dd, measure_papr, remove_cp, DdGrid, DtFrame, OtfsParams, Qam};
pub use pilot::{embed_pcp, make_zc, PcpSpec};
pub use timing::{estimate_timing, BiasCorrection, RxWindow, TimingMetrics, ToEstimate};
