//! Carrier frequency offset estimation: a coarse estimate from the pilot
//! slot-to-slot phase, refined by an ML search over a BEM pilot subspace.

pub mod bem;
pub mod coarse;
pub mod ml;

pub use bem::{build_bem, fit_tap, pilot_indices, BemModel, BemSampling};
pub use coarse::{cfo_error, coarse_cfo, wrap};
pub use ml::{
    beta, beta_counted, build_g, estimate_channel_bem, fine_cfo, ml_cost, ml_cost_counted,
    ml_cost_fast, ml_cost_fast_counted, pilot_frame, BemChannelEstimate, CfoEstimate, FineSearch,
    MlWorkspace, MulCounter,
};
