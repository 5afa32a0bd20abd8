//! Measurement machinery: total-variation distances, uniform-stability
//! estimation, distribution-shift bounds, and convergence-rate fits.

mod rates;
mod shift;
mod stability;
mod tv;

pub use rates::{convergence_report, measure_rate_points, ConvergenceReport, RatePoint};
pub use shift::{
    d_bound_from_tvs, excess_loss_new_task, mixture_generalization_bound, shift_bound,
    weighted_d_bound_from_tvs, ExcessReport, ShiftReport,
};
pub use stability::{
    estimate_stability, largek_gamma, stability_grid, theoretical_gamma, GridPoint,
    StabilityConfig, StabilityEstimate, StabilityReport, TrialStat,
};
pub use tv::{tv_distance, tv_to_mixture, TvMethod};
