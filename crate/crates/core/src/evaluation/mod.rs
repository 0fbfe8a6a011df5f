//! Rate metrics, Monte-Carlo campaigns, persisted outputs and property checks.

pub mod campaign;
pub mod metrics;
pub mod report;
pub mod verify;

pub use campaign::{run_campaign, run_drop, DropCurve, DropData, RateReport};
pub use metrics::{
    effective_rate, exceedance, genie_per_ue_rates, genie_rate, mean_ci95, per_ue_cdf, per_ue_rates, sinr,
    sum_rate,
};
pub use report::{apply_param, run_sweep, write_outputs, write_sweep, Manifest, SweepPoint};
pub use verify::CheckOutcome;
