//! Cooperative downlink precoding for cell-free massive MIMO.
//!
//! The crate simulates a network of multi-antenna base stations (BSs) jointly
//! serving multi-antenna user equipments (UEs) and implements weighted
//! sum-MSE precoding in four flavours: a one-shot centralized design, a
//! centralized design driven by iterative bi-directional training, a
//! distributed design that exchanges cross terms over the backhaul, and a
//! distributed design that recovers the same cross terms over the air from a
//! dedicated uplink resource. Perfect-CSI references and a local MMSE
//! baseline are included for comparison.
//!
//! Module map:
//!
//! * [`scenario`]: configuration, geometry and Rayleigh channel draws.
//! * [`pilots`]: orthogonal and random pilot books.
//! * [`airlink`]: the DL, UL, UL-1 and UL-2 signaling phases and LS estimators.
//! * [`precoding`]: closed-form combiner/precoder updates and dual solvers.
//! * [`orchestrator`]: end-to-end training loops for every scheme.
//! * [`evaluation`]: SINR/rate metrics, Monte-Carlo campaigns and reports.

pub mod airlink;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod orchestrator;
pub mod pilots;
pub mod precoding;
pub mod scenario;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};
pub use orchestrator::{AlgorithmId, IterationRecord, IterationTrace, Phase};
pub use pilots::{PilotBook, PilotMode};
pub use precoding::{CombinerSet, DualState, PrecoderSet};
pub use scenario::{ChannelSet, Dims, Scenario, ScenarioConfig, Topology};
