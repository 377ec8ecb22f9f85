//! Transmit beamforming and reconfigurable intelligent surface (RIS) phase
//! design for integrated sensing and communication (ISAC) systems.
//!
//! A dual-function base station (DFBS) with an `M`-element ULA serves `K`
//! single-antenna users while illuminating `T` point targets. A comm-RIS
//! assists the users and, in the dual-RIS setting, a radar-RIS assists the
//! targets. The crate provides
//!
//! * [`channels`]: array responses, pathloss and stochastic channel draws,
//! * [`metrics`]: SINR, beampattern, cross-correlation and illumination
//!   metrics,
//! * [`conic`]: a small modeling layer for the Hermitian SDP/SOCP programs
//!   used by the designers, solved by an interior-point engine,
//! * [`subsolvers`]: the convex subproblems, rank-one extraction,
//!   Dinkelbach iterations and Gaussian randomization,
//! * [`algorithms`]: the alternating designers and baseline schemes,
//! * [`harness`]: Monte-Carlo sweeps and trace export.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

// Links the system OpenBLAS/LAPACK used by the PSD cone of the solver.
extern crate openblas_src;

pub mod algorithms;
pub mod channels;
pub mod config;
pub mod conic;
pub mod error;
pub mod harness;

pub mod linalg;
pub mod metrics;
pub mod subsolvers;
pub use algorithms::{DesignOptions, DesignOutcome, Scheme, Termination};
pub use channels::{ChannelSet, RisProfile, RisRole};
pub use config::{Positions, ScenarioConfig, Setting};
pub use error::{Error, Result};
pub use linalg::{CMat, CVec, C64};
pub use metrics::{BeamformerSet, RadarCostBreakdown};
