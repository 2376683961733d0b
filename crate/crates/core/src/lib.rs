//! Bilateral-control imitation learning at desk scale.
//!
//! Simulated master/slave teleoperation under four-channel bilateral
//! control produces demonstrations; recurrent sequence models (S2M, SM2SM,
//! S2SM) learn from them; the slave then runs autonomously with either the
//! conventional command law or the command-feedback law, and the runs are
//! scored.

pub mod control;
pub mod dataset_io;
pub mod executor;
pub mod harness;
pub mod joint;
pub mod metrics;
pub mod model;
pub mod provenance;
pub mod sim;
pub mod teleop;
