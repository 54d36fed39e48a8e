//! Output-exchange distributed learning at desk scale.
//!
//! The crate is organised by subsystem:
//!
//! - [`nn`]: dense networks with manual backpropagation, losses, distillation
//!   regularizers and a finite-difference gradient checker.
//! - [`ntk`]: kernel-regime analytics for knowledge distillation and
//!   co-distillation, with a gradient-flow oracle.
//! - [`data`]: synthetic tasks, IDX ingestion and federated sharding.
//! - [`fd`]: the federated distillation protocol, the FedAvg baseline and
//!   payload accounting.
//! - [`channel`]: a threshold model of asymmetric uplink/downlink budgets.
//! - [`mix2fld`]: Mixup seed collection, inverse-Mixup, output-to-model
//!   conversion and privacy accounting.
//! - [`frd`]: CartPole, A2C agents, proxy experience memories and the
//!   PD / FRD / FRL exchange protocols.
//! - [`harness`]: JSON experiment configs, orchestration and report tooling.

pub mod channel;
pub mod data;
pub mod error;
pub mod fd;
pub mod frd;
pub mod harness;
pub mod linalg;
pub mod mix2fld;
pub mod nn;
pub mod ntk;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
