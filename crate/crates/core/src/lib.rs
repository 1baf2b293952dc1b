//! Smart-home access layer simulator.
//!
//! A permissioned ledger decides which devices may join a home network. Each
//! admission request carries RSSI readings from fixed anchors; a contract on
//! the ledger smooths them with a Kalman filter, converts them to ranges with
//! a log-distance path-loss model and trilaterates the device. Devices that
//! are untrusted or that localize outside the room are denied, and every
//! decision is chained.
//!
//! Modules:
//! - [`ledger`]: hash-chained blocks, private append and proof-of-work mining,
//!   contracts, verification.
//! - [`kalman`]: scalar Kalman filter with the Joseph-form update.
//! - [`radio`]: path-loss model per technology and a seeded noisy channel.
//! - [`localization`]: least-squares trilateration and a grid-search oracle.
//! - [`access`]: the admission state machine and audit trail.
//! - [`bench`]: RMSE and latency experiments.
//! - [`config`], [`cli`]: JSON configuration and subcommand bodies.

pub mod access;
pub mod bench;
pub mod cli;
pub mod config;
pub mod kalman;
pub mod ledger;
pub mod localization;
pub mod radio;

pub use access::{audit_trail, AdmissionDecision, AuditEntry, Deployment, DeploymentSpec, DeviceIdentity, Reason};
pub use bench::{rmse, LatencyReport, RmseReport};
pub use config::Config;
pub use kalman::{filter_series, FilterSetup, KalmanModel, KalmanState};
pub use ledger::{Block, Chain, ChainConfig, Mode, Transaction, TrustList, TxKind};
pub use localization::{trilaterate, trilaterate_oracle, Anchor, PositionEstimate, Workspace};
pub use radio::{RadioProfile, Technology};
