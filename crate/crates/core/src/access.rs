//! Device admission over the ledger.
//!
//! A request samples the radio channel from every anchor, smooths each stream
//! with the Kalman filter and commits an `RssiReport`. The localization
//! contract registered on the chain turns that report into a
//! `PositionRecord`. The trust list is consulted first, then the recorded
//! position is checked against the workspace, and the outcome is committed as
//! an `AdmissionDecision`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kalman::{FilterSetup, KalmanError};
use crate::ledger::{Block, Chain, ChainConfig, LedgerError, Transaction, TrustList, TxKind};
use crate::localization::{
    check_unique_ids, localize_device, ranges_from_rssi, rms_residual, Anchor, LocalizationError,
    PositionEstimate, Workspace,
};
use crate::radio::{RadioError, RadioProfile};

/// Slack around the workspace rectangle before a device counts as outside.
pub const DEFAULT_MARGIN: f64 = 0.5;
pub const DEFAULT_SAMPLES_PER_REQUEST: usize = 100;

#[derive(Debug, Error)]
pub enum AccessError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error("device id must not be empty")]
    EmptyDeviceId,
    #[error("invalid deployment: {0}")]
    InvalidDeployment(String),
    #[error("ledger failed verification at block {0}")]
    TamperedChain(usize),
    #[error("malformed decision record at block {index}: {reason}")]
    MalformedRecord { index: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    Trusted,
    UntrustedIdentity,
    OutOfBounds,
}

impl Reason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Reason::Trusted => "Trusted",
            Reason::UntrustedIdentity => "UntrustedIdentity",
            Reason::OutOfBounds => "OutOfBounds",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Reason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Trusted" => Ok(Reason::Trusted),
            "UntrustedIdentity" => Ok(Reason::UntrustedIdentity),
            "OutOfBounds" => Ok(Reason::OutOfBounds),
            other => Err(format!("unknown reason `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceIdentity {
    pub device_id: String,
    /// Ground truth used only to drive the simulated channel.
    pub true_position: (f64, f64),
}

impl DeviceIdentity {
    pub fn new(device_id: impl Into<String>, x: f64, y: f64) -> Self {
        Self { device_id: device_id.into(), true_position: (x, y) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissionDecision {
    pub granted: bool,
    pub reason: Reason,
    pub position: Option<PositionEstimate>,
    /// Set when localization could not produce a position.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

pub struct Deployment {
    workspace: Workspace,
    anchors: Vec<Anchor>,
    profile: RadioProfile,
    trust: TrustList,
    filter: FilterSetup,
    samples_per_request: usize,
    margin: f64,
    chain: Chain,
}

impl fmt::Debug for Deployment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Deployment")
            .field("workspace", &self.workspace)
            .field("anchors", &self.anchors)
            .field("profile", &self.profile)
            .field("trust", &self.trust)
            .field("samples_per_request", &self.samples_per_request)
            .field("chain", &self.chain)
            .finish()
    }
}

/// Everything needed to stand up a [`Deployment`].
#[derive(Debug, Clone)]
pub struct DeploymentSpec {
    pub workspace: Workspace,
    pub anchors: Vec<Anchor>,
    pub profile: RadioProfile,
    pub trust: TrustList,
    pub chain: ChainConfig,
    pub filter: FilterSetup,
    pub samples_per_request: usize,
    pub margin: f64,
}

impl Default for DeploymentSpec {
    /// 4 x 3 m room, corner anchors, WiFi, private chain, 100 samples.
    fn default() -> Self {
        let workspace = Workspace::default();
        Self {
            anchors: workspace.corner_anchors(),
            workspace,
            profile: RadioProfile::wifi(),
            trust: TrustList::new(),
            chain: ChainConfig::private(),
            filter: FilterSetup::default(),
            samples_per_request: DEFAULT_SAMPLES_PER_REQUEST,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Contract body for `RssiReport`: localize and emit a `PositionRecord`.
/// Returns `None` when the report cannot be localized.
pub fn localization_contract(report: &Transaction, anchors: &[Anchor], profile: &RadioProfile) -> Option<Transaction> {
    let rssi = report.readings("rssi")?;
    let est = localize_device(rssi, anchors, profile).ok()?;
    Some(Transaction::position_record(report.device_id.clone(), est.x, est.y))
}

impl Deployment {
    pub fn new(spec: DeploymentSpec) -> Result<Self, AccessError> {
        let invalid = |m: String| AccessError::InvalidDeployment(m);
        spec.workspace.validate()?;
        spec.profile.validate()?;
        spec.filter.model.validate()?;
        check_unique_ids(&spec.anchors)?;
        if spec.anchors.len() < 3 {
            return Err(invalid(format!("need at least 3 anchors, got {}", spec.anchors.len())));
        }
        if let Some(a) = spec.anchors.iter().find(|a| !spec.workspace.contains(a.x, a.y, 0.0)) {
            return Err(invalid(format!("anchor `{}` at ({}, {}) lies outside the workspace", a.id, a.x, a.y)));
        }
        if spec.samples_per_request == 0 {
            return Err(invalid("samples_per_request must be at least 1".into()));
        }
        if !(spec.margin >= 0.0 && spec.margin.is_finite()) {
            return Err(invalid(format!("margin must be non-negative, got {}", spec.margin)));
        }

        let mut chain = Chain::new(spec.chain)?;
        let anchors = spec.anchors.clone();
        let profile = spec.profile;
        chain.register_contract(
            TxKind::RssiReport,
            Box::new(move |tx| localization_contract(tx, &anchors, &profile)),
        )?;

        Ok(Self {
            workspace: spec.workspace,
            anchors: spec.anchors,
            profile: spec.profile,
            trust: spec.trust,
            filter: spec.filter,
            samples_per_request: spec.samples_per_request,
            margin: spec.margin,
            chain,
        })
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn profile(&self) -> &RadioProfile {
        &self.profile
    }

    pub fn trust(&self) -> &TrustList {
        &self.trust
    }

    pub fn samples_per_request(&self) -> usize {
        self.samples_per_request
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn chain_mut(&mut self) -> &mut Chain {
        &mut self.chain
    }

    /// Draw `samples_per_request` readings per anchor and return the terminal
    /// Kalman estimate for each.
    pub fn filtered_rssi<R: Rng + ?Sized>(
        &self,
        device: &DeviceIdentity,
        rng: &mut R,
    ) -> Result<BTreeMap<String, f64>, AccessError> {
        let (x, y) = device.true_position;
        let mut out = BTreeMap::new();
        for anchor in &self.anchors {
            // A device sitting exactly on an anchor is nudged off it so the
            // path-loss model stays defined.
            let d = anchor.distance_to(x, y).max(1e-6);
            let raw = (0..self.samples_per_request)
                .map(|_| self.profile.sample_rssi(d, rng))
                .collect::<Result<Vec<_>, _>>()?;
            let smoothed = self.filter.run(&raw)?;
            out.insert(anchor.id.clone(), *smoothed.last().expect("samples_per_request >= 1"));
        }
        Ok(out)
    }

    pub fn request_admission<R: Rng + ?Sized>(
        &mut self,
        device: &DeviceIdentity,
        rng: &mut R,
    ) -> Result<AdmissionDecision, AccessError> {
        if device.device_id.is_empty() {
            return Err(AccessError::EmptyDeviceId);
        }
        let rssi = self.filtered_rssi(device, rng)?;
        let committed = self.chain.submit(Transaction::rssi_report(device.device_id.clone(), rssi.clone()))?;

        let position = match &committed.follow_up {
            Some(block) => Some(self.recorded_position(block, &rssi)?),
            None => None,
        };

        let decision = if !self.trust.contains(&device.device_id) {
            AdmissionDecision { granted: false, reason: Reason::UntrustedIdentity, position: None, diagnostic: None }
        } else {
            match position {
                Some(p) if self.workspace.contains(p.x, p.y, self.margin) => {
                    AdmissionDecision { granted: true, reason: Reason::Trusted, position: Some(p), diagnostic: None }
                }
                Some(p) => {
                    AdmissionDecision { granted: false, reason: Reason::OutOfBounds, position: Some(p), diagnostic: None }
                }
                None => AdmissionDecision {
                    granted: false,
                    reason: Reason::OutOfBounds,
                    position: None,
                    diagnostic: Some(self.localization_diagnostic(&rssi)),
                },
            }
        };

        self.chain.submit(Transaction::admission_decision(
            device.device_id.clone(),
            decision.granted,
            decision.reason.as_str(),
            decision.position.map(|p| (p.x, p.y)),
        ))?;
        Ok(decision)
    }

    fn recorded_position(&self, block: &Block, rssi: &BTreeMap<String, f64>) -> Result<PositionEstimate, AccessError> {
        let (x, y) = read_xy(block)?;
        let ranges = ranges_from_rssi(rssi, &self.anchors, &self.profile)?;
        Ok(PositionEstimate { x, y, residual: rms_residual(&ranges, x, y) })
    }

    fn localization_diagnostic(&self, rssi: &BTreeMap<String, f64>) -> String {
        match localize_device(rssi, &self.anchors, &self.profile) {
            Err(e) => format!("localization failed: {e}"),
            Ok(_) => "localization contract emitted no position".into(),
        }
    }
}

fn read_xy(block: &Block) -> Result<(f64, f64), AccessError> {
    let coord = |key: &str| {
        block
            .payload
            .text(key)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| AccessError::MalformedRecord { index: block.index, reason: format!("missing `{key}`") })
    };
    Ok((coord("x")?, coord("y")?))
}

/// One decision from the ledger with the position recorded for it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub device_id: String,
    pub granted: bool,
    pub reason: Reason,
    /// Position disclosed in the decision block, if any.
    pub decision_position: Option<(f64, f64)>,
    /// Position recorded by the localization contract for this request.
    pub recorded_position: Option<(f64, f64)>,
}

/// Decisions in chain order, each paired with the latest `PositionRecord`
/// for the same device since the previous decision.
pub fn audit_trail(chain: &Chain) -> Result<Vec<AuditEntry>, AccessError> {
    let v = chain.verify();
    if !v.valid {
        return Err(AccessError::TamperedChain(v.first_bad_index.unwrap_or(0)));
    }
    let mut pending: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut out = Vec::new();
    for block in chain.blocks().iter().skip(1) {
        let tx = &block.payload;
        match tx.kind {
            TxKind::PositionRecord => {
                pending.insert(tx.device_id.clone(), read_xy(block)?);
            }
            TxKind::AdmissionDecision => {
                let malformed = |reason: String| AccessError::MalformedRecord { index: block.index, reason };
                let granted = tx.text("granted") == Some("true");
                let reason: Reason = tx
                    .text("reason")
                    .ok_or_else(|| malformed("missing reason".into()))?
                    .parse()
                    .map_err(malformed)?;
                let decision_position = if tx.body.contains_key("x") { Some(read_xy(block)?) } else { None };
                out.push(AuditEntry {
                    device_id: tx.device_id.clone(),
                    granted,
                    reason,
                    decision_position,
                    recorded_position: pending.remove(&tx.device_id),
                });
            }
            TxKind::RssiReport | TxKind::AdmissionRequest => {}
        }
    }
    Ok(out)
}
