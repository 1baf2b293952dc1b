//! Hash-chained block store with two admission modes.
//!
//! A [`Chain`] in [`Mode::Private`] appends blocks directly (nonce 0); a chain
//! in [`Mode::Public`] gates every block behind a nonce search whose SHA-256
//! hex digest must start with `difficulty` zero characters. Contracts bound to
//! a [`TxKind`] run when a matching transaction is committed and may emit one
//! follow-up transaction. Follow-ups never trigger further contracts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Largest accepted proof-of-work difficulty, in leading hex zeros.
pub const MAX_DIFFICULTY: u32 = 16;

/// `prev_hash` of the genesis block.
pub const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("difficulty {0} out of range (max {MAX_DIFFICULTY})")]
    DifficultyOutOfRange(u32),
    #[error("operation requires a {expected:?} chain, chain is {actual:?}")]
    WrongMode { expected: Mode, actual: Mode },
    #[error("a contract is already registered for {0}")]
    DuplicateContract(TxKind),
    #[error("no nonce found after {0} attempts")]
    MiningExhausted(u128),
    #[error("invalid {kind} body: {reason}")]
    InvalidBody { kind: TxKind, reason: String },
    #[error("chain dump is empty")]
    EmptyDump,
    #[error("malformed chain dump: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxKind {
    AdmissionRequest,
    AdmissionDecision,
    RssiReport,
    PositionRecord,
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TxKind::AdmissionRequest => "AdmissionRequest",
            TxKind::AdmissionDecision => "AdmissionDecision",
            TxKind::RssiReport => "RssiReport",
            TxKind::PositionRecord => "PositionRecord",
        };
        f.write_str(name)
    }
}

/// A single body entry: either a scalar rendered as a string or a per-anchor
/// reading map (anchor id to dBm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BodyValue {
    Text(String),
    Readings(BTreeMap<String, f64>),
}

impl BodyValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            BodyValue::Text(s) => Some(s),
            BodyValue::Readings(_) => None,
        }
    }

    pub fn as_readings(&self) -> Option<&BTreeMap<String, f64>> {
        match self {
            BodyValue::Readings(m) => Some(m),
            BodyValue::Text(_) => None,
        }
    }
}

impl From<&str> for BodyValue {
    fn from(s: &str) -> Self {
        BodyValue::Text(s.to_owned())
    }
}

impl From<String> for BodyValue {
    fn from(s: String) -> Self {
        BodyValue::Text(s)
    }
}

impl From<BTreeMap<String, f64>> for BodyValue {
    fn from(m: BTreeMap<String, f64>) -> Self {
        BodyValue::Readings(m)
    }
}

pub type Body = BTreeMap<String, BodyValue>;

/// Render a coordinate the way ledger bodies store it (metres, 6 decimals).
pub fn format_coord(v: f64) -> String {
    format!("{v:.6}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub kind: TxKind,
    pub device_id: String,
    pub body: Body,
}

impl Transaction {
    pub fn new(kind: TxKind, device_id: impl Into<String>, body: Body) -> Self {
        Self {
            kind,
            device_id: device_id.into(),
            body,
        }
    }

    pub fn rssi_report(device_id: impl Into<String>, rssi: BTreeMap<String, f64>) -> Self {
        let mut body = Body::new();
        body.insert("rssi".into(), rssi.into());
        Self::new(TxKind::RssiReport, device_id, body)
    }

    pub fn admission_request(device_id: impl Into<String>, rssi: BTreeMap<String, f64>) -> Self {
        let mut body = Body::new();
        body.insert("rssi".into(), rssi.into());
        Self::new(TxKind::AdmissionRequest, device_id, body)
    }

    pub fn position_record(device_id: impl Into<String>, x: f64, y: f64) -> Self {
        let mut body = Body::new();
        body.insert("x".into(), format_coord(x).into());
        body.insert("y".into(), format_coord(y).into());
        Self::new(TxKind::PositionRecord, device_id, body)
    }

    /// Decision record; `position` is omitted from the body when absent.
    pub fn admission_decision(
        device_id: impl Into<String>,
        granted: bool,
        reason: &str,
        position: Option<(f64, f64)>,
    ) -> Self {
        let mut body = Body::new();
        body.insert("granted".into(), granted.to_string().into());
        body.insert("reason".into(), reason.into());
        if let Some((x, y)) = position {
            body.insert("x".into(), format_coord(x).into());
            body.insert("y".into(), format_coord(y).into());
        }
        Self::new(TxKind::AdmissionDecision, device_id, body)
    }

    fn genesis() -> Self {
        let mut body = Body::new();
        body.insert("genesis".into(), "true".into());
        Self::new(TxKind::AdmissionDecision, "", body)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.body.get(key).and_then(BodyValue::as_text)
    }

    pub fn readings(&self, key: &str) -> Option<&BTreeMap<String, f64>> {
        self.body.get(key).and_then(BodyValue::as_readings)
    }

    /// Check the body against the schema fixed by `kind`.
    pub fn validate(&self) -> Result<(), LedgerError> {
        let fail = |reason: String| LedgerError::InvalidBody {
            kind: self.kind,
            reason,
        };
        let keys: BTreeSet<&str> = self.body.keys().map(String::as_str).collect();
        let expect_exact = |required: &[&str]| -> Result<(), LedgerError> {
            let want: BTreeSet<&str> = required.iter().copied().collect();
            if keys != want {
                return Err(fail(format!("expected keys {want:?}, found {keys:?}")));
            }
            Ok(())
        };
        let expect_coord = |key: &str| -> Result<(), LedgerError> {
            match self.text(key) {
                Some(v) if v.parse::<f64>().is_ok_and(f64::is_finite) => Ok(()),
                _ => Err(fail(format!("`{key}` must be a decimal string"))),
            }
        };
        match self.kind {
            TxKind::AdmissionRequest | TxKind::RssiReport => {
                expect_exact(&["rssi"])?;
                match self.readings("rssi") {
                    Some(m) if m.values().all(|v| v.is_finite()) => Ok(()),
                    _ => Err(fail("`rssi` must map anchor ids to finite dBm".into())),
                }
            }
            TxKind::PositionRecord => {
                expect_exact(&["x", "y"])?;
                expect_coord("x")?;
                expect_coord("y")
            }
            TxKind::AdmissionDecision => {
                if keys.contains("x") || keys.contains("y") {
                    expect_exact(&["granted", "reason", "x", "y"])?;
                    expect_coord("x")?;
                    expect_coord("y")?;
                } else {
                    expect_exact(&["granted", "reason"])?;
                }
                match self.text("granted") {
                    Some("true") | Some("false") => {}
                    _ => return Err(fail("`granted` must be \"true\" or \"false\"".into())),
                }
                match self.text("reason") {
                    Some(_) => Ok(()),
                    None => Err(fail("`reason` must be a string".into())),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Private,
    Public,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub mode: Mode,
    #[serde(default)]
    pub difficulty: u32,
}

impl ChainConfig {
    pub fn private() -> Self {
        Self {
            mode: Mode::Private,
            difficulty: 0,
        }
    }

    pub fn public(difficulty: u32) -> Self {
        Self {
            mode: Mode::Public,
            difficulty,
        }
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if self.difficulty > MAX_DIFFICULTY {
            return Err(LedgerError::DifficultyOutOfRange(self.difficulty));
        }
        Ok(())
    }

    /// Leading zeros every non-genesis block must carry.
    pub fn required_zeros(&self) -> u32 {
        match self.mode {
            Mode::Private => 0,
            Mode::Public => self.difficulty,
        }
    }
}

/// The ordered tuple a block digest is computed over.
#[derive(Debug, Clone, Copy)]
pub struct BlockFields<'a> {
    pub index: u64,
    pub timestamp: u64,
    pub prev_hash: &'a str,
    pub nonce: u64,
    pub payload: &'a Transaction,
}

/// Canonical serialization: compact JSON with keys sorted at every level.
pub fn canonical_bytes(fields: &BlockFields<'_>) -> Vec<u8> {
    // Keys are inserted in sorted order so the output does not depend on
    // whether serde_json preserves insertion order.
    let mut payload = serde_json::Map::new();
    payload.insert(
        "body".into(),
        serde_json::to_value(&fields.payload.body).expect("body is always serializable"),
    );
    payload.insert("device_id".into(), fields.payload.device_id.clone().into());
    payload.insert("kind".into(), fields.payload.kind.to_string().into());

    let mut root = serde_json::Map::new();
    root.insert("index".into(), fields.index.into());
    root.insert("nonce".into(), fields.nonce.into());
    root.insert("payload".into(), payload.into());
    root.insert("prev_hash".into(), fields.prev_hash.into());
    root.insert("timestamp".into(), fields.timestamp.into());
    serde_json::to_vec(&serde_json::Value::Object(root)).expect("value is always serializable")
}

/// Lowercase hex SHA-256 of the canonical serialization.
pub fn block_digest(fields: &BlockFields<'_>) -> String {
    hex::encode(Sha256::digest(canonical_bytes(fields)))
}

/// True if `hash` starts with at least `n` '0' hex characters.
pub fn meets_difficulty(hash: &str, n: u32) -> bool {
    let n = n as usize;
    hash.len() >= n && hash.bytes().take(n).all(|b| b == b'0')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub index: u64,
    pub timestamp: u64,
    pub prev_hash: String,
    pub nonce: u64,
    pub payload: Transaction,
    pub hash: String,
}

impl Block {
    fn fields(&self) -> BlockFields<'_> {
        BlockFields {
            index: self.index,
            timestamp: self.timestamp,
            prev_hash: &self.prev_hash,
            nonce: self.nonce,
            payload: &self.payload,
        }
    }

    pub fn compute_hash(&self) -> String {
        block_digest(&self.fields())
    }

    pub fn hash_is_valid(&self) -> bool {
        self.hash == self.compute_hash()
    }
}

/// Result of a nonce search.
#[derive(Debug, Clone)]
pub struct Mined {
    pub block: Block,
    /// Number of digests evaluated, `nonce + 1`.
    pub attempts: u128,
}

/// Search nonces 0, 1, 2, ... until the digest carries `difficulty` leading
/// hex zeros. Gives up after `16^(difficulty + 2)` attempts.
pub fn mine_block(
    index: u64,
    timestamp: u64,
    prev_hash: &str,
    payload: Transaction,
    difficulty: u32,
) -> Result<Mined, LedgerError> {
    if difficulty > MAX_DIFFICULTY {
        return Err(LedgerError::DifficultyOutOfRange(difficulty));
    }
    let limit = 16u128.pow(difficulty + 2);
    let mut nonce = 0u64;
    loop {
        let fields = BlockFields {
            index,
            timestamp,
            prev_hash,
            nonce,
            payload: &payload,
        };
        let hash = block_digest(&fields);
        if meets_difficulty(&hash, difficulty) {
            let block = Block {
                index,
                timestamp,
                prev_hash: prev_hash.to_owned(),
                nonce,
                payload,
                hash,
            };
            return Ok(Mined {
                block,
                attempts: u128::from(nonce) + 1,
            });
        }
        if u128::from(nonce) + 1 >= limit {
            return Err(LedgerError::MiningExhausted(limit));
        }
        nonce += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verification {
    pub valid: bool,
    pub first_bad_index: Option<usize>,
}

impl Verification {
    fn ok() -> Self {
        Self {
            valid: true,
            first_bad_index: None,
        }
    }

    fn bad(at: usize) -> Self {
        Self {
            valid: false,
            first_bad_index: Some(at),
        }
    }
}

/// Check a block sequence. `first_bad_index` is a position in `blocks`.
pub fn verify_blocks(blocks: &[Block], config: &ChainConfig) -> Verification {
    let Some(genesis) = blocks.first() else {
        return Verification::bad(0);
    };
    if genesis.index != 0 || genesis.prev_hash != ZERO_HASH || !genesis.hash_is_valid() {
        return Verification::bad(0);
    }
    let zeros = config.required_zeros();
    for (pos, pair) in blocks.windows(2).enumerate() {
        let (prev, block) = (&pair[0], &pair[1]);
        let at = pos + 1;
        let linked = block.index == prev.index + 1 && block.prev_hash == prev.hash;
        let worked = match config.mode {
            Mode::Private => block.nonce == 0,
            Mode::Public => meets_difficulty(&block.hash, zeros),
        };
        if !linked || !worked || !block.hash_is_valid() {
            return Verification::bad(at);
        }
    }
    Verification::ok()
}

/// Contract body: sees the committed transaction, may return a follow-up.
pub type ContractFn = Box<dyn Fn(&Transaction) -> Option<Transaction> + Send + Sync>;

/// Append outcome: the block holding the submitted transaction plus any
/// contract follow-up block.
#[derive(Debug, Clone)]
pub struct Committed {
    pub block: Block,
    pub follow_up: Option<Block>,
    /// Digests evaluated for the submitted block (1 in private mode).
    pub attempts: u128,
}

pub struct Chain {
    config: ChainConfig,
    blocks: Vec<Block>,
    clock: u64,
    contracts: HashMap<TxKind, ContractFn>,
}

impl fmt::Debug for Chain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chain")
            .field("config", &self.config)
            .field("len", &self.blocks.len())
            .field("clock", &self.clock)
            .field("contracts", &self.contracts.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Chain {
    pub fn new(config: ChainConfig) -> Result<Self, LedgerError> {
        config.validate()?;
        let payload = Transaction::genesis();
        let mut genesis = Block {
            index: 0,
            timestamp: 0,
            prev_hash: ZERO_HASH.to_owned(),
            nonce: 0,
            payload,
            hash: String::new(),
        };
        genesis.hash = genesis.compute_hash();
        Ok(Self {
            config,
            blocks: vec![genesis],
            clock: 0,
            contracts: HashMap::new(),
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Direct mutable access, for tamper experiments.
    pub fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn last(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn register_contract(&mut self, trigger: TxKind, handler: ContractFn) -> Result<(), LedgerError> {
        if self.contracts.contains_key(&trigger) {
            return Err(LedgerError::DuplicateContract(trigger));
        }
        self.contracts.insert(trigger, handler);
        Ok(())
    }

    pub fn has_contract(&self, kind: TxKind) -> bool {
        self.contracts.contains_key(&kind)
    }

    fn next_slot(&mut self) -> (u64, u64, String) {
        self.clock += 1;
        let last = self.last();
        (last.index + 1, self.clock, last.hash.clone())
    }

    fn seal(&mut self, payload: Transaction) -> Result<(Block, u128), LedgerError> {
        payload.validate()?;
        let (index, timestamp, prev_hash) = self.next_slot();
        let sealed = match self.config.mode {
            Mode::Private => {
                let mut block = Block {
                    index,
                    timestamp,
                    prev_hash,
                    nonce: 0,
                    payload,
                    hash: String::new(),
                };
                block.hash = block.compute_hash();
                (block, 1)
            }
            Mode::Public => {
                let mined = mine_block(index, timestamp, &prev_hash, payload, self.config.difficulty)?;
                (mined.block, mined.attempts)
            }
        };
        self.blocks.push(sealed.0.clone());
        Ok(sealed)
    }

    fn commit(&mut self, payload: Transaction) -> Result<Committed, LedgerError> {
        let (block, attempts) = self.seal(payload)?;
        let follow = self
            .contracts
            .get(&block.payload.kind)
            .and_then(|handler| handler(&block.payload));
        let follow_up = match follow {
            Some(tx) => Some(self.seal(tx)?.0),
            None => None,
        };
        Ok(Committed {
            block,
            follow_up,
            attempts,
        })
    }

    /// Append without work. Private mode only.
    pub fn append_private(&mut self, payload: Transaction) -> Result<Committed, LedgerError> {
        self.require(Mode::Private)?;
        self.commit(payload)
    }

    /// Mine and append at the configured difficulty. Public mode only.
    pub fn mine(&mut self, payload: Transaction) -> Result<Committed, LedgerError> {
        self.require(Mode::Public)?;
        self.commit(payload)
    }

    /// Append using whatever the chain's mode requires.
    pub fn submit(&mut self, payload: Transaction) -> Result<Committed, LedgerError> {
        self.commit(payload)
    }

    fn require(&self, expected: Mode) -> Result<(), LedgerError> {
        if self.config.mode != expected {
            return Err(LedgerError::WrongMode {
                expected,
                actual: self.config.mode,
            });
        }
        Ok(())
    }

    pub fn verify(&self) -> Verification {
        verify_blocks(&self.blocks, &self.config)
    }

    /// JSON array of blocks, fields in dump order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.blocks).expect("blocks are always serializable")
    }

    /// Rebuild a chain from a dump. The result is not verified; call
    /// [`Chain::verify`]. Contracts are not restored.
    pub fn from_json(config: ChainConfig, json: &str) -> Result<Self, LedgerError> {
        config.validate()?;
        let blocks = parse_dump(json)?;
        let clock = blocks.iter().map(|b| b.timestamp).max().unwrap_or(0);
        Ok(Self {
            config,
            blocks,
            clock,
            contracts: HashMap::new(),
        })
    }
}

pub fn parse_dump(json: &str) -> Result<Vec<Block>, LedgerError> {
    let blocks: Vec<Block> = serde_json::from_str(json).map_err(|e| LedgerError::Parse(e.to_string()))?;
    if blocks.is_empty() {
        return Err(LedgerError::EmptyDump);
    }
    Ok(blocks)
}

/// Set of device identifiers allowed through the private gate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrustList {
    entries: BTreeSet<String>,
}

impl TrustList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, device_id: impl Into<String>) -> bool {
        self.entries.insert(device_id.into())
    }

    pub fn contains(&self, device_id: &str) -> bool {
        self.entries.contains(device_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }
}

impl<S: Into<String>> FromIterator<S> for TrustList {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().map(Into::into).collect(),
        }
    }
}
