//! Hash-chained, append-only transaction log and replicas that re-execute it.
//!
//! ```text
//! block_0.hash = SHA256(canon{index: 0, prev_hash: 00..00, txs: []})
//! block_i.hash = SHA256(canon{index: i, prev_hash: block_{i-1}.hash, txs})
//! ```
//!
//! Canonical encoding is compact JSON with lexicographically sorted keys, so
//! equal values always produce equal bytes. The same encoding is used for the
//! block-lines dump, one block per line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::contracts::{ContractError, WorldState};
use crate::policy::{PolicyParams, Seconds};
use crate::PeerId;

pub const DIGEST_LEN: usize = 32;

/// Maximum number of transactions sealed into one block.
pub const MAX_BLOCK_TXS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("argument `{0}` is not a string, integer, boolean or flat list of those")]
    UnencodableArgument(String),
    #[error("nothing pending to seal")]
    EmptyPending,
    #[error("expected block {expected}, got block {got}")]
    HeightMismatch { expected: u64, got: u64 },
    #[error("invalid block {index}: {reason}")]
    InvalidBlock { index: u64, reason: String },
    #[error("chain diverges from applied prefix at block {0}")]
    ForkDetected(u64),
    #[error("chain has {chain_len} blocks but replica already applied {applied}")]
    ChainBehind { chain_len: u64, applied: u64 },
    #[error("chain fails verification: {0}")]
    Tampered(TamperReport),
}

/// 32-byte SHA-256 digest, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|e| e.to_string())?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Target of a transaction: the register contract, the judge, or one of the
/// role access-control contracts by name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContractId {
    Register,
    Judge,
    Acc(String),
}

impl ContractId {
    pub fn as_str(&self) -> &str {
        match self {
            ContractId::Register => "RC",
            ContractId::Judge => "JC",
            ContractId::Acc(name) => name,
        }
    }
}

impl From<&str> for ContractId {
    fn from(s: &str) -> Self {
        match s {
            "RC" => ContractId::Register,
            "JC" => ContractId::Judge,
            other => ContractId::Acc(other.to_owned()),
        }
    }
}

impl Serialize for ContractId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ContractId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(ContractId::from(String::deserialize(d)?.as_str()))
    }
}

/// Argument map of a contract call. Keys are kept sorted.
pub type Args = Map<String, Value>;

/// One recorded contract call, including its outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub seq: u64,
    pub caller: PeerId,
    pub contract: ContractId,
    pub method: String,
    pub args: Args,
    pub timestamp: Seconds,
}

fn check_scalar(v: &Value) -> bool {
    match v {
        Value::String(_) | Value::Bool(_) => true,
        Value::Number(n) => n.is_i64() || n.is_u64(),
        _ => false,
    }
}

fn check_args(args: &Args) -> Result<(), LedgerError> {
    for (key, v) in args {
        let ok = match v {
            Value::Array(items) => items.iter().all(check_scalar),
            other => check_scalar(other),
        };
        if !ok {
            return Err(LedgerError::UnencodableArgument(key.clone()));
        }
    }
    Ok(())
}

/// Compact JSON with sorted keys. Going through `Value` sorts struct fields as
/// well as map keys.
pub(crate) fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("in-memory value serializes");
    serde_json::to_vec(&v).expect("json value serializes")
}

pub fn canonical_encode(tx: &Transaction) -> Result<Vec<u8>, LedgerError> {
    check_args(&tx.args)?;
    Ok(canonical_json(tx))
}

#[derive(Serialize)]
struct BlockPreimage<'a> {
    index: u64,
    prev_hash: Digest,
    txs: &'a [Transaction],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub txs: Vec<Transaction>,
    pub hash: Digest,
}

impl Block {
    pub fn genesis() -> Self {
        let hash = Self::compute_hash(0, &Digest::ZERO, &[]).expect("empty block encodes");
        Block {
            index: 0,
            prev_hash: Digest::ZERO,
            txs: Vec::new(),
            hash,
        }
    }

    pub fn compute_hash(
        index: u64,
        prev_hash: &Digest,
        txs: &[Transaction],
    ) -> Result<Digest, LedgerError> {
        for tx in txs {
            check_args(&tx.args)?;
        }
        let pre = BlockPreimage {
            index,
            prev_hash: *prev_hash,
            txs,
        };
        Ok(Digest::of(&canonical_json(&pre)))
    }

    /// Whether the stored hash matches the contents.
    pub fn hash_is_valid(&self) -> bool {
        matches!(Self::compute_hash(self.index, &self.prev_hash, &self.txs), Ok(h) if h == self.hash)
    }

    pub fn to_line(&self) -> String {
        String::from_utf8(canonical_json(self)).expect("json is utf-8")
    }
}

pub fn seal_block(pending: Vec<Transaction>, tip: &Block) -> Result<Block, LedgerError> {
    if pending.is_empty() {
        return Err(LedgerError::EmptyPending);
    }
    let index = tip.index + 1;
    let hash = Block::compute_hash(index, &tip.hash, &pending)?;
    Ok(Block {
        index,
        prev_hash: tip.hash,
        txs: pending,
        hash,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TamperKind {
    /// Line is not a canonically encoded block.
    Malformed,
    BadIndex,
    BadHash,
    BadLink,
    BadGenesis,
    SeqOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TamperReport {
    pub index: u64,
    pub kind: TamperKind,
}

impl fmt::Display for TamperReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {}: {:?}", self.index, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    pub fn new() -> Self {
        Chain {
            blocks: vec![Block::genesis()],
        }
    }

    /// Wraps blocks without checking them; see [`verify_chain`].
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Chain { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain holds at least genesis")
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.blocks
            .iter()
            .rev()
            .find_map(|b| b.txs.last().map(|tx| tx.seq))
    }

    /// Seals `pending` onto the tip and returns the new block's index.
    pub fn append(&mut self, pending: Vec<Transaction>) -> Result<u64, LedgerError> {
        let block = seal_block(pending, self.tip())?;
        let index = block.index;
        self.blocks.push(block);
        Ok(index)
    }

    pub fn to_block_lines(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&b.to_line());
            out.push('\n');
        }
        out
    }

    /// Parses a block-lines dump and verifies it. A line that is not the
    /// canonical encoding of a block is reported at its own index.
    pub fn from_block_lines(bytes: &[u8]) -> Result<Chain, TamperReport> {
        let mut blocks = Vec::new();
        let mut rest = bytes;
        let mut malformed = None;
        while !rest.is_empty() {
            let index = blocks.len() as u64;
            let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
                malformed = Some(index);
                break;
            };
            let line = &rest[..nl];
            rest = &rest[nl + 1..];
            match parse_block_line(line) {
                Some(b) => blocks.push(b),
                None => {
                    malformed = Some(index);
                    break;
                }
            }
        }
        let chain = Chain { blocks };
        verify_chain(&chain)?;
        match malformed {
            Some(index) => Err(TamperReport {
                index,
                kind: TamperKind::Malformed,
            }),
            None if chain.is_empty() => Err(TamperReport {
                index: 0,
                kind: TamperKind::Malformed,
            }),
            None => Ok(chain),
        }
    }
}

fn parse_block_line(line: &[u8]) -> Option<Block> {
    let block: Block = serde_json::from_slice(line).ok()?;
    // reject anything that is not byte-for-byte canonical
    (canonical_json(&block) == line).then_some(block)
}

/// Checks genesis, indices, hashes, hash links and transaction ordering.
/// Reports the lowest offending block.
pub fn verify_chain(chain: &Chain) -> Result<(), TamperReport> {
    let report = |index: u64, kind| Err(TamperReport { index, kind });
    let mut last_seq: Option<u64> = None;
    for (i, block) in chain.blocks.iter().enumerate() {
        let i = i as u64;
        if block.index != i {
            return report(i, TamperKind::BadIndex);
        }
        if !block.hash_is_valid() {
            return report(i, TamperKind::BadHash);
        }
        if i == 0 {
            if block.prev_hash != Digest::ZERO || !block.txs.is_empty() {
                return report(0, TamperKind::BadGenesis);
            }
        } else if block.prev_hash != chain.blocks[i as usize - 1].hash {
            return report(i, TamperKind::BadLink);
        }
        for tx in &block.txs {
            if last_seq.is_some_and(|s| tx.seq <= s) {
                return report(i, TamperKind::SeqOrder);
            }
            last_seq = Some(tx.seq);
        }
    }
    Ok(())
}

/// A node that re-executes sealed blocks against its own contract state.
#[derive(Debug, Clone)]
pub struct Replica {
    pub id: String,
    applied: Vec<Digest>,
    last_seq: Option<u64>,
    state: WorldState,
}

impl Replica {
    /// A replica with nothing applied; the first block it accepts is genesis.
    pub fn new(id: impl Into<String>, params: PolicyParams) -> Self {
        Replica {
            id: id.into(),
            applied: Vec::new(),
            last_seq: None,
            state: WorldState::new(params),
        }
    }

    /// Index of the last applied block.
    pub fn applied_height(&self) -> Option<u64> {
        (self.applied.len() as u64).checked_sub(1)
    }

    pub fn applied_hashes(&self) -> &[Digest] {
        &self.applied
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn state_dump(&self) -> String {
        self.state.canonical_dump()
    }

    pub fn apply_block(&mut self, block: &Block) -> Result<(), LedgerError> {
        let expected = self.applied.len() as u64;
        if block.index != expected {
            return Err(LedgerError::HeightMismatch {
                expected,
                got: block.index,
            });
        }
        let invalid = |reason: String| LedgerError::InvalidBlock {
            index: block.index,
            reason,
        };
        if !block.hash_is_valid() {
            return Err(invalid("hash does not match contents".into()));
        }
        let prev = self.applied.last().copied().unwrap_or(Digest::ZERO);
        if block.prev_hash != prev {
            return Err(invalid("prev_hash does not link to applied tip".into()));
        }
        if block.index == 0 && !block.txs.is_empty() {
            return Err(invalid("genesis carries transactions".into()));
        }

        let mut next = self.state.clone();
        let mut last_seq = self.last_seq;
        for tx in &block.txs {
            if last_seq.is_some_and(|s| tx.seq <= s) {
                return Err(invalid(format!("transaction seq {} out of order", tx.seq)));
            }
            last_seq = Some(tx.seq);
            next.replay_transaction(tx)
                .map_err(|e: ContractError| invalid(format!("tx {}: {e}", tx.seq)))?;
        }
        self.state = next;
        self.last_seq = last_seq;
        self.applied.push(block.hash);
        Ok(())
    }

    /// Applies every block of `chain` past the replica's applied prefix.
    pub fn sync(&mut self, chain: &Chain) -> Result<(), LedgerError> {
        verify_chain(chain).map_err(LedgerError::Tampered)?;
        if chain.len() < self.applied.len() {
            return Err(LedgerError::ChainBehind {
                chain_len: chain.len() as u64,
                applied: self.applied.len() as u64,
            });
        }
        if let Some(i) = self
            .applied
            .iter()
            .zip(chain.blocks())
            .position(|(mine, theirs)| *mine != theirs.hash)
        {
            return Err(LedgerError::ForkDetected(i as u64));
        }
        for block in &chain.blocks()[self.applied.len()..] {
            self.apply_block(block)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn tx(seq: u64, method: &str, ts: Seconds) -> Transaction {
        let mut args = Args::new();
        args.insert("b".into(), json!(1));
        args.insert("a".into(), json!("x"));
        Transaction {
            seq,
            caller: PeerId(7),
            contract: ContractId::Register,
            method: method.into(),
            args,
            timestamp: ts,
        }
    }

    #[test]
    fn genesis_hash_matches_independent_digest() {
        // sha256 of {"index":0,"prev_hash":"00…00","txs":[]}, computed with python hashlib
        assert_eq!(
            Block::genesis().hash.to_hex(),
            "0d68e7e31c4f781b4ec7561d5ca9708cb8e35d5323f835947545532f4c474755"
        );
    }

    #[test]
    fn encoding_is_sorted_and_compact() {
        let t = tx(1, "m", 5);
        let bytes = canonical_encode(&t).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            r#"{"args":{"a":"x","b":1},"caller":7,"contract":"RC","method":"m","seq":1,"timestamp":5}"#
        );
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let a = tx(1, "m", 5);
        let mut b = a.clone();
        let mut args = Args::new();
        args.insert("a".into(), json!("x"));
        args.insert("b".into(), json!(1));
        b.args = args;
        assert_eq!(canonical_encode(&a).unwrap(), canonical_encode(&b).unwrap());

        let mut c = a.clone();
        c.timestamp += 1;
        assert_ne!(canonical_encode(&a).unwrap(), canonical_encode(&c).unwrap());
    }

    #[test]
    fn nested_arguments_are_rejected() {
        let mut t = tx(1, "m", 0);
        t.args.insert("flat".into(), json!([1, "two", true]));
        assert!(canonical_encode(&t).is_ok());
        t.args.insert("nested".into(), json!([[1]]));
        assert_eq!(
            canonical_encode(&t),
            Err(LedgerError::UnencodableArgument("nested".into()))
        );
        let mut t = tx(1, "m", 0);
        t.args.insert("obj".into(), json!({"k": 1}));
        assert!(canonical_encode(&t).is_err());
        let mut t = tx(1, "m", 0);
        t.args.insert("f".into(), json!(1.5));
        assert!(canonical_encode(&t).is_err());
    }

    #[test]
    fn sealing_links_and_is_deterministic() {
        let g = Block::genesis();
        let b1 = seal_block(vec![tx(0, "m", 1)], &g).unwrap();
        assert_eq!(b1.index, 1);
        assert_eq!(b1.prev_hash, g.hash);
        let again = seal_block(vec![tx(0, "m", 1)], &g).unwrap();
        assert_eq!(b1.hash, again.hash);
        assert_eq!(seal_block(vec![], &g), Err(LedgerError::EmptyPending));
    }

    #[test]
    fn reordered_transactions_change_the_hash() {
        let g = Block::genesis();
        let a = seal_block(vec![tx(0, "m", 1), tx(1, "n", 1)], &g).unwrap();
        let b = seal_block(vec![tx(1, "n", 1), tx(0, "m", 1)], &g).unwrap();
        assert_ne!(a.hash, b.hash);

        // hand-built preimage
        let t0 = String::from_utf8(canonical_encode(&tx(0, "m", 1)).unwrap()).unwrap();
        let t1 = String::from_utf8(canonical_encode(&tx(1, "n", 1)).unwrap()).unwrap();
        let pre = format!(
            r#"{{"index":1,"prev_hash":"{}","txs":[{},{}]}}"#,
            g.hash.to_hex(),
            t0,
            t1
        );
        assert_eq!(a.hash, Digest::of(pre.as_bytes()));
    }

    fn chain_of(n: u64) -> Chain {
        let mut c = Chain::new();
        for i in 0..n {
            c.append(vec![tx(i, "m", i)]).unwrap();
        }
        c
    }

    #[test]
    fn verify_examples() {
        assert_eq!(verify_chain(&Chain::new()), Ok(()));
        assert_eq!(verify_chain(&chain_of(9)), Ok(()));

        let mut blocks = chain_of(4).blocks().to_vec();
        blocks[2].txs[0].method.push('!');
        let report = verify_chain(&Chain::from_blocks(blocks)).unwrap_err();
        assert_eq!(report.index, 2);
        assert_eq!(report.kind, TamperKind::BadHash);
    }

    #[test]
    fn relinked_tamper_is_caught_at_the_link() {
        let mut blocks = chain_of(4).blocks().to_vec();
        blocks[2].txs[0].timestamp = 99;
        blocks[2].hash = Block::compute_hash(2, &blocks[2].prev_hash, &blocks[2].txs).unwrap();
        let report = verify_chain(&Chain::from_blocks(blocks)).unwrap_err();
        assert_eq!(report.index, 3);
        assert_eq!(report.kind, TamperKind::BadLink);
    }

    #[test]
    fn block_lines_round_trip_and_reject_noncanonical() {
        let c = chain_of(3);
        let text = c.to_block_lines();
        assert_eq!(Chain::from_block_lines(text.as_bytes()).unwrap(), c);

        let spaced = text.replacen("\"index\":1", "\"index\": 1", 1);
        let report = Chain::from_block_lines(spaced.as_bytes()).unwrap_err();
        assert_eq!(
            report,
            TamperReport {
                index: 1,
                kind: TamperKind::Malformed
            }
        );

        let truncated = &text.as_bytes()[..text.len() - 1];
        let report = Chain::from_block_lines(truncated).unwrap_err();
        assert_eq!(report.index, 3);
        assert!(Chain::from_block_lines(b"").is_err());
    }
}
