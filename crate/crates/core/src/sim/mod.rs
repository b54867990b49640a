//! Deterministic scenario runner.
//!
//! Events run in file order on a single thread. Every contract call becomes a
//! ledger transaction; pending transactions are sealed after each event, or
//! earlier once a block is full. The only clock is the event timestamp.

mod scenario;

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub use scenario::{Event, EventKind, Scenario, ScenarioConfig, ScenarioError};

use crate::contracts::{
    bootstrap_calls, AccessDecision, AccessRequest, CallResult, ContractCall, ContractError,
    WorldState,
};
use crate::ledger::{
    canonical_json, Chain, Digest, LedgerError, Replica, Transaction, MAX_BLOCK_TXS,
};
use crate::overlay::{NetworkState, OverlayError};
use crate::policy::{PolicyParams, Seconds};
use crate::PeerId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("bootstrap failed: {0}")]
    Bootstrap(StepError),
    #[error("event {index} failed: {source}")]
    Event { index: usize, source: StepError },
    #[error("malformed trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub index: usize,
    pub time: Seconds,
    pub actor: Option<PeerId>,
    pub operation: String,
    pub outcome: String,
    /// Block holding the event's first transaction.
    pub block_index: Option<u64>,
    pub first_seq: Option<u64>,
    pub tx_count: usize,
    /// Head that proposed the block sealed at the end of this event.
    pub proposer: Option<PeerId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSummary {
    pub scenario: String,
    pub seed: u64,
    pub events: usize,
    pub blocks: usize,
    pub chain_tip: Digest,
    pub state_digest: Digest,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "line", rename_all = "snake_case")]
enum TraceLine {
    Event(TraceEvent),
    Summary(TraceSummary),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub summary: TraceSummary,
}

impl Trace {
    /// One canonical JSON object per line; the summary comes last.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            push_line(&mut out, &TraceLine::Event(e.clone()));
        }
        push_line(&mut out, &TraceLine::Summary(self.summary.clone()));
        out
    }

    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut events = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| SimError::Trace {
                line: i + 1,
                message,
            };
            if summary.is_some() {
                return Err(err("content after summary".into()));
            }
            match serde_json::from_str(line).map_err(|e| err(e.to_string()))? {
                TraceLine::Event(e) => events.push(e),
                TraceLine::Summary(s) => summary = Some(s),
            }
        }
        let summary = summary.ok_or(SimError::Trace {
            line: text.lines().count(),
            message: "missing summary line".into(),
        })?;
        Ok(Trace { events, summary })
    }
}

fn push_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(std::str::from_utf8(&canonical_json(value)).expect("json is utf-8"));
    out.push('\n');
}

fn serialize_ratio<S: Serializer>(r: &Option<Ratio<u64>>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.collect_str(r),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub access_requests: u64,
    pub granted: u64,
    pub denied_static: u64,
    pub denied_dynamic: u64,
    pub denied_penalty: u64,
    pub penalties_by_kind: BTreeMap<String, u64>,
    pub lookups: u64,
    pub route_hops_total: u64,
    /// Exact mean, rendered as `p/q`; absent without lookups.
    #[serde(serialize_with = "serialize_ratio")]
    pub mean_route_hops: Option<Ratio<u64>>,
    pub blocks_sealed: u64,
}

impl Metrics {
    pub fn denied(&self) -> u64 {
        self.denied_static + self.denied_dynamic + self.denied_penalty
    }

    pub fn to_json(&self) -> String {
        String::from_utf8(canonical_json(self)).expect("json is utf-8")
    }

    fn note_penalty(&mut self, kind: &str) {
        *self.penalties_by_kind.entry(kind.to_owned()).or_default() += 1;
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub metrics: Metrics,
    pub chain: Chain,
    pub state_dump: String,
    pub topology_dump: String,
}

struct Engine {
    seed: u64,
    overlay: NetworkState,
    world: WorldState,
    chain: Chain,
    pending: Vec<Transaction>,
    next_seq: u64,
    metrics: Metrics,
    last_proposer: Option<PeerId>,
}

impl Engine {
    fn new(scenario: &Scenario, seed: u64) -> Result<Self, StepError> {
        let overlay = NetworkState::build(scenario.n, &scenario.members)?;
        Ok(Engine {
            seed,
            overlay,
            world: WorldState::new(scenario.config.params),
            chain: Chain::new(),
            pending: Vec::new(),
            next_seq: 0,
            metrics: Metrics::default(),
            last_proposer: None,
        })
    }

    /// Round-robin over occupied ring positions, offset by the seed.
    fn proposer(&self, block_index: u64) -> Option<PeerId> {
        let heads: Vec<PeerId> = self.overlay.heads().iter().flatten().copied().collect();
        if heads.is_empty() {
            return None;
        }
        let k = (self.seed.wrapping_add(block_index) % heads.len() as u64) as usize;
        Some(heads[k])
    }

    fn seal(&mut self) -> Result<(), StepError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let index = self.chain.tip().index + 1;
        self.last_proposer = self.proposer(index);
        self.chain.append(std::mem::take(&mut self.pending))?;
        Ok(())
    }

    fn call(
        &mut self,
        caller: PeerId,
        call: ContractCall,
        now: Seconds,
    ) -> Result<CallResult, StepError> {
        let (tx, result) = self
            .world
            .execute_recorded(self.next_seq, caller, &call, now)?;
        self.next_seq += 1;
        self.pending.push(tx);
        if self.pending.len() >= MAX_BLOCK_TXS {
            self.seal()?;
        }
        Ok(result)
    }

    fn bootstrap(&mut self) -> Result<(), StepError> {
        let deployer = self
            .overlay
            .head_of(0)
            .expect("fresh network has all heads");
        for call in bootstrap_calls() {
            self.call(deployer, call, 0)?;
        }
        let roles: Vec<_> = self.overlay.peers().map(|p| (p.id, p.role)).collect();
        for (subject, role) in roles {
            self.call(subject, ContractCall::AssignRole { subject, role }, 0)?;
        }
        self.seal()
    }

    fn step(&mut self, index: usize, ev: &Event) -> Result<TraceEvent, StepError> {
        let first_seq = self.next_seq;
        let blocks_before = self.chain.len();
        self.last_proposer = None;
        let now = ev.time;

        let outcome = match &ev.kind {
            EventKind::Join { peer, group } => {
                let change = self.overlay.join(*peer, *group)?;
                self.call(
                    *peer,
                    ContractCall::AssignRole {
                        subject: *peer,
                        role: change.role,
                    },
                    now,
                )?;
                format!("joined group {group} as {}", change.role.as_str())
            }
            EventKind::Leave { peer } => {
                let changes = self.overlay.leave(*peer)?;
                self.call(*peer, ContractCall::SubjectLeave { subject: *peer }, now)?;
                let mut out = String::from("left");
                for c in changes {
                    self.call(
                        c.peer,
                        ContractCall::AssignRole {
                            subject: c.peer,
                            role: c.role,
                        },
                        now,
                    )?;
                    out.push_str(&format!("; {} promoted to {}", c.peer, c.role.as_str()));
                }
                out
            }
            EventKind::AccessRequest { peer, target } => {
                let group = self
                    .overlay
                    .peer(*peer)
                    .ok_or(OverlayError::UnknownPeer(*peer))?
                    .group;
                let custodian = self.overlay.head_of(group).unwrap_or(*peer);
                let req = AccessRequest {
                    subject: *peer,
                    target: *target,
                    custodian,
                };
                let result = self.call(*peer, ContractCall::AccessRequest(req), now)?;
                if let CallResult::Access(o) = &result {
                    let m = &mut self.metrics;
                    m.access_requests += 1;
                    match o.decision {
                        AccessDecision::Granted => m.granted += 1,
                        AccessDecision::DeniedStatic => m.denied_static += 1,
                        AccessDecision::DeniedDynamic => m.denied_dynamic += 1,
                        AccessDecision::DeniedPenalty => m.denied_penalty += 1,
                    }
                    if let Some(p) = o.penalty {
                        m.note_penalty(p.kind());
                    }
                }
                result.summary()
            }
            EventKind::ReportMisbehavior {
                reporter,
                offender,
                event,
                detail,
            } => {
                let call = ContractCall::ReportMisbehavior {
                    object: *reporter,
                    subject: *offender,
                    event: *event,
                    detail: detail.clone(),
                };
                let result = self.call(*reporter, call, now)?;
                if let CallResult::Judged(p) = &result {
                    self.metrics.note_penalty(p.kind());
                }
                result.summary()
            }
            EventKind::Lookup {
                peer,
                resource_type,
            } => {
                let route = self.overlay.route_lookup(*peer, *resource_type)?;
                self.metrics.lookups += 1;
                self.metrics.route_hops_total += route.hop_count() as u64;
                let path: Vec<String> = route.hops.iter().map(|p| p.0.to_string()).collect();
                format!("hops={} path={}", route.hop_count(), path.join(">"))
            }
            EventKind::AdvanceOnly => "advanced".into(),
        };
        self.seal()?;

        let tx_count = (self.next_seq - first_seq) as usize;
        let block_index = (tx_count > 0).then(|| {
            self.chain.blocks()[blocks_before - 1..]
                .iter()
                .find(|b| b.txs.iter().any(|t| t.seq == first_seq))
                .expect("event transactions are sealed")
                .index
        });
        Ok(TraceEvent {
            index,
            time: ev.time,
            actor: ev.kind.actor(),
            operation: ev.kind.name().to_owned(),
            outcome,
            block_index,
            first_seq: (tx_count > 0).then_some(first_seq),
            tx_count,
            proposer: self.last_proposer,
        })
    }
}

/// Runs a scenario with its own seed.
pub fn run(scenario: &Scenario) -> Result<RunOutput, SimError> {
    run_with_seed(scenario, scenario.config.seed)
}

pub fn run_with_seed(scenario: &Scenario, seed: u64) -> Result<RunOutput, SimError> {
    let mut engine = Engine::new(scenario, seed).map_err(SimError::Bootstrap)?;
    engine.bootstrap().map_err(SimError::Bootstrap)?;

    let mut events = Vec::with_capacity(scenario.events.len());
    for (index, ev) in scenario.events.iter().enumerate() {
        let t = engine
            .step(index, ev)
            .map_err(|source| SimError::Event { index, source })?;
        events.push(t);
    }

    let mut metrics = engine.metrics;
    metrics.blocks_sealed = engine.chain.len() as u64 - 1;
    metrics.mean_route_hops =
        (metrics.lookups > 0).then(|| Ratio::new(metrics.route_hops_total, metrics.lookups));

    let state_dump = engine.world.canonical_dump();
    let summary = TraceSummary {
        scenario: scenario.name.clone(),
        seed,
        events: events.len(),
        blocks: engine.chain.len(),
        chain_tip: engine.chain.tip().hash,
        state_digest: Digest::of(state_dump.as_bytes()),
    };
    Ok(RunOutput {
        trace: Trace { events, summary },
        metrics,
        topology_dump: engine.overlay.topology_dump(),
        chain: engine.chain,
        state_dump,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayVerdict {
    Ok,
    /// First trace line that differs from re-execution. An index equal to the
    /// number of events points at the summary.
    Divergence(usize),
}

impl fmt::Display for ReplayVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayVerdict::Ok => f.write_str("ok"),
            ReplayVerdict::Divergence(i) => write!(f, "divergence at trace line {i}"),
        }
    }
}

/// Re-executes the scenario with the trace's seed and compares event by
/// event, then the summary.
pub fn replay(trace: &Trace, scenario: &Scenario) -> Result<(ReplayVerdict, RunOutput), SimError> {
    let fresh = run_with_seed(scenario, trace.summary.seed)?;
    let verdict = compare_traces(trace, &fresh.trace);
    Ok((verdict, fresh))
}

pub fn compare_traces(recorded: &Trace, fresh: &Trace) -> ReplayVerdict {
    let first_diff = recorded
        .events
        .iter()
        .zip(&fresh.events)
        .position(|(a, b)| a != b);
    if let Some(i) = first_diff {
        return ReplayVerdict::Divergence(i);
    }
    if recorded.events.len() != fresh.events.len() {
        return ReplayVerdict::Divergence(recorded.events.len().min(fresh.events.len()));
    }
    if recorded.summary != fresh.summary {
        return ReplayVerdict::Divergence(recorded.events.len());
    }
    ReplayVerdict::Ok
}

/// Syncs `count` fresh replicas from `chain`, one thread each.
pub fn replicate(
    chain: &Chain,
    params: PolicyParams,
    count: usize,
) -> Result<Vec<Replica>, LedgerError> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..count)
            .map(|i| {
                scope.spawn(move || {
                    let mut r = Replica::new(format!("replica-{i}"), params);
                    r.sync(chain).map(|()| r)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica thread panicked"))
            .collect()
    })
}

/// Checks that every traced transaction sits in the block the trace names.
/// Returns the first inconsistent event index.
pub fn check_trace_chain(trace: &Trace, chain: &Chain) -> Result<(), usize> {
    for e in &trace.events {
        let ok = match (e.block_index, e.first_seq) {
            (None, None) => e.tx_count == 0,
            (Some(b), Some(seq)) => chain.blocks().get(b as usize).is_some_and(|block| {
                block
                    .txs
                    .iter()
                    .any(|tx| tx.seq == seq && tx.timestamp == e.time)
            }),
            _ => false,
        };
        if !ok {
            return Err(e.index);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "{\"scenario\":\"t\",\"n\":3,\"members\":[2,2,2]}\n";

    fn scenario(body: &str) -> Scenario {
        Scenario::parse(&format!("{HEADER}{body}")).unwrap()
    }

    #[test]
    fn single_grant() {
        let s = scenario("{\"time\":1,\"kind\":\"access_request\",\"peer\":0,\"resource\":\"GlobalResourceTable\",\"action\":\"Edit\"}");
        let out = run(&s).unwrap();
        assert_eq!(out.metrics.granted, 1);
        assert_eq!(out.metrics.access_requests, 1);
        assert_eq!(out.trace.events[0].outcome, "Granted");
        assert_eq!(
            out.trace.events[0].block_index,
            Some(out.chain.len() as u64 - 1)
        );
    }

    #[test]
    fn burst_then_ban() {
        // peer 2 is a regular member of group 0
        let mut body = String::new();
        for t in [10, 20, 30, 40] {
            body.push_str(&format!("{{\"time\":{t},\"kind\":\"access_request\",\"peer\":2,\"resource\":\"GlobalResourceTable\",\"action\":\"View\"}}\n"));
        }
        let out = run(&scenario(&body)).unwrap();
        assert_eq!(out.metrics.denied_static, 3);
        assert_eq!(out.metrics.denied_dynamic, 1);
        assert_eq!(out.metrics.penalties_by_kind.get("TimedBan"), Some(&1));
        assert_eq!(
            out.trace.events[3].outcome,
            "DeniedDynamic TooManyAccessAttempts TimedBan(86400s)"
        );
    }

    #[test]
    fn runs_are_byte_stable_and_replay() {
        let s = Scenario::generate(11, 4, &[2; 4], 120);
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
        assert_eq!(a.chain.to_block_lines(), b.chain.to_block_lines());
        assert_eq!(a.metrics, b.metrics);

        let parsed = Trace::parse(&a.trace.to_jsonl()).unwrap();
        assert_eq!(parsed, a.trace);
        assert_eq!(replay(&parsed, &s).unwrap().0, ReplayVerdict::Ok);
        assert_eq!(check_trace_chain(&a.trace, &a.chain), Ok(()));
        let m = &a.metrics;
        assert_eq!(m.granted + m.denied(), m.access_requests);
    }

    #[test]
    fn flipped_outcome_is_a_divergence() {
        let s = Scenario::generate(3, 3, &[2; 3], 40);
        let out = run(&s).unwrap();
        let mut trace = out.trace.clone();
        trace.events[17].outcome.push('!');
        assert_eq!(replay(&trace, &s).unwrap().0, ReplayVerdict::Divergence(17));

        let mut trace = out.trace.clone();
        trace.summary.state_digest = Digest::ZERO;
        assert_eq!(replay(&trace, &s).unwrap().0, ReplayVerdict::Divergence(40));
    }

    #[test]
    fn replicas_agree_with_sequencer() {
        let s = Scenario::generate(5, 4, &[2; 4], 80);
        let out = run(&s).unwrap();
        let replicas = replicate(&out.chain, s.config.params, 3).unwrap();
        for r in &replicas {
            assert_eq!(r.state_dump(), out.state_dump);
        }
    }

    #[test]
    fn seed_rotates_proposers_only() {
        let s = Scenario::generate(2, 3, &[1; 3], 30);
        let a = run_with_seed(&s, 0).unwrap();
        let b = run_with_seed(&s, 1).unwrap();
        assert_eq!(a.chain, b.chain);
        assert_ne!(a.trace.events, b.trace.events);
    }
}
