//! Register, judge and role access-control contracts as deterministic state
//! machines.
//!
//! All contract state lives in [`WorldState`]. Every mutation goes through a
//! [`ContractCall`]; the sequencer executes a call, records the call and its
//! result as a ledger [`Transaction`], and replicas re-execute the recorded
//! call and check they reach the same result.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::ledger::{canonical_json, Args, ContractId, Transaction};
use crate::policy::{
    communication_allowed, detect_attempt_burst, response_with, static_permission, Action,
    CommTarget, Decision, Penalty, PolicyParams, ResourceKind, Role, Seconds, SecurityEvent,
};
use crate::PeerId;

pub const PRIMARY_HEAD_ACC: &str = "Primary Group Head Role ACC";
pub const SECONDARY_HEAD_ACC: &str = "Secondary Group Head Role ACC";
pub const REGULAR_MEMBER_ACC: &str = "Regular Member Role ACC";
pub const JUDGE_CONTRACT: &str = "Judge Contract";

pub const ADDRESS_LEN: usize = 20;

/// Prefix of argument keys that carry a call's result rather than its input.
const RESULT_PREFIX: &str = "result";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("method `{0}` is already registered")]
    DuplicateMethodName(String),
    #[error("malformed contract address `{0}`")]
    MalformedAddress(String),
    #[error("method `{0}` not found")]
    NotFound(String),
    #[error("{caller} is not the creator of `{method}`")]
    NotCreator { method: String, caller: PeerId },
    #[error("unknown subject {0}")]
    UnknownSubject(PeerId),
    #[error("subject {0} is not currently in the network")]
    SubjectAbsent(PeerId),
    #[error("misbehavior record is already judged")]
    AlreadyJudged,
    #[error("no registered contract for `{0}`")]
    NoReferenceContract(String),
    #[error("malformed call: {0}")]
    BadCall(String),
    #[error(
        "replayed result differs from recorded result: recorded {recorded}, computed {computed}"
    )]
    ResultMismatch { recorded: String, computed: String },
}

pub type Result<T, E = ContractError> = std::result::Result<T, E>;

/// Reference ACC handed out by the register contract for a subject role.
pub fn reference_acc_for(role: Role) -> &'static str {
    match role {
        Role::PrimaryGroupHead => PRIMARY_HEAD_ACC,
        Role::SecondaryGroupHead => SECONDARY_HEAD_ACC,
        Role::RegularMember => REGULAR_MEMBER_ACC,
    }
}

/// 20-byte contract address, written as `0x` followed by 40 lowercase hex digits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScAddress(pub [u8; ADDRESS_LEN]);

impl ScAddress {
    /// Deterministic address for a contract name, used when deploying the
    /// built-in contracts.
    pub fn derive(name: &str) -> Self {
        let digest = crate::ledger::Digest::of(name.as_bytes());
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&digest.0[..ADDRESS_LEN]);
        ScAddress(out)
    }
}

impl FromStr for ScAddress {
    type Err = ContractError;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.strip_prefix("0x").unwrap_or(s);
        let mut out = [0u8; ADDRESS_LEN];
        hex::decode_to_slice(digits, &mut out)
            .map_err(|_| ContractError::MalformedAddress(s.to_owned()))?;
        Ok(ScAddress(out))
    }
}

impl fmt::Display for ScAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for ScAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScAddress({self})")
    }
}

impl Serialize for ScAddress {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScAddress {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// One row of the register contract's lookup table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method_name: String,
    pub subject: String,
    pub object: String,
    pub sc_name: String,
    pub creator: PeerId,
    pub sc_address: ScAddress,
}

impl MethodRecord {
    pub fn new(
        method_name: impl Into<String>,
        subject: impl Into<String>,
        object: impl Into<String>,
        sc_name: impl Into<String>,
        creator: PeerId,
        sc_address: &str,
    ) -> Result<Self> {
        Ok(MethodRecord {
            method_name: method_name.into(),
            subject: subject.into(),
            object: object.into(),
            sc_name: sc_name.into(),
            creator,
            sc_address: sc_address.parse()?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupTable {
    rows: BTreeMap<String, MethodRecord>,
}

impl LookupTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &MethodRecord> {
        self.rows.values()
    }

    /// Adds a row. The stored creator is always the caller.
    pub fn method_register(&mut self, caller: PeerId, mut record: MethodRecord) -> Result<()> {
        if self.rows.contains_key(&record.method_name) {
            return Err(ContractError::DuplicateMethodName(record.method_name));
        }
        record.creator = caller;
        self.rows.insert(record.method_name.clone(), record);
        Ok(())
    }

    fn owned_row(&mut self, caller: PeerId, method_name: &str) -> Result<&mut MethodRecord> {
        let row = self
            .rows
            .get_mut(method_name)
            .ok_or_else(|| ContractError::NotFound(method_name.to_owned()))?;
        if row.creator != caller {
            return Err(ContractError::NotCreator {
                method: method_name.to_owned(),
                caller,
            });
        }
        Ok(row)
    }

    pub fn method_update(
        &mut self,
        caller: PeerId,
        method_name: &str,
        new_address: ScAddress,
    ) -> Result<()> {
        self.owned_row(caller, method_name)?.sc_address = new_address;
        Ok(())
    }

    pub fn method_delete(&mut self, caller: PeerId, method_name: &str) -> Result<()> {
        self.owned_row(caller, method_name)?;
        self.rows.remove(method_name);
        Ok(())
    }

    pub fn get_contract(&self, method_name: &str) -> Result<(ScAddress, &str)> {
        self.rows
            .get(method_name)
            .map(|r| (r.sc_address, r.sc_name.as_str()))
            .ok_or_else(|| ContractError::NotFound(method_name.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub role: Role,
    pub present: bool,
}

/// Lookup table plus the role directory used to hand out reference ACCs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterContract {
    pub table: LookupTable,
    pub subjects: BTreeMap<PeerId, SubjectEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MisbehaviorRecord {
    /// Peer that experienced the misbehavior.
    pub object: PeerId,
    /// Offender.
    pub subject: PeerId,
    pub event: SecurityEvent,
    pub detail: String,
    pub time: Seconds,
    /// Filled in by the judge.
    pub penalty: Option<Penalty>,
}

impl MisbehaviorRecord {
    pub fn new(
        object: PeerId,
        subject: PeerId,
        event: SecurityEvent,
        detail: impl Into<String>,
        time: Seconds,
    ) -> Self {
        MisbehaviorRecord {
            object,
            subject,
            event,
            detail: detail.into(),
            time,
            penalty: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccState {
    pub acc_name: String,
    pub misbehavior_list: Vec<MisbehaviorRecord>,
    pub denial_history: BTreeMap<PeerId, Vec<Seconds>>,
}

impl AccState {
    pub fn new(acc_name: impl Into<String>) -> Self {
        AccState {
            acc_name: acc_name.into(),
            misbehavior_list: Vec::new(),
            denial_history: BTreeMap::new(),
        }
    }

    /// Inserts after every record with time <= `record.time`.
    fn push_record(&mut self, record: MisbehaviorRecord) {
        let at = self
            .misbehavior_list
            .partition_point(|r| r.time <= record.time);
        self.misbehavior_list.insert(at, record);
    }

    fn push_denial(&mut self, subject: PeerId, now: Seconds) -> &[Seconds] {
        let times = self.denial_history.entry(subject).or_default();
        let at = times.partition_point(|&t| t <= now);
        times.insert(at, now);
        times
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivePenalty {
    pub penalty: Penalty,
    pub issued_at: Seconds,
    /// `None` only for permanent revocation. Warnings expire immediately.
    pub expires_at: Option<Seconds>,
}

impl ActivePenalty {
    pub fn blocks_at(&self, now: Seconds) -> bool {
        self.penalty.is_blocking() && self.expires_at.is_none_or(|end| now < end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarningCount {
    pub count: u32,
    pub window_start: Seconds,
}

/// Per-subject penalties. Keyed by peer id, so entries outlive overlay
/// membership.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PenaltyLedger {
    pub active: BTreeMap<PeerId, Vec<ActivePenalty>>,
    pub warnings: BTreeMap<PeerId, WarningCount>,
}

impl PenaltyLedger {
    /// Warnings counted toward escalation at `now`.
    pub fn warnings_in_window(&self, subject: PeerId, now: Seconds, window: Seconds) -> u32 {
        match self.warnings.get(&subject) {
            Some(w) if now < w.window_start.saturating_add(window) => w.count,
            _ => 0,
        }
    }

    fn note_warning(&mut self, subject: PeerId, now: Seconds, window: Seconds) {
        let w = self.warnings.entry(subject).or_insert(WarningCount {
            count: 0,
            window_start: now,
        });
        if now >= w.window_start.saturating_add(window) {
            *w = WarningCount {
                count: 0,
                window_start: now,
            };
        }
        w.count += 1;
    }

    pub fn enforce(&mut self, subject: PeerId, penalty: Penalty, now: Seconds) {
        let expires_at = match penalty {
            Penalty::PermanentRevocation => None,
            Penalty::Warning { .. } => Some(now),
            timed => Some(now.saturating_add(timed.duration().unwrap_or(0))),
        };
        self.active.entry(subject).or_default().push(ActivePenalty {
            penalty,
            issued_at: now,
            expires_at,
        });
    }

    /// The dominating blocking penalty at `now`: a revocation beats any timed
    /// penalty, and among timed ones the latest expiry wins.
    pub fn active_blocking_penalty(&self, subject: PeerId, now: Seconds) -> Option<&ActivePenalty> {
        self.active
            .get(&subject)?
            .iter()
            .filter(|p| p.blocks_at(now))
            .max_by_key(|p| p.expires_at.map_or(u64::MAX as u128 + 1, u128::from))
    }
}

/// Penalty for a reported misbehavior. Warnings escalate to a ban once the
/// subject reaches the warning threshold inside the warning window.
pub fn judge(
    record: &MisbehaviorRecord,
    penalties: &PenaltyLedger,
    now: Seconds,
    params: &PolicyParams,
) -> Penalty {
    let base = response_with(record.event, params).penalty;
    if let Penalty::Warning { .. } = base {
        let prior = penalties.warnings_in_window(record.subject, now, params.warning_window.get());
        if prior + 1 >= params.warning_threshold.get() {
            return Penalty::TimedBan {
                secs: params.warning_ban,
            };
        }
    }
    base
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AccessDecision {
    Granted,
    DeniedStatic,
    DeniedDynamic,
    DeniedPenalty,
}

impl AccessDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessDecision::Granted => "Granted",
            AccessDecision::DeniedStatic => "DeniedStatic",
            AccessDecision::DeniedDynamic => "DeniedDynamic",
            AccessDecision::DeniedPenalty => "DeniedPenalty",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessOutcome {
    pub decision: AccessDecision,
    pub triggered_event: Option<SecurityEvent>,
    /// Penalty issued as a consequence of this request, if any.
    pub penalty: Option<Penalty>,
}

impl AccessOutcome {
    fn plain(decision: AccessDecision) -> Self {
        AccessOutcome {
            decision,
            triggered_event: None,
            penalty: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessTarget {
    Resource {
        resource: ResourceKind,
        action: Action,
    },
    Communicate(CommTarget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessRequest {
    pub subject: PeerId,
    pub target: AccessTarget,
    /// Peer responsible for the requested object; named as the object of any
    /// misbehavior record the request triggers.
    pub custodian: PeerId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeDecision {
    pub acc_name: String,
    pub penalty: Penalty,
    pub record: MisbehaviorRecord,
}

/// All contract state replicated by the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub params: PolicyParams,
    pub register: RegisterContract,
    pub accs: BTreeMap<String, AccState>,
    pub penalties: PenaltyLedger,
}

impl Default for WorldState {
    fn default() -> Self {
        Self::new(PolicyParams::default())
    }
}

impl WorldState {
    pub fn new(params: PolicyParams) -> Self {
        let accs = Role::ALL
            .into_iter()
            .map(|r| {
                let name = reference_acc_for(r);
                (name.to_owned(), AccState::new(name))
            })
            .collect();
        WorldState {
            params,
            register: RegisterContract::default(),
            accs,
            penalties: PenaltyLedger::default(),
        }
    }

    pub fn acc(&self, name: &str) -> Option<&AccState> {
        self.accs.get(name)
    }

    /// Sorted-key JSON of the complete contract state.
    pub fn canonical_dump(&self) -> String {
        String::from_utf8(canonical_json(self)).expect("json is utf-8")
    }

    pub fn subject_role(&self, subject: PeerId) -> Result<Role> {
        match self.register.subjects.get(&subject) {
            None => Err(ContractError::UnknownSubject(subject)),
            Some(e) if !e.present => Err(ContractError::SubjectAbsent(subject)),
            Some(e) => Ok(e.role),
        }
    }

    fn require_contract(&self, name: &str) -> Result<()> {
        self.register
            .table
            .get_contract(name)
            .map(|_| ())
            .map_err(|_| ContractError::NoReferenceContract(name.to_owned()))
    }

    /// Reference ACC for a known subject, which must be registered in the RC.
    pub fn reference_acc(&self, subject: PeerId) -> Result<&'static str> {
        let known = self
            .register
            .subjects
            .get(&subject)
            .ok_or(ContractError::UnknownSubject(subject))?;
        let name = reference_acc_for(known.role);
        self.require_contract(name)?;
        Ok(name)
    }

    pub fn assign_role(&mut self, subject: PeerId, role: Role) {
        self.register.subjects.insert(
            subject,
            SubjectEntry {
                role,
                present: true,
            },
        );
    }

    pub fn subject_leave(&mut self, subject: PeerId) -> Result<()> {
        let entry = self
            .register
            .subjects
            .get_mut(&subject)
            .ok_or(ContractError::UnknownSubject(subject))?;
        entry.present = false;
        Ok(())
    }

    /// Penalty gate, then static check, then burst detection.
    pub fn access_request(&mut self, req: &AccessRequest, now: Seconds) -> Result<AccessOutcome> {
        let role = self.subject_role(req.subject)?;
        let acc_name = reference_acc_for(role);
        self.require_contract(acc_name)?;

        if self
            .penalties
            .active_blocking_penalty(req.subject, now)
            .is_some()
        {
            return Ok(AccessOutcome::plain(AccessDecision::DeniedPenalty));
        }

        let decision = match req.target {
            AccessTarget::Resource { resource, action } => {
                static_permission(role, resource, action)
            }
            AccessTarget::Communicate(target) => communication_allowed(role, target),
        };

        let acc = self.accs.get_mut(acc_name).expect("role ACCs always exist");
        let mut outcome = AccessOutcome::plain(AccessDecision::Granted);
        let history: &[Seconds] = if decision == Decision::Deny {
            outcome.decision = AccessDecision::DeniedStatic;
            acc.push_denial(req.subject, now)
        } else {
            acc.denial_history
                .get(&req.subject)
                .map_or(&[], Vec::as_slice)
        };

        let cfg = self.params.attempts;
        if let Some(event) = detect_attempt_burst(history, now, &cfg) {
            let record = MisbehaviorRecord::new(
                req.custodian,
                req.subject,
                event,
                format!(
                    "more than {} denied requests within {} s",
                    cfg.max_denials, cfg.window
                ),
                now,
            );
            let judged = self.report_misbehavior(record, now)?;
            outcome = AccessOutcome {
                decision: AccessDecision::DeniedDynamic,
                triggered_event: Some(event),
                penalty: Some(judged.penalty),
            };
        }
        Ok(outcome)
    }

    /// Forwards an unjudged record to the judge, enforces the penalty and
    /// files the judged record in the offender's reference ACC.
    pub fn report_misbehavior(
        &mut self,
        mut record: MisbehaviorRecord,
        now: Seconds,
    ) -> Result<JudgeDecision> {
        if record.penalty.is_some() {
            return Err(ContractError::AlreadyJudged);
        }
        let acc_name = self.reference_acc(record.subject)?;
        self.require_contract(JUDGE_CONTRACT)?;

        let penalty = judge(&record, &self.penalties, now, &self.params);
        let window = self.params.warning_window.get();
        match (record.event, penalty) {
            (_, Penalty::Warning { .. }) => {
                self.penalties.note_warning(record.subject, now, window)
            }
            (SecurityEvent::IdentityMisrepresentation, _) => {
                // escalated; start counting afresh
                self.penalties.warnings.remove(&record.subject);
            }
            _ => {}
        }
        self.penalties.enforce(record.subject, penalty, now);

        record.penalty = Some(penalty);
        self.accs
            .get_mut(acc_name)
            .expect("role ACCs always exist")
            .push_record(record.clone());
        Ok(JudgeDecision {
            acc_name: acc_name.to_owned(),
            penalty,
            record,
        })
    }

    /// Contract a call is addressed to, given the current state.
    pub fn route(&self, call: &ContractCall) -> Result<ContractId> {
        Ok(match call {
            ContractCall::AccessRequest(req) => {
                ContractId::Acc(self.reference_acc(req.subject)?.to_owned())
            }
            ContractCall::ReportMisbehavior { subject, .. } => {
                ContractId::Acc(self.reference_acc(*subject)?.to_owned())
            }
            _ => ContractId::Register,
        })
    }

    pub fn execute(
        &mut self,
        caller: PeerId,
        call: &ContractCall,
        now: Seconds,
    ) -> Result<CallResult> {
        Ok(match call {
            ContractCall::MethodRegister {
                method_name,
                subject,
                object,
                sc_name,
                sc_address,
            } => {
                let record =
                    MethodRecord::new(method_name, subject, object, sc_name, caller, sc_address)?;
                self.register.table.method_register(caller, record)?;
                CallResult::Done
            }
            ContractCall::MethodUpdate {
                method_name,
                sc_address,
            } => {
                let addr = sc_address.parse()?;
                self.register
                    .table
                    .method_update(caller, method_name, addr)?;
                CallResult::Done
            }
            ContractCall::MethodDelete { method_name } => {
                self.register.table.method_delete(caller, method_name)?;
                CallResult::Done
            }
            ContractCall::GetContract { method_name } => {
                let (address, sc_name) = self.register.table.get_contract(method_name)?;
                CallResult::Contract {
                    address,
                    sc_name: sc_name.to_owned(),
                }
            }
            ContractCall::AssignRole { subject, role } => {
                self.assign_role(*subject, *role);
                CallResult::Done
            }
            ContractCall::SubjectLeave { subject } => {
                self.subject_leave(*subject)?;
                CallResult::Done
            }
            ContractCall::AccessRequest(req) => {
                if req.subject != caller {
                    return Err(ContractError::BadCall(
                        "access request subject must be the caller".into(),
                    ));
                }
                CallResult::Access(self.access_request(req, now)?)
            }
            ContractCall::ReportMisbehavior {
                object,
                subject,
                event,
                detail,
            } => {
                let record = MisbehaviorRecord::new(*object, *subject, *event, detail.clone(), now);
                CallResult::Judged(self.report_misbehavior(record, now)?.penalty)
            }
        })
    }

    /// Executes `call` and records it, with its result, as a transaction.
    pub fn execute_recorded(
        &mut self,
        seq: u64,
        caller: PeerId,
        call: &ContractCall,
        now: Seconds,
    ) -> Result<(Transaction, CallResult)> {
        let contract = self.route(call)?;
        let result = self.execute(caller, call, now)?;
        let mut args = call.to_args();
        args.extend(result.to_args());
        let tx = Transaction {
            seq,
            caller,
            contract,
            method: call.method().to_owned(),
            args,
            timestamp: now,
        };
        Ok((tx, result))
    }

    /// Re-executes a recorded transaction and checks that routing and result
    /// match what was recorded.
    pub fn replay_transaction(&mut self, tx: &Transaction) -> Result<()> {
        let call = ContractCall::from_tx(tx)?;
        let contract = self.route(&call)?;
        if contract != tx.contract {
            return Err(ContractError::ResultMismatch {
                recorded: format!("contract {}", tx.contract.as_str()),
                computed: format!("contract {}", contract.as_str()),
            });
        }
        let computed = self.execute(tx.caller, &call, tx.timestamp)?.to_args();
        let recorded: Args = tx
            .args
            .iter()
            .filter(|(k, _)| k.starts_with(RESULT_PREFIX))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if computed != recorded {
            return Err(ContractError::ResultMismatch {
                recorded: Value::Object(recorded).to_string(),
                computed: Value::Object(computed).to_string(),
            });
        }
        Ok(())
    }
}

/// A contract invocation as carried in a transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContractCall {
    MethodRegister {
        method_name: String,
        subject: String,
        object: String,
        sc_name: String,
        sc_address: String,
    },
    MethodUpdate {
        method_name: String,
        sc_address: String,
    },
    MethodDelete {
        method_name: String,
    },
    GetContract {
        method_name: String,
    },
    AssignRole {
        subject: PeerId,
        role: Role,
    },
    SubjectLeave {
        subject: PeerId,
    },
    AccessRequest(AccessRequest),
    ReportMisbehavior {
        object: PeerId,
        subject: PeerId,
        event: SecurityEvent,
        detail: String,
    },
}

fn arg<T: Serialize>(args: &mut Args, key: &str, value: T) {
    args.insert(
        key.to_owned(),
        serde_json::to_value(value).expect("argument serializes"),
    );
}

fn take<T: DeserializeOwned>(args: &Args, key: &str) -> Result<T> {
    let v = args
        .get(key)
        .ok_or_else(|| ContractError::BadCall(format!("missing argument `{key}`")))?;
    serde_json::from_value(v.clone())
        .map_err(|e| ContractError::BadCall(format!("argument `{key}`: {e}")))
}

impl ContractCall {
    pub fn method(&self) -> &'static str {
        match self {
            ContractCall::MethodRegister { .. } => "methodRegister",
            ContractCall::MethodUpdate { .. } => "methodUpdate",
            ContractCall::MethodDelete { .. } => "methodDelete",
            ContractCall::GetContract { .. } => "getContract",
            ContractCall::AssignRole { .. } => "assignRole",
            ContractCall::SubjectLeave { .. } => "subjectLeave",
            ContractCall::AccessRequest(_) => "accessRequest",
            ContractCall::ReportMisbehavior { .. } => "reportMisbehavior",
        }
    }

    pub fn to_args(&self) -> Args {
        let mut a = Args::new();
        match self {
            ContractCall::MethodRegister {
                method_name,
                subject,
                object,
                sc_name,
                sc_address,
            } => {
                arg(&mut a, "method_name", method_name);
                arg(&mut a, "subject", subject);
                arg(&mut a, "object", object);
                arg(&mut a, "sc_name", sc_name);
                arg(&mut a, "sc_address", sc_address);
            }
            ContractCall::MethodUpdate {
                method_name,
                sc_address,
            } => {
                arg(&mut a, "method_name", method_name);
                arg(&mut a, "sc_address", sc_address);
            }
            ContractCall::MethodDelete { method_name }
            | ContractCall::GetContract { method_name } => {
                arg(&mut a, "method_name", method_name);
            }
            ContractCall::AssignRole { subject, role } => {
                arg(&mut a, "subject", subject);
                arg(&mut a, "role", role);
            }
            ContractCall::SubjectLeave { subject } => arg(&mut a, "subject", subject),
            ContractCall::AccessRequest(req) => {
                arg(&mut a, "subject", req.subject);
                arg(&mut a, "custodian", req.custodian);
                match req.target {
                    AccessTarget::Resource { resource, action } => {
                        arg(&mut a, "resource", resource);
                        arg(&mut a, "action", action);
                    }
                    AccessTarget::Communicate(target) => arg(&mut a, "communicate", target),
                }
            }
            ContractCall::ReportMisbehavior {
                object,
                subject,
                event,
                detail,
            } => {
                arg(&mut a, "object", object);
                arg(&mut a, "subject", subject);
                arg(&mut a, "event", event);
                arg(&mut a, "detail", detail);
            }
        }
        a
    }

    pub fn from_tx(tx: &Transaction) -> Result<Self> {
        let a = &tx.args;
        Ok(match tx.method.as_str() {
            "methodRegister" => ContractCall::MethodRegister {
                method_name: take(a, "method_name")?,
                subject: take(a, "subject")?,
                object: take(a, "object")?,
                sc_name: take(a, "sc_name")?,
                sc_address: take(a, "sc_address")?,
            },
            "methodUpdate" => ContractCall::MethodUpdate {
                method_name: take(a, "method_name")?,
                sc_address: take(a, "sc_address")?,
            },
            "methodDelete" => ContractCall::MethodDelete {
                method_name: take(a, "method_name")?,
            },
            "getContract" => ContractCall::GetContract {
                method_name: take(a, "method_name")?,
            },
            "assignRole" => ContractCall::AssignRole {
                subject: take(a, "subject")?,
                role: take(a, "role")?,
            },
            "subjectLeave" => ContractCall::SubjectLeave {
                subject: take(a, "subject")?,
            },
            "accessRequest" => {
                let target = if a.contains_key("communicate") {
                    AccessTarget::Communicate(take(a, "communicate")?)
                } else {
                    AccessTarget::Resource {
                        resource: take(a, "resource")?,
                        action: take(a, "action")?,
                    }
                };
                ContractCall::AccessRequest(AccessRequest {
                    subject: take(a, "subject")?,
                    target,
                    custodian: take(a, "custodian")?,
                })
            }
            "reportMisbehavior" => ContractCall::ReportMisbehavior {
                object: take(a, "object")?,
                subject: take(a, "subject")?,
                event: take(a, "event")?,
                detail: take(a, "detail")?,
            },
            other => return Err(ContractError::BadCall(format!("unknown method `{other}`"))),
        })
    }
}

/// Typed result of a successful call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CallResult {
    Done,
    Contract { address: ScAddress, sc_name: String },
    Access(AccessOutcome),
    Judged(Penalty),
}

impl CallResult {
    /// Short human-readable form used in traces.
    pub fn summary(&self) -> String {
        match self {
            CallResult::Done => "ok".into(),
            CallResult::Contract { address, sc_name } => format!("{sc_name}@{address}"),
            CallResult::Access(o) => {
                let mut s = o.decision.as_str().to_owned();
                if let Some(e) = o.triggered_event {
                    s.push_str(&format!(" {}", e.as_str()));
                }
                if let Some(p) = o.penalty {
                    s.push_str(&format!(" {p}"));
                }
                s
            }
            CallResult::Judged(p) => p.to_string(),
        }
    }

    pub fn to_args(&self) -> Args {
        let mut a = Args::new();
        match self {
            CallResult::Done => arg(&mut a, "result", "ok"),
            CallResult::Contract { address, sc_name } => {
                arg(&mut a, "result", "ok");
                arg(&mut a, "result_address", address.to_string());
                arg(&mut a, "result_sc_name", sc_name);
            }
            CallResult::Access(o) => {
                arg(&mut a, "result", o.decision.as_str());
                if let Some(e) = o.triggered_event {
                    arg(&mut a, "result_event", e.as_str());
                }
                if let Some(p) = o.penalty {
                    arg(&mut a, "result_penalty", p.to_string());
                }
            }
            CallResult::Judged(p) => {
                arg(&mut a, "result", "judged");
                arg(&mut a, "result_penalty", p.to_string());
            }
        }
        a
    }
}

/// Calls that deploy the three role ACCs and the judge into the lookup table.
pub fn bootstrap_calls() -> Vec<ContractCall> {
    let rows = [
        (
            PRIMARY_HEAD_ACC,
            "PrimaryGroupHead",
            "PrimaryGroupHeadRoleACC",
        ),
        (
            SECONDARY_HEAD_ACC,
            "SecondaryGroupHead",
            "SecondaryGroupHeadRoleACC",
        ),
        (REGULAR_MEMBER_ACC, "RegularMember", "RegularMemberRoleACC"),
        (JUDGE_CONTRACT, "AccessControlContract", "JudgeContract"),
    ];
    rows.into_iter()
        .map(|(method, subject, sc_name)| ContractCall::MethodRegister {
            method_name: method.to_owned(),
            subject: subject.to_owned(),
            object: "Resource".to_owned(),
            sc_name: sc_name.to_owned(),
            sc_address: ScAddress::derive(sc_name).to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::BURST_BAN;

    const DEPLOYER: PeerId = PeerId(0);
    const ADDR: &str = "0x00112233445566778899aabbccddeeff00112233";

    fn world() -> WorldState {
        let mut w = WorldState::default();
        for call in bootstrap_calls() {
            w.execute(DEPLOYER, &call, 0).unwrap();
        }
        w
    }

    fn record(name: &str) -> MethodRecord {
        MethodRecord::new(
            name,
            "PrimaryGroupHead",
            "GlobalResourceTable",
            "X",
            PeerId(99),
            ADDR,
        )
        .unwrap()
    }

    #[test]
    fn register_sets_creator_and_rejects_duplicates() {
        let mut t = LookupTable::default();
        t.method_register(PeerId(1), record(PRIMARY_HEAD_ACC))
            .unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rows().next().unwrap().creator, PeerId(1));
        assert_eq!(
            t.method_register(PeerId(1), record(PRIMARY_HEAD_ACC)),
            Err(ContractError::DuplicateMethodName(PRIMARY_HEAD_ACC.into()))
        );
    }

    #[test]
    fn short_address_is_malformed() {
        let short = "0x00112233445566778899aabbccddeeff001122";
        assert!(matches!(
            MethodRecord::new("m", "s", "o", "n", PeerId(1), short),
            Err(ContractError::MalformedAddress(_))
        ));
        assert!(ADDR.parse::<ScAddress>().is_ok());
        assert!("zz112233445566778899aabbccddeeff00112233"
            .parse::<ScAddress>()
            .is_err());
    }

    #[test]
    fn update_and_delete_need_the_creator() {
        let mut t = LookupTable::default();
        t.method_register(PeerId(1), record("m")).unwrap();
        let new_addr = ScAddress([7; ADDRESS_LEN]);
        assert!(matches!(
            t.method_update(PeerId(2), "m", new_addr),
            Err(ContractError::NotCreator { .. })
        ));
        assert!(matches!(
            t.method_update(PeerId(1), "x", new_addr),
            Err(ContractError::NotFound(_))
        ));
        t.method_update(PeerId(1), "m", new_addr).unwrap();
        let row = t.rows().next().unwrap();
        assert_eq!(row.sc_address, new_addr);
        assert_eq!(row.sc_name, "X");
        assert_eq!(row.creator, PeerId(1));

        assert!(matches!(
            t.method_delete(PeerId(2), "m"),
            Err(ContractError::NotCreator { .. })
        ));
        t.method_delete(PeerId(1), "m").unwrap();
        assert!(t.is_empty());
        assert!(matches!(
            t.method_delete(PeerId(1), "m"),
            Err(ContractError::NotFound(_))
        ));
        assert!(matches!(
            t.get_contract("m"),
            Err(ContractError::NotFound(_))
        ));
    }

    #[test]
    fn reference_accs() {
        assert_eq!(
            reference_acc_for(Role::PrimaryGroupHead),
            "Primary Group Head Role ACC"
        );
        assert_eq!(
            reference_acc_for(Role::SecondaryGroupHead),
            "Secondary Group Head Role ACC"
        );
        assert_eq!(
            reference_acc_for(Role::RegularMember),
            "Regular Member Role ACC"
        );
    }

    fn request(subject: u64, resource: ResourceKind, action: Action) -> AccessRequest {
        AccessRequest {
            subject: PeerId(subject),
            target: AccessTarget::Resource { resource, action },
            custodian: PeerId(1),
        }
    }

    #[test]
    fn unknown_subject_is_an_error() {
        let mut w = world();
        assert_eq!(
            w.access_request(
                &request(5, ResourceKind::GlobalResourceTable, Action::View),
                0
            ),
            Err(ContractError::UnknownSubject(PeerId(5)))
        );
    }

    #[test]
    fn missing_reference_contract_is_an_error() {
        let mut w = WorldState::default();
        w.assign_role(PeerId(1), Role::PrimaryGroupHead);
        assert_eq!(
            w.access_request(
                &request(1, ResourceKind::GlobalResourceTable, Action::View),
                0
            ),
            Err(ContractError::NoReferenceContract(PRIMARY_HEAD_ACC.into()))
        );
    }

    #[test]
    fn burst_triggers_ban() {
        let mut w = world();
        w.assign_role(PeerId(5), Role::RegularMember);
        let probe = request(5, ResourceKind::GlobalResourceTable, Action::View);
        for t in [10, 20, 30] {
            let o = w.access_request(&probe, t).unwrap();
            assert_eq!(o.decision, AccessDecision::DeniedStatic);
        }
        let o = w.access_request(&probe, 40).unwrap();
        assert_eq!(o.decision, AccessDecision::DeniedDynamic);
        assert_eq!(
            o.triggered_event,
            Some(SecurityEvent::TooManyAccessAttempts)
        );
        assert_eq!(o.penalty, Some(Penalty::timed_ban(BURST_BAN)));

        let allowed = request(5, ResourceKind::LocalResourceTable, Action::View);
        assert_eq!(
            w.access_request(&allowed, 40 + BURST_BAN - 1)
                .unwrap()
                .decision,
            AccessDecision::DeniedPenalty
        );
        assert_eq!(
            w.access_request(&allowed, 40 + BURST_BAN).unwrap().decision,
            AccessDecision::Granted
        );
        let list = &w.acc(REGULAR_MEMBER_ACC).unwrap().misbehavior_list;
        assert_eq!(list.len(), 1);
        assert_eq!(list[0].object, PeerId(1));
        assert!(list[0].penalty.is_some());
    }

    #[test]
    fn report_misbehavior_rejects_judged_records() {
        let mut w = world();
        w.assign_role(PeerId(3), Role::SecondaryGroupHead);
        let rec = MisbehaviorRecord::new(
            PeerId(1),
            PeerId(3),
            SecurityEvent::TooManyAccessAttempts,
            "multiple failed logins",
            100,
        );
        let d = w.report_misbehavior(rec, 100).unwrap();
        assert_eq!(d.penalty, Penalty::timed_ban(86_400));
        assert_eq!(d.acc_name, SECONDARY_HEAD_ACC);
        assert_eq!(
            w.report_misbehavior(d.record, 200),
            Err(ContractError::AlreadyJudged)
        );
    }

    #[test]
    fn warnings_escalate_on_the_third() {
        let params = PolicyParams::default();
        let mut ledger = PenaltyLedger::default();
        let subject = PeerId(4);
        let rec = MisbehaviorRecord::new(
            PeerId(1),
            subject,
            SecurityEvent::IdentityMisrepresentation,
            "",
            0,
        );
        // independent replay of the rule: count warnings whose window is still open
        let mut w = world();
        w.assign_role(subject, Role::RegularMember);
        let times = [0, 1_000, 2_000, 700_000, 700_001, 700_002];
        let expected = [
            "Warning(1)",
            "Warning(1)",
            "TimedBan(86400s)",
            "Warning(1)",
            "Warning(1)",
            "TimedBan(86400s)",
        ];
        for (t, want) in times.into_iter().zip(expected) {
            let mut r = rec.clone();
            r.time = t;
            let got = w.report_misbehavior(r, t).unwrap().penalty;
            assert_eq!(got.to_string(), want, "t={t}");
        }
        assert_eq!(judge(&rec, &ledger, 0, &params), Penalty::warning());
        ledger.note_warning(subject, 0, params.warning_window.get());
        ledger.note_warning(subject, 10, params.warning_window.get());
        assert_eq!(
            judge(&rec, &ledger, 20, &params),
            Penalty::timed_ban(86_400)
        );
        // window expired: counting restarts
        assert_eq!(judge(&rec, &ledger, 604_800, &params), Penalty::warning());
    }

    #[test]
    fn blocking_penalty_dominance_and_boundary() {
        let mut l = PenaltyLedger::default();
        let s = PeerId(1);
        l.enforce(s, Penalty::timed_ban(86_400), 0);
        assert_eq!(l.active[&s][0].expires_at, Some(86_400));
        assert!(l.active_blocking_penalty(s, 86_399).is_some());
        assert!(l.active_blocking_penalty(s, 86_400).is_none());

        l.enforce(s, Penalty::suspension(10), 0);
        assert_eq!(
            l.active_blocking_penalty(s, 5).unwrap().penalty,
            Penalty::timed_ban(86_400)
        );
        l.enforce(s, Penalty::PermanentRevocation, 5);
        assert_eq!(
            l.active_blocking_penalty(s, 6).unwrap().penalty,
            Penalty::PermanentRevocation
        );
        assert_eq!(
            l.active_blocking_penalty(s, u64::MAX).unwrap().expires_at,
            None
        );

        let w = PeerId(2);
        l.enforce(w, Penalty::warning(), 0);
        assert!(l.active_blocking_penalty(w, 0).is_none());
    }

    #[test]
    fn recorded_calls_replay() {
        let mut seq_world = world();
        let mut replica = world();
        seq_world.assign_role(PeerId(5), Role::RegularMember);
        replica.assign_role(PeerId(5), Role::RegularMember);
        let call = ContractCall::AccessRequest(request(
            5,
            ResourceKind::GlobalResourceTable,
            Action::View,
        ));
        let (tx, result) = seq_world.execute_recorded(0, PeerId(5), &call, 10).unwrap();
        assert_eq!(
            result,
            CallResult::Access(AccessOutcome::plain(AccessDecision::DeniedStatic))
        );
        assert_eq!(tx.contract, ContractId::Acc(REGULAR_MEMBER_ACC.into()));
        replica.replay_transaction(&tx).unwrap();
        assert_eq!(seq_world, replica);

        let mut forged = tx.clone();
        forged.args.insert("result".into(), "Granted".into());
        assert!(matches!(
            world_with(5).replay_transaction(&forged),
            Err(ContractError::ResultMismatch { .. })
        ));
    }

    fn world_with(peer: u64) -> WorldState {
        let mut w = world();
        w.assign_role(PeerId(peer), Role::RegularMember);
        w
    }

    #[test]
    fn misbehavior_list_is_time_ordered_and_stable() {
        let mut acc = AccState::new("x");
        let mk = |t, d: &str| {
            MisbehaviorRecord::new(PeerId(0), PeerId(1), SecurityEvent::DataTampering, d, t)
        };
        acc.push_record(mk(5, "a"));
        acc.push_record(mk(3, "b"));
        acc.push_record(mk(5, "c"));
        let order: Vec<_> = acc
            .misbehavior_list
            .iter()
            .map(|r| r.detail.as_str())
            .collect();
        assert_eq!(order, ["b", "a", "c"]);
    }
}
