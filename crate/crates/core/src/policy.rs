//! Static permission matrix, communication rules and the security-event
//! response table.
//!
//! Everything here is immutable data plus pure lookups. The contract engine
//! consults these tables on every access request and every adjudication.

use std::fmt;
use std::num::{NonZeroU32, NonZeroU64};

use serde::{Deserialize, Serialize};

/// Simulated time in whole seconds.
pub type Seconds = u64;

pub const DAY: Seconds = 86_400;

/// Ban applied for an access-attempt burst.
pub const BURST_BAN: Seconds = DAY;
/// Suspension applied for service disruption (30 days).
pub const DISRUPTION_SUSPENSION: Seconds = 30 * DAY;
/// Default suspension for unauthorized access; the table names no duration.
pub const DEFAULT_UNAUTHORIZED_SUSPENSION: Seconds = 3_600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    PrimaryGroupHead,
    SecondaryGroupHead,
    RegularMember,
}

impl Role {
    pub const ALL: [Role; 3] = [
        Role::PrimaryGroupHead,
        Role::SecondaryGroupHead,
        Role::RegularMember,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::PrimaryGroupHead => "PrimaryGroupHead",
            Role::SecondaryGroupHead => "SecondaryGroupHead",
            Role::RegularMember => "RegularMember",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceKind {
    GlobalResourceTable,
    LocalResourceTable,
    MaliciousGroupHeadRegistry,
    MaliciousMemberRegistry,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 4] = [
        ResourceKind::GlobalResourceTable,
        ResourceKind::LocalResourceTable,
        ResourceKind::MaliciousGroupHeadRegistry,
        ResourceKind::MaliciousMemberRegistry,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::GlobalResourceTable => "GlobalResourceTable",
            ResourceKind::LocalResourceTable => "LocalResourceTable",
            ResourceKind::MaliciousGroupHeadRegistry => "MaliciousGroupHeadRegistry",
            ResourceKind::MaliciousMemberRegistry => "MaliciousMemberRegistry",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    View,
    Edit,
    Create,
    Delete,
}

impl Action {
    /// The "full" permission set.
    pub const ALL: [Action; 4] = [Action::View, Action::Edit, Action::Create, Action::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::View => "View",
            Action::Edit => "Edit",
            Action::Create => "Create",
            Action::Delete => "Delete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CommTarget {
    OwnGroupHead,
    OwnMembers,
    OtherGroupHead,
}

impl CommTarget {
    pub const ALL: [CommTarget; 3] = [
        CommTarget::OwnGroupHead,
        CommTarget::OwnMembers,
        CommTarget::OtherGroupHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommTarget::OwnGroupHead => "OwnGroupHead",
            CommTarget::OwnMembers => "OwnMembers",
            CommTarget::OtherGroupHead => "OtherGroupHead",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Decision {
    Allow,
    Deny,
}

impl Decision {
    pub fn is_allow(self) -> bool {
        self == Decision::Allow
    }

    fn from_bool(allow: bool) -> Self {
        if allow {
            Decision::Allow
        } else {
            Decision::Deny
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SecurityEvent {
    TooManyAccessAttempts,
    DataTampering,
    UnauthorizedAccess,
    DisruptionOfService,
    IdentityMisrepresentation,
}

impl SecurityEvent {
    pub const ALL: [SecurityEvent; 5] = [
        SecurityEvent::TooManyAccessAttempts,
        SecurityEvent::DataTampering,
        SecurityEvent::UnauthorizedAccess,
        SecurityEvent::DisruptionOfService,
        SecurityEvent::IdentityMisrepresentation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SecurityEvent::TooManyAccessAttempts => "TooManyAccessAttempts",
            SecurityEvent::DataTampering => "DataTampering",
            SecurityEvent::UnauthorizedAccess => "UnauthorizedAccess",
            SecurityEvent::DisruptionOfService => "DisruptionOfService",
            SecurityEvent::IdentityMisrepresentation => "IdentityMisrepresentation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Low,
    Medium,
    High,
}

/// Impact class. `Accountability` is not a CIA letter but is kept as listed
/// in the response table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CiaImpact {
    Confidentiality,
    Integrity,
    Availability,
    Accountability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrideImpact {
    Spoofing,
    Tampering,
    InformationDisclosure,
    DenialOfService,
    ElevationOfPrivilege,
}

/// Sanction handed out by the judge.
///
/// Durations are non-zero by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Penalty {
    TimedBan { secs: NonZeroU64 },
    PermanentRevocation,
    TemporarySuspension { secs: NonZeroU64 },
    Warning { count: NonZeroU32 },
}

impl Penalty {
    /// Panics on a zero duration.
    pub fn timed_ban(secs: Seconds) -> Self {
        Penalty::TimedBan {
            secs: NonZeroU64::new(secs).expect("ban duration must be positive"),
        }
    }

    /// Panics on a zero duration.
    pub fn suspension(secs: Seconds) -> Self {
        Penalty::TemporarySuspension {
            secs: NonZeroU64::new(secs).expect("suspension duration must be positive"),
        }
    }

    pub fn warning() -> Self {
        Penalty::Warning {
            count: NonZeroU32::MIN,
        }
    }

    /// Duration for timed penalties; `None` for revocation and warnings.
    pub fn duration(&self) -> Option<Seconds> {
        match self {
            Penalty::TimedBan { secs } | Penalty::TemporarySuspension { secs } => Some(secs.get()),
            Penalty::PermanentRevocation | Penalty::Warning { .. } => None,
        }
    }

    /// Whether an active instance of this penalty denies access.
    pub fn is_blocking(&self) -> bool {
        !matches!(self, Penalty::Warning { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Penalty::TimedBan { .. } => "TimedBan",
            Penalty::PermanentRevocation => "PermanentRevocation",
            Penalty::TemporarySuspension { .. } => "TemporarySuspension",
            Penalty::Warning { .. } => "Warning",
        }
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Penalty::TimedBan { secs } => write!(f, "TimedBan({}s)", secs),
            Penalty::PermanentRevocation => f.write_str("PermanentRevocation"),
            Penalty::TemporarySuspension { secs } => write!(f, "TemporarySuspension({}s)", secs),
            Penalty::Warning { count } => write!(f, "Warning({})", count),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSpec {
    pub severity: Severity,
    pub cia_impact: CiaImpact,
    pub stride_impact: StrideImpact,
    pub penalty: Penalty,
}

/// Sliding-window threshold for the access-attempt burst rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptWindowConfig {
    pub max_denials: NonZeroU32,
    pub window: NonZeroU64,
}

impl AttemptWindowConfig {
    /// Returns `None` when either field is zero.
    pub fn new(max_denials: u32, window: Seconds) -> Option<Self> {
        Some(Self {
            max_denials: NonZeroU32::new(max_denials)?,
            window: NonZeroU64::new(window)?,
        })
    }
}

impl Default for AttemptWindowConfig {
    fn default() -> Self {
        Self::new(3, 60).unwrap()
    }
}

/// Tunable parameters of the response policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub attempts: AttemptWindowConfig,
    /// Suspension length for `UnauthorizedAccess`.
    pub unauthorized_suspension: NonZeroU64,
    /// Number of warnings inside `warning_window` that escalates to a ban.
    pub warning_threshold: NonZeroU32,
    pub warning_window: NonZeroU64,
    pub warning_ban: NonZeroU64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            attempts: AttemptWindowConfig::default(),
            unauthorized_suspension: NonZeroU64::new(DEFAULT_UNAUTHORIZED_SUSPENSION).unwrap(),
            warning_threshold: NonZeroU32::new(3).unwrap(),
            warning_window: NonZeroU64::new(7 * DAY).unwrap(),
            warning_ban: NonZeroU64::new(DAY).unwrap(),
        }
    }
}

/// Looks up one cell of the static permission matrix.
pub fn static_permission(role: Role, resource: ResourceKind, action: Action) -> Decision {
    use Action::*;
    use ResourceKind::*;

    let allow = match role {
        Role::PrimaryGroupHead => true,
        Role::SecondaryGroupHead => match resource {
            GlobalResourceTable | LocalResourceTable => action == View,
            MaliciousGroupHeadRegistry => matches!(action, View | Edit),
            MaliciousMemberRegistry => false,
        },
        Role::RegularMember => resource == LocalResourceTable && action == View,
    };
    Decision::from_bool(allow)
}

pub fn communication_allowed(role: Role, target: CommTarget) -> Decision {
    use CommTarget::*;

    let allow = match role {
        Role::PrimaryGroupHead => matches!(target, OtherGroupHead | OwnMembers),
        Role::SecondaryGroupHead => matches!(target, OwnGroupHead | OwnMembers),
        Role::RegularMember => target == OwnGroupHead,
    };
    Decision::from_bool(allow)
}

/// Response row with default policy parameters.
pub fn response_for(event: SecurityEvent) -> ResponseSpec {
    response_with(event, &PolicyParams::default())
}

pub fn response_with(event: SecurityEvent, params: &PolicyParams) -> ResponseSpec {
    use SecurityEvent::*;

    let (severity, cia_impact, stride_impact, penalty) = match event {
        TooManyAccessAttempts => (
            Severity::High,
            CiaImpact::Integrity,
            StrideImpact::ElevationOfPrivilege,
            Penalty::timed_ban(BURST_BAN),
        ),
        DataTampering => (
            Severity::High,
            CiaImpact::Integrity,
            StrideImpact::Tampering,
            Penalty::PermanentRevocation,
        ),
        UnauthorizedAccess => (
            Severity::Medium,
            CiaImpact::Confidentiality,
            StrideImpact::InformationDisclosure,
            Penalty::TemporarySuspension {
                secs: params.unauthorized_suspension,
            },
        ),
        DisruptionOfService => (
            Severity::High,
            CiaImpact::Availability,
            StrideImpact::DenialOfService,
            Penalty::suspension(DISRUPTION_SUSPENSION),
        ),
        IdentityMisrepresentation => (
            Severity::Low,
            CiaImpact::Accountability,
            StrideImpact::Spoofing,
            Penalty::warning(),
        ),
    };
    ResponseSpec {
        severity,
        cia_impact,
        stride_impact,
        penalty,
    }
}

/// Fires `TooManyAccessAttempts` when more than `max_denials` denials fall in
/// the half-open window `(now - window, now]`.
///
/// `denial_times` must be sorted ascending.
pub fn detect_attempt_burst(
    denial_times: &[Seconds],
    now: Seconds,
    cfg: &AttemptWindowConfig,
) -> Option<SecurityEvent> {
    let window = cfg.window.get();
    // first index with t > now - window, computed without underflow
    let start = denial_times.partition_point(|&t| t.saturating_add(window) <= now);
    let end = denial_times.partition_point(|&t| t <= now);
    let count = end.saturating_sub(start);
    (count > cfg.max_denials.get() as usize).then_some(SecurityEvent::TooManyAccessAttempts)
}

/// Canonical text dump of both tables, one decision per line, in a fixed
/// order suitable for golden-file diffing.
pub fn dump_policy_matrix() -> String {
    dump_policy_matrix_with(&PolicyParams::default())
}

pub fn dump_policy_matrix_with(params: &PolicyParams) -> String {
    use fmt::Write;

    let mut out = String::new();
    for role in Role::ALL {
        for resource in ResourceKind::ALL {
            for action in Action::ALL {
                let d = static_permission(role, resource, action);
                writeln!(
                    out,
                    "permission {} {} {} {:?}",
                    role.as_str(),
                    resource.as_str(),
                    action.as_str(),
                    d
                )
                .unwrap();
            }
        }
    }
    for role in Role::ALL {
        for target in CommTarget::ALL {
            let d = communication_allowed(role, target);
            writeln!(
                out,
                "communication {} {} {:?}",
                role.as_str(),
                target.as_str(),
                d
            )
            .unwrap();
        }
    }
    for event in SecurityEvent::ALL {
        let r = response_with(event, params);
        writeln!(
            out,
            "response {} severity={:?} cia={:?} stride={:?} penalty={}",
            event.as_str(),
            r.severity,
            r.cia_impact,
            r.stride_impact,
            r.penalty
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        use Action::*;
        use ResourceKind::*;
        assert_eq!(
            static_permission(Role::PrimaryGroupHead, GlobalResourceTable, Delete),
            Decision::Allow
        );
        assert_eq!(
            static_permission(Role::RegularMember, GlobalResourceTable, View),
            Decision::Deny
        );
        assert_eq!(
            static_permission(Role::SecondaryGroupHead, MaliciousGroupHeadRegistry, Edit),
            Decision::Allow
        );
        assert_eq!(
            static_permission(Role::SecondaryGroupHead, MaliciousMemberRegistry, View),
            Decision::Deny
        );
        assert_eq!(
            static_permission(Role::RegularMember, LocalResourceTable, Edit),
            Decision::Deny
        );
    }

    #[test]
    fn communication_examples() {
        assert!(communication_allowed(Role::RegularMember, CommTarget::OwnGroupHead).is_allow());
        assert!(!communication_allowed(Role::RegularMember, CommTarget::OtherGroupHead).is_allow());
        assert!(
            communication_allowed(Role::PrimaryGroupHead, CommTarget::OtherGroupHead).is_allow()
        );
        assert!(
            !communication_allowed(Role::PrimaryGroupHead, CommTarget::OwnGroupHead).is_allow()
        );
    }

    #[test]
    fn primary_head_has_full_access() {
        for r in ResourceKind::ALL {
            for a in Action::ALL {
                assert!(static_permission(Role::PrimaryGroupHead, r, a).is_allow());
            }
        }
    }

    #[test]
    fn response_rows() {
        assert_eq!(
            response_for(SecurityEvent::DataTampering).penalty,
            Penalty::PermanentRevocation
        );
        assert_eq!(
            response_for(SecurityEvent::TooManyAccessAttempts).penalty,
            Penalty::timed_ban(86_400)
        );
        assert_eq!(
            response_for(SecurityEvent::DisruptionOfService).penalty,
            Penalty::suspension(2_592_000)
        );
        assert_eq!(
            response_for(SecurityEvent::UnauthorizedAccess).penalty,
            Penalty::suspension(3_600)
        );
        assert_eq!(
            response_for(SecurityEvent::IdentityMisrepresentation).penalty,
            Penalty::warning()
        );
        let r = response_for(SecurityEvent::IdentityMisrepresentation);
        assert_eq!(r.cia_impact, CiaImpact::Accountability);
        assert_eq!(r.severity, Severity::Low);
    }

    #[test]
    fn unauthorized_suspension_is_configurable() {
        let params = PolicyParams {
            unauthorized_suspension: NonZeroU64::new(42).unwrap(),
            ..PolicyParams::default()
        };
        assert_eq!(
            response_with(SecurityEvent::UnauthorizedAccess, &params).penalty,
            Penalty::suspension(42)
        );
    }

    #[test]
    fn burst_examples() {
        let cfg = AttemptWindowConfig::new(3, 60).unwrap();
        assert_eq!(detect_attempt_burst(&[], 100, &cfg), None);
        assert_eq!(
            detect_attempt_burst(&[10, 20, 30, 40], 50, &cfg),
            Some(SecurityEvent::TooManyAccessAttempts)
        );
        assert_eq!(detect_attempt_burst(&[10, 20, 30, 40], 500, &cfg), None);
        // lower window edge is open: t = now - window is excluded
        assert_eq!(detect_attempt_burst(&[40, 50, 60, 100], 100, &cfg), None);
        assert!(detect_attempt_burst(&[41, 50, 60, 100], 100, &cfg).is_some());
    }

    #[test]
    fn attempt_config_rejects_zero() {
        assert!(AttemptWindowConfig::new(0, 60).is_none());
        assert!(AttemptWindowConfig::new(3, 0).is_none());
    }

    #[test]
    fn matrix_dump_shape() {
        let dump = dump_policy_matrix();
        assert_eq!(
            dump.lines()
                .filter(|l| l.starts_with("permission "))
                .count(),
            48
        );
        assert_eq!(
            dump.lines()
                .filter(|l| l.starts_with("communication "))
                .count(),
            9
        );
        assert_eq!(
            dump.lines().filter(|l| l.starts_with("response ")).count(),
            5
        );
        let pgh_allows = dump
            .lines()
            .filter(|l| l.starts_with("permission PrimaryGroupHead ") && l.ends_with(" Allow"))
            .count();
        assert_eq!(pgh_allows, 16);
        assert!(dump.contains("response DataTampering severity=High cia=Integrity stride=Tampering penalty=PermanentRevocation"));
        assert_eq!(dump, dump_policy_matrix());
    }
}
