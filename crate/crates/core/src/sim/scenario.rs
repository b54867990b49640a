//! Scenario files.
//!
//! A scenario is a JSON-lines text file. Blank lines and lines starting with
//! `#` are ignored. The first remaining line is the header, every following
//! line one event:
//!
//! ```text
//! {"scenario":"burst","n":3,"members":[2,2,2],"config":{"max_denials":3,"window":60}}
//! {"time":10,"kind":"access_request","peer":2,"resource":"GlobalResourceTable","action":"View"}
//! {"time":20,"kind":"access_request","peer":2,"communicate":"OwnGroupHead"}
//! {"time":30,"kind":"report_misbehavior","reporter":0,"offender":2,"event":"DataTampering"}
//! {"time":40,"kind":"join","peer":9,"group":1}
//! {"time":50,"kind":"leave","peer":9}
//! {"time":60,"kind":"lookup","peer":1,"resource_type":2}
//! {"time":70,"kind":"advance_only"}
//! ```
//!
//! Initial peers get sequential ids: group 0's head, then its members, then
//! group 1's head, and so on.
//!
//! Config keys, all optional: `max_denials` (3), `window` (60),
//! `unauthorized_suspension` (3600), `warning_threshold` (3),
//! `warning_window` (604800), `warning_ban` (86400), `seed` (0).

use std::num::{NonZeroU32, NonZeroU64};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::contracts::AccessTarget;
use crate::overlay::NetworkState;
use crate::policy::{
    Action, AttemptWindowConfig, CommTarget, PolicyParams, ResourceKind, Role, Seconds,
    SecurityEvent, DAY,
};
use crate::PeerId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub params: PolicyParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Join {
        peer: PeerId,
        group: usize,
    },
    Leave {
        peer: PeerId,
    },
    AccessRequest {
        peer: PeerId,
        target: AccessTarget,
    },
    ReportMisbehavior {
        reporter: PeerId,
        offender: PeerId,
        event: SecurityEvent,
        detail: String,
    },
    Lookup {
        peer: PeerId,
        resource_type: usize,
    },
    AdvanceOnly,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Join { .. } => "join",
            EventKind::Leave { .. } => "leave",
            EventKind::AccessRequest { .. } => "access_request",
            EventKind::ReportMisbehavior { .. } => "report_misbehavior",
            EventKind::Lookup { .. } => "lookup",
            EventKind::AdvanceOnly => "advance_only",
        }
    }

    /// Peer on whose behalf the event runs.
    pub fn actor(&self) -> Option<PeerId> {
        match *self {
            EventKind::Join { peer, .. }
            | EventKind::Leave { peer }
            | EventKind::AccessRequest { peer, .. }
            | EventKind::Lookup { peer, .. } => Some(peer),
            EventKind::ReportMisbehavior { reporter, .. } => Some(reporter),
            EventKind::AdvanceOnly => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: Seconds,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub members: Vec<usize>,
    pub config: ScenarioConfig,
    pub events: Vec<Event>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    max_denials: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    window: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unauthorized_suspension: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning_threshold: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning_window: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning_ban: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    scenario: String,
    n: usize,
    members: Vec<usize>,
    #[serde(default)]
    config: ConfigLine,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum EventLine {
    Join {
        peer: PeerId,
        group: usize,
    },
    Leave {
        peer: PeerId,
    },
    AccessRequest {
        peer: PeerId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resource: Option<ResourceKind>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action: Option<Action>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        communicate: Option<CommTarget>,
    },
    ReportMisbehavior {
        reporter: PeerId,
        offender: PeerId,
        event: SecurityEvent,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        detail: String,
    },
    Lookup {
        peer: PeerId,
        resource_type: usize,
    },
    AdvanceOnly,
}

impl ConfigLine {
    fn to_config(&self) -> Result<ScenarioConfig, ScenarioError> {
        let d = PolicyParams::default();
        let nz64 = |v: Option<u64>, dflt: NonZeroU64, field: &str| match v {
            None => Ok(dflt),
            Some(x) => NonZeroU64::new(x).ok_or_else(|| invalid(field, "must be positive")),
        };
        let nz32 = |v: Option<u32>, dflt: NonZeroU32, field: &str| match v {
            None => Ok(dflt),
            Some(x) => NonZeroU32::new(x).ok_or_else(|| invalid(field, "must be positive")),
        };
        Ok(ScenarioConfig {
            params: PolicyParams {
                attempts: AttemptWindowConfig {
                    max_denials: nz32(
                        self.max_denials,
                        d.attempts.max_denials,
                        "config.max_denials",
                    )?,
                    window: nz64(self.window, d.attempts.window, "config.window")?,
                },
                unauthorized_suspension: nz64(
                    self.unauthorized_suspension,
                    d.unauthorized_suspension,
                    "config.unauthorized_suspension",
                )?,
                warning_threshold: nz32(
                    self.warning_threshold,
                    d.warning_threshold,
                    "config.warning_threshold",
                )?,
                warning_window: nz64(
                    self.warning_window,
                    d.warning_window,
                    "config.warning_window",
                )?,
                warning_ban: nz64(self.warning_ban, d.warning_ban, "config.warning_ban")?,
            },
            seed: self.seed.unwrap_or(0),
        })
    }

    fn from_config(c: &ScenarioConfig) -> Self {
        let p = &c.params;
        ConfigLine {
            max_denials: Some(p.attempts.max_denials.get()),
            window: Some(p.attempts.window.get()),
            unauthorized_suspension: Some(p.unauthorized_suspension.get()),
            warning_threshold: Some(p.warning_threshold.get()),
            warning_window: Some(p.warning_window.get()),
            warning_ban: Some(p.warning_ban.get()),
            seed: Some(c.seed),
        }
    }
}

impl EventLine {
    fn into_kind(self, field: &str) -> Result<EventKind, ScenarioError> {
        Ok(match self {
            EventLine::Join { peer, group } => EventKind::Join { peer, group },
            EventLine::Leave { peer } => EventKind::Leave { peer },
            EventLine::AccessRequest {
                peer,
                resource,
                action,
                communicate,
            } => {
                let target = match (resource, action, communicate) {
                    (Some(resource), Some(action), None) => {
                        AccessTarget::Resource { resource, action }
                    }
                    (None, None, Some(t)) => AccessTarget::Communicate(t),
                    _ => {
                        return Err(invalid(
                            format!("{field}.target"),
                            "give either `resource` and `action`, or `communicate`",
                        ))
                    }
                };
                EventKind::AccessRequest { peer, target }
            }
            EventLine::ReportMisbehavior {
                reporter,
                offender,
                event,
                detail,
            } => EventKind::ReportMisbehavior {
                reporter,
                offender,
                event,
                detail,
            },
            EventLine::Lookup {
                peer,
                resource_type,
            } => EventKind::Lookup {
                peer,
                resource_type,
            },
            EventLine::AdvanceOnly => EventKind::AdvanceOnly,
        })
    }

    fn from_kind(kind: &EventKind) -> Self {
        match kind.clone() {
            EventKind::Join { peer, group } => EventLine::Join { peer, group },
            EventKind::Leave { peer } => EventLine::Leave { peer },
            EventKind::AccessRequest { peer, target } => match target {
                AccessTarget::Resource { resource, action } => EventLine::AccessRequest {
                    peer,
                    resource: Some(resource),
                    action: Some(action),
                    communicate: None,
                },
                AccessTarget::Communicate(t) => EventLine::AccessRequest {
                    peer,
                    resource: None,
                    action: None,
                    communicate: Some(t),
                },
            },
            EventKind::ReportMisbehavior {
                reporter,
                offender,
                event,
                detail,
            } => EventLine::ReportMisbehavior {
                reporter,
                offender,
                event,
                detail,
            },
            EventKind::Lookup {
                peer,
                resource_type,
            } => EventLine::Lookup {
                peer,
                resource_type,
            },
            EventKind::AdvanceOnly => EventLine::AdvanceOnly,
        }
    }
}

fn parse_event(line_no: usize, text: &str, index: usize) -> Result<Event, ScenarioError> {
    let parse_err = |message: String| ScenarioError::Parse {
        line: line_no,
        message,
    };
    let mut value: Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| parse_err("event must be a JSON object".into()))?;
    let time = obj
        .remove("time")
        .ok_or_else(|| parse_err("missing `time`".into()))?
        .as_u64()
        .ok_or_else(|| parse_err("`time` must be a non-negative integer".into()))?;
    let line: EventLine = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
    Ok(Event {
        time,
        kind: line.into_kind(&format!("events[{index}]"))?,
    })
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| ScenarioError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (header_no, header_text) = lines.next().ok_or(ScenarioError::Parse {
            line: 1,
            message: "missing header line".into(),
        })?;
        let header: HeaderLine =
            serde_json::from_str(header_text).map_err(|e| ScenarioError::Parse {
                line: header_no,
                message: e.to_string(),
            })?;
        let config = header.config.to_config()?;

        let events = lines
            .enumerate()
            .map(|(i, (no, l))| parse_event(no, l, i))
            .collect::<Result<Vec<_>, _>>()?;

        let scenario = Scenario {
            name: header.scenario,
            n: header.n,
            members: header.members,
            config,
            events,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Checks sizes, ordering and that every event refers to peers that are
    /// present (or, for offenders, known) at that point of the timeline.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if self.members.len() != self.n {
            return Err(invalid(
                "members",
                format!("expected {} group sizes", self.n),
            ));
        }
        let mut net = NetworkState::build(self.n, &self.members)
            .map_err(|e| invalid("members", e.to_string()))?;
        let mut known: std::collections::BTreeSet<PeerId> = net.peers().map(|p| p.id).collect();
        let mut last = 0;
        for (i, ev) in self.events.iter().enumerate() {
            let field = |name: &str| format!("events[{i}].{name}");
            if ev.time < last {
                return Err(invalid(field("time"), "event times must not decrease"));
            }
            last = ev.time;
            let present = |net: &NetworkState, p: PeerId, name: &str| {
                if net.contains(p) {
                    Ok(())
                } else {
                    Err(invalid(field(name), format!("{p} is not in the network")))
                }
            };
            match &ev.kind {
                EventKind::Join { peer, group } => {
                    net.join(*peer, *group)
                        .map_err(|e| invalid(field("peer"), e.to_string()))?;
                    known.insert(*peer);
                }
                EventKind::Leave { peer } => {
                    net.leave(*peer)
                        .map_err(|e| invalid(field("peer"), e.to_string()))?;
                }
                EventKind::AccessRequest { peer, .. } => present(&net, *peer, "peer")?,
                EventKind::ReportMisbehavior {
                    reporter, offender, ..
                } => {
                    present(&net, *reporter, "reporter")?;
                    if !known.contains(offender) {
                        return Err(invalid(
                            field("offender"),
                            format!("{offender} never joined"),
                        ));
                    }
                }
                EventKind::Lookup {
                    peer,
                    resource_type,
                } => {
                    net.route_lookup(*peer, *resource_type)
                        .map_err(|e| invalid(field("resource_type"), e.to_string()))?;
                }
                EventKind::AdvanceOnly => {}
            }
        }
        Ok(())
    }

    /// Serializes back to the scenario file format.
    pub fn to_jsonl(&self) -> String {
        let header = HeaderLine {
            scenario: self.name.clone(),
            n: self.n,
            members: self.members.clone(),
            config: ConfigLine::from_config(&self.config),
        };
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for ev in &self.events {
            let mut v =
                serde_json::to_value(EventLine::from_kind(&ev.kind)).expect("event serializes");
            v.as_object_mut()
                .expect("events serialize as objects")
                .insert("time".into(), ev.time.into());
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    /// Random but valid scenario: access traffic, scripted bursts, reports,
    /// churn and lookups, driven by `seed`.
    pub fn generate(seed: u64, n: usize, members: &[usize], event_count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = NetworkState::build(n, members).expect("valid generator sizes");
        let mut known: Vec<PeerId> = net.peers().map(|p| p.id).collect();
        let mut next_id = known.len() as u64;
        let mut time: Seconds = 0;
        let mut events = Vec::with_capacity(event_count);

        while events.len() < event_count {
            time += match rng.gen_range(0..20) {
                0 => DAY,
                1..=3 => rng.gen_range(60..3_600),
                _ => rng.gen_range(0..15),
            };
            let present: Vec<PeerId> = net.peers().map(|p| p.id).collect();
            let pick = |rng: &mut ChaCha8Rng| *present.choose(rng).expect("network never empties");
            let kind = match rng.gen_range(0..100) {
                0..=44 => {
                    let target = if rng.gen_bool(0.8) {
                        AccessTarget::Resource {
                            resource: *ResourceKind::ALL.choose(&mut rng).unwrap(),
                            action: *Action::ALL.choose(&mut rng).unwrap(),
                        }
                    } else {
                        AccessTarget::Communicate(*CommTarget::ALL.choose(&mut rng).unwrap())
                    };
                    EventKind::AccessRequest {
                        peer: pick(&mut rng),
                        target,
                    }
                }
                45..=54 => {
                    // burst of denied probes from a regular member, if any
                    let regulars: Vec<PeerId> = net
                        .peers()
                        .filter(|p| p.role == Role::RegularMember)
                        .map(|p| p.id)
                        .collect();
                    let Some(&peer) = regulars.choose(&mut rng) else {
                        continue;
                    };
                    let probes = rng.gen_range(2..6);
                    for k in 0..probes {
                        if events.len() + 1 >= event_count {
                            break;
                        }
                        events.push(Event {
                            time: time + k,
                            kind: EventKind::AccessRequest {
                                peer,
                                target: AccessTarget::Resource {
                                    resource: ResourceKind::GlobalResourceTable,
                                    action: Action::View,
                                },
                            },
                        });
                    }
                    time += probes;
                    EventKind::AccessRequest {
                        peer,
                        target: AccessTarget::Resource {
                            resource: ResourceKind::LocalResourceTable,
                            action: Action::View,
                        },
                    }
                }
                55..=62 => EventKind::ReportMisbehavior {
                    reporter: pick(&mut rng),
                    offender: *known.choose(&mut rng).unwrap(),
                    event: *SecurityEvent::ALL.choose(&mut rng).unwrap(),
                    detail: "scripted report".into(),
                },
                63..=74 => {
                    let peer = if rng.gen_bool(0.3) {
                        // rejoin of a departed peer
                        known
                            .iter()
                            .copied()
                            .filter(|p| !net.contains(*p))
                            .collect::<Vec<_>>()
                            .choose(&mut rng)
                            .copied()
                    } else {
                        None
                    };
                    let peer = peer.unwrap_or_else(|| {
                        next_id += 1;
                        PeerId(next_id - 1)
                    });
                    let group = rng.gen_range(0..n);
                    net.join(peer, group).expect("fresh or departed peer");
                    if !known.contains(&peer) {
                        known.push(peer);
                    }
                    EventKind::Join { peer, group }
                }
                75..=84 if present.len() > 1 => {
                    let peer = pick(&mut rng);
                    net.leave(peer).expect("present peer");
                    EventKind::Leave { peer }
                }
                75..=94 => {
                    let occupied: Vec<usize> =
                        (0..n).filter(|&g| net.head_of(g).is_some()).collect();
                    EventKind::Lookup {
                        peer: pick(&mut rng),
                        resource_type: *occupied.choose(&mut rng).unwrap(),
                    }
                }
                _ => EventKind::AdvanceOnly,
            };
            events.push(Event { time, kind });
        }

        Scenario {
            name: format!("generated-{seed}"),
            n,
            members: members.to_vec(),
            config: ScenarioConfig {
                seed,
                ..ScenarioConfig::default()
            },
            events,
        }
    }
}
