//! Contract-based access control for a two-level P2P overlay.
//!
//! * [`policy`]: static permission matrix, communication rules and the
//!   security-event response table.
//! * [`contracts`]: register, judge and role access-control contracts.
//! * [`ledger`]: hash-chained block log and replicas re-executing it.
//! * [`overlay`]: transit ring of group heads over fully connected groups.
//! * [`sim`]: scenario files, the deterministic event loop, traces and replay.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod contracts;
pub mod ledger;
pub mod overlay;
pub mod policy;
pub mod sim;

/// Identity of a peer. Stable across leave and rejoin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerId(pub u64);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "peer {}", self.0)
    }
}
