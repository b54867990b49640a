//! Two-level overlay: a transit ring of group heads on top of fully connected
//! resource groups.
//!
//! Group `i` holds the peers serving resource type `i`. Its primary head
//! `H_i` sits at ring position `i`; positions never move, only the peer
//! occupying them changes. Members reach the ring only through their own
//! head. Every peer keeps an IRT with one `(resource_type, head)` tuple per
//! resource type, refreshed eagerly after each membership change.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ledger::canonical_json;
use crate::policy::Role;
use crate::PeerId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OverlayError {
    #[error("network needs at least one resource type and one size per group")]
    InvalidSize,
    #[error("unknown peer {0}")]
    UnknownPeer(PeerId),
    #[error("peer {0} is already in the network")]
    AlreadyPresent(PeerId),
    #[error("resource type {0} out of range")]
    BadResourceType(usize),
    #[error("group {0} has no head")]
    VacantGroup(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IrtEntry {
    pub resource_type: usize,
    pub head: Option<PeerId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Peer {
    pub id: PeerId,
    pub role: Role,
    pub group: usize,
    pub irt: Vec<IrtEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Group {
    pub members: BTreeSet<PeerId>,
    pub primary: Option<PeerId>,
    pub secondary: Option<PeerId>,
}

/// A role assigned to a peer by a membership change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleChange {
    pub peer: PeerId,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Route {
    pub hops: Vec<PeerId>,
}

impl Route {
    pub fn hop_count(&self) -> usize {
        self.hops.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    HeadCount {
        expected: usize,
        found: usize,
    },
    HeadMismatch {
        group: usize,
    },
    HeadlessGroup {
        group: usize,
    },
    MultipleSecondaries {
        group: usize,
    },
    MissingPeer {
        peer: PeerId,
    },
    WrongGroup {
        peer: PeerId,
    },
    RoleMismatch {
        peer: PeerId,
        expected: Role,
        found: Role,
    },
    NotAdjacent {
        a: PeerId,
        b: PeerId,
    },
    IrtLength {
        peer: PeerId,
        len: usize,
    },
    StaleIrt {
        peer: PeerId,
        resource_type: usize,
    },
}

/// Shortest arc from ring position `i` to `j` on a ring of `n`, endpoints
/// included. Equal arcs go toward increasing index.
pub fn ring_route(i: usize, j: usize, n: usize) -> Vec<usize> {
    assert!(i < n && j < n, "ring positions out of range");
    let forward = (j + n - i) % n;
    let backward = (n - forward) % n;
    if forward <= backward {
        (0..=forward).map(|k| (i + k) % n).collect()
    } else {
        (0..=backward).map(|k| (i + n - k) % n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkState {
    n: usize,
    heads: Vec<Option<PeerId>>,
    groups: Vec<Group>,
    peers: BTreeMap<PeerId, Peer>,
}

impl NetworkState {
    /// Builds `n` groups with sequential peer ids: each group's head first,
    /// then its members. The first member of a group becomes its secondary.
    pub fn build(n: usize, members_per_group: &[usize]) -> Result<Self, OverlayError> {
        if n == 0 || members_per_group.len() != n {
            return Err(OverlayError::InvalidSize);
        }
        let mut state = NetworkState {
            n,
            heads: vec![None; n],
            groups: vec![Group::default(); n],
            peers: BTreeMap::new(),
        };
        let mut next = 0u64;
        for (g, &count) in members_per_group.iter().enumerate() {
            for _ in 0..=count {
                state.insert(PeerId(next), g);
                next += 1;
            }
        }
        state.refresh_irts();
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn heads(&self) -> &[Option<PeerId>] {
        &self.heads
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn peer(&self, id: PeerId) -> Option<&Peer> {
        self.peers.get(&id)
    }

    /// Direct access for fault injection in tests.
    pub fn peer_mut(&mut self, id: PeerId) -> Option<&mut Peer> {
        self.peers.get_mut(&id)
    }

    pub fn peers(&self) -> impl Iterator<Item = &Peer> {
        self.peers.values()
    }

    pub fn contains(&self, id: PeerId) -> bool {
        self.peers.contains_key(&id)
    }

    pub fn head_of(&self, group: usize) -> Option<PeerId> {
        self.heads.get(group).copied().flatten()
    }

    /// Adds `id` to `group` with the highest vacant role.
    fn insert(&mut self, id: PeerId, group: usize) -> Role {
        let g = &mut self.groups[group];
        let role = if g.primary.is_none() {
            g.primary = Some(id);
            self.heads[group] = Some(id);
            Role::PrimaryGroupHead
        } else if g.secondary.is_none() {
            g.secondary = Some(id);
            Role::SecondaryGroupHead
        } else {
            Role::RegularMember
        };
        g.members.insert(id);
        self.peers.insert(
            id,
            Peer {
                id,
                role,
                group,
                irt: Vec::new(),
            },
        );
        role
    }

    fn set_role(&mut self, id: PeerId, role: Role, changes: &mut Vec<RoleChange>) {
        self.peers
            .get_mut(&id)
            .expect("member has a peer record")
            .role = role;
        changes.push(RoleChange { peer: id, role });
    }

    fn refresh_irts(&mut self) {
        let table: Vec<IrtEntry> = self
            .heads
            .iter()
            .enumerate()
            .map(|(resource_type, &head)| IrtEntry {
                resource_type,
                head,
            })
            .collect();
        for p in self.peers.values_mut() {
            p.irt.clone_from(&table);
        }
    }

    /// Adds a peer to the group serving `resource_type`. A peer joining a
    /// vacant group becomes its primary head.
    pub fn join(&mut self, peer: PeerId, resource_type: usize) -> Result<RoleChange, OverlayError> {
        if self.peers.contains_key(&peer) {
            return Err(OverlayError::AlreadyPresent(peer));
        }
        if resource_type >= self.n {
            return Err(OverlayError::BadResourceType(resource_type));
        }
        let role = self.insert(peer, resource_type);
        self.refresh_irts();
        Ok(RoleChange { peer, role })
    }

    /// Removes a peer. A departing primary is replaced by the secondary and
    /// the lowest-id regular member becomes secondary. A group whose last
    /// peer leaves stays on the ring as a vacant position.
    pub fn leave(&mut self, peer: PeerId) -> Result<Vec<RoleChange>, OverlayError> {
        let gone = self
            .peers
            .remove(&peer)
            .ok_or(OverlayError::UnknownPeer(peer))?;
        let gi = gone.group;
        self.groups[gi].members.remove(&peer);

        let mut changes = Vec::new();
        let g = &self.groups[gi];
        let lowest_regular = g
            .members
            .iter()
            .copied()
            .find(|m| Some(*m) != g.primary && Some(*m) != g.secondary);

        match gone.role {
            Role::PrimaryGroupHead => {
                let (successor, next_secondary) = match g.secondary {
                    Some(s) => (Some(s), lowest_regular),
                    None => {
                        // no secondary; only reachable from corrupted state
                        let mut rest = g.members.iter().copied();
                        (rest.next(), rest.next())
                    }
                };
                self.groups[gi].primary = successor;
                self.groups[gi].secondary = next_secondary;
                self.heads[gi] = successor;
                if let Some(s) = successor {
                    self.set_role(s, Role::PrimaryGroupHead, &mut changes);
                }
                if let Some(s) = next_secondary {
                    self.set_role(s, Role::SecondaryGroupHead, &mut changes);
                }
            }
            Role::SecondaryGroupHead => {
                self.groups[gi].secondary = lowest_regular;
                if let Some(s) = lowest_regular {
                    self.set_role(s, Role::SecondaryGroupHead, &mut changes);
                }
            }
            Role::RegularMember => {}
        }
        self.refresh_irts();
        Ok(changes)
    }

    /// Ring positions that currently have a head.
    fn occupied(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.heads[i].is_some()).collect()
    }

    /// Route among heads, skipping vacant ring positions.
    fn head_route(&self, from: usize, to: usize) -> Vec<PeerId> {
        let occupied = self.occupied();
        let pos = |g: usize| occupied.binary_search(&g).expect("position is occupied");
        ring_route(pos(from), pos(to), occupied.len())
            .into_iter()
            .map(|k| self.heads[occupied[k]].expect("occupied"))
            .collect()
    }

    /// Path from `src` to the head of group `resource_type`: up to the own
    /// head, then the shorter arc of the transit ring.
    pub fn route_lookup(&self, src: PeerId, resource_type: usize) -> Result<Route, OverlayError> {
        let peer = self.peers.get(&src).ok_or(OverlayError::UnknownPeer(src))?;
        if resource_type >= self.n {
            return Err(OverlayError::BadResourceType(resource_type));
        }
        if self.heads[resource_type].is_none() {
            return Err(OverlayError::VacantGroup(resource_type));
        }
        let mut hops = Vec::new();
        if peer.role != Role::PrimaryGroupHead {
            hops.push(src);
        }
        hops.extend(self.head_route(peer.group, resource_type));
        Ok(Route { hops })
    }

    /// Overlay links: every pair inside a group, and neighbouring heads on the
    /// ring of occupied positions.
    pub fn adjacent(&self, a: PeerId, b: PeerId) -> bool {
        if a == b {
            return false;
        }
        let (Some(pa), Some(pb)) = (self.peers.get(&a), self.peers.get(&b)) else {
            return false;
        };
        if pa.group == pb.group {
            let g = &self.groups[pa.group];
            return g.members.contains(&a) && g.members.contains(&b);
        }
        if self.heads[pa.group] != Some(a) || self.heads[pb.group] != Some(b) {
            return false;
        }
        let occupied = self.occupied();
        let k = occupied.len();
        let ia = occupied.binary_search(&pa.group).unwrap();
        let ib = occupied.binary_search(&pb.group).unwrap();
        (ia + 1) % k == ib || (ib + 1) % k == ia
    }

    pub fn check_invariants(&self) -> Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        if self.heads.len() != self.n || self.groups.len() != self.n {
            v.push(Violation::HeadCount {
                expected: self.n,
                found: self.heads.len(),
            });
            return Err(v);
        }
        for (gi, g) in self.groups.iter().enumerate() {
            if self.heads[gi] != g.primary {
                v.push(Violation::HeadMismatch { group: gi });
            }
            if g.primary.is_none() && !g.members.is_empty() {
                v.push(Violation::HeadlessGroup { group: gi });
            }
            let mut secondaries = 0;
            for &m in &g.members {
                let Some(p) = self.peers.get(&m) else {
                    v.push(Violation::MissingPeer { peer: m });
                    continue;
                };
                if p.group != gi {
                    v.push(Violation::WrongGroup { peer: m });
                }
                let expected = if g.primary == Some(m) {
                    Role::PrimaryGroupHead
                } else if g.secondary == Some(m) {
                    Role::SecondaryGroupHead
                } else {
                    Role::RegularMember
                };
                if p.role != expected {
                    v.push(Violation::RoleMismatch {
                        peer: m,
                        expected,
                        found: p.role,
                    });
                }
                if p.role == Role::SecondaryGroupHead {
                    secondaries += 1;
                }
            }
            if secondaries > 1 {
                v.push(Violation::MultipleSecondaries { group: gi });
            }
            let members: Vec<_> = g.members.iter().copied().collect();
            for (i, &a) in members.iter().enumerate() {
                for &b in &members[i + 1..] {
                    if !self.adjacent(a, b) {
                        v.push(Violation::NotAdjacent { a, b });
                    }
                }
            }
        }
        for p in self.peers.values() {
            if !self
                .groups
                .get(p.group)
                .is_some_and(|g| g.members.contains(&p.id))
            {
                v.push(Violation::WrongGroup { peer: p.id });
            }
            if p.irt.len() != self.n {
                v.push(Violation::IrtLength {
                    peer: p.id,
                    len: p.irt.len(),
                });
                continue;
            }
            for (i, e) in p.irt.iter().enumerate() {
                if e.resource_type != i || e.head != self.heads[i] {
                    v.push(Violation::StaleIrt {
                        peer: p.id,
                        resource_type: i,
                    });
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// Canonical JSON snapshot of heads, groups and IRTs.
    pub fn topology_dump(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            n: usize,
            heads: &'a [Option<PeerId>],
            groups: &'a [Group],
            peers: Vec<&'a Peer>,
        }
        let dump = Dump {
            n: self.n,
            heads: &self.heads,
            groups: &self.groups,
            peers: self.peers.values().collect(),
        };
        String::from_utf8(canonical_json(&dump)).expect("json is utf-8")
    }
}
