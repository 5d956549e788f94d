// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::{GuestId, Tick};

/// One value handed out by an invoke handler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Emission {
    pub tick: Tick,
    pub guest: GuestId,
    pub value: u128,
}

/// Snapshot lineage of every guest in a world, with what each emitted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CloneTree {
    parents: BTreeMap<GuestId, Option<GuestId>>,
    nonces: BTreeMap<GuestId, Vec<Emission>>,
}

impl CloneTree {
    pub(crate) fn add_node(&mut self, id: GuestId, parent: Option<GuestId>) {
        self.parents.insert(id, parent);
        self.nonces.entry(id).or_default();
    }

    pub(crate) fn record(&mut self, e: Emission) {
        self.nonces.entry(e.guest).or_default().push(e);
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn root(&self) -> Option<GuestId> {
        self.parents
            .iter()
            .find(|(_, p)| p.is_none())
            .map(|(id, _)| *id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = GuestId> + '_ {
        self.parents.keys().copied()
    }

    pub fn parent(&self, id: GuestId) -> Option<GuestId> {
        self.parents.get(&id).copied().flatten()
    }

    pub fn children(&self, id: GuestId) -> Vec<GuestId> {
        self.parents
            .iter()
            .filter(|(_, p)| **p == Some(id))
            .map(|(c, _)| *c)
            .collect()
    }

    /// Nodes without children.
    pub fn leaves(&self) -> Vec<GuestId> {
        let inner: std::collections::BTreeSet<GuestId> =
            self.parents.values().flatten().copied().collect();
        self.nodes().filter(|n| !inner.contains(n)).collect()
    }

    /// Edges from the root; the root has depth 0.
    pub fn depth(&self, mut id: GuestId) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent(id) {
            id = p;
            d += 1;
        }
        d
    }

    pub fn nonce_log(&self, id: GuestId) -> &[Emission] {
        self.nonces.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Per-guest nonce logs, ordered by guest id.
    pub fn nonce_logs(&self) -> impl Iterator<Item = (GuestId, &[Emission])> {
        self.nonces.iter().map(|(g, v)| (*g, v.as_slice()))
    }

    pub fn emission_count(&self) -> usize {
        self.nonces.values().map(Vec::len).sum()
    }
}
