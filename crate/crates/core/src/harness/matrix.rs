// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Mechanism-by-feature comparison.
//!
//! The guard-page and generation-counter columns are computed by running
//! small probes against this library. The VmGenId column and the rows that
//! describe deployment properties (privilege, containers) cannot be probed
//! here and are static, as is secret hiding for the counter, which has no
//! way to exclude memory and so nothing to probe.

use std::fmt;

use crate::entropy::{CountingEntropy, SeededEntropy};
use crate::gen_device::{GenDevice, ReadMode, ReadOutcome, VmGenUuid};
use crate::guard_memory::{RegionRegistry, WipePolicy, PAGE_SIZE};
use crate::snapsafe_rng::SnapsafeRng;
use crate::vm_sim::{SimConfig, World, MAIN_PID};

pub const MECHANISMS: [&str; 3] = ["MADV", "VmGenId", "SysGenId"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub value: String,
    /// Computed by a probe rather than taken as given.
    pub probed: bool,
}

impl Cell {
    fn probed(yes: bool) -> Cell {
        Cell {
            value: if yes { "Yes" } else { "No" }.to_string(),
            probed: true,
        }
    }

    fn fixed(value: &str) -> Cell {
        Cell {
            value: value.to_string(),
            probed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub feature: &'static str,
    /// In [`MECHANISMS`] order.
    pub cells: [Cell; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    pub rows: Vec<Row>,
}

impl FeatureMatrix {
    pub fn cell(&self, feature: &str, mechanism: &str) -> Option<&Cell> {
        let col = MECHANISMS.iter().position(|m| *m == mechanism)?;
        self.rows
            .iter()
            .find(|r| r.feature == feature)
            .map(|r| &r.cells[col])
    }
}

/// A wiped guard page in a forked child.
fn guard_works_for_fork() -> bool {
    let mut parent = RegionRegistry::new();
    let mut entropy = SeededEntropy::from_u64(1);
    let Ok(rng) = SnapsafeRng::instantiate(&mut parent, &mut entropy, &[]) else {
        return false;
    };
    let child = parent.on_fork();
    rng.guard().is_live(&parent) && rng.is_stale(&child)
}

/// A secret in an excluded region never reaches the snapshot stream.
fn guard_hides_secrets() -> bool {
    let secret = *b"probe-secret-0123456789abcdef!!";
    let mut reg = RegionRegistry::new();
    if reg.register_region(PAGE_SIZE, WipePolicy::SECRET, &secret).is_err() {
        return false;
    }
    reg.on_suspend();
    reg.serialize_snapshot()
        .is_ok_and(|s| !s.windows(secret.len()).any(|w| w == secret))
}

/// Staleness is visible by reading memory, without any call into the
/// entropy source.
fn guard_in_memory() -> bool {
    let mut reg = RegionRegistry::new();
    let mut entropy = CountingEntropy::new(SeededEntropy::from_u64(2));
    let Ok(rng) = SnapsafeRng::instantiate(&mut reg, &mut entropy, &[]) else {
        return false;
    };
    let before = entropy.calls();
    reg.on_suspend();
    rng.is_stale(&reg) && entropy.calls() == before
}

/// The wiped page carries no fresh randomness, only zeros.
fn guard_provides_entropy() -> bool {
    let mut reg = RegionRegistry::new();
    let Ok(id) = reg.register_region(PAGE_SIZE, WipePolicy::GUARD, &[0xa5]) else {
        return false;
    };
    reg.on_suspend();
    !reg.region(id).is_some_and(|r| r.is_zeroed())
}

/// Forking a process inside a guest leaves the generation alone.
fn counter_works_for_fork() -> bool {
    let mut world = World::new(SimConfig::new(3));
    let before = world.guest(0).map(|g| g.generation());
    let forked = world.fork_process(0, MAIN_PID).is_ok();
    let after = world.guest(0).map(|g| g.generation());
    forked && before != after
}

/// The generation is readable from a shared page.
fn counter_in_memory() -> bool {
    let mut dev = GenDevice::new(VmGenUuid::from_u128(1));
    let view = dev.map_shared_view();
    dev.backend_bump(VmGenUuid::from_u128(2)).is_ok()
        && view.generation() == dev.generation()
        && view.to_page()[..4] == 1u32.to_le_bytes()
}

/// A parked blocking reader is released by a bump.
fn counter_notifies() -> bool {
    let mut dev = GenDevice::new(VmGenUuid::from_u128(1));
    let w = dev.open_watcher();
    let parked = dev.read(w, ReadMode::Blocking) == Ok(ReadOutcome::Parked);
    let released = dev
        .backend_bump(VmGenUuid::from_u128(2))
        .is_ok_and(|r| r.released.contains(&w));
    parked && released && matches!(dev.read(w, ReadMode::NonBlocking), Ok(ReadOutcome::Ready(_)))
}

/// Successive generations are a plain counter, not random.
fn counter_provides_entropy() -> bool {
    let mut dev = GenDevice::new(VmGenUuid::from_u128(1));
    let mut seen = Vec::new();
    for uuid in 2..5u128 {
        if dev.backend_bump(VmGenUuid::from_u128(uuid)).is_err() {
            return false;
        }
        seen.push(dev.generation().value());
    }
    seen != [1, 2, 3]
}

pub fn feature_matrix() -> FeatureMatrix {
    let rows = vec![
        Row {
            feature: "Works for fork",
            cells: [
                Cell::probed(guard_works_for_fork()),
                Cell::fixed("No"),
                Cell::probed(counter_works_for_fork()),
            ],
        },
        Row {
            feature: "Secret hiding",
            cells: [
                Cell::probed(guard_hides_secrets()),
                Cell::fixed("No"),
                Cell::fixed("No"),
            ],
        },
        Row {
            feature: "In-memory",
            cells: [
                Cell::probed(guard_in_memory()),
                Cell::fixed("Yes"),
                Cell::probed(counter_in_memory()),
            ],
        },
        Row {
            feature: "Notification",
            cells: [
                Cell::fixed("No"),
                Cell::fixed("No"),
                Cell::probed(counter_notifies()),
            ],
        },
        Row {
            feature: "Non-root",
            cells: [Cell::fixed("Yes"), Cell::fixed("No"), Cell::fixed("Yes")],
        },
        Row {
            feature: "Min-privilege",
            cells: [Cell::fixed("Yes"), Cell::fixed("No"), Cell::fixed("No")],
        },
        Row {
            feature: "Entropy",
            cells: [
                Cell::probed(guard_provides_entropy()),
                Cell::fixed("Yes"),
                Cell::probed(counter_provides_entropy()),
            ],
        },
        Row {
            feature: "Containers",
            cells: [Cell::fixed("No"), Cell::fixed("No"), Cell::fixed("Yes")],
        },
        Row {
            feature: "Mechanism",
            cells: [
                Cell::fixed("Guard Page"),
                Cell::fixed("UUID"),
                Cell::fixed("Inc. Id"),
            ],
        },
    ];
    FeatureMatrix { rows }
}

impl fmt::Display for FeatureMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let render = |c: &Cell| {
            if c.probed {
                c.value.clone()
            } else {
                format!("{}*", c.value)
            }
        };
        let feature_w = self.rows.iter().map(|r| r.feature.len()).max().unwrap_or(0);
        let mut widths = MECHANISMS.map(str::len);
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(&r.cells) {
                *w = (*w).max(render(c).len());
            }
        }
        write!(f, "| {:feature_w$} |", "Feature")?;
        for (m, w) in MECHANISMS.iter().zip(widths) {
            write!(f, " {m:w$} |")?;
        }
        writeln!(f)?;
        write!(f, "|{}|", "-".repeat(feature_w + 2))?;
        for w in widths {
            write!(f, "{}|", "-".repeat(w + 2))?;
        }
        writeln!(f)?;
        for r in &self.rows {
            write!(f, "| {:feature_w$} |", r.feature)?;
            for (c, w) in r.cells.iter().zip(widths) {
                write!(f, " {:w$} |", render(c))?;
            }
            writeln!(f)?;
        }
        writeln!(f, "* static value, not probed")
    }
}
