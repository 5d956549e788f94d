// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event simulator of microVM life cycles.
//!
//! A [`World`] boots guest 0 at tick 0 and then executes [`SimEvent`]s in
//! `(tick, insertion order)` order. Suspend and snapshot run the guard
//! memory wipes; which event kinds bump the generation device is decided
//! by a [`PolicyTable`]. Handlers emit 128-bit values that are collected
//! per guest in a [`CloneTree`] and in the [`EventLog`].
//!
//! The generation bump of a cloned guest is applied before any of its code
//! runs again. Real VMMs have to provide that ordering; here it holds by
//! construction.

mod guest;
mod log;
mod program;
mod tree;
mod world;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::gen_device::DeviceError;
use crate::guard_memory::MemoryError;
use crate::snapsafe_rng::RngError;

pub use guest::{Guest, GuestState, Process, SnapshotBlob, BLOB_MAGIC, BLOB_VERSION};
pub use log::{Detail, EventLog, LogEvent, LogParseError, LogRecord};
pub use program::{Program, ProgramError, Step};
pub use tree::{CloneTree, Emission};
pub use world::{run_schedule, FenceStatus, World};

pub type Tick = u64;
pub type GuestId = u32;
pub type Pid = u32;

/// Process id of a guest's main process.
pub const MAIN_PID: Pid = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Boot,
    Suspend,
    Snapshot,
    CloneRestore,
    PlainRestore,
    Resume,
    Fork,
    Reboot,
    Pause,
    LiveMigrate,
    Invoke,
    Fence,
}

impl EventKind {
    pub const ALL: [EventKind; 12] = [
        EventKind::Boot,
        EventKind::Suspend,
        EventKind::Snapshot,
        EventKind::CloneRestore,
        EventKind::PlainRestore,
        EventKind::Resume,
        EventKind::Fork,
        EventKind::Reboot,
        EventKind::Pause,
        EventKind::LiveMigrate,
        EventKind::Invoke,
        EventKind::Fence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::Boot => "Boot",
            EventKind::Suspend => "Suspend",
            EventKind::Snapshot => "Snapshot",
            EventKind::CloneRestore => "CloneRestore",
            EventKind::PlainRestore => "PlainRestore",
            EventKind::Resume => "Resume",
            EventKind::Fork => "Fork",
            EventKind::Reboot => "Reboot",
            EventKind::Pause => "Pause",
            EventKind::LiveMigrate => "LiveMigrate",
            EventKind::Invoke => "Invoke",
            EventKind::Fence => "Fence",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown event kind `{0}`")]
pub struct UnknownEventKind(pub String);

impl FromStr for EventKind {
    type Err = UnknownEventKind;

    /// Case-insensitive; `-` and `_` are ignored.
    fn from_str(s: &str) -> Result<EventKind, UnknownEventKind> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .map(|c| c.to_ascii_lowercase())
            .collect();
        EventKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| UnknownEventKind(s.to_string()))
    }
}

/// Which event kinds change system identity (bump the generation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    bumps: BTreeMap<EventKind, bool>,
}

impl Default for PolicyTable {
    /// Only restoring a snapshot as a new copy bumps; reboot, pause,
    /// resume, live migration and in-place restore keep the generation.
    fn default() -> PolicyTable {
        let bumps = EventKind::ALL
            .into_iter()
            .map(|k| (k, k == EventKind::CloneRestore))
            .collect();
        PolicyTable { bumps }
    }
}

impl PolicyTable {
    pub fn bumps(&self, kind: EventKind) -> bool {
        self.bumps.get(&kind).copied().unwrap_or(false)
    }

    pub fn set(&mut self, kind: EventKind, bump: bool) {
        self.bumps.insert(kind, bump);
    }

    pub fn rows(&self) -> impl Iterator<Item = (EventKind, bool)> + '_ {
        self.bumps.iter().map(|(k, b)| (*k, *b))
    }
}

/// Which guests an event applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Guest(GuestId),
    /// Every guest in the running state when the event fires.
    Running,
    /// Every guest snapshotted and not yet used as a clone source.
    Snapshotted,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Guest(id) => write!(f, "{id}"),
            Target::Running => f.write_str("running"),
            Target::Snapshotted => f.write_str("snapshotted"),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Target, String> {
        match s {
            "running" => Ok(Target::Running),
            "snapshotted" => Ok(Target::Snapshotted),
            _ => s
                .parse()
                .map(Target::Guest)
                .map_err(|_| format!("bad target `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimEvent {
    pub tick: Tick,
    pub kind: EventKind,
    pub target: Target,
    /// Clone count for `CloneRestore` (default 1).
    pub count: Option<u32>,
    /// Process for `Fork`, `Invoke` and `Fence` (default the main process).
    pub pid: Option<Pid>,
}

impl SimEvent {
    pub fn new(tick: Tick, kind: EventKind, target: Target) -> SimEvent {
        SimEvent {
            tick,
            kind,
            target,
            count: None,
            pid: None,
        }
    }

    pub fn with_count(mut self, count: u32) -> SimEvent {
        self.count = Some(count);
        self
    }

    pub fn with_pid(mut self, pid: Pid) -> SimEvent {
        self.pid = Some(pid);
        self
    }
}

/// How a watcher actor reacts to a new generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AckBehaviour {
    After(Tick),
    Never,
}

impl fmt::Display for AckBehaviour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AckBehaviour::After(d) => write!(f, "ack-after {d}"),
            AckBehaviour::Never => f.write_str("never"),
        }
    }
}

pub const DEFAULT_FENCE_TIMEOUT: Tick = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub policy: PolicyTable,
    /// Ticks a fenced invoke waits for acknowledgements before failing.
    pub fence_timeout: Tick,
    /// Watchers opened whenever the guest is booted, restored or rebooted.
    pub watchers: BTreeMap<GuestId, Vec<AckBehaviour>>,
    /// Handler programs; a clone without an entry inherits its parent's.
    pub handlers: BTreeMap<GuestId, Program>,
}

impl SimConfig {
    pub fn new(seed: u64) -> SimConfig {
        SimConfig {
            seed,
            policy: PolicyTable::default(),
            fence_timeout: DEFAULT_FENCE_TIMEOUT,
            watchers: BTreeMap::new(),
            handlers: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("no guest {0}")]
    NoSuchGuest(GuestId),
    #[error("guest {guest} has no process {pid}")]
    NoSuchProcess { guest: GuestId, pid: Pid },
    #[error("guest {guest} is {state}")]
    BadState { guest: GuestId, state: GuestState },
    #[error("guest {0} has no snapshot")]
    NoSnapshot(GuestId),
    #[error("guest {0} is already handling a request")]
    Busy(GuestId),
    #[error("guest {0} is already booted")]
    AlreadyBooted(GuestId),
    #[error("clone count must be at least 1")]
    BadCount,
    #[error("watchers of guest {guest} still outdated ({outdated}) at fence deadline")]
    FenceTimeout { guest: GuestId, outdated: usize },
    #[error("corrupt snapshot blob: {0}")]
    CorruptBlob(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Rng(#[from] RngError),
}

impl SimError {
    /// Short stable name used in log records.
    pub fn code(&self) -> &'static str {
        match self {
            SimError::NoSuchGuest(_) => "NoSuchGuest",
            SimError::NoSuchProcess { .. } => "NoSuchProcess",
            SimError::BadState { .. } => "BadState",
            SimError::NoSnapshot(_) => "NoSnapshot",
            SimError::Busy(_) => "Busy",
            SimError::AlreadyBooted(_) => "AlreadyBooted",
            SimError::BadCount => "BadCount",
            SimError::FenceTimeout { .. } => "FenceTimeout",
            SimError::CorruptBlob(_) => "CorruptStream",
            SimError::Device(_) => "Device",
            SimError::Memory(MemoryError::CorruptStream(_)) => "CorruptStream",
            SimError::Memory(_) => "Memory",
            SimError::Rng(_) => "Rng",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy_only_clone_bumps() {
        let p = PolicyTable::default();
        for k in EventKind::ALL {
            assert_eq!(p.bumps(k), k == EventKind::CloneRestore, "{k}");
        }
    }

    #[test]
    fn kind_names_parse_loosely() {
        for k in EventKind::ALL {
            assert_eq!(k.name().parse::<EventKind>().unwrap(), k);
        }
        assert_eq!("clone-restore".parse::<EventKind>().unwrap(), EventKind::CloneRestore);
        assert!("Failover".parse::<EventKind>().is_err());
    }

    #[test]
    fn targets() {
        assert_eq!("12".parse::<Target>().unwrap(), Target::Guest(12));
        assert_eq!("running".parse::<Target>().unwrap(), Target::Running);
        assert!("all".parse::<Target>().is_err());
    }
}
