// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Guests, their processes and the snapshot blob.
//!
//! Blob layout (little-endian), magic `SSVM`, version 1:
//!
//! ```text
//! magic[4] version:u8 source:u32
//! generation:u32 uuid[16] next_watcher:u64
//! n:u32 { watcher:u64 last_acked:u32 open:u8 }
//! n:u32 { parked watcher:u64 }
//! n:u32 { watcher:u64 kind:u8 delay:u64 }          watcher actors
//! handler: len:u64 utf8
//! next_pid:u32
//! n:u32 { pid:u32 registry: len:u64 SSGM-stream
//!         key[16] v[16] reseed_counter:u64 interval:u64 guard:u64 epoch
//!         next:u128 base:u128 guard:u64 epoch
//!         secret:u64 }
//! cache: flag:u8 [n:u32 {u128}]
//! held: n:u32 {u128}
//! inflight: flag:u8 [pid:u32 pc:u32 remaining:u64]
//! ```
//!
//! `epoch` is `flag:u8 generation:u32`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::codec::{Reader, Truncated, Writer};
use crate::ctr_drbg::DrbgState;
use crate::entropy::{EntropySource, SeededEntropy};
use crate::gen_device::{GenDevice, Generation, VmGenUuid, WatcherHandle, WatcherId};
use crate::guard_memory::{RegionId, RegionRegistry, WipePolicy, PAGE_SIZE};
use crate::snapsafe_rng::{NonceCounter, SnapsafeRng};

use super::{AckBehaviour, EventKind, GuestId, Pid, Program, SimError, Tick};

pub const BLOB_MAGIC: &[u8; 4] = b"SSVM";
pub const BLOB_VERSION: u8 = 1;

/// Length of the random secret placed in each process.
pub const SECRET_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuestState {
    Running,
    Suspended,
    Snapshotted,
    /// Snapshotted and already used as a clone source.
    Parked,
    Paused,
}

impl fmt::Display for GuestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuestState::Running => "running",
            GuestState::Suspended => "suspended",
            GuestState::Snapshotted => "snapshotted",
            GuestState::Parked => "parked",
            GuestState::Paused => "paused",
        })
    }
}

/// One address space: its regions plus the clone-safe generators living
/// in it.
#[derive(Debug, Clone)]
pub struct Process {
    pub(crate) registry: RegionRegistry,
    pub(crate) rng: SnapsafeRng,
    pub(crate) nonce: NonceCounter,
    pub(crate) secret: RegionId,
}

impl Process {
    pub(crate) fn spawn(
        entropy: &mut SeededEntropy,
        personalization: &[u8],
        device: &GenDevice,
    ) -> Result<Process, SimError> {
        let mut registry = RegionRegistry::new();
        let mut rng = SnapsafeRng::instantiate(&mut registry, entropy, personalization)?;
        let mut secret = [0u8; SECRET_LEN];
        entropy
            .fill(&mut secret)
            .map_err(crate::snapsafe_rng::RngError::from)?;
        let secret_id = registry.register_region(PAGE_SIZE, WipePolicy::SECRET, &secret)?;
        let mut base = [0u8; 16];
        rng.generate(&mut registry, entropy, &mut base)?;
        let mut nonce = NonceCounter::new(&mut registry, u128::from_be_bytes(base))?;
        rng.attach_view(device.map_shared_view());
        nonce.attach_view(device.map_shared_view());
        Ok(Process {
            registry,
            rng,
            nonce,
            secret: secret_id,
        })
    }

    pub(crate) fn fork(&self) -> Process {
        Process {
            registry: self.registry.on_fork(),
            rng: self.rng.clone(),
            nonce: self.nonce.clone(),
            secret: self.secret,
        }
    }

    pub fn registry(&self) -> &RegionRegistry {
        &self.registry
    }

    pub fn rng(&self) -> &SnapsafeRng {
        &self.rng
    }

    pub fn nonce(&self) -> &NonceCounter {
        &self.nonce
    }

    /// The process's secret, as currently held in memory.
    pub fn secret(&self) -> &[u8] {
        self.registry
            .region_bytes(self.secret)
            .map_or(&[], |b| &b[..SECRET_LEN])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    Sleeping { wake_at: Tick, token: u64 },
    Frozen { remaining: Tick },
}

/// Handler execution suspended at a `sleep` step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Inflight {
    pub pid: Pid,
    pub pc: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PendingFence {
    pub token: u64,
    pub pid: Pid,
}

#[derive(Debug)]
pub struct Guest {
    pub(crate) id: GuestId,
    pub(crate) parent: Option<GuestId>,
    pub(crate) state: GuestState,
    pub(crate) device: GenDevice,
    pub(crate) processes: BTreeMap<Pid, Process>,
    pub(crate) next_pid: Pid,
    pub(crate) actors: BTreeMap<WatcherId, AckBehaviour>,
    pub(crate) handler: Program,
    pub(crate) inflight: Option<Inflight>,
    pub(crate) cache: Option<Vec<u128>>,
    pub(crate) held: Vec<u128>,
    pub(crate) entropy: SeededEntropy,
    pub(crate) snapshot: Option<SnapshotBlob>,
    pub(crate) fences: Vec<PendingFence>,
    pub(crate) acks_scheduled: BTreeSet<WatcherId>,
    pub(crate) epoch_log: Vec<(Tick, EventKind)>,
}

impl Guest {
    pub fn id(&self) -> GuestId {
        self.id
    }

    pub fn parent(&self) -> Option<GuestId> {
        self.parent
    }

    pub fn state(&self) -> GuestState {
        self.state
    }

    pub fn generation(&self) -> Generation {
        self.device.generation()
    }

    pub fn device(&self) -> &GenDevice {
        &self.device
    }

    pub fn process(&self, pid: Pid) -> Option<&Process> {
        self.processes.get(&pid)
    }

    pub fn pids(&self) -> impl Iterator<Item = Pid> + '_ {
        self.processes.keys().copied()
    }

    pub fn handler(&self) -> &Program {
        &self.handler
    }

    /// Latest snapshot taken of this guest.
    pub fn snapshot(&self) -> Option<&SnapshotBlob> {
        self.snapshot.as_ref()
    }

    /// Lifecycle events applied to this guest, in tick order.
    pub fn epoch_log(&self) -> &[(Tick, EventKind)] {
        &self.epoch_log
    }

    pub fn held(&self) -> &[u128] {
        &self.held
    }

    pub(crate) fn encode(&self) -> Result<SnapshotBlob, SimError> {
        let mut w = Writer::new();
        w.bytes(BLOB_MAGIC).u8(BLOB_VERSION).u32(self.id);
        let d = &self.device;
        w.u32(d.generation().value())
            .bytes(&d.backend_uuid().0)
            .u64(d.next_watcher_id());
        w.u32(d.watchers().count() as u32);
        for h in d.watchers() {
            w.u64(h.id.0).u32(h.last_acked.value()).u8(h.open as u8);
        }
        w.u32(d.parked().count() as u32);
        for id in d.parked() {
            w.u64(id.0);
        }
        w.u32(self.actors.len() as u32);
        for (id, b) in &self.actors {
            w.u64(id.0);
            match b {
                AckBehaviour::After(t) => w.u8(0).u64(*t),
                AckBehaviour::Never => w.u8(1).u64(0),
            };
        }
        w.blob(self.handler.to_string().as_bytes());
        w.u32(self.next_pid);
        w.u32(self.processes.len() as u32);
        for (pid, p) in &self.processes {
            w.u32(*pid).blob(&p.registry.serialize_snapshot()?);
            let (state, interval, guard, epoch) = p.rng.parts();
            w.bytes(&state.key)
                .bytes(&state.v)
                .u64(state.reseed_counter)
                .u64(interval)
                .u64(guard.0);
            put_epoch(&mut w, epoch);
            let (next, base, guard, epoch) = p.nonce.parts();
            w.u128(next).u128(base).u64(guard.0);
            put_epoch(&mut w, epoch);
            w.u64(p.secret.0);
        }
        match &self.cache {
            None => {
                w.u8(0);
            }
            Some(values) => {
                w.u8(1).u32(values.len() as u32);
                for v in values {
                    w.u128(*v);
                }
            }
        }
        w.u32(self.held.len() as u32);
        for v in &self.held {
            w.u128(*v);
        }
        match self.inflight {
            None => {
                w.u8(0);
            }
            Some(Inflight {
                pid,
                pc,
                phase: Phase::Frozen { remaining },
            }) => {
                w.u8(1).u32(pid).u32(pc as u32).u64(remaining);
            }
            Some(_) => unreachable!("continuations are frozen before snapshot"),
        }
        Ok(SnapshotBlob(w.finish()))
    }

    /// Rebuilds a guest from `blob` under a new identity. The device gets
    /// a fresh shared page, and every generator is pointed at it while
    /// keeping the epoch it recorded before the snapshot.
    pub(crate) fn restore(
        blob: &SnapshotBlob,
        id: GuestId,
        parent: Option<GuestId>,
        entropy: SeededEntropy,
    ) -> Result<Guest, SimError> {
        decode(blob, id, parent, entropy).map_err(|e| match e {
            Decode::Truncated(t) => SimError::CorruptBlob(format!("truncated at {}", t.0)),
            Decode::Sim(e) => e,
        })
    }
}

fn put_epoch(w: &mut Writer, epoch: Option<Generation>) {
    match epoch {
        None => w.u8(0).u32(0),
        Some(g) => w.u8(1).u32(g.value()),
    };
}

enum Decode {
    Truncated(Truncated),
    Sim(SimError),
}

impl From<Truncated> for Decode {
    fn from(t: Truncated) -> Decode {
        Decode::Truncated(t)
    }
}

impl From<SimError> for Decode {
    fn from(e: SimError) -> Decode {
        Decode::Sim(e)
    }
}

impl From<crate::guard_memory::MemoryError> for Decode {
    fn from(e: crate::guard_memory::MemoryError) -> Decode {
        Decode::Sim(e.into())
    }
}

fn corrupt(msg: impl Into<String>) -> Decode {
    Decode::Sim(SimError::CorruptBlob(msg.into()))
}

fn get_epoch(r: &mut Reader<'_>) -> Result<Option<Generation>, Decode> {
    let flag = r.u8("epoch flag")?;
    let g = r.u32("epoch")?;
    match flag {
        0 => Ok(None),
        1 => Ok(Some(Generation(g))),
        _ => Err(corrupt("bad epoch flag")),
    }
}

fn decode(
    blob: &SnapshotBlob,
    id: GuestId,
    parent: Option<GuestId>,
    entropy: SeededEntropy,
) -> Result<Guest, Decode> {
    let mut r = Reader::new(&blob.0);
    if r.take(4, "magic")? != BLOB_MAGIC {
        return Err(corrupt("bad magic"));
    }
    if r.u8("version")? != BLOB_VERSION {
        return Err(corrupt("unsupported version"));
    }
    let _source = r.u32("source guest")?;
    let generation = Generation(r.u32("generation")?);
    let uuid = VmGenUuid(r.array("uuid")?);
    let next_watcher = r.u64("next watcher")?;
    let mut watchers = Vec::new();
    for _ in 0..r.u32("watcher count")? {
        let wid = WatcherId(r.u64("watcher id")?);
        let last_acked = Generation(r.u32("last acked")?);
        let open = match r.u8("watcher open")? {
            0 => false,
            1 => true,
            _ => return Err(corrupt("bad watcher flag")),
        };
        if wid.0 >= next_watcher || last_acked > generation {
            return Err(corrupt("inconsistent watcher"));
        }
        watchers.push(WatcherHandle {
            id: wid,
            last_acked,
            open,
        });
    }
    let mut parked = Vec::new();
    for _ in 0..r.u32("parked count")? {
        parked.push(WatcherId(r.u64("parked id")?));
    }
    let mut actors = BTreeMap::new();
    for _ in 0..r.u32("actor count")? {
        let wid = WatcherId(r.u64("actor watcher")?);
        let kind = r.u8("actor kind")?;
        let delay = r.u64("actor delay")?;
        let b = match kind {
            0 => AckBehaviour::After(delay),
            1 => AckBehaviour::Never,
            _ => return Err(corrupt("bad actor kind")),
        };
        actors.insert(wid, b);
    }
    let handler = std::str::from_utf8(r.blob("handler")?)
        .ok()
        .and_then(|s| s.parse::<Program>().ok())
        .ok_or_else(|| corrupt("bad handler program"))?;
    let next_pid = r.u32("next pid")?;
    let device = GenDevice::from_parts(generation, uuid, watchers, parked, next_watcher);

    let mut processes = BTreeMap::new();
    for _ in 0..r.u32("process count")? {
        let pid = r.u32("pid")?;
        let registry = RegionRegistry::deserialize_snapshot(r.blob("registry")?)?;
        let state = DrbgState {
            key: r.array("drbg key")?,
            v: r.array("drbg v")?,
            reseed_counter: r.u64("reseed counter")?,
        };
        let interval = r.u64("reseed interval")?;
        let guard = RegionId(r.u64("rng guard")?);
        let epoch = get_epoch(&mut r)?;
        let mut rng = SnapsafeRng::from_parts(state, interval, guard, epoch)
            .map_err(|e| corrupt(e.to_string()))?;
        let next = r.u128("nonce next")?;
        let base = r.u128("nonce base")?;
        let nguard = RegionId(r.u64("nonce guard")?);
        let nepoch = get_epoch(&mut r)?;
        let mut nonce = NonceCounter::from_parts(next, base, nguard, nepoch);
        let secret = RegionId(r.u64("secret region")?);
        for region in [guard, nguard, secret] {
            if registry.region(region).is_none() {
                return Err(corrupt(format!("process {pid} lacks region {region}")));
            }
        }
        if pid >= next_pid {
            return Err(corrupt("pid beyond next pid"));
        }
        rng.rebind_view(Some(device.map_shared_view()));
        nonce.rebind_view(Some(device.map_shared_view()));
        processes.insert(
            pid,
            Process {
                registry,
                rng,
                nonce,
                secret,
            },
        );
    }
    let cache = match r.u8("cache flag")? {
        0 => None,
        1 => {
            let n = r.u32("cache length")?;
            Some((0..n).map(|_| r.u128("cache value")).collect::<Result<_, _>>()?)
        }
        _ => return Err(corrupt("bad cache flag")),
    };
    let n = r.u32("held length")?;
    let held = (0..n).map(|_| r.u128("held value")).collect::<Result<_, _>>()?;
    let inflight = match r.u8("inflight flag")? {
        0 => None,
        1 => {
            let pid = r.u32("inflight pid")?;
            let pc = r.u32("inflight pc")? as usize;
            let remaining = r.u64("inflight remaining")?;
            if !processes.contains_key(&pid) || pc > handler.steps.len() {
                return Err(corrupt("bad continuation"));
            }
            Some(Inflight {
                pid,
                pc,
                phase: Phase::Frozen { remaining },
            })
        }
        _ => return Err(corrupt("bad inflight flag")),
    };
    if !r.is_empty() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Guest {
        id,
        parent,
        state: GuestState::Running,
        device,
        processes,
        next_pid,
        actors,
        handler,
        inflight,
        cache,
        held,
        entropy,
        snapshot: None,
        fences: Vec::new(),
        acks_scheduled: BTreeSet::new(),
        epoch_log: Vec::new(),
    })
}

/// Serialized suspended guest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SnapshotBlob(pub Vec<u8>);

impl SnapshotBlob {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    fn header(&self) -> Option<(GuestId, Generation, VmGenUuid)> {
        let mut r = Reader::new(&self.0);
        if r.take(4, "magic").ok()? != BLOB_MAGIC || r.u8("version").ok()? != BLOB_VERSION {
            return None;
        }
        let source = r.u32("source").ok()?;
        let generation = Generation(r.u32("generation").ok()?);
        let uuid = VmGenUuid(r.array("uuid").ok()?);
        Some((source, generation, uuid))
    }

    /// Guest the snapshot was taken from.
    pub fn source(&self) -> Option<GuestId> {
        self.header().map(|h| h.0)
    }

    /// Device generation at snapshot time.
    pub fn generation(&self) -> Option<Generation> {
        self.header().map(|h| h.1)
    }

    /// Backend identifier at snapshot time.
    pub fn backend_uuid(&self) -> Option<VmGenUuid> {
        self.header().map(|h| h.2)
    }
}
