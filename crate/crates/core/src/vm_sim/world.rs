// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::entropy::SeededEntropy;
use crate::gen_device::{GenDevice, ReadMode, ReadOutcome, VmGenUuid, WatcherId};

use super::guest::{Guest, GuestState, Inflight, PendingFence, Phase, Process, SnapshotBlob};
use super::log::{Detail, EventLog, LogEvent, LogRecord};
use super::program::Step;
use super::tree::{CloneTree, Emission};
use super::{
    AckBehaviour, EventKind, GuestId, Pid, SimConfig, SimError, SimEvent, Target, Tick, MAIN_PID,
};

const PERSONALIZATION: &[u8] = b"snapsafe-sim";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Queued {
    User(SimEvent),
    Ack { guest: GuestId, watcher: WatcherId },
    Wake { guest: GuestId, token: u64 },
    FenceDeadline { guest: GuestId, token: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FenceStatus {
    Delivered,
    /// Held until the outdated watchers acknowledge or the deadline passes.
    Waiting { outdated: usize },
}

/// The simulated host: guests, virtual clock, event queue and log.
#[derive(Debug)]
pub struct World {
    config: SimConfig,
    now: Tick,
    /// Source of per-incarnation entropy seeds and backend identifiers.
    seeder: ChaCha20Rng,
    issued_uuids: HashSet<u128>,
    guests: BTreeMap<GuestId, Guest>,
    next_guest: GuestId,
    queue: BTreeMap<(Tick, u64), Queued>,
    seq: u64,
    token: u64,
    log: EventLog,
    tree: CloneTree,
}

/// Runs `events` on a fresh world and returns its log and clone tree.
pub fn run_schedule(
    config: SimConfig,
    events: impl IntoIterator<Item = SimEvent>,
) -> (EventLog, CloneTree) {
    let mut world = World::new(config);
    for ev in events {
        world.schedule(ev);
    }
    world.run();
    world.into_parts()
}

fn push_record(
    log: &mut EventLog,
    now: Tick,
    guest: GuestId,
    gen: u32,
    event: LogEvent,
    detail: Detail,
) {
    log.push(LogRecord {
        tick: now,
        guest,
        event,
        gen,
        detail,
    });
}

fn open_watchers(guest: &mut Guest, behaviours: &[AckBehaviour]) {
    for b in behaviours {
        let id = guest.device.open_watcher();
        // A fresh handle has nothing to read, so its actor parks.
        let parked = guest.device.read(id, ReadMode::Blocking);
        debug_assert_eq!(parked, Ok(ReadOutcome::Parked));
        guest.actors.insert(id, *b);
    }
}

fn freeze_inflight(guest: &mut Guest, now: Tick) {
    if let Some(Inflight {
        phase: phase @ Phase::Sleeping { .. },
        ..
    }) = &mut guest.inflight
    {
        if let Phase::Sleeping { wake_at, .. } = *phase {
            *phase = Phase::Frozen {
                remaining: wake_at.saturating_sub(now),
            };
        }
    }
}

fn draw_nonce(guest: &mut Guest, pid: Pid) -> Result<u128, SimError> {
    let id = guest.id;
    let Guest {
        processes, entropy, ..
    } = guest;
    let Process {
        registry,
        rng,
        nonce,
        ..
    } = processes
        .get_mut(&pid)
        .ok_or(SimError::NoSuchProcess { guest: id, pid })?;
    Ok(nonce.next_nonce_from(registry, rng, entropy)?)
}

fn draw_bytes(guest: &mut Guest, pid: Pid) -> Result<u128, SimError> {
    let id = guest.id;
    let Guest {
        processes, entropy, ..
    } = guest;
    let Process { registry, rng, .. } = processes
        .get_mut(&pid)
        .ok_or(SimError::NoSuchProcess { guest: id, pid })?;
    let mut out = [0u8; 16];
    rng.generate(registry, entropy, &mut out)?;
    Ok(u128::from_be_bytes(out))
}

impl World {
    /// Creates the world and boots guest 0 at tick 0.
    pub fn new(config: SimConfig) -> World {
        let seeder = ChaCha20Rng::seed_from_u64(config.seed);
        let mut world = World {
            config,
            now: 0,
            seeder,
            issued_uuids: HashSet::new(),
            guests: BTreeMap::new(),
            next_guest: 0,
            queue: BTreeMap::new(),
            seq: 0,
            token: 0,
            log: EventLog::default(),
            tree: CloneTree::default(),
        };
        world.boot_root();
        world
    }

    fn boot_root(&mut self) {
        let id = self.next_guest;
        self.next_guest += 1;
        let uuid = self.fresh_uuid();
        let mut entropy = self.fresh_entropy();
        let device = GenDevice::new(uuid);
        let main = Process::spawn(&mut entropy, PERSONALIZATION, &device)
            .expect("seeded entropy never runs dry");
        let mut guest = Guest {
            id,
            parent: None,
            state: GuestState::Running,
            device,
            processes: BTreeMap::from([(MAIN_PID, main)]),
            next_pid: MAIN_PID + 1,
            actors: BTreeMap::new(),
            handler: self.config.handlers.get(&id).cloned().unwrap_or_default(),
            inflight: None,
            cache: None,
            held: Vec::new(),
            entropy,
            snapshot: None,
            fences: Vec::new(),
            acks_scheduled: BTreeSet::new(),
            epoch_log: vec![(self.now, EventKind::Boot)],
        };
        if let Some(b) = self.config.watchers.get(&id) {
            open_watchers(&mut guest, b);
        }
        self.guests.insert(id, guest);
        self.tree.add_node(id, None);
        self.record(id, LogEvent::Sim(EventKind::Boot), Detail::Text(format!("uuid={uuid}")));
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn guest(&self, id: GuestId) -> Option<&Guest> {
        self.guests.get(&id)
    }

    pub fn guests(&self) -> impl Iterator<Item = &Guest> {
        self.guests.values()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn tree(&self) -> &CloneTree {
        &self.tree
    }

    pub fn into_parts(self) -> (EventLog, CloneTree) {
        (self.log, self.tree)
    }

    /// Queues an event. Events in the past run at the current tick.
    pub fn schedule(&mut self, event: SimEvent) {
        let at = event.tick.max(self.now);
        self.enqueue(at, Queued::User(event));
    }

    /// Processes queued events until none are left.
    pub fn run(&mut self) {
        while let Some(((tick, _), q)) = self.queue.pop_first() {
            self.now = tick;
            self.dispatch(q);
        }
    }

    /// Processes events up to and including `tick`, then sets the clock to
    /// `tick`.
    pub fn run_until(&mut self, tick: Tick) {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > tick {
                break;
            }
            let ((t, _), q) = entry.remove_entry();
            self.now = t;
            self.dispatch(q);
        }
        self.now = self.now.max(tick);
    }

    fn enqueue(&mut self, at: Tick, q: Queued) {
        self.queue.insert((at, self.seq), q);
        self.seq += 1;
    }

    fn next_token(&mut self) -> u64 {
        self.token += 1;
        self.token
    }

    fn fresh_uuid(&mut self) -> VmGenUuid {
        loop {
            let mut b = [0u8; 16];
            self.seeder.fill_bytes(&mut b);
            if self.issued_uuids.insert(u128::from_be_bytes(b)) {
                return VmGenUuid(b);
            }
        }
    }

    fn fresh_entropy(&mut self) -> SeededEntropy {
        let mut seed = [0u8; 32];
        self.seeder.fill_bytes(&mut seed);
        SeededEntropy::from_seed(seed)
    }

    fn gen_of(&self, id: GuestId) -> u32 {
        self.guests.get(&id).map_or(0, |g| g.generation().value())
    }

    fn record(&mut self, guest: GuestId, event: LogEvent, detail: Detail) {
        let gen = self.gen_of(guest);
        push_record(&mut self.log, self.now, guest, gen, event, detail);
    }

    fn guest_mut(&mut self, id: GuestId) -> Result<&mut Guest, SimError> {
        self.guests.get_mut(&id).ok_or(SimError::NoSuchGuest(id))
    }

    fn require_state(&self, id: GuestId, allowed: &[GuestState]) -> Result<GuestState, SimError> {
        let g = self.guests.get(&id).ok_or(SimError::NoSuchGuest(id))?;
        if allowed.contains(&g.state) {
            Ok(g.state)
        } else {
            Err(SimError::BadState {
                guest: id,
                state: g.state,
            })
        }
    }

    fn note(&mut self, id: GuestId, kind: EventKind) {
        let now = self.now;
        if let Some(g) = self.guests.get_mut(&id) {
            g.epoch_log.push((now, kind));
        }
    }

    fn dispatch(&mut self, q: Queued) {
        match q {
            Queued::User(ev) => self.apply(ev),
            Queued::Ack { guest, watcher } => self.on_ack(guest, watcher),
            Queued::Wake { guest, token } => self.on_wake(guest, token),
            Queued::FenceDeadline { guest, token } => self.on_fence_deadline(guest, token),
        }
    }

    fn targets(&self, target: Target) -> Vec<GuestId> {
        let with_state = |s: GuestState| {
            self.guests
                .values()
                .filter(|g| g.state == s)
                .map(|g| g.id)
                .collect()
        };
        match target {
            Target::Guest(id) => vec![id],
            Target::Running => with_state(GuestState::Running),
            Target::Snapshotted => with_state(GuestState::Snapshotted),
        }
    }

    fn apply(&mut self, ev: SimEvent) {
        for id in self.targets(ev.target) {
            if let Err(e) = self.apply_one(ev, id) {
                self.log_error(id, ev.kind, &e);
            }
        }
    }

    fn log_error(&mut self, id: GuestId, kind: EventKind, e: &SimError) {
        self.record(
            id,
            LogEvent::Error,
            Detail::Text(format!("on={kind},error={}", e.code())),
        );
    }

    fn apply_one(&mut self, ev: SimEvent, id: GuestId) -> Result<(), SimError> {
        let pid = ev.pid.unwrap_or(MAIN_PID);
        match ev.kind {
            EventKind::Boot => {
                if self.guests.contains_key(&id) {
                    Err(SimError::AlreadyBooted(id))
                } else {
                    Err(SimError::NoSuchGuest(id))
                }
            }
            EventKind::Suspend => self.suspend(id),
            EventKind::Snapshot => self.snapshot(id).map(drop),
            EventKind::CloneRestore => {
                let blob = self
                    .guests
                    .get(&id)
                    .ok_or(SimError::NoSuchGuest(id))?
                    .snapshot
                    .clone()
                    .ok_or(SimError::NoSnapshot(id))?;
                self.clone_restore(&blob, ev.count.unwrap_or(1))?;
                let g = self.guest_mut(id)?;
                if g.state == GuestState::Snapshotted {
                    g.state = GuestState::Parked;
                }
                Ok(())
            }
            EventKind::PlainRestore => self.plain_restore(id),
            EventKind::Resume => self.resume(id),
            EventKind::Fork => self.fork_process(id, pid).map(drop),
            EventKind::Reboot => self.reboot(id),
            EventKind::Pause => self.pause(id),
            EventKind::LiveMigrate => self.live_migrate(id),
            EventKind::Invoke => self.invoke(id, pid),
            EventKind::Fence => self.fence_then_invoke(id, pid).map(drop),
        }
    }

    fn policy_bump(&mut self, id: GuestId, kind: EventKind) -> Result<(), SimError> {
        if self.config.policy.bumps(kind) {
            self.bump(id)?;
        }
        Ok(())
    }

    fn bump(&mut self, id: GuestId) -> Result<(), SimError> {
        let uuid = self.fresh_uuid();
        let report = self.guest_mut(id)?.device.backend_bump(uuid)?;
        self.record(
            id,
            LogEvent::Bump,
            Detail::Text(format!("uuid={uuid},released={}", report.released.len())),
        );
        self.schedule_acks(id);
        Ok(())
    }

    /// Gives every outdated watcher with a responsive actor an
    /// acknowledgement event, unless one is already pending.
    fn schedule_acks(&mut self, id: GuestId) {
        let now = self.now;
        let Some(g) = self.guests.get_mut(&id) else {
            return;
        };
        if g.state != GuestState::Running {
            return;
        }
        let current = g.device.generation();
        let due: Vec<(WatcherId, Tick)> = g
            .device
            .watchers()
            .filter(|h| h.is_outdated(current) && !g.acks_scheduled.contains(&h.id))
            .filter_map(|h| match g.actors.get(&h.id) {
                Some(AckBehaviour::After(d)) => Some((h.id, now.saturating_add(*d))),
                _ => None,
            })
            .collect();
        g.acks_scheduled.extend(due.iter().map(|(w, _)| *w));
        for (w, at) in due {
            self.enqueue(at, Queued::Ack { guest: id, watcher: w });
        }
    }

    fn on_ack(&mut self, id: GuestId, watcher: WatcherId) {
        let Some(g) = self.guests.get_mut(&id) else {
            return;
        };
        if !g.acks_scheduled.remove(&watcher) || g.state != GuestState::Running {
            return;
        }
        let Ok(ReadOutcome::Ready(gen)) = g.device.read(watcher, ReadMode::NonBlocking) else {
            return;
        };
        if let Err(e) = g.device.acknowledge(watcher, gen) {
            self.log_error(id, EventKind::Fence, &e.into());
            return;
        }
        let _ = g.device.read(watcher, ReadMode::Blocking);
        self.record(id, LogEvent::Ack, Detail::Text(format!("watcher={watcher}")));
        self.release_fences(id);
    }

    fn release_fences(&mut self, id: GuestId) {
        let Some(g) = self.guests.get_mut(&id) else {
            return;
        };
        if g.fences.is_empty() || g.device.count_outdated_watchers() > 0 {
            return;
        }
        let fences = std::mem::take(&mut g.fences);
        for f in fences {
            if let Err(e) = self.deliver(id, f.pid, true) {
                self.log_error(id, EventKind::Fence, &e);
            }
        }
    }

    fn on_fence_deadline(&mut self, id: GuestId, token: u64) {
        let Some(g) = self.guests.get_mut(&id) else {
            return;
        };
        let Some(pos) = g.fences.iter().position(|f| f.token == token) else {
            return;
        };
        g.fences.remove(pos);
        let outdated = g.device.count_outdated_watchers();
        self.log_error(
            id,
            EventKind::Fence,
            &SimError::FenceTimeout {
                guest: id,
                outdated,
            },
        );
    }

    fn on_wake(&mut self, id: GuestId, token: u64) {
        let Some(g) = self.guests.get_mut(&id) else {
            return;
        };
        let Some(Inflight {
            pid,
            pc,
            phase: Phase::Sleeping { token: t, .. },
        }) = g.inflight
        else {
            return;
        };
        if t != token || g.state != GuestState::Running {
            return;
        }
        g.inflight = None;
        self.record(id, LogEvent::Wake, Detail::Text(format!("pid={pid},pc={pc}")));
        if let Err(e) = self.run_program(id, pid, pc) {
            self.log_error(id, EventKind::Invoke, &e);
        }
    }

    /// Re-arms a frozen continuation relative to the current tick.
    fn thaw_inflight(&mut self, id: GuestId) {
        let now = self.now;
        let token = self.next_token();
        let Some(g) = self.guests.get_mut(&id) else {
            return;
        };
        if let Some(inf) = &mut g.inflight {
            if let Phase::Frozen { remaining } = inf.phase {
                let wake_at = now.saturating_add(remaining);
                inf.phase = Phase::Sleeping { wake_at, token };
                self.enqueue(wake_at, Queued::Wake { guest: id, token });
            }
        }
    }

    /// Runs the wipe-on-suspend pass over every process of a running guest.
    pub fn suspend(&mut self, id: GuestId) -> Result<(), SimError> {
        self.require_state(id, &[GuestState::Running])?;
        let now = self.now;
        let g = self.guest_mut(id)?;
        let mut wiped = 0;
        for p in g.processes.values_mut() {
            wiped += p.registry.on_suspend().wiped.len();
        }
        freeze_inflight(g, now);
        g.acks_scheduled.clear();
        g.state = GuestState::Suspended;
        self.record(
            id,
            LogEvent::Sim(EventKind::Suspend),
            Detail::Text(format!("wiped={wiped}")),
        );
        self.note(id, EventKind::Suspend);
        self.policy_bump(id, EventKind::Suspend)
    }

    /// Suspends if needed, then serializes the guest. The blob is also kept
    /// as the guest's latest snapshot.
    pub fn snapshot(&mut self, id: GuestId) -> Result<SnapshotBlob, SimError> {
        let state = self.require_state(
            id,
            &[
                GuestState::Running,
                GuestState::Suspended,
                GuestState::Snapshotted,
            ],
        )?;
        if state == GuestState::Running {
            self.suspend(id)?;
        }
        let g = self.guest_mut(id)?;
        let blob = g.encode()?;
        g.snapshot = Some(blob.clone());
        g.state = GuestState::Snapshotted;
        self.record(
            id,
            LogEvent::Sim(EventKind::Snapshot),
            Detail::Text(format!("bytes={}", blob.as_bytes().len())),
        );
        self.note(id, EventKind::Snapshot);
        self.policy_bump(id, EventKind::Snapshot)?;
        Ok(blob)
    }

    /// Restores `count` independent copies of `blob` as new guests. Each
    /// copy gets its own entropy stream and, under the default policy, a
    /// generation bump before any of its code runs.
    pub fn clone_restore(
        &mut self,
        blob: &SnapshotBlob,
        count: u32,
    ) -> Result<Vec<GuestId>, SimError> {
        if count == 0 {
            return Err(SimError::BadCount);
        }
        let parent = blob.source().filter(|p| self.guests.contains_key(p));
        let mut ids = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = self.next_guest;
            let entropy = self.fresh_entropy();
            let mut guest = Guest::restore(blob, id, parent, entropy)?;
            self.next_guest += 1;
            if let Some(h) = self.config.handlers.get(&id) {
                guest.handler = h.clone();
            }
            if let Some(b) = self.config.watchers.get(&id) {
                open_watchers(&mut guest, b);
            }
            guest.epoch_log.push((self.now, EventKind::CloneRestore));
            self.guests.insert(id, guest);
            self.tree.add_node(id, parent);
            let from = parent.map_or_else(|| "-".to_string(), |p| p.to_string());
            self.record(
                id,
                LogEvent::Sim(EventKind::CloneRestore),
                Detail::Text(format!("parent={from}")),
            );
            self.policy_bump(id, EventKind::CloneRestore)?;
            self.thaw_inflight(id);
            self.schedule_acks(id);
            ids.push(id);
        }
        Ok(ids)
    }

    /// Restores a guest in place from its own latest snapshot. The result
    /// is the same VM, so the default policy does not bump.
    pub fn plain_restore(&mut self, id: GuestId) -> Result<(), SimError> {
        let g = self.guests.get(&id).ok_or(SimError::NoSuchGuest(id))?;
        let blob = g.snapshot.clone().ok_or(SimError::NoSnapshot(id))?;
        let parent = g.parent;
        let entropy = self.fresh_entropy();
        let mut fresh = Guest::restore(&blob, id, parent, entropy)?;
        let old = self.guests.remove(&id).expect("checked above");
        fresh.snapshot = old.snapshot;
        fresh.epoch_log = old.epoch_log;
        fresh.epoch_log.push((self.now, EventKind::PlainRestore));
        self.guests.insert(id, fresh);
        self.record(id, LogEvent::Sim(EventKind::PlainRestore), Detail::None);
        self.policy_bump(id, EventKind::PlainRestore)?;
        self.thaw_inflight(id);
        self.schedule_acks(id);
        Ok(())
    }

    pub fn resume(&mut self, id: GuestId) -> Result<(), SimError> {
        self.require_state(
            id,
            &[
                GuestState::Suspended,
                GuestState::Snapshotted,
                GuestState::Parked,
                GuestState::Paused,
            ],
        )?;
        let g = self.guest_mut(id)?;
        for p in g.processes.values_mut() {
            p.registry.resume();
        }
        g.state = GuestState::Running;
        self.record(id, LogEvent::Sim(EventKind::Resume), Detail::None);
        self.note(id, EventKind::Resume);
        self.policy_bump(id, EventKind::Resume)?;
        self.thaw_inflight(id);
        self.schedule_acks(id);
        Ok(())
    }

    /// Forks process `pid`; the child's wipe-on-fork regions start zeroed.
    pub fn fork_process(&mut self, id: GuestId, pid: Pid) -> Result<Pid, SimError> {
        self.require_state(id, &[GuestState::Running])?;
        let g = self.guest_mut(id)?;
        let child = g
            .processes
            .get(&pid)
            .ok_or(SimError::NoSuchProcess { guest: id, pid })?
            .fork();
        let child_pid = g.next_pid;
        g.next_pid += 1;
        g.processes.insert(child_pid, child);
        self.record(
            id,
            LogEvent::Sim(EventKind::Fork),
            Detail::Text(format!("parent={pid},child={child_pid}")),
        );
        self.note(id, EventKind::Fork);
        self.policy_bump(id, EventKind::Fork)?;
        Ok(child_pid)
    }

    /// Restarts the guest's software. The device keeps its generation;
    /// every watcher handle is closed and the configured ones reopened.
    pub fn reboot(&mut self, id: GuestId) -> Result<(), SimError> {
        let g = self.guest_mut(id)?;
        let open: Vec<WatcherId> = g.device.watchers().filter(|h| h.open).map(|h| h.id).collect();
        for w in open {
            g.device.close(w)?;
        }
        g.actors.clear();
        g.acks_scheduled.clear();
        g.fences.clear();
        g.inflight = None;
        g.cache = None;
        g.held.clear();
        let main = Process::spawn(&mut g.entropy, PERSONALIZATION, &g.device)?;
        g.processes = BTreeMap::from([(MAIN_PID, main)]);
        g.next_pid = MAIN_PID + 1;
        g.state = GuestState::Running;
        if let Some(b) = self.config.watchers.get(&id) {
            let b = b.clone();
            open_watchers(self.guest_mut(id)?, &b);
        }
        self.record(id, LogEvent::Sim(EventKind::Reboot), Detail::None);
        self.note(id, EventKind::Reboot);
        self.policy_bump(id, EventKind::Reboot)
    }

    /// Stops guest execution without touching memory.
    pub fn pause(&mut self, id: GuestId) -> Result<(), SimError> {
        self.require_state(id, &[GuestState::Running])?;
        let now = self.now;
        let g = self.guest_mut(id)?;
        freeze_inflight(g, now);
        g.acks_scheduled.clear();
        g.state = GuestState::Paused;
        self.record(id, LogEvent::Sim(EventKind::Pause), Detail::None);
        self.note(id, EventKind::Pause);
        self.policy_bump(id, EventKind::Pause)
    }

    /// Moves the guest to another host; memory and identity are carried
    /// over unchanged.
    pub fn live_migrate(&mut self, id: GuestId) -> Result<(), SimError> {
        self.require_state(id, &[GuestState::Running, GuestState::Paused])?;
        self.record(id, LogEvent::Sim(EventKind::LiveMigrate), Detail::None);
        self.note(id, EventKind::LiveMigrate);
        self.policy_bump(id, EventKind::LiveMigrate)
    }

    /// Delivers a request right away, whatever the watchers' state.
    pub fn invoke(&mut self, id: GuestId, pid: Pid) -> Result<(), SimError> {
        self.deliver(id, pid, false)
    }

    /// Delivers a request once every watcher has acknowledged the current
    /// generation. Fails with a logged `FenceTimeout` if that does not
    /// happen within the configured number of ticks.
    pub fn fence_then_invoke(&mut self, id: GuestId, pid: Pid) -> Result<FenceStatus, SimError> {
        self.require_state(id, &[GuestState::Running])?;
        let timeout = self.config.fence_timeout;
        let deadline = self.now.saturating_add(timeout);
        let token = self.next_token();
        let g = self.guest_mut(id)?;
        if !g.processes.contains_key(&pid) {
            return Err(SimError::NoSuchProcess { guest: id, pid });
        }
        let outdated = g.device.count_outdated_watchers();
        if outdated == 0 {
            self.deliver(id, pid, true)?;
            return Ok(FenceStatus::Delivered);
        }
        g.fences.push(PendingFence { token, pid });
        self.record(
            id,
            LogEvent::Sim(EventKind::Fence),
            Detail::Text(format!("pid={pid},outdated={outdated},deadline={deadline}")),
        );
        self.note(id, EventKind::Fence);
        self.enqueue(deadline, Queued::FenceDeadline { guest: id, token });
        Ok(FenceStatus::Waiting { outdated })
    }

    fn deliver(&mut self, id: GuestId, pid: Pid, fenced: bool) -> Result<(), SimError> {
        self.require_state(id, &[GuestState::Running])?;
        let g = self.guest_mut(id)?;
        if g.inflight.is_some() {
            return Err(SimError::Busy(id));
        }
        if !g.processes.contains_key(&pid) {
            return Err(SimError::NoSuchProcess { guest: id, pid });
        }
        let how = if fenced { "fenced" } else { "unfenced" };
        self.record(
            id,
            LogEvent::Sim(EventKind::Invoke),
            Detail::Text(format!("pid={pid},{how}")),
        );
        self.note(id, EventKind::Invoke);
        self.policy_bump(id, EventKind::Invoke)?;
        self.run_program(id, pid, 0)
    }

    fn run_program(&mut self, id: GuestId, pid: Pid, pc: usize) -> Result<(), SimError> {
        let token = self.next_token();
        if let Some(wake_at) = self.step_program(id, pid, pc, token)? {
            self.enqueue(wake_at, Queued::Wake { guest: id, token });
        }
        Ok(())
    }

    /// Runs handler steps from `pc`; returns the wake tick if it stopped at
    /// a `sleep`.
    fn step_program(
        &mut self,
        id: GuestId,
        pid: Pid,
        pc: usize,
        token: u64,
    ) -> Result<Option<Tick>, SimError> {
        let now = self.now;
        let World {
            guests, log, tree, ..
        } = self;
        let g = guests.get_mut(&id).ok_or(SimError::NoSuchGuest(id))?;
        let gen = g.generation().value();
        let mut emit = |value: u128| {
            push_record(log, now, id, gen, LogEvent::Emit, Detail::Value(value));
            tree.record(Emission {
                tick: now,
                guest: id,
                value,
            });
        };
        let steps = g.handler.steps.clone();
        for (i, step) in steps.iter().enumerate().skip(pc) {
            match *step {
                Step::Nonce(k) => {
                    for _ in 0..k {
                        emit(draw_nonce(g, pid)?);
                    }
                }
                Step::Bytes(k) => {
                    for _ in 0..k {
                        emit(draw_bytes(g, pid)?);
                    }
                }
                Step::Draw(k) => {
                    for _ in 0..k {
                        let v = draw_nonce(g, pid)?;
                        g.held.push(v);
                    }
                }
                Step::Use => {
                    for v in std::mem::take(&mut g.held) {
                        emit(v);
                    }
                }
                Step::Cache(k) => {
                    if g.cache.is_none() {
                        let values = (0..k)
                            .map(|_| draw_nonce(g, pid))
                            .collect::<Result<Vec<_>, _>>()?;
                        g.cache = Some(values);
                    }
                    for v in g.cache.iter().flatten() {
                        emit(*v);
                    }
                }
                Step::Sleep(t) => {
                    let wake_at = now.saturating_add(t);
                    g.inflight = Some(Inflight {
                        pid,
                        pc: i + 1,
                        phase: Phase::Sleeping { wake_at, token },
                    });
                    return Ok(Some(wake_at));
                }
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen_device::Generation;
    use crate::vm_sim::Program;

    fn config(seed: u64, handler: &str) -> SimConfig {
        let mut c = SimConfig::new(seed);
        c.handlers.insert(0, handler.parse::<Program>().unwrap());
        c
    }

    fn ev(tick: Tick, kind: EventKind, target: GuestId) -> SimEvent {
        SimEvent::new(tick, kind, Target::Guest(target))
    }

    #[test]
    fn boot_state() {
        let w = World::new(SimConfig::new(1));
        let g = w.guest(0).unwrap();
        assert_eq!(g.generation(), Generation(0));
        assert_eq!(g.device().count_outdated_watchers(), 0);
        assert_eq!(g.epoch_log(), &[(0, EventKind::Boot)]);
        assert_eq!(w.log().len(), 1);
    }

    #[test]
    fn same_seed_same_stream_distinct_seed_distinct_uuid() {
        let run = |seed| run_schedule(config(seed, "bytes 4"), [ev(1, EventKind::Invoke, 0)]).0;
        assert_eq!(run(5), run(5));
        let a = World::new(SimConfig::new(5));
        let b = World::new(SimConfig::new(6));
        assert_ne!(
            a.guest(0).unwrap().device().backend_uuid(),
            b.guest(0).unwrap().device().backend_uuid()
        );
    }

    #[test]
    fn snapshot_zeroes_guard_and_hides_secret() {
        let mut w = World::new(SimConfig::new(2));
        let secret = w.guest(0).unwrap().process(MAIN_PID).unwrap().secret().to_vec();
        let guard = w.guest(0).unwrap().process(MAIN_PID).unwrap().rng().guard();
        let blob = w.snapshot(0).unwrap();
        let bytes = blob.as_bytes();
        assert!(!bytes.windows(secret.len()).any(|win| win == secret.as_slice()));
        assert!(!bytes.windows(8).any(|win| win == b"SEEDED01"));
        let reg = w.guest(0).unwrap().process(MAIN_PID).unwrap().registry();
        assert!(reg.region(guard.region()).unwrap().is_zeroed());
        assert_eq!(w.snapshot(0).unwrap(), blob);
    }

    #[test]
    fn clones_bump_and_are_independent() {
        let mut w = World::new(SimConfig::new(3));
        let blob = w.snapshot(0).unwrap();
        let ids = w.clone_restore(&blob, 2).unwrap();
        let (a, b) = (w.guest(ids[0]).unwrap(), w.guest(ids[1]).unwrap());
        assert_eq!(a.generation(), Generation(1));
        assert_eq!(b.generation(), Generation(1));
        assert_ne!(a.device().backend_uuid(), b.device().backend_uuid());
        assert_eq!(a.parent(), Some(0));
        w.invoke(ids[0], MAIN_PID).unwrap();
        assert_eq!(w.guest(ids[1]).unwrap().held().len(), 0);
        assert_eq!(w.clone_restore(&blob, 0), Err(SimError::BadCount));
        let mut junk = blob.clone();
        junk.0.truncate(40);
        assert!(matches!(w.clone_restore(&junk, 1), Err(SimError::CorruptBlob(_))));
    }

    #[test]
    fn plain_restore_keeps_generation() {
        let mut w = World::new(SimConfig::new(4));
        w.snapshot(0).unwrap();
        w.plain_restore(0).unwrap();
        assert_eq!(w.guest(0).unwrap().generation(), Generation(0));
        assert_eq!(w.guest(0).unwrap().state(), GuestState::Running);
    }

    #[test]
    fn fork_wipes_child_and_keeps_generation() {
        let mut w = World::new(SimConfig::new(5));
        let child = w.fork_process(0, MAIN_PID).unwrap();
        let grandchild = w.fork_process(0, child).unwrap();
        let g = w.guest(0).unwrap();
        for pid in [child, grandchild] {
            let p = g.process(pid).unwrap();
            assert!(!p.rng().guard().is_live(p.registry()));
            assert!(p.secret().iter().all(|b| *b == 0));
        }
        assert_eq!(g.generation(), Generation(0));
        assert_eq!(
            w.fork_process(0, 99),
            Err(SimError::NoSuchProcess { guest: 0, pid: 99 })
        );
    }

    #[test]
    fn fence_waits_for_ack() {
        let mut c = config(6, "nonce 1");
        c.watchers.insert(0, vec![AckBehaviour::After(5)]);
        let mut w = World::new(c);
        w.snapshot(0).unwrap();
        let blob = w.guest(0).unwrap().snapshot().unwrap().clone();
        let id = w.clone_restore(&blob, 1).unwrap()[0];
        assert_eq!(
            w.fence_then_invoke(id, MAIN_PID).unwrap(),
            FenceStatus::Waiting { outdated: 1 }
        );
        w.run();
        let e = w.tree().nonce_log(id);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].tick, 5);
    }

    #[test]
    fn fence_without_watchers_is_immediate() {
        let mut w = World::new(config(7, "nonce 1"));
        assert_eq!(w.fence_then_invoke(0, MAIN_PID).unwrap(), FenceStatus::Delivered);
        assert_eq!(w.tree().nonce_log(0).len(), 1);
    }

    #[test]
    fn fence_times_out() {
        let mut c = config(8, "nonce 1");
        c.watchers.insert(0, vec![AckBehaviour::Never]);
        c.fence_timeout = 30;
        let mut w = World::new(c);
        let blob = w.snapshot(0).unwrap();
        let id = w.clone_restore(&blob, 1).unwrap()[0];
        w.schedule(SimEvent::new(10, EventKind::Fence, Target::Guest(id)));
        w.run();
        let last = w.log().records.last().unwrap();
        assert_eq!(last.tick, 40);
        assert_eq!(last.event, LogEvent::Error);
        assert_eq!(last.detail, Detail::Text("on=Fence,error=FenceTimeout".into()));
        assert!(w.tree().nonce_log(id).is_empty());
    }

    #[test]
    fn sleep_survives_snapshot() {
        let mut w = World::new(config(9, "draw 1; sleep 10; use"));
        w.invoke(0, MAIN_PID).unwrap();
        w.run_until(4);
        let blob = w.snapshot(0).unwrap();
        w.run_until(20);
        let ids = w.clone_restore(&blob, 2).unwrap();
        w.run();
        let a = w.tree().nonce_log(ids[0]);
        let b = w.tree().nonce_log(ids[1]);
        assert_eq!((a.len(), b.len()), (1, 1));
        assert_eq!(a[0].tick, 26);
        assert_eq!(a[0].value, b[0].value);
    }

    #[test]
    fn errors_are_logged_and_run_continues() {
        let (log, _) = run_schedule(
            config(10, "nonce 1"),
            [
                ev(1, EventKind::Invoke, 9),
                ev(2, EventKind::Resume, 0),
                ev(3, EventKind::Invoke, 0),
            ],
        );
        let errors: Vec<_> = log
            .records
            .iter()
            .filter(|r| r.event == LogEvent::Error)
            .collect();
        assert_eq!(errors.len(), 2);
        assert_eq!(log.emissions().len(), 1);
    }

    #[test]
    fn policy_rows_control_bumps() {
        let events = [
            (EventKind::Pause, EventKind::Resume),
            (EventKind::Suspend, EventKind::Resume),
        ];
        for (first, second) in events {
            let mut c = SimConfig::new(11);
            let (log, _) =
                run_schedule(c.clone(), [ev(1, first, 0), ev(2, second, 0)]);
            assert!(log.records.iter().all(|r| r.gen == 0));
            c.policy.set(second, true);
            let (log, _) = run_schedule(c, [ev(1, first, 0), ev(2, second, 0)]);
            assert_eq!(log.records.last().unwrap().gen, 1);
        }
    }
}
