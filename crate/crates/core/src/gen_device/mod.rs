// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Model of the system generation-ID device.
//!
//! The device exposes a 32-bit generation counter that a backend bumps
//! whenever the system identity changes (for example when a VM is restored
//! as a clone). Userspace watchers open a handle, block in `read` until the
//! generation moves past the value they last acknowledged, and acknowledge
//! the new value by writing it back. An orchestrator can ask how many open
//! handles are still outdated, or wait until none are.
//!
//! [`GenDevice`] is the single-threaded state machine used by the
//! simulator: a blocking read that cannot complete returns
//! [`ReadOutcome::Parked`] and the parked handle is reported back by
//! [`GenDevice::backend_bump`] when it is released. [`blocking::SharedDevice`]
//! wraps the same state for real threads.

pub mod blocking;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use thiserror::Error;

/// Size of the shared page exposed by [`GenDevice::map_shared_view`].
pub const SHARED_VIEW_SIZE: usize = 4096;

/// Monotone 32-bit generation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Generation(pub u32);

impl Generation {
    pub const ZERO: Generation = Generation(0);

    pub fn value(self) -> u32 {
        self.0
    }

    /// The next generation, or `None` at the 32-bit limit.
    pub fn checked_next(self) -> Option<Generation> {
        self.0.checked_add(1).map(Generation)
    }
}

impl fmt::Display for Generation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 128-bit VmGenId backend identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VmGenUuid(pub [u8; 16]);

impl VmGenUuid {
    pub fn as_u128(&self) -> u128 {
        u128::from_be_bytes(self.0)
    }

    pub fn from_u128(v: u128) -> Self {
        VmGenUuid(v.to_be_bytes())
    }
}

impl fmt::Debug for VmGenUuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VmGenUuid({self})")
    }
}

impl fmt::Display for VmGenUuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.0;
        write!(
            f,
            "{:02x}{:02x}{:02x}{:02x}-{:02x}{:02x}-{:02x}{:02x}-{:02x}{:02x}-{:02x}{:02x}{:02x}{:02x}{:02x}{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7], b[8], b[9], b[10], b[11], b[12], b[13],
            b[14], b[15]
        )
    }
}

/// Token identifying an open (or formerly open) watcher handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WatcherId(pub u64);

impl fmt::Display for WatcherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WatcherHandle {
    pub id: WatcherId,
    pub last_acked: Generation,
    pub open: bool,
}

impl WatcherHandle {
    pub fn is_outdated(&self, current: Generation) -> bool {
        self.open && self.last_acked < current
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    Blocking,
    NonBlocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadOutcome {
    /// A generation newer than the handle's last acknowledgement.
    Ready(Generation),
    /// Blocking read with nothing new; the handle is parked until a bump.
    Parked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitOutcome {
    Ready,
    /// `count` open handles still have not acknowledged the generation.
    Pending { outdated: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BumpReport {
    pub generation: Generation,
    /// Handles that were parked in a blocking read and now observe `generation`.
    pub released: Vec<WatcherId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("no new generation available")]
    WouldBlock,
    #[error("watcher handle {0} is closed")]
    ClosedHandle(WatcherId),
    #[error("unknown watcher handle {0}")]
    UnknownHandle(WatcherId),
    #[error("stale acknowledgement: wrote {written}, device is at {current}")]
    StaleAck {
        written: Generation,
        current: Generation,
    },
    #[error("backend uuid {0} equals the current value; nothing changed")]
    DuplicateUuid(VmGenUuid),
    #[error("generation counter would overflow 32 bits")]
    GenerationOverflow,
    #[error("timed out waiting for {outdated} outdated watcher(s)")]
    Timeout { outdated: usize },
}

/// Read-only mapping of the device's shared page.
///
/// Every mapping of one device observes the same page. Byte offset 0 holds
/// the generation as a little-endian `u32`; the remaining bytes are zero.
#[derive(Debug, Clone)]
pub struct SharedView {
    page: Arc<AtomicU32>,
}

impl SharedView {
    fn new(generation: Generation) -> Self {
        SharedView {
            page: Arc::new(AtomicU32::new(generation.0)),
        }
    }

    /// Generation stored at offset 0.
    #[inline]
    pub fn generation(&self) -> Generation {
        Generation(self.page.load(Ordering::Acquire))
    }

    /// Bit-exact copy of the page contents.
    pub fn to_page(&self) -> [u8; SHARED_VIEW_SIZE] {
        let mut page = [0u8; SHARED_VIEW_SIZE];
        page[..4].copy_from_slice(&self.generation().0.to_le_bytes());
        page
    }

    /// Whether two views map the same device page.
    pub fn same_page(&self, other: &SharedView) -> bool {
        Arc::ptr_eq(&self.page, &other.page)
    }

    fn publish(&self, generation: Generation) {
        self.page.store(generation.0, Ordering::Release);
    }
}

/// Generation device with a VmGenId backend.
#[derive(Debug)]
pub struct GenDevice {
    generation: Generation,
    backend_uuid: VmGenUuid,
    watchers: BTreeMap<WatcherId, WatcherHandle>,
    parked: BTreeSet<WatcherId>,
    next_watcher: u64,
    view: SharedView,
}

impl GenDevice {
    pub fn new(backend_uuid: VmGenUuid) -> Self {
        GenDevice {
            generation: Generation::ZERO,
            backend_uuid,
            watchers: BTreeMap::new(),
            parked: BTreeSet::new(),
            next_watcher: 0,
            view: SharedView::new(Generation::ZERO),
        }
    }

    pub fn generation(&self) -> Generation {
        self.generation
    }

    pub fn backend_uuid(&self) -> VmGenUuid {
        self.backend_uuid
    }

    pub fn open_watcher(&mut self) -> WatcherId {
        let id = WatcherId(self.next_watcher);
        self.next_watcher += 1;
        self.watchers.insert(
            id,
            WatcherHandle {
                id,
                last_acked: self.generation,
                open: true,
            },
        );
        id
    }

    pub fn watcher(&self, id: WatcherId) -> Option<&WatcherHandle> {
        self.watchers.get(&id)
    }

    pub fn watchers(&self) -> impl Iterator<Item = &WatcherHandle> {
        self.watchers.values()
    }

    fn open_handle(&self, id: WatcherId) -> Result<&WatcherHandle, DeviceError> {
        match self.watchers.get(&id) {
            None => Err(DeviceError::UnknownHandle(id)),
            Some(h) if !h.open => Err(DeviceError::ClosedHandle(id)),
            Some(h) => Ok(h),
        }
    }

    pub fn read(&mut self, id: WatcherId, mode: ReadMode) -> Result<ReadOutcome, DeviceError> {
        let handle = self.open_handle(id)?;
        if self.generation > handle.last_acked {
            self.parked.remove(&id);
            return Ok(ReadOutcome::Ready(self.generation));
        }
        match mode {
            ReadMode::NonBlocking => Err(DeviceError::WouldBlock),
            ReadMode::Blocking => {
                self.parked.insert(id);
                Ok(ReadOutcome::Parked)
            }
        }
    }

    /// Write `value` back to acknowledge it. Only the current generation is
    /// accepted; anything else means a bump raced the caller, who must re-read.
    pub fn acknowledge(&mut self, id: WatcherId, value: Generation) -> Result<(), DeviceError> {
        self.open_handle(id)?;
        if value != self.generation {
            return Err(DeviceError::StaleAck {
                written: value,
                current: self.generation,
            });
        }
        if let Some(h) = self.watchers.get_mut(&id) {
            h.last_acked = value;
        }
        Ok(())
    }

    /// Close a handle. A closed handle never counts as outdated.
    pub fn close(&mut self, id: WatcherId) -> Result<(), DeviceError> {
        self.open_handle(id)?;
        self.parked.remove(&id);
        if let Some(h) = self.watchers.get_mut(&id) {
            h.open = false;
        }
        Ok(())
    }

    pub fn map_shared_view(&self) -> SharedView {
        self.view.clone()
    }

    /// Number of open handles that have not acknowledged the current generation.
    pub fn count_outdated_watchers(&self) -> usize {
        self.watchers
            .values()
            .filter(|h| h.is_outdated(self.generation))
            .count()
    }

    pub fn wait_watchers(&self) -> WaitOutcome {
        match self.count_outdated_watchers() {
            0 => WaitOutcome::Ready,
            outdated => WaitOutcome::Pending { outdated },
        }
    }

    pub fn parked(&self) -> impl Iterator<Item = WatcherId> + '_ {
        self.parked.iter().copied()
    }

    /// Backend notification that the VmGenId changed.
    pub fn backend_bump(&mut self, new_uuid: VmGenUuid) -> Result<BumpReport, DeviceError> {
        if new_uuid == self.backend_uuid {
            return Err(DeviceError::DuplicateUuid(new_uuid));
        }
        let next = self
            .generation
            .checked_next()
            .ok_or(DeviceError::GenerationOverflow)?;
        self.backend_uuid = new_uuid;
        self.generation = next;
        self.view.publish(next);
        let released = std::mem::take(&mut self.parked).into_iter().collect();
        Ok(BumpReport {
            generation: next,
            released,
        })
    }

    /// Independent copy with its own shared page, as produced by restoring
    /// device state into a new VM.
    pub fn duplicate(&self) -> GenDevice {
        GenDevice {
            generation: self.generation,
            backend_uuid: self.backend_uuid,
            watchers: self.watchers.clone(),
            parked: self.parked.clone(),
            next_watcher: self.next_watcher,
            view: SharedView::new(self.generation),
        }
    }

    pub(crate) fn from_parts(
        generation: Generation,
        backend_uuid: VmGenUuid,
        watchers: Vec<WatcherHandle>,
        parked: Vec<WatcherId>,
        next_watcher: u64,
    ) -> GenDevice {
        GenDevice {
            generation,
            backend_uuid,
            watchers: watchers.into_iter().map(|h| (h.id, h)).collect(),
            parked: parked.into_iter().collect(),
            next_watcher,
            view: SharedView::new(generation),
        }
    }

    pub(crate) fn next_watcher_id(&self) -> u64 {
        self.next_watcher
    }

    #[cfg(test)]
    pub(crate) fn force_generation(&mut self, generation: Generation) {
        self.generation = generation;
        self.view.publish(generation);
    }
}
