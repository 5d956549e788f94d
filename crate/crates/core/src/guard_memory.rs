// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Guarded memory regions with wipe-on-fork, wipe-on-suspend and
//! snapshot-exclusion policies.
//!
//! A [`RegionRegistry`] stands in for the address space of one process or
//! guest. Forking produces a deep copy in which wipe-on-fork regions are
//! zero. Suspending zeroes wipe-on-suspend regions in place, and only a
//! suspended registry can be serialized into a snapshot stream.
//!
//! Snapshot stream layout, all integers little-endian:
//!
//! ```text
//! magic   "SSGM"            4 bytes
//! version 0x01              1 byte
//! repeated until end of stream:
//!   region id               u64
//!   length                  u64 (positive multiple of 4096)
//!   policy flags            u8  (bit0 fork, bit1 suspend, bit2 exclude)
//!   contents                `length` bytes (zeros for excluded regions)
//! ```

use std::fmt;

use thiserror::Error;

use crate::codec::{Reader, Truncated, Writer};

pub const PAGE_SIZE: usize = 4096;

pub const STREAM_MAGIC: &[u8; 4] = b"SSGM";
pub const STREAM_VERSION: u8 = 1;

const FLAG_FORK: u8 = 1 << 0;
const FLAG_SUSPEND: u8 = 1 << 1;
const FLAG_EXCLUDE: u8 = 1 << 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("region size {0} is not a positive multiple of {PAGE_SIZE}")]
    BadSize(usize),
    #[error("snapshot requested before the registry was suspended")]
    SuspendNotRun,
    #[error("corrupt snapshot stream: {0}")]
    CorruptStream(String),
    #[error("no region {0}")]
    NoSuchRegion(RegionId),
    #[error("write of {len} bytes at offset {offset} exceeds region {region}")]
    OutOfBounds {
        region: RegionId,
        offset: usize,
        len: usize,
    },
}

impl From<Truncated> for MemoryError {
    fn from(t: Truncated) -> Self {
        MemoryError::CorruptStream(format!("truncated while reading {}", t.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct WipePolicy {
    pub wipe_on_fork: bool,
    pub wipe_on_suspend: bool,
    pub exclude_from_snapshot: bool,
}

impl WipePolicy {
    pub const ORDINARY: WipePolicy = WipePolicy {
        wipe_on_fork: false,
        wipe_on_suspend: false,
        exclude_from_snapshot: false,
    };

    /// The policy a clone-safe RNG puts on its guard page.
    pub const GUARD: WipePolicy = WipePolicy {
        wipe_on_fork: true,
        wipe_on_suspend: true,
        exclude_from_snapshot: false,
    };

    pub const SECRET: WipePolicy = WipePolicy {
        wipe_on_fork: true,
        wipe_on_suspend: false,
        exclude_from_snapshot: true,
    };

    pub fn flags(self) -> u8 {
        let mut f = 0;
        if self.wipe_on_fork {
            f |= FLAG_FORK;
        }
        if self.wipe_on_suspend {
            f |= FLAG_SUSPEND;
        }
        if self.exclude_from_snapshot {
            f |= FLAG_EXCLUDE;
        }
        f
    }

    pub fn from_flags(flags: u8) -> Option<WipePolicy> {
        if flags & !(FLAG_FORK | FLAG_SUSPEND | FLAG_EXCLUDE) != 0 {
            return None;
        }
        Some(WipePolicy {
            wipe_on_fork: flags & FLAG_FORK != 0,
            wipe_on_suspend: flags & FLAG_SUSPEND != 0,
            exclude_from_snapshot: flags & FLAG_EXCLUDE != 0,
        })
    }

    /// All eight flag combinations, in flag order.
    pub fn all() -> [WipePolicy; 8] {
        std::array::from_fn(|i| WipePolicy::from_flags(i as u8).expect("3-bit flags"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId(pub u64);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardedRegion {
    id: RegionId,
    bytes: Vec<u8>,
    policy: WipePolicy,
}

impl GuardedRegion {
    pub fn id(&self) -> RegionId {
        self.id
    }

    pub fn policy(&self) -> WipePolicy {
        self.policy
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn is_zeroed(&self) -> bool {
        self.bytes.iter().all(|&b| b == 0)
    }

    fn wipe(&mut self) {
        self.bytes.fill(0);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WipeReport {
    pub wiped: Vec<RegionId>,
}

/// Regions owned by one process or guest, ordered by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionRegistry {
    regions: Vec<GuardedRegion>,
    next_id: u64,
    suspended: bool,
}

impl RegionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> impl Iterator<Item = &GuardedRegion> {
        self.regions.iter()
    }

    /// Adds a region of `size` bytes filled by repeating `fill` (zeros when
    /// `fill` is empty).
    pub fn register_region(
        &mut self,
        size: usize,
        policy: WipePolicy,
        fill: &[u8],
    ) -> Result<RegionId, MemoryError> {
        if size == 0 || !size.is_multiple_of(PAGE_SIZE) {
            return Err(MemoryError::BadSize(size));
        }
        let bytes = if fill.is_empty() {
            vec![0; size]
        } else {
            fill.iter().copied().cycle().take(size).collect()
        };
        let id = RegionId(self.next_id);
        self.next_id += 1;
        self.regions.push(GuardedRegion { id, bytes, policy });
        self.suspended = false;
        Ok(id)
    }

    fn index(&self, id: RegionId) -> Option<usize> {
        self.regions.binary_search_by_key(&id, |r| r.id).ok()
    }

    pub fn region(&self, id: RegionId) -> Option<&GuardedRegion> {
        self.index(id).map(|i| &self.regions[i])
    }

    #[inline]
    pub fn region_bytes(&self, id: RegionId) -> Option<&[u8]> {
        self.index(id).map(|i| self.regions[i].bytes.as_slice())
    }

    /// Mutable access to a region's contents. Any mutation starts a new
    /// suspend cycle.
    pub fn region_mut(&mut self, id: RegionId) -> Option<&mut [u8]> {
        let i = self.index(id)?;
        self.suspended = false;
        Some(self.regions[i].bytes.as_mut_slice())
    }

    pub fn write(&mut self, id: RegionId, offset: usize, data: &[u8]) -> Result<(), MemoryError> {
        let bytes = self.region_mut(id).ok_or(MemoryError::NoSuchRegion(id))?;
        let dst = offset
            .checked_add(data.len())
            .and_then(|end| bytes.get_mut(offset..end))
            .ok_or(MemoryError::OutOfBounds {
                region: id,
                offset,
                len: data.len(),
            })?;
        dst.copy_from_slice(data);
        Ok(())
    }

    /// Child address space after `fork`: a deep copy with every wipe-on-fork
    /// region zeroed. The parent is untouched.
    pub fn on_fork(&self) -> RegionRegistry {
        let mut child = RegionRegistry {
            regions: self.regions.clone(),
            next_id: self.next_id,
            suspended: false,
        };
        for r in child.regions.iter_mut().filter(|r| r.policy.wipe_on_fork) {
            r.wipe();
        }
        child
    }

    /// Zeroes every wipe-on-suspend region in place and marks the registry
    /// ready for serialization.
    pub fn on_suspend(&mut self) -> WipeReport {
        let mut wiped = Vec::new();
        for r in self.regions.iter_mut().filter(|r| r.policy.wipe_on_suspend) {
            r.wipe();
            wiped.push(r.id);
        }
        self.suspended = true;
        WipeReport { wiped }
    }

    pub fn is_suspended(&self) -> bool {
        self.suspended
    }

    /// Leaves the suspended state without touching memory.
    pub fn resume(&mut self) {
        self.suspended = false;
    }

    pub fn serialize_snapshot(&self) -> Result<Vec<u8>, MemoryError> {
        if !self.suspended {
            return Err(MemoryError::SuspendNotRun);
        }
        let mut w = Writer::new();
        w.bytes(STREAM_MAGIC).u8(STREAM_VERSION);
        for r in &self.regions {
            w.u64(r.id.0)
                .u64(r.bytes.len() as u64)
                .u8(r.policy.flags());
            if r.policy.exclude_from_snapshot {
                w.bytes(&vec![0; r.bytes.len()]);
            } else {
                w.bytes(&r.bytes);
            }
        }
        Ok(w.finish())
    }

    pub fn deserialize_snapshot(stream: &[u8]) -> Result<RegionRegistry, MemoryError> {
        let mut r = Reader::new(stream);
        if r.take(4, "magic")? != STREAM_MAGIC {
            return Err(MemoryError::CorruptStream("bad magic".into()));
        }
        let version = r.u8("version")?;
        if version != STREAM_VERSION {
            return Err(MemoryError::CorruptStream(format!(
                "unsupported version {version}"
            )));
        }
        let mut regions: Vec<GuardedRegion> = Vec::new();
        while !r.is_empty() {
            let id = RegionId(r.u64("region id")?);
            let len = r.u64("region length")?;
            let len = usize::try_from(len)
                .map_err(|_| MemoryError::CorruptStream("region length overflow".into()))?;
            if len == 0 || len % PAGE_SIZE != 0 {
                return Err(MemoryError::CorruptStream(format!(
                    "region {id} has length {len}"
                )));
            }
            let flags = r.u8("policy flags")?;
            let policy = WipePolicy::from_flags(flags).ok_or_else(|| {
                MemoryError::CorruptStream(format!("region {id} has flags {flags:#04x}"))
            })?;
            let bytes = r.take(len, "region contents")?.to_vec();
            if regions.last().is_some_and(|prev| prev.id >= id) {
                return Err(MemoryError::CorruptStream(format!(
                    "region {id} out of order"
                )));
            }
            regions.push(GuardedRegion { id, bytes, policy });
        }
        let next_id = regions.last().map_or(0, |r| r.id.0 + 1);
        Ok(RegionRegistry {
            regions,
            next_id,
            suspended: false,
        })
    }
}
