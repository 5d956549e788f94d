// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Clone-safe CSPRNG and nonce counter.
//!
//! Both keep a guard page in a [`RegionRegistry`] with the wipe-on-fork and
//! wipe-on-suspend policy. The first eight bytes of the page hold
//! [`LIVE_MARKER`] while the state is fresh; fork, suspend (and therefore
//! any snapshot clone) zero it. When a generation-device view is attached,
//! the generation seen at the last (re)seed is the epoch, and a newer
//! device generation also counts as stale. Staleness is checked before
//! every output and triggers a synchronous reseed, so no byte derived from
//! pre-clone state is ever returned.

use thiserror::Error;

use crate::ctr_drbg::{CtrDrbg, DrbgError, DrbgState, MAX_REQUEST_BYTES, MAX_RESEED_INTERVAL, SEED_LEN};
use crate::entropy::{EntropyError, EntropySource};
use crate::gen_device::{Generation, SharedView};
use crate::guard_memory::{MemoryError, RegionId, RegionRegistry, WipePolicy, PAGE_SIZE};

/// Sentinel written at offset 0 of a live guard page.
pub const LIVE_MARKER: &[u8; 8] = b"SEEDED01";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RngError {
    #[error("entropy source yielded {got} bytes, {need} required")]
    EntropyUnavailable { got: usize, need: usize },
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Drbg(#[from] DrbgError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

fn pull_seed<E: EntropySource + ?Sized>(entropy: &mut E) -> Result<[u8; SEED_LEN], RngError> {
    let mut seed = [0u8; SEED_LEN];
    let got = entropy.fill(&mut seed)?;
    if got < SEED_LEN {
        seed.fill(0);
        return Err(RngError::EntropyUnavailable {
            got,
            need: SEED_LEN,
        });
    }
    Ok(seed)
}

/// One-page guard whose marker reads nonzero iff no wipe happened since the
/// last (re)seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuardCell {
    region: RegionId,
}

impl GuardCell {
    pub fn create(mem: &mut RegionRegistry) -> Result<GuardCell, MemoryError> {
        let region = mem.register_region(PAGE_SIZE, WipePolicy::GUARD, &[])?;
        Ok(GuardCell { region })
    }

    pub(crate) fn from_region(region: RegionId) -> GuardCell {
        GuardCell { region }
    }

    pub fn region(&self) -> RegionId {
        self.region
    }

    /// A missing page counts as wiped.
    #[inline]
    pub fn is_live(&self, mem: &RegionRegistry) -> bool {
        mem.region_bytes(self.region)
            .is_some_and(|b| b[..LIVE_MARKER.len()] == *LIVE_MARKER)
    }

    pub fn mark_live(&self, mem: &mut RegionRegistry) -> Result<(), MemoryError> {
        mem.write(self.region, 0, LIVE_MARKER)
    }
}

/// Read-only snapshot of RNG bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngInspect {
    pub reseed_counter: u64,
    pub epoch: Option<Generation>,
    /// Reseeds performed, including those triggered by detection.
    pub reseeds: u64,
    /// Reseeds triggered by a wiped guard or a newer generation.
    pub detections: u64,
    pub guard_checks: u64,
}

#[derive(Debug, Clone)]
pub struct SnapsafeRng {
    drbg: CtrDrbg,
    guard: GuardCell,
    view: Option<SharedView>,
    epoch: Option<Generation>,
    reseeds: u64,
    detections: u64,
    guard_checks: u64,
}

impl SnapsafeRng {
    pub fn instantiate<E: EntropySource + ?Sized>(
        mem: &mut RegionRegistry,
        entropy: &mut E,
        personalization: &[u8],
    ) -> Result<SnapsafeRng, RngError> {
        Self::instantiate_with_interval(mem, entropy, personalization, MAX_RESEED_INTERVAL)
    }

    pub fn instantiate_with_interval<E: EntropySource + ?Sized>(
        mem: &mut RegionRegistry,
        entropy: &mut E,
        personalization: &[u8],
        reseed_interval: u64,
    ) -> Result<SnapsafeRng, RngError> {
        let mut seed = pull_seed(entropy)?;
        let drbg = CtrDrbg::instantiate_with_interval(&seed, personalization, reseed_interval);
        seed.fill(0);
        let drbg = drbg?;
        let guard = GuardCell::create(mem)?;
        guard.mark_live(mem)?;
        Ok(SnapsafeRng {
            drbg,
            guard,
            view: None,
            epoch: None,
            reseeds: 0,
            detections: 0,
            guard_checks: 0,
        })
    }

    /// Starts tracking a generation device; the current generation becomes
    /// the epoch.
    pub fn attach_view(&mut self, view: SharedView) {
        self.epoch = Some(view.generation());
        self.view = Some(view);
    }

    /// Points at a (possibly different) device page while keeping the
    /// recorded epoch, as after a restore into a new VM.
    pub fn rebind_view(&mut self, view: Option<SharedView>) {
        self.view = view;
    }

    pub fn guard(&self) -> GuardCell {
        self.guard
    }

    /// Wiped guard first, then a generation newer than the epoch.
    #[inline]
    pub fn is_stale(&self, mem: &RegionRegistry) -> bool {
        if !self.guard.is_live(mem) {
            return true;
        }
        match (&self.view, self.epoch) {
            (Some(view), Some(epoch)) => view.generation() != epoch,
            (Some(_), None) => true,
            _ => false,
        }
    }

    pub fn generate<E: EntropySource + ?Sized>(
        &mut self,
        mem: &mut RegionRegistry,
        entropy: &mut E,
        out: &mut [u8],
    ) -> Result<(), RngError> {
        self.guard_checks += 1;
        if self.is_stale(mem) {
            self.detections += 1;
            self.reseed(mem, entropy, &[])?;
        }
        self.fill(mem, entropy, out)
    }

    /// Output without the staleness check; baseline for overhead benchmarks.
    pub fn generate_unchecked<E: EntropySource + ?Sized>(
        &mut self,
        mem: &mut RegionRegistry,
        entropy: &mut E,
        out: &mut [u8],
    ) -> Result<(), RngError> {
        self.fill(mem, entropy, out)
    }

    fn fill<E: EntropySource + ?Sized>(
        &mut self,
        mem: &mut RegionRegistry,
        entropy: &mut E,
        out: &mut [u8],
    ) -> Result<(), RngError> {
        if out.is_empty() {
            return self.generate_chunk(mem, entropy, out);
        }
        for chunk in out.chunks_mut(MAX_REQUEST_BYTES) {
            self.generate_chunk(mem, entropy, chunk)?;
        }
        Ok(())
    }

    fn generate_chunk<E: EntropySource + ?Sized>(
        &mut self,
        mem: &mut RegionRegistry,
        entropy: &mut E,
        chunk: &mut [u8],
    ) -> Result<(), RngError> {
        match self.drbg.generate(chunk, &[]) {
            Err(DrbgError::ReseedRequired) => {
                self.reseed(mem, entropy, &[])?;
                Ok(self.drbg.generate(chunk, &[])?)
            }
            other => Ok(other?),
        }
    }

    pub fn reseed<E: EntropySource + ?Sized>(
        &mut self,
        mem: &mut RegionRegistry,
        entropy: &mut E,
        additional: &[u8],
    ) -> Result<(), RngError> {
        let mut seed = pull_seed(entropy)?;
        let res = self.drbg.reseed(&seed, additional);
        seed.fill(0);
        res?;
        self.guard.mark_live(mem)?;
        if let Some(view) = &self.view {
            self.epoch = Some(view.generation());
        }
        self.reseeds += 1;
        Ok(())
    }

    pub fn inspect(&self) -> RngInspect {
        RngInspect {
            reseed_counter: self.drbg.state().reseed_counter,
            epoch: self.epoch,
            reseeds: self.reseeds,
            detections: self.detections,
            guard_checks: self.guard_checks,
        }
    }

    pub(crate) fn parts(&self) -> (DrbgState, u64, RegionId, Option<Generation>) {
        (
            self.drbg.state(),
            self.drbg.reseed_interval(),
            self.guard.region,
            self.epoch,
        )
    }

    pub(crate) fn from_parts(
        state: DrbgState,
        reseed_interval: u64,
        guard: RegionId,
        epoch: Option<Generation>,
    ) -> Result<SnapsafeRng, DrbgError> {
        Ok(SnapsafeRng {
            drbg: CtrDrbg::from_state(state, reseed_interval)?,
            guard: GuardCell::from_region(guard),
            view: None,
            epoch,
            reseeds: 0,
            detections: 0,
            guard_checks: 0,
        })
    }
}

/// Sequential 128-bit nonces that rebase to a fresh unique base whenever
/// the guard is wiped or the generation moves.
#[derive(Debug, Clone)]
pub struct NonceCounter {
    next: u128,
    base: u128,
    guard: GuardCell,
    view: Option<SharedView>,
    epoch: Option<Generation>,
    rebases: u64,
}

impl NonceCounter {
    pub fn new(mem: &mut RegionRegistry, base: u128) -> Result<NonceCounter, MemoryError> {
        let guard = GuardCell::create(mem)?;
        guard.mark_live(mem)?;
        Ok(NonceCounter {
            next: base,
            base,
            guard,
            view: None,
            epoch: None,
            rebases: 0,
        })
    }

    pub fn attach_view(&mut self, view: SharedView) {
        self.epoch = Some(view.generation());
        self.view = Some(view);
    }

    pub fn rebind_view(&mut self, view: Option<SharedView>) {
        self.view = view;
    }

    pub fn base(&self) -> u128 {
        self.base
    }

    pub fn rebases(&self) -> u64 {
        self.rebases
    }

    pub fn guard(&self) -> GuardCell {
        self.guard
    }

    #[inline]
    pub fn is_stale(&self, mem: &RegionRegistry) -> bool {
        if !self.guard.is_live(mem) {
            return true;
        }
        match (&self.view, self.epoch) {
            (Some(view), Some(epoch)) => view.generation() != epoch,
            (Some(_), None) => true,
            _ => false,
        }
    }

    /// Next nonce. `fresh_base` is only called when the counter is stale and
    /// must supply a new unique 128-bit base.
    #[inline]
    pub fn next_nonce<F>(&mut self, mem: &mut RegionRegistry, fresh_base: F) -> Result<u128, RngError>
    where
        F: FnOnce(&mut RegionRegistry) -> Result<u128, RngError>,
    {
        if self.is_stale(mem) {
            self.rebase(mem, fresh_base)?;
        }
        let n = self.next;
        self.next = n.wrapping_add(1);
        Ok(n)
    }

    /// Next nonce, rebasing from `rng` when stale.
    pub fn next_nonce_from<E: EntropySource + ?Sized>(
        &mut self,
        mem: &mut RegionRegistry,
        rng: &mut SnapsafeRng,
        entropy: &mut E,
    ) -> Result<u128, RngError> {
        self.next_nonce(mem, |mem| {
            let mut b = [0u8; 16];
            rng.generate(mem, entropy, &mut b)?;
            Ok(u128::from_be_bytes(b))
        })
    }

    /// Plain increment with no guard check; benchmark baseline.
    #[inline]
    pub fn next_unchecked(&mut self) -> u128 {
        let n = self.next;
        self.next = n.wrapping_add(1);
        n
    }

    fn rebase<F>(&mut self, mem: &mut RegionRegistry, fresh_base: F) -> Result<(), RngError>
    where
        F: FnOnce(&mut RegionRegistry) -> Result<u128, RngError>,
    {
        let base = fresh_base(mem)?;
        self.base = base;
        self.next = base;
        self.guard.mark_live(mem)?;
        if let Some(view) = &self.view {
            self.epoch = Some(view.generation());
        }
        self.rebases += 1;
        Ok(())
    }

    pub(crate) fn parts(&self) -> (u128, u128, RegionId, Option<Generation>) {
        (self.next, self.base, self.guard.region, self.epoch)
    }

    pub(crate) fn from_parts(
        next: u128,
        base: u128,
        guard: RegionId,
        epoch: Option<Generation>,
    ) -> NonceCounter {
        NonceCounter {
            next,
            base,
            guard: GuardCell::from_region(guard),
            view: None,
            epoch,
            rebases: 0,
        }
    }
}
