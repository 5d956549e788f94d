// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Randomness that stays unique across VM snapshot clones.
//!
//! - [`gen_device`]: a monotonically increasing generation counter with
//!   watcher acknowledgement and a shared read-only view.
//! - [`guard_memory`]: memory regions wiped on fork or suspend, or left out
//!   of snapshots.
//! - [`ctr_drbg`]: AES-128 CTR_DRBG without derivation function.
//! - [`snapsafe_rng`]: a DRBG and nonce counter that reseed when a guard
//!   page is wiped or the generation moves.
//! - [`vm_sim`]: a deterministic discrete-event simulator of snapshot,
//!   restore and clone.
//! - [`harness`]: scenario language, uniqueness checking, benchmarks and
//!   the feature matrix.

mod codec;

pub mod ctr_drbg;
pub mod entropy;
pub mod gen_device;
pub mod guard_memory;
pub mod harness;
pub mod snapsafe_rng;
pub mod vm_sim;

pub use ctr_drbg::{CtrDrbg, DrbgError};
pub use entropy::{EntropyError, EntropySource};
pub use gen_device::{DeviceError, GenDevice, Generation, SharedView, VmGenUuid};
pub use guard_memory::{MemoryError, RegionId, RegionRegistry, WipePolicy};
pub use snapsafe_rng::{NonceCounter, RngError, SnapsafeRng};
