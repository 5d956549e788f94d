// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{check_policy, secret_trial};
use proptest::prelude::*;
use snapsafe::guard_memory::PAGE_SIZE;
use snapsafe::snapsafe_rng::GuardCell;
use snapsafe::{RegionRegistry, WipePolicy};

#[test]
fn every_policy_combination() {
    for policy in WipePolicy::all() {
        check_policy(policy).unwrap();
    }
}

#[test]
fn secret_absent_from_snapshots() {
    for seed in 0..100 {
        secret_trial(seed).unwrap();
    }
}

#[test]
fn guard_cell_dies_on_fork_and_suspend() {
    let mut mem = RegionRegistry::new();
    let cell = GuardCell::create(&mut mem).unwrap();
    cell.mark_live(&mut mem).unwrap();
    assert!(cell.is_live(&mem));
    assert!(!cell.is_live(&mem.on_fork()));
    mem.on_suspend();
    assert!(!cell.is_live(&mem));
    let restored = RegionRegistry::deserialize_snapshot(&mem.serialize_snapshot().unwrap()).unwrap();
    assert!(!cell.is_live(&restored));
}

fn policy() -> impl Strategy<Value = WipePolicy> {
    (0u8..8).prop_map(|f| WipePolicy::from_flags(f).unwrap())
}

proptest! {
    #[test]
    fn stream_round_trips(
        regions in prop::collection::vec((1usize..3, policy(), any::<u8>()), 0..6),
    ) {
        let mut mem = RegionRegistry::new();
        for (pages, policy, byte) in &regions {
            mem.register_region(pages * PAGE_SIZE, *policy, &[*byte, 0x5a]).unwrap();
        }
        mem.on_suspend();
        let stream = mem.serialize_snapshot().unwrap();
        let back = RegionRegistry::deserialize_snapshot(&stream).unwrap();
        prop_assert_eq!(back.len(), mem.len());
        for (a, b) in mem.regions().zip(back.regions()) {
            prop_assert_eq!(a.id(), b.id());
            prop_assert_eq!(a.policy(), b.policy());
            if a.policy().exclude_from_snapshot {
                prop_assert!(b.is_zeroed());
            } else {
                prop_assert_eq!(a.bytes(), b.bytes());
            }
        }
        prop_assert_eq!(back.serialize_snapshot().ok(), None);
    }

    #[test]
    fn fork_wipes_exactly_marked_regions(flags in prop::collection::vec(policy(), 1..8)) {
        let mut mem = RegionRegistry::new();
        for p in &flags {
            mem.register_region(PAGE_SIZE, *p, b"x").unwrap();
        }
        let child = mem.on_fork();
        for (p, r) in flags.iter().zip(child.regions()) {
            prop_assert_eq!(r.is_zeroed(), p.wipe_on_fork);
        }
        prop_assert!(mem.regions().all(|r| !r.is_zeroed()));
    }

    #[test]
    fn corrupt_streams_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let mut stream = b"SSGM\x01".to_vec();
        stream.extend(bytes);
        let _ = RegionRegistry::deserialize_snapshot(&stream);
    }
}
