// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

mod common;

use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use common::{check_schedule, run_schedules, Op};
use proptest::prelude::*;
use snapsafe::gen_device::blocking::SharedDevice;
use snapsafe::gen_device::ReadMode;
use snapsafe::{DeviceError, Generation, VmGenUuid};

fn op() -> impl Strategy<Value = Op> {
    let id = 0u64..8;
    prop_oneof![
        2 => Just(Op::Open),
        2 => id.clone().prop_map(|i| Op::Read(i, ReadMode::Blocking)),
        1 => id.clone().prop_map(|i| Op::Read(i, ReadMode::NonBlocking)),
        3 => (id.clone(), -1i64..=1).prop_map(|(i, d)| Op::Ack(i, d)),
        1 => id.prop_map(Op::Close),
        2 => Just(Op::Bump),
        1 => Just(Op::Wait),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn device_matches_model(ops in prop::collection::vec(op(), 1..60)) {
        if let Err(e) = check_schedule(&ops) {
            return Err(TestCaseError::fail(e));
        }
    }
}

#[test]
fn seeded_schedules_match_model() {
    run_schedules(7, 2_000, 80).unwrap();
}

#[test]
fn blocked_reader_wakes_on_bump() {
    let dev = SharedDevice::new(VmGenUuid::from_u128(1));
    let id = dev.open_watcher();
    let (tx, rx) = mpsc::channel();
    let reader = {
        let dev = dev.clone();
        thread::spawn(move || {
            tx.send(()).unwrap();
            dev.read_blocking(id, Some(Duration::from_secs(10)))
        })
    };
    rx.recv().unwrap();
    dev.backend_bump(VmGenUuid::from_u128(2)).unwrap();
    assert_eq!(reader.join().unwrap(), Ok(Generation(1)));
}

#[test]
fn bump_before_read_is_not_lost() {
    let dev = SharedDevice::new(VmGenUuid::from_u128(1));
    let id = dev.open_watcher();
    dev.backend_bump(VmGenUuid::from_u128(2)).unwrap();
    assert_eq!(dev.read_blocking(id, Some(Duration::ZERO)), Ok(Generation(1)));
}

#[test]
fn wait_watchers_returns_after_last_ack() {
    let dev = SharedDevice::new(VmGenUuid::from_u128(1));
    let ids: Vec<_> = (0..4).map(|_| dev.open_watcher()).collect();
    dev.backend_bump(VmGenUuid::from_u128(2)).unwrap();
    assert_eq!(
        dev.wait_watchers(Some(Duration::from_millis(5))),
        Err(DeviceError::Timeout { outdated: 4 })
    );
    let workers: Vec<_> = ids
        .into_iter()
        .map(|id| {
            let dev = dev.clone();
            thread::spawn(move || {
                let g = dev.read_blocking(id, None).unwrap();
                dev.acknowledge(id, g).unwrap();
            })
        })
        .collect();
    dev.wait_watchers(Some(Duration::from_secs(10))).unwrap();
    assert_eq!(dev.count_outdated_watchers(), 0);
    for w in workers {
        w.join().unwrap();
    }
}

#[test]
fn closing_a_laggard_opens_the_fence() {
    let dev = SharedDevice::new(VmGenUuid::from_u128(1));
    let id = dev.open_watcher();
    dev.backend_bump(VmGenUuid::from_u128(2)).unwrap();
    assert_eq!(dev.count_outdated_watchers(), 1);
    dev.close(id).unwrap();
    dev.wait_watchers(Some(Duration::ZERO)).unwrap();
}
