// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapsafe::gen_device::{ReadMode, ReadOutcome, WaitOutcome, WatcherId};
use snapsafe::{CtrDrbg, DeviceError, GenDevice, Generation, VmGenUuid};

// ---------------------------------------------------------------------------
// CAVP response files

pub const RESEED_RSP: &str = include_str!("../data/ctr_drbg_aes128_nodf_reseed.rsp");
pub const NO_RESEED_RSP: &str = include_str!("../data/ctr_drbg_aes128_nodf_no_reseed.rsp");

#[derive(Debug, Default, Clone)]
pub struct Vector {
    pub count: u32,
    pub entropy: Vec<u8>,
    pub personalization: Vec<u8>,
    pub entropy_reseed: Option<Vec<u8>>,
    pub additional_reseed: Vec<u8>,
    pub additional: Vec<Vec<u8>>,
    pub returned: Vec<u8>,
}

fn unhex(v: &str) -> Vec<u8> {
    hex::decode(v.trim()).expect("hex field")
}

pub fn parse_rsp(text: &str) -> Vec<Vector> {
    let mut out = Vec::new();
    let mut cur: Option<Vector> = None;
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "COUNT" {
            out.extend(cur.take());
            cur = Some(Vector {
                count: value.parse().expect("COUNT"),
                ..Vector::default()
            });
            continue;
        }
        let v = cur.as_mut().expect("field before COUNT");
        match key {
            "EntropyInput" => v.entropy = unhex(value),
            "Nonce" => assert!(value.is_empty(), "no-df vectors carry no nonce"),
            "PersonalizationString" => v.personalization = unhex(value),
            "EntropyInputReseed" => v.entropy_reseed = Some(unhex(value)),
            "AdditionalInputReseed" => v.additional_reseed = unhex(value),
            "AdditionalInput" => v.additional.push(unhex(value)),
            "ReturnedBits" => v.returned = unhex(value),
            other => panic!("unexpected field {other}"),
        }
    }
    out.extend(cur);
    out
}

/// Runs one vector through instantiate, optional reseed and two generates;
/// the second output is the one CAVP publishes.
pub fn run_vector(v: &Vector) -> Result<Vec<u8>, snapsafe::DrbgError> {
    let mut drbg = CtrDrbg::instantiate(&v.entropy, &v.personalization)?;
    if let Some(e) = &v.entropy_reseed {
        drbg.reseed(e, &v.additional_reseed)?;
    }
    let mut out = vec![0; v.returned.len()];
    drbg.generate(&mut out, &v.additional[0])?;
    drbg.generate(&mut out, &v.additional[1])?;
    Ok(out)
}

pub fn all_vectors() -> Vec<(&'static str, Vector)> {
    let mut all: Vec<_> = parse_rsp(RESEED_RSP)
        .into_iter()
        .map(|v| ("reseed", v))
        .collect();
    all.extend(parse_rsp(NO_RESEED_RSP).into_iter().map(|v| ("no-reseed", v)));
    all
}

// ---------------------------------------------------------------------------
// Naive device model

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Open,
    Read(u64, ReadMode),
    Ack(u64, i64),
    Close(u64),
    Bump,
    Wait,
}

#[derive(Debug, Clone)]
struct ModelWatcher {
    acked: u32,
    open: bool,
    parked: bool,
}

/// The device written as plainly as possible: a vector of watchers scanned
/// on every query.
#[derive(Debug, Clone, Default)]
pub struct Model {
    gen: u32,
    watchers: Vec<ModelWatcher>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Opened(u64),
    Read(Result<ReadOutcome, DeviceError>),
    Ack(Result<(), DeviceError>),
    Close(Result<(), DeviceError>),
    Bump(u32, Vec<u64>),
    Wait(WaitOutcome),
}

impl Model {
    fn check(&self, id: u64) -> Result<usize, DeviceError> {
        let i = id as usize;
        match self.watchers.get(i) {
            None => Err(DeviceError::UnknownHandle(WatcherId(id))),
            Some(w) if !w.open => Err(DeviceError::ClosedHandle(WatcherId(id))),
            Some(_) => Ok(i),
        }
    }

    pub fn outdated(&self) -> usize {
        self.watchers
            .iter()
            .filter(|w| w.open && w.acked < self.gen)
            .count()
    }

    pub fn parked(&self) -> Vec<u64> {
        (0..self.watchers.len() as u64)
            .filter(|&i| self.watchers[i as usize].parked)
            .collect()
    }

    pub fn apply(&mut self, op: Op) -> Outcome {
        match op {
            Op::Open => {
                self.watchers.push(ModelWatcher {
                    acked: self.gen,
                    open: true,
                    parked: false,
                });
                Outcome::Opened(self.watchers.len() as u64 - 1)
            }
            Op::Read(id, mode) => Outcome::Read(self.check(id).and_then(|i| {
                let w = &mut self.watchers[i];
                if self.gen > w.acked {
                    w.parked = false;
                    Ok(ReadOutcome::Ready(Generation(self.gen)))
                } else if mode == ReadMode::Blocking {
                    w.parked = true;
                    Ok(ReadOutcome::Parked)
                } else {
                    Err(DeviceError::WouldBlock)
                }
            })),
            Op::Ack(id, delta) => Outcome::Ack(self.check(id).and_then(|i| {
                let value = ack_value(self.gen, delta);
                if value != self.gen {
                    return Err(DeviceError::StaleAck {
                        written: Generation(value),
                        current: Generation(self.gen),
                    });
                }
                self.watchers[i].acked = value;
                Ok(())
            })),
            Op::Close(id) => Outcome::Close(self.check(id).map(|i| {
                self.watchers[i].open = false;
                self.watchers[i].parked = false;
            })),
            Op::Bump => {
                self.gen += 1;
                let released = self.parked();
                for w in &mut self.watchers {
                    w.parked = false;
                }
                Outcome::Bump(self.gen, released)
            }
            Op::Wait => Outcome::Wait(match self.outdated() {
                0 => WaitOutcome::Ready,
                outdated => WaitOutcome::Pending { outdated },
            }),
        }
    }
}

fn ack_value(gen: u32, delta: i64) -> u32 {
    (gen as i64 + delta).max(0) as u32
}

/// Applies `op` to the real device.
pub fn apply_device(dev: &mut GenDevice, op: Op, bumps: &mut u128) -> Outcome {
    match op {
        Op::Open => Outcome::Opened(dev.open_watcher().0),
        Op::Read(id, mode) => Outcome::Read(dev.read(WatcherId(id), mode)),
        Op::Ack(id, delta) => {
            let value = Generation(ack_value(dev.generation().0, delta));
            Outcome::Ack(dev.acknowledge(WatcherId(id), value))
        }
        Op::Close(id) => Outcome::Close(dev.close(WatcherId(id))),
        Op::Bump => {
            *bumps += 1;
            let r = dev
                .backend_bump(VmGenUuid::from_u128(*bumps))
                .expect("fresh uuid");
            let mut released: Vec<u64> = r.released.iter().map(|w| w.0).collect();
            released.sort_unstable();
            Outcome::Bump(r.generation.0, released)
        }
        Op::Wait => Outcome::Wait(dev.wait_watchers()),
    }
}

/// Draws a schedule of `len` operations; handle ids may name watchers that
/// are closed or were never opened.
pub fn random_schedule(rng: &mut ChaCha8Rng, len: usize) -> Vec<Op> {
    let mut opened = 0u64;
    (0..len)
        .map(|_| {
            let pick = |rng: &mut ChaCha8Rng| rng.next_u64() % (opened + 2);
            let op = match rng.next_u32() % 12 {
                0 | 1 => Op::Open,
                2 | 3 => Op::Read(pick(rng), ReadMode::Blocking),
                4 => Op::Read(pick(rng), ReadMode::NonBlocking),
                5..=7 => Op::Ack(pick(rng), [0, 0, -1, 1][rng.next_u32() as usize % 4]),
                8 => Op::Close(pick(rng)),
                9 | 10 => Op::Bump,
                _ => Op::Wait,
            };
            if op == Op::Open {
                opened += 1;
            }
            op
        })
        .collect()
}

/// Replays `ops` against both the device and the model, checking the
/// protocol invariants after every step.
pub fn check_schedule(ops: &[Op]) -> Result<(), String> {
    let mut dev = GenDevice::new(VmGenUuid::from_u128(0));
    let mut model = Model::default();
    let mut bumps = 0u128;
    let view = dev.map_shared_view();
    for (step, &op) in ops.iter().enumerate() {
        let before = dev.generation();
        let parked_before: BTreeSet<u64> = dev.parked().map(|w| w.0).collect();
        let got = apply_device(&mut dev, op, &mut bumps);
        let want = model.apply(op);
        let fail = |what: &str| Err(format!("step {step} {op:?}: {what}"));
        if got != want {
            return fail(&format!("device {got:?}, model {want:?}"));
        }
        // Monotonicity: the generation moves only on a bump, by exactly one,
        // and every mapping sees it.
        let after = dev.generation();
        let expect = if op == Op::Bump { before.0 + 1 } else { before.0 };
        if after.0 != expect || view.generation() != after {
            return fail("generation not monotone or view out of date");
        }
        // Ack-fence soundness: an acknowledgement never names anything but
        // the current generation, and the fence opens only when every open
        // handle holds it.
        for h in dev.watchers() {
            if h.last_acked > after {
                return fail("handle acknowledged a future generation");
            }
        }
        let all_acked = dev
            .watchers()
            .filter(|h| h.open)
            .all(|h| h.last_acked == after);
        if (dev.wait_watchers() == WaitOutcome::Ready) != all_acked {
            return fail("fence disagrees with handle state");
        }
        // wait_watchers exactness.
        if dev.count_outdated_watchers() != model.outdated() {
            return fail("outdated count differs from brute force");
        }
        // No lost wakeups: a bump releases every parked reader and each of
        // them can now read the new generation.
        if let Outcome::Bump(_, released) = &got {
            let released: BTreeSet<u64> = released.iter().copied().collect();
            if released != parked_before || dev.parked().next().is_some() {
                return fail("bump did not release exactly the parked readers");
            }
            for &id in &released {
                let mut probe = dev.duplicate();
                if probe.read(WatcherId(id), ReadMode::NonBlocking)
                    != Ok(ReadOutcome::Ready(after))
                {
                    return fail("released reader cannot observe the bump");
                }
            }
        }
        let parked: Vec<u64> = dev.parked().map(|w| w.0).collect();
        if parked != model.parked() {
            return fail("parked set differs from model");
        }
    }
    Ok(())
}

/// Runs `count` random schedules from `seed`, returning the first failure.
pub fn run_schedules(seed: u64, count: usize, max_len: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = 0;
    for i in 0..count {
        let len = 1 + rng.next_u32() as usize % max_len;
        let ops = random_schedule(&mut rng, len);
        steps += ops.len();
        check_schedule(&ops).map_err(|e| format!("schedule {i}: {e}"))?;
    }
    Ok(steps)
}

// ---------------------------------------------------------------------------
// Guard memory

use snapsafe::guard_memory::PAGE_SIZE;
use snapsafe::vm_sim::{SimConfig, World, MAIN_PID};
use snapsafe::{RegionRegistry, WipePolicy};

const FILL: &[u8] = b"fill-pattern";

/// Drives one policy through fork, suspend and a snapshot round trip and
/// checks each step against the three flags taken independently.
pub fn check_policy(policy: WipePolicy) -> Result<(), String> {
    let fail = |what: &str| Err(format!("{policy:?}: {what}"));
    let mut parent = RegionRegistry::new();
    let id = parent
        .register_region(PAGE_SIZE, policy, FILL)
        .map_err(|e| e.to_string())?;
    let bystander = parent
        .register_region(PAGE_SIZE, WipePolicy::ORDINARY, b"keep")
        .map_err(|e| e.to_string())?;
    let original = parent.region_bytes(id).unwrap().to_vec();

    let child = parent.on_fork();
    if child.region(id).unwrap().is_zeroed() != policy.wipe_on_fork {
        return fail("fork wipe does not follow wipe_on_fork");
    }
    if parent.region_bytes(id).unwrap() != original.as_slice() {
        return fail("fork touched the parent");
    }

    let report = parent.on_suspend();
    if report.wiped.contains(&id) != policy.wipe_on_suspend
        || parent.region(id).unwrap().is_zeroed() != policy.wipe_on_suspend
    {
        return fail("suspend wipe does not follow wipe_on_suspend");
    }
    let stream = parent.serialize_snapshot().map_err(|e| e.to_string())?;
    let leaked = stream.windows(FILL.len()).any(|w| w == FILL);
    if leaked != (!policy.wipe_on_suspend && !policy.exclude_from_snapshot) {
        return fail("stream contents do not follow suspend and exclude");
    }
    let restored = RegionRegistry::deserialize_snapshot(&stream).map_err(|e| e.to_string())?;
    let r = restored.region(id).ok_or("region lost")?;
    if r.policy() != policy {
        return fail("policy not preserved");
    }
    let expect_zero = policy.wipe_on_suspend || policy.exclude_from_snapshot;
    if r.is_zeroed() != expect_zero || (!expect_zero && r.bytes() != original.as_slice()) {
        return fail("restored contents wrong");
    }
    if restored.region_bytes(bystander) != parent.region_bytes(bystander) {
        return fail("ordinary region changed");
    }
    Ok(())
}

/// Boots a guest with a random number of processes, snapshots it and checks
/// that no 8-byte piece of any process secret appears in the blob.
pub fn secret_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = World::new(SimConfig::new(seed));
    for _ in 0..rng.next_u32() % 4 {
        world.fork_process(0, MAIN_PID).map_err(|e| e.to_string())?;
    }
    for _ in 0..rng.next_u32() % 3 {
        world.invoke(0, MAIN_PID).map_err(|e| e.to_string())?;
    }
    let blob = world.snapshot(0).map_err(|e| e.to_string())?;
    let guest = world.guest(0).ok_or("no guest 0")?;
    if guest.process(MAIN_PID).unwrap().secret().iter().all(|&b| b == 0) {
        return Err(format!("seed {seed}: main process has no secret"));
    }
    // Forked children start with the secret page wiped.
    let secrets: Vec<Vec<u8>> = guest
        .pids()
        .map(|p| guest.process(p).unwrap().secret().to_vec())
        .filter(|s| s.iter().any(|&b| b != 0))
        .collect();
    for (i, s) in secrets.iter().enumerate() {
        if s.windows(8).any(|w| blob.as_bytes().windows(8).any(|b| b == w)) {
            return Err(format!("seed {seed}: secret of process {i} found in blob"));
        }
    }
    let clones = world.clone_restore(&blob, 1).map_err(|e| e.to_string())?;
    let clone = world.guest(clones[0]).ok_or("clone missing")?;
    for p in clone.pids() {
        let s = clone.process(p).unwrap().secret();
        if secrets.iter().any(|orig| orig.as_slice() == s) {
            return Err(format!("seed {seed}: clone inherited a secret"));
        }
    }
    Ok(())
}
