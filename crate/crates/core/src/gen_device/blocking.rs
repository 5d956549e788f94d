// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Thread-safe wrapper around [`GenDevice`] with real blocking reads.
//!
//! Used by the stress tests; the simulator never depends on it.

use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{
    BumpReport, DeviceError, GenDevice, Generation, ReadMode, ReadOutcome, SharedView, VmGenUuid,
    WatcherId,
};

#[derive(Debug, Clone)]
pub struct SharedDevice {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    state: Mutex<GenDevice>,
    changed: Condvar,
}

impl SharedDevice {
    pub fn new(backend_uuid: VmGenUuid) -> Self {
        SharedDevice {
            inner: Arc::new(Inner {
                state: Mutex::new(GenDevice::new(backend_uuid)),
                changed: Condvar::new(),
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, GenDevice> {
        // A panicking holder cannot leave the device half-updated: every
        // mutation is a single call into GenDevice.
        self.inner.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn generation(&self) -> Generation {
        self.lock().generation()
    }

    pub fn open_watcher(&self) -> WatcherId {
        self.lock().open_watcher()
    }

    pub fn map_shared_view(&self) -> SharedView {
        self.lock().map_shared_view()
    }

    pub fn read_nonblocking(&self, id: WatcherId) -> Result<Generation, DeviceError> {
        match self.lock().read(id, ReadMode::NonBlocking)? {
            ReadOutcome::Ready(g) => Ok(g),
            ReadOutcome::Parked => Err(DeviceError::WouldBlock),
        }
    }

    /// Blocks until the generation moves past the handle's last
    /// acknowledgement, the handle is closed, or `timeout` elapses.
    pub fn read_blocking(
        &self,
        id: WatcherId,
        timeout: Option<Duration>,
    ) -> Result<Generation, DeviceError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut dev = self.lock();
        loop {
            if let ReadOutcome::Ready(g) = dev.read(id, ReadMode::Blocking)? {
                return Ok(g);
            }
            dev = match deadline {
                None => self
                    .inner
                    .changed
                    .wait(dev)
                    .unwrap_or_else(|e| e.into_inner()),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Err(DeviceError::Timeout { outdated: 0 });
                    }
                    self.inner
                        .changed
                        .wait_timeout(dev, deadline - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
            };
        }
    }

    pub fn acknowledge(&self, id: WatcherId, value: Generation) -> Result<(), DeviceError> {
        let res = self.lock().acknowledge(id, value);
        self.inner.changed.notify_all();
        res
    }

    pub fn close(&self, id: WatcherId) -> Result<(), DeviceError> {
        let res = self.lock().close(id);
        self.inner.changed.notify_all();
        res
    }

    pub fn count_outdated_watchers(&self) -> usize {
        self.lock().count_outdated_watchers()
    }

    pub fn backend_bump(&self, new_uuid: VmGenUuid) -> Result<BumpReport, DeviceError> {
        let res = self.lock().backend_bump(new_uuid);
        self.inner.changed.notify_all();
        res
    }

    /// Blocks until no open handle is outdated.
    pub fn wait_watchers(&self, timeout: Option<Duration>) -> Result<(), DeviceError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut dev = self.lock();
        loop {
            let outdated = dev.count_outdated_watchers();
            if outdated == 0 {
                return Ok(());
            }
            dev = match deadline {
                None => self
                    .inner
                    .changed
                    .wait(dev)
                    .unwrap_or_else(|e| e.into_inner()),
                Some(deadline) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Err(DeviceError::Timeout { outdated });
                    }
                    self.inner
                        .changed
                        .wait_timeout(dev, deadline - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0
                }
            };
        }
    }

    /// Runs `f` with exclusive access; used by tests to inspect invariants.
    pub fn with_state<R>(&self, f: impl FnOnce(&GenDevice) -> R) -> R {
        f(&self.lock())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Barrier;
    use std::thread;

    #[test]
    fn bump_releases_all_blocked_readers() {
        let dev = SharedDevice::new(VmGenUuid::from_u128(1));
        let n = 8;
        let handles: Vec<_> = (0..n).map(|_| dev.open_watcher()).collect();
        let barrier = Arc::new(Barrier::new(n + 1));
        let readers: Vec<_> = handles
            .iter()
            .map(|&h| {
                let dev = dev.clone();
                let barrier = barrier.clone();
                thread::spawn(move || {
                    barrier.wait();
                    dev.read_blocking(h, Some(Duration::from_secs(10)))
                })
            })
            .collect();
        barrier.wait();
        // let readers park
        thread::sleep(Duration::from_millis(20));
        dev.backend_bump(VmGenUuid::from_u128(2)).unwrap();
        for r in readers {
            assert_eq!(r.join().unwrap(), Ok(Generation(1)));
        }
    }

    #[test]
    fn wait_watchers_returns_after_last_ack() {
        let dev = SharedDevice::new(VmGenUuid::from_u128(1));
        let handles: Vec<_> = (0..4).map(|_| dev.open_watcher()).collect();
        dev.backend_bump(VmGenUuid::from_u128(2)).unwrap();
        let acker = {
            let dev = dev.clone();
            thread::spawn(move || {
                for h in handles {
                    let g = dev.read_blocking(h, Some(Duration::from_secs(10))).unwrap();
                    dev.acknowledge(h, g).unwrap();
                }
            })
        };
        dev.wait_watchers(Some(Duration::from_secs(10))).unwrap();
        assert_eq!(dev.count_outdated_watchers(), 0);
        acker.join().unwrap();
    }

    #[test]
    fn wait_watchers_times_out() {
        let dev = SharedDevice::new(VmGenUuid::from_u128(1));
        dev.open_watcher();
        dev.backend_bump(VmGenUuid::from_u128(2)).unwrap();
        assert_eq!(
            dev.wait_watchers(Some(Duration::from_millis(10))),
            Err(DeviceError::Timeout { outdated: 1 })
        );
    }

    #[test]
    fn parallel_bumps_and_acks_keep_invariants() {
        let dev = SharedDevice::new(VmGenUuid::from_u128(0));
        let workers: Vec<_> = (0..4)
            .map(|_| {
                let dev = dev.clone();
                let h = dev.open_watcher();
                thread::spawn(move || {
                    let mut last = Generation(0);
                    for _ in 0..200 {
                        if let Ok(g) = dev.read_nonblocking(h) {
                            assert!(g > last);
                            last = g;
                            let _ = dev.acknowledge(h, g);
                        }
                        let view = dev.map_shared_view().generation();
                        assert!(view >= last);
                    }
                })
            })
            .collect();
        for i in 1..=100u128 {
            dev.backend_bump(VmGenUuid::from_u128(i)).unwrap();
        }
        for w in workers {
            w.join().unwrap();
        }
        assert_eq!(dev.generation(), Generation(100));
        dev.with_state(|d| {
            assert_eq!(d.map_shared_view().generation(), d.generation());
            for w in d.watchers() {
                assert!(w.last_acked <= d.generation());
            }
        });
    }
}
