// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Exact duplicate detection over emitted values.

use std::collections::HashMap;
use std::fmt;

use crate::vm_sim::Emission;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Unique,
    Duplicates,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Unique => "unique",
            Verdict::Duplicates => "duplicates",
        })
    }
}

/// The earliest repeat: `second` re-emits the value `first` emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Collision {
    pub first: Emission,
    pub second: Emission,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniquenessReport {
    pub total: usize,
    /// Emissions whose value was already emitted (`total - distinct`).
    pub duplicates: usize,
    pub first_collision: Option<Collision>,
}

impl UniquenessReport {
    pub fn distinct(&self) -> usize {
        self.total - self.duplicates
    }

    pub fn verdict(&self) -> Verdict {
        if self.duplicates == 0 {
            Verdict::Unique
        } else {
            Verdict::Duplicates
        }
    }
}

fn fmt_emission(e: &Emission) -> String {
    format!("guest={} t={}", e.guest, e.tick)
}

impl fmt::Display for UniquenessReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "emissions: {}", self.total)?;
        writeln!(f, "distinct: {}", self.distinct())?;
        writeln!(f, "duplicates: {}", self.duplicates)?;
        match &self.first_collision {
            None => writeln!(f, "first collision: none")?,
            Some(c) => writeln!(
                f,
                "first collision: value={:032x} first=({}) second=({})",
                c.first.value,
                fmt_emission(&c.first),
                fmt_emission(&c.second)
            )?,
        }
        writeln!(f, "verdict: {}", self.verdict())
    }
}

/// Scans every emission in `(tick, guest, position)` order. The first
/// collision is the earliest emission in that order whose value was seen
/// before, paired with that value's first occurrence.
pub fn check_uniqueness(emissions: &[Emission]) -> UniquenessReport {
    let mut order: Vec<usize> = (0..emissions.len()).collect();
    order.sort_by_key(|&i| (emissions[i].tick, emissions[i].guest, i));
    let mut seen: HashMap<u128, usize> = HashMap::with_capacity(emissions.len());
    let mut duplicates = 0;
    let mut first_collision = None;
    for i in order {
        let e = emissions[i];
        match seen.get(&e.value) {
            Some(&j) => {
                duplicates += 1;
                first_collision.get_or_insert(Collision {
                    first: emissions[j],
                    second: e,
                });
            }
            None => {
                seen.insert(e.value, i);
            }
        }
    }
    UniquenessReport {
        total: emissions.len(),
        duplicates,
        first_collision,
    }
}

/// Treats `logs[g]` as guest `g`'s values, one per tick.
pub fn check_value_logs(logs: &[&[u128]]) -> UniquenessReport {
    let emissions: Vec<Emission> = logs
        .iter()
        .enumerate()
        .flat_map(|(g, values)| {
            values.iter().enumerate().map(move |(t, v)| Emission {
                tick: t as u64,
                guest: g as u32,
                value: *v,
            })
        })
        .collect();
    check_uniqueness(&emissions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_logs_are_unique() {
        let r = check_value_logs(&[&[1, 2, 3], &[4, 5, 6]]);
        assert_eq!(r.duplicates, 0);
        assert_eq!(r.verdict(), Verdict::Unique);
        assert!(r.first_collision.is_none());
    }

    #[test]
    fn shared_value_is_reported() {
        let r = check_value_logs(&[&[1, 2], &[2, 3]]);
        assert_eq!(r.duplicates, 1);
        let c = r.first_collision.unwrap();
        assert_eq!(c.second.value, 2);
        // guest 1 emits 2 at tick 0, guest 0 at tick 1
        assert_eq!((c.first.guest, c.second.guest), (1, 0));
    }

    #[test]
    fn earliest_tick_wins_then_guest() {
        let e = |tick, guest, value| Emission { tick, guest, value };
        let r = check_uniqueness(&[e(9, 0, 7), e(9, 1, 7), e(3, 2, 5), e(4, 1, 5)]);
        assert_eq!(r.duplicates, 2);
        let c = r.first_collision.unwrap();
        assert_eq!((c.first, c.second), (e(3, 2, 5), e(4, 1, 5)));
    }

    #[test]
    fn triple_counts_two() {
        assert_eq!(check_value_logs(&[&[8, 8, 8]]).duplicates, 2);
    }
}
