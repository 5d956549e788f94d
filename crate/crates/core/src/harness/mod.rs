// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Scenario runner, uniqueness checker, benchmarks and feature matrix.

pub mod bench;
pub mod matrix;
pub mod scenario;
pub mod uniqueness;

use std::fmt;

use crate::vm_sim::{run_schedule, CloneTree, EventLog};

pub use bench::{bench, BenchConfig, BenchError, BenchReport, EntropyChoice, Workload};
pub use matrix::{feature_matrix, FeatureMatrix};
pub use scenario::{Expectation, Scenario, ScenarioError};
pub use uniqueness::{check_uniqueness, check_value_logs, Collision, UniquenessReport, Verdict};

/// Scenarios shipped with the crate, by file stem.
pub const PACKAGED: &[(&str, &str)] = &[
    ("fanout_10x10x10", include_str!("../../scenarios/fanout_10x10x10.scn")),
    ("fenced_clones_100", include_str!("../../scenarios/fenced_clones_100.scn")),
    ("toctou", include_str!("../../scenarios/toctou.scn")),
    ("cache", include_str!("../../scenarios/cache.scn")),
    ("fence_timeout", include_str!("../../scenarios/fence_timeout.scn")),
    ("lifecycle", include_str!("../../scenarios/lifecycle.scn")),
];

pub fn packaged(name: &str) -> Option<&'static str> {
    PACKAGED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub name: String,
    pub seed: u64,
    pub expect: Expectation,
    pub log: EventLog,
    pub tree: CloneTree,
    pub report: UniquenessReport,
}

impl ScenarioRun {
    pub fn matches_expectation(&self) -> bool {
        matches!(
            (self.expect, self.report.verdict()),
            (Expectation::Unique, Verdict::Unique) | (Expectation::Duplicates, Verdict::Duplicates)
        )
    }

    /// Log records flagged as errors.
    pub fn errors(&self) -> usize {
        self.log
            .records
            .iter()
            .filter(|r| r.event == crate::vm_sim::LogEvent::Error)
            .count()
    }
}

impl fmt::Display for ScenarioRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario: {}", self.name)?;
        writeln!(f, "seed: {}", self.seed)?;
        writeln!(f, "guests: {}", self.tree.len())?;
        writeln!(f, "log records: {}", self.log.len())?;
        writeln!(f, "errors logged: {}", self.errors())?;
        write!(f, "{}", self.report)?;
        writeln!(f, "expected: {}", self.expect)?;
        writeln!(
            f,
            "outcome: {}",
            if self.matches_expectation() {
                "as expected"
            } else {
                "MISMATCH"
            }
        )
    }
}

/// Runs a scenario, optionally with a different seed.
pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> ScenarioRun {
    let mut config = scenario.config.clone();
    if let Some(s) = seed {
        config.seed = s;
    }
    let seed = config.seed;
    let (log, tree) = run_schedule(config, scenario.events.iter().copied());
    let emissions: Vec<_> = tree
        .nonce_logs()
        .flat_map(|(_, e)| e.iter().copied())
        .collect();
    let report = check_uniqueness(&emissions);
    ScenarioRun {
        name: scenario.name.clone(),
        seed,
        expect: scenario.expect,
        log,
        tree,
        report,
    }
}
