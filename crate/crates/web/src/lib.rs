// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Browser bindings for the simulator. Every export returns a JSON string;
//! the plain functions underneath are what the tests call.

use serde_json::{json, Value};
use snapsafe::harness::matrix::MECHANISMS;
use snapsafe::harness::{feature_matrix, run_scenario, Scenario, ScenarioRun, PACKAGED};
use snapsafe::vm_sim::{AckBehaviour, EventKind, Program, SimEvent, Step, Target};
use wasm_bindgen::prelude::*;

/// Caps that keep one click under a few seconds in the browser.
pub const MAX_EMISSIONS: u64 = 2_000_000;
pub const MAX_GUESTS: u64 = 20_000;
/// Log lines shipped back to the page.
const LOG_HEAD: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fanout {
    pub fanout: u32,
    pub depth: u32,
    pub nonces: u32,
    pub seed: u64,
    pub fence: bool,
    pub bump: bool,
}

impl Fanout {
    pub fn scenario(&self) -> Result<Scenario, String> {
        if self.fanout == 0 || self.depth == 0 || self.nonces == 0 {
            return Err("fan-out, depth and nonces must be positive".into());
        }
        let leaves = (self.fanout as u64)
            .checked_pow(self.depth)
            .filter(|&n| n <= MAX_GUESTS)
            .ok_or(format!("more than {MAX_GUESTS} leaves"))?;
        if leaves * self.nonces as u64 > MAX_EMISSIONS {
            return Err(format!("more than {MAX_EMISSIONS} nonces in total"));
        }
        let mut s = Scenario::new(
            format!("fan-out {}^{} x {}", self.fanout, self.depth, self.nonces),
            self.seed,
        );
        s.config.policy.set(EventKind::CloneRestore, self.bump);
        s.config.watchers.insert(0, vec![AckBehaviour::After(1)]);
        s.config.handlers.insert(
            0,
            Program {
                steps: vec![Step::Nonce(self.nonces)],
            },
        );
        for round in 1..=self.depth as u64 {
            s.events
                .push(SimEvent::new(round * 10, EventKind::Snapshot, Target::Running));
            s.events.push(
                SimEvent::new(round * 10 + 1, EventKind::CloneRestore, Target::Snapshotted)
                    .with_count(self.fanout),
            );
        }
        let kind = if self.fence {
            EventKind::Fence
        } else {
            EventKind::Invoke
        };
        s.events
            .push(SimEvent::new(self.depth as u64 * 10 + 10, kind, Target::Running));
        Ok(s)
    }
}

fn report_json(run: &ScenarioRun) -> Value {
    let r = &run.report;
    let collision = r.first_collision.map(|c| {
        json!({
            "value": format!("{:032x}", c.first.value),
            "first": { "guest": c.first.guest, "tick": c.first.tick },
            "second": { "guest": c.second.guest, "tick": c.second.tick },
        })
    });
    json!({
        "emissions": r.total,
        "distinct": r.distinct(),
        "duplicates": r.duplicates,
        "verdict": r.verdict().to_string(),
        "first_collision": collision,
    })
}

fn run_json(run: &ScenarioRun) -> Value {
    let text = run.log.render();
    let head: Vec<&str> = text.lines().take(LOG_HEAD).collect();
    let mut per_depth: Vec<usize> = Vec::new();
    for g in run.tree.nodes() {
        let d = run.tree.depth(g);
        if per_depth.len() <= d {
            per_depth.resize(d + 1, 0);
        }
        per_depth[d] += 1;
    }
    json!({
        "name": run.name,
        "seed": run.seed,
        "expect": run.expect.to_string(),
        "as_expected": run.matches_expectation(),
        "guests": run.tree.len(),
        "guests_per_depth": per_depth,
        "errors": run.errors(),
        "report": report_json(run),
        "log_lines": run.log.len(),
        "log_head": head,
    })
}

pub fn fanout_json(params: Fanout) -> Value {
    match params.scenario() {
        Ok(s) => run_json(&run_scenario(&s, None)),
        Err(e) => json!({ "error": e }),
    }
}

pub fn scenario_json(text: &str, seed: Option<u64>) -> Value {
    match Scenario::parse(text) {
        Ok(s) => run_json(&run_scenario(&s, seed)),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn matrix_json() -> Value {
    let m = feature_matrix();
    let rows: Vec<Value> = m
        .rows
        .iter()
        .map(|r| {
            json!({
                "feature": r.feature,
                "cells": r.cells.iter().map(|c| json!({
                    "value": c.value,
                    "probed": c.probed,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "mechanisms": MECHANISMS, "rows": rows })
}

pub fn packaged_json() -> Value {
    // The full fan-out is left to the explorer, which builds it with caps.
    let list: Vec<Value> = PACKAGED
        .iter()
        .filter(|(name, _)| *name != "fanout_10x10x10")
        .map(|(name, text)| json!({ "name": name, "text": text }))
        .collect();
    Value::Array(list)
}

#[wasm_bindgen]
pub fn fanout(fanout: u32, depth: u32, nonces: u32, seed: u32, fence: bool, bump: bool) -> String {
    fanout_json(Fanout {
        fanout,
        depth,
        nonces,
        seed: seed as u64,
        fence,
        bump,
    })
    .to_string()
}

/// `seed` overrides the scenario's own seed unless it is empty.
#[wasm_bindgen]
pub fn run_scenario_text(text: &str, seed: &str) -> String {
    let seed = seed.trim();
    if seed.is_empty() {
        return scenario_json(text, None).to_string();
    }
    match seed.parse() {
        Ok(s) => scenario_json(text, Some(s)).to_string(),
        Err(_) => json!({ "error": format!("bad seed `{seed}`") }).to_string(),
    }
}

#[wasm_bindgen]
pub fn matrix() -> String {
    matrix_json().to_string()
}

#[wasm_bindgen]
pub fn packaged_scenarios() -> String {
    packaged_json().to_string()
}
