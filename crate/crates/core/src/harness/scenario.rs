// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Scenario files.
//!
//! ```text
//! snapsafe-scenario v1
//! name toctou
//! seed 7
//! expect duplicates
//! policy Resume bump
//! fence-timeout 50
//! watcher 0 ack-after 2
//! handler 0 draw 1; sleep 10; use
//! event 1 Invoke 0
//! event 5 Snapshot 0
//! event 6 CloneRestore 0 count=2
//! ```
//!
//! The header line is mandatory and comes first. `#` starts a comment
//! line. Event targets are a guest id, `running` or `snapshotted`; event
//! arguments are `count=N` (CloneRestore) and `pid=N` (Fork, Invoke,
//! Fence). [`Scenario`]'s `Display` is the canonical form and parses back
//! to an equal value.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::vm_sim::{
    AckBehaviour, EventKind, PolicyTable, Program, SimConfig, SimEvent, Target, DEFAULT_FENCE_TIMEOUT,
};

pub const HEADER: &str = "snapsafe-scenario v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Expectation {
    Unique,
    Duplicates,
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expectation::Unique => "unique",
            Expectation::Duplicates => "duplicates",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub expect: Expectation,
    /// Seed, policy, fence timeout, watchers and handlers.
    pub config: SimConfig,
    pub events: Vec<SimEvent>,
}

impl Scenario {
    pub fn new(name: impl Into<String>, seed: u64) -> Scenario {
        Scenario {
            name: name.into(),
            expect: Expectation::Unique,
            config: SimConfig::new(seed),
            events: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        text.parse()
    }
}

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        line,
        message: message.into(),
    }
}

fn num<T: FromStr>(line: usize, s: Option<&str>, what: &str) -> Result<T, ScenarioError> {
    let s = s.ok_or_else(|| err(line, format!("missing {what}")))?;
    s.parse()
        .map_err(|_| err(line, format!("bad {what} `{s}`")))
}

fn no_more<'a>(line: usize, mut rest: impl Iterator<Item = &'a str>) -> Result<(), ScenarioError> {
    match rest.next() {
        Some(extra) => Err(err(line, format!("unexpected `{extra}`"))),
        None => Ok(()),
    }
}

fn parse_event(line: usize, rest: &str) -> Result<SimEvent, ScenarioError> {
    let mut words = rest.split_whitespace();
    let tick = num(line, words.next(), "tick")?;
    let kind: EventKind = words
        .next()
        .ok_or_else(|| err(line, "missing event kind"))?
        .parse()
        .map_err(|e: crate::vm_sim::UnknownEventKind| err(line, e.to_string()))?;
    let target: Target = words
        .next()
        .ok_or_else(|| err(line, "missing target"))?
        .parse()
        .map_err(|e: String| err(line, e))?;
    let mut ev = SimEvent::new(tick, kind, target);
    for arg in words {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| err(line, format!("bad argument `{arg}`")))?;
        match (k, kind) {
            ("count", EventKind::CloneRestore) if ev.count.is_none() => {
                let n: u32 = num(line, Some(v), "count")?;
                if n == 0 {
                    return Err(err(line, "count must be at least 1"));
                }
                ev.count = Some(n);
            }
            ("pid", EventKind::Fork | EventKind::Invoke | EventKind::Fence) if ev.pid.is_none() => {
                ev.pid = Some(num(line, Some(v), "pid")?);
            }
            _ => return Err(err(line, format!("argument `{k}` not valid for {kind}"))),
        }
    }
    Ok(ev)
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Scenario, ScenarioError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((n, other)) => return Err(err(n, format!("expected `{HEADER}`, found `{other}`"))),
            None => return Err(err(1, format!("expected `{HEADER}`"))),
        }

        let mut name = None;
        let mut seed = None;
        let mut expect = None;
        let mut timeout = None;
        let mut policy = PolicyTable::default();
        let mut watchers: BTreeMap<u32, Vec<AckBehaviour>> = BTreeMap::new();
        let mut handlers = BTreeMap::new();
        let mut events = Vec::new();

        for (n, line) in lines {
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            let once = |seen: bool| {
                if seen {
                    Err(err(n, format!("duplicate `{keyword}`")))
                } else {
                    Ok(())
                }
            };
            match keyword {
                "name" => {
                    once(name.is_some())?;
                    if rest.is_empty() {
                        return Err(err(n, "empty name"));
                    }
                    name = Some(rest.split_whitespace().collect::<Vec<_>>().join(" "));
                }
                "seed" => {
                    once(seed.is_some())?;
                    let mut w = rest.split_whitespace();
                    seed = Some(num::<u64>(n, w.next(), "seed")?);
                    no_more(n, w)?;
                }
                "expect" => {
                    once(expect.is_some())?;
                    expect = Some(match rest {
                        "unique" => Expectation::Unique,
                        "duplicates" => Expectation::Duplicates,
                        _ => return Err(err(n, "expect takes `unique` or `duplicates`")),
                    });
                }
                "fence-timeout" => {
                    once(timeout.is_some())?;
                    let mut w = rest.split_whitespace();
                    timeout = Some(num(n, w.next(), "fence timeout")?);
                    no_more(n, w)?;
                }
                "policy" => {
                    let mut w = rest.split_whitespace();
                    let kind: EventKind = w
                        .next()
                        .ok_or_else(|| err(n, "missing event kind"))?
                        .parse()
                        .map_err(|e: crate::vm_sim::UnknownEventKind| err(n, e.to_string()))?;
                    let bump = match w.next() {
                        Some("bump") => true,
                        Some("nobump") => false,
                        _ => return Err(err(n, "policy takes `bump` or `nobump`")),
                    };
                    no_more(n, w)?;
                    policy.set(kind, bump);
                }
                "watcher" => {
                    let mut w = rest.split_whitespace();
                    let guest = num(n, w.next(), "guest id")?;
                    let b = match w.next() {
                        Some("ack-after") => AckBehaviour::After(num(n, w.next(), "delay")?),
                        Some("never") => AckBehaviour::Never,
                        _ => return Err(err(n, "watcher takes `ack-after <ticks>` or `never`")),
                    };
                    no_more(n, w)?;
                    watchers.entry(guest).or_default().push(b);
                }
                "handler" => {
                    let (guest, program) =
                        rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                    let guest: u32 = num(n, Some(guest), "guest id")?;
                    if handlers.contains_key(&guest) {
                        return Err(err(n, format!("duplicate handler for guest {guest}")));
                    }
                    let program: Program = program.parse().map_err(|e| err(n, format!("{e}")))?;
                    handlers.insert(guest, program);
                }
                "event" => events.push(parse_event(n, rest)?),
                other => return Err(err(n, format!("unknown directive `{other}`"))),
            }
        }

        let mut config = SimConfig::new(seed.unwrap_or(0));
        config.policy = policy;
        config.fence_timeout = timeout.unwrap_or(DEFAULT_FENCE_TIMEOUT);
        config.watchers = watchers;
        config.handlers = handlers;
        Ok(Scenario {
            name: name.unwrap_or_else(|| "unnamed".to_string()),
            expect: expect.unwrap_or(Expectation::Unique),
            config,
            events,
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{HEADER}")?;
        writeln!(f, "name {}", self.name)?;
        writeln!(f, "seed {}", self.config.seed)?;
        writeln!(f, "expect {}", self.expect)?;
        let defaults = PolicyTable::default();
        for (kind, bump) in self.config.policy.rows() {
            if bump != defaults.bumps(kind) {
                writeln!(f, "policy {kind} {}", if bump { "bump" } else { "nobump" })?;
            }
        }
        if self.config.fence_timeout != DEFAULT_FENCE_TIMEOUT {
            writeln!(f, "fence-timeout {}", self.config.fence_timeout)?;
        }
        for (guest, list) in &self.config.watchers {
            for b in list {
                writeln!(f, "watcher {guest} {b}")?;
            }
        }
        for (guest, program) in &self.config.handlers {
            writeln!(f, "handler {guest} {program}")?;
        }
        for ev in &self.events {
            write!(f, "event {} {} {}", ev.tick, ev.kind, ev.target)?;
            if let Some(c) = ev.count {
                write!(f, " count={c}")?;
            }
            if let Some(p) = ev.pid {
                write!(f, " pid={p}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
