// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Invoke-handler programs.
//!
//! A program is a `;`-separated list of steps:
//!
//! | step      | effect                                                        |
//! |-----------|---------------------------------------------------------------|
//! | `nonce k` | emit `k` counter nonces                                       |
//! | `bytes k` | emit `k` 128-bit values straight from the DRBG                |
//! | `draw k`  | take `k` counter nonces and hold them without emitting        |
//! | `use`     | emit every held value and clear the hold                      |
//! | `sleep t` | yield for `t` ticks; the rest runs as a continuation          |
//! | `cache k` | fill a cross-invoke cache with `k` nonces once, emit it always |

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Nonce(u32),
    Bytes(u32),
    Draw(u32),
    Use,
    Sleep(u64),
    Cache(u32),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("bad handler step `{0}`")]
pub struct ProgramError(pub String);

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Nonce(k) => write!(f, "nonce {k}"),
            Step::Bytes(k) => write!(f, "bytes {k}"),
            Step::Draw(k) => write!(f, "draw {k}"),
            Step::Use => f.write_str("use"),
            Step::Sleep(t) => write!(f, "sleep {t}"),
            Step::Cache(k) => write!(f, "cache {k}"),
        }
    }
}

impl FromStr for Step {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Step, ProgramError> {
        let bad = || ProgramError(s.trim().to_string());
        let mut words = s.split_whitespace();
        let op = words.next().ok_or_else(bad)?;
        let arg = words.next();
        if words.next().is_some() {
            return Err(bad());
        }
        let num = |a: Option<&str>| a.and_then(|a| a.parse::<u64>().ok()).ok_or_else(bad);
        let count = |a: Option<&str>| {
            num(a).and_then(|n| u32::try_from(n).map_err(|_| bad()))
        };
        match (op, arg) {
            ("nonce", a) => Ok(Step::Nonce(count(a)?)),
            ("bytes", a) => Ok(Step::Bytes(count(a)?)),
            ("draw", a) => Ok(Step::Draw(count(a)?)),
            ("use", None) => Ok(Step::Use),
            ("sleep", a) => Ok(Step::Sleep(num(a)?)),
            ("cache", a) => Ok(Step::Cache(count(a)?)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Program {
    pub steps: Vec<Step>,
}

impl Program {
    pub fn new(steps: Vec<Step>) -> Program {
        Program { steps }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, step) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{step}")?;
        }
        Ok(())
    }
}

impl FromStr for Program {
    type Err = ProgramError;

    fn from_str(s: &str) -> Result<Program, ProgramError> {
        let steps = s
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Program { steps })
    }
}
