// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! Line-oriented event log.
//!
//! Every record renders as
//! `t=<tick> guest=<id> event=<kind> gen=<n> detail=<...>` with this field
//! order. Besides the scheduled event kinds the simulator writes `Emit`
//! (one value handed out by a handler), `Bump` (generation change), `Ack`
//! (watcher acknowledgement), `Wake` (continuation resumed) and `Error`.

use std::fmt;
use std::io;
use std::str::FromStr;

use thiserror::Error;

use super::tree::Emission;
use super::{EventKind, GuestId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LogEvent {
    Sim(EventKind),
    Emit,
    Bump,
    Ack,
    Wake,
    Error,
}

impl LogEvent {
    pub fn name(self) -> &'static str {
        match self {
            LogEvent::Sim(k) => k.name(),
            LogEvent::Emit => "Emit",
            LogEvent::Bump => "Bump",
            LogEvent::Ack => "Ack",
            LogEvent::Wake => "Wake",
            LogEvent::Error => "Error",
        }
    }
}

impl FromStr for LogEvent {
    type Err = ();

    fn from_str(s: &str) -> Result<LogEvent, ()> {
        Ok(match s {
            "Emit" => LogEvent::Emit,
            "Bump" => LogEvent::Bump,
            "Ack" => LogEvent::Ack,
            "Wake" => LogEvent::Wake,
            "Error" => LogEvent::Error,
            other => LogEvent::Sim(other.parse().map_err(|_| ())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Detail {
    None,
    /// Emitted 128-bit value, rendered as `value=<32 hex digits>`.
    Value(u128),
    Text(String),
}

impl fmt::Display for Detail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detail::None => f.write_str("-"),
            Detail::Value(v) => write!(f, "value={v:032x}"),
            Detail::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub tick: Tick,
    pub guest: GuestId,
    pub event: LogEvent,
    pub gen: u32,
    pub detail: Detail,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} guest={} event={} gen={} detail={}",
            self.tick,
            self.guest,
            self.event.name(),
            self.gen,
            self.detail
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("log line {line}: {reason}")]
pub struct LogParseError {
    pub line: usize,
    pub reason: String,
}

fn field<'a>(part: Option<&'a str>, key: &str) -> Result<&'a str, String> {
    part.and_then(|p| p.strip_prefix(key))
        .and_then(|p| p.strip_prefix('='))
        .ok_or_else(|| format!("expected `{key}=`"))
}

impl FromStr for LogRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<LogRecord, String> {
        let mut parts = line.splitn(5, ' ');
        let tick = field(parts.next(), "t")?
            .parse()
            .map_err(|_| "bad tick".to_string())?;
        let guest = field(parts.next(), "guest")?
            .parse()
            .map_err(|_| "bad guest id".to_string())?;
        let name = field(parts.next(), "event")?;
        let event = name
            .parse()
            .map_err(|_| format!("unknown event `{name}`"))?;
        let gen = field(parts.next(), "gen")?
            .parse()
            .map_err(|_| "bad generation".to_string())?;
        let detail = field(parts.next(), "detail")?;
        let detail = match (event, detail) {
            (_, "-") => Detail::None,
            (LogEvent::Emit, d) => {
                let hex = d
                    .strip_prefix("value=")
                    .filter(|h| h.len() == 32)
                    .ok_or("emit detail must be value=<32 hex digits>")?;
                Detail::Value(u128::from_str_radix(hex, 16).map_err(|_| "bad emit value")?)
            }
            (_, d) => Detail::Text(d.to_string()),
        };
        Ok(LogRecord {
            tick,
            guest,
            event,
            gen,
            detail,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub records: Vec<LogRecord>,
}

impl EventLog {
    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            use fmt::Write;
            let _ = writeln!(out, "{r}");
        }
        out
    }

    pub fn write_to<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            writeln!(w, "{r}")?;
        }
        w.flush()
    }

    /// Parses rendered log text. Blank lines and lines starting with `#`
    /// are skipped.
    pub fn parse(text: &str) -> Result<EventLog, LogParseError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let record = line.parse().map_err(|reason| LogParseError {
                line: i + 1,
                reason,
            })?;
            records.push(record);
        }
        Ok(EventLog { records })
    }

    /// Every `Emit` record in log order.
    pub fn emissions(&self) -> Vec<Emission> {
        self.records
            .iter()
            .filter_map(|r| match (r.event, &r.detail) {
                (LogEvent::Emit, Detail::Value(v)) => Some(Emission {
                    tick: r.tick,
                    guest: r.guest,
                    value: *v,
                }),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let recs = [
            LogRecord {
                tick: 3,
                guest: 7,
                event: LogEvent::Emit,
                gen: 2,
                detail: Detail::Value(0xabc),
            },
            LogRecord {
                tick: 0,
                guest: 0,
                event: LogEvent::Sim(EventKind::CloneRestore),
                gen: 0,
                detail: Detail::Text("parent=0".into()),
            },
            LogRecord {
                tick: 9,
                guest: 1,
                event: LogEvent::Ack,
                gen: 1,
                detail: Detail::None,
            },
        ];
        let log = EventLog {
            records: recs.to_vec(),
        };
        let text = log.render();
        assert!(text.starts_with("t=3 guest=7 event=Emit gen=2 detail=value=00000000000000000000000000000abc\n"));
        assert_eq!(EventLog::parse(&text).unwrap(), log);
        assert_eq!(log.emissions().len(), 1);
    }

    #[test]
    fn rejects_malformed() {
        assert!(EventLog::parse("t=1 guest=0 event=Nope gen=0 detail=-").is_err());
        assert!(EventLog::parse("guest=0 t=1 event=Emit gen=0 detail=-").is_err());
        let err = EventLog::parse("\nt=1 guest=0 event=Emit gen=0 detail=value=12").unwrap_err();
        assert_eq!(err.line, 2);
    }
}
