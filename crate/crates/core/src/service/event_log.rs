//! Append-only event log, one `EVT|<seq>|<datetime>|<kind>|<payload>` line per event.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::ServiceError;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ConfigLoaded,
    FacilitiesLoaded,
    InboundAccepted,
    InboundRejected,
    OutboundQueued,
    ReviewRecorded,
    AdviceComposed,
    OrderOpened,
    OrderClosed,
    SlotReleased,
    ClockTick,
    OutboxFetched,
}

impl EventKind {
    const ALL: [EventKind; 12] = [
        EventKind::ConfigLoaded,
        EventKind::FacilitiesLoaded,
        EventKind::InboundAccepted,
        EventKind::InboundRejected,
        EventKind::OutboundQueued,
        EventKind::ReviewRecorded,
        EventKind::AdviceComposed,
        EventKind::OrderOpened,
        EventKind::OrderClosed,
        EventKind::SlotReleased,
        EventKind::ClockTick,
        EventKind::OutboxFetched,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ConfigLoaded => "ConfigLoaded",
            EventKind::FacilitiesLoaded => "FacilitiesLoaded",
            EventKind::InboundAccepted => "InboundAccepted",
            EventKind::InboundRejected => "InboundRejected",
            EventKind::OutboundQueued => "OutboundQueued",
            EventKind::ReviewRecorded => "ReviewRecorded",
            EventKind::AdviceComposed => "AdviceComposed",
            EventKind::OrderOpened => "OrderOpened",
            EventKind::OrderClosed => "OrderClosed",
            EventKind::SlotReleased => "SlotReleased",
            EventKind::ClockTick => "ClockTick",
            EventKind::OutboxFetched => "OutboxFetched",
        }
    }

    /// Derived events are consequences of an input event and are regenerated,
    /// not re-applied, on replay.
    pub fn is_derived(self) -> bool {
        matches!(self, EventKind::OutboundQueued | EventKind::OrderOpened)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: NaiveDateTime,
    pub kind: EventKind,
    /// Single-line payload: a wire line, hex bytes, or compact JSON.
    pub payload: String,
}

impl Event {
    pub fn to_line(&self) -> String {
        format!("EVT|{}|{}|{}|{}", self.seq, self.at.format(TIMESTAMP_FORMAT), self.kind, self.payload)
    }

    /// Parses one log line; `line_no` is used in the error when the seq
    /// itself is unreadable.
    pub fn from_line(line: &str, line_no: u64) -> Result<Self, ServiceError> {
        let corrupt = |seq: u64, reason: &str| ServiceError::CorruptLog { seq, reason: reason.to_owned() };
        let mut parts = line.splitn(5, '|');
        if parts.next() != Some("EVT") {
            return Err(corrupt(line_no, "line does not start with EVT"));
        }
        let seq: u64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(line_no, "unreadable seq"))?;
        let at = parts
            .next()
            .and_then(|s| NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).ok())
            .ok_or_else(|| corrupt(seq, "unreadable timestamp"))?;
        let kind = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(seq, "unknown event kind"))?;
        let payload = parts.next().ok_or_else(|| corrupt(seq, "missing payload"))?.to_owned();
        Ok(Self { seq, at, kind, payload })
    }
}

/// Parses a whole log, checking that seqs start at 1 and have no gaps.
pub fn parse_log(text: &str) -> Result<Vec<Event>, ServiceError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let expected = events.len() as u64 + 1;
        let event = Event::from_line(line, expected.max(i as u64 + 1))?;
        if event.seq != expected {
            return Err(ServiceError::CorruptLog {
                seq: expected,
                reason: format!("expected seq {expected}, found {}", event.seq),
            });
        }
        events.push(event);
    }
    Ok(events)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<Event>, ServiceError> {
    parse_log(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Default)]
pub struct EventLog {
    events: Vec<Event>,
    /// Seq of the last event before `events`, nonzero after a snapshot resume.
    base: u64,
    sink: Option<BufWriter<File>>,
}

impl EventLog {
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(self.base, |e| e.seq)
    }

    /// Writes every event so far to `path` and appends later events there too.
    pub fn persist_to(&mut self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        let mut sink = BufWriter::new(file);
        for e in &self.events {
            writeln!(sink, "{}", e.to_line())?;
        }
        sink.flush()?;
        self.sink = Some(sink);
        Ok(())
    }

    pub fn append(&mut self, at: NaiveDateTime, kind: EventKind, payload: String) -> &Event {
        debug_assert!(!payload.contains('\n'));
        let event = Event { seq: self.last_seq() + 1, at, kind, payload };
        if let Some(sink) = &mut self.sink {
            // the in-memory log stays authoritative if the disk write fails
            if let Err(e) = writeln!(sink, "{}", event.to_line()).and_then(|_| sink.flush()) {
                eprintln!("event log write failed: {e}");
            }
        }
        self.events.push(event);
        self.events.last().expect("just pushed")
    }

    /// Continues numbering after `seq`, used when resuming from a snapshot.
    pub(crate) fn resume_after(&mut self, seq: u64) {
        self.events.clear();
        self.base = seq;
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2012, 11, 1).unwrap().and_hms_opt(8, 30, 0).unwrap()
    }

    #[test]
    fn line_format() {
        let e = Event { seq: 7, at: at(), kind: EventKind::InboundAccepted, payload: "CNF|07504432147|2012-11-20".into() };
        let line = e.to_line();
        assert_eq!(line, "EVT|7|2012-11-01T08:30:00|InboundAccepted|CNF|07504432147|2012-11-20");
        assert_eq!(Event::from_line(&line, 7).unwrap(), e);
    }

    #[test]
    fn gap_is_corrupt() {
        let text = "EVT|1|2012-11-01T08:30:00|ClockTick|\nEVT|3|2012-11-01T08:30:00|ClockTick|\n";
        match parse_log(text) {
            Err(ServiceError::CorruptLog { seq, .. }) => assert_eq!(seq, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn garbage_is_corrupt() {
        assert!(matches!(parse_log("hello\n"), Err(ServiceError::CorruptLog { seq: 1, .. })));
        assert!(matches!(
            parse_log("EVT|1|yesterday|ClockTick|\n"),
            Err(ServiceError::CorruptLog { seq: 1, .. })
        ));
        assert!(matches!(
            parse_log("EVT|1|2012-11-01T08:30:00|Nope|\n"),
            Err(ServiceError::CorruptLog { seq: 1, .. })
        ));
    }

    #[test]
    fn empty_log() {
        assert!(parse_log("").unwrap().is_empty());
    }

    #[test]
    fn persists_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.log");
        let mut log = EventLog::default();
        log.append(at(), EventKind::ClockTick, String::new());
        log.persist_to(&path).unwrap();
        log.append(at(), EventKind::OutboxFetched, "1".into());
        let back = read_log(&path).unwrap();
        assert_eq!(back, log.events());
    }
}
