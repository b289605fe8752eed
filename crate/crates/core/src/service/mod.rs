//! The gateway service: routes inbound lines to the registry, scheduler and
//! dispatcher, queues replies, and records everything in the event log.
//!
//! The log is command-sourced. Input events (inbound lines, MD entries,
//! ticks, outbox fetches, ...) are re-executed on restore; derived events
//! (`OutboundQueued`, `OrderOpened`) are regenerated and must match the log
//! byte for byte, otherwise the log is reported corrupt at the first
//! diverging seq.

pub mod api;
pub mod clock;
pub mod config;
pub mod event_log;
pub mod outbox;

use std::sync::Arc;

use chrono::{NaiveDateTime, Timelike};
use parking_lot::{Mutex, MutexGuard};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{DispatchError, Dispatcher};
use crate::messaging::{self, encode_outbound, ErrCode, InboundMessage, OutboundMessage};
use crate::registry::{self, Facility, PhoneId, Registry, RegistryError};
use crate::scheduler::{AdviceTarget, Advisor, MdFields, ReviewRecord, Scheduler, SchedulerError};

pub use config::{ClockMode, Config, ConfigError, Settings};
pub use event_log::{Event, EventKind, EventLog};
pub use outbox::{Delivery, DeliveryState, Outbox};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("corrupt event log at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("outbox drain size must be at least 1")]
    ZeroDrain,
    #[error("bad snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A rejected inbound line kept for operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub at: NaiveDateTime,
    pub raw_hex: String,
    pub reason: String,
    pub reply: String,
}

/// Everything observable about the service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub settings: Settings,
    pub registry: Registry,
    pub scheduler: Scheduler,
    pub dispatcher: Dispatcher,
    pub outbox: Outbox,
    pub dead_letters: Vec<DeadLetter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub last_seq: u64,
    pub state: State,
}

#[derive(Serialize, Deserialize)]
struct ReviewPayload {
    phone: PhoneId,
    md: MdFields,
}

#[derive(Serialize, Deserialize)]
struct AdvicePayload {
    who: Advisor,
    target: AdviceTarget,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct ClosePayload {
    order_id: u64,
    outcome: String,
}

#[derive(Serialize, Deserialize)]
struct ReleasePayload {
    facility_id: u32,
    phone: PhoneId,
}

fn whole_seconds(t: NaiveDateTime) -> NaiveDateTime {
    t.with_nanosecond(0).expect("zero nanoseconds is valid")
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("domain types serialize")
}

fn err_code(e: &ServiceError) -> ErrCode {
    match e {
        ServiceError::Registry(RegistryError::DuplicatePhone(_)) => ErrCode::Dup,
        ServiceError::Registry(RegistryError::BadAge(_)) => ErrCode::BadAge,
        ServiceError::Registry(RegistryError::NoCapacityAnywhere | RegistryError::NoFacilities) => ErrCode::NoCap,
        ServiceError::Scheduler(SchedulerError::NoExcuse(_)) => ErrCode::NoExcuse,
        ServiceError::Scheduler(SchedulerError::DateMismatch { .. }) => ErrCode::BadDate,
        ServiceError::Dispatch(DispatchError::NoVehicleAvailable) => ErrCode::NoVeh,
        _ => ErrCode::Unreg,
    }
}

#[derive(Debug, Default)]
pub struct Service {
    state: State,
    log: EventLog,
}

impl Service {
    /// No configuration, no facilities, no events.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(settings: Settings, facilities: Vec<Facility>, now: NaiveDateTime) -> Result<Self, ServiceError> {
        let mut svc = Self::empty();
        let now = whole_seconds(now);
        svc.load_settings(settings, now);
        svc.load_facilities(facilities, now)?;
        Ok(svc)
    }

    /// Builds a service from a config file's settings and facility file,
    /// attaching the event log file when one is configured.
    pub fn from_config(cfg: &Config, now: NaiveDateTime) -> Result<Self, ServiceError> {
        let facilities = match &cfg.facilities_path {
            Some(p) => registry::load_facilities_file(p)?,
            None => Vec::new(),
        };
        let mut svc = Self::new(cfg.settings()?, facilities, now)?;
        if let Some(path) = &cfg.event_log_path {
            svc.log.persist_to(path)?;
        }
        Ok(svc)
    }

    fn load_settings(&mut self, settings: Settings, now: NaiveDateTime) {
        self.log.append(now, EventKind::ConfigLoaded, json(&settings));
        self.state.scheduler = Scheduler::new(settings.templates.clone());
        self.state.dispatcher = Dispatcher::new(settings.dispatch.clone());
        self.state.settings = settings;
    }

    fn load_facilities(&mut self, facilities: Vec<Facility>, now: NaiveDateTime) -> Result<(), ServiceError> {
        let registry = Registry::new(facilities, self.state.settings.id_code_seed)?;
        self.log.append(now, EventKind::FacilitiesLoaded, json(&registry.facilities()));
        self.state.registry = registry;
        Ok(())
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn registry(&self) -> &Registry {
        &self.state.registry
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.state.scheduler
    }

    pub fn dispatcher(&self) -> &Dispatcher {
        &self.state.dispatcher
    }

    pub fn outbox(&self) -> &Outbox {
        &self.state.outbox
    }

    pub fn dead_letters(&self) -> &[DeadLetter] {
        &self.state.dead_letters
    }

    pub fn events(&self) -> &[Event] {
        self.log.events()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn persist_log_to(&mut self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        self.log.persist_to(path)
    }

    fn queue(&mut self, msg: OutboundMessage, now: NaiveDateTime) {
        let line = encode_outbound(&msg).expect("outbound messages are validated before queueing");
        self.log.append(now, EventKind::OutboundQueued, line.clone());
        self.state.outbox.push(line, msg);
    }

    /// Handles one raw gateway line. Failures never surface as errors; they
    /// become ERR replies.
    pub fn ingest(&mut self, raw: &[u8], now: NaiveDateTime) -> Vec<OutboundMessage> {
        let now = whole_seconds(now);
        let msg = match messaging::parse_inbound_bytes(raw) {
            Ok(msg) => msg,
            Err(parse_error) => {
                let raw_hex = hex::encode(raw);
                self.log.append(now, EventKind::InboundRejected, raw_hex.clone());
                let reply = OutboundMessage::Err { phone: messaging::recover_phone(raw), code: ErrCode::BadMsg };
                self.state.dead_letters.push(DeadLetter {
                    at: now,
                    raw_hex,
                    reason: parse_error.to_string(),
                    reply: encode_outbound(&reply).expect("ERR always encodes"),
                });
                if reply.phone().is_some() {
                    self.queue(reply.clone(), now);
                }
                return vec![reply];
            }
        };
        let line = std::str::from_utf8(raw).expect("parsed lines are UTF-8").to_owned();
        self.log.append(now, EventKind::InboundAccepted, line);
        let phone = msg.phone().clone();
        let reply = match self.route(msg, now) {
            Ok(Some(reply)) => reply,
            Ok(None) => return Vec::new(),
            Err(e) => OutboundMessage::Err { phone: Some(phone), code: err_code(&e) },
        };
        self.queue(reply.clone(), now);
        vec![reply]
    }

    fn route(&mut self, msg: InboundMessage, now: NaiveDateTime) -> Result<Option<OutboundMessage>, ServiceError> {
        let today = now.date();
        let state = &mut self.state;
        match msg {
            InboundMessage::Register(reg) => {
                let (woman, assign) = state.registry.register(&reg, now)?;
                let first_review = today + chrono::Days::new(u64::from(state.settings.first_review_days));
                state.scheduler.open_file(&woman, first_review);
                Ok(Some(assign))
            }
            InboundMessage::Sos { phone, location } => {
                let (order, rescue) = state.dispatcher.handle_sos(&state.registry, &phone, location, now)?;
                self.log.append(now, EventKind::OrderOpened, json(&order));
                Ok(Some(rescue))
            }
            InboundMessage::ChangeReview { phone, new_date } => {
                state.scheduler.reschedule(&state.registry, &phone, new_date, today)?;
                Ok(None)
            }
            InboundMessage::Confirm { phone, date } => {
                state.scheduler.confirm(&state.registry, &phone, date)?;
                Ok(None)
            }
        }
    }

    /// Runs the daily scheduler work: reminders, then server advice.
    pub fn tick(&mut self, now: NaiveDateTime) -> Vec<OutboundMessage> {
        let now = whole_seconds(now);
        let today = now.date();
        self.log.append(now, EventKind::ClockTick, String::new());
        let state = &mut self.state;
        let mut out = state.scheduler.tick(&state.registry, today);
        out.extend(state.scheduler.advice_due(&state.registry, today));
        for msg in &out {
            self.queue(msg.clone(), now);
        }
        out
    }

    pub fn drain_outbox(&mut self, max: usize, now: NaiveDateTime) -> Result<Vec<Delivery>, ServiceError> {
        if max == 0 {
            return Err(ServiceError::ZeroDrain);
        }
        let out = self.state.outbox.drain(max);
        if !out.is_empty() {
            self.log.append(whole_seconds(now), EventKind::OutboxFetched, out.len().to_string());
        }
        Ok(out)
    }

    pub fn record_review(&mut self, phone: &PhoneId, md: MdFields, now: NaiveDateTime) -> Result<ReviewRecord, ServiceError> {
        let now = whole_seconds(now);
        let state = &mut self.state;
        let record = state.scheduler.record_review(&mut state.registry, phone, md.clone(), now)?;
        self.log
            .append(now, EventKind::ReviewRecorded, json(&ReviewPayload { phone: phone.clone(), md }));
        Ok(record)
    }

    pub fn compose_advice(
        &mut self,
        who: Advisor,
        target: AdviceTarget,
        text: &str,
        now: NaiveDateTime,
    ) -> Result<Vec<OutboundMessage>, ServiceError> {
        let now = whole_seconds(now);
        let state = &mut self.state;
        let out = state.scheduler.compose_advice(&state.registry, who, &target, text, now.date())?;
        self.log.append(
            now,
            EventKind::AdviceComposed,
            json(&AdvicePayload { who, target, text: text.to_owned() }),
        );
        for msg in &out {
            self.queue(msg.clone(), now);
        }
        Ok(out)
    }

    pub fn close_order(
        &mut self,
        order_id: u64,
        outcome: &str,
        now: NaiveDateTime,
    ) -> Result<crate::dispatch::DispatchOrder, ServiceError> {
        let order = self.state.dispatcher.close_order(order_id, outcome)?;
        self.log.append(
            whole_seconds(now),
            EventKind::OrderClosed,
            json(&ClosePayload { order_id, outcome: outcome.to_owned() }),
        );
        Ok(order)
    }

    pub fn release_slot(&mut self, facility_id: u32, phone: &PhoneId, now: NaiveDateTime) -> Result<(), ServiceError> {
        self.state.registry.release_slot(facility_id, phone)?;
        self.log.append(
            whole_seconds(now),
            EventKind::SlotReleased,
            json(&ReleasePayload { facility_id, phone: phone.clone() }),
        );
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { last_seq: self.log.last_seq(), state: self.state.clone() }
    }

    /// Rebuilds a service by re-executing a complete, gapless log.
    pub fn restore(events: &[Event]) -> Result<Self, ServiceError> {
        let mut svc = Self::empty();
        svc.replay(events)?;
        Ok(svc)
    }

    /// Resumes from a snapshot and replays the events recorded after it.
    pub fn from_snapshot(snapshot: Snapshot, tail: &[Event]) -> Result<Self, ServiceError> {
        let mut svc = Self { state: snapshot.state, log: EventLog::default() };
        svc.log.resume_after(snapshot.last_seq);
        svc.replay(tail)?;
        Ok(svc)
    }

    fn replay(&mut self, events: &[Event]) -> Result<(), ServiceError> {
        let corrupt = |seq: u64, reason: String| ServiceError::CorruptLog { seq, reason };
        let start = self.log.events().len();
        let base = self.log.last_seq();
        for (i, event) in events.iter().enumerate() {
            let expected = base + i as u64 + 1;
            if event.seq != expected {
                return Err(corrupt(expected, format!("expected seq {expected}, found {}", event.seq)));
            }
            if event.kind.is_derived() {
                continue;
            }
            if self.log.last_seq() + 1 != event.seq {
                return Err(corrupt(event.seq, "replay produced a different number of events".into()));
            }
            self.apply(event).map_err(|e| corrupt(event.seq, e.to_string()))?;
        }
        let produced = &self.log.events()[start..];
        if let Some((p, e)) = produced.iter().zip(events).find(|(p, e)| p != e) {
            return Err(corrupt(e.seq, format!("replay produced `{}`", p.to_line())));
        }
        if produced.len() != events.len() {
            let seq = base + produced.len().min(events.len()) as u64 + 1;
            return Err(corrupt(seq, "replay produced a different number of events".into()));
        }
        Ok(())
    }

    fn apply(&mut self, event: &Event) -> Result<(), ServiceError> {
        let at = event.at;
        let payload = event.payload.as_str();
        match event.kind {
            EventKind::ConfigLoaded => self.load_settings(serde_json::from_str(payload)?, at),
            EventKind::FacilitiesLoaded => self.load_facilities(serde_json::from_str(payload)?, at)?,
            EventKind::InboundAccepted => {
                self.ingest(payload.as_bytes(), at);
            }
            EventKind::InboundRejected => {
                let raw = hex::decode(payload).map_err(|e| ServiceError::CorruptLog {
                    seq: event.seq,
                    reason: e.to_string(),
                })?;
                self.ingest(&raw, at);
            }
            EventKind::ReviewRecorded => {
                let p: ReviewPayload = serde_json::from_str(payload)?;
                self.record_review(&p.phone, p.md, at)?;
            }
            EventKind::AdviceComposed => {
                let p: AdvicePayload = serde_json::from_str(payload)?;
                self.compose_advice(p.who, p.target, &p.text, at)?;
            }
            EventKind::OrderClosed => {
                let p: ClosePayload = serde_json::from_str(payload)?;
                self.close_order(p.order_id, &p.outcome, at)?;
            }
            EventKind::SlotReleased => {
                let p: ReleasePayload = serde_json::from_str(payload)?;
                self.release_slot(p.facility_id, &p.phone, at)?;
            }
            EventKind::ClockTick => {
                self.tick(at);
            }
            EventKind::OutboxFetched => {
                let count: usize = payload.parse().map_err(|_| ServiceError::CorruptLog {
                    seq: event.seq,
                    reason: "unreadable fetch count".into(),
                })?;
                let got = self.drain_outbox(count, at)?.len();
                if got != count {
                    return Err(ServiceError::CorruptLog {
                        seq: event.seq,
                        reason: format!("fetched {got} of {count} messages"),
                    });
                }
            }
            EventKind::OutboundQueued | EventKind::OrderOpened => unreachable!("derived events are not applied"),
        }
        Ok(())
    }
}

/// A service shared between concurrent callers; every call holds the lock
/// for its whole duration, which serializes all mutations.
#[derive(Debug, Clone, Default)]
pub struct SharedService(Arc<Mutex<Service>>);

impl SharedService {
    pub fn new(service: Service) -> Self {
        Self(Arc::new(Mutex::new(service)))
    }

    pub fn lock(&self) -> MutexGuard<'_, Service> {
        self.0.lock()
    }

    pub fn ingest(&self, raw: &[u8], now: NaiveDateTime) -> Vec<OutboundMessage> {
        self.lock().ingest(raw, now)
    }
}
