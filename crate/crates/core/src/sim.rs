//! Device simulator: drives an in-process service with a scripted, timed
//! stream of SMS lines and reports message counts.
//!
//! Scenario lines (blank lines and `#` comments are skipped):
//!
//! ```text
//! @<minutes> <raw inbound line>
//! @<minutes> TICK [days]
//! @<minutes> REVIEW|<phone>|<gestational week>|<next review YYYY-MM-DD>
//! @<minutes> ADVICE|<MD|Admin>|<ALL|phone>|<text>
//! @<minutes> POPULATION <count> <weeks>
//! ```
//!
//! Minutes count from the virtual start. `TICK n` runs the scheduler once a
//! day for `n` days. `POPULATION` expands into seeded random traffic:
//! registrations, reviews, confirmations, reschedules, SOS calls, garbled
//! lines and daily ticks.

use std::fmt;
use std::path::Path;

use chrono::{Days, Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::messaging::{encode_inbound, parse_outbound, ErrCode, InboundMessage, OutboundMessage, Register};
use crate::geo::GeoPoint;
use crate::registry::{self, Facility, PhoneId, RegistryError, Vehicle};
use crate::scheduler::{AdviceTarget, Advisor, MdFields};
use crate::service::config::default_epoch;
use crate::service::event_log::{self, Event, EventKind};
use crate::service::{Service, ServiceError, Settings};

const MINUTES_PER_DAY: i64 = 24 * 60;
const NAMES: [&str; 10] = ["Sara", "Dana", "Shilan", "Rezan", "Avin", "Lana", "Nasik", "Berivan", "Hana", "Zhina"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad scenario line {line}: {reason}")]
    BadScenario { line: usize, reason: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
enum Action {
    Inbound(String),
    Tick,
    Review { phone: PhoneId, md: MdFields },
    Advice { who: Advisor, target: AdviceTarget, text: String },
    Population { count: u32, weeks: u32 },
}

#[derive(Debug, Clone, PartialEq)]
struct Step {
    minute: i64,
    line: usize,
    action: Action,
}

fn parse_scenario(text: &str) -> Result<Vec<Step>, SimError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let bad = |reason: &str| SimError::BadScenario { line, reason: reason.to_owned() };
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let rest = trimmed.strip_prefix('@').ok_or_else(|| bad("expected `@<minutes> ...`"))?;
        let (minute, body) = rest.split_once(' ').ok_or_else(|| bad("missing command after time"))?;
        let minute: i64 = minute
            .parse()
            .ok()
            .filter(|m| *m >= 0)
            .ok_or_else(|| bad("time must be a non-negative number of minutes"))?;
        let words: Vec<&str> = body.split(' ').collect();
        match words[0] {
            "TICK" => {
                let days: i64 = match words.len() {
                    1 => 1,
                    2 => words[1].parse().ok().filter(|d| *d > 0).ok_or_else(|| bad("TICK days must be positive"))?,
                    _ => return Err(bad("TICK takes at most one argument")),
                };
                for d in 0..days {
                    steps.push(Step { minute: minute + d * MINUTES_PER_DAY, line, action: Action::Tick });
                }
            }
            "POPULATION" => {
                let [_, count, weeks] = words[..] else {
                    return Err(bad("POPULATION takes <count> <weeks>"));
                };
                let count = count.parse().map_err(|_| bad("bad population count"))?;
                let weeks = weeks.parse().ok().filter(|w| *w > 0).ok_or_else(|| bad("bad population weeks"))?;
                steps.push(Step { minute, line, action: Action::Population { count, weeks } });
            }
            _ if body.starts_with("REVIEW|") => {
                let f: Vec<&str> = body.split('|').collect();
                let [_, phone, week, next] = f[..] else {
                    return Err(bad("REVIEW takes phone, week and next review date"));
                };
                let phone = phone.parse().map_err(|_| bad("bad phone"))?;
                let week = week.parse().map_err(|_| bad("bad week"))?;
                let next = NaiveDate::parse_from_str(next, "%Y-%m-%d").map_err(|_| bad("bad date"))?;
                steps.push(Step { minute, line, action: Action::Review { phone, md: MdFields::new(week, next) } });
            }
            _ if body.starts_with("ADVICE|") => {
                let f: Vec<&str> = body.splitn(4, '|').collect();
                let [_, who, target, text] = f[..] else {
                    return Err(bad("ADVICE takes advisor, target and text"));
                };
                let who = match who {
                    "MD" => Advisor::MD,
                    "Admin" => Advisor::Admin,
                    _ => return Err(bad("advisor must be MD or Admin")),
                };
                let target = target.parse().map_err(|e: String| bad(&e))?;
                steps.push(Step { minute, line, action: Action::Advice { who, target, text: text.to_owned() } });
            }
            _ => steps.push(Step { minute, line, action: Action::Inbound(body.to_owned()) }),
        }
    }
    Ok(steps)
}

fn clamped_point(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat.clamp(-90.0, 90.0), lon.clamp(-180.0, 180.0)).expect("clamped coordinates are valid")
}

/// Expands a POPULATION step into concrete traffic.
fn expand_population(
    step: &Step,
    count: u32,
    weeks: u32,
    seed: u64,
    facilities: &[Facility],
    settings: &Settings,
    start: NaiveDateTime,
) -> Vec<Step> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step.line as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (mut lat_lo, mut lat_hi, mut lon_lo, mut lon_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for f in facilities {
        lat_lo = lat_lo.min(f.location.lat_deg());
        lat_hi = lat_hi.max(f.location.lat_deg());
        lon_lo = lon_lo.min(f.location.lon_deg());
        lon_hi = lon_hi.max(f.location.lon_deg());
    }
    if facilities.is_empty() {
        (lat_lo, lat_hi, lon_lo, lon_hi) = (36.1, 36.3, 43.9, 44.1);
    }
    let margin = 0.05;
    let window = i64::from(weeks) * 7 * MINUTES_PER_DAY;
    let mut out = Vec::new();
    let mut push = |minute: i64, action: Action| {
        if minute < step.minute + window {
            out.push(Step { minute, line: step.line, action });
        }
    };
    let at = |minute: i64| start + Duration::minutes(minute);
    let day_start = |minute: i64| minute - minute.rem_euclid(MINUTES_PER_DAY);

    for day in 0..i64::from(weeks) * 7 {
        push(day_start(step.minute) + day * MINUTES_PER_DAY + 6 * 60, Action::Tick);
    }
    for i in 0..count {
        if rng.gen_bool(0.01) {
            push(step.minute + rng.gen_range(0..window / 4), Action::Inbound(format!("REG|{:x}|garbled", rng.gen::<u32>())));
        }
        let phone: PhoneId = format!("07{:09}", (step.line as u64 % 1000) * 1_000_000 + u64::from(i))
            .parse()
            .expect("generated phones are valid");
        let home = clamped_point(
            rng.gen_range(lat_lo - margin..=lat_hi + margin),
            rng.gen_range(lon_lo - margin..=lon_hi + margin),
        );
        let age = if rng.gen_bool(0.02) { 9 } else { rng.gen_range(16..=44) };
        let reg = InboundMessage::Register(Register {
            phone: phone.clone(),
            location: home,
            name: NAMES[rng.gen_range(0..NAMES.len())].to_owned(),
            age,
        });
        let reg_line = encode_inbound(&reg).expect("generated REG encodes");
        let reg_min = step.minute + rng.gen_range(0..window / 4);
        push(reg_min, Action::Inbound(reg_line.clone()));
        if rng.gen_bool(0.01) {
            push(reg_min + 60, Action::Inbound(reg_line));
        }

        let reg_day = at(reg_min).date();
        let intake = reg_day + Days::new(u64::from(settings.first_review_days));
        let mut review_day = intake;
        if rng.gen_bool(0.05) {
            let moved = intake + Days::new(3);
            let chg = InboundMessage::ChangeReview { phone: phone.clone(), new_date: moved };
            push(reg_min + 2 * MINUTES_PER_DAY, Action::Inbound(encode_inbound(&chg).expect("CHG encodes")));
            review_day = moved;
        }

        let mut week = rng.gen_range(4..=16u32) + settings.first_review_days / 7;
        let offset = |d: NaiveDate| (d - start.date()).num_minutes();
        while week <= 40 {
            if rng.gen_bool(0.3) {
                let cnf = InboundMessage::Confirm { phone: phone.clone(), date: review_day };
                push(offset(review_day) - 2 * MINUTES_PER_DAY + 12 * 60, Action::Inbound(encode_inbound(&cnf).expect("CNF encodes")));
            }
            let next = review_day + Days::new(28);
            push(offset(review_day) + 10 * 60, Action::Review { phone: phone.clone(), md: MdFields::new(week, next) });
            review_day = next;
            week += 4;
        }

        if rng.gen_bool(0.03) {
            let loc = clamped_point(
                home.lat_deg() + rng.gen_range(-0.01..=0.01),
                home.lon_deg() + rng.gen_range(-0.01..=0.01),
            );
            let sos = InboundMessage::Sos { phone: phone.clone(), location: loc };
            push(reg_min + rng.gen_range(1..window), Action::Inbound(encode_inbound(&sos).expect("SOS encodes")));
        }
    }
    out
}

/// Message counters, printed in a fixed order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub inbound_total: u64,
    pub inbound_malformed: u64,
    pub registrations_ok: u64,
    pub registrations_rejected: u64,
    pub reviews_recorded: u64,
    pub reminders_sent: u64,
    pub advice_trimester: [u64; 3],
    pub advice_md: u64,
    pub advice_admin: u64,
    pub sos_orders: u64,
    pub vehicle_car: u64,
    pub vehicle_boat: u64,
    pub vehicle_heli: u64,
    pub err_dup: u64,
    pub err_nocap: u64,
    pub err_badage: u64,
    pub err_unreg: u64,
    pub err_noveh: u64,
    pub err_noexcuse: u64,
    pub err_baddate: u64,
    pub err_badmsg: u64,
    pub outbound_total: u64,
}

#[derive(Debug, Clone, Copy)]
enum Origin {
    Inbound,
    Scheduler,
    Composed(Advisor),
}

impl Report {
    pub fn messages_total(&self) -> u64 {
        self.inbound_total + self.outbound_total
    }

    pub fn rows(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("inbound_total", self.inbound_total),
            ("inbound_malformed", self.inbound_malformed),
            ("registrations_ok", self.registrations_ok),
            ("registrations_rejected", self.registrations_rejected),
            ("reviews_recorded", self.reviews_recorded),
            ("reminders_sent", self.reminders_sent),
            ("advice_trimester_1", self.advice_trimester[0]),
            ("advice_trimester_2", self.advice_trimester[1]),
            ("advice_trimester_3", self.advice_trimester[2]),
            ("advice_md", self.advice_md),
            ("advice_admin", self.advice_admin),
            ("sos_orders", self.sos_orders),
            ("vehicle_car", self.vehicle_car),
            ("vehicle_boat", self.vehicle_boat),
            ("vehicle_heli", self.vehicle_heli),
            ("err_dup", self.err_dup),
            ("err_nocap", self.err_nocap),
            ("err_badage", self.err_badage),
            ("err_unreg", self.err_unreg),
            ("err_noveh", self.err_noveh),
            ("err_noexcuse", self.err_noexcuse),
            ("err_baddate", self.err_baddate),
            ("err_badmsg", self.err_badmsg),
            ("outbound_total", self.outbound_total),
            ("messages_total", self.messages_total()),
        ]
    }

    fn inbound(&mut self, replies: &[OutboundMessage]) {
        self.inbound_total += 1;
        for r in replies {
            if let OutboundMessage::Err { phone: None, code: ErrCode::BadMsg } = r {
                self.inbound_malformed += 1;
                continue;
            }
            if let OutboundMessage::Err { code: ErrCode::BadMsg, .. } = r {
                self.inbound_malformed += 1;
            }
            self.outbound(r, Origin::Inbound);
        }
    }

    fn outbound(&mut self, msg: &OutboundMessage, origin: Origin) {
        self.outbound_total += 1;
        match msg {
            OutboundMessage::Assign { .. } => self.registrations_ok += 1,
            OutboundMessage::Remind { .. } => self.reminders_sent += 1,
            OutboundMessage::Advice { trimester, .. } => match origin {
                Origin::Composed(Advisor::MD) => self.advice_md += 1,
                Origin::Composed(Advisor::Admin) => self.advice_admin += 1,
                _ => self.advice_trimester[usize::from(trimester.number()) - 1] += 1,
            },
            OutboundMessage::Rescue { vehicle, .. } => match vehicle {
                Vehicle::Car => self.vehicle_car += 1,
                Vehicle::LifeBoat => self.vehicle_boat += 1,
                Vehicle::Helicopter => self.vehicle_heli += 1,
            },
            OutboundMessage::Err { code, .. } => {
                let slot = match code {
                    ErrCode::Dup => &mut self.err_dup,
                    ErrCode::NoCap => &mut self.err_nocap,
                    ErrCode::BadAge => &mut self.err_badage,
                    ErrCode::Unreg => &mut self.err_unreg,
                    ErrCode::NoVeh => &mut self.err_noveh,
                    ErrCode::NoExcuse => &mut self.err_noexcuse,
                    ErrCode::BadDate => &mut self.err_baddate,
                    ErrCode::BadMsg => &mut self.err_badmsg,
                };
                *slot += 1;
                if matches!(code, ErrCode::Dup | ErrCode::NoCap | ErrCode::BadAge) {
                    self.registrations_rejected += 1;
                }
            }
        }
    }

    /// Recomputes the counters from an event log alone.
    pub fn from_events(events: &[Event]) -> Result<Self, SimError> {
        let mut r = Report::default();
        let mut origin = Origin::Inbound;
        for e in events {
            match e.kind {
                EventKind::InboundAccepted => {
                    r.inbound_total += 1;
                    origin = Origin::Inbound;
                }
                EventKind::InboundRejected => {
                    r.inbound_total += 1;
                    r.inbound_malformed += 1;
                    origin = Origin::Inbound;
                }
                EventKind::ClockTick => origin = Origin::Scheduler,
                EventKind::AdviceComposed => {
                    let v: serde_json::Value = serde_json::from_str(&e.payload).map_err(ServiceError::from)?;
                    let who = serde_json::from_value(v["who"].clone()).map_err(ServiceError::from)?;
                    origin = Origin::Composed(who);
                }
                EventKind::ReviewRecorded => r.reviews_recorded += 1,
                EventKind::OrderOpened => r.sos_orders += 1,
                EventKind::OutboundQueued => {
                    let msg = parse_outbound(&e.payload).map_err(|err| ServiceError::CorruptLog {
                        seq: e.seq,
                        reason: err.to_string(),
                    })?;
                    r.outbound(&msg, origin);
                }
                _ => {}
            }
        }
        Ok(r)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in self.rows() {
            writeln!(f, "{name}={value}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    pub seed: u64,
    pub settings: Settings,
    pub facilities: Vec<Facility>,
    pub start: NaiveDateTime,
}

impl ScenarioOptions {
    /// The built-in three facilities, default settings, virtual start 2012-11-01.
    pub fn table3(seed: u64) -> Self {
        Self {
            seed,
            settings: Settings::default(),
            facilities: registry::parse_facilities(TABLE3_CSV).expect("built-in dataset is valid"),
            start: default_epoch(),
        }
    }
}

/// Three Erbil facilities: Ankawa (full), Tayrawa and Maternity Hospital.
pub const TABLE3_CSV: &str = include_str!("../data/table3.csv");

#[derive(Debug)]
pub struct ScenarioRun {
    /// Counters derived from the event log.
    pub report: Report,
    /// Counters tallied while the scenario ran.
    pub live: Report,
    pub review_failures: u64,
    pub service: Service,
}

/// Runs a scenario in-process against a fresh service.
pub fn run_scenario(text: &str, options: &ScenarioOptions) -> Result<ScenarioRun, SimError> {
    let mut steps = Vec::new();
    for step in parse_scenario(text)? {
        match step.action {
            Action::Population { count, weeks } => steps.extend(expand_population(
                &step,
                count,
                weeks,
                options.seed,
                &options.facilities,
                &options.settings,
                options.start,
            )),
            _ => steps.push(step),
        }
    }
    steps.sort_by_key(|s| s.minute);

    let mut service = Service::new(options.settings.clone(), options.facilities.clone(), options.start)?;
    let mut live = Report::default();
    let mut review_failures = 0;
    let mut now = options.start;
    for step in steps {
        now = options.start + Duration::minutes(step.minute);
        match step.action {
            Action::Inbound(line) => {
                let replies = service.ingest(line.as_bytes(), now);
                live.inbound(&replies);
            }
            Action::Tick => {
                for msg in service.tick(now) {
                    live.outbound(&msg, Origin::Scheduler);
                }
                service.drain_outbox(usize::MAX, now)?;
            }
            Action::Review { phone, md } => match service.record_review(&phone, md, now) {
                Ok(_) => live.reviews_recorded += 1,
                Err(_) => review_failures += 1,
            },
            Action::Advice { who, target, text } => {
                let out = service.compose_advice(who, target, &text, now).map_err(|e| SimError::BadScenario {
                    line: step.line,
                    reason: e.to_string(),
                })?;
                for msg in out {
                    live.outbound(&msg, Origin::Composed(who));
                }
            }
            Action::Population { .. } => unreachable!("populations are expanded above"),
        }
    }
    live.sos_orders = live.vehicle_car + live.vehicle_boat + live.vehicle_heli;
    service.drain_outbox(usize::MAX, now)?;
    let report = Report::from_events(service.events())?;
    Ok(ScenarioRun { report, live, review_failures, service })
}

/// Loads and checks a facility file; returns the "N facilities loaded" line.
pub fn cmd_seed(path: impl AsRef<Path>) -> Result<String, SimError> {
    let facilities = registry::load_facilities_file(path)?;
    Ok(format!("{} facilities loaded", facilities.len()))
}

pub fn cmd_scenario(path: impl AsRef<Path>, options: &ScenarioOptions) -> Result<ScenarioRun, SimError> {
    run_scenario(&std::fs::read_to_string(path)?, options)
}

/// Restores a service from a log and summarizes it: the report counters,
/// then a few state figures.
pub fn cmd_replay(path: impl AsRef<Path>) -> Result<String, SimError> {
    let events = event_log::read_log(path)?;
    replay_summary(&events)
}

pub fn replay_summary(events: &[Event]) -> Result<String, SimError> {
    let service = Service::restore(events)?;
    let report = Report::from_events(events)?;
    let reg = service.registry();
    let mut out = report.to_string();
    out.push_str(&format!("events={}\n", events.len()));
    out.push_str(&format!("facilities={}\n", reg.facilities().len()));
    out.push_str(&format!("women_active={}\n", reg.active_women().count()));
    out.push_str(&format!(
        "open_orders={}\n",
        service.dispatcher().orders().filter(|o| o.is_open()).count()
    ));
    out.push_str(&format!("outbox_pending={}\n", service.outbox().pending()));
    Ok(out)
}
