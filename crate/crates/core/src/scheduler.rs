//! Review records, reminders, rescheduling and the advice ledger.
//!
//! Every registered woman owns a care file. It starts with an intake
//! appointment created at registration; each MD review appends a
//! [`ReviewRecord`] whose `next_review` becomes the new pending appointment.
//! Reminders, confirmations and reschedules always act on the pending one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Days, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::messaging::{OutboundMessage, MAX_ADVICE_CHARS};
use crate::registry::{Condition, PhoneId, Registry, WomanRecord};

/// Reminder window, in days before the review.
pub const REMIND_WINDOW: std::ops::RangeInclusive<i64> = 3..=7;
/// Maximum postponement accepted by a reschedule, in days.
pub const MAX_POSTPONE_DAYS: i64 = 14;
pub const MAX_GESTATIONAL_WEEK: u32 = 45;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("unknown woman {0}")]
    UnknownWoman(PhoneId),
    #[error("next review {next_review} is not after {today}")]
    BadNextReview { next_review: NaiveDate, today: NaiveDate },
    #[error("gestational week {0} outside 1-45")]
    BadWeek(u32),
    #[error("stale review entry: expected seq {expected}, next is {actual}")]
    SeqConflict { expected: u32, actual: u32 },
    #[error("reschedule refused: {0}")]
    NoExcuse(Refusal),
    #[error("confirmation for {given} does not match pending review on {pending}")]
    DateMismatch { pending: NaiveDate, given: NaiveDate },
    #[error("advice text is {0} characters, limit is 250")]
    AdviceTooLong(usize),
    #[error("advice text contains `|` or a control character")]
    ForbiddenCharacter,
    #[error("server advice is produced by the scheduler, not composed")]
    ServerCannotCompose,
    #[error("advice templates line {line}: {reason}")]
    Template { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Refusal {
    AlreadyRescheduled,
    NotFuture,
    TooFarOut,
}

impl fmt::Display for Refusal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Refusal::AlreadyRescheduled => "review was already rescheduled once",
            Refusal::NotFuture => "new date is not in the future",
            Refusal::TooFarOut => "new date is more than 14 days after the current one",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Trimester {
    First,
    Second,
    Third,
}

impl Trimester {
    pub fn number(self) -> u8 {
        match self {
            Trimester::First => 1,
            Trimester::Second => 2,
            Trimester::Third => 3,
        }
    }
}

impl TryFrom<u8> for Trimester {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, String> {
        match n {
            1 => Ok(Trimester::First),
            2 => Ok(Trimester::Second),
            3 => Ok(Trimester::Third),
            _ => Err(format!("trimester must be 1, 2 or 3, got {n}")),
        }
    }
}

impl From<Trimester> for u8 {
    fn from(t: Trimester) -> u8 {
        t.number()
    }
}

/// Weeks 1-13 are the first trimester, 14-27 the second, 28 and later the third.
pub fn trimester_of(gestational_week: u32) -> Result<Trimester, SchedulerError> {
    match gestational_week {
        1..=13 => Ok(Trimester::First),
        14..=27 => Ok(Trimester::Second),
        28..=MAX_GESTATIONAL_WEEK => Ok(Trimester::Third),
        w => Err(SchedulerError::BadWeek(w)),
    }
}

/// Systolic/diastolic pair, written `sys/dia`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BloodPressure {
    pub systolic: u16,
    pub diastolic: u16,
}

impl FromStr for BloodPressure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (sys, dia) = s.split_once('/').ok_or("expected `sys/dia`")?;
        let systolic = sys.parse().map_err(|_| format!("bad systolic `{sys}`"))?;
        let diastolic = dia.parse().map_err(|_| format!("bad diastolic `{dia}`"))?;
        Ok(Self { systolic, diastolic })
    }
}

impl TryFrom<String> for BloodPressure {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<BloodPressure> for String {
    fn from(bp: BloodPressure) -> String {
        format!("{}/{}", bp.systolic, bp.diastolic)
    }
}

/// Identity fields copied into every review without MD input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimeInfo {
    pub name: String,
    pub age: u32,
    pub home_location: GeoPoint,
    pub assigned_facility: u32,
}

impl From<&WomanRecord> for PrimeInfo {
    fn from(w: &WomanRecord) -> Self {
        Self {
            name: w.name.clone(),
            age: w.age,
            home_location: w.home_location,
            assigned_facility: w.assigned_facility,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appointment {
    pub next_review: NaiveDate,
    pub confirmed: bool,
    pub reminder_sent: bool,
    pub reschedules: u32,
}

impl Appointment {
    fn new(next_review: NaiveDate) -> Self {
        Self { next_review, confirmed: false, reminder_sent: false, reschedules: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub phone: PhoneId,
    pub seq: u32,
    pub prime_info: PrimeInfo,
    pub review_date: NaiveDate,
    pub gestational_week: u32,
    pub weight_kg: Option<f64>,
    pub blood_pressure: Option<BloodPressure>,
    pub notes: Option<String>,
    #[serde(flatten)]
    pub appointment: Appointment,
}

/// Fields the MD enters at a review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdFields {
    pub gestational_week: u32,
    #[serde(default)]
    pub weight_kg: Option<f64>,
    #[serde(default)]
    pub blood_pressure: Option<BloodPressure>,
    #[serde(default)]
    pub notes: Option<String>,
    pub next_review: NaiveDate,
    #[serde(default)]
    pub conditions: Option<BTreeSet<Condition>>,
    /// Seq the client expects this review to get; stale entries are refused.
    #[serde(default)]
    pub expected_seq: Option<u32>,
}

impl MdFields {
    pub fn new(gestational_week: u32, next_review: NaiveDate) -> Self {
        Self {
            gestational_week,
            weight_kg: None,
            blood_pressure: None,
            notes: None,
            next_review,
            conditions: None,
            expected_seq: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdviceType {
    Normal,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Advisor {
    Server,
    MD,
    Admin,
}

/// One row of the advice ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceRecord {
    pub id_code: u64,
    pub phone: PhoneId,
    pub trimester: Trimester,
    pub advice_done: bool,
    pub type_of_advice: AdviceType,
    pub who_advisement: Advisor,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdviceTarget {
    All,
    Phone(PhoneId),
}

impl FromStr for AdviceTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "ALL" {
            Ok(AdviceTarget::All)
        } else {
            s.parse().map(AdviceTarget::Phone).map_err(|e| e.to_string())
        }
    }
}

/// Canned server advice, one text per trimester.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceTemplates([String; 3]);

impl Default for AdviceTemplates {
    fn default() -> Self {
        Self([
            "Take folic acid daily, eat regular balanced meals, avoid smoking and alcohol, and attend every review at your care centre.".into(),
            "Keep eating iron-rich food, drink plenty of water, walk lightly each day, and report swelling, headache or bleeding at once.".into(),
            "Rest often, count baby movements daily, keep your bag ready, and send SOS straight away for bleeding, fits or strong pain.".into(),
        ])
    }
}

impl AdviceTemplates {
    pub fn text(&self, t: Trimester) -> &str {
        &self.0[usize::from(t.number()) - 1]
    }

    /// Parses `1|<text>`, `2|<text>`, `3|<text>`, one per line, any order.
    pub fn parse(input: &str) -> Result<Self, SchedulerError> {
        let mut slots: [Option<String>; 3] = Default::default();
        let bad = |line: usize, reason: &str| SchedulerError::Template { line, reason: reason.into() };
        for (i, line) in input.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let n = i + 1;
            let (num, text) = line.split_once('|').ok_or_else(|| bad(n, "expected `<1|2|3>|<text>`"))?;
            let t = num
                .parse::<u8>()
                .ok()
                .and_then(|x| Trimester::try_from(x).ok())
                .ok_or_else(|| bad(n, "trimester must be 1, 2 or 3"))?;
            check_text(text).map_err(|e| bad(n, &e.to_string()))?;
            let slot = &mut slots[usize::from(t.number()) - 1];
            if slot.is_some() {
                return Err(bad(n, "trimester listed twice"));
            }
            *slot = Some(text.to_owned());
        }
        match slots {
            [Some(a), Some(b), Some(c)] => Ok(Self([a, b, c])),
            _ => Err(bad(0, "need exactly one line per trimester")),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchedulerError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SchedulerError::Template { line: 0, reason: e.to_string() })?;
        Self::parse(&text)
    }
}

fn check_text(text: &str) -> Result<(), SchedulerError> {
    let n = text.chars().count();
    if n > MAX_ADVICE_CHARS {
        return Err(SchedulerError::AdviceTooLong(n));
    }
    if text.chars().any(|c| c == '|' || c.is_control()) {
        return Err(SchedulerError::ForbiddenCharacter);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareFile {
    pub phone: PhoneId,
    pub intake: Appointment,
    pub reviews: Vec<ReviewRecord>,
    pub last_advised: Option<Trimester>,
}

impl CareFile {
    pub fn pending(&self) -> &Appointment {
        self.reviews.last().map_or(&self.intake, |r| &r.appointment)
    }

    fn pending_mut(&mut self) -> &mut Appointment {
        match self.reviews.last_mut() {
            Some(r) => &mut r.appointment,
            None => &mut self.intake,
        }
    }

    /// Extrapolated gestational week: last recorded week plus whole weeks since.
    pub fn current_week(&self, today: NaiveDate) -> Option<u32> {
        let last = self.reviews.last()?;
        let elapsed = (today - last.review_date).num_days().div_euclid(7);
        Some((i64::from(last.gestational_week) + elapsed).max(1) as u32)
    }

    pub fn current_trimester(&self, today: NaiveDate) -> Option<Trimester> {
        self.current_week(today)
            .map(|w| trimester_of(w.min(MAX_GESTATIONAL_WEEK)).expect("week clamped into range"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scheduler {
    files: BTreeMap<PhoneId, CareFile>,
    ledger: Vec<AdviceRecord>,
    templates: AdviceTemplates,
}

impl Scheduler {
    pub fn new(templates: AdviceTemplates) -> Self {
        Self { files: BTreeMap::new(), ledger: Vec::new(), templates }
    }

    pub fn templates(&self) -> &AdviceTemplates {
        &self.templates
    }

    pub fn file(&self, phone: &PhoneId) -> Option<&CareFile> {
        self.files.get(phone)
    }

    pub fn files(&self) -> impl Iterator<Item = &CareFile> {
        self.files.values()
    }

    pub fn ledger(&self) -> &[AdviceRecord] {
        &self.ledger
    }

    pub fn reviews(&self, phone: &PhoneId) -> &[ReviewRecord] {
        self.files.get(phone).map_or(&[], |f| &f.reviews)
    }

    /// Creates the care file for a newly registered woman.
    pub fn open_file(&mut self, woman: &WomanRecord, first_review: NaiveDate) {
        self.files.insert(
            woman.phone.clone(),
            CareFile {
                phone: woman.phone.clone(),
                intake: Appointment::new(first_review),
                reviews: Vec::new(),
                last_advised: None,
            },
        );
    }

    fn active_file(&mut self, registry: &Registry, phone: &PhoneId) -> Result<&mut CareFile, SchedulerError> {
        registry
            .lookup_active(phone)
            .map_err(|_| SchedulerError::UnknownWoman(phone.clone()))?;
        self.files
            .get_mut(phone)
            .ok_or_else(|| SchedulerError::UnknownWoman(phone.clone()))
    }

    /// Stores an MD review. Prime info comes from the registry for the first
    /// review and from the previous review afterwards.
    pub fn record_review(
        &mut self,
        registry: &mut Registry,
        phone: &PhoneId,
        md: MdFields,
        now: NaiveDateTime,
    ) -> Result<ReviewRecord, SchedulerError> {
        let today = now.date();
        let woman = registry
            .lookup_active(phone)
            .map_err(|_| SchedulerError::UnknownWoman(phone.clone()))?
            .clone();
        let file = self.active_file(registry, phone)?;
        let seq = file.reviews.len() as u32 + 1;
        if let Some(expected) = md.expected_seq {
            if expected != seq {
                return Err(SchedulerError::SeqConflict { expected, actual: seq });
            }
        }
        trimester_of(md.gestational_week)?;
        if md.next_review <= today {
            return Err(SchedulerError::BadNextReview { next_review: md.next_review, today });
        }
        let prime_info = match file.reviews.last() {
            Some(prev) => prev.prime_info.clone(),
            None => PrimeInfo::from(&woman),
        };
        let record = ReviewRecord {
            phone: phone.clone(),
            seq,
            prime_info,
            review_date: today,
            gestational_week: md.gestational_week,
            weight_kg: md.weight_kg,
            blood_pressure: md.blood_pressure,
            notes: md.notes,
            appointment: Appointment::new(md.next_review),
        };
        file.reviews.push(record.clone());

        let start = today - Days::new(7 * u64::from(md.gestational_week));
        registry
            .set_gestation_start(phone, start)
            .map_err(|_| SchedulerError::UnknownWoman(phone.clone()))?;
        if let Some(conditions) = md.conditions {
            registry
                .set_conditions(phone, conditions)
                .map_err(|_| SchedulerError::UnknownWoman(phone.clone()))?;
        }
        Ok(record)
    }

    /// Emits REMIND for every pending, unconfirmed appointment that is 3-7
    /// days away, or 0-2 days away if an earlier tick was missed. Each
    /// appointment is reminded at most once.
    pub fn tick(&mut self, registry: &Registry, today: NaiveDate) -> Vec<OutboundMessage> {
        let mut out = Vec::new();
        for file in self.files.values_mut() {
            if !registry.lookup(&file.phone).is_ok_and(|w| w.active) {
                continue;
            }
            let phone = file.phone.clone();
            let appt = file.pending_mut();
            if appt.confirmed || appt.reminder_sent {
                continue;
            }
            let days_until = (appt.next_review - today).num_days();
            if (0..=*REMIND_WINDOW.end()).contains(&days_until) {
                appt.reminder_sent = true;
                out.push(OutboundMessage::Remind { phone, review_date: appt.next_review });
            }
        }
        out
    }

    /// Moves the pending review if the request counts as an acceptable
    /// excuse: first reschedule of this review, strictly in the future and at
    /// most 14 days after the current date.
    pub fn reschedule(
        &mut self,
        registry: &Registry,
        phone: &PhoneId,
        new_date: NaiveDate,
        today: NaiveDate,
    ) -> Result<Appointment, SchedulerError> {
        let appt = self.active_file(registry, phone)?.pending_mut();
        if appt.reschedules >= 1 {
            return Err(SchedulerError::NoExcuse(Refusal::AlreadyRescheduled));
        }
        if new_date <= today {
            return Err(SchedulerError::NoExcuse(Refusal::NotFuture));
        }
        if (new_date - appt.next_review).num_days() > MAX_POSTPONE_DAYS {
            return Err(SchedulerError::NoExcuse(Refusal::TooFarOut));
        }
        appt.next_review = new_date;
        appt.reschedules += 1;
        appt.reminder_sent = false;
        appt.confirmed = false;
        Ok(appt.clone())
    }

    pub fn confirm(&mut self, registry: &Registry, phone: &PhoneId, date: NaiveDate) -> Result<Appointment, SchedulerError> {
        let appt = self.active_file(registry, phone)?.pending_mut();
        if appt.next_review != date {
            return Err(SchedulerError::DateMismatch { pending: appt.next_review, given: date });
        }
        appt.confirmed = true;
        Ok(appt.clone())
    }

    /// Server advice for every woman whose trimester changed since her last
    /// server advice. Women without a recorded gestational week are skipped.
    pub fn advice_due(&mut self, registry: &Registry, today: NaiveDate) -> Vec<OutboundMessage> {
        let mut out = Vec::new();
        for file in self.files.values_mut() {
            let Ok(woman) = registry.lookup_active(&file.phone) else {
                continue;
            };
            let Some(trimester) = file.current_trimester(today) else {
                continue;
            };
            if file.last_advised == Some(trimester) {
                continue;
            }
            file.last_advised = Some(trimester);
            let text = self.templates.text(trimester).to_owned();
            self.ledger.push(AdviceRecord {
                id_code: woman.id_code,
                phone: file.phone.clone(),
                trimester,
                advice_done: true,
                type_of_advice: AdviceType::Normal,
                who_advisement: Advisor::Server,
                message: text.clone(),
            });
            out.push(OutboundMessage::Advice { phone: file.phone.clone(), trimester, text });
        }
        out
    }

    /// MD or Admin advice to one woman or to every active woman.
    pub fn compose_advice(
        &mut self,
        registry: &Registry,
        who: Advisor,
        target: &AdviceTarget,
        text: &str,
        today: NaiveDate,
    ) -> Result<Vec<OutboundMessage>, SchedulerError> {
        if who == Advisor::Server {
            return Err(SchedulerError::ServerCannotCompose);
        }
        check_text(text)?;
        let phones: Vec<PhoneId> = match target {
            AdviceTarget::All => registry.active_women().map(|w| w.phone.clone()).collect(),
            AdviceTarget::Phone(p) => {
                registry
                    .lookup_active(p)
                    .map_err(|_| SchedulerError::UnknownWoman(p.clone()))?;
                vec![p.clone()]
            }
        };
        let mut out = Vec::with_capacity(phones.len());
        for phone in phones {
            let woman = registry.lookup_active(&phone).expect("filtered to active women");
            // women not yet reviewed have no gestational data; their advice is
            // filed under the first trimester
            let trimester = self
                .files
                .get(&phone)
                .and_then(|f| f.current_trimester(today))
                .unwrap_or(Trimester::First);
            self.ledger.push(AdviceRecord {
                id_code: woman.id_code,
                phone: phone.clone(),
                trimester,
                advice_done: true,
                type_of_advice: AdviceType::Other,
                who_advisement: who,
                message: text.to_owned(),
            });
            out.push(OutboundMessage::Advice { phone, trimester, text: text.to_owned() });
        }
        Ok(out)
    }
}
