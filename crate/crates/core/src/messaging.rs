//! Pipe-delimited SMS line protocol.
//!
//! Inbound (handset to server):
//!
//! ```text
//! REG|<phone>|<lat.6>|<lon.6>|<name>|<age>
//! SOS|<phone>|<lat.6>|<lon.6>
//! CHG|<phone>|<YYYY-MM-DD>
//! CNF|<phone>|<YYYY-MM-DD>
//! ```
//!
//! Outbound (server to handset):
//!
//! ```text
//! ASSIGN|<phone>|<facility_id>|<facility_name>|<km.1>
//! REMIND|<phone>|<YYYY-MM-DD>
//! ADVICE|<phone>|<1|2|3>|<text>
//! RESCUE|<phone>|<CAR|BOAT|HELI>|<eta_min>
//! ERR|<phone|UNKNOWN>|<code>
//! ```
//!
//! Parsing is strict: every accepted line is in canonical form, so
//! `encode(parse(line)) == line`. There is no escaping; `|` and line breaks
//! are never valid inside a field.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::registry::{PhoneId, Vehicle};
use crate::scheduler::Trimester;

/// Upper bound on advice text, in characters.
pub const MAX_ADVICE_CHARS: usize = 250;
/// Upper bound on a woman's name as carried in REG.
pub const MAX_NAME_CHARS: usize = 40;

const SEP: char = '|';
const UNKNOWN_PHONE: &str = "UNKNOWN";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason} at byte {offset}")]
pub struct ParseError {
    pub reason: ParseReason,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseReason {
    #[error("empty line")]
    Empty,
    #[error("not valid UTF-8")]
    NotUtf8,
    #[error("line break inside message")]
    LineBreak,
    #[error("leading or trailing whitespace")]
    Whitespace,
    #[error("unknown verb")]
    UnknownVerb,
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("bad phone")]
    BadPhone,
    #[error("bad coordinate")]
    BadCoordinate,
    #[error("coordinate out of range")]
    CoordinateOutOfRange,
    #[error("bad name")]
    BadName,
    #[error("bad number")]
    BadNumber,
    #[error("bad date")]
    BadDate,
    #[error("bad distance")]
    BadDistance,
    #[error("bad trimester")]
    BadTrimester,
    #[error("bad vehicle")]
    BadVehicle,
    #[error("bad error code")]
    BadCode,
    #[error("text too long")]
    TextTooLong,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("advice text is {0} characters, limit is 250")]
    AdviceTooLong(usize),
    #[error("field contains `|` or a control character")]
    ForbiddenCharacter,
    #[error("field must not be empty")]
    EmptyField,
    #[error("distance must be finite and non-negative")]
    BadDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Register {
    pub phone: PhoneId,
    pub location: GeoPoint,
    pub name: String,
    pub age: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InboundMessage {
    Register(Register),
    Sos { phone: PhoneId, location: GeoPoint },
    ChangeReview { phone: PhoneId, new_date: NaiveDate },
    Confirm { phone: PhoneId, date: NaiveDate },
}

impl InboundMessage {
    pub fn phone(&self) -> &PhoneId {
        match self {
            InboundMessage::Register(r) => &r.phone,
            InboundMessage::Sos { phone, .. }
            | InboundMessage::ChangeReview { phone, .. }
            | InboundMessage::Confirm { phone, .. } => phone,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrCode {
    Dup,
    NoCap,
    Unreg,
    BadMsg,
    BadAge,
    NoExcuse,
    /// No facility holds a usable rescue vehicle.
    NoVeh,
    /// CNF date does not match the pending review.
    BadDate,
}

impl ErrCode {
    pub const ALL: [ErrCode; 8] = [
        ErrCode::Dup,
        ErrCode::NoCap,
        ErrCode::Unreg,
        ErrCode::BadMsg,
        ErrCode::BadAge,
        ErrCode::NoExcuse,
        ErrCode::NoVeh,
        ErrCode::BadDate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrCode::Dup => "DUP",
            ErrCode::NoCap => "NOCAP",
            ErrCode::Unreg => "UNREG",
            ErrCode::BadMsg => "BADMSG",
            ErrCode::BadAge => "BADAGE",
            ErrCode::NoExcuse => "NOEXCUSE",
            ErrCode::NoVeh => "NOVEH",
            ErrCode::BadDate => "BADDATE",
        }
    }
}

impl FromStr for ErrCode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        ErrCode::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

impl fmt::Display for ErrCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutboundMessage {
    Assign {
        phone: PhoneId,
        facility_id: u32,
        facility_name: String,
        distance_km: f64,
    },
    Remind {
        phone: PhoneId,
        review_date: NaiveDate,
    },
    Advice {
        phone: PhoneId,
        trimester: Trimester,
        text: String,
    },
    Rescue {
        phone: PhoneId,
        vehicle: Vehicle,
        eta_min: u32,
    },
    /// `phone` is `None` when the sender could not be identified.
    Err {
        phone: Option<PhoneId>,
        code: ErrCode,
    },
}

impl OutboundMessage {
    pub fn phone(&self) -> Option<&PhoneId> {
        match self {
            OutboundMessage::Assign { phone, .. }
            | OutboundMessage::Remind { phone, .. }
            | OutboundMessage::Advice { phone, .. }
            | OutboundMessage::Rescue { phone, .. } => Some(phone),
            OutboundMessage::Err { phone, .. } => phone.as_ref(),
        }
    }

    pub fn verb(&self) -> &'static str {
        match self {
            OutboundMessage::Assign { .. } => "ASSIGN",
            OutboundMessage::Remind { .. } => "REMIND",
            OutboundMessage::Advice { .. } => "ADVICE",
            OutboundMessage::Rescue { .. } => "RESCUE",
            OutboundMessage::Err { .. } => "ERR",
        }
    }
}

/// Splits a line into fields, remembering each field's byte offset.
struct Fields<'a> {
    fields: Vec<(usize, &'a str)>,
}

impl<'a> Fields<'a> {
    fn split(line: &'a str) -> Self {
        let mut fields = Vec::new();
        let mut start = 0;
        for (i, c) in line.char_indices() {
            if c == SEP {
                fields.push((start, &line[start..i]));
                start = i + 1;
            }
        }
        fields.push((start, &line[start..]));
        Self { fields }
    }

    fn expect(&self, expected: usize) -> Result<(), ParseError> {
        if self.fields.len() == expected {
            Ok(())
        } else {
            Err(ParseError {
                reason: ParseReason::FieldCount { expected, found: self.fields.len() },
                offset: 0,
            })
        }
    }

    fn get(&self, i: usize) -> (usize, &'a str) {
        self.fields[i]
    }
}

fn fail<T>(reason: ParseReason, offset: usize) -> Result<T, ParseError> {
    Err(ParseError { reason, offset })
}

fn check_line(line: &str) -> Result<(), ParseError> {
    if line.is_empty() {
        return fail(ParseReason::Empty, 0);
    }
    if let Some(i) = line.find(['\n', '\r']) {
        return fail(ParseReason::LineBreak, i);
    }
    if line.starts_with(char::is_whitespace) {
        return fail(ParseReason::Whitespace, 0);
    }
    if line.ends_with(char::is_whitespace) {
        return fail(ParseReason::Whitespace, line.len() - 1);
    }
    Ok(())
}

fn phone_at((offset, raw): (usize, &str)) -> Result<PhoneId, ParseError> {
    raw.parse().or_else(|_| fail(ParseReason::BadPhone, offset))
}

/// Unsigned integer without sign or redundant leading zeros.
fn canonical_uint(raw: &str, max_digits: usize) -> bool {
    !raw.is_empty()
        && raw.len() <= max_digits
        && raw.bytes().all(|b| b.is_ascii_digit())
        && (raw == "0" || !raw.starts_with('0'))
}

fn uint_at<T: FromStr>((offset, raw): (usize, &str), max_digits: usize) -> Result<T, ParseError> {
    if !canonical_uint(raw, max_digits) {
        return fail(ParseReason::BadNumber, offset);
    }
    raw.parse().or_else(|_| fail(ParseReason::BadNumber, offset))
}

/// Canonical fixed-point decimal: optional `-`, integer part of at most
/// `int_digits` digits, `.`, exactly `decimals` fractional digits.
fn canonical_fixed(raw: &str, int_digits: usize, decimals: usize, allow_negative: bool) -> bool {
    let body = match raw.strip_prefix('-') {
        Some(rest) if allow_negative => rest,
        Some(_) => return false,
        None => raw,
    };
    let Some((int, frac)) = body.split_once('.') else {
        return false;
    };
    canonical_uint(int, int_digits) && frac.len() == decimals && frac.bytes().all(|b| b.is_ascii_digit())
}

fn location_at(lat: (usize, &str), lon: (usize, &str)) -> Result<GeoPoint, ParseError> {
    let mut values = [0.0; 2];
    for (slot, (offset, raw)) in values.iter_mut().zip([lat, lon]) {
        if !canonical_fixed(raw, 3, 6, true) {
            return fail(ParseReason::BadCoordinate, offset);
        }
        *slot = raw.parse().or_else(|_| fail(ParseReason::BadCoordinate, offset))?;
    }
    match GeoPoint::new(values[0], values[1]) {
        Ok(p) => Ok(p),
        Err(crate::geo::GeoError::LatitudeOutOfRange(_)) => fail(ParseReason::CoordinateOutOfRange, lat.0),
        Err(_) => fail(ParseReason::CoordinateOutOfRange, lon.0),
    }
}

fn date_at((offset, raw): (usize, &str)) -> Result<NaiveDate, ParseError> {
    let shaped = raw.len() == 10
        && raw.bytes().enumerate().all(|(i, b)| match i {
            4 | 7 => b == b'-',
            _ => b.is_ascii_digit(),
        });
    if !shaped {
        return fail(ParseReason::BadDate, offset);
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").or_else(|_| fail(ParseReason::BadDate, offset))
}

fn is_clean_text(s: &str) -> bool {
    !s.chars().any(|c| c == SEP || c.is_control())
}

fn name_at((offset, raw): (usize, &str)) -> Result<String, ParseError> {
    let ok = !raw.is_empty()
        && raw.chars().count() <= MAX_NAME_CHARS
        && is_clean_text(raw)
        && raw.trim() == raw;
    if ok {
        Ok(raw.to_owned())
    } else {
        fail(ParseReason::BadName, offset)
    }
}

/// Parses raw bytes as received from the gateway.
pub fn parse_inbound_bytes(raw: &[u8]) -> Result<InboundMessage, ParseError> {
    match std::str::from_utf8(raw) {
        Ok(line) => parse_inbound(line),
        Err(e) => fail(ParseReason::NotUtf8, e.valid_up_to()),
    }
}

pub fn parse_inbound(line: &str) -> Result<InboundMessage, ParseError> {
    check_line(line)?;
    let f = Fields::split(line);
    match f.get(0).1 {
        "REG" => {
            f.expect(6)?;
            Ok(InboundMessage::Register(Register {
                phone: phone_at(f.get(1))?,
                location: location_at(f.get(2), f.get(3))?,
                name: name_at(f.get(4))?,
                age: uint_at(f.get(5), 3)?,
            }))
        }
        "SOS" => {
            f.expect(4)?;
            Ok(InboundMessage::Sos {
                phone: phone_at(f.get(1))?,
                location: location_at(f.get(2), f.get(3))?,
            })
        }
        "CHG" => {
            f.expect(3)?;
            Ok(InboundMessage::ChangeReview { phone: phone_at(f.get(1))?, new_date: date_at(f.get(2))? })
        }
        "CNF" => {
            f.expect(3)?;
            Ok(InboundMessage::Confirm { phone: phone_at(f.get(1))?, date: date_at(f.get(2))? })
        }
        _ => fail(ParseReason::UnknownVerb, 0),
    }
}

/// Best-effort sender recovery from a line that failed to parse.
pub fn recover_phone(raw: &[u8]) -> Option<PhoneId> {
    let line = std::str::from_utf8(raw).ok()?;
    line.split(SEP).nth(1)?.parse().ok()
}

fn fmt_date(d: NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

/// Renders an inbound message; used by the device simulator.
pub fn encode_inbound(msg: &InboundMessage) -> Result<String, EncodeError> {
    Ok(match msg {
        InboundMessage::Register(r) => {
            if r.name.is_empty() {
                return Err(EncodeError::EmptyField);
            }
            if !is_clean_text(&r.name) {
                return Err(EncodeError::ForbiddenCharacter);
            }
            format!(
                "REG|{}|{:.6}|{:.6}|{}|{}",
                r.phone,
                r.location.lat_deg(),
                r.location.lon_deg(),
                r.name,
                r.age
            )
        }
        InboundMessage::Sos { phone, location } => {
            format!("SOS|{}|{:.6}|{:.6}", phone, location.lat_deg(), location.lon_deg())
        }
        InboundMessage::ChangeReview { phone, new_date } => format!("CHG|{}|{}", phone, fmt_date(*new_date)),
        InboundMessage::Confirm { phone, date } => format!("CNF|{}|{}", phone, fmt_date(*date)),
    })
}

pub fn encode_outbound(msg: &OutboundMessage) -> Result<String, EncodeError> {
    Ok(match msg {
        OutboundMessage::Assign { phone, facility_id, facility_name, distance_km } => {
            if facility_name.is_empty() {
                return Err(EncodeError::EmptyField);
            }
            if !is_clean_text(facility_name) {
                return Err(EncodeError::ForbiddenCharacter);
            }
            if !distance_km.is_finite() || *distance_km < 0.0 {
                return Err(EncodeError::BadDistance);
            }
            format!("ASSIGN|{phone}|{facility_id}|{facility_name}|{distance_km:.1}")
        }
        OutboundMessage::Remind { phone, review_date } => format!("REMIND|{}|{}", phone, fmt_date(*review_date)),
        OutboundMessage::Advice { phone, trimester, text } => {
            let chars = text.chars().count();
            if chars > MAX_ADVICE_CHARS {
                return Err(EncodeError::AdviceTooLong(chars));
            }
            if !is_clean_text(text) {
                return Err(EncodeError::ForbiddenCharacter);
            }
            format!("ADVICE|{}|{}|{}", phone, trimester.number(), text)
        }
        OutboundMessage::Rescue { phone, vehicle, eta_min } => {
            format!("RESCUE|{}|{}|{}", phone, vehicle.wire_code(), eta_min)
        }
        OutboundMessage::Err { phone, code } => {
            let target = phone.as_ref().map_or(UNKNOWN_PHONE, PhoneId::as_str);
            format!("ERR|{target}|{code}")
        }
    })
}

/// Handset-side parser for outbound lines.
pub fn parse_outbound(line: &str) -> Result<OutboundMessage, ParseError> {
    check_line(line)?;
    let f = Fields::split(line);
    match f.get(0).1 {
        "ASSIGN" => {
            f.expect(5)?;
            let (name_off, name) = f.get(3);
            if name.is_empty() || !is_clean_text(name) {
                return fail(ParseReason::BadName, name_off);
            }
            let (km_off, km) = f.get(4);
            if !canonical_fixed(km, 6, 1, false) {
                return fail(ParseReason::BadDistance, km_off);
            }
            Ok(OutboundMessage::Assign {
                phone: phone_at(f.get(1))?,
                facility_id: uint_at(f.get(2), 10)?,
                facility_name: name.to_owned(),
                distance_km: km.parse().or_else(|_| fail(ParseReason::BadDistance, km_off))?,
            })
        }
        "REMIND" => {
            f.expect(3)?;
            Ok(OutboundMessage::Remind { phone: phone_at(f.get(1))?, review_date: date_at(f.get(2))? })
        }
        "ADVICE" => {
            f.expect(4)?;
            let (t_off, t) = f.get(2);
            let trimester = match t {
                "1" => Trimester::First,
                "2" => Trimester::Second,
                "3" => Trimester::Third,
                _ => return fail(ParseReason::BadTrimester, t_off),
            };
            let (text_off, text) = f.get(3);
            if text.chars().count() > MAX_ADVICE_CHARS {
                return fail(ParseReason::TextTooLong, text_off);
            }
            if !is_clean_text(text) {
                return fail(ParseReason::BadName, text_off);
            }
            Ok(OutboundMessage::Advice { phone: phone_at(f.get(1))?, trimester, text: text.to_owned() })
        }
        "RESCUE" => {
            f.expect(4)?;
            let (v_off, v) = f.get(2);
            let vehicle = Vehicle::from_wire(v).map_or_else(|| fail(ParseReason::BadVehicle, v_off), Ok)?;
            Ok(OutboundMessage::Rescue { phone: phone_at(f.get(1))?, vehicle, eta_min: uint_at(f.get(3), 10)? })
        }
        "ERR" => {
            f.expect(3)?;
            let phone = match f.get(1) {
                (_, UNKNOWN_PHONE) => None,
                field => Some(phone_at(field)?),
            };
            let (c_off, c) = f.get(2);
            let code = c.parse().or_else(|_| fail(ParseReason::BadCode, c_off))?;
            Ok(OutboundMessage::Err { phone, code })
        }
        _ => fail(ParseReason::UnknownVerb, 0),
    }
}
