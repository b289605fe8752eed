//! Facility dataset and woman registration.
//!
//! The registry owns occupancy: [`crate::geo::select_facility`] only reads
//! `registered_count`, and every increment or decrement happens here behind
//! `&mut self`, so callers sharing a registry must serialize writers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{self, DistanceKm, GeoError, GeoPoint};
use crate::messaging::{OutboundMessage, Register};

pub const FACILITY_HEADER: &str = "id,name,zone,lat,lon,registered,capacity,vehicles";
pub const MAX_FACILITY_NAME: usize = 20;
pub const MAX_ZONE: usize = 7;
pub const AGE_RANGE: std::ops::RangeInclusive<u32> = 10..=60;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error("duplicate facility id {0}")]
    DuplicateFacilityId(u32),
    #[error("row {row}: facility {id} has more registered women than capacity")]
    CapacityViolation { row: u64, id: u32 },
    #[error("phone {0} is already registered")]
    DuplicatePhone(PhoneId),
    #[error("age {0} outside accepted range 10-60")]
    BadAge(u32),
    #[error("no facilities loaded")]
    NoFacilities,
    #[error("every facility is at capacity")]
    NoCapacityAnywhere,
    #[error("unknown woman {0}")]
    UnknownWoman(PhoneId),
    #[error("{phone} is not registered at facility {facility_id}")]
    NotRegisteredThere { phone: PhoneId, facility_id: u32 },
    #[error("cannot read facility file: {0}")]
    Io(#[from] std::io::Error),
}

impl From<GeoError> for RegistryError {
    fn from(e: GeoError) -> Self {
        match e {
            GeoError::NoCapacityAnywhere => RegistryError::NoCapacityAnywhere,
            _ => RegistryError::NoFacilities,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vehicle {
    Car,
    LifeBoat,
    Helicopter,
}

impl Vehicle {
    pub const ALL: [Vehicle; 3] = [Vehicle::Car, Vehicle::LifeBoat, Vehicle::Helicopter];

    pub fn wire_code(self) -> &'static str {
        match self {
            Vehicle::Car => "CAR",
            Vehicle::LifeBoat => "BOAT",
            Vehicle::Helicopter => "HELI",
        }
    }

    pub fn from_wire(code: &str) -> Option<Self> {
        match code {
            "CAR" => Some(Vehicle::Car),
            "BOAT" => Some(Vehicle::LifeBoat),
            "HELI" => Some(Vehicle::Helicopter),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Condition {
    Hypertension,
    Diabetes,
    Cardiac,
    Asthma,
}

/// Phone number used as a woman's identity: 7 to 15 ASCII digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PhoneId(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("phone id must be 7-15 digits")]
pub struct InvalidPhone;

impl PhoneId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_valid(s: &str) -> bool {
        (7..=15).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit())
    }
}

impl FromStr for PhoneId {
    type Err = InvalidPhone;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if Self::is_valid(s) {
            Ok(Self(s.to_owned()))
        } else {
            Err(InvalidPhone)
        }
    }
}

impl TryFrom<String> for PhoneId {
    type Error = InvalidPhone;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if Self::is_valid(&s) {
            Ok(Self(s))
        } else {
            Err(InvalidPhone)
        }
    }
}

impl From<PhoneId> for String {
    fn from(p: PhoneId) -> String {
        p.0
    }
}

impl fmt::Display for PhoneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One maternity care centre or hospital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facility {
    pub id: u32,
    pub name: String,
    pub zone: String,
    pub location: GeoPoint,
    pub registered_count: u32,
    pub capacity: u32,
    pub vehicles: BTreeSet<Vehicle>,
}

impl Facility {
    pub fn has_free_slot(&self) -> bool {
        self.registered_count < self.capacity
    }

    fn vehicles_field(&self) -> String {
        self.vehicles
            .iter()
            .map(|v| v.wire_code())
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WomanRecord {
    pub phone: PhoneId,
    pub id_code: u64,
    pub name: String,
    pub age: u32,
    pub home_location: GeoPoint,
    pub assigned_facility: u32,
    pub registered_at: NaiveDateTime,
    pub gestation_start: Option<NaiveDate>,
    pub conditions: BTreeSet<Condition>,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    facilities: Vec<Facility>,
    women: BTreeMap<PhoneId, WomanRecord>,
    next_id_code: u64,
    shortlist_k: usize,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(Vec::new(), 1).expect("empty registry is valid")
    }
}

impl Registry {
    /// Builds a registry from already-parsed facilities.
    pub fn new(mut facilities: Vec<Facility>, id_code_seed: u64) -> Result<Self, RegistryError> {
        facilities.sort_by_key(|f| f.id);
        for pair in facilities.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(RegistryError::DuplicateFacilityId(pair[0].id));
            }
        }
        for (i, f) in facilities.iter().enumerate() {
            if f.registered_count > f.capacity {
                return Err(RegistryError::CapacityViolation { row: i as u64 + 1, id: f.id });
            }
        }
        Ok(Self {
            facilities,
            women: BTreeMap::new(),
            next_id_code: id_code_seed,
            shortlist_k: geo::DEFAULT_SHORTLIST,
        })
    }

    pub fn facilities(&self) -> &[Facility] {
        &self.facilities
    }

    pub fn facility(&self, id: u32) -> Option<&Facility> {
        self.index_of(id).map(|i| &self.facilities[i])
    }

    fn index_of(&self, id: u32) -> Option<usize> {
        self.facilities.binary_search_by_key(&id, |f| f.id).ok()
    }

    pub fn women(&self) -> impl Iterator<Item = &WomanRecord> {
        self.women.values()
    }

    pub fn active_women(&self) -> impl Iterator<Item = &WomanRecord> {
        self.women.values().filter(|w| w.active)
    }

    pub fn next_id_code(&self) -> u64 {
        self.next_id_code
    }

    /// Registers a woman at the nearest facility with a free slot and
    /// returns her record together with the ASSIGN reply.
    pub fn register(
        &mut self,
        msg: &Register,
        now: NaiveDateTime,
    ) -> Result<(WomanRecord, OutboundMessage), RegistryError> {
        if self.women.contains_key(&msg.phone) {
            return Err(RegistryError::DuplicatePhone(msg.phone.clone()));
        }
        if !AGE_RANGE.contains(&msg.age) {
            return Err(RegistryError::BadAge(msg.age));
        }
        let (facility, distance) =
            geo::select_facility(msg.location, &self.facilities, self.shortlist_k)?;
        let facility_id = facility.id;
        let idx = self.index_of(facility_id).expect("selected facility exists");
        let slot = &mut self.facilities[idx];
        debug_assert!(slot.has_free_slot());
        slot.registered_count += 1;
        let assign = OutboundMessage::Assign {
            phone: msg.phone.clone(),
            facility_id,
            facility_name: slot.name.clone(),
            distance_km: round_tenth(distance),
        };

        let record = WomanRecord {
            phone: msg.phone.clone(),
            id_code: self.next_id_code,
            name: msg.name.clone(),
            age: msg.age,
            home_location: msg.location,
            assigned_facility: facility_id,
            registered_at: now,
            gestation_start: None,
            conditions: BTreeSet::new(),
            active: true,
        };
        self.next_id_code += 1;
        self.women.insert(record.phone.clone(), record.clone());
        Ok((record, assign))
    }

    /// Frees the woman's slot and marks her record inactive.
    pub fn release_slot(&mut self, facility_id: u32, phone: &PhoneId) -> Result<(), RegistryError> {
        let woman = self
            .women
            .get_mut(phone)
            .filter(|w| w.active)
            .ok_or_else(|| RegistryError::UnknownWoman(phone.clone()))?;
        if woman.assigned_facility != facility_id {
            return Err(RegistryError::NotRegisteredThere { phone: phone.clone(), facility_id });
        }
        let idx = self
            .facilities
            .binary_search_by_key(&facility_id, |f| f.id)
            .map_err(|_| RegistryError::NotRegisteredThere { phone: phone.clone(), facility_id })?;
        woman.active = false;
        self.facilities[idx].registered_count -= 1;
        Ok(())
    }

    /// Returns the record for `phone`, including inactive ones.
    pub fn lookup(&self, phone: &PhoneId) -> Result<&WomanRecord, RegistryError> {
        self.women
            .get(phone)
            .ok_or_else(|| RegistryError::UnknownWoman(phone.clone()))
    }

    /// Active record for `phone`; released women count as unknown.
    pub fn lookup_active(&self, phone: &PhoneId) -> Result<&WomanRecord, RegistryError> {
        self.lookup(phone)
            .ok()
            .filter(|w| w.active)
            .ok_or_else(|| RegistryError::UnknownWoman(phone.clone()))
    }

    pub fn set_conditions(
        &mut self,
        phone: &PhoneId,
        conditions: BTreeSet<Condition>,
    ) -> Result<(), RegistryError> {
        self.active_mut(phone)?.conditions = conditions;
        Ok(())
    }

    pub fn set_gestation_start(&mut self, phone: &PhoneId, start: NaiveDate) -> Result<(), RegistryError> {
        self.active_mut(phone)?.gestation_start = Some(start);
        Ok(())
    }

    fn active_mut(&mut self, phone: &PhoneId) -> Result<&mut WomanRecord, RegistryError> {
        self.women
            .get_mut(phone)
            .filter(|w| w.active)
            .ok_or_else(|| RegistryError::UnknownWoman(phone.clone()))
    }

    /// Facilities as a GeoJSON FeatureCollection (point geometry, `[lon, lat]`).
    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .facilities
            .iter()
            .map(|f| {
                json!({
                    "type": "Feature",
                    "geometry": {
                        "type": "Point",
                        "coordinates": [f.location.lon_deg(), f.location.lat_deg()],
                    },
                    "properties": {
                        "id": f.id,
                        "name": f.name,
                        "zone": f.zone,
                        "registered": f.registered_count,
                        "capacity": f.capacity,
                        "vehicles": f.vehicles_field(),
                    },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }
}

/// Distances travel on the wire with one decimal.
pub(crate) fn round_tenth(d: DistanceKm) -> f64 {
    (d.value() * 10.0).round() / 10.0
}

/// Reads a facility file, CSV or GeoJSON depending on its first non-blank byte.
pub fn load_facilities_file(path: impl AsRef<Path>) -> Result<Vec<Facility>, RegistryError> {
    let text = std::fs::read_to_string(path)?;
    parse_facilities(&text)
}

pub fn parse_facilities(text: &str) -> Result<Vec<Facility>, RegistryError> {
    let facilities = if text.trim_start().starts_with('{') {
        parse_geojson(text)?
    } else {
        parse_csv(text)?
    };
    check_rows(&facilities)?;
    Ok(facilities)
}

fn check_rows(facilities: &[Facility]) -> Result<(), RegistryError> {
    let mut seen = BTreeSet::new();
    for (i, f) in facilities.iter().enumerate() {
        if !seen.insert(f.id) {
            return Err(RegistryError::DuplicateFacilityId(f.id));
        }
        if f.registered_count > f.capacity {
            return Err(RegistryError::CapacityViolation { row: i as u64 + 2, id: f.id });
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    id: String,
    name: String,
    zone: String,
    lat: String,
    lon: String,
    registered: String,
    capacity: String,
    vehicles: String,
}

fn parse_csv(text: &str) -> Result<Vec<Facility>, RegistryError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != FACILITY_HEADER {
        return Err(malformed(1, format!("header must be `{FACILITY_HEADER}`")));
    }
    let mut out = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: CsvRow = record
            .deserialize(None)
            .map_err(|e| malformed(line, e.to_string()))?;
        out.push(facility_from_fields(
            line,
            &row.id,
            &row.name,
            &row.zone,
            &row.lat,
            &row.lon,
            &row.registered,
            &row.capacity,
            &row.vehicles,
        )?);
    }
    Ok(out)
}

fn parse_geojson(text: &str) -> Result<Vec<Facility>, RegistryError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| malformed(e.line() as u64, e.to_string()))?;
    if doc["type"] != "FeatureCollection" {
        return Err(malformed(0, "expected a FeatureCollection".into()));
    }
    let features = doc["features"]
        .as_array()
        .ok_or_else(|| malformed(0, "missing features array".into()))?;
    features
        .iter()
        .enumerate()
        .map(|(i, feature)| {
            let row = i as u64 + 1;
            let coords = feature["geometry"]["coordinates"]
                .as_array()
                .filter(|c| c.len() == 2 && feature["geometry"]["type"] == "Point")
                .ok_or_else(|| malformed(row, "geometry must be a Point".into()))?;
            let props = &feature["properties"];
            let text_of = |v: &Value| match v {
                Value::String(s) => s.clone(),
                Value::Null => String::new(),
                other => other.to_string(),
            };
            facility_from_fields(
                row,
                &text_of(&props["id"]),
                &text_of(&props["name"]),
                &text_of(&props["zone"]),
                &text_of(&coords[1]),
                &text_of(&coords[0]),
                &text_of(&props["registered"]),
                &text_of(&props["capacity"]),
                &text_of(&props["vehicles"]),
            )
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn facility_from_fields(
    row: u64,
    id: &str,
    name: &str,
    zone: &str,
    lat: &str,
    lon: &str,
    registered: &str,
    capacity: &str,
    vehicles: &str,
) -> Result<Facility, RegistryError> {
    let id: u32 = parse_num(row, "id", id)?;
    if id == 0 {
        return Err(malformed(row, "id must be positive".into()));
    }
    if name.is_empty() || name.chars().count() > MAX_FACILITY_NAME {
        return Err(malformed(row, format!("name must be 1-{MAX_FACILITY_NAME} characters")));
    }
    if name.contains(['|', '\n', '\r']) {
        return Err(malformed(row, "name contains a reserved character".into()));
    }
    if zone.chars().count() > MAX_ZONE {
        return Err(malformed(row, format!("zone longer than {MAX_ZONE} characters")));
    }
    let lat: f64 = parse_num(row, "lat", lat)?;
    let lon: f64 = parse_num(row, "lon", lon)?;
    let location = GeoPoint::new(lat, lon).map_err(|e| malformed(row, e.to_string()))?;
    let registered_count: u32 = parse_num(row, "registered", registered)?;
    let capacity: u32 = parse_num(row, "capacity", capacity)?;
    if capacity == 0 {
        return Err(malformed(row, "capacity must be positive".into()));
    }
    if registered_count > capacity {
        return Err(RegistryError::CapacityViolation { row, id });
    }
    let vehicles = if vehicles.is_empty() {
        BTreeSet::new()
    } else {
        vehicles
            .split('+')
            .map(|code| {
                Vehicle::from_wire(code).ok_or_else(|| malformed(row, format!("unknown vehicle `{code}`")))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(Facility {
        id,
        name: name.to_owned(),
        zone: zone.to_owned(),
        location,
        registered_count,
        capacity,
        vehicles,
    })
}

fn parse_num<T: FromStr>(row: u64, field: &str, raw: &str) -> Result<T, RegistryError> {
    raw.parse()
        .map_err(|_| malformed(row, format!("{field}: cannot parse `{raw}`")))
}

fn malformed(row: u64, reason: String) -> RegistryError {
    RegistryError::MalformedRow { row, reason }
}
