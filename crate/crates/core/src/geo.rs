//! Great-circle distance and capacity-aware nearest-facility selection.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Facility;

/// Mean Earth radius in kilometres (IUGG R1).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Default number of nearest facilities examined before widening the search.
pub const DEFAULT_SHORTLIST: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("no facilities to choose from")]
    NoFacilities,
    #[error("every facility is at capacity")]
    NoCapacityAnywhere,
    #[error("shortlist size must be at least 1")]
    ZeroShortlist,
}

/// A validated latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat_deg: f64,
    lon_deg: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat_deg, raw.lon_deg)
    }
}

impl GeoPoint {
    /// Rejects (never clamps) out-of-range or non-finite coordinates.
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::LatitudeOutOfRange(lat_deg));
        }
        if !(-180.0..=180.0).contains(&lon_deg) {
            return Err(GeoError::LongitudeOutOfRange(lon_deg));
        }
        Ok(Self { lat_deg, lon_deg })
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat_deg, self.lon_deg)
    }
}

/// Non-negative distance in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistanceKm(f64);

impl DistanceKm {
    pub fn new(value: f64) -> Option<Self> {
        (value.is_finite() && value >= 0.0).then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for DistanceKm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} km", self.0)
    }
}

/// Haversine distance on a sphere of radius [`EARTH_RADIUS_KM`].
///
/// The expression is symmetric in its arguments term by term, so
/// `haversine_km(a, b) == haversine_km(b, a)` holds bit for bit.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> DistanceKm {
    let lat1 = a.lat_deg.to_radians();
    let lat2 = b.lat_deg.to_radians();
    let sin_dlat = ((b.lat_deg - a.lat_deg).to_radians() * 0.5).sin();
    let sin_dlon = ((b.lon_deg - a.lon_deg).to_radians() * 0.5).sin();
    let h = sin_dlat * sin_dlat + lat1.cos() * lat2.cos() * sin_dlon * sin_dlon;
    let central = 2.0 * h.clamp(0.0, 1.0).sqrt().asin();
    DistanceKm(EARTH_RADIUS_KM * central)
}

fn ranked(source: GeoPoint, facilities: &[Facility]) -> Vec<(&Facility, DistanceKm)> {
    let mut all: Vec<_> = facilities
        .iter()
        .map(|f| (f, haversine_km(source, f.location)))
        .collect();
    all.sort_by(|(fa, da), (fb, db)| da.total_cmp(db).then(fa.id.cmp(&fb.id)));
    all
}

/// The `k` facilities closest to `source`, ascending by distance, ties by id.
pub fn k_nearest(
    source: GeoPoint,
    facilities: &[Facility],
    k: usize,
) -> Result<Vec<(&Facility, DistanceKm)>, GeoError> {
    if facilities.is_empty() {
        return Err(GeoError::NoFacilities);
    }
    if k == 0 {
        return Err(GeoError::ZeroShortlist);
    }
    let mut all = ranked(source, facilities);
    all.truncate(k);
    Ok(all)
}

/// Nearest facility with a free slot.
///
/// The `shortlist_k` closest facilities are checked first; if all of them are
/// full the search continues outward over the remaining facilities in
/// ascending distance. Occupancy is read, never modified.
pub fn select_facility(
    source: GeoPoint,
    facilities: &[Facility],
    shortlist_k: usize,
) -> Result<(&Facility, DistanceKm), GeoError> {
    if facilities.is_empty() {
        return Err(GeoError::NoFacilities);
    }
    if shortlist_k == 0 {
        return Err(GeoError::ZeroShortlist);
    }
    let all = ranked(source, facilities);
    let (shortlist, rest) = all.split_at(shortlist_k.min(all.len()));
    shortlist
        .iter()
        .chain(rest)
        .find(|(f, _)| f.has_free_slot())
        .copied()
        .ok_or(GeoError::NoCapacityAnywhere)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Facility;
    use std::collections::BTreeSet;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn fac(id: u32, lat: f64, lon: f64, registered: u32, capacity: u32) -> Facility {
        Facility {
            id,
            name: format!("F{id}"),
            zone: "Z1".into(),
            location: pt(lat, lon),
            registered_count: registered,
            capacity,
            vehicles: BTreeSet::new(),
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert_eq!(GeoPoint::new(91.0, 0.0), Err(GeoError::LatitudeOutOfRange(91.0)));
        assert_eq!(GeoPoint::new(0.0, -180.5), Err(GeoError::LongitudeOutOfRange(-180.5)));
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(90.0, 180.0).is_ok());
    }

    #[test]
    fn identical_points_are_zero() {
        let p = pt(36.19, 44.01);
        assert_eq!(haversine_km(p, p).value(), 0.0);
    }

    #[test]
    fn antipodal_is_half_circumference() {
        let d = haversine_km(pt(0.0, 0.0), pt(0.0, 180.0)).value();
        let expected = std::f64::consts::PI * EARTH_RADIUS_KM;
        assert!(((d - expected) / expected).abs() < 1e-6, "{d}");
    }

    #[test]
    fn hundredth_degree_longitude_at_erbil() {
        // spherical law of cosines gives 0.8974148 km for this pair
        let d = haversine_km(pt(36.19, 44.01), pt(36.19, 44.02)).value();
        assert!((d - 0.897).abs() < 1e-3);
        assert!((d - 0.897_414_8).abs() < 1e-6, "{d}");
    }

    #[test]
    fn k_nearest_fewer_than_k() {
        let f = [fac(7, 36.2, 44.0, 0, 1)];
        let got = k_nearest(pt(36.19, 44.01), &f, 3).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0.id, 7);
    }

    #[test]
    fn k_nearest_tie_breaks_on_id() {
        let f = [fac(9, 1.0, 0.0, 0, 1), fac(2, -1.0, 0.0, 0, 1), fac(5, 0.0, 1.0, 0, 1)];
        let ids: Vec<_> = k_nearest(pt(0.0, 0.0), &f, 3)
            .unwrap()
            .iter()
            .map(|(f, _)| f.id)
            .collect();
        // (0,1) and (±1,0) are all one degree away on the sphere
        assert_eq!(ids, vec![2, 5, 9]);
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(k_nearest(pt(0.0, 0.0), &[], 1), Err(GeoError::NoFacilities));
        assert_eq!(
            select_facility(pt(0.0, 0.0), &[], 3).map(|_| ()),
            Err(GeoError::NoFacilities)
        );
        let f = [fac(1, 0.0, 0.0, 0, 1)];
        assert_eq!(k_nearest(pt(0.0, 0.0), &f, 0), Err(GeoError::ZeroShortlist));
    }

    #[test]
    fn select_single_free_facility() {
        let f = [fac(1, 36.2, 44.0, 3, 4)];
        let (chosen, d) = select_facility(pt(36.19, 44.01), &f, 3).unwrap();
        assert_eq!(chosen.id, 1);
        assert_eq!(d, haversine_km(pt(36.19, 44.01), pt(36.2, 44.0)));
    }

    #[test]
    fn select_all_full() {
        let f = [fac(1, 36.2, 44.0, 4, 4), fac(2, 36.3, 44.0, 1, 1)];
        assert_eq!(
            select_facility(pt(36.19, 44.01), &f, 3).map(|_| ()),
            Err(GeoError::NoCapacityAnywhere)
        );
    }

    #[test]
    fn select_widens_past_full_shortlist() {
        let f = [
            fac(1, 0.0, 0.1, 1, 1),
            fac(2, 0.0, 0.2, 1, 1),
            fac(3, 0.0, 0.3, 1, 1),
            fac(4, 0.0, 0.5, 0, 1),
            fac(5, 0.0, 0.4, 0, 1),
        ];
        let (chosen, _) = select_facility(pt(0.0, 0.0), &f, 3).unwrap();
        assert_eq!(chosen.id, 5);
    }
}
