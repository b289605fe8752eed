//! Emergency rescue orders raised by SOS messages.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, DistanceKm, GeoPoint};
use crate::messaging::OutboundMessage;
use crate::registry::{Condition, Facility, PhoneId, Registry, Vehicle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error("unknown woman {0}")]
    UnknownWoman(PhoneId),
    #[error("no facility has a rescue vehicle")]
    NoVehicleAvailable,
    #[error("unknown order {0}")]
    UnknownOrder(u64),
    #[error("order {0} is already closed")]
    AlreadyClosed(u64),
}

/// Vehicle choice parameters. Speeds are km/h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchConfig {
    pub heli_threshold_km: f64,
    pub speed_car: f64,
    pub speed_boat: f64,
    pub speed_heli: f64,
    pub water_zone_prefix: String,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self {
            heli_threshold_km: 15.0,
            speed_car: 40.0,
            speed_boat: 30.0,
            speed_heli: 150.0,
            water_zone_prefix: "W".into(),
        }
    }
}

impl DispatchConfig {
    pub fn speed(&self, vehicle: Vehicle) -> f64 {
        match vehicle {
            Vehicle::Car => self.speed_car,
            Vehicle::LifeBoat => self.speed_boat,
            Vehicle::Helicopter => self.speed_heli,
        }
    }

    /// Minutes to cover `distance` at the vehicle's speed, rounded up, at least 1.
    pub fn eta_min(&self, distance: DistanceKm, vehicle: Vehicle) -> u32 {
        let minutes = (distance.value() / self.speed(vehicle) * 60.0).ceil();
        (minutes as u32).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kit {
    Standard,
    Hypertension,
    Diabetes,
    Cardiac,
    Asthma,
}

impl Kit {
    /// Cardiac outranks hypertension, then diabetes, then asthma.
    pub fn for_conditions<'a>(conditions: impl IntoIterator<Item = &'a Condition>) -> Kit {
        let rank = |c: &Condition| match c {
            Condition::Cardiac => 0,
            Condition::Hypertension => 1,
            Condition::Diabetes => 2,
            Condition::Asthma => 3,
        };
        match conditions.into_iter().min_by_key(|c| rank(c)) {
            Some(Condition::Cardiac) => Kit::Cardiac,
            Some(Condition::Hypertension) => Kit::Hypertension,
            Some(Condition::Diabetes) => Kit::Diabetes,
            Some(Condition::Asthma) => Kit::Asthma,
            None => Kit::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OrderStatus {
    Open,
    Closed { outcome: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchOrder {
    pub order_id: u64,
    pub phone: PhoneId,
    pub location: GeoPoint,
    pub origin_facility: u32,
    pub vehicle: Vehicle,
    pub kit: Kit,
    pub distance_km: DistanceKm,
    pub created_at: NaiveDateTime,
    pub status: OrderStatus,
}

impl DispatchOrder {
    pub fn is_open(&self) -> bool {
        self.status == OrderStatus::Open
    }
}

fn nearest_with(
    location: GeoPoint,
    facilities: &[Facility],
    keep: impl Fn(&Facility) -> bool,
) -> Option<(&Facility, DistanceKm)> {
    facilities
        .iter()
        .filter(|f| keep(f))
        .map(|f| (f, haversine_km(location, f.location)))
        .min_by(|(fa, da), (fb, db)| da.value().total_cmp(&db.value()).then(fa.id.cmp(&fb.id)))
}

/// Picks the vehicle class, then the nearest facility holding it.
///
/// Helicopter when the nearest equipped facility is beyond the threshold,
/// life boat for water zones, car otherwise. A class nobody holds is skipped.
pub fn choose_vehicle<'a>(
    config: &DispatchConfig,
    facilities: &'a [Facility],
    location: GeoPoint,
    zone: &str,
) -> Result<(Vehicle, &'a Facility, DistanceKm), DispatchError> {
    let (nearest, nearest_km) =
        nearest_with(location, facilities, |f| !f.vehicles.is_empty()).ok_or(DispatchError::NoVehicleAvailable)?;
    let available = |v: Vehicle| facilities.iter().any(|f| f.vehicles.contains(&v));
    let water = !config.water_zone_prefix.is_empty() && zone.starts_with(&config.water_zone_prefix);

    let vehicle = if nearest_km.value() > config.heli_threshold_km && available(Vehicle::Helicopter) {
        Vehicle::Helicopter
    } else if water && available(Vehicle::LifeBoat) {
        Vehicle::LifeBoat
    } else if available(Vehicle::Car) {
        Vehicle::Car
    } else {
        *nearest.vehicles.first().expect("filtered to equipped facilities")
    };
    let (origin, distance) =
        nearest_with(location, facilities, |f| f.vehicles.contains(&vehicle)).expect("vehicle class is available");
    Ok((vehicle, origin, distance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatcher {
    config: DispatchConfig,
    orders: BTreeMap<u64, DispatchOrder>,
    next_order_id: u64,
}

impl Default for Dispatcher {
    fn default() -> Self {
        Self::new(DispatchConfig::default())
    }
}

impl Dispatcher {
    pub fn new(config: DispatchConfig) -> Self {
        Self { config, orders: BTreeMap::new(), next_order_id: 1 }
    }

    pub fn config(&self) -> &DispatchConfig {
        &self.config
    }

    pub fn orders(&self) -> impl Iterator<Item = &DispatchOrder> {
        self.orders.values()
    }

    pub fn order(&self, id: u64) -> Option<&DispatchOrder> {
        self.orders.get(&id)
    }

    /// Opens a rescue order for a registered woman and returns it with the
    /// RESCUE reply. Occupancy is never touched.
    pub fn handle_sos(
        &mut self,
        registry: &Registry,
        phone: &PhoneId,
        location: GeoPoint,
        now: NaiveDateTime,
    ) -> Result<(DispatchOrder, OutboundMessage), DispatchError> {
        let woman = registry
            .lookup_active(phone)
            .map_err(|_| DispatchError::UnknownWoman(phone.clone()))?;
        let zone = registry
            .facility(woman.assigned_facility)
            .map_or("", |f| f.zone.as_str());
        let (vehicle, origin, distance_km) = choose_vehicle(&self.config, registry.facilities(), location, zone)?;
        let order = DispatchOrder {
            order_id: self.next_order_id,
            phone: phone.clone(),
            location,
            origin_facility: origin.id,
            vehicle,
            kit: Kit::for_conditions(&woman.conditions),
            distance_km,
            created_at: now,
            status: OrderStatus::Open,
        };
        self.next_order_id += 1;
        self.orders.insert(order.order_id, order.clone());
        let rescue = OutboundMessage::Rescue {
            phone: phone.clone(),
            vehicle,
            eta_min: self.config.eta_min(distance_km, vehicle),
        };
        Ok((order, rescue))
    }

    pub fn close_order(&mut self, order_id: u64, outcome: &str) -> Result<DispatchOrder, DispatchError> {
        let order = self
            .orders
            .get_mut(&order_id)
            .ok_or(DispatchError::UnknownOrder(order_id))?;
        if !order.is_open() {
            return Err(DispatchError::AlreadyClosed(order_id));
        }
        order.status = OrderStatus::Closed { outcome: outcome.to_owned() };
        Ok(order.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::messaging::Register;
    use crate::registry::parse_facilities;
    use chrono::NaiveDate;
    use std::collections::BTreeSet;

    fn now() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2012, 11, 1).unwrap().and_hms_opt(3, 0, 0).unwrap()
    }

    fn registry(csv: &str) -> Registry {
        Registry::new(parse_facilities(csv).unwrap(), 1).unwrap()
    }

    fn register(r: &mut Registry, phone: &str, lat: f64, lon: f64) -> PhoneId {
        let phone: PhoneId = phone.parse().unwrap();
        r.register(
            &Register { phone: phone.clone(), location: GeoPoint::new(lat, lon).unwrap(), name: "Sara".into(), age: 30 },
            now(),
        )
        .unwrap();
        phone
    }

    const TABLE3: &str = "id,name,zone,lat,lon,registered,capacity,vehicles
1,Ankawa,Z1,36.194497,44.010000,10,10,
2,Tayrawa,Z1,36.200130,44.081339,4,10,
3,Maternity Hospital,Z1,36.166468,43.980855,7,10,CAR
";

    #[test]
    fn car_from_assigned_hospital() {
        let mut r = registry(TABLE3);
        let p = register(&mut r, "07504432147", 36.19, 44.01);
        let mut d = Dispatcher::default();
        let src = GeoPoint::new(36.19, 44.01).unwrap();
        let (order, msg) = d.handle_sos(&r, &p, src, now()).unwrap();
        assert_eq!(order.origin_facility, 3);
        assert_eq!(order.vehicle, Vehicle::Car);
        assert_eq!(order.kit, Kit::Standard);
        // ceil(3.7 / 40 * 60) = 6
        assert_eq!(msg, OutboundMessage::Rescue { phone: p, vehicle: Vehicle::Car, eta_min: 6 });
    }

    #[test]
    fn unregistered_sender() {
        let r = registry(TABLE3);
        let mut d = Dispatcher::default();
        let p: PhoneId = "0799999999".parse().unwrap();
        assert_eq!(
            d.handle_sos(&r, &p, GeoPoint::new(36.19, 44.01).unwrap(), now()),
            Err(DispatchError::UnknownWoman(p))
        );
        assert_eq!(d.orders().count(), 0);
    }

    #[test]
    fn helicopter_beyond_threshold() {
        // facility 20 km due north of the woman (0.17986 deg of latitude)
        let mut r = registry(
            "id,name,zone,lat,lon,registered,capacity,vehicles
1,Far,Z1,36.369865,44.010000,0,10,CAR+HELI
",
        );
        let p = register(&mut r, "07504432147", 36.19, 44.01);
        let mut d = Dispatcher::default();
        let (order, _) = d.handle_sos(&r, &p, GeoPoint::new(36.19, 44.01).unwrap(), now()).unwrap();
        assert!((order.distance_km.value() - 20.0).abs() < 0.01);
        assert_eq!(order.vehicle, Vehicle::Helicopter);
    }

    #[test]
    fn boat_for_water_zone() {
        let mut r = registry(
            "id,name,zone,lat,lon,registered,capacity,vehicles
1,Lake,W2,36.200000,44.010000,0,10,CAR+BOAT
",
        );
        let p = register(&mut r, "07504432147", 36.19, 44.01);
        let mut d = Dispatcher::default();
        let (order, _) = d.handle_sos(&r, &p, GeoPoint::new(36.19, 44.01).unwrap(), now()).unwrap();
        assert_eq!(order.vehicle, Vehicle::LifeBoat);
    }

    #[test]
    fn falls_back_to_any_equipped_facility() {
        let mut r = registry(
            "id,name,zone,lat,lon,registered,capacity,vehicles
1,Near,Z1,36.190000,44.011000,0,10,
2,Other,Z1,36.250000,44.010000,0,10,HELI
",
        );
        let p = register(&mut r, "07504432147", 36.19, 44.01);
        let mut d = Dispatcher::default();
        let (order, _) = d.handle_sos(&r, &p, GeoPoint::new(36.19, 44.01).unwrap(), now()).unwrap();
        assert_eq!(order.origin_facility, 2);
        assert_eq!(order.vehicle, Vehicle::Helicopter);
    }

    #[test]
    fn no_vehicle_anywhere() {
        let mut r = registry(
            "id,name,zone,lat,lon,registered,capacity,vehicles
1,Near,Z1,36.190000,44.011000,0,10,
",
        );
        let p = register(&mut r, "07504432147", 36.19, 44.01);
        let mut d = Dispatcher::default();
        assert_eq!(
            d.handle_sos(&r, &p, GeoPoint::new(36.19, 44.01).unwrap(), now()),
            Err(DispatchError::NoVehicleAvailable)
        );
    }

    #[test]
    fn kit_priority() {
        let all: BTreeSet<_> = [Condition::Asthma, Condition::Diabetes, Condition::Cardiac, Condition::Hypertension].into();
        assert_eq!(Kit::for_conditions(&all), Kit::Cardiac);
        assert_eq!(Kit::for_conditions(&[Condition::Asthma, Condition::Diabetes]), Kit::Diabetes);
        assert_eq!(Kit::for_conditions(&[Condition::Asthma, Condition::Hypertension]), Kit::Hypertension);
        assert_eq!(Kit::for_conditions(&[Condition::Asthma]), Kit::Asthma);
        assert_eq!(Kit::for_conditions(&[]), Kit::Standard);
    }

    #[test]
    fn eta_is_at_least_one_minute() {
        let c = DispatchConfig::default();
        assert_eq!(c.eta_min(DistanceKm::new(0.0).unwrap(), Vehicle::Car), 1);
        assert_eq!(c.eta_min(DistanceKm::new(3.7).unwrap(), Vehicle::Car), 6);
        assert_eq!(c.eta_min(DistanceKm::new(20.0).unwrap(), Vehicle::Helicopter), 8);
    }

    #[test]
    fn close_lifecycle() {
        let mut r = registry(TABLE3);
        let p = register(&mut r, "07504432147", 36.19, 44.01);
        let mut d = Dispatcher::default();
        let (order, _) = d.handle_sos(&r, &p, GeoPoint::new(36.19, 44.01).unwrap(), now()).unwrap();
        let closed = d.close_order(order.order_id, "delivered to hospital").unwrap();
        assert_eq!(closed.status, OrderStatus::Closed { outcome: "delivered to hospital".into() });
        assert_eq!(d.close_order(order.order_id, "again"), Err(DispatchError::AlreadyClosed(order.order_id)));
        assert_eq!(d.close_order(99, "x"), Err(DispatchError::UnknownOrder(99)));
    }
}
