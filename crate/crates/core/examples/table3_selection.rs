//! Facility selection for the three-facility worked example.

use materna::geo::{haversine_km, k_nearest, select_facility, GeoPoint, DEFAULT_SHORTLIST};
use materna::registry::parse_facilities;
use materna::sim::TABLE3_CSV;

fn main() {
    let facilities = parse_facilities(TABLE3_CSV).expect("built-in dataset");
    let source = GeoPoint::new(36.19, 44.01).unwrap();

    println!("{:<20} {:>8} {:>10}", "facility", "km", "occupancy");
    for (f, d) in k_nearest(source, &facilities, DEFAULT_SHORTLIST).unwrap() {
        println!("{:<20} {:>8.1} {:>7}/{}", f.name, d.value(), f.registered_count, f.capacity);
    }

    let (chosen, d) = select_facility(source, &facilities, DEFAULT_SHORTLIST).unwrap();
    println!("assigned: {} at {d}", chosen.name);

    let a = GeoPoint::new(36.19, 44.01).unwrap();
    let b = GeoPoint::new(36.19, 44.02).unwrap();
    println!("0.01 degree of longitude at 36.19N: {:.4} km", haversine_km(a, b).value());
}
