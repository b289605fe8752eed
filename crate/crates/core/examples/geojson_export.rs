//! Loads facilities from CSV, exports GeoJSON, and loads the export back.

use materna::registry::{parse_facilities, Registry};
use materna::sim::TABLE3_CSV;

fn main() {
    let registry = Registry::new(parse_facilities(TABLE3_CSV).unwrap(), 1).unwrap();
    let geojson = serde_json::to_string_pretty(&registry.to_geojson()).unwrap();
    println!("{geojson}");
    let back = parse_facilities(&geojson).unwrap();
    println!("round trip equal: {}", back == registry.facilities());
}
