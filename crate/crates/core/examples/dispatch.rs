//! SOS handling: vehicle choice, kit and ETA for three kinds of caller.

use chrono::NaiveDate;
use materna::messaging::encode_outbound;
use materna::registry::parse_facilities;
use materna::service::{Service, Settings};

const FACILITIES: &str = "id,name,zone,lat,lon,registered,capacity,vehicles
1,Ankawa,Z1,36.194497,44.010000,0,10,CAR
3,Maternity Hospital,Z1,36.166468,43.980855,0,10,CAR+HELI
10,Dukan Lakeside,W1,35.954000,44.953000,0,10,BOAT+CAR
";

fn main() {
    let now = NaiveDate::from_ymd_opt(2012, 11, 1).unwrap().and_hms_opt(9, 0, 0).unwrap();
    let mut svc = Service::new(Settings::default(), parse_facilities(FACILITIES).unwrap(), now).unwrap();
    svc.ingest(b"REG|07504432147|36.190000|44.010000|Sara|27", now);
    svc.ingest(b"REG|07700000002|35.950000|44.950000|Avin|24", now);

    for line in [
        "SOS|07504432147|36.190000|44.010000",
        "SOS|07504432147|36.369865|44.010000",
        "SOS|07700000002|35.960000|44.940000",
        "SOS|07799999999|36.190000|44.010000",
    ] {
        let reply = svc.ingest(line.as_bytes(), now);
        println!("{line}\n  -> {}", encode_outbound(&reply[0]).unwrap());
    }
    for o in svc.dispatcher().orders() {
        println!(
            "order {} from facility {} by {:?}, kit {:?}, {:.1} km",
            o.order_id,
            o.origin_facility,
            o.vehicle,
            o.kit,
            o.distance_km.value()
        );
    }
    svc.close_order(1, "delivered at Maternity Hospital", now).unwrap();
    println!("open orders left: {}", svc.dispatcher().orders().filter(|o| o.is_open()).count());
}
