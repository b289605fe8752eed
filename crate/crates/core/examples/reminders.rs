//! Review reminders over a month of virtual days, including a reschedule.

use chrono::{Days, NaiveDate};
use materna::messaging::{encode_outbound, parse_inbound};
use materna::registry::parse_facilities;
use materna::service::{Service, Settings};
use materna::sim::TABLE3_CSV;

fn main() {
    let start = NaiveDate::from_ymd_opt(2012, 11, 1).unwrap().and_hms_opt(9, 0, 0).unwrap();
    let mut svc = Service::new(Settings::default(), parse_facilities(TABLE3_CSV).unwrap(), start).unwrap();

    svc.ingest(b"REG|07504432147|36.190000|44.010000|Sara|27", start);
    svc.ingest(b"REG|07700000001|36.200000|44.050000|Dana|31", start);
    let chg = "CHG|07700000001|2012-11-25";
    assert!(parse_inbound(chg).is_ok());
    println!("{chg} -> {:?}", svc.ingest(chg.as_bytes(), start + Days::new(1)));

    for day in 1..=30 {
        let now = start + Days::new(day);
        for msg in svc.tick(now) {
            println!("{} {}", now.date(), encode_outbound(&msg).unwrap());
        }
    }
    for f in svc.scheduler().files() {
        let a = f.pending();
        println!("{}: review {} reminder_sent={} reschedules={}", f.phone, a.next_review, a.reminder_sent, a.reschedules);
    }
}
