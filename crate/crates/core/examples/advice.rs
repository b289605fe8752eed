//! A 40-week pregnancy: one server advice per trimester, plus an MD note.

use chrono::{Days, NaiveDate};
use materna::registry::{parse_facilities, PhoneId};
use materna::scheduler::{AdviceTarget, Advisor, MdFields};
use materna::service::{Service, Settings};
use materna::sim::TABLE3_CSV;

fn main() {
    let start = NaiveDate::from_ymd_opt(2012, 11, 1).unwrap().and_hms_opt(9, 0, 0).unwrap();
    let mut svc = Service::new(Settings::default(), parse_facilities(TABLE3_CSV).unwrap(), start).unwrap();
    let phone: PhoneId = "07504432147".parse().unwrap();
    svc.ingest(b"REG|07504432147|36.190000|44.010000|Sara|27", start);

    // first review at week 6; the clock then runs to week 40
    svc.record_review(&phone, MdFields::new(6, start.date() + Days::new(28)), start).unwrap();
    for day in 1..=34 * 7 {
        svc.tick(start + Days::new(day));
    }
    svc.compose_advice(Advisor::MD, AdviceTarget::Phone(phone), "Bring your blood test results.", start + Days::new(240))
        .unwrap();

    println!("{:<10} {:<9} {:<7} {:<6} message", "id_code", "trimester", "who", "type");
    for row in svc.scheduler().ledger() {
        println!(
            "{:<10} {:<9} {:<7} {:<6} {}",
            row.id_code,
            row.trimester.number(),
            format!("{:?}", row.who_advisement),
            format!("{:?}", row.type_of_advice),
            row.message
        );
    }
}
