//! Persisting the event log, restoring from it, and resuming from a snapshot.

use chrono::{Days, NaiveDate};
use materna::registry::parse_facilities;
use materna::service::event_log::read_log;
use materna::service::{Service, ServiceError, Settings};
use materna::sim::TABLE3_CSV;

fn main() -> Result<(), ServiceError> {
    let dir = std::env::temp_dir().join("materna-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("events.log");

    let start = NaiveDate::from_ymd_opt(2012, 11, 1).unwrap().and_hms_opt(9, 0, 0).unwrap();
    let mut live = Service::new(Settings::default(), parse_facilities(TABLE3_CSV).unwrap(), start)?;
    live.persist_log_to(&path)?;
    live.ingest(b"REG|07504432147|36.190000|44.010000|Sara|27", start);
    live.ingest(b"not a message", start);
    for day in 1..=12 {
        live.tick(start + Days::new(day));
    }
    live.drain_outbox(10, start + Days::new(12))?;

    let events = read_log(&path)?;
    for e in events.iter().take(6) {
        let line = e.to_line();
        println!("{}", if line.len() > 100 { &line[..100] } else { &line });
    }
    println!("... {} events in {}", events.len(), path.display());

    let restored = Service::restore(&events)?;
    println!("restored state equals live: {}", restored.state() == live.state());

    let head = Service::restore(&events[..5])?;
    let resumed = Service::from_snapshot(head.snapshot(), &events[5..])?;
    println!("snapshot + tail equals live: {}", resumed.state() == live.state());

    let mut tampered = events.clone();
    tampered[3].payload = "ASSIGN|07504432147|1|Ankawa|0.5".into();
    println!("tampered log: {}", Service::restore(&tampered).unwrap_err());
    Ok(())
}
