//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runtime limits and tolerances are fixed below.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration as StdDuration, Instant};

use chrono::{Days, NaiveDate, NaiveDateTime};
use materna::geo::{k_nearest, select_facility, GeoPoint, DEFAULT_SHORTLIST};
use materna::messaging::{
    encode_inbound, encode_outbound, parse_inbound, parse_inbound_bytes, parse_outbound, ErrCode, InboundMessage,
    OutboundMessage, Register, MAX_ADVICE_CHARS,
};
use materna::registry::{parse_facilities, Facility, PhoneId, Vehicle};
use materna::scheduler::{AdviceType, Advisor, MdFields, Trimester};
use materna::service::event_log::parse_log;
use materna::service::{Service, Settings, SharedService};
use materna::sim::{cmd_scenario, ScenarioOptions, TABLE3_CSV};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TABLE3_TOLERANCE: f64 = 0.05;
const TABLE3_LIMIT: StdDuration = StdDuration::from_secs(1);
const SELECTION_INSTANCES: usize = 1_000;
const SELECTION_MAX_FACILITIES: usize = 200;
const SELECTION_LIMIT: StdDuration = StdDuration::from_secs(10);
const CAPACITY_TRIALS: usize = 50;
const CAPACITY_REQUESTS: usize = 100;
const CAPACITY: u32 = 10;
const CAPACITY_LIMIT: StdDuration = StdDuration::from_secs(30);
const SWEEP_DAYS: u64 = 60;
const SWEEP_REVIEWS: usize = 500;
const SWEEP_LIMIT: StdDuration = StdDuration::from_secs(10);
const ROUND_TRIPS: usize = 10_000;
const FUZZ_LINES: usize = 100_000;
const PROTOCOL_LIMIT: StdDuration = StdDuration::from_secs(30);
const PREGNANCY_WEEKS: u64 = 40;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2012, 11, 1).unwrap().and_hms_opt(9, 0, 0).unwrap()
}

fn within(limit: StdDuration, elapsed: StdDuration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {:.3} s, limit {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn reg_line(phone: &str, lat: f64, lon: f64) -> String {
    format!("REG|{phone}|{lat:.6}|{lon:.6}|Sara|27")
}

fn one_facility(capacity: u32) -> Vec<Facility> {
    let csv = format!("id,name,zone,lat,lon,registered,capacity,vehicles\n1,Solo,Z1,36.190000,44.010000,0,{capacity},CAR\n");
    parse_facilities(&csv).unwrap()
}

fn table3_reproduction() -> Outcome {
    let t = Instant::now();
    let facilities = parse_facilities(TABLE3_CSV).map_err(|e| e.to_string())?;
    let source = GeoPoint::new(36.19, 44.01).unwrap();
    let (chosen, d) = select_facility(source, &facilities, DEFAULT_SHORTLIST).map_err(|e| e.to_string())?;
    check(chosen.name == "Maternity Hospital", || format!("selected {}", chosen.name))?;
    let expected = [("Ankawa", 0.5), ("Maternity Hospital", 3.7), ("Tayrawa", 6.5)];
    let ranked = k_nearest(source, &facilities, 3).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for ((f, dist), (name, km)) in ranked.iter().zip(expected) {
        check(f.name == name, || format!("rank order {} vs {name}", f.name))?;
        let rel = (dist.value() - km).abs() / km;
        worst = worst.max(rel);
        check(rel <= TABLE3_TOLERANCE, || format!("{name}: {:.3} km vs {km}", dist.value()))?;
    }
    let mut svc = Service::new(Settings::default(), facilities.clone(), start()).unwrap();
    let reply = svc.ingest(reg_line("07504432147", 36.19, 44.01).as_bytes(), start());
    let line = encode_outbound(&reply[0]).unwrap();
    check(line == "ASSIGN|07504432147|3|Maternity Hospital|3.7", || line.clone())?;
    within(TABLE3_LIMIT, t.elapsed())?;
    Ok(format!("C at {:.3} km, worst deviation {:.2}%", d.value(), worst * 100.0))
}

/// Great-circle distance via the atan2 form, written independently of the
/// library's implementation.
fn oracle_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    6371.0088 * 2.0 * h.sqrt().atan2((1.0 - h).sqrt())
}

fn oracle_select(source: (f64, f64), facilities: &[Facility]) -> Option<u32> {
    facilities
        .iter()
        .filter(|f| f.registered_count < f.capacity)
        .map(|f| (oracle_km(source, (f.location.lat_deg(), f.location.lon_deg())), f.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

fn selection_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2012);
    let mut matched = 0;
    let mut none_cases = 0;
    for instance in 0..SELECTION_INSTANCES {
        let n = rng.gen_range(1..=SELECTION_MAX_FACILITIES);
        let regional = instance % 4 != 0;
        let point = |rng: &mut ChaCha8Rng| {
            if regional {
                (rng.gen_range(35.5..37.0), rng.gen_range(43.0..45.0))
            } else {
                (rng.gen_range(-89.0..89.0), rng.gen_range(-179.0..179.0))
            }
        };
        let mut facilities = Vec::with_capacity(n);
        let mut ids: Vec<u32> = (1..=n as u32 * 3).collect();
        ids.shuffle(&mut rng);
        for &id in ids.iter().take(n) {
            // a few co-located facilities exercise the id tie-break
            let (lat, lon) = if !facilities.is_empty() && rng.gen_bool(0.05) {
                let f: &Facility = &facilities[rng.gen_range(0..facilities.len())];
                (f.location.lat_deg(), f.location.lon_deg())
            } else {
                point(&mut rng)
            };
            let capacity = rng.gen_range(1..=20);
            let full_bias = if instance % 10 == 0 { 0.97 } else { 0.6 };
            let registered = if rng.gen_bool(full_bias) { capacity } else { rng.gen_range(0..capacity) };
            facilities.push(Facility {
                id,
                name: format!("F{id}"),
                zone: "Z1".into(),
                location: GeoPoint::new(lat, lon).unwrap(),
                registered_count: registered,
                capacity,
                vehicles: BTreeSet::from([Vehicle::Car]),
            });
        }
        let (lat, lon) = point(&mut rng);
        let source = GeoPoint::new(lat, lon).unwrap();
        let got = select_facility(source, &facilities, DEFAULT_SHORTLIST).ok().map(|(f, _)| f.id);
        let want = oracle_select((lat, lon), &facilities);
        if want.is_none() {
            none_cases += 1;
        }
        if got == want {
            matched += 1;
        }
    }
    check(matched == SELECTION_INSTANCES, || format!("{matched}/{SELECTION_INSTANCES} matched"))?;
    within(SELECTION_LIMIT, t.elapsed())?;
    Ok(format!("{matched}/{SELECTION_INSTANCES} matched ({none_cases} with no capacity)"))
}

fn capacity_linearizability() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..CAPACITY_TRIALS {
        let shared = SharedService::new(Service::new(Settings::default(), one_facility(CAPACITY), start()).unwrap());
        let barrier = std::sync::Arc::new(std::sync::Barrier::new(CAPACITY_REQUESTS));
        let mut order: Vec<usize> = (0..CAPACITY_REQUESTS).collect();
        order.shuffle(&mut rng);
        let handles: Vec<_> = order
            .into_iter()
            .map(|i| {
                let s = shared.clone();
                let b = barrier.clone();
                let spin = rng.gen_range(0..200u32);
                std::thread::spawn(move || {
                    b.wait();
                    for _ in 0..spin {
                        std::hint::spin_loop();
                    }
                    if spin % 3 == 0 {
                        std::thread::yield_now();
                    }
                    s.ingest(reg_line(&format!("0760{i:07}"), 36.19, 44.01).as_bytes(), start())
                })
            })
            .collect();
        let mut assign = 0;
        let mut nocap = 0;
        for h in handles {
            for r in h.join().map_err(|_| "worker panicked".to_string())? {
                match r {
                    OutboundMessage::Assign { .. } => assign += 1,
                    OutboundMessage::Err { code: ErrCode::NoCap, .. } => nocap += 1,
                    other => return Err(format!("unexpected reply {other:?}")),
                }
            }
        }
        let count = shared.lock().registry().facilities()[0].registered_count;
        check((assign, nocap, count) == (10, 90, CAPACITY), || {
            format!("trial {trial}: {assign} ASSIGN, {nocap} NOCAP, count {count}")
        })?;
    }
    within(CAPACITY_LIMIT, t.elapsed())?;
    Ok(format!("{CAPACITY_TRIALS} trials of {CAPACITY_REQUESTS} threads: 10 ASSIGN / 90 NOCAP / count 10"))
}

/// Registers `SWEEP_REVIEWS` women, records one review each, confirms some,
/// then ticks every `step` days and returns the first-fire lead times.
fn sweep(seed: u64, step: u64) -> Result<(usize, usize, Vec<i64>), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut svc = Service::new(Settings::default(), one_facility(1_000), start()).unwrap();
    let mut due = BTreeMap::new();
    let mut confirmed = BTreeSet::new();
    for i in 0..SWEEP_REVIEWS {
        let phone = format!("0770{i:07}");
        svc.ingest(reg_line(&phone, 36.19, 44.01).as_bytes(), start());
        let id: PhoneId = phone.parse().unwrap();
        let next = start().date() + Days::new(rng.gen_range(8..=SWEEP_DAYS));
        svc.record_review(&id, MdFields::new(rng.gen_range(5..30), next), start())
            .map_err(|e| e.to_string())?;
        if rng.gen_bool(0.2) {
            let cnf = encode_inbound(&InboundMessage::Confirm { phone: id.clone(), date: next }).unwrap();
            let out = svc.ingest(cnf.as_bytes(), start());
            check(out.is_empty(), || format!("confirm refused: {out:?}"))?;
            confirmed.insert(id.clone());
        }
        due.insert(id, next);
    }
    let mut fired: BTreeMap<PhoneId, Vec<i64>> = BTreeMap::new();
    let mut day = 0;
    while day <= SWEEP_DAYS {
        let now = start() + Days::new(day);
        for msg in svc.tick(now) {
            match msg {
                OutboundMessage::Remind { phone, review_date } => {
                    check(review_date == due[&phone], || format!("{phone}: reminder for {review_date}"))?;
                    fired.entry(phone).or_default().push((review_date - now.date()).num_days());
                }
                OutboundMessage::Advice { .. } => {}
                other => return Err(format!("unexpected {other:?}")),
            }
        }
        day += step;
    }
    let mut leads = Vec::new();
    for phone in due.keys() {
        let n = fired.get(phone).map_or(0, Vec::len);
        let want = usize::from(!confirmed.contains(phone));
        check(n == want, || format!("{phone}: {n} reminders, expected {want}"))?;
        leads.extend(fired.get(phone).into_iter().flatten());
    }
    Ok((due.len() - confirmed.len(), confirmed.len(), leads))
}

fn reminder_window() -> Outcome {
    let t = Instant::now();
    let (unconfirmed, confirmed, leads) = sweep(60, 1)?;
    check(leads.iter().all(|d| (3..=7).contains(d)), || format!("daily ticks fired at {:?}", leads.iter().max()))?;
    let (_, _, late) = sweep(61, 7)?;
    check(late.iter().all(|d| (0..=7).contains(d)), || "downtime catch-up outside [0,7]".into())?;
    within(SWEEP_LIMIT, t.elapsed())?;
    Ok(format!(
        "{unconfirmed} reminded once in [3,7], {confirmed} confirmed silent; 7-day ticks in [{}, {}]",
        late.iter().min().unwrap_or(&0),
        late.iter().max().unwrap_or(&0)
    ))
}

fn random_phone(rng: &mut ChaCha8Rng) -> PhoneId {
    let len = rng.gen_range(7..=15);
    (0..len).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect::<String>().parse().unwrap()
}

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    const POOL: &[char] = &['a', 'Z', '0', ' ', '.', ',', 'ئ', 'ە', 'é', '!', '-', '/', '?', 'ک'];
    let len = rng.gen_range(1..=max);
    let mut s: String = (0..len).map(|_| POOL[rng.gen_range(0..POOL.len())]).collect();
    if s.starts_with(' ') || s.ends_with(' ') {
        s = format!("x{}x", s.trim()).chars().take(max).collect();
    }
    s
}

fn random_point(rng: &mut ChaCha8Rng) -> GeoPoint {
    let q = |v: f64| (v * 1e6).round() / 1e6;
    GeoPoint::new(q(rng.gen_range(-90.0..=90.0)), q(rng.gen_range(-180.0..=180.0))).unwrap()
}

fn random_date(rng: &mut ChaCha8Rng) -> NaiveDate {
    NaiveDate::from_ymd_opt(2012, 1, 1).unwrap() + Days::new(rng.gen_range(0..3000))
}

fn protocol_round_trip_and_fuzz() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(250);
    let mut valid = Vec::new();
    for i in 0..ROUND_TRIPS {
        let phone = random_phone(&mut rng);
        let (line, reparsed) = if i % 2 == 0 {
            let msg = match rng.gen_range(0..4) {
                0 => InboundMessage::Register(Register {
                    phone,
                    location: random_point(&mut rng),
                    name: random_text(&mut rng, 40).replace(' ', "_"),
                    age: rng.gen_range(0..200),
                }),
                1 => InboundMessage::Sos { phone, location: random_point(&mut rng) },
                2 => InboundMessage::ChangeReview { phone, new_date: random_date(&mut rng) },
                _ => InboundMessage::Confirm { phone, date: random_date(&mut rng) },
            };
            let line = encode_inbound(&msg).map_err(|e| format!("{msg:?}: {e}"))?;
            let back = parse_inbound(&line).map_err(|e| format!("{line}: {e}"))?;
            check(back == msg, || format!("{line} parsed to {back:?}"))?;
            (line.clone(), encode_inbound(&back).unwrap())
        } else {
            let msg = match rng.gen_range(0..5) {
                0 => OutboundMessage::Assign {
                    phone,
                    facility_id: rng.gen_range(1..100_000),
                    facility_name: random_text(&mut rng, 20),
                    distance_km: f64::from(rng.gen_range(0..200_000u32)) / 10.0,
                },
                1 => OutboundMessage::Remind { phone, review_date: random_date(&mut rng) },
                2 => OutboundMessage::Advice {
                    phone,
                    trimester: [Trimester::First, Trimester::Second, Trimester::Third][rng.gen_range(0..3)],
                    text: random_text(&mut rng, MAX_ADVICE_CHARS),
                },
                3 => OutboundMessage::Rescue {
                    phone,
                    vehicle: [Vehicle::Car, Vehicle::LifeBoat, Vehicle::Helicopter][rng.gen_range(0..3)],
                    eta_min: rng.gen_range(1..1000),
                },
                _ => OutboundMessage::Err { phone: rng.gen_bool(0.8).then_some(phone), code: ErrCode::BadMsg },
            };
            let line = encode_outbound(&msg).map_err(|e| format!("{msg:?}: {e}"))?;
            let back = parse_outbound(&line).map_err(|e| format!("{line}: {e}"))?;
            check(back == msg, || format!("{line} parsed to {back:?}"))?;
            (line.clone(), encode_outbound(&back).unwrap())
        };
        check(line == reparsed, || format!("{line} re-encoded as {reparsed}"))?;
        if i % 2 == 0 {
            valid.push(line);
        }
    }

    let mut panics = 0;
    let mut accepted = 0;
    for i in 0..FUZZ_LINES {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let len = rng.gen_range(0..120);
            (0..len).map(|_| rng.gen()).collect()
        } else {
            let mut b = valid[rng.gen_range(0..valid.len())].clone().into_bytes();
            for _ in 0..rng.gen_range(1..4) {
                let pos = rng.gen_range(0..=b.len());
                match rng.gen_range(0..3) {
                    0 if pos < b.len() => b[pos] = rng.gen(),
                    1 if pos < b.len() => {
                        b.remove(pos);
                    }
                    _ => b.insert(pos, *[b'|', b'.', b'-', b'0', b'\n', b' ', 0xff].choose(&mut rng).unwrap()),
                }
            }
            b
        };
        match catch_unwind(AssertUnwindSafe(|| parse_inbound_bytes(&bytes))) {
            Err(_) => panics += 1,
            Ok(Ok(msg)) => {
                accepted += 1;
                // anything accepted must be canonical
                let again = encode_inbound(&msg).map_err(|e| e.to_string())?;
                check(again.as_bytes() == bytes.as_slice(), || format!("non-canonical accept: {again}"))?;
            }
            Ok(Err(_)) => {}
        }
    }
    check(panics == 0, || format!("{panics} panics"))?;
    within(PROTOCOL_LIMIT, t.elapsed())?;
    Ok(format!(
        "{ROUND_TRIPS} round trips exact; {FUZZ_LINES} fuzz lines, 0 panics, {accepted} canonical accepts"
    ))
}

fn duplicate_rejection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let facilities = parse_facilities(TABLE3_CSV).unwrap();
    let mut svc = Service::new(Settings::default(), facilities, start()).unwrap();
    let mut registered = Vec::new();
    let mut attempts = 0;
    for i in 0..9 {
        let phone = format!("0750{i:07}");
        let out = svc.ingest(reg_line(&phone, 36.19, 44.01).as_bytes(), start());
        check(matches!(out[0], OutboundMessage::Assign { .. }), || format!("{out:?}"))?;
        registered.push(phone);
    }
    for _ in 0..1_000 {
        let phone = registered.choose(&mut rng).unwrap();
        let before: Vec<u32> = svc.registry().facilities().iter().map(|f| f.registered_count).collect();
        let women = svc.registry().women().count();
        let line = format!(
            "REG|{phone}|{:.6}|{:.6}|Other|{}",
            rng.gen_range(35.0..37.0),
            rng.gen_range(43.0..45.0),
            rng.gen_range(10..=60)
        );
        let out = svc.ingest(line.as_bytes(), start());
        attempts += 1;
        let expected = OutboundMessage::Err { phone: Some(phone.parse().unwrap()), code: ErrCode::Dup };
        check(out == vec![expected], || format!("{line} -> {out:?}"))?;
        let after: Vec<u32> = svc.registry().facilities().iter().map(|f| f.registered_count).collect();
        check(before == after && women == svc.registry().women().count(), || "occupancy changed".into())?;
    }
    Ok(format!("{attempts} re-registrations all ERR DUP, occupancy unchanged"))
}

fn advice_lifecycle() -> Outcome {
    let mut svc = Service::new(Settings::default(), parse_facilities(TABLE3_CSV).unwrap(), start()).unwrap();
    let phone: PhoneId = "07504432147".parse().unwrap();
    svc.ingest(reg_line(phone.as_str(), 36.19, 44.01).as_bytes(), start());
    let mut server_advice = Vec::new();
    let mut week = 2;
    for day in 0..PREGNANCY_WEEKS * 7 - 7 {
        let now = start() + Days::new(day);
        if day % 28 == 0 {
            svc.record_review(&phone, MdFields::new(week, now.date() + Days::new(28)), now)
                .map_err(|e| e.to_string())?;
            week += 4;
        }
        for msg in svc.tick(now) {
            if let OutboundMessage::Advice { trimester, text, .. } = msg {
                server_advice.push((trimester.number(), text));
            }
        }
    }
    let ledger = svc.scheduler().ledger();
    let id_code = svc.registry().lookup(&phone).unwrap().id_code;
    let trimesters: Vec<u8> = ledger.iter().map(|r| r.trimester.number()).collect();
    check(trimesters == [1, 2, 3], || format!("ledger trimesters {trimesters:?}"))?;
    check(server_advice.len() == 3, || format!("{} ADVICE messages", server_advice.len()))?;
    for row in ledger {
        check(
            row.who_advisement == Advisor::Server
                && row.type_of_advice == AdviceType::Normal
                && row.advice_done
                && row.id_code == id_code
                && row.phone == phone
                && row.message.chars().count() <= MAX_ADVICE_CHARS,
            || format!("bad ledger row {row:?}"),
        )?;
    }
    Ok("3 server advices in trimester order 1,2,3 with conforming ledger rows".into())
}

fn determinism_and_replay() -> Outcome {
    let root = env!("CARGO_MANIFEST_DIR");
    let mut options = ScenarioOptions::table3(42);
    options.facilities = materna::registry::load_facilities_file(format!("{root}/data/erbil.csv")).unwrap();
    let path = format!("{root}/data/erbil_pregnancies.scenario");
    let a = cmd_scenario(&path, &options).map_err(|e| e.to_string())?;
    let b = cmd_scenario(&path, &options).map_err(|e| e.to_string())?;
    let (ra, rb) = (a.report.to_string(), b.report.to_string());
    check(ra == rb, || "reports differ between runs".into())?;
    check(a.service.log().to_text() == b.service.log().to_text(), || "logs differ between runs".into())?;
    check(a.report == a.live, || "live counters differ from log-derived counters".into())?;

    let events = parse_log(&a.service.log().to_text()).map_err(|e| e.to_string())?;
    let restored = Service::restore(&events).map_err(|e| e.to_string())?;
    check(restored.state() == a.service.state(), || "restored state differs".into())?;
    let cut = events.len() / 2;
    let head = Service::restore(&events[..cut]).map_err(|e| e.to_string())?;
    let snap = serde_json::to_string(&head.snapshot()).unwrap();
    let resumed = Service::from_snapshot(serde_json::from_str(&snap).unwrap(), &events[cut..]).map_err(|e| e.to_string())?;
    check(resumed.state() == a.service.state(), || "snapshot + tail state differs".into())?;
    Ok(format!(
        "{} events, {} messages; reports identical, restore and snapshot resume equal live",
        events.len(),
        a.report.messages_total()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("table3_reproduction", table3_reproduction),
        ("selection_oracle_equivalence", selection_oracle),
        ("capacity_linearizability", capacity_linearizability),
        ("reminder_window", reminder_window),
        ("protocol_round_trip_and_fuzz", protocol_round_trip_and_fuzz),
        ("duplicate_rejection", duplicate_rejection),
        ("advice_lifecycle", advice_lifecycle),
        ("determinism_and_replay", determinism_and_replay),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.3} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.3} s): {detail}");
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
