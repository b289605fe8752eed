//! Runs a seeded scenario twice and checks the reports agree with the log.

use materna::registry::load_facilities_file;
use materna::sim::{run_scenario, ScenarioOptions};

fn main() {
    let root = env!("CARGO_MANIFEST_DIR");
    let text = std::fs::read_to_string(format!("{root}/data/erbil_pregnancies.scenario")).unwrap();
    let mut options = ScenarioOptions::table3(42);
    options.facilities = load_facilities_file(format!("{root}/data/erbil.csv")).unwrap();

    let first = run_scenario(&text, &options).unwrap();
    let second = run_scenario(&text, &options).unwrap();
    print!("{}", first.report);
    println!("identical on rerun: {}", first.report.to_string() == second.report.to_string());
    println!("live counters match log: {}", first.report == first.live);
}
