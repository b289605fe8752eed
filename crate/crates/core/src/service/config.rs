//! `key=value` configuration file.

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::DispatchConfig;
use crate::scheduler::AdviceTemplates;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("advice templates: {0}")]
    Templates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClockMode {
    Virtual,
    Wall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub id_code_seed: u64,
    pub dispatch: DispatchConfig,
    pub advice_templates_path: Option<PathBuf>,
    pub facilities_path: Option<PathBuf>,
    pub listen_addr: String,
    pub clock_mode: ClockMode,
    /// Days from registration to the intake review.
    pub first_review_days: u32,
    /// Starting instant of the virtual clock.
    pub virtual_start: NaiveDateTime,
    pub event_log_path: Option<PathBuf>,
}

/// Default start of virtual time.
pub fn default_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2012, 11, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

impl Default for Config {
    fn default() -> Self {
        Self {
            id_code_seed: 25502131,
            dispatch: DispatchConfig::default(),
            advice_templates_path: None,
            facilities_path: None,
            listen_addr: "127.0.0.1:8080".into(),
            clock_mode: ClockMode::Virtual,
            first_review_days: 14,
            virtual_start: default_epoch(),
            event_log_path: None,
        }
    }
}

/// The part of the configuration that changes service behaviour; it is
/// written into the event log so replays need no outside files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub id_code_seed: u64,
    pub dispatch: DispatchConfig,
    pub first_review_days: u32,
    pub templates: AdviceTemplates,
}

impl Default for Settings {
    fn default() -> Self {
        Config::default().settings().expect("defaults need no files")
    }
}

impl Config {
    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: String| ConfigError::Line { line, reason };
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| -> Result<f64, ConfigError> {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite() && *x > 0.0)
                    .ok_or_else(|| err(format!("{key} must be a positive number")))
            };
            let path = |v: &str| Some(base.join(v));
            match key {
                "id_code_seed" => {
                    cfg.id_code_seed = value.parse().map_err(|_| err("id_code_seed must be an integer".into()))?
                }
                "heli_threshold_km" => cfg.dispatch.heli_threshold_km = num(value)?,
                "speed_car" => cfg.dispatch.speed_car = num(value)?,
                "speed_boat" => cfg.dispatch.speed_boat = num(value)?,
                "speed_heli" => cfg.dispatch.speed_heli = num(value)?,
                "water_zone_prefix" => {
                    if value.is_empty() {
                        return Err(err("water_zone_prefix must not be empty".into()));
                    }
                    cfg.dispatch.water_zone_prefix = value.to_owned();
                }
                "advice_templates_path" => cfg.advice_templates_path = path(value),
                "facilities_path" => cfg.facilities_path = path(value),
                "event_log_path" => cfg.event_log_path = path(value),
                "listen_addr" => cfg.listen_addr = value.to_owned(),
                "clock_mode" => {
                    cfg.clock_mode = match value {
                        "virtual" => ClockMode::Virtual,
                        "wall" => ClockMode::Wall,
                        _ => return Err(err("clock_mode must be virtual or wall".into())),
                    }
                }
                "first_review_days" => {
                    cfg.first_review_days = value
                        .parse()
                        .ok()
                        .filter(|d| *d > 0)
                        .ok_or_else(|| err("first_review_days must be a positive integer".into()))?
                }
                "virtual_start" => {
                    cfg.virtual_start = NaiveDateTime::parse_from_str(value, "%Y-%m-%dT%H:%M:%S")
                        .map_err(|_| err("virtual_start must be YYYY-MM-DDTHH:MM:SS".into()))?
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn settings(&self) -> Result<Settings, ConfigError> {
        let templates = match &self.advice_templates_path {
            Some(p) => AdviceTemplates::load(p).map_err(|e| ConfigError::Templates(e.to_string()))?,
            None => AdviceTemplates::default(),
        };
        Ok(Settings {
            id_code_seed: self.id_code_seed,
            dispatch: self.dispatch.clone(),
            first_review_days: self.first_review_days,
            templates,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let text = "# desk setup
id_code_seed=100
heli_threshold_km = 20
speed_car=50
water_zone_prefix=LAKE
facilities_path=data/facilities.csv
clock_mode=wall
";
        let cfg = Config::parse(text, Path::new("/etc/materna")).unwrap();
        assert_eq!(cfg.id_code_seed, 100);
        assert_eq!(cfg.dispatch.heli_threshold_km, 20.0);
        assert_eq!(cfg.dispatch.speed_car, 50.0);
        assert_eq!(cfg.dispatch.speed_heli, 150.0);
        assert_eq!(cfg.dispatch.water_zone_prefix, "LAKE");
        assert_eq!(cfg.facilities_path, Some(PathBuf::from("/etc/materna/data/facilities.csv")));
        assert_eq!(cfg.clock_mode, ClockMode::Wall);
    }

    #[test]
    fn rejects_bad_lines() {
        for bad in ["nonsense", "speed_car=-1", "clock_mode=fast", "colour=blue", "first_review_days=0"] {
            assert!(Config::parse(bad, Path::new(".")).is_err(), "{bad}");
        }
    }
}
