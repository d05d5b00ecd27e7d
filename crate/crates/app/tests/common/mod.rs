#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use bolus_app::pipeline::{train_pair, PredictorPair};
use bolus_app::AppConfig;
use bolus_insilico::cohort::Cohort;
use bolus_insilico::protocol::{run_data_collection, SimulationResult};
use chrono::{NaiveDate, NaiveDateTime};

pub struct Fixture {
    pub collection: SimulationResult,
    pub aware: PredictorPair,
    pub free: PredictorPair,
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let patient = &Cohort::shipped().patients[0];
        let (collection, samples) = run_data_collection(patient, 2024).unwrap();
        let config = AppConfig::default();
        Fixture {
            collection,
            aware: train_pair(&samples, true, &config).unwrap(),
            free: train_pair(&samples, false, &config).unwrap(),
        }
    })
}

pub fn clock_origin() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

fn iso(seconds: f64) -> String {
    (clock_origin() + chrono::Duration::seconds(seconds.round() as i64))
        .format("%Y-%m-%dT%H:%M:%S")
        .to_string()
}

/// The fixture's collection week as a clinical trace plus its sibling meals file.
pub fn write_clinical_files(dir: &Path) -> (PathBuf, PathBuf) {
    let f = fixture();
    let trace = dir.join("clinic.csv");
    let mut text = String::from("timestamp,glucose\n");
    for (t, g) in f.collection.cgm.samples() {
        text.push_str(&format!("{},{g:.1}\n", iso(*t)));
    }
    std::fs::write(&trace, text).unwrap();
    let meals = dir.join("clinic.meals.csv");
    let mut text = String::from("time,grams,clinician_bolus\n");
    for (m, b) in f.collection.meals.iter().zip(&f.collection.boluses) {
        text.push_str(&format!("{},{:.0},{:.2}\n", iso(m.time), m.carbs, b.units));
    }
    std::fs::write(&meals, text).unwrap();
    (trace, meals)
}
