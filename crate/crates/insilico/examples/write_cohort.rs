//! Regenerates `data/cohort.json` from the cohort generator.

use bolus_insilico::cohort::{generate_cohort, COHORT_SEED, COHORT_SIZE};

fn main() {
    let cohort = generate_cohort(COHORT_SEED, COHORT_SIZE);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/cohort.json");
    std::fs::write(path, cohort.to_json().expect("serializable") + "\n").expect("writable data dir");
    println!("wrote {} patients to {path}", cohort.patients.len());
}
