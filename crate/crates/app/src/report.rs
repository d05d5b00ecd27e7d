//! Text tables and delimited files written by `simulate` and `evaluate`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use bolus_insilico::metrics::{compare, ComparisonTable, METRIC_ROWS};
use bolus_insilico::protocol::{write_boluses_csv, write_cgm_csv, write_meals_csv};

use crate::error::AppResult;
use crate::pipeline::{PolicyKind, ScenarioOutcome};

/// One comparison table per scenario, control against proposed.
pub fn comparison_text(outcomes: &[ScenarioOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        let control = o.metrics(PolicyKind::Calculator);
        let proposed = o.metrics(PolicyKind::Advisor);
        if control.is_empty() || proposed.is_empty() {
            continue;
        }
        let rows = compare(&control, &proposed);
        let title = format!("Scenario {} (#Simulations={})", o.scenario.label, control.len());
        out.push_str(&ComparisonTable { title: &title, rows: &rows }.to_string());
        out.push('\n');
    }
    out
}

/// Per-patient metrics, one table per scenario and policy.
pub fn metrics_text(outcomes: &[ScenarioOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        out.push_str(&format!("Scenario {}\n", o.scenario.label));
        out.push_str(&format!(
            "{:<12}{:<12}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
            "patient", "policy", "<54", "<70", "70-180", ">180", ">250", "mean", "sd", "07:00"
        ));
        for p in &o.patients {
            for r in &p.runs {
                let m = &r.metrics;
                out.push_str(&format!(
                    "{:<12}{:<12}{:>8.1}{:>8.1}{:>8.1}{:>8.1}{:>8.1}{:>8.1}{:>8.1}{:>8}\n",
                    p.patient_id,
                    r.policy.as_str(),
                    m.pct_below_54,
                    m.pct_below_70,
                    m.pct_in_70_180,
                    m.pct_above_180,
                    m.pct_above_250,
                    m.mean_glucose,
                    m.sd_glucose,
                    m.mean_glucose_at_0700
                        .map_or("-".to_string(), |v| format!("{v:.1}")),
                ));
            }
        }
        out.push('\n');
    }
    out
}

fn create(path: &Path) -> AppResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_metrics_csv(path: &Path, outcomes: &[ScenarioOutcome]) -> AppResult<()> {
    let mut w = create(path)?;
    write!(w, "scenario,patient,policy")?;
    for (name, _) in METRIC_ROWS {
        write!(w, ",\"{name}\"")?;
    }
    writeln!(w)?;
    for o in outcomes {
        for p in &o.patients {
            for r in &p.runs {
                write!(w, "{},{},{}", o.scenario.slug(), p.patient_id, r.policy)?;
                for (_, get) in METRIC_ROWS {
                    write!(w, ",{:.6}", get(&r.metrics))?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison_csv(path: &Path, outcomes: &[ScenarioOutcome]) -> AppResult<()> {
    let mut w = create(path)?;
    writeln!(
        w,
        "scenario,metric,control_median,control_iqr,proposed_median,proposed_iqr,p_value"
    )?;
    for o in outcomes {
        let control = o.metrics(PolicyKind::Calculator);
        let proposed = o.metrics(PolicyKind::Advisor);
        if control.is_empty() || proposed.is_empty() {
            continue;
        }
        for r in compare(&control, &proposed) {
            writeln!(
                w,
                "{},\"{}\",{:.6},{:.6},{:.6},{:.6},{:.6}",
                o.scenario.slug(),
                r.metric,
                r.control_median,
                r.control_iqr,
                r.proposed_median,
                r.proposed_iqr,
                r.p_value
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_boluses_table(path: &Path, outcomes: &[ScenarioOutcome]) -> AppResult<()> {
    let mut w = create(path)?;
    writeln!(w, "scenario,patient,policy,meal,time_s,carbs,units")?;
    for o in outcomes {
        for p in &o.patients {
            for r in &p.runs {
                for (k, (b, m)) in r.result.boluses.iter().zip(&r.result.meals).enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{:.3},{:.6}",
                        o.scenario.slug(),
                        p.patient_id,
                        r.policy,
                        k + 1,
                        b.time,
                        m.carbs,
                        b.units
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// CGM, bolus and meal files of every run under `dir/<scenario>/<patient>/`.
pub fn write_traces(dir: &Path, outcomes: &[ScenarioOutcome]) -> AppResult<()> {
    for o in outcomes {
        for p in &o.patients {
            let sub = dir.join(o.scenario.slug()).join(p.patient_id.replace('#', "_"));
            std::fs::create_dir_all(&sub)?;
            for r in &p.runs {
                let name = |kind: &str| sub.join(format!("{}_{kind}.csv", r.policy));
                write_cgm_csv(create(&name("cgm"))?, &r.result)?;
                write_boluses_csv(create(&name("boluses"))?, &r.result)?;
                write_meals_csv(create(&name("meals"))?, &r.result)?;
            }
        }
    }
    Ok(())
}
