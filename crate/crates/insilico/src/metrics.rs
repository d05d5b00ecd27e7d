//! Glycemic outcome metrics and cohort-level comparison.

use std::fmt;

use bolus_core::pg::GlucoseTrace;
use bolus_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::protocol::{DAY_S, HOUR_S};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pct_below_54: f64,
    pub pct_below_70: f64,
    pub pct_in_70_180: f64,
    pub pct_above_180: f64,
    pub pct_above_250: f64,
    pub mean_glucose: f64,
    pub sd_glucose: f64,
    /// Mean of the readings taken at 07:00, if the trace covers that clock time.
    pub mean_glucose_at_0700: Option<f64>,
}

/// Metrics over every reading of `trace`. The standard deviation uses `n - 1`.
pub fn compute_metrics(trace: &GlucoseTrace) -> Result<MetricsReport> {
    let g: Vec<f64> = trace.samples().iter().map(|s| s.1).collect();
    if g.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let n = g.len() as f64;
    let pct = |pred: &dyn Fn(f64) -> bool| 100.0 * g.iter().filter(|&&v| pred(v)).count() as f64 / n;
    let mean = g.iter().sum::<f64>() / n;
    let sd = if g.len() > 1 {
        (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let at_seven: Vec<f64> = trace
        .samples()
        .iter()
        .filter(|(t, _)| (t.rem_euclid(DAY_S) - 7.0 * HOUR_S).abs() < 1e-6)
        .map(|s| s.1)
        .collect();
    Ok(MetricsReport {
        pct_below_54: pct(&|v| v < 54.0),
        pct_below_70: pct(&|v| v < 70.0),
        pct_in_70_180: pct(&|v| (70.0..=180.0).contains(&v)),
        pct_above_180: pct(&|v| v > 180.0),
        pct_above_250: pct(&|v| v > 250.0),
        mean_glucose: mean,
        sd_glucose: sd,
        mean_glucose_at_0700: (!at_seven.is_empty())
            .then(|| at_seven.iter().sum::<f64>() / at_seven.len() as f64),
    })
}

pub type MetricRow = (&'static str, fn(&MetricsReport) -> f64);

/// Row labels and accessors in the order of the comparison table.
pub const METRIC_ROWS: [MetricRow; 8] = [
    ("% time <54 mg/dL", |m| m.pct_below_54),
    ("% time <70 mg/dL", |m| m.pct_below_70),
    ("% time 70-180 mg/dL", |m| m.pct_in_70_180),
    ("% time >180 mg/dL", |m| m.pct_above_180),
    ("% time >250 mg/dL", |m| m.pct_above_250),
    ("Mean glucose (mg/dL)", |m| m.mean_glucose),
    ("SD glucose (mg/dL)", |m| m.sd_glucose),
    ("Mean glucose at 07:00", |m| m.mean_glucose_at_0700.unwrap_or(f64::NAN)),
];

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median and inter-quartile range.
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    (quantile(&v, 0.5), quantile(&v, 0.75) - quantile(&v, 0.25))
}

/// Two-sided exact Wilcoxon signed-rank p-value for paired samples. Zero differences are
/// dropped and tied magnitudes get average ranks; the null distribution is enumerated
/// over all sign patterns of the realized ranks. Returns 1 when every difference is zero.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> f64 {
    let mut d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|v| v.is_finite() && v.abs() > 1e-9)
        .collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    assert!(n <= 24, "exact enumeration limited to 24 pairs");
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && (d[j + 1].abs() - d[i].abs()).abs() < 1e-9 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].iter_mut().for_each(|r| *r = avg);
        i = j + 1;
    }
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let observed = (w_plus - total / 2.0).abs();
    let mut extreme = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| ranks[k]).sum();
        if (w - total / 2.0).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

/// Paired comparison of two policies over a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub control_median: f64,
    pub control_iqr: f64,
    pub proposed_median: f64,
    pub proposed_iqr: f64,
    pub p_value: f64,
}

pub fn compare(control: &[MetricsReport], proposed: &[MetricsReport]) -> Vec<ComparisonRow> {
    METRIC_ROWS
        .iter()
        .map(|(name, get)| {
            let c: Vec<f64> = control.iter().map(get).collect();
            let p: Vec<f64> = proposed.iter().map(get).collect();
            let (cm, ci) = median_iqr(&c);
            let (pm, pi) = median_iqr(&p);
            ComparisonRow {
                metric: name.to_string(),
                control_median: cm,
                control_iqr: ci,
                proposed_median: pm,
                proposed_iqr: pi,
                p_value: wilcoxon_signed_rank(&c, &p),
            }
        })
        .collect()
}

/// Text table: median (IQR) per policy and the paired p-value.
pub struct ComparisonTable<'a> {
    pub title: &'a str,
    pub rows: &'a [ComparisonRow],
}

impl fmt::Display for ComparisonTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.title)?;
        writeln!(f, "{:<24}{:>16}{:>16}{:>10}", "Metric", "Control", "Proposed", "p value")?;
        for r in self.rows {
            let c = format!("{:.1} ({:.1})", r.control_median, r.control_iqr);
            let p = format!("{:.1} ({:.1})", r.proposed_median, r.proposed_iqr);
            writeln!(f, "{:<24}{:>16}{:>16}{:>10.3}", r.metric, c, p, r.p_value)?;
        }
        Ok(())
    }
}
