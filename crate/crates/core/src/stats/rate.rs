use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{StatsError, TrialRecord};

/// Rendering precision for percentages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// `73%`
    Integer,
    /// `73.3%`; exact 0 and 100 render as `0%` and `100%`.
    OneDecimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub fired: u64,
    pub total: u64,
    pub rate: f64,
    pub wilson95: (f64, f64),
    /// Mean intervention level (graded intensity) over the group.
    pub mean_level: f64,
}

impl RateSummary {
    pub fn from_counts(fired: u64, total: u64, level_sum: u64) -> Result<Self, StatsError> {
        let wilson95 = wilson_ci(fired, total, 0.95)?;
        Ok(RateSummary {
            fired,
            total,
            rate: fired as f64 / total as f64,
            wilson95,
            mean_level: level_sum as f64 / total as f64,
        })
    }

    /// Percentage text rounded half-up with integer arithmetic.
    pub fn percent(&self, precision: Precision) -> String {
        let (k, n) = (self.fired, self.total);
        match precision {
            Precision::Integer => format!("{}%", (200 * k + n) / (2 * n)),
            Precision::OneDecimal if k == 0 => "0%".to_string(),
            Precision::OneDecimal if k == n => "100%".to_string(),
            Precision::OneDecimal => {
                let tenths = (2000 * k + n) / (2 * n);
                format!("{}.{}%", tenths / 10, tenths % 10)
            }
        }
    }

    /// `rate% (k/n)` cell text.
    pub fn cell(&self, precision: Precision) -> String {
        format!("{} ({}/{})", self.percent(precision), self.fired, self.total)
    }
}

/// Wilson score interval for `k` successes in `n` trials. The bounds are
/// exactly 0 when `k = 0` and exactly 1 when `k = n`.
pub fn wilson_ci(k: u64, n: u64, confidence: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    if k > n {
        return Err(StatsError::InvalidCounts { k, n });
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::InvalidConfidence(confidence));
    }
    let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Activation rate per group over completed records. Records for which
/// `key` returns `None`, and records without an annotation, are skipped.
pub fn activation_rate<F>(records: &[TrialRecord], key: F) -> BTreeMap<String, RateSummary>
where
    F: Fn(&TrialRecord) -> Option<String>,
{
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for r in records {
        let Some(ann) = &r.annotation else { continue };
        let Some(group) = key(r) else { continue };
        let e = counts.entry(group).or_default();
        e.0 += u64::from(ann.fired);
        e.1 += 1;
        e.2 += u64::from(ann.level);
    }
    counts
        .into_iter()
        .map(|(g, (k, n, lv))| {
            let s = RateSummary::from_counts(k, n, lv).expect("non-empty group with k <= n");
            (g, s)
        })
        .collect()
}

/// Rates for the expected groups; groups with no records are omitted and
/// returned (and logged) separately.
pub fn activation_rate_for<F>(
    records: &[TrialRecord],
    key: F,
    expected: &[String],
) -> (BTreeMap<String, RateSummary>, Vec<String>)
where
    F: Fn(&TrialRecord) -> Option<String>,
{
    let mut rates = activation_rate(records, key);
    rates.retain(|g, _| expected.contains(g));
    let omitted: Vec<String> = expected
        .iter()
        .filter(|g| !rates.contains_key(*g))
        .cloned()
        .collect();
    if !omitted.is_empty() {
        log::warn!("omitting empty groups: {}", omitted.join(", "));
    }
    (rates, omitted)
}
