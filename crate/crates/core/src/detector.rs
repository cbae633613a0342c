//! Threshold calibration and risk-jump detection over a risk series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PERCENTILE: f64 = 85.0;
pub const DEFAULT_JUMP: f64 = 0.15;
pub const DEFAULT_PANIC_OFFSET: f64 = 0.30;
pub const MIN_CALIBRATION_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CalibrationStrategy {
    /// Nearest-rank percentile of the pooled risks.
    Percentile { p: f64 },
    /// Midpoint between the two centres of an exact 1-D 2-means.
    Kmeans2,
}

impl Default for CalibrationStrategy {
    fn default() -> Self {
        CalibrationStrategy::Percentile {
            p: DEFAULT_PERCENTILE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_base: f64,
    pub delta_jump: f64,
    pub tau_max: f64,
    pub strategy: CalibrationStrategy,
    /// Alert on `R > τ_base` alone (no jump or panic rule).
    #[serde(default)]
    pub static_threshold: bool,
    #[serde(default)]
    pub sample_count: usize,
}

impl Thresholds {
    pub fn new(tau_base: f64, delta_jump: f64, tau_max: f64) -> Result<Self> {
        let th = Thresholds {
            tau_base,
            delta_jump,
            tau_max,
            strategy: CalibrationStrategy::default(),
            static_threshold: false,
            sample_count: 0,
        };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_jump > 0.0) {
            return Err(Error::InvalidConfig("jump threshold must be positive".into()));
        }
        if !(self.tau_max >= self.tau_base) || !self.tau_base.is_finite() || !self.tau_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "panic threshold {} below base threshold {}",
                self.tau_max, self.tau_base
            )));
        }
        Ok(())
    }
}

/// Nearest-rank percentile of a non-empty sample.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::TooFewSamples(0));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("percentile {p} not in [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64) / 100.0 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(sorted.len()) - 1])
}

/// Exact 2-means on the real line: the optimal partition is a split of the
/// sorted sample, found by scanning every split with prefix sums.
pub fn two_means_1d(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples(values.len()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, &v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let sse = |a: usize, b: usize| {
        let m = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a]) - s * s / m
    };
    let mut best = (f64::INFINITY, 1);
    for split in 1..n {
        let cost = sse(0, split) + sse(split, n);
        if cost < best.0 {
            best = (cost, split);
        }
    }
    let split = best.1;
    let low = (prefix[split]) / split as f64;
    let high = (prefix[n] - prefix[split]) / (n - split) as f64;
    Ok((low, high))
}

/// Derive thresholds from pooled per-turn training risks.
pub fn calibrate(
    risks: &[f64],
    strategy: CalibrationStrategy,
    delta_jump: f64,
    panic_offset: f64,
) -> Result<Thresholds> {
    if risks.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::TooFewSamples(risks.len()));
    }
    if !(panic_offset > 0.0) {
        return Err(Error::InvalidConfig("panic offset must be positive".into()));
    }
    let tau_base = match strategy {
        CalibrationStrategy::Percentile { p } => percentile_nearest_rank(risks, p)?,
        CalibrationStrategy::Kmeans2 => {
            let (lo, hi) = two_means_1d(risks)?;
            (lo + hi) / 2.0
        }
    };
    let th = Thresholds {
        tau_base,
        delta_jump,
        tau_max: (tau_base + panic_offset).min(1.0),
        strategy,
        static_threshold: false,
        sample_count: risks.len(),
    };
    th.validate()?;
    Ok(th)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiredRule {
    Jump,
    Panic,
    Static,
    None,
}

impl FiredRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            FiredRule::Jump => "jump",
            FiredRule::Panic => "panic",
            FiredRule::Static => "static",
            FiredRule::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub alert: bool,
    pub rule: FiredRule,
    pub velocity: f64,
}

/// Alert iff `(R > τ_base ∧ ∇R > δ)` or `R > τ_max`; without a predecessor
/// `∇R = R`. The panic rule is reported when both fire.
pub fn decide(risk: f64, previous: Option<f64>, th: &Thresholds) -> Decision {
    decide_from(risk, previous.unwrap_or(0.0), th)
}

fn decide_from(risk: f64, previous: f64, th: &Thresholds) -> Decision {
    let velocity = risk - previous;
    let rule = if th.static_threshold {
        if risk > th.tau_base {
            FiredRule::Static
        } else {
            FiredRule::None
        }
    } else if risk > th.tau_max {
        FiredRule::Panic
    } else if risk > th.tau_base && velocity > th.delta_jump {
        FiredRule::Jump
    } else {
        FiredRule::None
    };
    Decision {
        alert: rule != FiredRule::None,
        rule,
        velocity,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub risk: f64,
    pub velocity: f64,
    pub alert: bool,
    pub rule: FiredRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub records: Vec<TraceRecord>,
    pub alert_step: Option<usize>,
}

impl RiskTrace {
    pub fn new() -> Self {
        RiskTrace {
            records: Vec::new(),
            alert_step: None,
        }
    }

    /// Append the next risk and return its decision.
    pub fn push(&mut self, risk: f64, th: &Thresholds) -> Decision {
        let previous = self.records.last().map(|r| r.risk);
        let d = decide(risk, previous, th);
        self.record(risk, d);
        d
    }

    fn record(&mut self, risk: f64, d: Decision) {
        let t = self.records.len();
        if d.alert && self.alert_step.is_none() {
            self.alert_step = Some(t);
        }
        self.records.push(TraceRecord {
            t,
            risk,
            velocity: d.velocity,
            alert: d.alert,
            rule: d.rule,
        });
    }

    /// CSV with columns `t,risk,velocity,alert,rule`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,risk,velocity,alert,rule\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.t,
                r.risk,
                r.velocity,
                r.alert,
                r.rule.as_str()
            ));
        }
        out
    }
}

impl Default for RiskTrace {
    fn default() -> Self {
        Self::new()
    }
}

/// Run the decision rule over a whole series whose pre-dialogue risk is
/// `baseline`.
pub fn scan(risks: &[f64], th: &Thresholds, baseline: f64) -> RiskTrace {
    let mut trace = RiskTrace::new();
    let mut previous = baseline;
    for &r in risks {
        let d = decide_from(r, previous, th);
        trace.record(r, d);
        previous = r;
    }
    trace
}

/// Full trace with the first alerting step as the breach estimate.
pub fn locate_breach(risks: &[f64], th: &Thresholds) -> RiskTrace {
    scan(risks, th, 0.0)
}
