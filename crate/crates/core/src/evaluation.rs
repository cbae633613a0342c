//! Proactive evaluation loop and breach-localization metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::data::{Outcome, Trajectory};
use crate::detector::RiskTrace;
use crate::embedding::StateEncoder;
use crate::error::{Error, Result};
use crate::monitor::{Monitor, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub length: usize,
    pub breach_step: usize,
    pub predicted: Option<usize>,
    pub step_hit: bool,
    pub agent_hit: bool,
    pub eta: f64,
}

impl EvalRow {
    /// Score a predicted alert step against the annotation.
    pub fn score(traj: &Trajectory, predicted: Option<usize>) -> Result<EvalRow> {
        let ann = traj
            .annotation
            .as_ref()
            .filter(|_| traj.outcome == Outcome::Failure)
            .ok_or_else(|| Error::UnannotatedTrajectory(traj.id.clone()))?;
        let length = traj.len();
        let (step_hit, agent_hit, eta) = match predicted {
            Some(t) => (
                t == ann.breach_step,
                traj.turns.get(t).is_some_and(|turn| turn.agent == ann.breach_agent),
                (t + 1) as f64 / length as f64,
            ),
            None => (false, false, 1.0),
        };
        Ok(EvalRow {
            id: traj.id.clone(),
            length,
            breach_step: ann.breach_step,
            predicted,
            step_hit,
            agent_hit,
            eta,
        })
    }

    pub fn early(&self) -> bool {
        self.predicted.is_some_and(|t| t < self.breach_step)
    }

    pub fn late(&self) -> bool {
        self.predicted.is_some_and(|t| t > self.breach_step)
    }

    pub fn missed(&self) -> bool {
        self.predicted.is_none()
    }
}

/// Trajectories advanced together in one lockstep batch.
pub const LOCKSTEP_CHUNK: usize = 64;

/// Advance every trajectory turn by turn in lockstep. With `stop_at_alert`
/// a trajectory leaves the batch at its first alert, so later turns are
/// never revealed to the encoder.
pub fn run_lockstep(
    trajs: &[&Trajectory],
    bundle: &ModelBundle,
    encoder: &dyn StateEncoder,
    stop_at_alert: bool,
) -> Result<Vec<RiskTrace>> {
    let monitor = Monitor::new(bundle, encoder)?;
    let mut sessions: Vec<Session> = trajs.iter().map(|t| Session::new(&t.id, &t.task)).collect();
    let mut active: Vec<usize> = (0..trajs.len()).filter(|&i| !trajs[i].turns.is_empty()).collect();
    let mut t = 0;
    while !active.is_empty() {
        let mut refs = select(&mut sessions, &active);
        let assessed = monitor.assess(&mut refs)?;
        let keep: Vec<usize> = active
            .iter()
            .zip(&assessed)
            .filter(|(_, a)| !(stop_at_alert && a.alert))
            .map(|(&i, _)| i)
            .collect();
        let turns = keep.iter().map(|&i| trajs[i].turns[t].clone()).collect();
        let mut refs = select(&mut sessions, &keep);
        monitor.observe(&mut refs, turns)?;
        t += 1;
        active = keep.into_iter().filter(|&i| trajs[i].turns.len() > t).collect();
    }
    Ok(sessions.into_iter().map(Session::into_trace).collect())
}

fn select<'s>(sessions: &'s mut [Session], idx: &[usize]) -> Vec<&'s mut Session> {
    let mut wanted = idx.iter().peekable();
    sessions
        .iter_mut()
        .enumerate()
        .filter_map(|(i, s)| {
            if wanted.peek() == Some(&&i) {
                wanted.next();
                Some(s)
            } else {
                None
            }
        })
        .collect()
}

/// Run the monitor over a trajectory until the first alert. Turns at or
/// after the alert are never revealed to the encoder.
pub fn run_until_alert(traj: &Trajectory, bundle: &ModelBundle, encoder: &dyn StateEncoder) -> Result<RiskTrace> {
    Ok(run_lockstep(&[traj], bundle, encoder, true)?.remove(0))
}

/// Risk of every turn of each trajectory, without stopping at alerts.
pub fn risk_series(trajs: &[&Trajectory], bundle: &ModelBundle, encoder: &dyn StateEncoder) -> Result<Vec<Vec<f64>>> {
    let chunks: Vec<Vec<RiskTrace>> = trajs
        .par_chunks(LOCKSTEP_CHUNK)
        .map(|c| run_lockstep(c, bundle, encoder, false))
        .collect::<Result<_>>()?;
    Ok(chunks
        .into_iter()
        .flatten()
        .map(|tr| tr.records.iter().map(|r| r.risk).collect())
        .collect())
}

pub fn evaluate_trajectory(
    traj: &Trajectory,
    bundle: &ModelBundle,
    encoder: &dyn StateEncoder,
) -> Result<(EvalRow, RiskTrace)> {
    if traj.outcome != Outcome::Failure || traj.annotation.is_none() {
        return Err(Error::UnannotatedTrajectory(traj.id.clone()));
    }
    let trace = run_until_alert(traj, bundle, encoder)?;
    Ok((EvalRow::score(traj, trace.alert_step)?, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub step_accuracy: f64,
    pub agent_accuracy: f64,
    pub early_rate: f64,
    pub late_rate: f64,
    pub missed_rate: f64,
    pub mean_eta: f64,
    /// Success trajectories scored for false alarms.
    pub n_success: usize,
    /// Fraction of success trajectories with any alert.
    pub false_alarm_rate: Option<f64>,
    pub rows: Vec<EvalRow>,
}

/// Mean of the indicator columns. Rows are ordered by id first, so the
/// result does not depend on input order.
pub fn aggregate(rows: Vec<EvalRow>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut rows = rows;
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(EvalReport {
        n: rows.len(),
        step_accuracy: mean(&|r| ind(r.step_hit)),
        agent_accuracy: mean(&|r| ind(r.agent_hit)),
        early_rate: mean(&|r| ind(r.early())),
        late_rate: mean(&|r| ind(r.late())),
        missed_rate: mean(&|r| ind(r.missed())),
        mean_eta: mean(&|r| r.eta),
        n_success: 0,
        false_alarm_rate: None,
        rows,
    })
}

/// Per-trajectory traces keyed by id, in id order.
pub type Traces = Vec<(String, RiskTrace)>;

/// Evaluate failures for localization and successes for false alarms.
/// Chunks of trajectories run in parallel; results are merged by id.
pub fn evaluate(
    trajs: &[&Trajectory],
    bundle: &ModelBundle,
    encoder: &dyn StateEncoder,
) -> Result<(EvalReport, Traces)> {
    let chunks: Vec<Vec<RiskTrace>> = trajs
        .par_chunks(LOCKSTEP_CHUNK)
        .map(|c| run_lockstep(c, bundle, encoder, true))
        .collect::<Result<_>>()?;
    let results = trajs
        .iter()
        .zip(chunks.into_iter().flatten())
        .map(|(t, trace)| {
            let row = match t.outcome {
                Outcome::Failure => Some(EvalRow::score(t, trace.alert_step)?),
                _ => None,
            };
            Ok((row, t.id.clone(), trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut successes = 0usize;
    let mut alarms = 0usize;
    for (row, id, trace) in results {
        match row {
            Some(r) => rows.push(r),
            None => {
                successes += 1;
                if trace.alert_step.is_some() {
                    alarms += 1;
                }
            }
        }
        traces.push((id, trace));
    }
    traces.sort_by(|a, b| a.0.cmp(&b.0));
    let mut report = aggregate(rows)?;
    report.n_success = successes;
    report.false_alarm_rate = (successes > 0).then(|| alarms as f64 / successes as f64);
    Ok((report, traces))
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned two-column summary; η is printed as a percentage.
    pub fn to_table(&self) -> String {
        let pct = |v: f64| format!("{:.2}", v * 100.0);
        let mut lines = vec![
            ("failures", self.n.to_string()),
            ("step accuracy (%)", pct(self.step_accuracy)),
            ("agent accuracy (%)", pct(self.agent_accuracy)),
            ("early rate (%)", pct(self.early_rate)),
            ("late rate (%)", pct(self.late_rate)),
            ("missed rate (%)", pct(self.missed_rate)),
            ("mean eta (%)", pct(self.mean_eta)),
            ("successes", self.n_success.to_string()),
        ];
        if let Some(f) = self.false_alarm_rate {
            lines.push(("false alarm rate (%)", pct(f)));
        }
        let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out: String = lines
            .iter()
            .map(|(k, v)| format!("{k:<width$}  {v:>8}\n"))
            .collect();
        out.push_str("eta counts missed detections as 1.0\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub n: usize,
    pub trials: usize,
    /// Mean over trajectories of 1/L.
    pub analytic_step_accuracy: f64,
    /// Mean over trajectories of the share of turns taken by the breach agent.
    pub analytic_agent_accuracy: f64,
    /// Mean over trajectories of 0.5 + 1/(2L).
    pub analytic_eta: f64,
    pub mc_step_accuracy: f64,
    pub mc_agent_accuracy: f64,
    pub mc_eta: f64,
    /// Standard error of `mc_step_accuracy` around the analytic value.
    pub step_std_error: f64,
}

/// Uniform-guess detector: exact expectations alongside a Monte-Carlo estimate.
pub fn random_baseline(trajs: &[&Trajectory], seed: u64, trials: usize) -> Result<RandomBaseline> {
    let annotated: Vec<(&Trajectory, usize, &str)> = trajs
        .iter()
        .filter_map(|t| {
            let a = t.annotation.as_ref().filter(|_| t.outcome == Outcome::Failure)?;
            Some((*t, a.breach_step, a.breach_agent.as_str()))
        })
        .collect();
    if annotated.is_empty() || trials == 0 {
        return Err(Error::EmptyRows);
    }
    let n = annotated.len() as f64;
    let mut analytic_step = 0.0;
    let mut analytic_agent = 0.0;
    let mut analytic_eta = 0.0;
    let mut variance = 0.0;
    for (t, _, agent) in &annotated {
        let l = t.len() as f64;
        let p = 1.0 / l;
        analytic_step += p;
        analytic_agent += t.turns.iter().filter(|x| x.agent == *agent).count() as f64 / l;
        analytic_eta += 0.5 + 1.0 / (2.0 * l);
        variance += p * (1.0 - p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hits, mut agent_hits, mut eta) = (0u64, 0u64, 0.0);
    for _ in 0..trials {
        for (t, breach, agent) in &annotated {
            let guess = rng.random_range(0..t.len());
            hits += (guess == *breach) as u64;
            agent_hits += (t.turns[guess].agent == *agent) as u64;
            eta += (guess + 1) as f64 / t.len() as f64;
        }
    }
    let draws = n * trials as f64;
    Ok(RandomBaseline {
        n: annotated.len(),
        trials,
        analytic_step_accuracy: analytic_step / n,
        analytic_agent_accuracy: analytic_agent / n,
        analytic_eta: analytic_eta / n,
        mc_step_accuracy: hits as f64 / draws,
        mc_agent_accuracy: agent_hits as f64 / draws,
        mc_eta: eta / draws,
        step_std_error: (variance / (n * n * trials as f64)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Annotation, Turn};
    use approx::assert_abs_diff_eq;

    fn traj(id: &str, len: usize, breach: usize, agent: &str) -> Trajectory {
        Trajectory {
            id: id.into(),
            task: "t".into(),
            turns: (0..len)
                .map(|i| Turn {
                    index: i,
                    agent: format!("agent{}", i % 4),
                    content: format!("turn {i}"),
                })
                .collect(),
            outcome: Outcome::Failure,
            annotation: Some(Annotation {
                breach_step: breach,
                breach_agent: agent.into(),
            }),
        }
    }

    #[test]
    fn row_examples() {
        let t = traj("a", 12, 6, "agent2");
        let r = EvalRow::score(&t, Some(6)).unwrap();
        assert!(r.step_hit && r.agent_hit);
        assert_abs_diff_eq!(r.eta, 7.0 / 12.0, epsilon = 1e-12);

        let r = EvalRow::score(&t, None).unwrap();
        assert!(!r.step_hit && r.missed());
        assert_eq!(r.eta, 1.0);

        let r = EvalRow::score(&t, Some(2)).unwrap();
        assert!(!r.step_hit && r.agent_hit && r.early());

        let mut s = t.clone();
        s.annotation = None;
        assert!(matches!(EvalRow::score(&s, Some(1)), Err(Error::UnannotatedTrajectory(_))));
    }

    #[test]
    fn aggregate_examples() {
        let t = traj("a", 10, 4, "agent0");
        let rows: Vec<EvalRow> = [Some(4), Some(1), None, Some(7)]
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut r = EvalRow::score(&t, *p).unwrap();
                r.id = format!("r{i}");
                r
            })
            .collect();
        let rep = aggregate(rows.clone()).unwrap();
        assert_eq!(rep.step_accuracy, 0.25);
        assert_abs_diff_eq!(
            rep.early_rate + rep.late_rate + rep.missed_rate + rep.step_accuracy,
            1.0,
            epsilon = 1e-12
        );
        let mut reversed = rows;
        reversed.reverse();
        assert_eq!(aggregate(reversed).unwrap(), rep);
        assert!(matches!(aggregate(vec![]), Err(Error::EmptyRows)));

        let all = aggregate(vec![EvalRow::score(&t, Some(4)).unwrap()]).unwrap();
        assert_eq!(all.step_accuracy, 1.0);
    }

    #[test]
    fn random_baseline_analytic() {
        let ts: Vec<Trajectory> = (0..5).map(|i| traj(&format!("{i}"), 10, i, "agent1")).collect();
        let refs: Vec<&Trajectory> = ts.iter().collect();
        let rb = random_baseline(&refs, 1, 2000).unwrap();
        assert_abs_diff_eq!(rb.analytic_step_accuracy, 0.10, epsilon = 1e-12);
        assert_abs_diff_eq!(rb.analytic_eta, 0.55, epsilon = 1e-12);
        assert!((rb.mc_step_accuracy - rb.analytic_step_accuracy).abs() < 3.0 * rb.step_std_error);
    }
}
