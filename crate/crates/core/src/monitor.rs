//! Streaming risk monitor: scores the next action before it is revealed,
//! then absorbs the revealed turn.
//!
//! Independent dialogues can advance in lockstep through [`Monitor`], which
//! batches the network passes across sessions; each session only ever sees
//! its own revealed turns.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::bundle::ModelBundle;
use crate::data::Turn;
use crate::detector::{Decision, FiredRule, RiskTrace};
use crate::embedding::{ContextQuery, StateEncoder, StepQuery};
use crate::error::{Error, Result};
use crate::manifold::stack;
use crate::markov::Prev;
use crate::proactive::{expected_risk, PredictedDistribution};

/// Risk assessment for the upcoming turn `turn`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assessment {
    pub turn: usize,
    pub risk: f64,
    pub velocity: f64,
    pub alert: bool,
    pub rule: FiredRule,
    /// (cluster, renormalized probability) of the predicted Top-M set.
    pub top_clusters: Vec<(usize, f64)>,
}

/// Per-dialogue monitoring state.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub task: String,
    turns: Vec<Turn>,
    prev_state: Option<Array1<f64>>,
    prev_cluster: Prev,
    clusters: Vec<usize>,
    trace: RiskTrace,
}

impl Session {
    pub fn new(id: &str, task: &str) -> Self {
        Session {
            id: id.to_string(),
            task: task.to_string(),
            turns: Vec::new(),
            prev_state: None,
            prev_cluster: Prev::Start,
            clusters: Vec::new(),
            trace: RiskTrace::new(),
        }
    }

    /// Number of turns revealed so far.
    pub fn revealed(&self) -> usize {
        self.turns.len()
    }

    pub fn trace(&self) -> &RiskTrace {
        &self.trace
    }

    pub fn into_trace(self) -> RiskTrace {
        self.trace
    }

    pub fn clusters(&self) -> &[usize] {
        &self.clusters
    }
}

/// Frozen bundle plus the encoder that turns partial dialogues into states.
#[derive(Clone, Copy)]
pub struct Monitor<'a> {
    pub bundle: &'a ModelBundle,
    pub encoder: &'a dyn StateEncoder,
}

impl<'a> Monitor<'a> {
    pub fn new(bundle: &'a ModelBundle, encoder: &'a dyn StateEncoder) -> Result<Self> {
        if encoder.mode() != bundle.config.provider_mode {
            return Err(Error::ModeMismatch(format!(
                "bundle expects {:?} states, provider gives {:?}",
                bundle.config.provider_mode,
                encoder.mode()
            )));
        }
        Ok(Monitor { bundle, encoder })
    }

    /// Score the next, not yet revealed, turn of every session.
    pub fn assess(&self, sessions: &mut [&mut Session]) -> Result<Vec<Assessment>> {
        if sessions.is_empty() {
            return Ok(Vec::new());
        }
        let bundle = self.bundle;
        let score_net = bundle.score_net.as_ref();
        let rows = sessions
            .iter()
            .map(|s| {
                let encoded = self.encoder.context(&ContextQuery {
                    id: &s.id,
                    task: &s.task,
                    visible: &s.turns,
                })?;
                Ok(encoded.pooled(score_net)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let contexts = stack(&rows)?;
        let logits = bundle.head.forward_batch(contexts.view())?;
        let binary = match (&bundle.binary, bundle.config.binary_baseline) {
            (Some(b), true) => Some(b.0.forward_batch(contexts.view())?),
            _ => None,
        };
        let mut out = Vec::with_capacity(sessions.len());
        for (n, s) in sessions.iter_mut().enumerate() {
            let dist = PredictedDistribution::from_logits(
                logits.row(n).as_slice().expect("contiguous"),
                bundle.config.top_m,
            )?;
            let risk = match &binary {
                Some(b) => crate::nn::softmax(b.row(n).as_slice().expect("contiguous"))[1],
                None => expected_risk(&dist, s.prev_cluster, &bundle.transitions)?.value,
            };
            let Decision {
                alert,
                rule,
                velocity,
            } = s.trace.push(risk, &bundle.thresholds);
            out.push(Assessment {
                turn: s.turns.len(),
                risk,
                velocity,
                alert,
                rule,
                top_clusters: dist.top_m,
            });
        }
        Ok(out)
    }

    /// Reveal one turn per session; returns the prototype each action
    /// quantizes to.
    pub fn observe(&self, sessions: &mut [&mut Session], turns: Vec<Turn>) -> Result<Vec<usize>> {
        if sessions.len() != turns.len() {
            return Err(Error::ShapeMismatch);
        }
        if sessions.is_empty() {
            return Ok(Vec::new());
        }
        let bundle = self.bundle;
        let score_net = bundle.score_net.as_ref();
        let mut states = Vec::with_capacity(sessions.len());
        let mut inputs = Vec::with_capacity(sessions.len());
        for (s, turn) in sessions.iter_mut().zip(turns) {
            s.turns.push(turn);
            let encoded = self.encoder.step(&StepQuery {
                id: &s.id,
                task: &s.task,
                visible: &s.turns,
            })?;
            let state = encoded.pooled(score_net)?.0;
            inputs.push(match (&s.prev_state, bundle.config.absolute_states) {
                (Some(prev), false) => &state - prev,
                _ => state.clone(),
            });
            states.push(state);
        }
        let projected: Array2<f64> = bundle.projector.apply_batch(&stack(&inputs)?)?;
        let mut clusters = Vec::with_capacity(sessions.len());
        for ((s, state), row) in sessions.iter_mut().zip(states).zip(projected.rows()) {
            let z = bundle.codebook.quantize(row)?;
            s.prev_state = Some(state);
            s.prev_cluster = Prev::Cluster(z);
            s.clusters.push(z);
            clusters.push(z);
        }
        Ok(clusters)
    }

    /// Assess then reveal one turn of a single session.
    pub fn step(&self, session: &mut Session, turn: Turn) -> Result<Assessment> {
        let a = self.assess(&mut [&mut *session])?.remove(0);
        self.observe(&mut [session], vec![turn])?;
        Ok(a)
    }
}
