//! Multi-agent trajectories, their breach annotations, and ingestion from
//! Who&When-style JSON logs.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub agent: String,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

/// Ground-truth first logic breach: the step and the agent acting there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub breach_step: usize,
    pub breach_agent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub task: String,
    pub turns: Vec<Turn>,
    pub outcome: Outcome,
    pub annotation: Option<Annotation>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Breach step, when this is an annotated failure.
    pub fn breach_step(&self) -> Option<usize> {
        self.annotation.as_ref().map(|a| a.breach_step)
    }

    /// Serialize back to the on-disk JSON schema (0-based `mistake_step`).
    pub fn to_json(&self) -> Value {
        let history: Vec<Value> = self
            .turns
            .iter()
            .map(|t| serde_json::json!({ "name": t.agent, "content": t.content }))
            .collect();
        let mut doc = serde_json::json!({ "question": self.task, "history": history });
        if let Some(a) = &self.annotation {
            doc["mistake_step"] = Value::from(a.breach_step as u64);
            doc["mistake_agent"] = Value::from(a.breach_agent.clone());
        }
        doc
    }
}

/// Whether `mistake_step` in source documents counts from 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StepIndexBase {
    #[default]
    Zero,
    One,
}

impl StepIndexBase {
    pub fn from_base(base: u8) -> Option<Self> {
        match base {
            0 => Some(StepIndexBase::Zero),
            1 => Some(StepIndexBase::One),
            _ => None,
        }
    }

    fn offset(self) -> i64 {
        match self {
            StepIndexBase::Zero => 0,
            StepIndexBase::One => 1,
        }
    }
}

fn normalize_agent(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn field_str<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| obj.get(*k).and_then(Value::as_str))
}

/// Parse one trajectory document. Unknown fields are ignored.
pub fn load_trajectory(raw: &[u8], id: &str, base: StepIndexBase) -> Result<Trajectory> {
    let doc: Value =
        serde_json::from_slice(raw).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::MalformedDocument("top level is not an object".into()))?;
    let task = obj
        .get("question")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::MalformedDocument("missing string field `question`".into()))?
        .to_string();
    let history = obj
        .get("history")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::MalformedDocument("missing array field `history`".into()))?;

    let mut turns = Vec::with_capacity(history.len());
    for (index, item) in history.iter().enumerate() {
        let item = item.as_object().ok_or_else(|| {
            Error::MalformedDocument(format!("history[{index}] is not an object"))
        })?;
        let agent = field_str(item, &["name", "agent", "role"]).ok_or_else(|| {
            Error::MalformedDocument(format!("history[{index}] has no agent name"))
        })?;
        if agent.trim().is_empty() {
            return Err(Error::MalformedDocument(format!(
                "history[{index}] has an empty agent name"
            )));
        }
        let content = field_str(item, &["content", "text"]).ok_or_else(|| {
            Error::MalformedDocument(format!("history[{index}] has no content"))
        })?;
        turns.push(Turn {
            index,
            agent: agent.to_string(),
            content: content.to_string(),
        });
    }

    let step = match obj.get("mistake_step") {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => Some(n.as_i64().ok_or_else(|| {
            Error::MalformedDocument(format!("`mistake_step` {n} is not an integer"))
        })?),
        Some(Value::String(s)) => Some(s.trim().parse::<i64>().map_err(|_| {
            Error::MalformedDocument(format!("`mistake_step` {s:?} is not numeric"))
        })?),
        Some(other) => {
            return Err(Error::MalformedDocument(format!(
                "`mistake_step` has unsupported type: {other}"
            )))
        }
    };

    let (outcome, annotation) = match step {
        None => (Outcome::Success, None),
        Some(raw_step) => {
            let step = raw_step - base.offset();
            if step < 0 || step as usize >= turns.len() {
                return Err(Error::AnnotationOutOfRange {
                    step: raw_step,
                    turns: turns.len(),
                });
            }
            let step = step as usize;
            let acting = &turns[step].agent;
            let breach_agent = match obj.get("mistake_agent").and_then(Value::as_str) {
                Some(a) => {
                    if normalize_agent(a) != normalize_agent(acting) {
                        return Err(Error::AgentMismatch {
                            step,
                            annotated: a.to_string(),
                            acting: acting.clone(),
                        });
                    }
                    a.to_string()
                }
                None => acting.clone(),
            };
            (
                Outcome::Failure,
                Some(Annotation {
                    breach_step: step,
                    breach_agent,
                }),
            )
        }
    };

    Ok(Trajectory {
        id: id.to_string(),
        task,
        turns,
        outcome,
        annotation,
    })
}

pub fn load_trajectory_file(path: &Path, base: StepIndexBase) -> Result<Trajectory> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    load_trajectory(&raw, id, base)
}

/// Load every `*.json` file in `dir`, sorted by id. Any failing file fails
/// the whole load, with every failure listed.
pub fn load_dataset(dir: &Path, base: StepIndexBase) -> Result<Vec<Trajectory>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    paths.sort();

    let results: Vec<(PathBuf, Result<Trajectory>)> = paths
        .into_par_iter()
        .map(|p| {
            let r = load_trajectory_file(&p, base);
            (p, r)
        })
        .collect();

    let mut trajectories = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (path, result) in results {
        match result {
            Ok(t) => trajectories.push(t),
            Err(e) => failures.push((path, e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::DatasetErrors(failures));
    }
    trajectories.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(trajectories)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.20;
pub const DEFAULT_SEED: u64 = 42;

/// File-level split: shuffle the sorted ids with `seed`, the first
/// ⌈fraction·N⌉ go to train.
pub fn split_dataset(trajs: &[Trajectory], train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    let ids: Vec<String> = trajs.iter().map(|t| t.id.clone()).collect();
    split_ids(ids, train_fraction, seed)
}

pub fn split_ids(mut ids: Vec<String>, train_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if ids.len() < 2 {
        return Err(Error::TooFewTrajectories(ids.len()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    // the 1e-9 guard keeps exact products like 0.2·10 from rounding up
    let n_train = ((train_fraction * n as f64) - 1e-9).ceil() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let test = ids.split_off(n_train);
    Ok(DatasetSplit {
        train: ids,
        test,
        seed,
    })
}

impl DatasetSplit {
    /// Select the trajectories whose ids are in `ids`, preserving input order.
    pub fn select<'a>(trajs: &'a [Trajectory], ids: &[String]) -> Vec<&'a Trajectory> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        trajs.iter().filter(|t| wanted.contains(t.id.as_str())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(s: &str) -> Result<Trajectory> {
        load_trajectory(s.as_bytes(), "t", StepIndexBase::Zero)
    }

    #[test]
    fn annotated_failure_maps_fields() {
        let t = load(
            r#"{"question":"Q","history":[{"name":"A","content":"x"},{"name":"B","content":"y"}],"mistake_step":1,"mistake_agent":"B"}"#,
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.outcome, Outcome::Failure);
        assert_eq!(t.breach_step(), Some(1));
        assert_eq!(t.annotation.unwrap().breach_agent, "B");
    }

    #[test]
    fn missing_annotation_is_success() {
        let t = load(r#"{"question":"Q","history":[{"name":"A","content":"x"}]}"#).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.outcome, Outcome::Success);
        assert!(t.annotation.is_none());
    }

    #[test]
    fn out_of_range_step_is_rejected() {
        let err = load(
            r#"{"question":"Q","history":[{"name":"A","content":"x"}],"mistake_step":5,"mistake_agent":"A"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::AnnotationOutOfRange { step: 5, turns: 1 }));
    }

    #[test]
    fn agent_mismatch_is_hard_error() {
        let err = load(
            r#"{"question":"Q","history":[{"name":"A","content":"x"},{"name":"B","content":"y"}],"mistake_step":"1","mistake_agent":"A"}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::AgentMismatch { step: 1, .. }));
    }

    #[test]
    fn agent_comparison_normalizes_case_and_whitespace() {
        let t = load(
            r#"{"question":"Q","history":[{"agent":"Web  Surfer","text":"x"}],"mistake_step":"0","mistake_agent":" web surfer "}"#,
        )
        .unwrap();
        assert_eq!(t.breach_step(), Some(0));
    }

    #[test]
    fn one_based_steps_are_shifted() {
        let raw = r#"{"question":"Q","history":[{"name":"A","content":"x"},{"name":"B","content":"y"}],"mistake_step":2,"mistake_agent":"B"}"#;
        let t = load_trajectory(raw.as_bytes(), "t", StepIndexBase::One).unwrap();
        assert_eq!(t.breach_step(), Some(1));
        let err = load_trajectory(
            r#"{"question":"Q","history":[{"name":"A","content":"x"}],"mistake_step":0}"#.as_bytes(),
            "t",
            StepIndexBase::One,
        )
        .unwrap_err();
        assert!(matches!(err, Error::AnnotationOutOfRange { .. }));
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(load("{"), Err(Error::MalformedDocument(_))));
        assert!(matches!(load(r#"{"history":[]}"#), Err(Error::MalformedDocument(_))));
        assert!(matches!(
            load(r#"{"question":"Q","history":[{"name":"","content":"x"}]}"#),
            Err(Error::MalformedDocument(_))
        ));
    }

    #[test]
    fn empty_content_is_preserved() {
        let t = load(r#"{"question":"Q","history":[{"name":"A","content":""}],"extra":1}"#).unwrap();
        assert_eq!(t.turns[0].content, "");
    }

    #[test]
    fn round_trip_through_json() {
        let t = load(
            r#"{"question":"Q","history":[{"name":"A","content":"x"},{"name":"B","content":"y"}],"mistake_step":1,"mistake_agent":"B"}"#,
        )
        .unwrap();
        let bytes = serde_json::to_vec(&t.to_json()).unwrap();
        assert_eq!(load_trajectory(&bytes, "t", StepIndexBase::Zero).unwrap(), t);
    }

    fn corpus(n: usize) -> Vec<Trajectory> {
        (0..n)
            .map(|i| Trajectory {
                id: format!("traj{i:02}"),
                task: "Q".into(),
                turns: vec![Turn {
                    index: 0,
                    agent: "A".into(),
                    content: "x".into(),
                }],
                outcome: Outcome::Success,
                annotation: None,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let trajs = corpus(10);
        let s = split_dataset(&trajs, 0.2, 42).unwrap();
        assert_eq!(s.train.len(), 2);
        assert_eq!(s.test.len(), 8);
        let train: HashSet<_> = s.train.iter().collect();
        assert!(s.test.iter().all(|id| !train.contains(id)));
        assert_eq!(s, split_dataset(&trajs, 0.2, 42).unwrap());
    }

    #[test]
    fn split_depends_on_seed() {
        let trajs = corpus(10);
        let distinct: HashSet<Vec<String>> = (0..100)
            .map(|seed| {
                let mut train = split_dataset(&trajs, 0.2, seed).unwrap().train;
                train.sort();
                train
            })
            .collect();
        assert!(distinct.len() >= 2);
    }

    #[test]
    fn split_is_independent_of_input_order() {
        let mut trajs = corpus(10);
        let a = split_dataset(&trajs, 0.2, 7).unwrap();
        trajs.reverse();
        assert_eq!(a, split_dataset(&trajs, 0.2, 7).unwrap());
    }

    #[test]
    fn split_needs_two() {
        assert!(matches!(
            split_dataset(&corpus(1), 0.2, 42),
            Err(Error::TooFewTrajectories(1))
        ));
    }
}
