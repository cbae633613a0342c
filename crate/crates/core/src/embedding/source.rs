use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    pmeb, render_extraction_prompt, render_history_prompt, CachedProvider, EmbeddingProvider,
    Encoded, ProviderMode, StateVector,
};
use crate::data::Turn;
use crate::error::{Error, Result};

/// Request for the state of the last visible turn.
#[derive(Debug, Clone, Copy)]
pub struct StepQuery<'a> {
    pub id: &'a str,
    pub task: &'a str,
    /// Turns revealed so far; the last one is the step being encoded.
    pub visible: &'a [Turn],
}

/// Request for the context state before the next (not yet visible) turn.
#[derive(Debug, Clone, Copy)]
pub struct ContextQuery<'a> {
    pub id: &'a str,
    pub task: &'a str,
    pub visible: &'a [Turn],
}

/// Maps partial dialogues to latent states. Implementations only ever see
/// the turns revealed so far.
pub trait StateEncoder: Send + Sync {
    fn mode(&self) -> ProviderMode;
    fn step(&self, query: &StepQuery) -> Result<Arc<Encoded>>;
    fn context(&self, query: &ContextQuery) -> Result<Arc<Encoded>>;
}

/// Which text the per-step states are encoded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStateKind {
    /// Extraction template: task, previous turn, current turn.
    #[default]
    Extraction,
    /// History template over every turn up to and including the current one.
    History,
}

impl EmbeddingProvider for Box<dyn EmbeddingProvider> {
    fn mode(&self) -> ProviderMode {
        (**self).mode()
    }
    fn cache_key(&self) -> String {
        (**self).cache_key()
    }
    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Encoded>> {
        (**self).encode_batch(texts)
    }
}

/// Renders prompt templates and encodes them with a cached provider.
pub struct PromptEncoder {
    provider: CachedProvider<Box<dyn EmbeddingProvider>>,
    kind: StepStateKind,
}

impl PromptEncoder {
    pub fn new(provider: Box<dyn EmbeddingProvider>, kind: StepStateKind) -> Self {
        PromptEncoder {
            provider: CachedProvider::new(provider),
            kind,
        }
    }

    pub fn kind(&self) -> StepStateKind {
        self.kind
    }
}

impl StateEncoder for PromptEncoder {
    fn mode(&self) -> ProviderMode {
        self.provider.mode()
    }

    fn step(&self, query: &StepQuery) -> Result<Arc<Encoded>> {
        let current = query.visible.last().ok_or(Error::EmptyList)?;
        let prompt = match self.kind {
            StepStateKind::Extraction => {
                let previous = match query.visible.len() {
                    0 | 1 => "",
                    n => query.visible[n - 2].content.as_str(),
                };
                render_extraction_prompt(query.task, previous, &current.content)?
            }
            StepStateKind::History => render_history_prompt(query.task, query.visible)?,
        };
        self.provider.get(&prompt)
    }

    fn context(&self, query: &ContextQuery) -> Result<Arc<Encoded>> {
        let prompt = render_history_prompt(query.task, query.visible)?;
        self.provider.get(&prompt)
    }
}

/// Precomputed pre-pooled states stored next to each trajectory file:
/// `<id>.steps.pmeb` (row t = state of turn t) and `<id>.context.pmeb`
/// (row t = context state before turn t).
pub struct SidecarEncoder {
    dir: PathBuf,
    loaded: RwLock<HashMap<String, Arc<Sidecar>>>,
}

struct Sidecar {
    steps: Vec<Arc<Encoded>>,
    context: Vec<Arc<Encoded>>,
}

pub fn sidecar_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{id}.steps.pmeb")),
        dir.join(format!("{id}.context.pmeb")),
    )
}

pub fn write_sidecars(dir: &Path, id: &str, steps: &Array2<f64>, context: &Array2<f64>) -> Result<()> {
    let (s, c) = sidecar_paths(dir, id);
    pmeb::write_matrix(steps, &s)?;
    pmeb::write_matrix(context, &c)
}

fn rows(matrix: Array2<f64>) -> Vec<Arc<Encoded>> {
    matrix
        .rows()
        .into_iter()
        .map(|r| Arc::new(Encoded::Pooled(StateVector(r.to_owned()))))
        .collect()
}

impl SidecarEncoder {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SidecarEncoder {
            dir: dir.into(),
            loaded: RwLock::new(HashMap::new()),
        }
    }

    fn load(&self, id: &str) -> Result<Arc<Sidecar>> {
        if let Some(hit) = self.loaded.read().expect("sidecar lock").get(id) {
            return Ok(Arc::clone(hit));
        }
        let (s, c) = sidecar_paths(&self.dir, id);
        if !s.exists() || !c.exists() {
            return Err(Error::MissingStates(id.to_string()));
        }
        let sidecar = Arc::new(Sidecar {
            steps: rows(pmeb::read_matrix(&s)?),
            context: rows(pmeb::read_matrix(&c)?),
        });
        self.loaded
            .write()
            .expect("sidecar lock")
            .insert(id.to_string(), Arc::clone(&sidecar));
        Ok(sidecar)
    }
}

impl StateEncoder for SidecarEncoder {
    fn mode(&self) -> ProviderMode {
        ProviderMode::PrePooled
    }

    fn step(&self, query: &StepQuery) -> Result<Arc<Encoded>> {
        let t = query.visible.len().checked_sub(1).ok_or(Error::EmptyList)?;
        let sidecar = self.load(query.id)?;
        sidecar.steps.get(t).cloned().ok_or(Error::IndexOutOfRange {
            index: t,
            size: sidecar.steps.len(),
        })
    }

    fn context(&self, query: &ContextQuery) -> Result<Arc<Encoded>> {
        let t = query.visible.len();
        let sidecar = self.load(query.id)?;
        sidecar.context.get(t).cloned().ok_or(Error::IndexOutOfRange {
            index: t,
            size: sidecar.context.len(),
        })
    }
}
