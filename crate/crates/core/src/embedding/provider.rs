use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{pmeb, Encoded, ProviderMode, StateVector, TokenStateMatrix};
use crate::error::{Error, Result};
use crate::hashing::sha256;

/// Source of latent states for prompt texts.
///
/// Token-level providers are expected to hand back states that are already
/// layer-pooled (e.g. mean of the backbone's last layers); this crate only
/// applies the learnable attention pooling on top.
pub trait EmbeddingProvider: Send + Sync {
    fn mode(&self) -> ProviderMode;

    /// Stable identity used to key caches.
    fn cache_key(&self) -> String;

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Encoded>>;

    fn encode(&self, text: &str) -> Result<Encoded> {
        let mut out = self.encode_batch(&[text.to_string()])?;
        out.pop().ok_or_else(|| Error::ProtocolError("provider returned nothing".into()))
    }
}

/// First 8 bytes of SHA-256, little-endian.
pub fn hash64(text: &str) -> u64 {
    let digest = sha256(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Whitespace-tokenized pseudo-embeddings: every token maps to a fixed vector
/// in [−1, 1]^dim drawn from a generator seeded by `hash64(token) ⊕ seed`.
pub fn synthetic_token_states(prompt: &str, dim: usize, seed: u64) -> Result<TokenStateMatrix> {
    if dim < 2 {
        return Err(Error::InvalidConfig(format!("token dim {dim} < 2")));
    }
    let tokens: Vec<&str> = prompt.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut data = Array2::zeros((tokens.len(), dim));
    for (row, token) in data.rows_mut().into_iter().zip(&tokens) {
        let mut rng = ChaCha8Rng::seed_from_u64(hash64(token) ^ seed);
        for v in row {
            *v = rng.random_range(-1.0f32..=1.0) as f64;
        }
    }
    TokenStateMatrix::new(data)
}

#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    pub seed: u64,
    pub dim: usize,
}

impl EmbeddingProvider for SyntheticProvider {
    fn mode(&self) -> ProviderMode {
        ProviderMode::TokenLevel
    }

    fn cache_key(&self) -> String {
        format!("synthetic:{}:{}", self.seed, self.dim)
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Encoded>> {
        texts
            .iter()
            .map(|t| synthetic_token_states(t, self.dim, self.seed).map(Encoded::Tokens))
            .collect()
    }
}

/// Looks up `<dir>/<hash64(prompt) as 16 hex digits>.pmeb`.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub dir: PathBuf,
    pub mode: ProviderMode,
}

impl FileProvider {
    pub fn path_for(&self, text: &str) -> PathBuf {
        self.dir.join(format!("{:016x}.pmeb", hash64(text)))
    }
}

impl EmbeddingProvider for FileProvider {
    fn mode(&self) -> ProviderMode {
        self.mode
    }

    fn cache_key(&self) -> String {
        format!("file:{}:{:?}", self.dir.display(), self.mode)
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Encoded>> {
        texts
            .iter()
            .map(|t| {
                let path = self.path_for(t);
                if !path.exists() {
                    return Err(Error::MissingStates(path.display().to_string()));
                }
                let matrix = pmeb::read_matrix(&path)?;
                match self.mode {
                    ProviderMode::TokenLevel => Ok(Encoded::Tokens(TokenStateMatrix::new(matrix)?)),
                    ProviderMode::PrePooled => {
                        if matrix.nrows() != 1 {
                            return Err(Error::DimensionMismatch {
                                expected: 1,
                                actual: matrix.nrows(),
                            });
                        }
                        Ok(Encoded::Pooled(StateVector(matrix.row(0).to_owned())))
                    }
                }
            })
            .collect()
    }
}

/// Memoizes another provider, keyed by (provider, prompt hash).
pub struct CachedProvider<P> {
    inner: P,
    cache: RwLock<HashMap<[u8; 32], Arc<Encoded>>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P) -> Self {
        CachedProvider {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    fn key(&self, text: &str) -> [u8; 32] {
        let mut buf = self.inner.cache_key().into_bytes();
        buf.push(0);
        buf.extend_from_slice(text.as_bytes());
        sha256(&buf)
    }

    pub fn get(&self, text: &str) -> Result<Arc<Encoded>> {
        let key = self.key(text);
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let value = Arc::new(self.inner.encode(text)?);
        self.cache
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| Arc::clone(&value));
        Ok(value)
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn mode(&self) -> ProviderMode {
        self.inner.mode()
    }

    fn cache_key(&self) -> String {
        self.inner.cache_key()
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Encoded>> {
        texts.iter().map(|t| self.get(t).map(|e| (*e).clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_token_states("the quick brown fox", 8, 42).unwrap();
        let b = synthetic_token_states("the quick brown fox", 8, 42).unwrap();
        assert_eq!(a, b);
        let c = synthetic_token_states("the quick brown fox", 8, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_is_tokenwise() {
        let ab = synthetic_token_states("a b", 4, 1).unwrap();
        let ba = synthetic_token_states("b a", 4, 1).unwrap();
        assert_eq!(ab.as_array().row(0), ba.as_array().row(1));
        assert_eq!(ab.as_array().row(1), ba.as_array().row(0));
        assert_ne!(ab, ba);
    }

    #[test]
    fn synthetic_shape_and_range() {
        let m = synthetic_token_states("one two three four five", 16, 0).unwrap();
        assert_eq!((m.tokens(), m.dim()), (5, 16));
        assert!(m.as_array().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(synthetic_token_states("  \n ", 16, 0), Err(Error::EmptyPrompt)));
    }

    #[test]
    fn file_provider_reads_by_prompt_hash() {
        let dir = tempfile::tempdir().unwrap();
        let provider = FileProvider {
            dir: dir.path().to_path_buf(),
            mode: ProviderMode::PrePooled,
        };
        let m = ndarray::array![[0.5, -0.25, 1.0]];
        pmeb::write_matrix(&m, &provider.path_for("hello")).unwrap();
        match provider.encode("hello").unwrap() {
            Encoded::Pooled(v) => assert_eq!(v.0, m.row(0)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(provider.encode("missing"), Err(Error::MissingStates(_))));
    }

    #[test]
    fn cache_memoizes() {
        let cached = CachedProvider::new(SyntheticProvider { seed: 3, dim: 4 });
        let a = cached.get("x y").unwrap();
        let b = cached.get("x y").unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cached.len(), 1);
    }
}
