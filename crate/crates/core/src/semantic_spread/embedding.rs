use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::OptionEmbedding;
use crate::dataset::McqItem;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: encoder '{found}' differs from '{expected}' used earlier in the file")]
    MixedEncoder {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("no embeddings for item '{0}'")]
    Missing(String),
    #[error("item '{item_id}' has {expected} options but {found} vectors")]
    OptionCountMismatch {
        item_id: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding service: {0}")]
    Remote(String),
}

/// One line of an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub item_id: String,
    pub encoder_id: String,
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Produces option embeddings for an item.
pub trait EmbeddingSource: Send + Sync {
    fn encoder_id(&self) -> &str;
    fn embed(&self, item: &McqItem) -> Result<OptionEmbedding, EmbeddingError>;
}

/// Embeddings loaded from a JSON-lines file, keyed by item id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    pub encoder_id: String,
    pub dim: usize,
    records: HashMap<String, Vec<Vec<f64>>>,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&[Vec<f64>]> {
        self.records.get(item_id).map(Vec::as_slice)
    }
}

impl EmbeddingSource for EmbeddingStore {
    fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    fn embed(&self, item: &McqItem) -> Result<OptionEmbedding, EmbeddingError> {
        let vectors = self
            .records
            .get(&item.item_id)
            .ok_or_else(|| EmbeddingError::Missing(item.item_id.clone()))?;
        if vectors.len() != item.option_count() {
            return Err(EmbeddingError::OptionCountMismatch {
                item_id: item.item_id.clone(),
                expected: item.option_count(),
                found: vectors.len(),
            });
        }
        Ok(OptionEmbedding {
            item_id: item.item_id.clone(),
            encoder_id: self.encoder_id.clone(),
            vectors: vectors.clone(),
        })
    }
}

pub fn load_embedding_file(path: &Path) -> Result<EmbeddingStore, EmbeddingError> {
    let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_embedding_jsonl(&text)
}

/// Parse and validate embedding records. All records must share one encoder
/// and one dimension; vectors must be finite.
pub fn parse_embedding_jsonl(text: &str) -> Result<EmbeddingStore, EmbeddingError> {
    let mut store = EmbeddingStore::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(raw).map_err(|e| EmbeddingError::Parse {
            line,
            message: e.to_string(),
        })?;
        let invalid = |message: String| EmbeddingError::Invalid { line, message };
        if rec.dim == 0 {
            return Err(invalid("dim must be positive".into()));
        }
        if rec.vectors.is_empty() {
            return Err(invalid("no vectors".into()));
        }
        for (k, v) in rec.vectors.iter().enumerate() {
            if v.len() != rec.dim {
                return Err(invalid(format!("vector {k} has length {}, dim is {}", v.len(), rec.dim)));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("vector {k} has a non-finite component")));
            }
        }
        if store.records.is_empty() {
            store.encoder_id = rec.encoder_id.clone();
            store.dim = rec.dim;
        } else if rec.encoder_id != store.encoder_id {
            return Err(EmbeddingError::MixedEncoder {
                line,
                expected: store.encoder_id.clone(),
                found: rec.encoder_id,
            });
        } else if rec.dim != store.dim {
            return Err(invalid(format!("dim {} differs from {}", rec.dim, store.dim)));
        }
        if store.records.insert(rec.item_id.clone(), rec.vectors).is_some() {
            return Err(invalid(format!("duplicate item_id '{}'", rec.item_id)));
        }
    }
    Ok(store)
}

/// Deterministic offline embedder: hashed character trigrams plus one bucket
/// for the whole text. Identical texts get identical vectors and texts with
/// shared substrings score higher than unrelated ones.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dim: usize,
    pub seed: u64,
    encoder_id: String,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "dim must be positive");
        Self {
            dim,
            seed,
            encoder_id: format!("mock-trigram-{dim}"),
        }
    }

    fn bucket(&self, bytes: &[u8]) -> usize {
        // FNV-1a, seeded
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.dim as u64) as usize
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        let padded: Vec<u8> = format!("  {lower} ").into_bytes();
        for w in padded.windows(3) {
            v[self.bucket(w)] += 1.0;
        }
        v[self.bucket(text.as_bytes())] += 1.0;
        v
    }
}

impl EmbeddingSource for MockEmbedder {
    fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    fn embed(&self, item: &McqItem) -> Result<OptionEmbedding, EmbeddingError> {
        Ok(OptionEmbedding {
            item_id: item.item_id.clone(),
            encoder_id: self.encoder_id.clone(),
            vectors: item.options.iter().map(|o| self.vector(o)).collect(),
        })
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
#[derive(Debug)]
pub struct RemoteEmbedder {
    model: String,
    base_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub const KEY_ENV_VAR: &'static str = "OPENAI_API_KEY";

    pub fn new(
        model: impl Into<String>,
        base_url: impl Into<String>,
        api_key: impl Into<String>,
    ) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EmbeddingError::Remote(e.to_string()))?;
        Ok(Self {
            model: model.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            client,
        })
    }

    pub fn from_env(model: impl Into<String>, base_url: impl Into<String>) -> Result<Self, EmbeddingError> {
        let key = std::env::var(Self::KEY_ENV_VAR)
            .map_err(|_| EmbeddingError::Remote(format!("set {}", Self::KEY_ENV_VAR)))?;
        Self::new(model, base_url, key)
    }
}

impl EmbeddingSource for RemoteEmbedder {
    fn encoder_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, item: &McqItem) -> Result<OptionEmbedding, EmbeddingError> {
        let resp = self
            .client
            .post(format!("{}/embeddings", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&json!({ "model": self.model, "input": item.options }))
            .send()
            .map_err(|e| EmbeddingError::Remote(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbeddingError::Remote(format!("status {status}")));
        }
        let body: Value = resp.json().map_err(|e| EmbeddingError::Remote(e.to_string()))?;
        let data = body
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbeddingError::Remote("response has no data array".into()))?;
        let vectors = data
            .iter()
            .map(|d| {
                d.get("embedding")
                    .and_then(Value::as_array)
                    .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| EmbeddingError::Remote("malformed embedding".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if vectors.len() != item.option_count() {
            return Err(EmbeddingError::OptionCountMismatch {
                item_id: item.item_id.clone(),
                expected: item.option_count(),
                found: vectors.len(),
            });
        }
        Ok(OptionEmbedding {
            item_id: item.item_id.clone(),
            encoder_id: self.model.clone(),
            vectors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic_spread::{cosine_similarity, identify_ssd};

    const GOOD: &str = r#"{"item_id":"a","encoder_id":"enc","dim":2,"vectors":[[1,0],[0,1]]}
{"item_id":"b","encoder_id":"enc","dim":2,"vectors":[[1,1],[1,0],[0,1]]}
"#;

    #[test]
    fn parses_valid_file() {
        let s = parse_embedding_jsonl(GOOD).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.encoder_id, "enc");
        assert_eq!(s.dim, 2);
        assert_eq!(s.get("b").unwrap()[0], vec![1.0, 1.0]);
    }

    #[test]
    fn detects_mixed_encoder() {
        let text = format!(
            "{GOOD}{}",
            r#"{"item_id":"c","encoder_id":"other","dim":2,"vectors":[[1,0],[0,1]]}"#
        );
        assert!(matches!(
            parse_embedding_jsonl(&text),
            Err(EmbeddingError::MixedEncoder { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_bad_dims() {
        let text = r#"{"item_id":"a","encoder_id":"e","dim":3,"vectors":[[1,0],[0,1]]}"#;
        assert!(matches!(
            parse_embedding_jsonl(text),
            Err(EmbeddingError::Invalid { line: 1, .. })
        ));
        assert!(matches!(
            parse_embedding_jsonl("not json"),
            Err(EmbeddingError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn store_checks_option_count() {
        let s = parse_embedding_jsonl(GOOD).unwrap();
        let item = McqItem::new(Some("a".into()), "q", vec!["x".into(), "y".into(), "z".into()], 0)
            .unwrap();
        assert!(matches!(s.embed(&item), Err(EmbeddingError::OptionCountMismatch { .. })));
        let missing = McqItem::new(Some("zz".into()), "q", vec!["x".into(), "y".into()], 0).unwrap();
        assert!(matches!(s.embed(&missing), Err(EmbeddingError::Missing(_))));
    }

    #[test]
    fn mock_embedder_tracks_lexical_overlap() {
        let m = MockEmbedder::new(64, 0);
        let a = m.vector("mitochondria");
        assert_eq!(a, m.vector("mitochondria"));
        let near = cosine_similarity(&a, &m.vector("mitochondrion")).unwrap();
        let far = cosine_similarity(&a, &m.vector("tax policy")).unwrap();
        assert!(near > far);
        let item = McqItem::new(
            Some("i".into()),
            "q",
            vec!["photosynthesis".into(), "tax policy".into(), "photosynthetic".into()],
            0,
        )
        .unwrap();
        assert_eq!(identify_ssd(&m.embed(&item).unwrap(), 0).unwrap(), 2);
    }
}
