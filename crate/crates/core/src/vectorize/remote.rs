//! Client for a remote embedding provider, backed by an append-only cache.
//!
//! Cache file: one JSON object per line, `{sha256, model, dim, values}`, keyed
//! by the SHA-256 of the snippet text. Offline mode never touches the network.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DenseVector;
use crate::error::{Error, Result};

/// Environment variable holding the provider credential.
pub const CREDENTIAL_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/embeddings";
pub const DEFAULT_MODEL: &str = "text-embedding-ada-002";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: String,
    pub timeout: Duration,
}

impl RemoteConfig {
    /// Reads the credential from [`CREDENTIAL_ENV`].
    pub fn from_env(endpoint: impl Into<String>) -> Result<Self> {
        let api_key = std::env::var(CREDENTIAL_ENV).map_err(|_| {
            Error::invalid(format!("online embedding requires ${CREDENTIAL_ENV}"))
        })?;
        Ok(Self {
            endpoint: endpoint.into(),
            api_key,
            timeout: Duration::from_secs(60),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    sha256: String,
    model: String,
    dim: usize,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a str,
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

pub struct EmbeddingCache {
    path: Option<PathBuf>,
    model: String,
    dim: usize,
    store: RwLock<HashMap<String, DenseVector>>,
    writer: Mutex<()>,
    remote: Option<(RemoteConfig, reqwest::blocking::Client)>,
}

impl std::fmt::Debug for EmbeddingCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingCache")
            .field("path", &self.path)
            .field("model", &self.model)
            .field("dim", &self.dim)
            .field("online", &self.remote.is_some())
            .finish()
    }
}

pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl EmbeddingCache {
    /// In-memory cache with no backing file.
    pub fn in_memory(model: impl Into<String>, dim: usize) -> Self {
        Self {
            path: None,
            model: model.into(),
            dim,
            store: RwLock::new(HashMap::new()),
            writer: Mutex::new(()),
            remote: None,
        }
    }

    /// Opens (or creates on first write) the cache file at `path`. Entries for
    /// other models are ignored.
    pub fn open(path: impl AsRef<Path>, model: impl Into<String>, dim: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut cache = Self::in_memory(model, dim);
        if path.exists() {
            let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let store = cache.store.get_mut().expect("fresh lock");
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if entry.model != cache.model {
                    continue;
                }
                if entry.dim != dim || entry.values.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: entry.values.len(),
                    });
                }
                store.insert(entry.sha256, DenseVector::new(entry.values)?);
            }
        }
        cache.path = Some(path);
        Ok(cache)
    }

    /// Enables network requests for cache misses.
    pub fn online(mut self, config: RemoteConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Http {
                status: None,
                retriable: false,
                message: e.to_string(),
            })?;
        self.remote = Some((config, client));
        Ok(self)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.store.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, text: &str) -> bool {
        self.store
            .read()
            .expect("cache lock")
            .contains_key(&content_hash(text))
    }

    pub fn embed(&self, text: &str) -> Result<DenseVector> {
        let hash = content_hash(text);
        if let Some(v) = self.store.read().expect("cache lock").get(&hash) {
            return Ok(v.clone());
        }
        let Some((config, client)) = &self.remote else {
            return Err(Error::CacheMiss(hash));
        };
        let values = self.request(config, client, text)?;
        if values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        let vector = DenseVector::new(values)?;
        self.insert(hash, vector.clone())?;
        Ok(vector)
    }

    /// Adds a vector under the hash of `text`, appending it to the cache file.
    pub fn put(&self, text: &str, vector: DenseVector) -> Result<()> {
        if vector.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        self.insert(content_hash(text), vector)
    }

    fn insert(&self, hash: String, vector: DenseVector) -> Result<()> {
        let _guard = self.writer.lock().expect("cache writer lock");
        if let Some(path) = &self.path {
            let entry = CacheEntry {
                sha256: hash.clone(),
                model: self.model.clone(),
                dim: self.dim,
                values: vector.values().to_vec(),
            };
            let mut line = serde_json::to_vec(&entry)?;
            line.push(b'\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(&line))
                .map_err(|e| Error::io(path, e))?;
        }
        self.store.write().expect("cache lock").insert(hash, vector);
        Ok(())
    }

    fn request(
        &self,
        config: &RemoteConfig,
        client: &reqwest::blocking::Client,
        text: &str,
    ) -> Result<Vec<f64>> {
        let body = request_body(text, &self.model);
        let response = client
            .post(&config.endpoint)
            .bearer_auth(&config.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .map_err(|e| Error::Http {
                status: None,
                retriable: e.is_timeout() || e.is_connect(),
                message: e.to_string(),
            })?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Http {
                status: Some(status.as_u16()),
                retriable: status.as_u16() == 429 || status.is_server_error(),
                message: response.text().unwrap_or_default(),
            });
        }
        let parsed: EmbeddingResponse = response.json().map_err(|e| Error::Http {
            status: Some(status.as_u16()),
            retriable: false,
            message: format!("malformed embedding response: {e}"),
        })?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| Error::Http {
                status: Some(status.as_u16()),
                retriable: false,
                message: "embedding response has no data".into(),
            })
    }
}

/// The exact JSON body sent for one snippet.
pub fn request_body(text: &str, model: &str) -> Vec<u8> {
    serde_json::to_vec(&EmbeddingRequest { input: text, model })
        .expect("request body always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offline_miss_names_hash() {
        let cache = EmbeddingCache::in_memory(DEFAULT_MODEL, 3);
        match cache.embed("x=1") {
            Err(Error::CacheMiss(h)) => assert_eq!(h, content_hash("x=1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache = EmbeddingCache::open(&path, "m", 2).unwrap();
            cache.put("a", DenseVector::new(vec![0.1, 0.2]).unwrap()).unwrap();
            assert!(cache.put("b", DenseVector::new(vec![1.0]).unwrap()).is_err());
        }
        let cache = EmbeddingCache::open(&path, "m", 2).unwrap();
        assert_eq!(cache.embed("a").unwrap().values(), &[0.1, 0.2]);
        assert!(EmbeddingCache::open(&path, "other", 5).unwrap().is_empty());
        assert!(EmbeddingCache::open(&path, "m", 3).is_err());
    }

    #[test]
    fn body_layout() {
        assert_eq!(
            request_body("x=1", DEFAULT_MODEL),
            br#"{"input":"x=1","model":"text-embedding-ada-002"}"#
        );
    }
}
