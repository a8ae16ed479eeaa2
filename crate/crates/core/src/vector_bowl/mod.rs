//! The phish bowl: an append-only record log with an exact in-memory
//! nearest-neighbour index, and the lazy-learning analyzer on top of it.
//!
//! Nothing is trained. A record is visible to [`PhishBowl::nearest`] and
//! [`PhishBowl::score`] as soon as [`PhishBowl::add_record`] returns.

mod embed;
mod score;

use std::collections::HashSet;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ClientError;
use crate::email_model::Label;

pub use embed::{
    fnv1a64, squared_distance, word_tokens, EmbeddingClient, HashedEmbedder,
    DEFAULT_HASHED_DIMENSION,
};
pub use score::{confidence, reciprocal_weights, weighted_label, BowlConfig};

#[derive(Debug, Error)]
pub enum BowlError {
    #[error("vector has dimension {got}, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("record id {0} already exists")]
    DuplicateId(RecordId),
    #[error("the phish bowl is empty")]
    ColdBowl,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid bowl config: {0}")]
    Config(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] ClientError),
    #[error("bowl log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bowl log {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(pub u64);

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Preloaded,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowlRecord {
    pub id: RecordId,
    pub text: String,
    pub label: Label,
    pub source: Source,
    pub created_at: DateTime<Utc>,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: RecordId,
    pub squared_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNeighbor {
    pub id: RecordId,
    pub squared_distance: f64,
    pub label: Label,
    pub weight: f64,
}

/// Output of the bowl analyzer for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowlScore {
    pub l_raw: f64,
    pub l_conf: f64,
    /// Squared distance to the nearest record.
    pub d0: f64,
    pub neighbors: Vec<WeightedNeighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub record: BowlRecord,
    pub squared_distance: f64,
}

#[derive(Debug, Default)]
struct Index {
    records: Vec<BowlRecord>,
    ids: HashSet<RecordId>,
    next_id: u64,
}

impl Index {
    fn push(&mut self, record: BowlRecord) {
        self.next_id = self.next_id.max(record.id.0 + 1);
        self.ids.insert(record.id);
        self.records.push(record);
    }

    /// Indices of the `k` closest records, ascending by distance then insertion order.
    fn nearest(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (i, squared_distance(query, &r.vector)))
            .collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        scored
    }
}

struct Log {
    path: PathBuf,
    file: File,
}

/// Record store with serialized writers and concurrent readers.
pub struct PhishBowl {
    dimension: usize,
    index: RwLock<Index>,
    log: Option<Mutex<Log>>,
}

impl fmt::Debug for PhishBowl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhishBowl")
            .field("dimension", &self.dimension)
            .field("records", &self.len())
            .field("path", &self.log.as_ref().map(|l| l.lock().path.clone()))
            .finish()
    }
}

impl PhishBowl {
    pub fn in_memory(dimension: usize) -> Self {
        PhishBowl {
            dimension,
            index: RwLock::new(Index::default()),
            log: None,
        }
    }

    /// Opens (or creates) a log file and rebuilds the index by a full scan.
    pub fn open(path: impl AsRef<Path>, dimension: usize) -> Result<Self, BowlError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| BowlError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut index = Index::default();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| BowlError::Corrupt {
                    path: path.clone(),
                    line: n + 1,
                    message,
                };
                let record: BowlRecord =
                    serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                if record.vector.len() != dimension {
                    return Err(corrupt(format!(
                        "vector has dimension {}, store expects {dimension}",
                        record.vector.len()
                    )));
                }
                if index.ids.contains(&record.id) {
                    return Err(corrupt(format!("duplicate id {}", record.id)));
                }
                index.push(record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        Ok(PhishBowl {
            dimension,
            index: RwLock::new(index),
            log: Some(Mutex::new(Log { path, file })),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.index.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, id: RecordId) -> Option<BowlRecord> {
        self.index.read().records.iter().find(|r| r.id == id).cloned()
    }

    pub fn records(&self) -> Vec<BowlRecord> {
        self.index.read().records.clone()
    }

    fn check_dimension(&self, vector: &[f64]) -> Result<(), BowlError> {
        if vector.len() != self.dimension {
            return Err(BowlError::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        Ok(())
    }

    fn append(&self, index: &mut Index, record: BowlRecord) -> Result<RecordId, BowlError> {
        self.check_dimension(&record.vector)?;
        if index.ids.contains(&record.id) {
            return Err(BowlError::DuplicateId(record.id));
        }
        if let Some(log) = &self.log {
            let mut log = log.lock();
            let mut line = serde_json::to_string(&record).expect("records always serialize");
            line.push('\n');
            let Log { path, file } = &mut *log;
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| BowlError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        let id = record.id;
        index.push(record);
        Ok(id)
    }

    pub fn add_record(&self, record: BowlRecord) -> Result<RecordId, BowlError> {
        let mut index = self.index.write();
        self.append(&mut index, record)
    }

    /// Adds a record under a freshly allocated id.
    pub fn insert(
        &self,
        text: String,
        label: Label,
        source: Source,
        vector: Vec<f64>,
        created_at: DateTime<Utc>,
    ) -> Result<RecordId, BowlError> {
        let mut index = self.index.write();
        let record = BowlRecord {
            id: RecordId(index.next_id),
            text,
            label,
            source,
            created_at,
            vector,
        };
        self.append(&mut index, record)
    }

    /// Exact k nearest records by squared Euclidean distance; ties keep insertion order.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>, BowlError> {
        if k == 0 {
            return Err(BowlError::InvalidK);
        }
        self.check_dimension(query)?;
        let index = self.index.read();
        if index.records.is_empty() {
            return Err(BowlError::ColdBowl);
        }
        Ok(index
            .nearest(query, k)
            .into_iter()
            .map(|(i, d)| Neighbor {
                id: index.records[i].id,
                squared_distance: d,
            })
            .collect())
    }

    pub fn score_vector(&self, query: &[f64], config: &BowlConfig) -> Result<BowlScore, BowlError> {
        config.validate()?;
        self.check_dimension(query)?;
        let index = self.index.read();
        if index.records.is_empty() {
            return Err(BowlError::ColdBowl);
        }
        let hits = index.nearest(query, config.k);
        let distances: Vec<f64> = hits.iter().map(|&(_, d)| d).collect();
        let weights = reciprocal_weights(&distances, config.epsilon);
        let labelled: Vec<(f64, f64)> = hits
            .iter()
            .map(|&(i, d)| (d, index.records[i].label.as_f64()))
            .collect();
        let l_raw = weighted_label(&labelled, config.epsilon);
        let d0 = distances[0];
        let neighbors = hits
            .iter()
            .zip(weights)
            .map(|(&(i, d), weight)| WeightedNeighbor {
                id: index.records[i].id,
                squared_distance: d,
                label: index.records[i].label,
                weight,
            })
            .collect();
        Ok(BowlScore {
            l_raw,
            l_conf: config.confidence(d0),
            d0,
            neighbors,
        })
    }

    /// Embeds `query_text` and scores it against the bowl.
    pub fn score(
        &self,
        query_text: &str,
        client: &dyn EmbeddingClient,
        config: &BowlConfig,
    ) -> Result<BowlScore, BowlError> {
        if self.is_empty() {
            return Err(BowlError::ColdBowl);
        }
        let query = client.embed(query_text)?;
        self.score_vector(&query, config)
    }

    /// Up to `n` records closest to `query_text`. An empty bowl gives no hits.
    pub fn search(
        &self,
        query_text: &str,
        n: usize,
        client: &dyn EmbeddingClient,
    ) -> Result<Vec<SearchHit>, BowlError> {
        if n == 0 {
            return Err(BowlError::InvalidK);
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let query = client.embed(query_text)?;
        self.check_dimension(&query)?;
        let index = self.index.read();
        Ok(index
            .nearest(&query, n)
            .into_iter()
            .map(|(i, d)| SearchHit {
                record: index.records[i].clone(),
                squared_distance: d,
            })
            .collect())
    }
}
