//! Rank retrieval and verification metrics over gallery/probe embeddings.

mod metrics;
mod report;

pub use metrics::{distance_matrix, pair_scores, rank_retrieval, roc_curve, tar_at_far, PairScores};
pub use report::{
    embed_dataset, evaluate, subject_templates, write_roc_svg, write_score_csv, Aggregation, EvalOptions, EvalReport,
};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Gallery,
    Probe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub subject_id: String,
    pub view_id: Option<String>,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub role: Role,
    pub entries: Vec<EmbeddingEntry>,
}

impl EmbeddingSet {
    pub fn new(role: Role, entries: Vec<EmbeddingEntry>) -> Self {
        EmbeddingSet { role, entries }
    }

    /// Entries from `(subject, embedding)` pairs without view ids.
    pub fn from_pairs(role: Role, pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Self {
        let entries = pairs
            .into_iter()
            .map(|(subject_id, embedding)| EmbeddingEntry {
                subject_id,
                view_id: None,
                embedding,
            })
            .collect();
        EmbeddingSet { role, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
