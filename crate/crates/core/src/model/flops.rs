use serde::Serialize;

use super::config::{ModelConfig, NUM_REGIONS};
use crate::contour_pose::CONTOUR_POSE_POINTS;
use crate::error::{Error, Result};

/// Attention multiply-accumulates per frame: score (`Q K^T`) plus mix
/// (`P V`), each `J^2 * C`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionOps {
    pub local: u64,
    pub full: u64,
    pub ratio: f64,
}

/// One layer of width `channels`: `regions` blocks of `j_total / regions`
/// tokens against one block of `j_total` tokens.
pub fn attention_ops(j_total: usize, regions: usize, channels: usize) -> Result<AttentionOps> {
    if regions == 0 || !j_total.is_multiple_of(regions) {
        return Err(Error::InvalidConfig(format!(
            "{j_total} points do not split into {regions} regions"
        )));
    }
    let jr = (j_total / regions) as u64;
    let c = channels as u64;
    let local = regions as u64 * jr * jr * 2 * c;
    let full = (j_total as u64).pow(2) * 2 * c;
    Ok(AttentionOps {
        local,
        full,
        ratio: local as f64 / full as f64,
    })
}

/// Per-layer counts for every Local-CPT block (at its attention width),
/// followed by the total.
pub fn count_attention_ops(config: &ModelConfig, j_total: usize) -> Result<(Vec<AttentionOps>, AttentionOps)> {
    config.validate()?;
    let widths = std::iter::once(config.input_channels).chain(config.local_channels.iter().copied());
    let layers = widths
        .take(config.local_channels.len())
        .map(|c| attention_ops(j_total, NUM_REGIONS, c))
        .collect::<Result<Vec<_>>>()?;
    let (local, full) = layers.iter().fold((0, 0), |(l, f), o| (l + o.local, f + o.full));
    let total = AttentionOps {
        local,
        full,
        ratio: local as f64 / full as f64,
    };
    Ok((layers, total))
}

pub fn default_attention_ops() -> Result<(Vec<AttentionOps>, AttentionOps)> {
    count_attention_ops(&ModelConfig::default(), CONTOUR_POSE_POINTS)
}
