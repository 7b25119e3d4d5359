//! GaitContour network: Temporal Transformer Layers arranged as a shared
//! regional Local-CPT and a Global-PFT.

mod config;
mod flops;
mod network;

pub use config::{ModelConfig, Region, NUM_REGIONS, REGION_KEYPOINTS, REGION_POINTS};
pub use flops::{attention_ops, count_attention_ops, default_attention_ops, AttentionOps};
pub use network::{split_region_tensor, split_regions, BnIds, ForwardMode, GaitContour, Session, TtlIds};
