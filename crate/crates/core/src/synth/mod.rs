//! Deterministic articulated walker producing paired masks and keypoints.

mod dataset;
mod walker;

pub use dataset::{
    generate_dataset, limb_difference, sample_identities, DatasetManifest, SequenceEntry, MIN_LIMB_DIFFERENCE,
};
pub use walker::{generate_walker, BodyWidths, LimbLengths, WalkerIdentity, WalkerSequence, DEFAULT_FRAME_SIZE};
