//! Typography style transfer between fonts, trained without aligned pairs.
//!
//! The pipeline: rasterize glyphs from a source and a target font
//! ([`glyphrender`]), build a training manifest under one of three pairing
//! policies ([`pairset`]), train a skip-connection encoder/decoder generator
//! against a trinary discriminator ([`netarch`], [`losses`], [`trainkit`]),
//! and score or visualize the transferred glyphs ([`evalkit`]).
//!
//! Everything is deterministic for a fixed seed: rasterization, pair
//! construction, parameter init, dropout and augmentation draws, and the
//! resulting loss trajectories.

pub mod elem;
pub mod error;
pub mod evalkit;
pub mod glyphrender;
pub mod gradcheck;
pub mod losses;
pub mod netarch;
pub mod nn;
pub mod pairset;
pub mod rngs;
pub mod trainkit;

pub use elem::Elem;
pub use error::Error;
pub use evalkit::{
    evaluate, feature_maps, sample_grid, score_key, turing_packet, EvalReport, TuringKey,
    TuringLabel, TuringPacket,
};
pub use glyphrender::{FontHandle, GlyphImage, RenderConfig};
pub use losses::{LossReport, LossWeights};
pub use netarch::{Discriminator, Generator, ModelSpec};
pub use nn::adam::{Adam, GradMap};
pub use nn::Phase;
pub use pairset::{PairManifest, PairPolicy, PolicyKind};
pub use trainkit::{
    augment, fit, pretrain_encoder, AugmentConfig, Checkpoint, CheckpointMeta, Dataset,
    FitOutcome, TrainConfig, TrainState,
};

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;
