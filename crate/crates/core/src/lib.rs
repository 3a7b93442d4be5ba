//! Continual-learning machinery for 3D lesion segmentation.
//!
//! The crate works on probability volumes and label masks produced by any
//! segmentation model and provides:
//!
//! - [`volume`]: voxel grids, face-connected morphology, connected components, Dice;
//! - [`scoring`]: per-sample representativeness and difficulty scores;
//! - [`buffer`]: a fixed-capacity replay buffer partitioned per episode;
//! - [`modality`]: the append-only modality registry, input-channel inflation
//!   and random modality drop;
//! - [`dctg`]: the forward pass of a text-conditioned cross-attention block;
//! - [`metrics`]: AVG / ILM / BWT over per-task Dice matrices;
//! - [`io`]: the VOL1 tensor format, manifests and JSON schemas;
//! - [`stream`] and [`synth`]: end-to-end episode streams and a synthetic corpus.

pub mod buffer;
pub mod dctg;
pub mod error;
pub mod io;
pub mod metrics;
pub mod modality;
pub mod rng;
pub mod scoring;
pub mod stream;
pub mod synth;
pub mod volume;

pub use buffer::{BufferEntry, Category, GlobalBuffer, Partition};
pub use error::{Error, Result};
pub use modality::ChannelLayout;
pub use rng::Prng;
pub use scoring::{SampleScores, ScoringConfig};
pub use volume::{BandSpec, Connectivity, Dims, LabelMask, ProbabilityVolume, ScalarVolume};
