//! Online 3D bin packing with learned search.
//!
//! The crate models a single bin as a height map, exposes a buffered packing
//! simulator, generates benchmark item sequences, augments training samples
//! with bin symmetries, evaluates a linear policy/value network, and plans
//! placements with a PUCT tree search.

pub mod augment;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod mcts;
pub mod par;
pub mod policy;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{
    action_mask, action_space_len, ActionMask, BinSpec, Flb, HeightMap, ItemDims, PackAction,
    StabilityRules,
};
pub use sim::{reset, run_episode, step, EpisodeResult, SimConfig, SimState, StepOutcome};
