//! The preventive online packing environment: buffer management, step
//! semantics, reward and termination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    action_mask_with, oriented_dims, ActionMask, BinSpec, Flb, HeightMap, ItemDims, PackAction,
    StabilityRules,
};

/// Environment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub bin: BinSpec,
    /// Buffer size `b >= 1`.
    pub buffer_size: usize,
    /// Allowed z-reorientations `k` (0 or 1).
    pub orientations: usize,
    pub reward_scale: f64,
    pub gamma: f64,
    pub rules: StabilityRules,
}

impl SimConfig {
    pub fn new(bin: BinSpec) -> Self {
        Self {
            bin,
            buffer_size: 1,
            orientations: 0,
            reward_scale: 10.0,
            gamma: 1.0,
            rules: StabilityRules::default(),
        }
    }

    pub fn with_buffer(mut self, b: usize) -> Self {
        self.buffer_size = b.max(1);
        self
    }

    pub fn with_orientations(mut self, k: usize) -> Self {
        self.orientations = k;
        self
    }
}

/// Full environment state; a value, stepped purely.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub heightmap: HeightMap,
    /// Exactly `b` slots, sentinel-padded once the sequence runs out.
    pub buffer: Vec<ItemDims>,
    /// Next unconsumed index into the item sequence.
    pub cursor: usize,
    pub packed_volume: u64,
    pub packed_count: u32,
    pub cumulative_reward: f64,
    pub terminal: bool,
}

impl SimState {
    /// Deterministic digest of (height map, buffer) for trace records.
    /// FNV-1a so the value is stable across processes.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for &c in self.heightmap.cells() {
            eat(c as u64);
        }
        for item in &self.buffer {
            eat(item.w as u64);
            eat(item.l as u64);
            eat(item.h as u64);
        }
        eat(self.cursor as u64);
        h
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: SimState,
    pub reward: f64,
    /// The item as placed (already oriented).
    pub placed_item: ItemDims,
    pub placed_at: Flb,
    pub orientation: usize,
}

fn mask_of(s: &SimState, cfg: &SimConfig) -> ActionMask {
    action_mask_with(
        &s.heightmap,
        &cfg.bin,
        &s.buffer,
        cfg.orientations,
        &cfg.rules,
    )
}

/// Starts an episode over `seq`.
pub fn reset(seq: &[ItemDims], cfg: &SimConfig) -> Result<SimState> {
    for (i, item) in seq.iter().enumerate() {
        if !item.is_sentinel() && !item.fits_in(&cfg.bin) {
            return Err(Error::InvalidSequence(format!(
                "item {i} ({}x{}x{}) does not fit in the bin",
                item.w, item.l, item.h
            )));
        }
    }
    let take = cfg.buffer_size.min(seq.len());
    let mut buffer = seq[..take].to_vec();
    buffer.resize(cfg.buffer_size, ItemDims::SENTINEL);
    let mut state = SimState {
        heightmap: HeightMap::new(cfg.bin.width, cfg.bin.length),
        buffer,
        cursor: take,
        packed_volume: 0,
        packed_count: 0,
        cumulative_reward: 0.0,
        terminal: false,
    };
    state.terminal = !mask_of(&state, cfg).any();
    Ok(state)
}

/// Applies one mask-legal action.
///
/// The placed slot is refilled in place by the next sequence item (or the
/// sentinel once the sequence is exhausted); illegal actions are hard errors.
pub fn step(s: &SimState, a: &PackAction, seq: &[ItemDims], cfg: &SimConfig) -> Result<StepOutcome> {
    if s.terminal {
        return Err(Error::State("step on a terminal state".into()));
    }
    if a.slot >= cfg.buffer_size || a.orientation > cfg.orientations {
        return Err(Error::IllegalAction(format!(
            "slot {} / orientation {} outside the configured action space",
            a.slot, a.orientation
        )));
    }
    let item = s.buffer[a.slot];
    let d = oriented_dims(item, a.orientation)?;
    if !crate::geometry::is_feasible_with(&s.heightmap, &cfg.bin, d, a.flb, &cfg.rules) {
        return Err(Error::IllegalAction(format!(
            "infeasible placement of {}x{}x{} at ({},{})",
            d.w, d.l, d.h, a.flb.x, a.flb.y
        )));
    }
    let heightmap = s.heightmap.place(&cfg.bin, d, a.flb)?;
    let mut buffer = s.buffer.clone();
    let mut cursor = s.cursor;
    if cursor < seq.len() {
        buffer[a.slot] = seq[cursor];
        cursor += 1;
    } else {
        buffer[a.slot] = ItemDims::SENTINEL;
    }
    let packed_volume = s.packed_volume + d.volume();
    let reward = cfg.reward_scale * d.volume() as f64 / cfg.bin.volume() as f64;
    let mut next_state = SimState {
        heightmap,
        buffer,
        cursor,
        packed_volume,
        packed_count: s.packed_count + 1,
        // Recomputed from packed volume so the invariant holds exactly.
        cumulative_reward: cfg.reward_scale * packed_volume as f64 / cfg.bin.volume() as f64,
        terminal: false,
    };
    next_state.terminal = !mask_of(&next_state, cfg).any();
    Ok(StepOutcome {
        next_state,
        reward,
        placed_item: d,
        placed_at: a.flb,
        orientation: a.orientation,
    })
}

/// All mask-true actions in flat-index order.
pub fn legal_actions(s: &SimState, cfg: &SimConfig) -> Vec<PackAction> {
    if s.terminal {
        return Vec::new();
    }
    mask_of(s, cfg).true_actions()
}

/// The action mask for the current state.
pub fn state_mask(s: &SimState, cfg: &SimConfig) -> ActionMask {
    mask_of(s, cfg)
}

/// Packed volume over bin volume.
pub fn utilization(s: &SimState, cfg: &SimConfig) -> f64 {
    s.packed_volume as f64 / cfg.bin.volume() as f64
}

/// One step of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state_digest: u64,
    pub action: PackAction,
    pub reward: f64,
    pub mask_cardinality: usize,
    /// Oriented dims of the item as placed.
    pub placed: ItemDims,
}

/// Canonical per-episode log used by benchmarking, training and rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub steps: Vec<StepRecord>,
    pub utilization: f64,
    pub packed_count: u32,
    /// Undiscounted cumulative reward.
    pub total_reward: f64,
    /// Discounted return with the configured gamma.
    pub discounted_return: f64,
}

/// Runs an episode to termination with the given action selector.
///
/// The selector must return a mask-legal action; anything else aborts the
/// episode with an illegal-action error.
pub fn run_episode(
    seq: &[ItemDims],
    cfg: &SimConfig,
    mut select: impl FnMut(&SimState) -> Result<PackAction>,
) -> Result<EpisodeResult> {
    let mut state = reset(seq, cfg)?;
    let mut steps = Vec::new();
    let mut discounted = 0.0;
    let mut discount = 1.0;
    while !state.terminal {
        let mask_cardinality = mask_of(&state, cfg).count_true();
        let action = select(&state)?;
        let digest = state.digest();
        let outcome = step(&state, &action, seq, cfg)?;
        steps.push(StepRecord {
            state_digest: digest,
            action,
            reward: outcome.reward,
            mask_cardinality,
            placed: outcome.placed_item,
        });
        discounted += discount * outcome.reward;
        discount *= cfg.gamma;
        state = outcome.next_state;
    }
    Ok(EpisodeResult {
        utilization: utilization(&state, cfg),
        packed_count: state.packed_count,
        total_reward: state.cumulative_reward,
        discounted_return: discounted,
        steps,
    })
}
