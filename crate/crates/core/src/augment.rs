//! Dihedral-symmetry data augmentation of (height map, buffer, action
//! probabilities) samples.
//!
//! The FLB readjustment is *defined* by equivariance: the transformed action
//! is the unique placement that reproduces the transformed post-placement
//! map. Closed forms are used here and validated against a search oracle in
//! the tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{oriented_dims, BinSpec, Flb, HeightMap, ItemDims, PackAction};

/// Element of the 8-element dihedral group acting on the bin footprint.
///
/// Rotations are quarter turns applied first; the optional flip (over the
/// width axis, `x -> W-1-x`) is applied after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symmetry {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    Flip,
    FlipRot90,
    FlipRot180,
    FlipRot270,
}

impl Symmetry {
    pub const ALL: [Symmetry; 8] = [
        Symmetry::Identity,
        Symmetry::Rot90,
        Symmetry::Rot180,
        Symmetry::Rot270,
        Symmetry::Flip,
        Symmetry::FlipRot90,
        Symmetry::FlipRot180,
        Symmetry::FlipRot270,
    ];

    /// The subgroup usable on rectangular bins without transposing shapes.
    pub const RECT_SUBGROUP: [Symmetry; 4] = [
        Symmetry::Identity,
        Symmetry::Rot180,
        Symmetry::Flip,
        Symmetry::FlipRot180,
    ];

    /// Quarter turns applied before the flip.
    pub fn rotations(&self) -> u32 {
        match self {
            Symmetry::Identity | Symmetry::Flip => 0,
            Symmetry::Rot90 | Symmetry::FlipRot90 => 1,
            Symmetry::Rot180 | Symmetry::FlipRot180 => 2,
            Symmetry::Rot270 | Symmetry::FlipRot270 => 3,
        }
    }

    pub fn flipped(&self) -> bool {
        matches!(
            self,
            Symmetry::Flip | Symmetry::FlipRot90 | Symmetry::FlipRot180 | Symmetry::FlipRot270
        )
    }

    /// Odd rotations exchange the width and length axes.
    pub fn swaps_axes(&self) -> bool {
        self.rotations() % 2 == 1
    }

    pub fn from_parts(rotations: u32, flipped: bool) -> Symmetry {
        match (rotations % 4, flipped) {
            (0, false) => Symmetry::Identity,
            (1, false) => Symmetry::Rot90,
            (2, false) => Symmetry::Rot180,
            (_, false) => Symmetry::Rot270,
            (0, true) => Symmetry::Flip,
            (1, true) => Symmetry::FlipRot90,
            (2, true) => Symmetry::FlipRot180,
            (_, true) => Symmetry::FlipRot270,
        }
    }

    /// Group inverse; flip-containing elements are involutions.
    pub fn inverse(&self) -> Symmetry {
        if self.flipped() {
            *self
        } else {
            Symmetry::from_parts((4 - self.rotations()) % 4, false)
        }
    }
}

/// Whether odd rotations are allowed to transpose a rectangular bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeMode {
    /// Odd rotations on a rectangular bin are an error.
    Strict,
    /// Odd rotations emit transposed-shape samples.
    Flexible,
}

fn frame_after(sym: Symmetry, width: u32, length: u32) -> (u32, u32) {
    if sym.swaps_axes() {
        (length, width)
    } else {
        (width, length)
    }
}

/// Maps a cell through one quarter turn: `W x L` frame becomes `L x W`.
fn rot_cell(x: u32, y: u32, width: u32) -> (u32, u32) {
    (y, width - 1 - x)
}

/// Maps a cell through the full symmetry, returning the cell in the
/// transformed frame.
fn transform_cell(sym: Symmetry, mut x: u32, mut y: u32, mut width: u32, mut length: u32) -> (u32, u32) {
    for _ in 0..sym.rotations() {
        let (nx, ny) = rot_cell(x, y, width);
        std::mem::swap(&mut width, &mut length);
        x = nx;
        y = ny;
    }
    if sym.flipped() {
        x = width - 1 - x;
    }
    let _ = length;
    (x, y)
}

/// Maps a footprint rectangle `(flb, w, l)` through the symmetry, returning
/// the transformed FLB and footprint dims.
fn transform_rect(
    sym: Symmetry,
    mut x: u32,
    mut y: u32,
    mut w: u32,
    mut l: u32,
    mut width: u32,
    mut length: u32,
) -> (u32, u32, u32, u32) {
    for _ in 0..sym.rotations() {
        let (nx, ny) = (y, width - x - w);
        std::mem::swap(&mut width, &mut length);
        x = nx;
        y = ny;
        std::mem::swap(&mut w, &mut l);
    }
    if sym.flipped() {
        x = width - x - w;
    }
    let _ = length;
    (x, y, w, l)
}

fn check_shape(sym: Symmetry, width: u32, length: u32, mode: ShapeMode) -> Result<()> {
    if sym.swaps_axes() && width != length && mode == ShapeMode::Strict {
        return Err(Error::UnsupportedTransform(format!(
            "{sym:?} on a {width}x{length} bin requires shape-flexible mode"
        )));
    }
    Ok(())
}

/// Rotates/flips the height map cells.
pub fn transform_heightmap(hm: &HeightMap, sym: Symmetry, mode: ShapeMode) -> Result<HeightMap> {
    check_shape(sym, hm.width(), hm.length(), mode)?;
    let (w2, l2) = frame_after(sym, hm.width(), hm.length());
    let mut cells = vec![0u32; (w2 * l2) as usize];
    for x in 0..hm.width() {
        for y in 0..hm.length() {
            let (nx, ny) = transform_cell(sym, x, y, hm.width(), hm.length());
            cells[(nx * l2 + ny) as usize] = hm.at(x, y);
        }
    }
    HeightMap::from_cells(w2, l2, cells)
}

/// Item dims after the symmetry: odd rotations swap `(w, l)`.
pub fn transform_item(d: ItemDims, sym: Symmetry) -> ItemDims {
    if sym.swaps_axes() {
        ItemDims { w: d.l, l: d.w, h: d.h }
    } else {
        d
    }
}

/// The FLB that reproduces the transformed placement: the equivariance
/// closed form. `d` is the already-oriented footprint in the original frame.
pub fn transform_flb(flb: Flb, d: ItemDims, sym: Symmetry, bin: &BinSpec) -> Flb {
    let (x, y, _, _) = transform_rect(sym, flb.x, flb.y, d.w, d.l, bin.width, bin.length);
    Flb { x, y }
}

/// Per-slot buffer items of the transformed sample.
///
/// With `k = 0` the items themselves are rotated; with `k = 1` the items are
/// left untouched and the orientation channels of the action tensor swap
/// instead.
pub fn transform_buffer(buffer: &[ItemDims], sym: Symmetry, k: usize) -> Vec<ItemDims> {
    if sym.swaps_axes() && k == 0 {
        buffer.iter().map(|&d| transform_item(d, sym)).collect()
    } else {
        buffer.to_vec()
    }
}

fn transform_action_field<T: Copy + Default>(
    field: &[T],
    buffer: &[ItemDims],
    k: usize,
    sym: Symmetry,
    bin: &BinSpec,
    is_zero: impl Fn(&T) -> bool,
) -> Vec<T> {
    let b = buffer.len();
    let len = crate::geometry::action_space_len(bin, b, k);
    assert_eq!(field.len(), len, "action field length mismatch");
    let (w2, l2) = frame_after(sym, bin.width, bin.length);
    let out_bin = BinSpec { width: w2, length: l2, height: bin.height };
    let mut out = vec![T::default(); len];
    let swap_channels = sym.swaps_axes() && k >= 1;
    for idx in 0..len {
        if is_zero(&field[idx]) {
            continue;
        }
        let a = PackAction::decode(idx, bin, b);
        let d = oriented_dims(buffer[a.slot], a.orientation).expect("k <= 1");
        assert!(!d.is_sentinel(), "mass on a sentinel slot");
        let flb = transform_flb(a.flb, d, sym, bin);
        let orientation = if swap_channels {
            1 - a.orientation
        } else {
            a.orientation
        };
        let ta = PackAction { slot: a.slot, orientation, flb };
        let out_idx = ta.encode(&out_bin, b);
        assert!(out_idx < len, "transformed action fell off the grid");
        out[out_idx] = field[idx];
    }
    out
}

/// Transforms a probability tensor over the `W x L x b x (k+1)` action
/// space; probability mass is moved, never created or lost.
pub fn transform_policy(
    policy: &[f64],
    buffer: &[ItemDims],
    k: usize,
    sym: Symmetry,
    bin: &BinSpec,
) -> Vec<f64> {
    transform_action_field(policy, buffer, k, sym, bin, |&p| p == 0.0)
}

/// Transforms a boolean feasibility tensor with the same action remapping.
pub fn transform_mask_bits(
    bits: &[bool],
    buffer: &[ItemDims],
    k: usize,
    sym: Symmetry,
    bin: &BinSpec,
) -> Vec<bool> {
    transform_action_field(bits, buffer, k, sym, bin, |&b| !b)
}

/// One training sample before augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub heightmap: HeightMap,
    pub buffer: Vec<ItemDims>,
    /// Probability tensor over the flat action space.
    pub policy: Vec<f64>,
}

/// A transformed copy of a sample; the scalar return target is
/// symmetry-invariant and stays with the parent.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub heightmap: HeightMap,
    pub buffer: Vec<ItemDims>,
    pub policy: Vec<f64>,
    pub applied: Symmetry,
}

/// Applies each requested symmetry to the sample.
pub fn augment_sample(
    sample: &Sample,
    syms: &[Symmetry],
    k: usize,
    bin: &BinSpec,
    mode: ShapeMode,
) -> Result<Vec<AugmentedSample>> {
    syms.iter()
        .map(|&sym| {
            let heightmap = transform_heightmap(&sample.heightmap, sym, mode)?;
            let buffer = transform_buffer(&sample.buffer, sym, k);
            let policy = transform_policy(&sample.policy, &sample.buffer, k, sym, bin);
            Ok(AugmentedSample { heightmap, buffer, policy, applied: sym })
        })
        .collect()
}

/// The symmetry set usable for a bin shape: the full group on square bins,
/// the 4-element subgroup on rectangular bins in strict mode.
pub fn symmetries_for(bin: &BinSpec, mode: ShapeMode) -> Vec<Symmetry> {
    if bin.is_square() || mode == ShapeMode::Flexible {
        Symmetry::ALL.to_vec()
    } else {
        Symmetry::RECT_SUBGROUP.to_vec()
    }
}
