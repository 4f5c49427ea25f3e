//! Voxel-grid primitives: the height-map bin state, placement arithmetic and
//! the stability-rule feasibility mask.
//!
//! The coordinate convention used everywhere in this crate: `x` indexes the
//! width axis `W` (rows), `y` indexes the length axis `L` (columns), origin at
//! the bin's front-left corner. Heights grow along `z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed bin dimensions in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub width: u32,
    pub length: u32,
    pub height: u32,
}

impl BinSpec {
    pub fn new(width: u32, length: u32, height: u32) -> Result<Self> {
        if width == 0 || length == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "bin dimensions must be >= 1, got {width}x{length}x{height}"
            )));
        }
        Ok(Self { width, length, height })
    }

    /// The standard 10x10x10 benchmark bin.
    pub fn cube10() -> Self {
        Self { width: 10, length: 10, height: 10 }
    }

    pub fn volume(&self) -> u64 {
        self.width as u64 * self.length as u64 * self.height as u64
    }

    pub fn is_square(&self) -> bool {
        self.width == self.length
    }
}

/// Dimensions of one cuboid item in voxels.
///
/// The all-zero item is the sequence-exhausted sentinel used to pad the
/// buffer; any other item must have all dimensions >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemDims {
    pub w: u32,
    pub l: u32,
    pub h: u32,
}

impl ItemDims {
    pub fn new(w: u32, l: u32, h: u32) -> Result<Self> {
        let zeros = [w, l, h].iter().filter(|&&d| d == 0).count();
        if zeros != 0 && zeros != 3 {
            return Err(Error::InvalidArgument(format!(
                "item dimensions must all be >= 1 (or all zero for the sentinel), got {w}x{l}x{h}"
            )));
        }
        Ok(Self { w, l, h })
    }

    /// The zero-dimension padding item.
    pub const SENTINEL: ItemDims = ItemDims { w: 0, l: 0, h: 0 };

    pub fn is_sentinel(&self) -> bool {
        self.w == 0 && self.l == 0 && self.h == 0
    }

    pub fn volume(&self) -> u64 {
        self.w as u64 * self.l as u64 * self.h as u64
    }

    /// Fits inside the bin in its current orientation.
    pub fn fits_in(&self, bin: &BinSpec) -> bool {
        self.w <= bin.width && self.l <= bin.length && self.h <= bin.height
    }
}

/// Front-left-bottom anchor of a placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flb {
    pub x: u32,
    pub y: u32,
}

/// One point of the `W x L x b x (k+1)` action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PackAction {
    pub slot: usize,
    pub orientation: usize,
    pub flb: Flb,
}

impl PackAction {
    /// Flat index layout, fixed for file/replay compatibility:
    /// `index = ((orientation * b + slot) * W + x) * L + y`.
    pub fn encode(&self, bin: &BinSpec, buffer_size: usize) -> usize {
        ((self.orientation * buffer_size + self.slot) * bin.width as usize
            + self.flb.x as usize)
            * bin.length as usize
            + self.flb.y as usize
    }

    /// Inverse of [`PackAction::encode`].
    pub fn decode(index: usize, bin: &BinSpec, buffer_size: usize) -> Self {
        let l = bin.length as usize;
        let w = bin.width as usize;
        let y = index % l;
        let rest = index / l;
        let x = rest % w;
        let rest = rest / w;
        let slot = rest % buffer_size;
        let orientation = rest / buffer_size;
        Self {
            slot,
            orientation,
            flb: Flb { x: x as u32, y: y as u32 },
        }
    }
}

/// Size of the flat action space for a bin and `(b, k)` configuration.
pub fn action_space_len(bin: &BinSpec, buffer_size: usize, k: usize) -> usize {
    bin.width as usize * bin.length as usize * buffer_size * (k + 1)
}

/// Applies the z-rotation indexed by `orientation`.
///
/// Orientation 0 is the item as delivered, orientation 1 swaps the footprint
/// `(w, l)`. Only `k <= 1` is supported.
pub fn oriented_dims(d: ItemDims, orientation: usize) -> Result<ItemDims> {
    match orientation {
        0 => Ok(d),
        1 => Ok(ItemDims { w: d.l, l: d.w, h: d.h }),
        _ => Err(Error::InvalidArgument(format!(
            "orientation {orientation} out of range (k <= 1)"
        ))),
    }
}

/// W x L matrix of column heights; the bin's entire observable state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HeightMap {
    width: u32,
    length: u32,
    cells: Vec<u32>,
}

impl HeightMap {
    /// All-zero map of the given footprint.
    pub fn new(width: u32, length: u32) -> Self {
        Self {
            width,
            length,
            cells: vec![0; width as usize * length as usize],
        }
    }

    pub fn from_cells(width: u32, length: u32, cells: Vec<u32>) -> Result<Self> {
        if cells.len() != width as usize * length as usize {
            return Err(Error::InvalidArgument(format!(
                "cell count {} does not match {width}x{length}",
                cells.len()
            )));
        }
        Ok(Self { width, length, cells })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn length(&self) -> u32 {
        self.length
    }

    pub fn at(&self, x: u32, y: u32) -> u32 {
        self.cells[x as usize * self.length as usize + y as usize]
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    fn set(&mut self, x: u32, y: u32, v: u32) {
        self.cells[x as usize * self.length as usize + y as usize] = v;
    }

    fn footprint_in_bounds(&self, d: ItemDims, flb: Flb) -> bool {
        flb.x as u64 + d.w as u64 <= self.width as u64
            && flb.y as u64 + d.l as u64 <= self.length as u64
    }

    /// Highest cell under the item footprint; the level the item rests on.
    pub fn region_max_height(&self, d: ItemDims, flb: Flb) -> Result<u32> {
        if !self.footprint_in_bounds(d, flb) {
            return Err(Error::OutOfBounds {
                x: flb.x,
                y: flb.y,
                w: d.w,
                l: d.l,
            });
        }
        let mut max = 0;
        for x in flb.x..flb.x + d.w {
            for y in flb.y..flb.y + d.l {
                max = max.max(self.at(x, y));
            }
        }
        Ok(max)
    }

    /// Pure placement update: every footprint cell becomes
    /// `region_max_height + d.h`.
    pub fn place(&self, bin: &BinSpec, d: ItemDims, flb: Flb) -> Result<HeightMap> {
        let base = self.region_max_height(d, flb)?;
        let top = base + d.h;
        if top > bin.height {
            return Err(Error::Placement(format!(
                "item top {top} exceeds bin height {}",
                bin.height
            )));
        }
        let mut out = self.clone();
        for x in flb.x..flb.x + d.w {
            for y in flb.y..flb.y + d.l {
                out.set(x, y, top);
            }
        }
        Ok(out)
    }

    /// Support fraction at the resting level and number of supported
    /// footprint corners.
    ///
    /// Only cells equal to the region max height count as support; the item
    /// physically rests on the highest points. The floor (max height 0 over
    /// an empty footprint) is full support by definition.
    pub fn support_stats(&self, d: ItemDims, flb: Flb) -> Result<(f64, u32)> {
        let rest = self.region_max_height(d, flb)?;
        let mut supported = 0u64;
        for x in flb.x..flb.x + d.w {
            for y in flb.y..flb.y + d.l {
                if self.at(x, y) == rest {
                    supported += 1;
                }
            }
        }
        let area = d.w as u64 * d.l as u64;
        let corners = [
            (flb.x, flb.y),
            (flb.x + d.w - 1, flb.y),
            (flb.x, flb.y + d.l - 1),
            (flb.x + d.w - 1, flb.y + d.l - 1),
        ];
        // 1x1 / 1xN footprints repeat corner cells; each geometric corner
        // still counts separately.
        let supported_corners = corners
            .iter()
            .filter(|&&(x, y)| self.at(x, y) == rest)
            .count() as u32;
        Ok((supported as f64 / area as f64, supported_corners))
    }
}

/// Inclusive support-ratio thresholds for the three disjunctive stability
/// rules: full-corner, three-corner and area-only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRules {
    pub four_corner_ratio: f64,
    pub three_corner_ratio: f64,
    pub area_only_ratio: f64,
}

impl Default for StabilityRules {
    fn default() -> Self {
        Self {
            four_corner_ratio: 0.60,
            three_corner_ratio: 0.80,
            area_only_ratio: 0.95,
        }
    }
}

impl StabilityRules {
    /// The disjunction over precomputed support stats.
    pub fn allows(&self, ratio: f64, corners: u32) -> bool {
        (ratio >= self.four_corner_ratio && corners == 4)
            || (ratio >= self.three_corner_ratio && corners >= 3)
            || ratio >= self.area_only_ratio
    }
}

/// Feasibility of placing the already-oriented item `d` at `flb`.
///
/// Out-of-bounds footprints and ceiling violations are simply infeasible,
/// not errors.
pub fn is_feasible(hm: &HeightMap, bin: &BinSpec, d: ItemDims, flb: Flb) -> bool {
    is_feasible_with(hm, bin, d, flb, &StabilityRules::default())
}

pub fn is_feasible_with(
    hm: &HeightMap,
    bin: &BinSpec,
    d: ItemDims,
    flb: Flb,
    rules: &StabilityRules,
) -> bool {
    if d.is_sentinel() {
        return false;
    }
    if !hm.footprint_in_bounds(d, flb) {
        return false;
    }
    let rest = match hm.region_max_height(d, flb) {
        Ok(v) => v,
        Err(_) => return false,
    };
    if rest + d.h > bin.height {
        return false;
    }
    let (ratio, corners) = hm.support_stats(d, flb).expect("footprint checked");
    rules.allows(ratio, corners)
}

/// Boolean feasibility tensor over the `W x L x b x (k+1)` action space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    bin: BinSpec,
    buffer_size: usize,
    k: usize,
    bits: Vec<bool>,
}

impl ActionMask {
    pub fn all_false(bin: BinSpec, buffer_size: usize, k: usize) -> Self {
        let len = action_space_len(&bin, buffer_size, k);
        Self { bin, buffer_size, k, bits: vec![false; len] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, a: &PackAction) -> bool {
        self.bits[a.encode(&self.bin, self.buffer_size)]
    }

    pub fn set(&mut self, a: &PackAction, v: bool) {
        let idx = a.encode(&self.bin, self.buffer_size);
        self.bits[idx] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.bits.iter().any(|&b| b)
    }

    /// True bits in flat-index order.
    pub fn true_actions(&self) -> Vec<PackAction> {
        self.bits
            .iter()
            .enumerate()
            .filter(|&(_, &b)| b)
            .map(|(i, _)| PackAction::decode(i, &self.bin, self.buffer_size))
            .collect()
    }
}

/// Computes the full action mask for a buffer of items.
///
/// Sentinel slots contribute all-false bits.
pub fn action_mask(hm: &HeightMap, bin: &BinSpec, buffer: &[ItemDims], k: usize) -> ActionMask {
    action_mask_with(hm, bin, buffer, k, &StabilityRules::default())
}

pub fn action_mask_with(
    hm: &HeightMap,
    bin: &BinSpec,
    buffer: &[ItemDims],
    k: usize,
    rules: &StabilityRules,
) -> ActionMask {
    let mut mask = ActionMask::all_false(*bin, buffer.len(), k);
    for orientation in 0..=k {
        for (slot, &item) in buffer.iter().enumerate() {
            if item.is_sentinel() {
                continue;
            }
            let d = oriented_dims(item, orientation).expect("k <= 1 checked by config");
            for x in 0..bin.width {
                for y in 0..bin.length {
                    let a = PackAction { slot, orientation, flb: Flb { x, y } };
                    if is_feasible_with(hm, bin, d, a.flb, rules) {
                        mask.set(&a, true);
                    }
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(w: u32, l: u32, h: u32) -> ItemDims {
        ItemDims::new(w, l, h).unwrap()
    }

    #[test]
    fn oriented_dims_cases() {
        assert_eq!(oriented_dims(dims(3, 2, 4), 0).unwrap(), dims(3, 2, 4));
        assert_eq!(oriented_dims(dims(3, 2, 4), 1).unwrap(), dims(2, 3, 4));
        assert_eq!(oriented_dims(dims(2, 2, 5), 1).unwrap(), dims(2, 2, 5));
        assert!(oriented_dims(dims(1, 1, 1), 2).is_err());
    }

    #[test]
    fn region_max_height_cases() {
        let hm = HeightMap::new(3, 3);
        assert_eq!(hm.region_max_height(dims(2, 2, 1), Flb { x: 0, y: 0 }).unwrap(), 0);

        let mut cells = vec![0; 9];
        cells[0] = 4;
        let hm = HeightMap::from_cells(3, 3, cells).unwrap();
        assert_eq!(hm.region_max_height(dims(2, 2, 1), Flb { x: 0, y: 0 }).unwrap(), 4);

        let mut cells = vec![0; 9];
        cells[2 * 3 + 2] = 7;
        let hm = HeightMap::from_cells(3, 3, cells).unwrap();
        assert_eq!(hm.region_max_height(dims(1, 1, 1), Flb { x: 2, y: 2 }).unwrap(), 7);

        assert!(hm.region_max_height(dims(2, 2, 1), Flb { x: 2, y: 2 }).is_err());
    }

    #[test]
    fn place_cases() {
        let bin = BinSpec::new(3, 3, 10).unwrap();
        let hm = HeightMap::new(3, 3);
        let after = hm.place(&bin, dims(2, 2, 2), Flb { x: 0, y: 0 }).unwrap();
        for (x, y) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(after.at(x, y), 2);
        }
        assert_eq!(after.at(2, 2), 0);
        // Input untouched.
        assert_eq!(hm.at(0, 0), 0);

        // Overhang raises the whole footprint to max + h.
        let after2 = after.place(&bin, dims(2, 2, 1), Flb { x: 1, y: 1 }).unwrap();
        for (x, y) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            assert_eq!(after2.at(x, y), 3);
        }

        // Full-height column fits exactly; one more layer does not.
        let tall = hm.place(&bin, dims(2, 2, 10), Flb { x: 0, y: 0 }).unwrap();
        assert_eq!(tall.at(0, 0), 10);
        assert!(tall.place(&bin, dims(1, 1, 1), Flb { x: 0, y: 0 }).is_err());
    }

    #[test]
    fn support_stats_cases() {
        let hm = HeightMap::new(4, 4);
        assert_eq!(hm.support_stats(dims(2, 2, 1), Flb { x: 1, y: 1 }).unwrap(), (1.0, 4));

        let mut cells = vec![0; 16];
        cells[0] = 1; // (0,0)
        let hm = HeightMap::from_cells(4, 4, cells).unwrap();
        assert_eq!(hm.support_stats(dims(2, 2, 1), Flb { x: 0, y: 0 }).unwrap(), (0.25, 1));

        let mut cells = vec![0; 16];
        cells[0] = 1;
        cells[1] = 1;
        cells[4] = 1; // (1,0)
        let hm = HeightMap::from_cells(4, 4, cells).unwrap();
        assert_eq!(hm.support_stats(dims(2, 2, 1), Flb { x: 0, y: 0 }).unwrap(), (0.75, 3));
    }

    #[test]
    fn stability_rule_cases() {
        let rules = StabilityRules::default();
        assert!(!rules.allows(0.75, 3));
        assert!(rules.allows(1.0, 4));
        assert!(rules.allows(0.96, 2));
        // Inclusive thresholds: exact fractions pass.
        assert!(rules.allows(0.60, 4));
        assert!(rules.allows(0.80, 3));
        assert!(rules.allows(0.95, 0));
    }

    #[test]
    fn mask_empty_bin() {
        let bin = BinSpec::cube10();
        let hm = HeightMap::new(10, 10);
        let mask = action_mask(&hm, &bin, &[dims(2, 2, 2)], 0);
        assert_eq!(mask.count_true(), 81);
        for a in mask.true_actions() {
            assert!(a.flb.x <= 8 && a.flb.y <= 8);
        }
    }

    #[test]
    fn mask_sentinel_all_false() {
        let bin = BinSpec::cube10();
        let hm = HeightMap::new(10, 10);
        let mask = action_mask(&hm, &bin, &[ItemDims::SENTINEL], 0);
        assert!(!mask.any());
    }

    /// Independent brute-force recomputation of the three stability rules.
    pub fn brute_force_mask(
        hm: &HeightMap,
        bin: &BinSpec,
        buffer: &[ItemDims],
        k: usize,
    ) -> ActionMask {
        let mut mask = ActionMask::all_false(*bin, buffer.len(), k);
        for o in 0..=k {
            for (slot, &item) in buffer.iter().enumerate() {
                if item.is_sentinel() {
                    continue;
                }
                let d = oriented_dims(item, o).unwrap();
                for x in 0..bin.width {
                    for y in 0..bin.length {
                        if x + d.w > bin.width || y + d.l > bin.length {
                            continue;
                        }
                        let mut rest = 0;
                        for i in x..x + d.w {
                            for j in y..y + d.l {
                                rest = rest.max(hm.at(i, j));
                            }
                        }
                        if rest + d.h > bin.height {
                            continue;
                        }
                        let area = (d.w * d.l) as f64;
                        let mut sup = 0u32;
                        for i in x..x + d.w {
                            for j in y..y + d.l {
                                if hm.at(i, j) == rest {
                                    sup += 1;
                                }
                            }
                        }
                        let corner_cells = [
                            (x, y),
                            (x + d.w - 1, y),
                            (x, y + d.l - 1),
                            (x + d.w - 1, y + d.l - 1),
                        ];
                        let corners =
                            corner_cells.iter().filter(|&&(i, j)| hm.at(i, j) == rest).count();
                        let ratio = sup as f64 / area;
                        let ok = (ratio >= 0.60 && corners == 4)
                            || (ratio >= 0.80 && corners >= 3)
                            || ratio >= 0.95;
                        if ok {
                            mask.set(
                                &PackAction { slot, orientation: o, flb: Flb { x, y } },
                                true,
                            );
                        }
                    }
                }
            }
        }
        mask
    }

    pub fn random_heightmap(rng: &mut impl Rng, bin: &BinSpec) -> HeightMap {
        let cells = (0..bin.width * bin.length)
            .map(|_| rng.gen_range(0..=bin.height))
            .collect();
        HeightMap::from_cells(bin.width, bin.length, cells).unwrap()
    }

    #[test]
    fn mask_matches_brute_force_oracle() {
        let bin = BinSpec::cube10();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let hm = random_heightmap(&mut rng, &bin);
            let buffer = [dims(3, 4, 2)];
            let got = action_mask(&hm, &bin, &buffer, 1);
            let want = brute_force_mask(&hm, &bin, &buffer, 1);
            assert_eq!(got, want);
        }
    }

    proptest! {
        #[test]
        fn pack_action_encode_roundtrip(idx in 0usize..10 * 10 * 3 * 2) {
            let bin = BinSpec::cube10();
            let a = PackAction::decode(idx, &bin, 3);
            prop_assert_eq!(a.encode(&bin, 3), idx);
        }

        #[test]
        fn place_is_monotone_and_levels_footprint(
            seed in any::<u64>(),
            w in 1u32..5, l in 1u32..5, h in 1u32..4,
            x in 0u32..9, y in 0u32..9,
        ) {
            let bin = BinSpec::cube10();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cells: Vec<u32> = (0..100).map(|_| rng.gen_range(0..5)).collect();
            let hm = HeightMap::from_cells(10, 10, cells).unwrap();
            let d = dims(w, l, h);
            if x + w <= 10 && y + l <= 10 {
                if let Ok(after) = hm.place(&bin, d, Flb { x, y }) {
                    let top = hm.region_max_height(d, Flb { x, y }).unwrap() + h;
                    for i in 0..10u32 {
                        for j in 0..10u32 {
                            prop_assert!(after.at(i, j) >= hm.at(i, j));
                            let inside = i >= x && i < x + w && j >= y && j < y + l;
                            if inside {
                                prop_assert_eq!(after.at(i, j), top);
                            } else {
                                prop_assert_eq!(after.at(i, j), hm.at(i, j));
                            }
                        }
                    }
                }
            }
        }

        #[test]
        fn feasible_implies_place_succeeds(seed in any::<u64>()) {
            let bin = BinSpec::cube10();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hm = random_heightmap(&mut rng, &bin);
            let d = dims(
                rng.gen_range(1..=5),
                rng.gen_range(1..=5),
                rng.gen_range(1..=5),
            );
            for x in 0..10u32 {
                for y in 0..10u32 {
                    let at = Flb { x, y };
                    if is_feasible(&hm, &bin, d, at) {
                        prop_assert!(hm.place(&bin, d, at).is_ok());
                    }
                }
            }
        }

        #[test]
        fn support_ratio_bounds(seed in any::<u64>()) {
            let bin = BinSpec::cube10();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hm = random_heightmap(&mut rng, &bin);
            let d = dims(rng.gen_range(1..=5), rng.gen_range(1..=5), 1);
            let x = rng.gen_range(0..=10 - d.w);
            let y = rng.gen_range(0..=10 - d.l);
            let (ratio, corners) = hm.support_stats(d, Flb { x, y }).unwrap();
            prop_assert!((0.0..=1.0).contains(&ratio));
            prop_assert!(corners <= 4);
            if ratio == 1.0 {
                prop_assert_eq!(corners, 4);
            }
        }
    }
}
