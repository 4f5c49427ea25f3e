//! CUT-1, CUT-2 and RS benchmark sequence generation plus dataset
//! serialization.
//!
//! CUT kinds carry the guillotine-cut placements as provenance so the
//! simulator can replay them to exactly 100% utilization (the replay
//! oracle). RS items are simply uniform in `[2,5]` per dimension.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinSpec, ItemDims};

/// Benchmark sequence family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqKind {
    Cut1,
    Cut2,
    Rs,
}

impl SeqKind {
    pub fn has_provenance(&self) -> bool {
        !matches!(self, SeqKind::Rs)
    }
}

impl fmt::Display for SeqKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeqKind::Cut1 => write!(f, "cut1"),
            SeqKind::Cut2 => write!(f, "cut2"),
            SeqKind::Rs => write!(f, "rs"),
        }
    }
}

impl std::str::FromStr for SeqKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cut1" | "cut-1" => Ok(SeqKind::Cut1),
            "cut2" | "cut-2" => Ok(SeqKind::Cut2),
            "rs" => Ok(SeqKind::Rs),
            other => Err(Error::InvalidArgument(format!("unknown sequence kind '{other}'"))),
        }
    }
}

/// An item together with its true position inside the bin tiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedItem {
    pub dims: ItemDims,
    pub origin: (u32, u32, u32),
}

/// One generated benchmark sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: u64,
    pub kind: SeqKind,
    pub bin: BinSpec,
    pub items: Vec<ItemDims>,
    /// Tiling placements in sequence order; present for CUT kinds only.
    pub provenance: Option<Vec<PlacedItem>>,
    pub seed: u64,
}

/// Generation knobs; the defaults match the standard benchmark setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub min_dim: u32,
    pub max_dim: u32,
    /// Probability of splitting a cuboid that already satisfies the size
    /// constraint, for item-count variety. 0 = minimal splitting.
    pub extra_split_prob: f64,
    /// RS sequence length.
    pub rs_len: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { min_dim: 2, max_dim: 5, extra_split_prob: 0.0, rs_len: 50 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cuboid {
    origin: (u32, u32, u32),
    dims: (u32, u32, u32),
}

/// Recursive guillotine partition of the bin.
///
/// While any cuboid has an axis longer than `max_dim`, split it
/// perpendicular to such an axis at a uniformly random offset leaving both
/// parts at least `min_dim`. The result tiles the bin exactly.
pub fn gen_cut_items(bin: &BinSpec, gen: &GenConfig, rng: &mut impl Rng) -> Vec<PlacedItem> {
    let mut work = vec![Cuboid {
        origin: (0, 0, 0),
        dims: (bin.width, bin.length, bin.height),
    }];
    let mut done = Vec::new();
    while let Some(c) = work.pop() {
        let sides = [c.dims.0, c.dims.1, c.dims.2];
        let mut splittable: Vec<usize> =
            (0..3).filter(|&ax| sides[ax] > gen.max_dim).collect();
        if splittable.is_empty() && gen.extra_split_prob > 0.0 && rng.gen_bool(gen.extra_split_prob)
        {
            // Optional extra split of an already-valid cuboid.
            splittable = (0..3).filter(|&ax| sides[ax] >= 2 * gen.min_dim).collect();
        }
        let Some(&axis) = splittable.as_slice().choose(rng) else {
            done.push(PlacedItem {
                dims: ItemDims { w: c.dims.0, l: c.dims.1, h: c.dims.2 },
                origin: c.origin,
            });
            continue;
        };
        let len = sides[axis];
        let offset = rng.gen_range(gen.min_dim..=len - gen.min_dim);
        let (mut a, mut b) = (c, c);
        match axis {
            0 => {
                a.dims.0 = offset;
                b.dims.0 = len - offset;
                b.origin.0 += offset;
            }
            1 => {
                a.dims.1 = offset;
                b.dims.1 = len - offset;
                b.origin.1 += offset;
            }
            _ => {
                a.dims.2 = offset;
                b.dims.2 = len - offset;
                b.origin.2 += offset;
            }
        }
        work.push(a);
        work.push(b);
    }
    done
}

/// CUT-1 ordering: stable sort by origin z, ties permuted uniformly.
pub fn sort_cut1(items: &[PlacedItem], rng: &mut impl Rng) -> Vec<PlacedItem> {
    let mut out: Vec<PlacedItem> = items.to_vec();
    out.sort_by_key(|p| p.origin.2);
    // Shuffle within each tie class.
    let mut i = 0;
    while i < out.len() {
        let z = out[i].origin.2;
        let mut j = i;
        while j < out.len() && out[j].origin.2 == z {
            j += 1;
        }
        out[i..j].shuffle(rng);
        i = j;
    }
    out
}

/// Direct support: `a`'s top face touches `b`'s bottom with positive-area
/// footprint overlap.
pub fn supports(a: &PlacedItem, b: &PlacedItem) -> bool {
    if a.origin.2 + a.dims.h != b.origin.2 {
        return false;
    }
    let overlap_w = (a.origin.0 + a.dims.w).min(b.origin.0 + b.dims.w) as i64
        - a.origin.0.max(b.origin.0) as i64;
    let overlap_l = (a.origin.1 + a.dims.l).min(b.origin.1 + b.dims.l) as i64
        - a.origin.1.max(b.origin.1) as i64;
    overlap_w > 0 && overlap_l > 0
}

/// CUT-2 ordering: uniformly random topological order of the supports DAG.
pub fn sort_cut2(items: &[PlacedItem], rng: &mut impl Rng) -> Vec<PlacedItem> {
    let n = items.len();
    let mut indegree = vec![0usize; n];
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && supports(&items[i], &items[j]) {
                out_edges[i].push(j);
                indegree[j] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        let pick = rng.gen_range(0..ready.len());
        let i = ready.swap_remove(pick);
        order.push(items[i]);
        for &j in &out_edges[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push(j);
            }
        }
    }
    assert_eq!(order.len(), n, "supports DAG of a valid tiling must be acyclic");
    order
}

/// Uniform random items with each dimension in `[min_dim, max_dim]`.
pub fn gen_rs(gen: &GenConfig, n_items: usize, rng: &mut impl Rng) -> Vec<ItemDims> {
    (0..n_items)
        .map(|_| ItemDims {
            w: rng.gen_range(gen.min_dim..=gen.max_dim),
            l: rng.gen_range(gen.min_dim..=gen.max_dim),
            h: rng.gen_range(gen.min_dim..=gen.max_dim),
        })
        .collect()
}

/// Derives the per-record rng stream from the dataset master seed.
pub fn record_seed(master_seed: u64, id: u64) -> u64 {
    // SplitMix64 over master ^ golden-ratio-scaled id.
    let mut z = master_seed ^ id.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Generates one record; fully determined by `(kind, bin, gen, master_seed, id)`.
pub fn make_record(
    kind: SeqKind,
    bin: &BinSpec,
    gen: &GenConfig,
    master_seed: u64,
    id: u64,
) -> SequenceRecord {
    let seed = record_seed(master_seed, id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SeqKind::Rs => SequenceRecord {
            id,
            kind,
            bin: *bin,
            items: gen_rs(gen, gen.rs_len, &mut rng),
            provenance: None,
            seed,
        },
        SeqKind::Cut1 | SeqKind::Cut2 => {
            let cut = gen_cut_items(bin, gen, &mut rng);
            let ordered = match kind {
                SeqKind::Cut1 => sort_cut1(&cut, &mut rng),
                _ => sort_cut2(&cut, &mut rng),
            };
            SequenceRecord {
                id,
                kind,
                bin: *bin,
                items: ordered.iter().map(|p| p.dims).collect(),
                provenance: Some(ordered),
                seed,
            }
        }
    }
}

/// A generated dataset with its header metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: SeqKind,
    pub bin: BinSpec,
    pub master_seed: u64,
    pub records: Vec<SequenceRecord>,
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Generates `count` records; record ids are `0..count` and each derives its
/// own rng stream, so the output is independent of generation order.
pub fn generate(
    kind: SeqKind,
    bin: &BinSpec,
    gen: &GenConfig,
    count: usize,
    master_seed: u64,
) -> Dataset {
    let records = crate::par::map_indexed(count, |id| {
        make_record(kind, bin, gen, master_seed, id as u64)
    });
    Dataset { kind, bin: *bin, master_seed, records }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: SeqKind,
    bin: BinSpec,
    count: usize,
    master_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: u64,
    seed: u64,
    items: Vec<[u32; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Vec<[u32; 6]>>,
}

/// Writes the dataset as line-delimited JSON: one header line, then one
/// record per line.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = Header {
        version: DATASET_FORMAT_VERSION,
        kind: ds.kind,
        bin: ds.bin,
        count: ds.records.len(),
        master_seed: ds.master_seed,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for r in &ds.records {
        let line = RecordLine {
            id: r.id,
            seed: r.seed,
            items: r.items.iter().map(|d| [d.w, d.l, d.h]).collect(),
            provenance: r.provenance.as_ref().map(|ps| {
                ps.iter()
                    .map(|p| [p.dims.w, p.dims.l, p.dims.h, p.origin.0, p.origin.1, p.origin.2])
                    .collect()
            }),
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("record serializes"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty dataset file".into(),
    })??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.version != DATASET_FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported format version {}", header.version),
        });
    }
    let mut records = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad record: {e}"),
        })?;
        if header.kind.has_provenance() && rec.provenance.is_none() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("record {} of kind {} is missing provenance", rec.id, header.kind),
            });
        }
        let items: Vec<ItemDims> = rec
            .items
            .iter()
            .map(|&[w, l, h]| ItemDims::new(w, l, h))
            .collect::<Result<_>>()
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let provenance = rec.provenance.map(|ps| {
            ps.iter()
                .map(|&[w, l, h, x, y, z]| PlacedItem {
                    dims: ItemDims { w, l, h },
                    origin: (x, y, z),
                })
                .collect()
        });
        records.push(SequenceRecord {
            id: rec.id,
            kind: header.kind,
            bin: header.bin,
            items,
            provenance,
            seed: rec.seed,
        });
    }
    if records.len() != header.count {
        return Err(Error::Parse {
            line: records.len() + 1,
            message: format!("header declares {} records, found {}", header.count, records.len()),
        });
    }
    Ok(Dataset {
        kind: header.kind,
        bin: header.bin,
        master_seed: header.master_seed,
        records,
    })
}

/// Replays a CUT record's provenance placements through the simulator.
///
/// Returns the final utilization; every step must be mask-legal. This is the
/// independent oracle behind the 100%-utilization guarantee of the CUT
/// constructions.
pub fn replay_record(record: &SequenceRecord, cfg: &crate::sim::SimConfig) -> Result<f64> {
    let provenance = record.provenance.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!("record {} has no provenance to replay", record.id))
    })?;
    let mut state = crate::sim::reset(&record.items, cfg)?;
    for (t, placed) in provenance.iter().enumerate() {
        let action = crate::geometry::PackAction {
            slot: 0,
            orientation: 0,
            flb: crate::geometry::Flb { x: placed.origin.0, y: placed.origin.1 },
        };
        let out = crate::sim::step(&state, &action, &record.items, cfg).map_err(|e| {
            Error::Placement(format!("record {} step {t}: {e}", record.id))
        })?;
        state = out.next_state;
    }
    Ok(crate::sim::utilization(&state, cfg))
}
