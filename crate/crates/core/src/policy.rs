//! Pluggable action-selection policies, state featurization, the composite
//! policy/value training loss and prioritized experience storage.
//!
//! The trainable model is a linear softmax over the stacked feature planes;
//! it preserves every interface a deeper network would use (features in,
//! masked distribution and value out).

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    action_space_len, oriented_dims, ActionMask, BinSpec, HeightMap, ItemDims, PackAction,
};
use crate::sim::{legal_actions, state_mask, SimConfig, SimState};

/// Stacked feature planes: the normalized height map plus three constant
/// planes (w/H, l/H, h/H) per buffer slot, flattened to `(1+3b)*W*L`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub values: Vec<f64>,
}

pub fn feature_len(bin: &BinSpec, buffer_size: usize) -> usize {
    (1 + 3 * buffer_size) * (bin.width * bin.length) as usize
}

/// Builds the feature planes for a state. Sentinel slots contribute all-zero
/// planes.
pub fn featurize(s: &SimState, cfg: &SimConfig) -> StateFeatures {
    featurize_parts(&s.heightmap, &s.buffer, cfg)
}

pub fn featurize_parts(hm: &HeightMap, buffer: &[ItemDims], cfg: &SimConfig) -> StateFeatures {
    let h = cfg.bin.height as f64;
    let plane = (cfg.bin.width * cfg.bin.length) as usize;
    let mut values = Vec::with_capacity((1 + 3 * buffer.len()) * plane);
    values.extend(hm.cells().iter().map(|&c| c as f64 / h));
    for item in buffer {
        for dim in [item.w, item.l, item.h] {
            values.extend(std::iter::repeat(dim as f64 / h).take(plane));
        }
    }
    StateFeatures { values }
}

/// Linear policy head (weights + bias per action) and value head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[in_dim x out_dim]`.
    pub w_policy: Vec<f64>,
    pub b_policy: Vec<f64>,
    pub w_value: Vec<f64>,
    pub b_value: f64,
}

impl PolicyParams {
    pub fn zeros(bin: &BinSpec, buffer_size: usize, k: usize) -> Self {
        let in_dim = feature_len(bin, buffer_size);
        let out_dim = action_space_len(bin, buffer_size, k);
        Self {
            in_dim,
            out_dim,
            w_policy: vec![0.0; in_dim * out_dim],
            b_policy: vec![0.0; out_dim],
            w_value: vec![0.0; in_dim],
            b_value: 0.0,
        }
    }

    pub fn random(bin: &BinSpec, buffer_size: usize, k: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(bin, buffer_size, k);
        for w in p.w_policy.iter_mut().chain(p.b_policy.iter_mut()).chain(p.w_value.iter_mut()) {
            *w = rng.gen_range(-scale..scale);
        }
        p.b_value = rng.gen_range(-scale..scale);
        p
    }

    fn logits(&self, feats: &StateFeatures) -> Vec<f64> {
        assert_eq!(feats.values.len(), self.in_dim, "feature length mismatch");
        let mut out = self.b_policy.clone();
        for (i, &f) in feats.values.iter().enumerate() {
            if f == 0.0 {
                continue;
            }
            let row = &self.w_policy[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += f * w;
            }
        }
        out
    }
}

/// Masked softmax over the action logits; masked entries are exactly zero.
pub fn policy_forward(
    params: &PolicyParams,
    feats: &StateFeatures,
    mask: &ActionMask,
) -> Result<Vec<f64>> {
    if !mask.any() {
        return Err(Error::NoAction);
    }
    let logits = params.logits(feats);
    let bits = mask.bits();
    assert_eq!(bits.len(), logits.len());
    let max = logits
        .iter()
        .zip(bits)
        .filter(|&(_, &b)| b)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (i, (&l, &b)) in logits.iter().zip(bits).enumerate() {
        if b {
            let e = (l - max).exp();
            probs[i] = e;
            total += e;
        }
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(probs)
}

/// `tanh` of the value head.
pub fn value_forward(params: &PolicyParams, feats: &StateFeatures) -> f64 {
    let mut z = params.b_value;
    for (f, w) in feats.values.iter().zip(&params.w_value) {
        z += f * w;
    }
    z.tanh()
}

/// Clamp floor for `log` of predicted probabilities.
pub const LOG_EPS: f64 = 1e-12;

/// One prioritized-replay record: the raw state parts, the search policy
/// target, its mask, and the rescaled return target.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSample {
    pub heightmap: HeightMap,
    pub buffer: Vec<ItemDims>,
    pub mask_bits: Vec<bool>,
    pub pi: Vec<f64>,
    pub z: f64,
    pub priority: f64,
}

impl SearchSample {
    pub fn features(&self, cfg: &SimConfig) -> StateFeatures {
        featurize_parts(&self.heightmap, &self.buffer, cfg)
    }

    fn mask(&self, cfg: &SimConfig) -> ActionMask {
        let mut m = ActionMask::all_false(cfg.bin, cfg.buffer_size, cfg.orientations);
        for (i, &b) in self.mask_bits.iter().enumerate() {
            if b {
                m.set(&PackAction::decode(i, &cfg.bin, cfg.buffer_size), true);
            }
        }
        m
    }
}

/// Squared value error plus full-distribution cross-entropy for one sample.
pub fn composite_loss_terms(v: f64, z: f64, probs: &[f64], pi: &[f64]) -> f64 {
    let mut ce = 0.0;
    for (&p, &t) in probs.iter().zip(pi) {
        if t > 0.0 {
            ce -= t * p.max(LOG_EPS).ln();
        }
    }
    (v - z) * (v - z) + ce
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum()
}

/// Mean composite loss over a batch plus L2 penalties.
pub fn loss(
    params: &PolicyParams,
    batch: &[SearchSample],
    cfg: &SimConfig,
    lambda_p: f64,
    lambda_v: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for sample in batch {
        let feats = sample.features(cfg);
        let mask = sample.mask(cfg);
        let probs = policy_forward(params, &feats, &mask)?;
        let v = value_forward(params, &feats);
        total += composite_loss_terms(v, sample.z, &probs, &sample.pi);
    }
    let penalty = lambda_p * (l2(&params.w_policy) + l2(&params.b_policy))
        + lambda_v * (l2(&params.w_value) + params.b_value * params.b_value);
    Ok(total / batch.len() as f64 + penalty)
}

/// One gradient-descent update on the composite loss.
pub fn grad_step(
    params: &PolicyParams,
    batch: &[SearchSample],
    cfg: &SimConfig,
    lr: f64,
    lambda_p: f64,
    lambda_v: f64,
) -> Result<PolicyParams> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut g_wp = vec![0.0; params.w_policy.len()];
    let mut g_bp = vec![0.0; params.b_policy.len()];
    let mut g_wv = vec![0.0; params.w_value.len()];
    let mut g_bv = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for sample in batch {
        let feats = sample.features(cfg);
        let mask = sample.mask(cfg);
        let probs = policy_forward(params, &feats, &mask)?;
        let v = value_forward(params, &feats);
        // d/dlogit of the masked-softmax cross-entropy.
        let pi_mass: f64 = sample.pi.iter().sum();
        let g_logit: Vec<f64> = probs
            .iter()
            .zip(&sample.pi)
            .zip(&sample.mask_bits)
            .map(|((&p, &t), &b)| if b { pi_mass * p - t } else { 0.0 })
            .collect();
        let g_pre_v = 2.0 * (v - sample.z) * (1.0 - v * v);
        for (i, &f) in feats.values.iter().enumerate() {
            if f != 0.0 {
                let row = &mut g_wp[i * params.out_dim..(i + 1) * params.out_dim];
                for (g, &gl) in row.iter_mut().zip(&g_logit) {
                    *g += scale * f * gl;
                }
                g_wv[i] += scale * g_pre_v * f;
            }
        }
        for (g, &gl) in g_bp.iter_mut().zip(&g_logit) {
            *g += scale * gl;
        }
        g_bv += scale * g_pre_v;
    }
    let mut next = params.clone();
    let update = |w: &mut f64, g: f64, lambda: f64| -> Result<()> {
        let grad = g + 2.0 * lambda * *w;
        if !grad.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        *w -= lr * grad;
        Ok(())
    };
    for (w, &g) in next.w_policy.iter_mut().zip(&g_wp) {
        update(w, g, lambda_p)?;
    }
    for (w, &g) in next.b_policy.iter_mut().zip(&g_bp) {
        update(w, g, lambda_p)?;
    }
    for (w, &g) in next.w_value.iter_mut().zip(&g_wv) {
        update(w, g, lambda_v)?;
    }
    update(&mut next.b_value, g_bv, lambda_v)?;
    Ok(next)
}

/// New-sample priority: absolute value-prediction error plus a floor.
pub const PRIORITY_EPS: f64 = 0.01;

pub fn priority_for(params: &PolicyParams, sample: &SearchSample, cfg: &SimConfig) -> f64 {
    (sample.z - value_forward(params, &sample.features(cfg))).abs() + PRIORITY_EPS
}

/// Proportional-priority replay ring; oldest entries evicted at capacity.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<SearchSample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, sample: SearchSample) -> Result<()> {
        if !sample.priority.is_finite() || sample.priority < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "priority must be finite and >= 0, got {}",
                sample.priority
            )));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(sample);
        Ok(())
    }

    /// Draws `n` samples (with replacement) with probability proportional to
    /// priority.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&SearchSample>> {
        if self.entries.is_empty() {
            return Err(Error::State("sampling an empty replay buffer".into()));
        }
        let total: f64 = self.entries.iter().map(|e| e.priority).sum();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if total <= 0.0 {
                out.push(&self.entries[rng.gen_range(0..self.entries.len())]);
                continue;
            }
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = self.entries.len() - 1;
            for (i, e) in self.entries.iter().enumerate() {
                if target < e.priority {
                    chosen = i;
                    break;
                }
                target -= e.priority;
            }
            out.push(&self.entries[chosen]);
        }
        Ok(out)
    }
}

/// Deterministic deep-bottom-left-fit: minimize resulting placement height,
/// then y, then x, then slot, then orientation.
pub fn greedy_heuristic_action(s: &SimState, cfg: &SimConfig) -> Result<PackAction> {
    let mut best: Option<(u32, u32, u32, usize, usize, PackAction)> = None;
    for a in legal_actions(s, cfg) {
        let d = oriented_dims(s.buffer[a.slot], a.orientation)?;
        let top = s.heightmap.region_max_height(d, a.flb)? + d.h;
        let key = (top, a.flb.y, a.flb.x, a.slot, a.orientation);
        if best.as_ref().map_or(true, |b| key < (b.0, b.1, b.2, b.3, b.4)) {
            best = Some((key.0, key.1, key.2, key.3, key.4, a));
        }
    }
    best.map(|b| b.5).ok_or(Error::NoAction)
}

/// An action-selection policy: a masked distribution plus a deterministic
/// argmax used for baseline evaluation.
pub trait SelectPolicy {
    /// Probabilities over the legal actions, in flat-index order.
    fn action_probs(&self, s: &SimState, cfg: &SimConfig) -> Result<Vec<(PackAction, f64)>>;

    /// Deterministic greedy action: highest probability, ties broken by the
    /// lowest flat index.
    fn argmax_action(&self, s: &SimState, cfg: &SimConfig) -> Result<PackAction> {
        let probs = self.action_probs(s, cfg)?;
        let mut best: Option<(PackAction, f64)> = None;
        for &(a, p) in &probs {
            if best.map_or(true, |(_, bp)| p > bp) {
                best = Some((a, p));
            }
        }
        best.map(|(a, _)| a).ok_or(Error::NoAction)
    }

    /// Optional value estimate in `[-1, 1]`.
    fn value(&self, _s: &SimState, _cfg: &SimConfig) -> f64 {
        0.0
    }
}

/// Uniform over the legal actions.
pub struct RandomPolicy;

impl SelectPolicy for RandomPolicy {
    fn action_probs(&self, s: &SimState, cfg: &SimConfig) -> Result<Vec<(PackAction, f64)>> {
        let acts = legal_actions(s, cfg);
        if acts.is_empty() {
            return Err(Error::NoAction);
        }
        let p = 1.0 / acts.len() as f64;
        Ok(acts.into_iter().map(|a| (a, p)).collect())
    }
}

/// Softmax over negative resulting placement height; argmax is the exact
/// deep-bottom-left-fit rule.
pub struct HeuristicPolicy {
    pub beta: f64,
}

impl Default for HeuristicPolicy {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

impl SelectPolicy for HeuristicPolicy {
    fn action_probs(&self, s: &SimState, cfg: &SimConfig) -> Result<Vec<(PackAction, f64)>> {
        let acts = legal_actions(s, cfg);
        if acts.is_empty() {
            return Err(Error::NoAction);
        }
        let mut weights = Vec::with_capacity(acts.len());
        for a in &acts {
            let d = oriented_dims(s.buffer[a.slot], a.orientation)?;
            let top = s.heightmap.region_max_height(d, a.flb)? + d.h;
            weights.push((-self.beta * top as f64).exp());
        }
        let total: f64 = weights.iter().sum();
        Ok(acts.into_iter().zip(weights).map(|(a, w)| (a, w / total)).collect())
    }

    fn argmax_action(&self, s: &SimState, cfg: &SimConfig) -> Result<PackAction> {
        greedy_heuristic_action(s, cfg)
    }
}

/// The trainable linear softmax model.
pub struct LinearPolicy {
    pub params: PolicyParams,
}

impl SelectPolicy for LinearPolicy {
    fn action_probs(&self, s: &SimState, cfg: &SimConfig) -> Result<Vec<(PackAction, f64)>> {
        let mask = state_mask(s, cfg);
        let feats = featurize(s, cfg);
        let probs = policy_forward(&self.params, &feats, &mask)?;
        Ok(mask
            .true_actions()
            .into_iter()
            .map(|a| {
                let p = probs[a.encode(&cfg.bin, cfg.buffer_size)];
                (a, p)
            })
            .collect())
    }

    fn value(&self, s: &SimState, cfg: &SimConfig) -> f64 {
        value_forward(&self.params, &featurize(s, cfg))
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    bin: BinSpec,
    buffer_size: usize,
    orientations: usize,
    in_dim: usize,
    out_dim: usize,
}

/// Writes a parameter checkpoint: a JSON header line, then every value as
/// hex-encoded f64 bits in documented order (policy weights, policy bias,
/// value weights, value bias). Byte-exact on round-trip.
pub fn save_params(params: &PolicyParams, cfg: &SimConfig, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        bin: cfg.bin,
        buffer_size: cfg.buffer_size,
        orientations: cfg.orientations,
        in_dim: params.in_dim,
        out_dim: params.out_dim,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    let all = params
        .w_policy
        .iter()
        .chain(&params.b_policy)
        .chain(&params.w_value)
        .chain(std::iter::once(&params.b_value));
    for v in all {
        writeln!(w, "{:016x}", v.to_bits())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<(PolicyParams, SimConfig)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty checkpoint".into() })??;
    let header: CheckpointHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Parse { line: 1, message: format!("bad header: {e}") })?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported checkpoint version {}", header.version),
        });
    }
    let expected = header.in_dim * header.out_dim + header.out_dim + header.in_dim + 1;
    let mut values = Vec::with_capacity(expected);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let bits = u64::from_str_radix(line.trim(), 16).map_err(|e| Error::Parse {
            line: i + 2,
            message: format!("bad value: {e}"),
        })?;
        values.push(f64::from_bits(bits));
    }
    if values.len() != expected {
        return Err(Error::Parse {
            line: values.len() + 1,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    let mut it = values.into_iter();
    let w_policy: Vec<f64> = it.by_ref().take(header.in_dim * header.out_dim).collect();
    let b_policy: Vec<f64> = it.by_ref().take(header.out_dim).collect();
    let w_value: Vec<f64> = it.by_ref().take(header.in_dim).collect();
    let b_value = it.next().expect("length checked");
    let params = PolicyParams {
        in_dim: header.in_dim,
        out_dim: header.out_dim,
        w_policy,
        b_policy,
        w_value,
        b_value,
    };
    let mut cfg = SimConfig::new(header.bin);
    cfg.buffer_size = header.buffer_size;
    cfg.orientations = header.orientations;
    Ok((params, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Flb;
    use crate::sim::reset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(w: u32, l: u32, h: u32) -> ItemDims {
        ItemDims::new(w, l, h).unwrap()
    }

    #[test]
    fn featurize_layout() {
        let cfg = SimConfig::new(BinSpec::cube10());
        let s = reset(&[dims(5, 5, 5)], &cfg).unwrap();
        let f = featurize(&s, &cfg);
        assert_eq!(f.values.len(), 400);
        assert!(f.values[..100].iter().all(|&v| v == 0.0));
        assert!(f.values[100..].iter().all(|&v| v == 0.5));
        assert_eq!(action_space_len(&cfg.bin, 1, 0), 100);
    }

    #[test]
    fn featurize_sentinel_slots_zero() {
        let cfg = SimConfig::new(BinSpec::cube10()).with_buffer(2);
        let s = reset(&[dims(5, 5, 5)], &cfg).unwrap();
        let f = featurize(&s, &cfg);
        assert_eq!(f.values.len(), 700);
        assert!(f.values[400..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_uniform_with_zero_weights() {
        let cfg = SimConfig::new(BinSpec::cube10());
        let s = reset(&[dims(2, 2, 2)], &cfg).unwrap();
        let params = PolicyParams::zeros(&cfg.bin, 1, 0);
        let mask = state_mask(&s, &cfg);
        assert_eq!(mask.count_true(), 81);
        let probs = policy_forward(&params, &featurize(&s, &cfg), &mask).unwrap();
        for (p, b) in probs.iter().zip(mask.bits()) {
            if *b {
                assert!((p - 1.0 / 81.0).abs() < 1e-15);
            } else {
                assert_eq!(*p, 0.0);
            }
        }
    }

    #[test]
    fn forward_single_action_and_empty_mask() {
        let cfg = SimConfig::new(BinSpec::cube10());
        let params = PolicyParams::zeros(&cfg.bin, 1, 0);
        let feats = StateFeatures { values: vec![0.0; params.in_dim] };
        let mut mask = ActionMask::all_false(cfg.bin, 1, 0);
        assert!(matches!(policy_forward(&params, &feats, &mask), Err(Error::NoAction)));
        mask.set(
            &PackAction { slot: 0, orientation: 0, flb: Flb { x: 3, y: 4 } },
            true,
        );
        let probs = policy_forward(&params, &feats, &mask).unwrap();
        assert_eq!(probs.iter().sum::<f64>(), 1.0);
        assert_eq!(probs.iter().filter(|&&p| p == 1.0).count(), 1);
    }

    #[test]
    fn forward_supported_only_on_mask() {
        let cfg = SimConfig::new(BinSpec::cube10());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let params = PolicyParams::random(&cfg.bin, 1, 0, 0.5, &mut rng);
            let s = reset(&[dims(3, 2, 4)], &cfg).unwrap();
            let mask = state_mask(&s, &cfg);
            let probs = policy_forward(&params, &featurize(&s, &cfg), &mask).unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (p, b) in probs.iter().zip(mask.bits()) {
                if *b {
                    assert!(*p > 0.0);
                } else {
                    assert_eq!(*p, 0.0);
                }
            }
        }
    }

    #[test]
    fn value_forward_cases() {
        let cfg = SimConfig::new(BinSpec::cube10());
        let params = PolicyParams::zeros(&cfg.bin, 1, 0);
        let feats = StateFeatures { values: vec![0.3; params.in_dim] };
        assert_eq!(value_forward(&params, &feats), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let p = PolicyParams::random(&cfg.bin, 1, 0, 1.0, &mut rng);
            let v = value_forward(&p, &feats);
            assert!((-1.0..1.0).contains(&v) || v.abs() == 1.0);
            // Slow reference recomputation.
            let mut acc = p.b_value;
            for (f, w) in feats.values.iter().zip(&p.w_value) {
                acc += f * w;
            }
            assert_eq!(v, acc.tanh());
        }
    }

    #[test]
    fn composite_loss_hand_value() {
        // v=0.5, z=0, one-hot target, predicted [0.5, 0.5].
        let l = composite_loss_terms(0.5, 0.0, &[0.5, 0.5], &[1.0, 0.0]);
        assert!((l - (0.25 + std::f64::consts::LN_2)).abs() < 1e-12);
        // Perfect prediction has zero loss.
        assert_eq!(composite_loss_terms(0.0, 0.0, &[1.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    fn tiny_cfg() -> SimConfig {
        SimConfig::new(BinSpec::new(3, 3, 3).unwrap())
    }

    fn tiny_sample(rng: &mut impl Rng, cfg: &SimConfig) -> SearchSample {
        let seq = vec![dims(
            rng.gen_range(1..=2),
            rng.gen_range(1..=2),
            rng.gen_range(1..=2),
        )];
        let s = reset(&seq, cfg).unwrap();
        let mask = state_mask(&s, cfg);
        let acts = mask.true_actions();
        let chosen = acts[rng.gen_range(0..acts.len())];
        let mut pi = vec![0.0; mask.len()];
        pi[chosen.encode(&cfg.bin, cfg.buffer_size)] = 1.0;
        SearchSample {
            heightmap: s.heightmap.clone(),
            buffer: s.buffer.clone(),
            mask_bits: mask.bits().to_vec(),
            pi,
            z: rng.gen_range(-1.0..1.0),
            priority: 1.0,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut max_rel = 0.0f64;
        for _ in 0..10 {
            let params = PolicyParams::random(&cfg.bin, 1, 0, 0.3, &mut rng);
            let batch: Vec<SearchSample> = (0..3).map(|_| tiny_sample(&mut rng, &cfg)).collect();
            let (lp, lv) = (0.01, 0.02);
            let lr = 1.0;
            let stepped = grad_step(&params, &batch, &cfg, lr, lp, lv).unwrap();
            // Recover the analytic gradient from the update.
            let eps = 1e-6;
            let mut check = |get: &dyn Fn(&PolicyParams) -> f64,
                             set: &dyn Fn(&mut PolicyParams, f64)| {
                let analytic = (get(&params) - get(&stepped)) / lr;
                let mut plus = params.clone();
                set(&mut plus, get(&params) + eps);
                let mut minus = params.clone();
                set(&mut minus, get(&params) - eps);
                let fd = (loss(&plus, &batch, &cfg, lp, lv).unwrap()
                    - loss(&minus, &batch, &cfg, lp, lv).unwrap())
                    / (2.0 * eps);
                let denom = fd.abs().max(analytic.abs()).max(1e-6);
                max_rel = max_rel.max((analytic - fd).abs() / denom);
            };
            // Spot-check a spread of parameters from every block.
            for idx in [0usize, 7, 100, 301] {
                let i = idx % params.w_policy.len();
                check(&move |p| p.w_policy[i], &move |p, v| p.w_policy[i] = v);
            }
            for idx in [0usize, 5] {
                let i = idx % params.b_policy.len();
                check(&move |p| p.b_policy[i], &move |p, v| p.b_policy[i] = v);
            }
            for idx in [0usize, 17] {
                let i = idx % params.w_value.len();
                check(&move |p| p.w_value[i], &move |p, v| p.w_value[i] = v);
            }
            check(&|p| p.b_value, &|p, v| p.b_value = v);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn grad_step_descends_and_zero_lr_is_identity() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = PolicyParams::random(&cfg.bin, 1, 0, 0.3, &mut rng);
        let batch = vec![tiny_sample(&mut rng, &cfg)];
        let before = loss(&params, &batch, &cfg, 0.0, 0.0).unwrap();
        let after_params = grad_step(&params, &batch, &cfg, 1e-2, 0.0, 0.0).unwrap();
        let after = loss(&after_params, &batch, &cfg, 0.0, 0.0).unwrap();
        assert!(after <= before, "loss went {before} -> {after}");

        let same = grad_step(&params, &batch, &cfg, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(same, params);
    }

    #[test]
    fn l2_penalty_increases_loss() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = PolicyParams::random(&cfg.bin, 1, 0, 0.3, &mut rng);
        let batch = vec![tiny_sample(&mut rng, &cfg)];
        let plain = loss(&params, &batch, &cfg, 0.0, 0.0).unwrap();
        let penalized = loss(&params, &batch, &cfg, 0.1, 0.1).unwrap();
        assert!(penalized > plain);
    }

    #[test]
    fn replay_buffer_semantics() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut buf = ReplayBuffer::new(2);
        assert!(buf.sample(1, &mut rng).is_err());

        let mut s1 = tiny_sample(&mut rng, &cfg);
        s1.priority = 3.0;
        let mut s2 = tiny_sample(&mut rng, &cfg);
        s2.priority = 1.0;
        buf.insert(s1.clone()).unwrap();
        // Single entry is always drawn.
        assert_eq!(buf.sample(1, &mut rng).unwrap()[0].priority, 3.0);

        buf.insert(s2.clone()).unwrap();
        let draws = buf.sample(100_000, &mut rng).unwrap();
        let first = draws.iter().filter(|s| s.priority == 3.0).count() as f64 / 100_000.0;
        assert!((first - 0.75).abs() < 0.02, "empirical frequency {first}");

        // Third insert evicts the oldest.
        let mut s3 = tiny_sample(&mut rng, &cfg);
        s3.priority = 7.0;
        buf.insert(s3).unwrap();
        assert_eq!(buf.len(), 2);
        assert!(buf.entries.iter().all(|e| e.priority != 3.0));
    }

    #[test]
    fn greedy_heuristic_prefers_low_placements() {
        let cfg = SimConfig::new(BinSpec::cube10());
        let seq = vec![dims(2, 2, 2)];
        let s = reset(&seq, &cfg).unwrap();
        let a = greedy_heuristic_action(&s, &cfg).unwrap();
        assert_eq!(a.flb, Flb { x: 0, y: 0 });

        // After a 3-high block at the origin, the next item goes beside it,
        // not on top.
        let seq2 = [dims(2, 2, 3), dims(2, 2, 2)];
        let s0 = reset(&seq2, &cfg).unwrap();
        let out = crate::sim::step(
            &s0,
            &PackAction { slot: 0, orientation: 0, flb: Flb { x: 0, y: 0 } },
            &seq2,
            &cfg,
        )
        .unwrap();
        let next = greedy_heuristic_action(&out.next_state, &cfg).unwrap();
        let d = out.next_state.buffer[next.slot];
        let top = out
            .next_state
            .heightmap
            .region_max_height(oriented_dims(d, next.orientation).unwrap(), next.flb)
            .unwrap();
        assert_eq!(top, 0);
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_exact() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let params = PolicyParams::random(&cfg.bin, 1, 0, 0.5, &mut rng);
        let dir = std::env::temp_dir().join("packbin-policy-test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.ckpt");
        let p2 = dir.join("b.ckpt");
        save_params(&params, &cfg, &p1).unwrap();
        let (loaded, loaded_cfg) = load_params(&p1).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(loaded_cfg.bin, cfg.bin);
        save_params(&loaded, &loaded_cfg, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
