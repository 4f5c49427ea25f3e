//! Command line for the bin-packing toolkit: dataset generation, replay
//! verification, agent benchmarking, self-play training and trace rendering.
//!
//! Exit codes: 0 success, 2 usage, 3 data/parse errors, 4 verification
//! failures (including training divergence).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use packbin::augment::{augment_sample, symmetries_for, transform_mask_bits, Sample, ShapeMode};
use packbin::datagen::{
    load_dataset, make_record, record_seed, replay_record, save_dataset, Dataset, GenConfig,
    SeqKind, SequenceRecord,
};
use packbin::geometry::{BinSpec, HeightMap};
use packbin::mcts::{baseline_return, search, SearchConfig};
use packbin::policy::{
    grad_step, load_params, loss, priority_for, save_params, HeuristicPolicy, LinearPolicy,
    PolicyParams, RandomPolicy, ReplayBuffer, SelectPolicy,
};
use packbin::sim::{run_episode, EpisodeResult, SimConfig};
use packbin::{par, Error};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_VERIFY: u8 = 4;

/// An error carrying its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage_err(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, err: anyhow!(msg.into()) }
}

fn data_err(err: anyhow::Error) -> Failure {
    Failure { code: EXIT_DATA, err }
}

fn verify_err(err: anyhow::Error) -> Failure {
    Failure { code: EXIT_VERIFY, err }
}

/// Internal failures (IO on outputs, invalid states) map to the data code.
fn internal(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_DATA, err: err.into() }
}

#[derive(Parser)]
#[command(name = "packbin", version, about = "Online 3D bin packing toolkit")]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 forces the sequential path.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML config file mirroring the flags; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset.
    Gen(GenArgs),
    /// Verify that every record's recorded tiling replays to a full bin.
    ReplayCheck(ReplayArgs),
    /// Evaluate an agent over a dataset.
    Bench(BenchArgs),
    /// Self-play training of the linear policy.
    Train(TrainArgs),
    /// Render an episode trace as text.
    Render(RenderArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Sequence kind: cut1, cut2 or rs.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    /// Bin dimensions as WxLxH.
    #[arg(long)]
    bin: Option<String>,
    /// Items per rs record.
    #[arg(long)]
    rs_len: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    /// Agent: greedy, random, policy or mcts.
    #[arg(long)]
    agent: Option<String>,
    /// Search simulations per step; required for the mcts agent.
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long)]
    buffer: Option<usize>,
    /// Allowed z-reorientations (0 or 1).
    #[arg(long)]
    orientations: Option<usize>,
    /// Checkpoint for the policy and mcts agents' network.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Episode trace output (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training sequences.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long)]
    orientations: Option<usize>,
    /// Expand each sample with the bin's symmetry group.
    #[arg(long)]
    augment: bool,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    replay_cap: Option<usize>,
    /// Initial learning rate; halved every 200 updates.
    #[arg(long)]
    lr: Option<f64>,
    /// Checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Learning-curve output (JSON lines).
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Trace file written by bench.
    #[arg(long)]
    trace: PathBuf,
    /// Episode index within the trace.
    #[arg(long, default_value_t = 0)]
    episode: usize,
}

/// File-config mirror of the common flags.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: Option<u64>,
    jobs: Option<usize>,
    kind: Option<String>,
    count: Option<usize>,
    bin: Option<String>,
    rs_len: Option<usize>,
    agent: Option<String>,
    sims: Option<usize>,
    buffer: Option<usize>,
    orientations: Option<usize>,
    episodes: Option<usize>,
    batch: Option<usize>,
    replay_cap: Option<usize>,
    lr: Option<f64>,
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(data_err)?;
    toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(data_err)
}

/// Resolved global options.
struct Globals {
    seed: u64,
    jobs: usize,
    config_snapshot: serde_json::Value,
}

fn parse_bin(text: &str) -> CliResult<BinSpec> {
    let parts: Vec<&str> = text.split('x').collect();
    let dims: Vec<u32> = parts
        .iter()
        .map(|p| p.parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage_err(format!("invalid bin spec '{text}', expected WxLxH")))?;
    if dims.len() != 3 {
        return Err(usage_err(format!("invalid bin spec '{text}', expected WxLxH")));
    }
    BinSpec::new(dims[0], dims[1], dims[2]).map_err(|e| usage_err(e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct OutputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    command: String,
    /// Full invocation (without the binary path); rerunning it with
    /// `--jobs 1` reproduces the outputs byte for byte.
    argv: Vec<String>,
    seed: u64,
    jobs: usize,
    config: serde_json::Value,
    outputs: Vec<OutputDigest>,
    elapsed_ms: u128,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(internal)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let mut out = String::new();
    for b in hasher.finalize() {
        write!(out, "{b:02x}").expect("hex format");
    }
    Ok(out)
}

/// Writes `<first output>.manifest.json` describing the run.
fn write_manifest(
    command: &str,
    globals: &Globals,
    outputs: &[&Path],
    started: Instant,
) -> CliResult<()> {
    let Some(first) = outputs.first() else { return Ok(()) };
    let digests = outputs
        .iter()
        .map(|p| {
            Ok(OutputDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = RunManifest {
        command: command.to_string(),
        argv: std::env::args().skip(1).collect(),
        seed: globals.seed,
        jobs: globals.jobs,
        config: globals.config_snapshot.clone(),
        outputs: digests,
        elapsed_ms: started.elapsed().as_millis(),
    };
    let path = first.with_extension("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(internal)?;
    std::fs::write(&path, text + "\n").map_err(internal)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = load_config(cli.config.as_deref())?;
    let globals = Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        jobs: cli.jobs.or(file.jobs).unwrap_or_else(num_cpus),
        config_snapshot: serde_json::to_value(&file).map_err(internal)?,
    };
    match cli.command {
        Command::Gen(args) => cmd_gen(args, &file, &globals),
        Command::ReplayCheck(args) => cmd_replay_check(args, &globals),
        Command::Bench(args) => cmd_bench(args, &file, &globals),
        Command::Train(args) => cmd_train(args, &file, &globals),
        Command::Render(args) => cmd_render(args),
    }
}

fn num_cpus() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    load_dataset(path)
        .map_err(|e| data_err(anyhow!(e).context(format!("loading {}", path.display()))))
}

fn cmd_gen(args: GenArgs, file: &FileConfig, globals: &Globals) -> CliResult<()> {
    let started = Instant::now();
    let kind_text = args
        .kind
        .or_else(|| file.kind.clone())
        .ok_or_else(|| usage_err("--kind is required (cut1, cut2 or rs)"))?;
    let kind = SeqKind::from_str(&kind_text).map_err(|e| usage_err(e.to_string()))?;
    let count = args.count.or(file.count).unwrap_or(100);
    let bin_text = args.bin.or_else(|| file.bin.clone());
    let bin = match bin_text {
        Some(t) => parse_bin(&t)?,
        None => BinSpec::cube10(),
    };
    let mut gen = GenConfig::default();
    if let Some(n) = args.rs_len.or(file.rs_len) {
        gen.rs_len = n;
    }
    let records = par::map_indexed_jobs(count, globals.jobs, |id| {
        make_record(kind, &bin, &gen, globals.seed, id as u64)
    });
    let ds = Dataset { kind, bin, master_seed: globals.seed, records };
    save_dataset(&ds, &args.out).map_err(internal)?;
    println!(
        "wrote {} {} records (bin {}x{}x{}) to {}",
        count,
        kind,
        bin.width,
        bin.length,
        bin.height,
        args.out.display()
    );
    write_manifest("gen", globals, &[&args.out], started)
}

fn cmd_replay_check(args: ReplayArgs, globals: &Globals) -> CliResult<()> {
    let ds = load_data(&args.data)?;
    let cfg = SimConfig::new(ds.bin);
    let results = par::map_indexed_jobs(ds.records.len(), globals.jobs, |i| {
        replay_record(&ds.records[i], &cfg)
    });
    let mut failures = 0usize;
    for (record, result) in ds.records.iter().zip(&results) {
        match result {
            Ok(util) if *util == 1.0 => {}
            Ok(util) => {
                failures += 1;
                eprintln!("record {}: utilization {util} != 1.0", record.id);
            }
            Err(e) => {
                return Err(data_err(
                    anyhow!(e.to_string()).context(format!("record {}", record.id)),
                ))
            }
        }
    }
    if failures > 0 {
        return Err(verify_err(anyhow!(
            "{failures}/{} records failed to replay to a full bin",
            ds.records.len()
        )));
    }
    println!(
        "all {} records replay to utilization 1.000",
        ds.records.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AgentKind {
    Greedy,
    Random,
    Policy,
    Mcts,
}

impl FromStr for AgentKind {
    type Err = Failure;
    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(AgentKind::Greedy),
            "random" => Ok(AgentKind::Random),
            "policy" => Ok(AgentKind::Policy),
            "mcts" => Ok(AgentKind::Mcts),
            other => Err(usage_err(format!(
                "unknown agent '{other}' (expected greedy, random, policy or mcts)"
            ))),
        }
    }
}

fn build_policy(
    model: Option<&Path>,
    cfg: &SimConfig,
    kind: AgentKind,
) -> CliResult<Box<dyn SelectPolicy + Sync>> {
    match (kind, model) {
        (AgentKind::Random, _) => Ok(Box::new(RandomPolicy)),
        (AgentKind::Greedy, _) => Ok(Box::new(HeuristicPolicy::default())),
        (_, Some(path)) => {
            let (params, ckpt_cfg) = load_params(path)
                .map_err(|e| data_err(anyhow!(e).context(format!("loading {}", path.display()))))?;
            if ckpt_cfg.bin != cfg.bin
                || ckpt_cfg.buffer_size != cfg.buffer_size
                || ckpt_cfg.orientations != cfg.orientations
            {
                return Err(data_err(anyhow!(
                    "checkpoint was trained for a different bin/buffer/orientation setup"
                )));
            }
            Ok(Box::new(LinearPolicy { params }))
        }
        (AgentKind::Policy, None) => {
            Err(usage_err("--model is required for the policy agent"))
        }
        // Search without a trained network falls back to heuristic priors.
        (AgentKind::Mcts, None) => Ok(Box::new(HeuristicPolicy::default())),
    }
}

/// Trace file header, one JSON object on the first line.
#[derive(Serialize, Deserialize)]
struct TraceHeader {
    version: u32,
    bin: BinSpec,
    buffer_size: usize,
    orientations: usize,
    agent: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TraceLine {
    id: u64,
    episode: EpisodeResult,
}

fn mcts_episode(
    record: &SequenceRecord,
    policy: &dyn SelectPolicy,
    scfg: &SearchConfig,
    cfg: &SimConfig,
    seed: u64,
) -> Result<EpisodeResult, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq = &record.items;
    let baseline = baseline_return(seq, policy, cfg)?;
    run_episode(seq, cfg, |s| {
        let result = search(s, seq, policy, scfg, cfg, baseline, &mut rng)?;
        let best = result
            .pi
            .iter()
            .cloned()
            .reduce(|a, b| if b.1 > a.1 { b } else { a })
            .expect("non-empty policy");
        Ok(best.0)
    })
}

fn cmd_bench(args: BenchArgs, file: &FileConfig, globals: &Globals) -> CliResult<()> {
    let started = Instant::now();
    let agent: AgentKind = args
        .agent
        .clone()
        .or_else(|| file.agent.clone())
        .unwrap_or_else(|| "greedy".to_string())
        .parse()?;
    let sims = args.sims.or(file.sims);
    if agent == AgentKind::Mcts && sims.is_none() {
        return Err(usage_err("--sims is required for the mcts agent"));
    }
    let ds = load_data(&args.data)?;
    let cfg = SimConfig::new(ds.bin)
        .with_buffer(args.buffer.or(file.buffer).unwrap_or(1))
        .with_orientations(args.orientations.or(file.orientations).unwrap_or(0));
    let policy = build_policy(args.model.as_deref(), &cfg, agent)?;
    let scfg = SearchConfig {
        simulations: sims.unwrap_or(0),
        temperature: 0.0,
        ..Default::default()
    };

    let episodes: Vec<Result<EpisodeResult, Error>> =
        par::map_indexed_jobs(ds.records.len(), globals.jobs, |i| {
            let record = &ds.records[i];
            let ep_seed = record_seed(globals.seed, record.id);
            match agent {
                AgentKind::Mcts => mcts_episode(record, policy.as_ref(), &scfg, &cfg, ep_seed),
                AgentKind::Greedy | AgentKind::Policy => {
                    run_episode(&record.items, &cfg, |s| policy.argmax_action(s, &cfg))
                }
                AgentKind::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
                    run_episode(&record.items, &cfg, |s| {
                        let probs = policy.action_probs(s, &cfg)?;
                        Ok(probs[rng.gen_range(0..probs.len())].0)
                    })
                }
            }
        });

    let mut utils = Vec::with_capacity(episodes.len());
    let mut trace_lines = Vec::new();
    for (record, ep) in ds.records.iter().zip(episodes) {
        let ep = ep.map_err(|e| {
            internal(anyhow!(e.to_string()).context(format!("record {}", record.id)))
        })?;
        utils.push(ep.utilization);
        trace_lines.push(TraceLine { id: record.id, episode: ep });
    }
    let mean = utils.iter().sum::<f64>() / utils.len().max(1) as f64;
    let min = utils.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = utils.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "agent {:?}: {} episodes, utilization mean {:.4} min {:.4} max {:.4}",
        agent,
        utils.len(),
        mean,
        min,
        max
    );

    if let Some(trace_path) = &args.trace {
        let header = TraceHeader {
            version: 1,
            bin: ds.bin,
            buffer_size: cfg.buffer_size,
            orientations: cfg.orientations,
            agent: format!("{agent:?}").to_lowercase(),
            seed: globals.seed,
        };
        let mut text = serde_json::to_string(&header).map_err(internal)?;
        text.push('\n');
        for line in &trace_lines {
            text.push_str(&serde_json::to_string(line).map_err(internal)?);
            text.push('\n');
        }
        std::fs::write(trace_path, text).map_err(internal)?;
        write_manifest("bench", globals, &[trace_path.as_path()], started)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurvePoint {
    episode: usize,
    utilization: f64,
    /// Composite loss on the step's own training batch.
    loss: f64,
    /// Composite loss on the episode's fresh, untransformed search samples;
    /// the generalization signal, comparable across augmented and plain runs.
    episode_loss: f64,
    /// Composite loss on the fixed pre-training evaluation batch; comparable
    /// across runs with the same data and seed.
    eval_loss: f64,
    lr: f64,
    updates: usize,
}

fn cmd_train(args: TrainArgs, file: &FileConfig, globals: &Globals) -> CliResult<()> {
    let started = Instant::now();
    let ds = load_data(&args.data)?;
    let cfg = SimConfig::new(ds.bin)
        .with_buffer(args.buffer.or(file.buffer).unwrap_or(1))
        .with_orientations(args.orientations.or(file.orientations).unwrap_or(0));
    let episodes = args.episodes.or(file.episodes).unwrap_or(200);
    let sims = args.sims.or(file.sims).unwrap_or(16);
    let batch = args.batch.or(file.batch).unwrap_or(32);
    let replay_cap = args.replay_cap.or(file.replay_cap).unwrap_or(4096);
    let lr0 = args.lr.or(file.lr).unwrap_or(0.05);
    if ds.records.is_empty() {
        return Err(data_err(anyhow!("dataset has no records")));
    }

    let scfg = SearchConfig { simulations: sims, ..Default::default() };
    let syms = symmetries_for(&cfg.bin, ShapeMode::Strict);
    let mut params = PolicyParams::zeros(&cfg.bin, cfg.buffer_size, cfg.orientations);
    let mut replay = ReplayBuffer::new(replay_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(globals.seed);
    let mut curve = Vec::new();
    let mut updates = 0usize;
    let lambda = 1e-4;

    // Fixed evaluation batch from untrained self-play; identical for every
    // run with the same data and seed, so curves are comparable.
    let mut eval_batch = Vec::new();
    {
        let policy = LinearPolicy { params: params.clone() };
        let mut eval_rng = ChaCha8Rng::seed_from_u64(globals.seed ^ 0x9e3779b97f4a7c15);
        for record in ds.records.iter().take(4) {
            let (samples, _) =
                packbin::mcts::self_play_episode(&record.items, &policy, &scfg, &cfg, &mut eval_rng)
                    .map_err(internal)?;
            eval_batch.extend(samples);
        }
    }

    for episode in 0..episodes {
        let record = &ds.records[episode % ds.records.len()];
        let policy = LinearPolicy { params: params.clone() };
        let (mut samples, ep) =
            packbin::mcts::self_play_episode(&record.items, &policy, &scfg, &cfg, &mut rng)
                .map_err(internal)?;
        for s in samples.iter_mut() {
            s.priority = priority_for(&params, s, &cfg);
        }
        let fresh = samples.clone();
        let mut inserted = 0usize;
        for s in samples {
            if args.augment {
                let parent = Sample {
                    heightmap: s.heightmap.clone(),
                    buffer: s.buffer.clone(),
                    policy: s.pi.clone(),
                };
                for aug in augment_sample(&parent, &syms, cfg.orientations, &cfg.bin, ShapeMode::Strict)
                    .map_err(internal)?
                {
                    let mask_bits = transform_mask_bits(
                        &s.mask_bits,
                        &s.buffer,
                        cfg.orientations,
                        aug.applied,
                        &cfg.bin,
                    );
                    replay
                        .insert(packbin::policy::SearchSample {
                            heightmap: aug.heightmap,
                            buffer: aug.buffer,
                            mask_bits,
                            pi: aug.policy,
                            z: s.z,
                            priority: s.priority,
                        })
                        .map_err(internal)?;
                    inserted += 1;
                }
            } else {
                replay.insert(s).map_err(internal)?;
                inserted += 1;
            }
        }
        if replay.is_empty() {
            continue;
        }
        // One update per collected batch of data, so augmented runs train
        // proportionally to the samples they produce.
        let episode_updates = inserted.div_ceil(batch).max(1);
        let mut lr = lr0;
        let mut drawn: Vec<packbin::policy::SearchSample> = Vec::new();
        for _ in 0..episode_updates {
            lr = lr0 * 0.5f64.powi((updates / 200) as i32);
            drawn = replay.sample(batch, &mut rng).map_err(internal)?.into_iter().cloned().collect();
            params = grad_step(&params, &drawn, &cfg, lr, lambda, lambda).map_err(|e| match e {
                Error::Divergence(_) => verify_err(anyhow!(e.to_string())),
                other => internal(anyhow!(other.to_string())),
            })?;
            updates += 1;
        }
        let batch_loss = loss(&params, &drawn, &cfg, lambda, lambda).map_err(internal)?;
        let eval_loss = loss(&params, &eval_batch, &cfg, lambda, lambda).map_err(internal)?;
        let episode_loss = if fresh.is_empty() {
            batch_loss
        } else {
            loss(&params, &fresh, &cfg, lambda, lambda).map_err(internal)?
        };
        curve.push(CurvePoint {
            episode,
            utilization: ep.utilization,
            loss: batch_loss,
            episode_loss,
            eval_loss,
            lr,
            updates,
        });
        if (episode + 1) % 50 == 0 || episode + 1 == episodes {
            println!(
                "episode {:>4}: utilization {:.4} loss {:.6} lr {:.2e}",
                episode + 1,
                ep.utilization,
                batch_loss,
                lr
            );
        }
    }

    save_params(&params, &cfg, &args.out).map_err(internal)?;
    let mut outputs: Vec<&Path> = vec![&args.out];
    if let Some(curve_path) = &args.curve {
        let mut text = String::new();
        for point in &curve {
            text.push_str(&serde_json::to_string(point).map_err(internal)?);
            text.push('\n');
        }
        std::fs::write(curve_path, text).map_err(internal)?;
        outputs.push(curve_path);
    }
    println!("saved checkpoint to {}", args.out.display());
    write_manifest("train", globals, &outputs, started)
}

fn cmd_render(args: RenderArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.trace)
        .with_context(|| format!("reading {}", args.trace.display()))
        .map_err(data_err)?;
    let mut lines = text.lines();
    let header: TraceHeader = serde_json::from_str(
        lines.next().ok_or_else(|| data_err(anyhow!("empty trace file")))?,
    )
    .map_err(|e| data_err(anyhow!("bad trace header: {e}")))?;
    let line = lines
        .nth(args.episode)
        .ok_or_else(|| data_err(anyhow!("trace has no episode {}", args.episode)))?;
    let trace: TraceLine =
        serde_json::from_str(line).map_err(|e| data_err(anyhow!("bad trace line: {e}")))?;

    let bin = header.bin;
    let mut hm = HeightMap::new(bin.width, bin.length);
    println!(
        "episode {} (agent {}, bin {}x{}x{}): {} placements, utilization {:.4}",
        trace.id,
        header.agent,
        bin.width,
        bin.length,
        bin.height,
        trace.episode.steps.len(),
        trace.episode.utilization
    );
    for (t, s) in trace.episode.steps.iter().enumerate() {
        hm = hm
            .place(&bin, s.placed, s.action.flb)
            .map_err(|e| data_err(anyhow!("step {t} does not replay: {e}")))?;
        println!(
            "step {:>3}: {}x{}x{} at ({},{}) slot {} orientation {} reward {:.3}",
            t,
            s.placed.w,
            s.placed.l,
            s.placed.h,
            s.action.flb.x,
            s.action.flb.y,
            s.action.slot,
            s.action.orientation,
            s.reward
        );
    }
    println!("final heights:");
    print!("{}", render_heightmap(&hm));
    Ok(())
}

fn render_heightmap(hm: &HeightMap) -> String {
    let mut out = String::new();
    for x in 0..hm.width() {
        for y in 0..hm.length() {
            write!(out, "{:>3}", hm.at(x, y)).expect("string write");
        }
        out.push('\n');
    }
    out
}
