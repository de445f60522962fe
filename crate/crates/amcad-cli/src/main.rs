//! Command-line pipeline: synthesize or build graphs, sample training
//! pairs, train, build the six inverted indices, retrieve, serve, and run
//! experiment grids.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use amcad_core::eval::{
    generate_synthetic, run_experiment, EvalSet, ExperimentGrid, SyntheticSpec,
};
use amcad_core::graph::{
    build_from_logs, generate_samples, load_graph, save_graph, SampleConfig, TrainingSample,
};
use amcad_core::index::{build_index, precompute_store, save_index, save_store, IndexType};
use amcad_core::model::{CurvatureMode, ModelParams, Nonlinearity, SpaceConfig};
use amcad_core::retrieval::{
    retrieve, serve, IndexSet, PathCombine, Request, RetrievalConfig,
};
use amcad_core::train::{
    load_checkpoint, resolve_samples, save_checkpoint, StepOutcome, TrainConfig, Trainer,
};
use amcad_core::util::{read_ndjson, write_ndjson};

#[derive(Parser)]
#[command(name = "amcad", about = "Mixed-curvature graph embedding and ad retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tree+cycle dataset (graph, logs, eval set).
    Synth(SynthArgs),
    /// Build the heterogeneous graph from behavior logs.
    BuildGraph(BuildGraphArgs),
    /// Generate training samples via meta-path walks.
    Sample(SampleArgs),
    /// Train the model.
    Train(TrainArgs),
    /// Precompute the embedding store and build the six inverted indices.
    BuildIndex(BuildIndexArgs),
    /// Two-layer ad retrieval for one request.
    Retrieve(RetrieveArgs),
    /// Serve retrieval requests over a TCP line protocol.
    Serve(ServeArgs),
    /// Run an experiment grid and write metric tables.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 5)]
    items_per_cluster: usize,
    #[arg(long, default_value_t = 2)]
    ads_per_cluster: usize,
    #[arg(long, default_value_t = 30)]
    sessions_per_leaf: usize,
    #[arg(long, default_value_t = 10)]
    heldout_sessions_per_leaf: usize,
    #[arg(long, default_value_t = 0.05)]
    cross_noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[arg(long)]
    logs: PathBuf,
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    bids: Option<PathBuf>,
    /// Semantic-edge threshold on query term Jaccard similarity.
    #[arg(long, default_value_t = 0.5)]
    jaccard_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    walks_per_node: usize,
    #[arg(long, default_value_t = 6)]
    negatives: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Clone)]
struct SpaceArgs {
    #[arg(long, default_value_t = 2)]
    subspaces: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 5)]
    fanout: usize,
    #[arg(long, default_value_t = 1 << 18)]
    buckets: u32,
    /// adaptive, zero (pinned Euclidean) or comma-separated pinned values.
    #[arg(long, default_value = "adaptive")]
    curvatures: String,
}

impl SpaceArgs {
    fn to_config(&self) -> Result<SpaceConfig> {
        let curvature_mode = match self.curvatures.as_str() {
            "adaptive" => CurvatureMode::Adaptive,
            "zero" => CurvatureMode::ZeroPinned,
            other => {
                let values: Vec<f64> = other
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .with_context(|| format!("bad curvature list {other:?}"))?;
                CurvatureMode::FixedPinned(values)
            }
        };
        let cfg = SpaceConfig {
            subspaces: self.subspaces,
            dim: self.dim,
            layers: self.layers,
            fanout: self.fanout,
            buckets: self.buckets,
            nonlinearity: Nonlinearity::Relu,
            curvature_mode,
        };
        cfg.validate().map_err(|e| anyhow::anyhow!("invalid space config: {e}"))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Resume from an existing checkpoint (config must match).
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Newline-delimited JSON metrics stream (one line per step).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 1)]
    epochs: u64,
    #[command(flatten)]
    space: SpaceArgs,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    warmup_steps: u64,
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    #[arg(long, default_value_t = 1.0)]
    fd_radius: f64,
    #[arg(long, default_value_t = 5.0)]
    fd_temperature: f64,
    #[arg(long, default_value_t = 0.001)]
    reg_weight: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 7)]
    context_seed: u64,
    /// Single-threaded gradient computation (results are identical; this
    /// only trades speed).
    #[arg(long)]
    sequential: bool,
    /// Evict feature rows beyond this per-table capacity.
    #[arg(long)]
    feature_capacity: Option<usize>,
    #[arg(long, default_value_t = 100)]
    evict_every: u64,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write the embedding store archive here.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Top-K for layer-1 indices (Q2Q, Q2I, I2Q, I2I).
    #[arg(long, default_value_t = 50)]
    k1: usize,
    /// Top-K for layer-2 indices (Q2A, I2A).
    #[arg(long, default_value_t = 200)]
    k2: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value_t = 7)]
    context_seed: u64,
    #[arg(long, default_value_t = 1.0)]
    fd_radius: f64,
    #[arg(long, default_value_t = 5.0)]
    fd_temperature: f64,
    /// Restrict candidates to the key's category.
    #[arg(long)]
    category_filter: bool,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    indices: PathBuf,
    #[arg(long)]
    query: String,
    /// Comma-separated pre-click item ids.
    #[arg(long, value_delimiter = ',')]
    preclick: Vec<String>,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Include provenance paths in the output.
    #[arg(long)]
    verbose: bool,
    #[arg(long, default_value = "product")]
    combine: String,
    #[arg(long, default_value_t = 50)]
    layer1_budget: usize,
    #[arg(long, default_value_t = 200)]
    layer2_budget: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    indices: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long, default_value = "product")]
    combine: String,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment grid JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Print per-step training progress.
    #[arg(long)]
    verbose: bool,
}

fn parse_combine(s: &str) -> Result<PathCombine> {
    match s {
        "product" => Ok(PathCombine::Product),
        "sum" => Ok(PathCombine::Sum),
        other => bail!("unknown combine rule {other:?} (use product or sum)"),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::BuildGraph(args) => cmd_build_graph(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Train(args) => cmd_train(args),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        branching: args.branching,
        depth: args.depth,
        items_per_cluster: args.items_per_cluster,
        ads_per_cluster: args.ads_per_cluster,
        sessions_per_leaf: args.sessions_per_leaf,
        heldout_sessions_per_leaf: args.heldout_sessions_per_leaf,
        cross_noise: args.cross_noise,
        seed: args.seed,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec);
    std::fs::create_dir_all(&args.out_dir)?;
    write_ndjson(&args.out_dir.join("catalog.ndjson"), data.catalog.iter())?;
    write_ndjson(&args.out_dir.join("logs.ndjson"), data.sessions.iter())?;
    write_ndjson(&args.out_dir.join("heldout_logs.ndjson"), data.heldout_sessions.iter())?;
    write_ndjson(&args.out_dir.join("bids.ndjson"), data.bids.iter())?;
    save_graph(&data.graph, &args.out_dir.join("graph.ndjson"))?;
    std::fs::write(
        args.out_dir.join("eval.json"),
        serde_json::to_string_pretty(&data.eval)?,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "nodes": data.graph.len(),
            "edges": data.graph.edge_count(),
            "sessions": data.sessions.len(),
            "heldout_positives": data.eval.positives.len(),
        })
    );
    Ok(())
}

fn cmd_build_graph(args: BuildGraphArgs) -> Result<()> {
    let (graph, report) = build_from_logs(
        &args.logs,
        &args.catalog,
        args.bids.as_deref(),
        args.jaccard_threshold,
    )?;
    save_graph(&graph, &args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "nodes": graph.len(),
            "edges": graph.edge_count(),
            "sessions": report.sessions,
            "rejected_clicks": report.rejected_clicks,
            "rejected_bids": report.rejected_bids,
        })
    );
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let samples = generate_samples(
        &graph,
        &SampleConfig {
            walks_per_node: args.walks_per_node,
            negatives: args.negatives,
            easy_hard_ratio: (2, 1),
            seed: args.seed,
        },
    );
    write_ndjson(&args.out, samples.iter())?;
    println!("{}", serde_json::json!({"samples": samples.len()}));
    Ok(())
}

fn load_samples(path: &Path) -> Result<Vec<TrainingSample>> {
    let mut samples = Vec::new();
    read_ndjson::<TrainingSample, _>(path, |_, s| {
        samples.push(s);
        Ok(())
    })?
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(samples)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let graph = load_graph(&args.graph)?;
    let samples = load_samples(&args.samples)?;
    let space = args.space.to_config()?;
    let cfg = TrainConfig {
        batch_size: args.batch,
        lr: args.lr,
        warmup_steps: args.warmup_steps,
        clip_norm: args.clip_norm,
        margin: args.margin,
        fd_radius: args.fd_radius,
        fd_temperature: args.fd_temperature,
        reg_weight: args.reg_weight,
        negatives: samples.first().map(|s| s.negs.len()).unwrap_or(6),
        epochs: args.epochs as usize,
        seed: args.seed,
        context_seed: args.context_seed,
        parallel: !args.sequential,
    };
    let (params, opt) = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path, Some(&space))?;
            (ckpt.params, ckpt.opt)
        }
        None => (ModelParams::new(space, args.seed), Default::default()),
    };
    let resolved = resolve_samples(&graph, &samples)?;
    let steps = args.steps.unwrap_or_else(|| {
        let per_epoch = resolved.len().div_ceil(cfg.batch_size) as u64;
        per_epoch * args.epochs
    });

    let mut metrics_file = match &args.metrics {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let mut trainer = Trainer::with_state(params, opt, &graph, cfg);
    let mut skipped = 0u64;
    let mut since_evict = 0u64;
    let mut steps_done = 0u64;
    while steps_done < steps {
        let chunk = (steps - steps_done).min(args.evict_every.max(1));
        trainer.run(&resolved, chunk, |outcome| {
            match outcome {
                StepOutcome::Applied(stats) => {
                    if let Some(f) = metrics_file.as_mut() {
                        let mut line = serde_json::json!({
                            "step": stats.step,
                            "loss": stats.loss,
                            "triplet": stats.triplet,
                            "reg": stats.reg,
                            "lr": stats.lr,
                            "grad_norm": stats.grad_norm,
                        });
                        let kappas: serde_json::Map<String, serde_json::Value> = stats
                            .curvatures
                            .iter()
                            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
                            .collect();
                        line["kappa"] = serde_json::Value::Object(kappas);
                        let _ = writeln!(f, "{line}");
                    }
                }
                StepOutcome::Skipped { step, reason } => {
                    skipped += 1;
                    eprintln!("step {step} skipped: {reason}");
                }
            }
        })?;
        steps_done += chunk;
        since_evict += chunk;
        if let Some(cap) = args.feature_capacity {
            if since_evict >= args.evict_every {
                let evicted = trainer.lru_evict(cap);
                since_evict = 0;
                if evicted > 0 {
                    eprintln!("evicted {evicted} feature rows");
                }
            }
        }
    }
    save_checkpoint(&trainer.params, &trainer.opt, &args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "steps": trainer.opt.step,
            "skipped": skipped,
            "checkpoint": args.out,
        })
    );
    Ok(())
}

fn cmd_build_index(args: BuildIndexArgs) -> Result<()> {
    if args.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build_global()
            .context("worker pool")?;
    }
    let graph = load_graph(&args.graph)?;
    let ckpt = load_checkpoint(&args.checkpoint, None)?;
    let store = precompute_store(
        &ckpt.params,
        &graph,
        args.context_seed,
        args.fd_radius,
        args.fd_temperature,
    )?;
    std::fs::create_dir_all(&args.out_dir)?;
    if let Some(store_path) = &args.store {
        save_store(&store, store_path)?;
    }
    let mut counts = HashMap::new();
    for t in IndexType::ALL {
        let k = if t.is_layer1() { args.k1 } else { args.k2 };
        let idx = build_index(&store, t, k, args.category_filter)?;
        counts.insert(t.label().to_string(), idx.entries.len());
        save_index(&idx, &args.out_dir.join(format!("{}.ndjson", t.label())))?;
    }
    println!("{}", serde_json::json!({"indices": counts, "nodes": store.len()}));
    Ok(())
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let indices = IndexSet::load_dir(&args.indices)?;
    let cfg = RetrievalConfig {
        layer1_budget: args.layer1_budget,
        layer2_budget: args.layer2_budget,
        combine: parse_combine(&args.combine)?,
    };
    let req = Request { query_id: args.query, preclick: args.preclick, k: args.k };
    let candidates = retrieve(&req, &indices, &cfg)?;
    let out = if args.verbose {
        serde_json::to_string_pretty(&candidates)?
    } else {
        let slim: Vec<serde_json::Value> = candidates
            .iter()
            .map(|c| serde_json::json!({"id": c.ad_id, "score": c.score}))
            .collect();
        serde_json::to_string(&serde_json::json!({"ads": slim}))?
    };
    println!("{out}");
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let indices = IndexSet::load_dir(&args.indices)?;
    let cfg = RetrievalConfig { combine: parse_combine(&args.combine)?, ..Default::default() };
    eprintln!("serving on {}", args.addr);
    serve(args.addr.as_str(), indices, cfg)?;
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let grid: ExperimentGrid = serde_json::from_str(
        &std::fs::read_to_string(&args.config)
            .with_context(|| format!("reading {}", args.config.display()))?,
    )?;
    let verbose = args.verbose;
    let table = run_experiment(&grid, |config, seed, outcome| {
        if verbose {
            if let StepOutcome::Applied(s) = outcome {
                if s.step % 50 == 0 {
                    eprintln!(
                        "[{config} seed {seed}] step {} loss {:.4} triplet {:.4}",
                        s.step, s.loss, s.triplet
                    );
                }
            }
        }
    })?;
    table.write_files(&args.out_dir)?;
    print!("{}", table.to_csv());
    Ok(())
}

// Re-exported for integration tests that need the eval set schema.
#[allow(dead_code)]
fn _eval_set_schema(e: &EvalSet) -> usize {
    e.positives.len()
}
