//! Command-line front end. Every randomized command takes an explicit
//! `--seed`; each writes `run_config.json` next to its outputs.
//!
//! Exit codes: 0 success, 1 a verification suite failed, 2 usage error,
//! 3 data error, 4 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::baseline::{self, ProbeConfig};
use crate::checkpoint::{self, Checkpoint};
use crate::embedding::{load_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::graph::{self, Graph, TopologyThresholds};
use crate::interpret::{self, Histogram, InterpretThresholds, Provenance};
use crate::model;
use crate::spectral;
use crate::synth::{self, PlantedConfig};
use crate::train::{self, TrainConfig};
use crate::verify::{self, Suite};

#[derive(Debug, Parser)]
#[command(name = "gcs", version, about = "Graph convolution simulator probe for knowledge integration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Fit the simulator to map base embeddings toward enhanced ones
    Train(TrainArgs),
    /// Classify edges and entities from a trained checkpoint
    Interpret(InterpretArgs),
    /// Run a built-in verification suite and print its JSON result
    Verify(VerifyArgs),
    /// Generate a planted synthetic instance with ground truth
    Synth(SynthArgs),
    /// Seed-variance comparison of the simulator and a linear probe
    #[command(alias = "variance")]
    Baseline(BaselineArgs),
    /// Spectral identities of a graph and embedding, as JSON
    SpectralCheck(SpectralArgs),
    /// Degree and annotation histograms of an edge list, as JSON
    Histogram(HistogramArgs),
    /// Score a report against a planted ground truth
    Score(ScoreArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GraphInput {
    /// Edge list (TSV: head, tail, optional annotation; dense 0-based ids)
    #[arg(long)]
    pub graph: PathBuf,
    /// Base embedding matrix (GCSE binary)
    #[arg(long)]
    pub base: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: GraphInput,
    /// Enhanced embedding matrix (GCSE binary)
    #[arg(long)]
    pub enhanced: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed (u64)
    #[arg(long)]
    pub seed: u64,
    /// Full-batch optimization steps
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Attention heads (count)
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    /// Attention projection width (dimensions)
    #[arg(long, default_value_t = 64)]
    pub attn_dim: usize,
    /// Softmax temperature (dimensionless, > 0)
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    /// Dropout probability on both MLP layers during training
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    /// Train on a BFS subgraph of this many nodes [default: full graph]
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Print the bound every this many steps to stderr (0 = silent)
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct InterpretArgs {
    #[command(flatten)]
    pub input: GraphInput,
    /// Checkpoint JSON written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Edge counts as integrated when mean attention exceeds this (probability)
    #[arg(long, default_value_t = 0.1)]
    pub edge_threshold: f64,
    /// Entity counts as catastrophic remembering above this self-attention
    #[arg(long, default_value_t = 0.9)]
    pub cr_threshold: f64,
    /// Entity counts as catastrophic forgetting below this self-attention
    #[arg(long, default_value_t = 0.1)]
    pub cf_threshold: f64,
    /// Leaf nodes have at most this degree (edges)
    #[arg(long, default_value_t = 1)]
    pub leaf_max_degree: usize,
    /// Center nodes have at least this degree (edges)
    #[arg(long, default_value_t = 2)]
    pub center_min_degree: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    /// Suite to run
    #[arg(long, value_enum)]
    pub suite: Suite,
    /// Random seed (u64)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed (u64)
    #[arg(long)]
    pub seed: u64,
    /// Nodes before keeping the largest component (count)
    #[arg(long, default_value_t = 500)]
    pub nodes: usize,
    /// Mean degree (edges per node)
    #[arg(long, default_value_t = 8.0)]
    pub avg_degree: f64,
    /// Fraction of edges planted as integrated (0..1)
    #[arg(long, default_value_t = 0.3)]
    pub planted_fraction: f64,
    /// Fraction of nodes planted as catastrophic remembering (0..1)
    #[arg(long, default_value_t = 0.05)]
    pub cr_fraction: f64,
    /// Fraction of nodes planted as catastrophic forgetting (0..1)
    #[arg(long, default_value_t = 0.05)]
    pub cf_fraction: f64,
    /// Embedding dimension
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Weight kept on a node's own base row (0..1)
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Noise standard deviation
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub input: GraphInput,
    /// Enhanced embedding matrix (GCSE binary)
    #[arg(long)]
    pub enhanced: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed; run k uses a seed derived from it (u64)
    #[arg(long)]
    pub seed: u64,
    /// Independent runs per pipeline (count, >= 2)
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// Simulator training steps per run
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Probe gradient-descent epochs per fold
    #[arg(long, default_value_t = 200)]
    pub probe_epochs: usize,
    /// Probe learning rate
    #[arg(long, default_value_t = 0.1)]
    pub probe_lr: f64,
    /// Negative pairs per edge for the probe (count)
    #[arg(long, default_value_t = 1)]
    pub neg_per_pos: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectralArgs {
    #[command(flatten)]
    pub input: GraphInput,
}

#[derive(Debug, Args, Serialize)]
pub struct HistogramArgs {
    /// Edge list (TSV)
    #[arg(long)]
    pub graph: PathBuf,
    /// Expected node count [default: max id + 1]
    #[arg(long)]
    pub nodes: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    /// Report JSON written by `interpret`
    #[arg(long)]
    pub report: PathBuf,
    /// Ground truth JSON written by `synth`
    #[arg(long)]
    pub truth: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Train(a) => cmd_train(a, cmd).map(|_| 0),
        Command::Interpret(a) => cmd_interpret(a, cmd).map(|_| 0),
        Command::Verify(a) => cmd_verify(a),
        Command::Synth(a) => cmd_synth(a).map(|_| 0),
        Command::Baseline(a) => cmd_baseline(a, cmd).map(|_| 0),
        Command::SpectralCheck(a) => cmd_spectral(a).map(|_| 0),
        Command::Histogram(a) => cmd_histogram(a).map(|_| 0),
        Command::Score(a) => cmd_score(a).map(|_| 0),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Writes the config echo and returns its text.
fn echo_config(cmd: &Command, dir: &Path) -> Result<String> {
    let text = pretty(&json!({ "schema_version": 1, "command": cmd }))?;
    write_text(&dir.join("run_config.json"), &text)?;
    Ok(text)
}

fn load_inputs(input: &GraphInput) -> Result<(Graph, EmbeddingMatrix)> {
    let x = load_embeddings(&input.base)?;
    let (g, _) = graph::load_edge_list(&input.graph, Some(x.rows()))?;
    Ok((g, x))
}

fn cmd_train(a: &TrainArgs, cmd: &Command) -> Result<()> {
    let (g, x) = load_inputs(&a.input)?;
    let h = load_embeddings(&a.enhanced)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        dropout: a.dropout,
        temperature: a.temperature,
        heads: a.heads,
        attn_dim: a.attn_dim,
        subsample_nodes: a.subsample,
        log_every: a.log_every,
    };
    let out = train::train_observed(&g, &x, &h, &cfg, |step, bound| {
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            eprintln!("step {step} bound {bound:.6} nats");
        }
    })?;
    create_dir(&a.out)?;
    echo_config(cmd, &a.out)?;
    Checkpoint::new(&out.gcs, &out.stat, a.seed).save(&a.out.join("checkpoint.json"))?;
    checkpoint::write_mi_curve(&out.mi_curve, &a.out.join("mi_curve.csv"))
}

fn cmd_interpret(a: &InterpretArgs, cmd: &Command) -> Result<()> {
    let th = InterpretThresholds {
        edge_integrated: a.edge_threshold,
        self_cr: a.cr_threshold,
        self_cf: a.cf_threshold,
    };
    th.validate()?;
    let topo = TopologyThresholds {
        leaf_max_degree: a.leaf_max_degree,
        center_min_degree: a.center_min_degree,
    };
    topo.validate()?;
    let (g, x) = load_inputs(&a.input)?;
    let ck = Checkpoint::load(&a.model)?;
    let params = ck.gcs()?;
    let fwd = model::forward(&params, &g, &x, false, ck.seed)?;
    let mut report = interpret::classify_with_topology(&fwd.attention, &g, &th, topo)?;
    create_dir(&a.out)?;
    let config = echo_config(cmd, &a.out)?;
    report.provenance = Provenance {
        seed: Some(ck.seed),
        config_hash: Some(checkpoint::sha256_hex(config.as_bytes())),
        checkpoint_hash: Some(checkpoint::file_sha256(&a.model)?),
    };
    interpret::write_report(&report, &a.out.join("report.json"))?;
    interpret::write_edges_csv(&report.edges, &a.out.join("edges.csv"))
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let report = verify::run(a.suite, a.seed)?;
    print!("{}", pretty(&report)?);
    Ok(if report.passed { 0 } else { 1 })
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = PlantedConfig {
        n_nodes: a.nodes,
        avg_degree: a.avg_degree,
        planted_fraction: a.planted_fraction,
        cr_fraction: a.cr_fraction,
        cf_fraction: a.cf_fraction,
        dim: a.dim,
        beta: a.beta,
        sigma: a.sigma,
        seed: a.seed,
    };
    let inst = synth::gen_planted(&cfg)?;
    synth::write_instance(&inst, &a.out)
}

fn write_column(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut text = format!("{header}\n");
    for v in values {
        text.push_str(&format!("{v:?}\n"));
    }
    write_text(path, &text)
}

fn cmd_baseline(a: &BaselineArgs, cmd: &Command) -> Result<()> {
    let (g, x) = load_inputs(&a.input)?;
    let h = load_embeddings(&a.enhanced)?;
    let seeds: Vec<u64> = (0..a.runs as u64).map(|k| crate::rng::derive(a.seed, k)).collect();
    let probe = ProbeConfig {
        neg_per_pos: a.neg_per_pos,
        lr: a.probe_lr,
        epochs: a.probe_epochs,
        ..ProbeConfig::default()
    };
    let gcs = TrainConfig {
        epochs: a.epochs,
        ..TrainConfig::default()
    };
    let res = baseline::variance_experiment(&g, &x, &h, &seeds, &probe, &gcs, &InterpretThresholds::default())?;
    create_dir(&a.out)?;
    echo_config(cmd, &a.out)?;
    write_column(&a.out.join("probe_entropy.csv"), "entropy_bits", &res.probe_entropy)?;
    write_column(&a.out.join("gcs_entropy.csv"), "entropy_bits", &res.gcs_entropy)?;
    write_column(&a.out.join("control_entropy.csv"), "entropy_bits", &res.control_entropy)?;
    let hists = [&res.probe_entropy, &res.gcs_entropy, &res.control_entropy]
        .map(|v| Histogram::unit(v.iter().copied(), interpret::HISTOGRAM_BINS));
    let mut text = String::from("bin_low_bits,bin_high_bits,probe,gcs,control\n");
    for b in 0..interpret::HISTOGRAM_BINS {
        text.push_str(&format!(
            "{:?},{:?},{},{},{}\n",
            hists[0].bin_edges[b],
            hists[0].bin_edges[b + 1],
            hists[0].counts[b],
            hists[1].counts[b],
            hists[2].counts[b]
        ));
    }
    write_text(&a.out.join("entropy_histogram.csv"), &text)?;
    let summary = json!({
        "runs": res.runs,
        "median_probe_entropy_bits": baseline::median(&res.probe_entropy),
        "median_gcs_entropy_bits": baseline::median(&res.gcs_entropy),
        "median_control_entropy_bits": baseline::median(&res.control_entropy),
    });
    print!("{}", pretty(&summary)?);
    Ok(())
}

fn cmd_spectral(a: &SpectralArgs) -> Result<()> {
    let (g, x) = load_inputs(&a.input)?;
    let c = spectral::spectral_check(&g, &x)?;
    print!("{}", pretty(&c)?);
    Ok(())
}

fn cmd_histogram(a: &HistogramArgs) -> Result<()> {
    let (g, stats) = graph::load_edge_list(&a.graph, a.nodes)?;
    let out = json!({
        "node_count": g.node_count(),
        "edge_count": g.edge_count(),
        "self_loops_dropped": stats.self_loops_dropped,
        "duplicates_merged": stats.duplicates_merged,
        "degree": graph::degree_histogram(&g),
        "annotation": graph::annotation_histogram(&g),
    });
    print!("{}", pretty(&out)?);
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let report = interpret::read_report(&a.report)?;
    let truth = synth::read_truth(&a.truth)?;
    let planted: std::collections::HashSet<(usize, usize)> = truth.planted_edges.iter().copied().collect();
    let labels: Vec<bool> = report.edges.iter().map(|e| planted.contains(&(e.u, e.v))).collect();
    let scores: Vec<f64> = report.edges.iter().map(|e| e.attn_mean).collect();
    let self_attn = |ids: &[usize]| -> Result<f64> {
        if ids.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for &i in ids {
            let node = report
                .nodes
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("truth node {i} is not in the report")))?;
            total += node.self_attn;
        }
        Ok(total / ids.len() as f64)
    };
    let out = json!({
        "auc": synth::auc(&scores, &labels)?,
        "mean_self_attention_cr": self_attn(&truth.cr_nodes)?,
        "mean_self_attention_cf": self_attn(&truth.cf_nodes)?,
    });
    print!("{}", pretty(&out)?);
    Ok(())
}
