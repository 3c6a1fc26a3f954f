//! Command-line front end for the design toolkit: counting and sampling
//! assemblies, genome encoding and decoding, pose search, autoencoder
//! training, latent-space optimization, damage-trial matrices, and
//! plot-ready tables extracted from run logs.
//!
//! Every run log is line-delimited JSON whose first line embeds the tool
//! version and the fully resolved configuration, so any result file can
//! be regenerated from the log alone. Subcommands are non-interactive;
//! the only state they leave behind is their declared output files.

use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{Quaternion, UnitQuaternion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use metamorph::amputation::{
    self, apply_amputation, quadruped, run_trial, test_matrix, CutPoint, TestMatrixConfig,
};
use metamorph::bayesopt::{
    best_so_far, bo_run, expected_improvement, fit_gp, random_search, BoConfig, BoRun,
    DesignEvaluator, EvalRecord, EvalStatus, Evaluator, SyntheticQuadratic,
};
use metamorph::genome::{
    decode_verdict, two_module_dataset, DecodeVerdict, holdout_split, TrainConfig, Vae, VaeArch,
};
use metamorph::geometry::ModuleGeometry;
use metamorph::morphology::{
    self, ConfigTree, Connection, DockId, DecodeError, GenomeSeq, GENOME_LEN,
};
use metamorph::poseopt::{optimize_pose, PoseOptConfig, PoseRecord};
use metamorph::simcore::{SimConfig, Simulator, Terrain};

const TOOL: &str = "metamorph";
const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Morphology and control co-design toolkit.
///
/// Global flags can also come from the environment: METAMORPH_SEED,
/// METAMORPH_WORKERS, METAMORPH_CONFIG, and METAMORPH_OUT mirror --seed,
/// --workers, --config, and --out.
#[derive(Debug, Parser)]
#[command(name = TOOL, version, propagate_version = true)]
struct Cli {
    /// Master seed; every stochastic step derives from it.
    #[arg(long, global = true, env = "METAMORPH_SEED")]
    seed: Option<u64>,

    /// Worker threads for parallel subcommands; 0 uses all cores.
    #[arg(long, global = true, env = "METAMORPH_WORKERS")]
    workers: Option<usize>,

    /// JSON file overriding the built-in defaults; flags win over the file.
    #[arg(long, global = true, env = "METAMORPH_CONFIG")]
    config: Option<PathBuf>,

    /// Directory for output files.
    #[arg(long, global = true, env = "METAMORPH_OUT", default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design-space sizes: exact two-module count, buildable two-module
    /// designs, and the unique-design estimate for larger assemblies.
    Count {
        /// Print the exact number of unique two-module designs.
        #[arg(long)]
        two_module: bool,
        /// Print the estimated unique design count for this many modules.
        #[arg(long)]
        modules: Option<u32>,
        /// Print how many two-module designs survive the geometry checks.
        #[arg(long)]
        buildable_two_module: bool,
    },
    /// Draw valid random designs and write them as a design file.
    Sample {
        /// Number of designs.
        #[arg(long)]
        n: usize,
        /// Module count or inclusive range, e.g. `3` or `2..5`.
        #[arg(long, default_value = "2..5")]
        modules: String,
        /// Rejection attempts per connection before giving up.
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        /// Output file name inside --out.
        #[arg(long, default_value = "designs.jsonl")]
        name: String,
    },
    /// Serialize a connection list into its 16-token genome.
    Encode {
        /// Tree as JSON, e.g. '{"connections":[{"parent":0,"parent_dock":4,
        /// "child_dock":10,"orientation":0}]}'.
        #[arg(long, conflicts_with = "tree_file")]
        tree: Option<String>,
        /// File containing the same JSON.
        #[arg(long)]
        tree_file: Option<PathBuf>,
    },
    /// Decode a genome (or a latent point through a model) into a tree.
    Decode {
        /// 16 comma-separated tokens.
        #[arg(long, conflicts_with = "latent")]
        genome: Option<String>,
        /// Comma-separated latent coordinates; requires --model.
        #[arg(long, requires = "model")]
        latent: Option<String>,
        /// Autoencoder model file.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Search for a stable, mobile resting pose of one design.
    PoseOpt {
        /// 16 comma-separated genome tokens.
        #[arg(long)]
        genome: String,
        /// Poses to evaluate.
        #[arg(long)]
        samples: Option<usize>,
        /// Restrict to symmetric poses when the tree qualifies.
        #[arg(long)]
        symmetric: bool,
        /// Output file name inside --out.
        #[arg(long, default_value = "pose.json")]
        name: String,
    },
    /// Train the genome autoencoder on the buildable two-module set.
    VaeTrain {
        /// Passes over the training set.
        #[arg(long)]
        epochs: Option<usize>,
        /// Designs per gradient step.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Adam step size.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Weight on the latent regularizer.
        #[arg(long)]
        beta: Option<f64>,
        /// Hidden layer widths, comma separated.
        #[arg(long)]
        hidden: Option<String>,
        /// Latent dimensionality.
        #[arg(long)]
        latent: Option<usize>,
        /// Hold out every fifth design and report accuracy on it.
        #[arg(long)]
        holdout: bool,
        /// Model file name inside --out.
        #[arg(long, default_value = "vae-model.bin")]
        name: String,
    },
    /// Optimize over the latent space with the asynchronous surrogate loop.
    BoRun {
        /// Total evaluations before the run stops.
        #[arg(long)]
        budget: Option<usize>,
        /// Latent dimensionality of the search box.
        #[arg(long)]
        dim: Option<usize>,
        /// Per-axis half width of the search box.
        #[arg(long)]
        box_half_width: Option<f64>,
        #[arg(long, value_enum, default_value_t = EvaluatorKind::Quadratic)]
        evaluator: EvaluatorKind,
        /// Autoencoder model file; required for the design evaluator.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Replace the surrogate loop with uniform random search.
        #[arg(long)]
        random: bool,
        /// Log file name inside --out.
        #[arg(long, default_value = "bo-run.jsonl")]
        name: String,
    },
    /// Simulate one design and log its center-of-mass trace.
    Rollout {
        /// 16 comma-separated genome tokens.
        #[arg(long)]
        genome: String,
        /// Pose file from pose-opt; neutral drop when absent.
        #[arg(long)]
        pose: Option<PathBuf>,
        /// Simulated seconds.
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        /// Also write the sensor-motor recording as a binary trajectory.
        #[arg(long)]
        record: bool,
        /// Log file name inside --out.
        #[arg(long, default_value = "rollout.jsonl")]
        name: String,
    },
    /// Cut limbs off the five-module quadruped.
    Amputate {
        /// Cuts as `limb:fraction` pairs, comma separated; limbs are
        /// 1=front-left, 2=front-right, 3=back-left, 4=back-right.
        #[arg(long)]
        cuts: String,
    },
    /// Expand (and optionally execute) the damage-trial matrix.
    TestMatrix {
        /// Execute the trials instead of only writing the manifest.
        #[arg(long)]
        run: bool,
        /// With --run, execute only the first N trials.
        #[arg(long)]
        limit: Option<usize>,
        /// Trial length override in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Manifest file name inside --out.
        #[arg(long, default_value = "test-matrix.jsonl")]
        name: String,
    },
    /// Turn a run log into plot-ready CSV tables.
    Plots {
        /// A bo-run or rollout log file.
        #[arg(long)]
        log: PathBuf,
        /// Latent dimensions spanned by the fitness-slice grid.
        #[arg(long, default_value = "0,1")]
        slice_dims: String,
        /// Grid resolution per axis of the slice.
        #[arg(long, default_value_t = 41)]
        grid: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvaluatorKind {
    /// Analytic objective -|z|^2; needs no model file.
    Quadratic,
    /// Decode the latent point and score its best settled pose.
    Design,
}

/// Everything that shapes a run. Run logs embed the resolved value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    seed: u64,
    workers: usize,
    geometry: ModuleGeometry<f64>,
    sim: SimConfig<f64>,
    pose: PoseOptConfig<f64>,
    train: TrainConfig,
    arch: VaeArch,
    bo: BoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            geometry: ModuleGeometry::default(),
            sim: SimConfig::default(),
            pose: PoseOptConfig::default(),
            train: TrainConfig::default(),
            arch: VaeArch::default(),
            bo: BoConfig::default(),
        }
    }
}

/// First line of every run log.
#[derive(Serialize)]
struct LogMeta<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
}

struct Failure {
    kind: &'static str,
    message: String,
}

type CmdResult = Result<(), Failure>;

fn fail<E: Display>(kind: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| Failure { kind, message: e.to_string() }
}

fn failure(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure { kind, message: message.into() }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(cli) {
        println!(
            "{}",
            json!({ "error": f.kind, "message": f.message })
        );
        std::process::exit(1);
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => {
            let file = File::open(path).map_err(fail("io"))?;
            serde_json::from_reader(BufReader::new(file)).map_err(fail("config"))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(fail("io"))?;
    Ok(dir.join(name))
}

fn run(cli: Cli) -> CmdResult {
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Count { two_module, modules, buildable_two_module } => {
            cmd_count(&config, *two_module, *modules, *buildable_two_module)
        }
        Command::Sample { n, modules, budget, name } => {
            cmd_sample(&cli, &config, *n, modules, *budget, name)
        }
        Command::Encode { tree, tree_file } => cmd_encode(tree.as_deref(), tree_file.as_deref()),
        Command::Decode { genome, latent, model } => {
            cmd_decode(&config, genome.as_deref(), latent.as_deref(), model.as_deref())
        }
        Command::PoseOpt { genome, samples, symmetric, name } => {
            cmd_pose_opt(&cli, &config, genome, *samples, *symmetric, name)
        }
        Command::VaeTrain {
            epochs,
            batch_size,
            learning_rate,
            beta,
            hidden,
            latent,
            holdout,
            name,
        } => cmd_vae_train(
            &cli, &config, *epochs, *batch_size, *learning_rate, *beta, hidden.as_deref(),
            *latent, *holdout, name,
        ),
        Command::BoRun { budget, dim, box_half_width, evaluator, model, random, name } => {
            cmd_bo_run(
                &cli, &config, *budget, *dim, *box_half_width, *evaluator,
                model.as_deref(), *random, name,
            )
        }
        Command::Rollout { genome, pose, duration, record, name } => {
            cmd_rollout(&cli, &config, genome, pose.as_deref(), *duration, *record, name)
        }
        Command::Amputate { cuts } => cmd_amputate(cuts),
        Command::TestMatrix { run, limit, duration, name } => {
            cmd_test_matrix(&cli, &config, *run, *limit, *duration, name)
        }
        Command::Plots { log, slice_dims, grid } => {
            cmd_plots(&cli, log, slice_dims, *grid)
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing helpers.

fn parse_genome(s: &str) -> Result<GenomeSeq, Failure> {
    let tokens: Vec<u16> = s
        .split(',')
        .map(|t| t.trim().parse::<u16>())
        .collect::<Result<_, _>>()
        .map_err(fail("malformed"))?;
    if tokens.len() != GENOME_LEN {
        return Err(failure(
            "malformed",
            format!("expected {GENOME_LEN} genome tokens, got {}", tokens.len()),
        ));
    }
    let mut seq = [0u16; GENOME_LEN];
    seq.copy_from_slice(&tokens);
    Ok(GenomeSeq(seq))
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(fail("malformed"))
}

fn parse_module_range(s: &str) -> Result<(usize, usize), Failure> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| failure("usage", format!("bad module count `{t}`")))
    };
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let k = parse(s)?;
            (k, k)
        }
    };
    if lo < 1 || hi > morphology::MAX_MODULES || lo > hi {
        return Err(failure(
            "usage",
            format!("module range {lo}..{hi} outside 1..{}", morphology::MAX_MODULES),
        ));
    }
    Ok((lo, hi))
}

fn parse_cuts(s: &str) -> Result<Vec<CutPoint>, Failure> {
    s.split(',')
        .map(|pair| {
            let (limb, fraction) = pair
                .split_once(':')
                .ok_or_else(|| failure("usage", format!("cut `{pair}` is not limb:fraction")))?;
            Ok(CutPoint {
                limb: limb.trim().parse().map_err(fail("usage"))?,
                fraction: fraction.trim().parse().map_err(fail("usage"))?,
            })
        })
        .collect()
}

/// Connection in plain-integer form for JSON interfaces.
#[derive(Debug, Serialize, Deserialize)]
struct ConnSpec {
    parent: u8,
    parent_dock: u8,
    child_dock: u8,
    orientation: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeSpec {
    connections: Vec<ConnSpec>,
}

fn tree_from_spec(spec: &TreeSpec) -> Result<ConfigTree, Failure> {
    let dock = |index: u8| {
        DockId::new(index)
            .ok_or_else(|| failure("malformed", format!("dock index {index} out of range")))
    };
    let connections = spec
        .connections
        .iter()
        .map(|c| {
            Ok(Connection {
                parent: c.parent,
                parent_dock: dock(c.parent_dock)?,
                child_dock: dock(c.child_dock)?,
                orientation: c.orientation,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    ConfigTree::new(connections).map_err(fail("malformed"))
}

fn tree_to_spec(tree: &ConfigTree) -> TreeSpec {
    TreeSpec {
        connections: tree
            .connections()
            .iter()
            .map(|c| ConnSpec {
                parent: c.parent,
                parent_dock: c.parent_dock.index(),
                child_dock: c.child_dock.index(),
                orientation: c.orientation,
            })
            .collect(),
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(fail("config"))
}

// ---------------------------------------------------------------------------
// Subcommands.

fn cmd_count(
    config: &RunConfig,
    two_module: bool,
    modules: Option<u32>,
    buildable: bool,
) -> CmdResult {
    let none_requested = !two_module && modules.is_none() && !buildable;
    if two_module {
        let count = morphology::count_two_module(18, 3, 12).map_err(fail("config"))?;
        println!("{count}");
    }
    if let Some(n) = modules {
        if n < 1 {
            return Err(failure("usage", "--modules must be at least 1"));
        }
        println!("{}", morphology::estimate_unique(n));
    }
    if buildable {
        println!("{}", two_module_dataset(&config.geometry).len());
    }
    if none_requested {
        let summary = json!({
            "two_module": morphology::count_two_module(18, 3, 12).map_err(fail("config"))?,
            "buildable_two_module": two_module_dataset(&config.geometry).len(),
            "estimate_five_module": morphology::estimate_unique(5),
        });
        println!("{summary}");
    }
    Ok(())
}

fn cmd_sample(
    cli: &Cli,
    config: &RunConfig,
    n: usize,
    modules: &str,
    budget: usize,
    name: &str,
) -> CmdResult {
    let (lo, hi) = parse_module_range(modules)?;
    let path = out_file(&cli.out, name)?;
    let mut w = BufWriter::new(File::create(&path).map_err(fail("io"))?);
    let meta = LogMeta { tool: TOOL, version: VERSION, command: "sample", config };
    serde_json::to_writer(&mut w, &json!({ "meta": meta, "n": n, "modules": modules }))
        .map_err(fail("io"))?;
    writeln!(w).map_err(fail("io"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..n {
        let k = rand::Rng::gen_range(&mut rng, lo..=hi);
        let tree = morphology::sample_tree(&mut rng, k, &config.geometry, budget)
            .map_err(fail("config"))?;
        let record = json!({ "n_modules": k, "genome": tree.to_genome() });
        serde_json::to_writer(&mut w, &record).map_err(fail("io"))?;
        writeln!(w).map_err(fail("io"))?;
    }
    w.flush().map_err(fail("io"))?;
    println!("{}", json!({ "written": n, "path": path }));
    Ok(())
}

fn cmd_encode(tree: Option<&str>, tree_file: Option<&Path>) -> CmdResult {
    let text = match (tree, tree_file) {
        (Some(t), _) => t.to_string(),
        (None, Some(path)) => fs::read_to_string(path).map_err(fail("io"))?,
        (None, None) => return Err(failure("usage", "pass --tree or --tree-file")),
    };
    let spec: TreeSpec = serde_json::from_str(&text).map_err(fail("malformed"))?;
    let tree = tree_from_spec(&spec)?;
    println!(
        "{}",
        json!({ "n_modules": tree.n_modules(), "genome": tree.to_genome() })
    );
    Ok(())
}

fn cmd_decode(
    config: &RunConfig,
    genome: Option<&str>,
    latent: Option<&str>,
    model: Option<&Path>,
) -> CmdResult {
    let seq = match (genome, latent) {
        (Some(g), None) => parse_genome(g)?,
        (None, Some(l)) => {
            let model = model.expect("clap enforces --model with --latent");
            let z = parse_f64_list(l)?;
            let vae = load_model(model)?;
            if z.len() != vae.latent_dim() {
                return Err(failure(
                    "malformed",
                    format!("latent has {} coordinates, model wants {}", z.len(), vae.latent_dim()),
                ));
            }
            vae.decode_genome(&z)
        }
        _ => return Err(failure("usage", "pass --genome or --latent")),
    };
    match decode_verdict(&seq, &config.geometry) {
        DecodeVerdict::Valid(tree) => {
            println!(
                "{}",
                json!({
                    "n_modules": tree.n_modules(),
                    "genome": seq,
                    "connections": tree_to_spec(&tree).connections,
                })
            );
            Ok(())
        }
        DecodeVerdict::Malformed(e) => Err(failure("malformed", e.to_string())),
        DecodeVerdict::SelfColliding => {
            Err(failure("self-collision", "decoded design overlaps itself"))
        }
    }
}

fn decode_tree(config: &RunConfig, genome: &str) -> Result<(GenomeSeq, ConfigTree), Failure> {
    let seq = parse_genome(genome)?;
    let tree = ConfigTree::from_genome(&seq).map_err(|e| match e {
        DecodeError::Malformed(m) => failure("malformed", m.to_string()),
        DecodeError::InvalidDesign(d) => failure("invalid-design", d.to_string()),
    })?;
    morphology::validate_tree(&tree, &config.geometry)
        .map_err(|e| failure("self-collision", e.to_string()))?;
    Ok((seq, tree))
}

fn cmd_pose_opt(
    cli: &Cli,
    config: &RunConfig,
    genome: &str,
    samples: Option<usize>,
    symmetric: bool,
    name: &str,
) -> CmdResult {
    let (seq, tree) = decode_tree(config, genome)?;
    let sim = Simulator::from_tree(&tree, &config.geometry, config.sim.clone(), Terrain::Flat)
        .map_err(fail("config"))?;
    let mut pose_cfg = config.pose.clone();
    if let Some(n) = samples {
        pose_cfg.n_samples = n;
    }
    pose_cfg.symmetric = symmetric || pose_cfg.symmetric;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pool = thread_pool(config.workers)?;
    let result = pool.install(|| optimize_pose(&sim, &tree, &pose_cfg, &mut rng));

    let resolved = RunConfig { pose: pose_cfg.clone(), ..config.clone() };
    let meta = LogMeta { tool: TOOL, version: VERSION, command: "pose-opt", config: &resolved };
    let record = json!({
        "meta": meta,
        "genome": seq,
        "samples": pose_cfg.n_samples,
        "symmetric": pose_cfg.symmetric,
        "index": result.index,
        "n_evaluated": result.n_evaluated,
        "scores": result.scores,
        "best": PoseRecord::from_evaluation(&result.best),
    });
    let path = out_file(&cli.out, name)?;
    fs::write(&path, format!("{record}\n")).map_err(fail("io"))?;
    println!(
        "{}",
        json!({
            "path": path,
            "score": result.best.score,
            "fell": result.best.fell,
            "support_area": result.best.support_area,
        })
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Vae, Failure> {
    let mut r = BufReader::new(File::open(path).map_err(fail("io"))?);
    Vae::load(&mut r).map_err(fail("malformed"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_vae_train(
    cli: &Cli,
    config: &RunConfig,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    beta: Option<f64>,
    hidden: Option<&str>,
    latent: Option<usize>,
    holdout: bool,
    name: &str,
) -> CmdResult {
    let mut train_cfg = config.train.clone();
    if let Some(v) = epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = beta {
        train_cfg.beta = v;
    }
    let mut arch = config.arch.clone();
    if let Some(widths) = hidden {
        arch.hidden = widths
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(fail("usage"))?;
    }
    if let Some(v) = latent {
        arch.latent = v;
    }

    let data = two_module_dataset(&config.geometry);
    let (train_set, holdout_set) = if holdout {
        holdout_split(&data)
    } else {
        (data.clone(), Vec::new())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut vae = Vae::new(&arch, &mut rng);
    let pool = thread_pool(config.workers)?;
    let report = pool.install(|| vae.train(&train_set, &train_cfg, &mut rng));

    let path = out_file(&cli.out, name)?;
    let mut w = BufWriter::new(File::create(&path).map_err(fail("io"))?);
    vae.save(&mut w).map_err(fail("io"))?;
    w.flush().map_err(fail("io"))?;

    let resolved = RunConfig { train: train_cfg.clone(), arch: arch.clone(), ..config.clone() };
    let meta = LogMeta { tool: TOOL, version: VERSION, command: "vae-train", config: &resolved };
    let holdout_accuracy = if holdout_set.is_empty() {
        serde_json::Value::Null
    } else {
        json!(vae.reconstruction_accuracy(&holdout_set))
    };
    println!(
        "{}",
        json!({
            "meta": meta,
            "path": path,
            "n_designs": data.len(),
            "n_train": train_set.len(),
            "n_holdout": holdout_set.len(),
            "epochs": train_cfg.epochs,
            "steps": report.steps,
            "final_loss": report.epoch_loss.last(),
            "train_accuracy": vae.reconstruction_accuracy(&train_set),
            "holdout_accuracy": holdout_accuracy,
        })
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bo_run(
    cli: &Cli,
    config: &RunConfig,
    budget: Option<usize>,
    dim: Option<usize>,
    box_half_width: Option<f64>,
    evaluator: EvaluatorKind,
    model: Option<&Path>,
    random: bool,
    name: &str,
) -> CmdResult {
    let mut bo = config.bo.clone();
    bo.seed = config.seed;
    if let Some(v) = budget {
        bo.budget = v;
    }
    if let Some(v) = dim {
        bo.dim = v;
    }
    if let Some(v) = box_half_width {
        bo.box_half_width = v;
    }

    let quadratic = SyntheticQuadratic;
    let design;
    let eval: &dyn Evaluator = match evaluator {
        EvaluatorKind::Quadratic => &quadratic,
        EvaluatorKind::Design => {
            let path = model
                .ok_or_else(|| failure("config", "--evaluator design requires --model"))?;
            let vae = load_model(path)?;
            if vae.latent_dim() != bo.dim {
                return Err(failure(
                    "config",
                    format!("model latent dim {} != search dim {}", vae.latent_dim(), bo.dim),
                ));
            }
            design = DesignEvaluator {
                vae,
                geom: config.geometry.clone(),
                sim: config.sim.clone(),
                pose: config.pose.clone(),
            };
            &design
        }
    };

    let workers = if config.workers == 0 { num_cpus() } else { config.workers };
    let run = if random {
        random_search(eval, &bo)
    } else {
        bo_run(eval, bo.clone(), workers)
    };

    let path = out_file(&cli.out, name)?;
    let mut w = BufWriter::new(File::create(&path).map_err(fail("io"))?);
    write_bo_log(&mut w, &run, config, random).map_err(fail("io"))?;
    w.flush().map_err(fail("io"))?;

    let best = run.best();
    println!(
        "{}",
        json!({
            "path": path,
            "records": run.history.len(),
            "best_fitness": best.map(|r| r.fitness),
            "best_z": best.map(|r| &r.z),
        })
    );
    Ok(())
}

/// Same line format the optimizer's own reader understands, with the tool
/// version and full config added to the header line.
fn write_bo_log<W: Write>(
    w: &mut W,
    run: &BoRun,
    config: &RunConfig,
    random: bool,
) -> std::io::Result<()> {
    let header = json!({
        "config": run.config,
        "evaluator": run.evaluator,
        "tool": TOOL,
        "version": VERSION,
        "command": if random { "bo-run --random" } else { "bo-run" },
        "run_config": RunConfig { bo: run.config.clone(), ..config.clone() },
    });
    serde_json::to_writer(&mut *w, &header)?;
    writeln!(w)?;
    for r in &run.history {
        serde_json::to_writer(&mut *w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

fn num_cpus() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn cmd_rollout(
    cli: &Cli,
    config: &RunConfig,
    genome: &str,
    pose: Option<&Path>,
    duration: f64,
    record: bool,
    name: &str,
) -> CmdResult {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(failure("usage", "duration must be positive"));
    }
    let (seq, tree) = decode_tree(config, genome)?;
    let sim = Simulator::from_tree(&tree, &config.geometry, config.sim.clone(), Terrain::Flat)
        .map_err(fail("config"))?;
    let n = sim.n_modules();

    let (orientation, angles) = match pose {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(fail("io"))?;
            let record: serde_json::Value = serde_json::from_str(&text).map_err(fail("malformed"))?;
            let best: PoseRecord = serde_json::from_value(record["best"].clone())
                .map_err(fail("malformed"))?;
            if best.joint_angles.len() != n {
                return Err(failure(
                    "malformed",
                    format!("pose has {} joints, design has {n}", best.joint_angles.len()),
                ));
            }
            let [qw, qx, qy, qz] = best.orientation;
            (
                UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz)),
                best.joint_angles,
            )
        }
        None => (UnitQuaternion::identity(), vec![0.0; n]),
    };

    let mut state = sim.drop_state(&orientation, angles.clone(), 0.02);
    let steps = (duration / sim.config.control_dt).round() as usize;

    let path = out_file(&cli.out, name)?;
    let mut w = BufWriter::new(File::create(&path).map_err(fail("io"))?);
    let meta = LogMeta { tool: TOOL, version: VERSION, command: "rollout", config };
    serde_json::to_writer(
        &mut w,
        &json!({ "meta": meta, "genome": seq, "steps": steps, "duration": duration }),
    )
    .map_err(fail("io"))?;
    writeln!(w).map_err(fail("io"))?;

    let mut recorded = Vec::new();
    for k in 0..steps {
        if record {
            recorded.push(amputation::TimeStep {
                states: amputation::capture_states(&sim, &state),
                action: angles.clone(),
                angles: state.theta.clone(),
            });
        }
        sim.control_step(&mut state, &angles).map_err(fail("sim"))?;
        let com = sim.com(&state);
        serde_json::to_writer(
            &mut w,
            &json!({ "step": k, "time": state.time, "com": [com.x, com.y, com.z] }),
        )
        .map_err(fail("io"))?;
        writeln!(w).map_err(fail("io"))?;
    }
    w.flush().map_err(fail("io"))?;

    let mut outputs = vec![path.clone()];
    if record {
        let trajectory = amputation::Trajectory {
            policy_ids: vec![0; n],
            zero_offsets: vec![0.0; n],
            steps: recorded,
        };
        let traj_path = out_file(&cli.out, "trajectory.bin")?;
        let mut tw = BufWriter::new(File::create(&traj_path).map_err(fail("io"))?);
        amputation::write_trajectory(&mut tw, &trajectory).map_err(fail("io"))?;
        tw.flush().map_err(fail("io"))?;
        outputs.push(traj_path);
    }
    let com = sim.com(&state);
    println!(
        "{}",
        json!({ "paths": outputs, "steps": steps, "final_com": [com.x, com.y, com.z] })
    );
    Ok(())
}

fn cmd_amputate(cuts: &str) -> CmdResult {
    let cuts = parse_cuts(cuts)?;
    let design = apply_amputation(&quadruped(), &cuts).map_err(|e| {
        let kind = match e {
            amputation::AmputationError::NotALeaf { .. } => "not-a-leaf",
            amputation::AmputationError::RootCut => "root-cut",
            amputation::AmputationError::NoSuchModule { .. } => "no-such-module",
            amputation::AmputationError::DuplicateCut { .. } => "duplicate-cut",
            amputation::AmputationError::BadFraction { .. } => "bad-fraction",
        };
        failure(kind, e.to_string())
    })?;
    let stubs: Vec<_> = design
        .stubs
        .iter()
        .map(|s| {
            json!({
                "parent_module": s.parent_module,
                "parent_dock": s.parent_dock.index(),
                "child_dock": s.child_dock.index(),
                "orientation": s.orientation,
                "fraction": s.fraction,
            })
        })
        .collect();
    println!(
        "{}",
        json!({
            "n_modules": design.tree.n_modules(),
            "genome": design.tree.to_genome(),
            "connections": tree_to_spec(&design.tree).connections,
            "stubs": stubs,
        })
    );
    Ok(())
}

fn cmd_test_matrix(
    cli: &Cli,
    config: &RunConfig,
    execute: bool,
    limit: Option<usize>,
    duration: Option<f64>,
    name: &str,
) -> CmdResult {
    let mut matrix_cfg = TestMatrixConfig { seed: config.seed, ..Default::default() };
    if let Some(d) = duration {
        matrix_cfg.duration = d;
    }
    let trials = test_matrix(&matrix_cfg);
    let selected = limit.unwrap_or(trials.len()).min(trials.len());

    let path = out_file(&cli.out, name)?;
    let mut w = BufWriter::new(File::create(&path).map_err(fail("io"))?);
    let meta = LogMeta { tool: TOOL, version: VERSION, command: "test-matrix", config };
    serde_json::to_writer(
        &mut w,
        &json!({ "meta": meta, "matrix": matrix_cfg, "trials": trials.len(), "executed": if execute { selected } else { 0 } }),
    )
    .map_err(fail("io"))?;
    writeln!(w).map_err(fail("io"))?;

    let mut failures = 0usize;
    for (i, spec) in trials.iter().enumerate() {
        let line = if execute && i < selected {
            match run_trial(spec, &config.geometry, config.sim.clone()) {
                Ok(result) => json!({ "spec": spec, "result": result }),
                Err(e) => {
                    failures += 1;
                    json!({ "spec": spec, "error": e.to_string() })
                }
            }
        } else {
            json!({ "spec": spec })
        };
        serde_json::to_writer(&mut w, &line).map_err(fail("io"))?;
        writeln!(w).map_err(fail("io"))?;
    }
    w.flush().map_err(fail("io"))?;
    println!(
        "{}",
        json!({ "path": path, "trials": trials.len(), "executed": if execute { selected } else { 0 }, "failures": failures })
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Plot tables.

fn cmd_plots(cli: &Cli, log: &Path, slice_dims: &str, grid: usize) -> CmdResult {
    let file = File::open(log).map_err(fail("io"))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(fail("io"))?,
        None => {
            eprintln!("warning: empty log, nothing to emit");
            println!("{}", json!({ "tables": [] }));
            return Ok(());
        }
    };
    let head: serde_json::Value = serde_json::from_str(&header).map_err(fail("malformed"))?;

    if head.get("evaluator").is_some() {
        plots_from_bo(cli, lines, slice_dims, grid)
    } else if head["meta"]["command"] == "rollout" {
        plots_from_rollout(cli, lines)
    } else {
        Err(failure("malformed", "log is neither a bo-run nor a rollout log"))
    }
}

fn read_records<B: BufRead>(
    lines: std::io::Lines<B>,
) -> (Vec<serde_json::Value>, bool) {
    let mut records = Vec::new();
    let mut truncated = false;
    for line in lines {
        let Ok(line) = line else {
            truncated = true;
            break;
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => records.push(v),
            Err(_) => {
                truncated = true;
                break;
            }
        }
    }
    (records, truncated)
}

fn plots_from_bo<B: BufRead>(
    cli: &Cli,
    lines: std::io::Lines<B>,
    slice_dims: &str,
    grid: usize,
) -> CmdResult {
    let (raw, truncated) = read_records(lines);
    if truncated {
        eprintln!("warning: log ends mid-record, emitting the readable part");
    }
    let records: Vec<EvalRecord> = raw
        .into_iter()
        .filter_map(|v| serde_json::from_value(v).ok())
        .collect();

    let best_path = out_file(&cli.out, "best_so_far.csv")?;
    let mut w = BufWriter::new(File::create(&best_path).map_err(fail("io"))?);
    writeln!(w, "index,id,fitness,best").map_err(fail("io"))?;
    let running = best_so_far(&records);
    for (i, (r, best)) in records.iter().zip(&running).enumerate() {
        writeln!(w, "{},{},{},{}", i, r.id, r.fitness, best).map_err(fail("io"))?;
    }
    w.flush().map_err(fail("io"))?;
    let mut tables = vec![best_path];

    // Surrogate slice through the best point, over two chosen axes.
    let done: Vec<&EvalRecord> =
        records.iter().filter(|r| r.status == EvalStatus::Done).collect();
    if done.len() >= 3 {
        let dims = parse_f64_list(slice_dims)?;
        if dims.len() != 2 {
            return Err(failure("usage", "--slice-dims wants two axes, e.g. 0,1"));
        }
        let (di, dj) = (dims[0] as usize, dims[1] as usize);
        let dim = done[0].z.len();
        if di >= dim || dj >= dim || di == dj {
            return Err(failure("usage", format!("slice axes {di},{dj} invalid for dim {dim}")));
        }
        let x: Vec<Vec<f64>> = done.iter().map(|r| r.z.clone()).collect();
        let y: Vec<f64> = done.iter().map(|r| r.fitness).collect();
        let model = fit_gp(&x, &y, 0).map_err(fail("config"))?;
        let best = done
            .iter()
            .max_by(|a, b| a.fitness.partial_cmp(&b.fitness).expect("finite"))
            .expect("nonempty");
        let span: f64 = x
            .iter()
            .flat_map(|p| [p[di].abs(), p[dj].abs()])
            .fold(1.0, f64::max);

        let slice_path = out_file(&cli.out, "fitness_slice.csv")?;
        let mut w = BufWriter::new(File::create(&slice_path).map_err(fail("io"))?);
        writeln!(w, "z{di},z{dj},mean,std,ei").map_err(fail("io"))?;
        let n = grid.max(2);
        for a in 0..n {
            for b in 0..n {
                let za = -span + 2.0 * span * a as f64 / (n - 1) as f64;
                let zb = -span + 2.0 * span * b as f64 / (n - 1) as f64;
                let mut z = best.z.clone();
                z[di] = za;
                z[dj] = zb;
                let (mu, var) = model.predict(&z);
                let ei = expected_improvement(&model, &z, best.fitness);
                writeln!(w, "{za},{zb},{mu},{},{ei}", var.sqrt()).map_err(fail("io"))?;
            }
        }
        w.flush().map_err(fail("io"))?;
        tables.push(slice_path);
    }

    println!(
        "{}",
        json!({ "tables": tables, "records": records.len(), "truncated": truncated })
    );
    Ok(())
}

fn plots_from_rollout<B: BufRead>(cli: &Cli, lines: std::io::Lines<B>) -> CmdResult {
    let (records, truncated) = read_records(lines);
    if truncated {
        eprintln!("warning: log ends mid-record, emitting the readable part");
    }
    let path = out_file(&cli.out, "com_trace.csv")?;
    let mut w = BufWriter::new(File::create(&path).map_err(fail("io"))?);
    writeln!(w, "step,time,x,y,z").map_err(fail("io"))?;
    let mut rows = 0usize;
    for r in &records {
        let (Some(step), Some(time), Some(com)) =
            (r["step"].as_u64(), r["time"].as_f64(), r["com"].as_array())
        else {
            continue;
        };
        if com.len() != 3 {
            continue;
        }
        writeln!(
            w,
            "{},{},{},{},{}",
            step, time, com[0], com[1], com[2]
        )
        .map_err(fail("io"))?;
        rows += 1;
    }
    w.flush().map_err(fail("io"))?;
    println!(
        "{}",
        json!({ "tables": [path], "rows": rows, "truncated": truncated })
    );
    Ok(())
}
