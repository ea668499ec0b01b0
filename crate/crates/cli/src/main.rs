use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hamming_l0::arrangement::{
    coverage_experiment, dimension_bound, independence_estimate, CoverageReport,
};
use hamming_l0::dataio::{self, Split, WeightsMeta};
use hamming_l0::oracle;
use hamming_l0::pathfollow::{
    attack_targets, resolve_subset, AttackConfig, AttackReport, FarSide, SubsetMode,
};
use hamming_l0::relunet::{local_affine_map, predict, train_mlp_with, MlpNetwork, TrainConfig};
use hamming_l0::Error;

const IMAGE_SIDE: usize = 28;

#[derive(Parser)]
#[command(
    name = "hamming-l0",
    version,
    about = "Sparse targeted perturbations of ReLU classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fraction of orthants reachable with k-sparse directions for random matrices.
    Coverage(CoverageArgs),
    /// Train an n -> width -> 10 ReLU classifier on MNIST.
    Train(TrainArgs),
    /// Perturb an image into other classes by changing a fixed set of pixels.
    Attack(AttackArgs),
    /// Run the oracle suite on random tiny networks and optionally a weights file.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CoverageArgs {
    /// Rows of the coefficient matrix (dimension of the orthant space).
    #[arg(long, default_value_t = 20)]
    m: usize,
    /// Columns of the coefficient matrix.
    #[arg(long, default_value_t = 250)]
    n: usize,
    /// Sparsity: 1 for single columns, 2 for column pairs.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; `.csv` writes one row per seed, anything else JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long, env = "MNIST_DIR", default_value = "data/mnist")]
    data_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Train on the first N training images only.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value = "weights.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsetChoice {
    LargestStd,
    Random,
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum FarSideChoice {
    Ray,
    Line,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    weights: PathBuf,
    /// Index of the source image in the MNIST test set.
    #[arg(
        long,
        conflicts_with = "image_file",
        required_unless_present = "image_file"
    )]
    image_index: Option<usize>,
    /// Source image as a 28x28 binary PGM; grey levels are scaled to [0, 1].
    #[arg(long)]
    image_file: Option<PathBuf>,
    #[arg(
        long,
        conflicts_with = "all_targets",
        required_unless_present = "all_targets"
    )]
    target_class: Option<usize>,
    /// Attack every class other than the source's, with one shared subset.
    #[arg(long)]
    all_targets: bool,
    /// Free coordinates beyond the number of classes.
    #[arg(long, default_value_t = 1)]
    delta: usize,
    #[arg(long, value_enum, default_value = "largest-std")]
    subset_mode: SubsetChoice,
    /// Comma-separated pixel indices for `--subset-mode list`.
    #[arg(long, value_delimiter = ',')]
    subset: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    restarts: usize,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output match tolerance (max norm); default 1e-6 (1 + |target output|).
    #[arg(long)]
    epsilon_target: Option<f64>,
    #[arg(long, value_enum, default_value = "ray")]
    far_side: FarSideChoice,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Directory for PGM dumps of the source and each perturbed image.
    #[arg(long)]
    emit_pgm: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Also check local maps of this network at random points of [0, 1]^n.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit status 1: the command ran but an attack or check failed.
#[derive(Debug)]
struct Failed(String);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Coverage(a) => coverage(a),
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let algorithmic = e.downcast_ref::<Failed>().is_some()
                || matches!(
                    e.downcast_ref::<Error>(),
                    Some(Error::AllRestartsFailed { .. })
                );
            ExitCode::from(if algorithmic { 1 } else { 2 })
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("HAMMING_L0_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("HAMMING_L0_THREADS={raw:?} is not a count"))?;
    if n == 0 {
        bail!("HAMMING_L0_THREADS must be positive");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn coverage(a: CoverageArgs) -> anyhow::Result<()> {
    if a.seeds == 0 {
        bail!("--seeds must be positive");
    }
    let mut reports: Vec<CoverageReport> = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        let r = coverage_experiment(a.m, a.n, a.k, seed)?;
        println!(
            "seed {seed}: covered {}/{} = {:.4} ({:.2}s)",
            r.covered, r.total, r.fraction, r.elapsed_seconds
        );
        reports.push(r);
    }
    let mean = reports.iter().map(|r| r.fraction).sum::<f64>() / reports.len() as f64;
    let estimate = independence_estimate(a.m, a.n, a.k);
    let bound = dimension_bound(a.m as u64, a.k as u64);
    println!(
        "mean fraction {mean:.4}; independence estimate {estimate:.4}; dimension bound {bound:.1}"
    );
    if let Some(out) = &a.out {
        if out
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            dataio::write_coverage_csv(out, &reports)?;
        } else {
            let doc = json!({
                "reports": reports,
                "mean_fraction": mean,
                "independence_estimate": estimate,
                "dimension_bound": bound,
            });
            dataio::write_json(out, &doc)?;
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let dir = &a.data.data_dir;
    let mut train = dataio::load_mnist(dir, Split::Train)
        .with_context(|| format!("loading {}", dir.display()))?;
    if let Some(n) = a.limit {
        train = train.head(n);
    }
    let test = dataio::load_mnist(dir, Split::Test)?;
    let cfg = TrainConfig {
        width: a.width,
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (net, report) = train_mlp_with(&train, Some(&test), &cfg, &mut |epoch, loss| {
        eprintln!("epoch {:>3}: loss {loss:.5}", epoch + 1);
    })?;
    let acc = report.test_accuracy.unwrap_or(0.0);
    println!("train accuracy {:.4}", report.train_accuracy);
    println!("test accuracy {acc:.4}");
    let meta = WeightsMeta {
        seed: Some(a.seed),
        test_accuracy: Some(acc),
    };
    dataio::save_weights(&a.out, &net, &meta)
        .with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn load_source(
    a: &AttackArgs,
    net: &MlpNetwork,
) -> anyhow::Result<(Vec<f64>, usize, Option<usize>)> {
    if let Some(path) = &a.image_file {
        let (w, h, bytes) =
            dataio::read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
        if w * h != net.input_dim() {
            bail!(
                "{}x{} image does not match a network with {} inputs",
                w,
                h,
                net.input_dim()
            );
        }
        let x: Vec<f64> = bytes.iter().map(|&b| f64::from(b) / 255.0).collect();
        let class = predict(net, &x)?;
        return Ok((x, class, None));
    }
    let index = a.image_index.expect("clap requires an image");
    let test = dataio::load_mnist(&a.data.data_dir, Split::Test)?;
    if index >= test.len() {
        bail!(
            "--image-index {index} is past the {} test images",
            test.len()
        );
    }
    Ok((test.input(index).to_vec(), test.label(index), Some(index)))
}

fn attack(a: AttackArgs) -> anyhow::Result<()> {
    let (net, _) = dataio::load_weights(&a.weights)
        .with_context(|| format!("loading {}", a.weights.display()))?;
    let (x, source_class, source_index) = load_source(&a, &net)?;
    let classes = net.output_dim();
    let targets: Vec<usize> = match a.target_class {
        Some(t) if t >= classes => bail!("--target-class {t} is not below {classes}"),
        Some(t) => vec![t],
        None => (0..classes).filter(|&c| c != source_class).collect(),
    };
    let train = dataio::load_mnist(&a.data.data_dir, Split::Train)?;
    let mode = match a.subset_mode {
        SubsetChoice::LargestStd => SubsetMode::LargestStd,
        SubsetChoice::Random => SubsetMode::Random,
        SubsetChoice::List => SubsetMode::UserList(a.subset.clone()),
    };
    let cfg = AttackConfig {
        delta: a.delta,
        epsilon_target: a.epsilon_target,
        max_iters: a.max_iters,
        restarts: a.restarts,
        seed: a.seed,
        subset_mode: mode,
        far_side: match a.far_side {
            FarSideChoice::Ray => FarSide::Ray,
            FarSideChoice::Line => FarSide::Line,
        },
        ..AttackConfig::default()
    };
    let subset = resolve_subset(
        &cfg.subset_mode,
        classes + a.delta,
        net.input_dim(),
        Some(&train),
        a.seed,
    )?;
    let reports = attack_targets(
        &net,
        &x,
        source_class,
        source_index,
        &targets,
        &train,
        &subset,
        &cfg,
    )?;

    for r in &reports {
        let status = if r.success { "ok" } else { "FAILED" };
        println!(
            "{} -> {}: {status}, hamming {}, restarts {}, iterations {}, max output error {:.3e}",
            r.source_class,
            r.target_class,
            r.hamming,
            r.restarts_used,
            r.iterations,
            r.max_output_error
        );
    }
    if reports.len() == 1 {
        dataio::write_json(&a.out, &reports[0])?;
    } else {
        dataio::write_json(&a.out, &reports)?;
    }
    if let Some(dir) = &a.emit_pgm {
        emit_pgms(dir, &x, &reports, net.input_dim())?;
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.success)
        .map(|r| r.target_class.to_string())
        .collect();
    if !failed.is_empty() {
        return Err(Failed(format!(
            "no perturbation found for target(s) {}",
            failed.join(", ")
        ))
        .into());
    }
    Ok(())
}

fn emit_pgms(dir: &Path, x: &[f64], reports: &[AttackReport], n: usize) -> anyhow::Result<()> {
    if n != IMAGE_SIDE * IMAGE_SIDE {
        bail!("--emit-pgm needs {IMAGE_SIDE}x{IMAGE_SIDE} inputs, network has {n}");
    }
    std::fs::create_dir_all(dir)?;
    dataio::write_pgm(dir.join("source.pgm"), x, IMAGE_SIDE, IMAGE_SIDE)?;
    for r in reports.iter().filter(|r| r.success) {
        let mut z = x.to_vec();
        for &(i, _, new) in &r.perturbation {
            z[i] = new;
        }
        let name = format!("target_{}.pgm", r.target_class);
        dataio::write_pgm(dir.join(name), &z, IMAGE_SIDE, IMAGE_SIDE)?;
    }
    Ok(())
}

fn verify(a: VerifyArgs) -> anyhow::Result<()> {
    let net = match &a.weights {
        Some(p) => Some(
            dataio::load_weights(p)
                .with_context(|| format!("loading {}", p.display()))?
                .0,
        ),
        None => None,
    };
    if a.trials == 0 {
        bail!("--trials must be positive");
    }
    let checks = oracle::run_suite(net.as_ref(), a.trials, a.seed, local_affine_map)?;
    println!("{:<10} {:>7} {:>7}  result", "check", "passed", "failed");
    for c in &checks {
        println!(
            "{:<10} {:>7} {:>7}  {}",
            c.name,
            c.passed,
            c.failed,
            if c.ok() { "pass" } else { "FAIL" }
        );
        if let Some(d) = &c.detail {
            println!("    {d}");
        }
    }
    if checks.iter().all(|c| c.ok()) {
        Ok(())
    } else {
        Err(anyhow!(Failed("invariant checks failed".into())))
    }
}
