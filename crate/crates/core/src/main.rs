//! Command-line driver: baseline training, ADMM pruning, accelerator
//! simulation, design-space exploration, and self-verification.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use spectral_sparse::admm::{self, Hyperparams};
use spectral_sparse::dataset::{self, Dataset};
use spectral_sparse::dse::{self, LambdaTable, PlatformSpec, WorkloadSpec};
use spectral_sparse::model::{self, ToyModel};
use spectral_sparse::sim::{self, SimConfig};
use spectral_sparse::sparse::{self, SparseMap, SparseSpectralKernelSet};
use spectral_sparse::spectral::ConvLayerSpec;
use spectral_sparse::{Error, Result};

#[derive(Parser)]
#[command(name = "spectral-sparse", version, about = "Spectral CNN pruning and sparse accelerator toolkit")]
struct Cli {
    /// TOML configuration file; unset fields take built-in defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output directory for artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense spectral baseline model
    TrainBaseline,
    /// ADMM-prune a trained baseline and emit hardware kernel tables
    Prune {
        /// Baseline model file (default: <out>/baseline.json)
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Replay a sparse layer through the cycle-level simulator
    Simulate {
        /// Pruned kernel file (default: random kernels with config dims)
        #[arg(long)]
        kernels: Option<PathBuf>,
    },
    /// Enumerate accelerator design points and report the optimum
    Explore,
    /// Cross-check the analytic models against independent references
    Verify,
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DataConfig {
    /// "synthetic" or "idx"
    source: String,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
    train_samples: usize,
    test_samples: usize,
    image_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: "synthetic".into(),
            images: None,
            labels: None,
            test_images: None,
            test_labels: None,
            train_samples: 400,
            test_samples: 200,
            image_size: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    n: usize,
    epochs: usize,
    alpha: f64,
    rho: f64,
    eta0: f64,
    lr_decay: f64,
    lr_decay_every: usize,
    rho_growth: f64,
    admm_iters: usize,
    epochs_per_w_update: usize,
    batch_size: usize,
    retrain_epochs: usize,
    early_stop_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            n: 8,
            epochs: 60,
            alpha: hp.alpha,
            rho: hp.rho,
            eta0: 0.2,
            lr_decay: hp.lr_decay,
            lr_decay_every: hp.lr_decay_every,
            rho_growth: hp.rho_growth,
            admm_iters: hp.admm_iters,
            epochs_per_w_update: hp.epochs_per_w_update,
            batch_size: hp.batch_size,
            retrain_epochs: hp.retrain_epochs,
            early_stop_tol: hp.early_stop_tol,
        }
    }
}

impl TrainConfig {
    fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            alpha: self.alpha,
            rho: self.rho,
            eta0: self.eta0,
            lr_decay: self.lr_decay,
            lr_decay_every: self.lr_decay_every,
            rho_growth: self.rho_growth,
            admm_iters: self.admm_iters,
            epochs_per_w_update: self.epochs_per_w_update,
            batch_size: self.batch_size,
            retrain_epochs: self.retrain_epochs,
            early_stop_tol: self.early_stop_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimTomlConfig {
    p_b: usize,
    p_o: usize,
    r: usize,
    batch: usize,
    c_in: usize,
    c_out: usize,
    p_o_sweep: Vec<usize>,
    r_sweep: Vec<usize>,
    alphas: Vec<f64>,
}

impl Default for SimTomlConfig {
    fn default() -> Self {
        Self {
            p_b: 2,
            p_o: 8,
            r: 4,
            batch: 4,
            c_in: 8,
            c_out: 16,
            p_o_sweep: vec![4, 8, 16],
            r_sweep: vec![1, 2, 4, 8, 16],
            alphas: vec![2.0, 4.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PlatformConfig {
    s_dsp: u64,
    s_bram: f64,
    bandwidth_gbps: f64,
    frequency_mhz: f64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self { s_dsp: 3600, s_bram: 1470.0, bandwidth_gbps: 21.0, frequency_mhz: 200.0 }
    }
}

impl PlatformConfig {
    fn to_spec(&self) -> PlatformSpec {
        let f_hz = self.frequency_mhz * 1.0e6;
        PlatformSpec {
            s_dsp: self.s_dsp,
            s_bram: self.s_bram,
            s_bw: self.bandwidth_gbps * 1.0e9 / dse::COMPLEX_WORD_BYTES / f_hz,
            f_hz,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExploreConfig {
    /// workload FFT size and sparsity
    n: usize,
    alpha: f64,
    p_b_options: Vec<usize>,
    p_o_options: Vec<usize>,
    r_options: Vec<usize>,
    /// channel width of the random kernel sample used to measure lambda
    sample_c_in: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            n: 8,
            alpha: 4.0,
            p_b_options: (1..=16).collect(),
            p_o_options: vec![8, 16, 32, 64, 128],
            r_options: vec![1, 2, 4, 8, 16, 32, 64],
            sample_c_in: 16,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AppConfig {
    data: DataConfig,
    train: TrainConfig,
    sim: SimTomlConfig,
    platform: PlatformConfig,
    explore: ExploreConfig,
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        None => Ok(AppConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// Write the fully-resolved configuration next to the artifacts so a run can
/// be reproduced without the original config file.
fn snapshot_config(cfg: &AppConfig, seed: u64, out: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Snapshot<'a> {
        seed: u64,
        #[serde(flatten)]
        config: &'a AppConfig,
    }
    let text = toml::to_string_pretty(&Snapshot { seed, config: cfg })
        .map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("resolved-config.toml"), text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// shared helpers

fn load_data(cfg: &DataConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    match cfg.source.as_str() {
        "synthetic" => Ok((
            dataset::synthetic(cfg.train_samples, cfg.image_size, seed),
            dataset::synthetic(cfg.test_samples, cfg.image_size, seed ^ 0x7E57),
        )),
        "idx" => {
            let need = |o: &Option<PathBuf>, name: &str| {
                o.clone().ok_or_else(|| Error::Config(format!("data.{name} required for idx source")))
            };
            let train = dataset::load_idx(
                &need(&cfg.images, "images")?,
                &need(&cfg.labels, "labels")?,
                Some(cfg.train_samples),
            )?;
            let test = dataset::load_idx(
                &need(&cfg.test_images, "test_images")?,
                &need(&cfg.test_labels, "test_labels")?,
                Some(cfg.test_samples),
            )?;
            Ok((train, test))
        }
        other => Err(Error::Config(format!("unknown data source {other:?}"))),
    }
}

/// Uniform random k-sparse kernel set, used to characterize the scheduler
/// when no pruned kernels are supplied.
fn random_kernel_set(
    c_out: usize,
    c_in: usize,
    n: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> SparseSpectralKernelSet {
    let total = n * n;
    let mut maps = Vec::with_capacity(c_out * c_in);
    for _ in 0..c_out * c_in {
        let mut idx: Vec<u32> = (0..total as u32).collect();
        for pos in 0..k {
            let other = rng.gen_range(pos..total);
            idx.swap(pos, other);
        }
        let mut indices: Vec<u32> = idx[..k].to_vec();
        indices.sort_unstable();
        let values = indices
            .iter()
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        maps.push(SparseMap { indices, values });
    }
    SparseSpectralKernelSet { c_out, c_in, n, k, maps }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// subcommands

fn cmd_train_baseline(cfg: &AppConfig, seed: u64, out: &Path) -> Result<()> {
    let (train, test) = load_data(&cfg.data, seed)?;
    let hp = cfg.train.hyperparams();
    let mut model = ToyModel::new_random(cfg.data.image_size, cfg.train.n, seed)?;
    let history = admm::train_baseline(&mut model, &train, cfg.train.epochs, &hp, seed)?;
    let accuracy = model::accuracy(&model, &test.images.view(), &test.labels)?;

    model::save_model(&model, &out.join("baseline.json"))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in history.iter().enumerate() {
        csv.push_str(&format!("{i},{loss}\n"));
    }
    std::fs::write(out.join("baseline-log.csv"), csv)?;
    println!(
        "trained baseline: {} epochs, final loss {:.4}, test accuracy {:.3}",
        history.len(),
        history.last().copied().unwrap_or(f64::NAN),
        accuracy
    );
    println!("wrote {}", out.join("baseline.json").display());
    Ok(())
}

fn cmd_prune(cfg: &AppConfig, seed: u64, out: &Path, model_path: Option<&Path>) -> Result<()> {
    let default_path = out.join("baseline.json");
    let model_path = model_path.unwrap_or(&default_path);
    if !model_path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run train-baseline first or pass --model",
            model_path.display()
        )));
    }
    let baseline = model::load_model(model_path)?;
    let (train, test) = load_data(&cfg.data, seed)?;
    let hp = cfg.train.hyperparams();
    let outcome = admm::run_pruning(&baseline, &train, &test, &hp, seed)?;

    model::save_model(&outcome.model, &out.join("pruned.json"))?;
    let mut f = BufWriter::new(File::create(out.join("kernels.spk"))?);
    sparse::write_kernel_file(&mut f, &outcome.kernels)?;
    f.flush()?;
    std::fs::write(out.join("prune-log.csv"), admm::log_to_csv(&outcome.log))?;

    #[derive(Serialize)]
    struct Summary {
        alpha: f64,
        nnz_per_map: usize,
        baseline_accuracy: f64,
        pruned_accuracy: f64,
        retrained_accuracy: f64,
    }
    write_json(
        &out.join("prune-summary.json"),
        &Summary {
            alpha: hp.alpha,
            nnz_per_map: outcome.kernels[0].k,
            baseline_accuracy: outcome.baseline_accuracy,
            pruned_accuracy: outcome.pruned_accuracy,
            retrained_accuracy: outcome.retrained_accuracy,
        },
    )?;
    println!(
        "pruned to {} non-zeros per {}x{} map (alpha = {}): accuracy {:.3} -> {:.3} -> {:.3} after retraining",
        outcome.kernels[0].k,
        cfg.train.n,
        cfg.train.n,
        hp.alpha,
        outcome.baseline_accuracy,
        outcome.pruned_accuracy,
        outcome.retrained_accuracy
    );
    println!("wrote {}", out.join("kernels.spk").display());
    Ok(())
}

fn analytic_cycles(stats: &sparse::GroupScheduleStats, k: usize, b: usize, p_b: usize) -> u64 {
    let rows: f64 = stats.lambdas.iter().map(|l| l * k as f64).sum();
    (b as u64).div_ceil(p_b as u64) * rows.round() as u64
}

fn cmd_simulate(cfg: &AppConfig, seed: u64, out: &Path, kernels: Option<&Path>) -> Result<()> {
    let sc = &cfg.sim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // the layer replayed in full
    let set = match kernels {
        Some(p) => {
            let mut r = BufReader::new(File::open(p)?);
            let layers = sparse::read_kernel_file(&mut r)?;
            layers
                .into_iter()
                .next()
                .ok_or_else(|| Error::Format("kernel file holds no layers".into()))?
        }
        None => {
            let k = sparse::nnz_per_map(cfg.train.n, cfg.train.alpha);
            random_kernel_set(sc.c_out, sc.c_in, cfg.train.n, k, &mut rng)
        }
    };
    set.validate()?;
    let layer = ConvLayerSpec::new(set.c_in, set.c_out, 5, 1, 2, set.n)?;
    let h = cfg.data.image_size;
    let x = ndarray::Array4::from_shape_fn((sc.batch, set.c_in, h, h), |_| {
        rng.gen_range(-1.0..1.0)
    });
    let sim_cfg = SimConfig { p_b: sc.p_b, p_o: sc.p_o, r: sc.r, c: sc.p_o, n: set.n, b: sc.batch };
    let (report, _) = sim::simulate_layer(&set, &x.view(), &layer, &sim_cfg)?;
    write_json(&out.join("sim-report.json"), &report)?;
    println!(
        "replayed layer ({}x{} maps, k = {}): {} cycles, {} useful MACs, utilization {:.3}",
        set.c_out, set.c_in, set.k, report.cycles, report.useful_macs, report.utilization
    );

    // utilization sweep over (P_o, R, alpha) on matched random kernels
    let mut csv = String::from("p_o,r,alpha,utilization,cycles\n");
    for &alpha in &sc.alphas {
        let k = sparse::nnz_per_map(cfg.train.n, alpha);
        if k == 0 {
            continue;
        }
        let sample = if (alpha - cfg.train.alpha).abs() < 1e-12 && kernels.is_some() {
            set.clone()
        } else {
            random_kernel_set(sc.c_out, sc.c_in, cfg.train.n, k, &mut rng)
        };
        for &p_o in &sc.p_o_sweep {
            for &r in &sc.r_sweep {
                if r > p_o {
                    continue;
                }
                let stats = sparse::lambda_stats(&sample, p_o, r)?;
                let cycles = analytic_cycles(&stats, k, sc.batch, sc.p_b);
                csv.push_str(&format!(
                    "{p_o},{r},{alpha},{:.6},{cycles}\n",
                    stats.utilization()
                ));
            }
        }
    }
    std::fs::write(out.join("sweep.csv"), &csv)?;
    println!("wrote {}", out.join("sweep.csv").display());
    Ok(())
}

fn cmd_explore(cfg: &AppConfig, seed: u64, out: &Path) -> Result<()> {
    let ec = &cfg.explore;
    let plat = cfg.platform.to_spec();
    let wl = WorkloadSpec::vgg16(ec.n, ec.alpha);
    let k = wl.nnz_per_map();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // measure lambda on a random kernel sample per candidate P_o
    let mut entries = Vec::new();
    for &p_o in &ec.p_o_options {
        let sample = random_kernel_set(p_o, ec.sample_c_in, ec.n, k, &mut rng);
        for &r in &ec.r_options {
            if r > p_o {
                continue;
            }
            let stats = sparse::lambda_stats(&sample, p_o, r)?;
            entries.push((p_o, r, stats.lambda_bar));
        }
    }
    let table = LambdaTable { entries };
    let (best, frontier) = dse::explore(&plat, &wl, &table, &ec.p_b_options)?;

    let mut csv = String::from("p_b,p_o,r,lambda_bar,utilization,t_sys,fps,s_bw_req,dsp_used,bram_used,feasible\n");
    for d in &frontier {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6e},{:.3},{:.6},{},{},{}\n",
            d.p_b,
            d.p_o,
            d.r,
            d.lambda_bar,
            1.0 / d.lambda_bar,
            d.t_sys,
            d.fps,
            d.s_bw_req,
            d.dsp_used,
            d.bram_used,
            d.feasible
        ));
    }
    std::fs::write(out.join("frontier.csv"), &csv)?;
    write_json(&out.join("optimum.json"), &best)?;
    println!(
        "optimum: P_b = {}, P_o = {}, R = {} -> {:.3e} ops/s ({:.1} frames/s, utilization {:.3})",
        best.p_b,
        best.p_o,
        best.r,
        best.t_sys,
        best.fps,
        1.0 / best.lambda_bar
    );
    println!("wrote {}", out.join("frontier.csv").display());
    Ok(())
}

/// Dual-route consistency checks, each comparing an implementation against an
/// independent reference. Returns the number of failed checks.
fn cmd_verify(cfg: &AppConfig, seed: u64) -> Result<usize> {
    use spectral_sparse::spectral;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("{} {}", if ok { "PASS" } else { "FAIL" }, name);
        if !ok {
            failures += 1;
        }
    };

    // 1. spectral convolution vs. the spatial sliding-window reference
    let layer = ConvLayerSpec::new(3, 4, 5, 1, 2, cfg.train.n)?;
    let x = ndarray::Array4::from_shape_fn((2, 3, cfg.data.image_size, cfg.data.image_size), |_| {
        rng.gen_range(-1.0..1.0)
    });
    let w = ndarray::Array4::from_shape_fn((4, 3, 5, 5), |_| rng.gen_range(-1.0..1.0));
    let w_spec = spectral::to_spectral_kernels(&w.view(), layer.n)?;
    let fast = spectral::spectral_conv(&x.view(), &w_spec.view(), &layer)?;
    let slow = spectral::spatial_conv_oracle(&x.view(), &w.view(), 1, 2)?;
    let err = fast
        .iter()
        .zip(slow.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    check("spectral convolution matches spatial oracle", err < 1e-9);

    // 2. replayed simulator vs. dense masked Hadamard reference
    let k = sparse::nnz_per_map(cfg.train.n, cfg.train.alpha);
    let set = random_kernel_set(6, 3, cfg.train.n, k, &mut rng);
    let sim_cfg = SimConfig { p_b: 2, p_o: 4, r: 2, c: 4, n: set.n, b: 2 };
    let (report, y_sim) = sim::simulate_layer(&set, &x.view(), &ConvLayerSpec::new(3, 6, 5, 1, 2, set.n)?, &sim_cfg)?;
    let mut dense = ndarray::Array4::<Complex64>::zeros((6, 3, set.n, set.n));
    for j in 0..6 {
        for i in 0..3 {
            dense
                .slice_mut(ndarray::s![j, i, .., ..])
                .assign(&set.map(j, i).to_dense(set.n));
        }
    }
    let y_ref = spectral::spectral_conv(
        &x.view(),
        &dense.view(),
        &ConvLayerSpec::new(3, 6, 5, 1, 2, set.n)?,
    )?;
    let err = y_sim
        .iter()
        .zip(y_ref.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    check("simulator output matches dense spectral reference", err < 1e-9);

    // 3. simulator cycle count vs. analytic schedule statistics
    let stats = sparse::lambda_stats(&set, sim_cfg.p_o, sim_cfg.r)?;
    let expected = analytic_cycles(&stats, k, sim_cfg.b, sim_cfg.p_b)
        * (spectral::ConvLayerSpec::new(3, 6, 5, 1, 2, set.n)?
            .tiles_per_dim(cfg.data.image_size) as u64)
            .pow(2);
    check("simulator cycles match analytic schedule", report.cycles == expected);

    // 4. scheduler overhead vs. brute-force row enumeration
    let tables = sim::schedule_kernel_set(&set, 4, 2)?;
    let mut rows_enum = 0usize;
    for group in 0..2 {
        for i in 0..3 {
            for s in 0..k {
                let mut addrs: Vec<u32> = (0..4)
                    .map(|lane| {
                        let j = (group * 4 + lane).min(5);
                        set.map(j, i).indices[s]
                    })
                    .collect();
                addrs.sort_unstable();
                addrs.dedup();
                rows_enum += addrs.len().div_ceil(2);
            }
        }
    }
    let rows_sched: usize = tables.iter().flatten().map(|t| t.rows).sum();
    check("scheduler row count matches enumeration", rows_sched == rows_enum);

    // 5. gradients vs. central finite differences
    let m = ToyModel::new_random(cfg.data.image_size, cfg.train.n, seed)?;
    let ds = dataset::synthetic(4, cfg.data.image_size, seed);
    let (_, cache) = model::forward_loss(&m, &ds.images.view(), &ds.labels)?;
    let grads = model::backward(&m, &ds.labels, &cache)?;
    let h = 1e-4;
    let mut ok = true;
    for trial in 0..5 {
        let j = trial % model::NUM_CLASSES;
        let f = rng.gen_range(0..m.dense_w.dim().1);
        let mut mp = m.clone();
        mp.dense_w[[j, f]] += h;
        let (lp, _) = model::forward_loss(&mp, &ds.images.view(), &ds.labels)?;
        mp.dense_w[[j, f]] -= 2.0 * h;
        let (lm, _) = model::forward_loss(&mp, &ds.images.view(), &ds.labels)?;
        let fd = (lp - lm) / (2.0 * h);
        let an = grads.dense_w[[j, f]];
        if (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) > 1e-4 {
            ok = false;
        }
    }
    check("analytic gradients match finite differences", ok);

    // 6. throughput model vs. direct formula evaluation
    let plat = cfg.platform.to_spec();
    let t = dse::t_sys(10, 64, 1.0 / 0.99, 1.0, &plat)?;
    let by_hand = 0.99 * 64.0 * 10.0 * 2.0 * plat.f_hz;
    check("throughput model matches hand evaluation", (t - by_hand).abs() / t < 1e-12);

    Ok(failures)
}

fn run(cli: &Cli) -> Result<usize> {
    let cfg = load_config(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out)?;

    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    snapshot_config(&cfg, cli.seed, &cli.out)?;
    match &cli.command {
        Command::TrainBaseline => cmd_train_baseline(&cfg, cli.seed, &cli.out).map(|_| 0),
        Command::Prune { model } => {
            cmd_prune(&cfg, cli.seed, &cli.out, model.as_deref()).map(|_| 0)
        }
        Command::Simulate { kernels } => {
            cmd_simulate(&cfg, cli.seed, &cli.out, kernels.as_deref()).map(|_| 0)
        }
        Command::Explore => cmd_explore(&cfg, cli.seed, &cli.out).map(|_| 0),
        Command::Verify => cmd_verify(&cfg, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} verification check(s) failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
