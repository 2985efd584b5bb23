use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dadiff_core::degradation::synth_dataset;
use dadiff_core::diffusion::EpsModel;
use dadiff_core::daware::{DegradationAwareModels, DegradationPair};
use dadiff_core::eval::config::ExperimentConfig;
use dadiff_core::eval::dataset::dataset_to_archive;
use dadiff_core::eval::experiment::{
    load_archive, load_or_build_datasets, run_experiment, train_daware_models, train_eps, train_estimator,
};
use dadiff_core::eval::metrics::{psnr, ssim};
use dadiff_core::eval::pnm::{export_image, import_image};
use dadiff_core::guidance::{restore, GuidanceConfig, GuidanceMode, KernelEstimator, Models};
use dadiff_core::{selftest, Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "dadiff", version, about = "Degradation-guided diffusion super-resolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; flags override its keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    /// Dataset archive written by `synth`.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct Checkpoints {
    #[arg(long)]
    eps: Option<PathBuf>,
    #[arg(long)]
    daware: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired HR/LR dataset archive.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_pairs: Option<usize>,
        #[arg(long)]
        test_pairs: Option<usize>,
        #[arg(long)]
        scale: Option<usize>,
        #[arg(long)]
        hr_size: Option<usize>,
    },
    /// Train the noise-prediction network on HR images.
    TrainDiffusion(TrainArgs),
    /// Train the degradation-aware encoder and G_d / G_r pair.
    TrainDaware {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        consistency_weight: Option<f64>,
    },
    /// Train the blur-kernel estimator.
    TrainKernel(TrainArgs),
    /// Restore one LR image.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: Checkpoints,
        #[arg(long)]
        mode: Option<GuidanceMode>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        perturb: Option<bool>,
        #[arg(long)]
        steps: Option<usize>,
        /// LR input as PGM/PPM; otherwise `--index` selects a held-out pair.
        #[arg(long, conflicts_with = "index")]
        input: Option<PathBuf>,
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the configured grid of (mode, alpha, perturbation) cells.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: Checkpoints,
        /// Preset grids; replaces the config list when given.
        #[arg(long = "preset")]
        presets: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        save_images: bool,
        #[arg(long)]
        record_timing: bool,
    },
    /// Run the built-in numerical self checks.
    Selftest {
        #[arg(long)]
        seed: u64,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = Some(common.seed);
    if let Some(d) = &common.dataset {
        cfg.paths.dataset = Some(d.clone());
    }
    Ok(cfg)
}

fn apply_checkpoints(cfg: &mut ExperimentConfig, c: &Checkpoints) {
    for (slot, v) in [(&mut cfg.paths.eps, &c.eps), (&mut cfg.paths.daware, &c.daware), (&mut cfg.paths.estimator, &c.estimator)] {
        if v.is_some() {
            slot.clone_from(v);
        }
    }
}

fn output_path(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| Error::Config(format!("no output path for the {what} checkpoint (--out or paths.{what})")))
}

fn report_curve(name: &str, curve: &[f64]) {
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!("{name}: loss {first:.5} -> {last:.5} over {} logged points", curve.len());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out, train_pairs, test_pairs, scale, hr_size } => {
            let mut cfg = load_config(&common)?;
            let d = &mut cfg.data;
            d.train_pairs = train_pairs.unwrap_or(d.train_pairs);
            d.test_pairs = test_pairs.unwrap_or(d.test_pairs);
            d.scale = scale.unwrap_or(d.scale);
            d.hr_size = hr_size.unwrap_or(d.hr_size);
            cfg.daware.net.scale = cfg.data.scale;
            cfg.validate()?;
            let ds = synth_dataset(cfg.seed()?, cfg.data.train_pairs + cfg.data.test_pairs, cfg.data.scale, cfg.hr_dims())?;
            dataset_to_archive(&ds)?.save(&out)?;
            println!("wrote {} pairs to {}", ds.len(), out.display());
        }
        Command::TrainDiffusion(a) => {
            let mut cfg = load_config(&a.common)?;
            let t = &mut cfg.diffusion.train;
            t.steps = a.steps.unwrap_or(t.steps);
            t.batch = a.batch.unwrap_or(t.batch);
            t.lr = a.lr.unwrap_or(t.lr);
            cfg.validate()?;
            let out = output_path(&a.out, &cfg.paths.eps, "eps")?;
            let (train, _) = load_or_build_datasets(&cfg)?;
            let (model, curve) = train_eps(&cfg, &train)?;
            report_curve("eps", &curve);
            model.to_archive()?.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::TrainDaware { train: a, consistency_weight } => {
            let mut cfg = load_config(&a.common)?;
            let t = &mut cfg.daware.train;
            t.steps = a.steps.unwrap_or(t.steps);
            t.batch = a.batch.unwrap_or(t.batch);
            t.lr = a.lr.unwrap_or(t.lr);
            t.consistency_weight = consistency_weight.unwrap_or(t.consistency_weight);
            cfg.validate()?;
            let out = output_path(&a.out, &cfg.paths.daware, "daware")?;
            let (train, _) = load_or_build_datasets(&cfg)?;
            let (models, curves) = train_daware_models(&cfg, &train)?;
            report_curve("joint", &curves.total);
            report_curve("degradation", &curves.degradation);
            report_curve("restoration", &curves.restoration);
            report_curve("consistency", &curves.consistency);
            models.to_archive()?.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::TrainKernel(a) => {
            let mut cfg = load_config(&a.common)?;
            let t = &mut cfg.estimator.train;
            t.steps = a.steps.unwrap_or(t.steps);
            t.batch = a.batch.unwrap_or(t.batch);
            t.lr = a.lr.unwrap_or(t.lr);
            cfg.validate()?;
            let out = output_path(&a.out, &cfg.paths.estimator, "estimator")?;
            let (train, _) = load_or_build_datasets(&cfg)?;
            let (est, curve) = train_estimator(&cfg, &train)?;
            report_curve("kernel", &curve);
            est.to_archive()?.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Sample { common, ckpt, mode, alpha, perturb, steps, input, index, out } => {
            let mut cfg = load_config(&common)?;
            apply_checkpoints(&mut cfg, &ckpt);
            let s = &cfg.sampling;
            let defaults = GuidanceConfig::default();
            let gcfg = GuidanceConfig {
                mode: mode.unwrap_or(defaults.mode),
                alpha: alpha.unwrap_or(defaults.alpha),
                perturb: perturb.unwrap_or(defaults.perturb),
                seed: cfg.seed()?,
                steps: steps.unwrap_or(s.steps),
                scale: cfg.data.scale,
                rep_from_perturbed: s.rep_from_perturbed,
            };
            sample_one(&cfg, &gcfg, input.as_deref(), index, &out)?;
        }
        Command::Evaluate { common, ckpt, presets, out_dir, steps, save_images, record_timing } => {
            let mut cfg = load_config(&common)?;
            apply_checkpoints(&mut cfg, &ckpt);
            if !presets.is_empty() {
                cfg.evaluate.presets = presets;
            }
            if out_dir.is_some() {
                cfg.evaluate.output_dir = out_dir;
            }
            cfg.sampling.steps = steps.unwrap_or(cfg.sampling.steps);
            cfg.evaluate.save_images |= save_images;
            cfg.evaluate.record_timing |= record_timing;
            let report = run_experiment(&cfg)?;
            print!("{}", report.summary());
        }
        Command::Selftest { seed } => {
            let results = selftest::run(seed);
            let failed = results.iter().filter(|r| !r.passed).count();
            for r in &results {
                println!("[{}] {} {}", if r.passed { "pass" } else { "FAIL" }, r.name, r.detail);
            }
            if failed > 0 {
                return Err(Error::Invalid(format!("{failed} self checks failed")));
            }
        }
    }
    Ok(())
}

fn load_eps(cfg: &ExperimentConfig) -> Result<EpsModel> {
    let p = cfg.paths.eps.as_deref().ok_or_else(|| Error::Config("an eps checkpoint is required (--eps)".into()))?;
    EpsModel::from_archive(&load_archive(p)?)
}

fn sample_one(cfg: &ExperimentConfig, gcfg: &GuidanceConfig, input: Option<&Path>, index: Option<usize>, out: &Path) -> Result<()> {
    let eps = load_eps(cfg)?;
    let daware = match (&cfg.paths.daware, gcfg.mode) {
        (Some(p), _) => Some(DegradationAwareModels::from_archive(&load_archive(p)?)?),
        (None, GuidanceMode::Implicit | GuidanceMode::Combine) => {
            return Err(Error::Config(format!("mode {} needs --daware", gcfg.mode)));
        }
        _ => None,
    };
    let estimator = match (&cfg.paths.estimator, gcfg.mode) {
        (Some(p), _) => Some(KernelEstimator::from_archive(&load_archive(p)?)?),
        (None, GuidanceMode::Explicit | GuidanceMode::Combine) => {
            return Err(Error::Config(format!("mode {} needs --estimator", gcfg.mode)));
        }
        _ => None,
    };
    let (y, reference) = match input {
        Some(p) => (import_image(p)?, None),
        None => {
            let (_, test) = load_or_build_datasets(cfg)?;
            let i = index.unwrap_or(0);
            if i >= test.len() {
                return Err(Error::Config(format!("index {i} outside the {} held-out pairs", test.len())));
            }
            (test.lr[i].clone(), Some(test.hr[i].clone()))
        }
    };
    let models = Models {
        eps: &eps,
        daware: daware.as_ref().map(|d| d as &dyn DegradationPair),
        estimator: estimator.as_ref(),
    };
    let ys = Tensor::stack(&[y])?;
    let img = restore(&models, &ys, gcfg, &[gcfg.seed])?.images.remove(0);
    export_image(&img, out)?;
    if let Some(hr) = reference {
        println!("psnr {:.3} dB, ssim {:.4}", psnr(&img, &hr, 1.0)?, ssim(&img, &hr)?);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
