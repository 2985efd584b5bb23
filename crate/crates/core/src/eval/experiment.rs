//! Dataset construction, model training and the evaluation grid.

use std::path::Path;
use std::time::Instant;

use crate::daware::{train_daware, DawareCurves, DegradationAwareModels, DegradationPair};
use crate::degradation::{synth_dataset, PairedDataset};
use crate::diffusion::{to_model_range, train_eps_model, EpsModel};
use crate::guidance::{restore, train_kernel_estimator, GuidanceConfig, GuidanceMode, KernelEstimator, Models};
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::archive::TensorArchive;
use super::config::{streams, CellSpec, ExperimentConfig};
use super::dataset::dataset_from_archive;
use super::metrics::{psnr, ssim};
use super::pnm::export_image;
use super::report::{CellKey, ExperimentReport, ReportRow};

pub fn preset_cells(name: &str) -> Result<Vec<CellSpec>> {
    let cell = |mode, alpha, perturb| CellSpec { mode, alpha, perturb };
    use GuidanceMode::*;
    Ok(match name {
        "perturbation" => vec![
            cell(Implicit, 0.3, true),
            cell(Implicit, 0.3, false),
            cell(Implicit, 1.0, true),
            cell(Implicit, 1.0, false),
        ],
        "alpha" => [0.1, 0.3, 0.5, 1.0].into_iter().map(|a| cell(Implicit, a, true)).collect(),
        "design" => vec![cell(Implicit, 0.3, true), cell(Combine, 0.3, true), cell(Explicit, 1.0, false)],
        "baselines" => vec![cell(DdnmDefault, 1.0, false)],
        other => return Err(Error::Config(format!("unknown preset grid {other}"))),
    })
}

/// Preset cells followed by explicit cells, without duplicates.
pub fn resolve_cells(cfg: &ExperimentConfig) -> Result<Vec<CellSpec>> {
    let mut out: Vec<CellSpec> = Vec::new();
    for name in &cfg.evaluate.presets {
        for c in preset_cells(name)? {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    for c in &cfg.evaluate.cells {
        if !out.contains(c) {
            out.push(c.clone());
        }
    }
    Ok(out)
}

/// Training pairs `0..train_pairs` and held-out pairs after them, all from
/// one seeded stream family.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<(PairedDataset, PairedDataset)> {
    let d = &cfg.data;
    let all = synth_dataset(cfg.seed()?, d.train_pairs + d.test_pairs, d.scale, cfg.hr_dims())?;
    Ok((all.slice(0, d.train_pairs), all.slice(d.train_pairs, d.train_pairs + d.test_pairs)))
}

/// The dataset archive at `paths.dataset` split into training pairs and the
/// trailing `test_pairs` held-out pairs, or a freshly synthesised pair of sets.
pub fn load_or_build_datasets(cfg: &ExperimentConfig) -> Result<(PairedDataset, PairedDataset)> {
    let Some(p) = &cfg.paths.dataset else {
        return build_datasets(cfg);
    };
    let ds = dataset_from_archive(&load_archive(p)?)?;
    let n = ds.len();
    if n <= cfg.data.test_pairs {
        return Err(Error::Config(format!("dataset {} has {n} pairs, need more than test_pairs", p.display())));
    }
    Ok((ds.slice(0, n - cfg.data.test_pairs), ds.slice(n - cfg.data.test_pairs, n)))
}

pub struct TrainedModels {
    pub eps: EpsModel,
    pub daware: DegradationAwareModels,
    pub estimator: KernelEstimator,
}

impl TrainedModels {
    pub fn as_models(&self) -> Models<'_> {
        Models { eps: &self.eps, daware: Some(&self.daware), estimator: Some(&self.estimator) }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainingCurves {
    pub eps: Vec<f64>,
    pub daware: DawareCurves,
    pub estimator: Vec<f64>,
}

pub fn train_eps(cfg: &ExperimentConfig, train: &PairedDataset) -> Result<(EpsModel, Vec<f64>)> {
    let seed = cfg.seed()?;
    let s = &cfg.diffusion;
    let mut init = crate::rng::stream(seed, streams::EPS_INIT);
    let mut eps = EpsModel::new(s.net.clone(), s.timesteps, s.beta_start, s.beta_end, cfg.hr_dims(), &mut init)?;
    let images: Vec<Tensor<f32>> = train.hr.iter().map(to_model_range).collect();
    let curve = train_eps_model(&mut eps, &images, &s.train, derive_seed(seed, streams::EPS_TRAIN))?;
    Ok((eps, curve))
}

pub fn train_daware_models(cfg: &ExperimentConfig, train: &PairedDataset) -> Result<(DegradationAwareModels, DawareCurves)> {
    let seed = cfg.seed()?;
    let mut init = crate::rng::stream(seed, streams::DAWARE_INIT);
    let mut m = DegradationAwareModels::new(cfg.daware.net.clone(), &mut init)?;
    let curves = train_daware(&mut m, &train.hr, &train.lr, &cfg.daware.train, derive_seed(seed, streams::DAWARE_TRAIN))?;
    Ok((m, curves))
}

pub fn train_estimator(cfg: &ExperimentConfig, train: &PairedDataset) -> Result<(KernelEstimator, Vec<f64>)> {
    let seed = cfg.seed()?;
    let mut init = crate::rng::stream(seed, streams::ESTIMATOR_INIT);
    let mut est = KernelEstimator::new(cfg.estimator.net.clone(), cfg.lr_dims(), &mut init)?;
    let curve = train_kernel_estimator(&mut est, train, &cfg.estimator.train, derive_seed(seed, streams::ESTIMATOR_TRAIN))?;
    Ok((est, curve))
}

pub fn train_all(cfg: &ExperimentConfig, train: &PairedDataset) -> Result<(TrainedModels, TrainingCurves)> {
    cfg.validate()?;
    let (eps, c_eps) = train_eps(cfg, train)?;
    let (daware, c_d) = train_daware_models(cfg, train)?;
    let (estimator, c_k) = train_estimator(cfg, train)?;
    Ok((TrainedModels { eps, daware, estimator }, TrainingCurves { eps: c_eps, daware: c_d, estimator: c_k }))
}

/// Sampling seed of test image `id`; shared by every cell so that cells differ
/// only in their guidance.
pub fn image_seed(master: u64, id: usize) -> u64 {
    derive_seed(derive_seed(master, streams::SAMPLING), id as u64)
}

/// One restored test image.
#[derive(Clone, Debug)]
pub struct Restored {
    pub cell: CellKey,
    pub id: usize,
    pub image: Option<Tensor<f32>>,
}

/// Run every cell over the held-out set. A batch that fails with a
/// non-finite value is retried image by image; images that still fail are
/// reported with NaN metrics.
pub fn evaluate_cells(
    cfg: &ExperimentConfig,
    models: &Models<'_>,
    test: &PairedDataset,
    cells: &[CellSpec],
) -> Result<(ExperimentReport, Vec<Restored>)> {
    let master = cfg.seed()?;
    let mut rows = Vec::new();
    let mut restored = Vec::new();
    for cell in cells {
        let gcfg = GuidanceConfig {
            mode: cell.mode,
            alpha: cell.alpha,
            perturb: cell.perturb,
            seed: master,
            steps: cfg.sampling.steps,
            scale: cfg.data.scale,
            rep_from_perturbed: cfg.sampling.rep_from_perturbed,
        };
        let key = CellKey { mode: cell.mode.to_string(), alpha: cell.alpha, perturb: cell.perturb };
        let ids: Vec<usize> = (0..test.len()).collect();
        for chunk in ids.chunks(cfg.sampling.batch) {
            let start = Instant::now();
            let outs = match run_chunk(models, test, chunk, &gcfg, master) {
                Ok(imgs) => imgs.into_iter().map(Some).collect(),
                Err(Error::NonFinite { step, context }) => {
                    log::warn!("cell {} batch hit a non-finite value at step {step} ({context}); retrying per image", key.label());
                    chunk
                        .iter()
                        .map(|&id| match run_chunk(models, test, &[id], &gcfg, master) {
                            Ok(mut v) => Ok(Some(v.remove(0))),
                            Err(Error::NonFinite { .. }) => Ok(None),
                            Err(e) => Err(e),
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                Err(e) => return Err(e),
            };
            let ms = if cfg.evaluate.record_timing {
                (start.elapsed().as_secs_f64() * 1e3 / chunk.len() as f64).round() as u64
            } else {
                0
            };
            for (&id, out) in chunk.iter().zip(outs) {
                let (p, s) = match &out {
                    Some(img) => (psnr(img, &test.hr[id], 1.0)?, ssim(img, &test.hr[id])?),
                    None => (f64::NAN, f64::NAN),
                };
                rows.push(ReportRow {
                    id,
                    mode: key.mode.clone(),
                    alpha: key.alpha,
                    perturb: key.perturb,
                    psnr_db: p,
                    ssim: s,
                    seed: image_seed(master, id),
                    ms,
                });
                restored.push(Restored { cell: key.clone(), id, image: out });
            }
        }
        log::info!("evaluated cell {}", key.label());
    }
    Ok((ExperimentReport::from_rows(rows), restored))
}

fn run_chunk(models: &Models<'_>, test: &PairedDataset, ids: &[usize], cfg: &GuidanceConfig, master: u64) -> Result<Vec<Tensor<f32>>> {
    let ys = Tensor::stack(&ids.iter().map(|&i| test.lr[i].clone()).collect::<Vec<_>>())?;
    let seeds: Vec<u64> = ids.iter().map(|&i| image_seed(master, i)).collect();
    Ok(restore(models, &ys, cfg, &seeds)?.images)
}

fn require_path<'a>(p: &'a Option<std::path::PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("paths.{what} is not set")))
}

pub fn load_archive(path: &Path) -> Result<TensorArchive> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        });
    }
    Ok(TensorArchive::load(path)?)
}

/// Evaluate the configured grid from saved checkpoints, writing `report.csv`,
/// `report.json` and optionally PGM images into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cells = resolve_cells(cfg)?;
    let needs = |m: GuidanceMode| cells.iter().any(|c| c.mode == m);
    let eps = EpsModel::from_archive(&load_archive(require_path(&cfg.paths.eps, "eps")?)?)?;
    let daware = if needs(GuidanceMode::Implicit) || needs(GuidanceMode::Combine) {
        Some(DegradationAwareModels::from_archive(&load_archive(require_path(&cfg.paths.daware, "daware")?)?)?)
    } else {
        None
    };
    let estimator = if needs(GuidanceMode::Explicit) || needs(GuidanceMode::Combine) {
        Some(KernelEstimator::from_archive(&load_archive(require_path(&cfg.paths.estimator, "estimator")?)?)?)
    } else {
        None
    };
    let (_, test) = load_or_build_datasets(cfg)?;
    let models = Models {
        eps: &eps,
        daware: daware.as_ref().map(|d| d as &dyn DegradationPair),
        estimator: estimator.as_ref(),
    };
    let (report, restored) = evaluate_cells(cfg, &models, &test, &cells)?;
    if let Some(dir) = &cfg.evaluate.output_dir {
        write_outputs(dir, &report, cfg.evaluate.save_images.then_some(restored.as_slice()))?;
    }
    Ok(report)
}

pub fn write_outputs(dir: &Path, report: &ExperimentReport, images: Option<&[Restored]>) -> Result<()> {
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |source| Error::Io { path: p, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv = dir.join("report.csv");
    std::fs::write(&csv, report.to_csv()).map_err(io(&csv))?;
    let json = dir.join("report.json");
    std::fs::write(&json, report.to_json()).map_err(io(&json))?;
    if let Some(images) = images {
        let img_dir = dir.join("images");
        std::fs::create_dir_all(&img_dir).map_err(io(&img_dir))?;
        for r in images {
            if let Some(img) = &r.image {
                export_image(img, &img_dir.join(format!("{}_{:03}.pgm", r.cell.label(), r.id)))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_mirror_the_ablation_layouts() {
        let p = preset_cells("perturbation").unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.iter().map(|c| (c.alpha, c.perturb)).collect::<Vec<_>>(), vec![(0.3, true), (0.3, false), (1.0, true), (1.0, false)]);
        let a = preset_cells("alpha").unwrap();
        assert_eq!(a.iter().map(|c| c.alpha).collect::<Vec<_>>(), vec![0.1, 0.3, 0.5, 1.0]);
        assert!(preset_cells("nope").is_err());
    }

    #[test]
    fn resolve_deduplicates() {
        let mut cfg = ExperimentConfig::default();
        cfg.evaluate.presets = vec!["perturbation".into(), "alpha".into(), "design".into()];
        let cells = resolve_cells(&cfg).unwrap();
        assert_eq!(cells.len(), 4 + 2 + 2);
    }

    #[test]
    fn image_seeds_are_shared_across_cells_and_distinct_across_images() {
        assert_eq!(image_seed(5, 3), image_seed(5, 3));
        assert_ne!(image_seed(5, 3), image_seed(5, 4));
    }
}
