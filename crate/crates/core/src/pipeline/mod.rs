//! The end-to-end workflow as a sequence of resumable steps over a run
//! directory:
//!
//! `synth → tile → folds → pretrain → train <stage> → predict <stage> →
//! aggregate <stage> → evaluate <stage> → report`
//!
//! Each step checks that its upstream steps ran with the same configuration
//! (via their provenance records), writes its artifacts, and records what it
//! produced.

mod config;
mod layout;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    predict_slides, save_forest, slide_histogram_features, train_slide_forest,
    write_slide_predictions, SlideFeatureMatrix,
};
use crate::error::{Error, Result};
use crate::folds::{assign_patient_folds, load_plans, make_run_plans, save_plans, RunPlan};
use crate::net::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::seed::{derive_seed, mix_seed};
use crate::trainer::{
    predict_patches, pretrain_backbone, read_predictions, train_baseline, train_stage1,
    train_stage2, write_predictions, BaselineKind, PatchSet, StageOutput,
};
use crate::wsi::{
    generate_proxy_slide, generate_synthetic_slide, read_manifest, read_pgm, tile_slide,
    write_manifest, write_pgm, AnnotationPolygon, SlideImage, SlideManifest, PROXY_CLASSES,
};

pub use config::{
    ExperimentConfig, ForestConfig, GeneratorConfig, NetworkConfig, PathsConfig, PipelineConfig,
    SeedsConfig, StageSettings, TrainSection, CLASSIFIERS, DESK_CONFIG,
};
pub use layout::{combined_digest, file_digest, Provenance, RunLayout};
pub use report::{evaluate_stage, write_report, StageEvaluation};

/// One generated slide as listed in `manifests/slides.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideEntry {
    pub slide_id: String,
    pub patient_id: String,
    pub class_label: usize,
    /// Proxy-task slide (pretraining only).
    pub proxy: bool,
    pub seed: u64,
    /// Paths relative to the data directory.
    pub image: String,
    pub polygon: String,
}

/// A configured pipeline bound to a run directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub layout: RunLayout,
    digest: String,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn check_stage_name(stage: &str) -> Result<()> {
    if CLASSIFIERS.contains(&stage) {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "unknown stage `{stage}` (expected one of {CLASSIFIERS:?})"
        )))
    }
}

impl Pipeline {
    /// `run_dir` and `seed` override the config file when given.
    pub fn new(mut cfg: PipelineConfig, run_dir: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            cfg.seeds.master = s;
        }
        cfg.validate()?;
        let run_dir = match (run_dir, &cfg.paths.run_dir) {
            (Some(r), _) => r.to_path_buf(),
            (None, Some(r)) => r.clone(),
            (None, None) => {
                return Err(Error::Usage(
                    "no run directory: pass --run-dir or set paths.run_dir".into(),
                ))
            }
        };
        let layout = RunLayout::new(&run_dir, cfg.paths.data_dir.as_deref());
        let digest = cfg.digest();
        Ok(Pipeline { cfg, layout, digest })
    }

    pub fn config_digest(&self) -> &str {
        &self.digest
    }

    fn master(&self) -> u64 {
        self.cfg.seeds.master
    }

    /// Reads the provenance record of `step`; a missing record means the
    /// step has not run, a different config digest that it ran under
    /// another configuration.
    fn require(&self, step: &str, hint: &str, upstream: &mut BTreeMap<String, String>) -> Result<Provenance> {
        let path = self.layout.provenance_record(step);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                hint: hint.into(),
            });
        }
        let record = Provenance::load(&path)?;
        if record.config_digest != self.digest {
            return Err(Error::StaleArtifact {
                path,
                detail: format!(
                    "produced under config {} but the current config is {}; rerun `prorez {hint}`",
                    &record.config_digest[..12],
                    &self.digest[..12]
                ),
            });
        }
        upstream.insert(step.into(), file_digest(&path)?);
        Ok(record)
    }

    fn record(
        &self,
        step: &str,
        seeds: BTreeMap<String, u64>,
        upstream: BTreeMap<String, String>,
        outputs: &[PathBuf],
    ) -> Result<()> {
        let mut out = BTreeMap::new();
        for p in outputs {
            out.insert(self.layout.display_path(p), file_digest(p)?);
        }
        Provenance {
            step: step.into(),
            config_digest: self.digest.clone(),
            master_seed: self.master(),
            seeds,
            upstream,
            outputs: out,
        }
        .save(&self.layout)?;
        Ok(())
    }

    fn load_manifest(&self, path: &Path, hint: &str) -> Result<SlideManifest> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: hint.into(),
            });
        }
        read_manifest(path)
    }

    fn load_runs(&self) -> Result<Vec<RunPlan>> {
        Ok(load_plans(&self.layout.folds())?.1)
    }

    /// Generates the target and proxy slides and their annotations.
    pub fn synth(&self) -> Result<()> {
        let g = &self.cfg.generator;
        let synth_seed = derive_seed(self.master(), "synth");
        let proxy_seed = derive_seed(self.master(), "proxy");
        let mut jobs: Vec<SlideEntry> = Vec::new();
        for class in 0..crate::wsi::NUM_CLASSES {
            for j in 0..g.patients_per_class {
                let pi = class * g.patients_per_class + j;
                for s in 0..g.slides_per_patient {
                    let slide_id = format!("p{pi:03}-s{s}");
                    jobs.push(SlideEntry {
                        image: format!("slides/{slide_id}.pgm"),
                        polygon: format!("slides/{slide_id}.polygon.json"),
                        seed: mix_seed(synth_seed, (pi * g.slides_per_patient + s) as u64),
                        slide_id,
                        patient_id: format!("p{pi:03}"),
                        class_label: class,
                        proxy: false,
                    });
                }
            }
        }
        for class in 0..PROXY_CLASSES.len() {
            for i in 0..g.proxy_slides_per_class {
                let slide_id = format!("x{class}-{i:02}");
                jobs.push(SlideEntry {
                    image: format!("proxy/{slide_id}.pgm"),
                    polygon: format!("proxy/{slide_id}.polygon.json"),
                    seed: mix_seed(proxy_seed, (class * g.proxy_slides_per_class + i) as u64),
                    patient_id: slide_id.clone(),
                    slide_id,
                    class_label: class,
                    proxy: true,
                });
            }
        }
        let data = &self.layout.data_dir;
        jobs.par_iter()
            .map(|e| {
                let (mut slide, polygon) = if e.proxy {
                    generate_proxy_slide(e.class_label, e.seed, g.slide_side, g.tile)?
                } else {
                    generate_synthetic_slide(e.class_label, e.seed, g.slide_side, g.tile)?
                };
                slide.slide_id = e.slide_id.clone();
                slide.patient_id = e.patient_id.clone();
                write_pgm(&slide.pixels, &data.join(&e.image))?;
                write_json(&polygon, &data.join(&e.polygon))
            })
            .collect::<Result<Vec<()>>>()?;
        let index = self.layout.slides_index();
        write_json(&jobs, &index)?;
        let files: Vec<PathBuf> = jobs
            .iter()
            .flat_map(|e| [data.join(&e.image), data.join(&e.polygon)])
            .collect();
        let mut upstream = BTreeMap::new();
        upstream.insert("slides".into(), combined_digest(&self.layout, &files)?);
        let seeds = BTreeMap::from([("synth".into(), synth_seed), ("proxy".into(), proxy_seed)]);
        self.record("synth", seeds, upstream, &[index])
    }

    /// Tiles every slide into patches at all levels and writes the target
    /// and proxy manifests.
    pub fn tile(&self) -> Result<()> {
        let mut upstream = BTreeMap::new();
        self.require("synth", "synth", &mut upstream)?;
        let entries: Vec<SlideEntry> = read_json(&self.layout.slides_index())?;
        let g = &self.cfg.generator;
        let data = &self.layout.data_dir;
        let proxy_levels = [self.cfg.network.low_level];
        let records = entries
            .par_iter()
            .map(|e| {
                let slide = SlideImage {
                    pixels: read_pgm(&data.join(&e.image))?,
                    slide_id: e.slide_id.clone(),
                    patient_id: e.patient_id.clone(),
                    class_label: e.class_label,
                };
                let polygon: AnnotationPolygon = read_json(&data.join(&e.polygon))?;
                let levels: &[usize] = if e.proxy { &proxy_levels } else { &g.levels };
                let recs = tile_slide(data, &slide, &polygon, g.tile, levels)?;
                if recs.is_empty() {
                    return Err(Error::Validation(format!("slide {} yielded no tiles", e.slide_id)));
                }
                Ok((e.proxy, recs))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut target, mut proxy) = (Vec::new(), Vec::new());
        for (is_proxy, recs) in records {
            if is_proxy {
                proxy.extend(recs);
            } else {
                target.extend(recs);
            }
        }
        let target = SlideManifest::new(target)?;
        let proxy = SlideManifest::new(proxy)?;
        write_manifest(&target, &self.layout.manifest())?;
        write_manifest(&proxy, &self.layout.proxy_manifest())?;
        log::info!("tiled {} target and {} proxy patches", target.len(), proxy.len());
        let patch_files: Vec<PathBuf> = target
            .records()
            .iter()
            .chain(proxy.records())
            .flat_map(|r| r.paths.values().map(|p| data.join(p)))
            .collect();
        upstream.insert("patches".into(), combined_digest(&self.layout, &patch_files)?);
        self.record(
            "tile",
            BTreeMap::new(),
            upstream,
            &[self.layout.manifest(), self.layout.proxy_manifest()],
        )
    }

    /// Patient-grouped fold assignment and the run plans.
    pub fn folds(&self) -> Result<()> {
        let mut upstream = BTreeMap::new();
        self.require("tile", "tile", &mut upstream)?;
        let manifest = self.load_manifest(&self.layout.manifest(), "tile")?;
        let patients: Vec<String> = manifest.patients().into_iter().collect();
        let seed = derive_seed(self.master(), "folds");
        let plan = assign_patient_folds(&patients, self.cfg.experiment.folds, seed)?;
        let runs = make_run_plans(&plan)?;
        save_plans(&plan, &runs, &self.layout.folds())?;
        self.record("folds", BTreeMap::from([("folds".into(), seed)]), upstream, &[self.layout.folds()])
    }

    /// Supervised pretraining of the backbone on the proxy slides.
    pub fn pretrain(&self) -> Result<()> {
        let mut upstream = BTreeMap::new();
        self.require("tile", "tile", &mut upstream)?;
        let proxy = self.load_manifest(&self.layout.proxy_manifest(), "tile")?;
        let level = self.cfg.network.low_level;
        let data = PatchSet::load(&proxy, &self.layout.data_dir, level)?;
        let seed = derive_seed(self.master(), "pretrain");
        let cfg = self.cfg.train.pretrain.to_train_config(level, seed);
        let t = Instant::now();
        let out = pretrain_backbone(&self.cfg.pretrain_spec(), &data, &cfg)?;
        log::info!(
            "pretrain: {} patches, final loss {:.4}, {:.1}s",
            data.len(),
            out.log.epoch_loss.last().copied().unwrap_or(f64::NAN),
            t.elapsed().as_secs_f64()
        );
        let outputs = self.save_stage_output(out, &self.layout.pretrain_checkpoint(), &self.layout.checkpoints().join("pretrain.log.json"))?;
        self.record("pretrain", BTreeMap::from([("pretrain".into(), seed)]), upstream, &outputs)
    }

    fn save_stage_output(&self, mut out: StageOutput, ckpt: &Path, log: &Path) -> Result<Vec<PathBuf>> {
        out.checkpoint.meta.config_digest = self.digest.clone();
        save_checkpoint(&out.checkpoint, ckpt)?;
        write_json(&out.log, log)?;
        Ok(vec![ckpt.to_path_buf(), log.to_path_buf()])
    }

    fn stage_level(&self, stage: &str) -> usize {
        if stage == "stage1" {
            self.cfg.network.low_level
        } else {
            self.cfg.network.high_level
        }
    }

    /// Trains one classifier for every run plan. Runs are independent and
    /// execute in parallel; each has its own derived seed.
    pub fn train(&self, stage: &str) -> Result<()> {
        check_stage_name(stage)?;
        let mut upstream = BTreeMap::new();
        self.require("folds", "folds", &mut upstream)?;
        let pretrained: Option<Checkpoint> = match stage {
            "stage1" => {
                self.require("pretrain", "pretrain", &mut upstream)?;
                Some(load_checkpoint(&self.layout.pretrain_checkpoint())?)
            }
            "stage2" => {
                self.require("train-stage1", "train stage1", &mut upstream)?;
                None
            }
            _ => None,
        };
        let manifest = self.load_manifest(&self.layout.manifest(), "tile")?;
        let level = self.stage_level(stage);
        let data = PatchSet::load(&manifest, &self.layout.data_dir, level)?;
        let runs = self.load_runs()?;
        let settings = self.cfg.stage(stage)?;
        let num_classes = self.cfg.network.num_classes;
        let new_blocks = self.cfg.new_block_specs();
        let backbone = self.cfg.backbone_spec();

        let results = runs
            .par_iter()
            .map(|run| {
                let run_id = run.run_id();
                let seed = derive_seed(self.master(), &format!("{stage}/{run_id}"));
                let cfg = settings.to_train_config(level, seed);
                let t = Instant::now();
                let out = match stage {
                    "stage1" => train_stage1(pretrained.as_ref().expect("loaded"), &data, run, num_classes, &cfg)?,
                    "stage2" => {
                        let s1 = load_checkpoint(&self.layout.checkpoint("stage1", &run_id))?;
                        train_stage2(&s1, &data, &new_blocks, run, &cfg)?
                    }
                    other => {
                        let kind: BaselineKind = other.parse()?;
                        train_baseline(kind, &backbone, &new_blocks, &data, run, &cfg)?
                    }
                };
                log::info!(
                    "{stage} {run_id}: selected epoch {}, val acc {:?}, {:.1}s",
                    out.log.selected_epoch,
                    out.log.val_accuracy.get(out.log.selected_epoch),
                    t.elapsed().as_secs_f64()
                );
                let files = self.save_stage_output(
                    out,
                    &self.layout.checkpoint(stage, &run_id),
                    &self.layout.train_log(stage, &run_id),
                )?;
                Ok((run_id, seed, files))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seeds = BTreeMap::new();
        let mut outputs = Vec::new();
        for (run_id, seed, files) in results {
            seeds.insert(run_id, seed);
            outputs.extend(files);
        }
        self.record(&format!("train-{stage}"), seeds, upstream, &outputs)
    }

    /// Patch predictions of every run's model over the whole manifest.
    pub fn predict(&self, stage: &str) -> Result<()> {
        check_stage_name(stage)?;
        let mut upstream = BTreeMap::new();
        self.require(&format!("train-{stage}"), &format!("train {stage}"), &mut upstream)?;
        let manifest = self.load_manifest(&self.layout.manifest(), "tile")?;
        let data = PatchSet::load(&manifest, &self.layout.data_dir, self.stage_level(stage))?;
        let runs = self.load_runs()?;
        let all: Vec<usize> = (0..data.len()).collect();
        let outputs = runs
            .par_iter()
            .map(|run| {
                let run_id = run.run_id();
                let ckpt = load_checkpoint(&self.layout.checkpoint(stage, &run_id))?;
                let preds = predict_patches(&ckpt.model, &data, &all)?;
                let path = self.layout.patch_predictions(stage, &run_id);
                write_predictions(&preds, &path)?;
                Ok(path)
            })
            .collect::<Result<Vec<_>>>()?;
        self.record(&format!("predict-{stage}"), BTreeMap::new(), upstream, &outputs)
    }

    /// Slide histograms → Z-score → random forest. The forest of each run
    /// is fit on its training and validation slides and labels its test
    /// slides.
    pub fn aggregate(&self, stage: &str) -> Result<()> {
        check_stage_name(stage)?;
        let mut upstream = BTreeMap::new();
        self.require(&format!("predict-{stage}"), &format!("predict {stage}"), &mut upstream)?;
        let manifest = self.load_manifest(&self.layout.manifest(), "tile")?;
        let slides = manifest.slides();
        let labels: BTreeMap<String, usize> = slides.iter().map(|(s, (_, c))| (s.clone(), *c)).collect();
        let runs = self.load_runs()?;
        let c = self.cfg.network.num_classes;
        let results = runs
            .par_iter()
            .map(|run| {
                let run_id = run.run_id();
                let preds = read_predictions(&self.layout.patch_predictions(stage, &run_id))?;
                let m = slide_histogram_features(&preds, &labels, c)?;
                let pick = |keep: &dyn Fn(&str) -> bool| -> SlideFeatureMatrix {
                    let idx: Vec<usize> = (0..m.len()).filter(|&i| keep(&slides[&m.slide_ids[i]].0)).collect();
                    SlideFeatureMatrix {
                        slide_ids: idx.iter().map(|&i| m.slide_ids[i].clone()).collect(),
                        features: idx.iter().map(|&i| m.features[i].clone()).collect(),
                        labels: idx.iter().map(|&i| m.labels[i]).collect(),
                    }
                };
                let fit_rows = pick(&|p| run.train_patients.contains(p) || run.val_patients.contains(p));
                let test_rows = pick(&|p| run.test_patients.contains(p));
                let seed = derive_seed(self.master(), &format!("forest/{stage}/{run_id}"));
                let forest = train_slide_forest(&fit_rows, c, self.cfg.forest_params(seed))?;
                let out = predict_slides(&forest, &test_rows)?;
                let fpath = self.layout.forest(stage, &run_id);
                let ppath = self.layout.slide_predictions(stage, &run_id);
                save_forest(&forest, &fpath)?;
                write_slide_predictions(&out, &ppath)?;
                Ok((run_id, seed, [fpath, ppath]))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seeds = BTreeMap::new();
        let mut outputs = Vec::new();
        for (run_id, seed, files) in results {
            seeds.insert(run_id, seed);
            outputs.extend(files);
        }
        self.record(&format!("aggregate-{stage}"), seeds, upstream, &outputs)
    }

    /// Patch- and slide-level metrics on every run's test set, per run, as
    /// the mean over runs and pooled over all test sets.
    pub fn evaluate(&self, stage: &str) -> Result<()> {
        check_stage_name(stage)?;
        let mut upstream = BTreeMap::new();
        self.require(&format!("aggregate-{stage}"), &format!("aggregate {stage}"), &mut upstream)?;
        let manifest = self.load_manifest(&self.layout.manifest(), "tile")?;
        let runs = self.load_runs()?;
        let outputs = evaluate_stage(&self.layout, stage, &manifest, &runs, self.cfg.network.num_classes)?.files;
        self.record(&format!("evaluate-{stage}"), BTreeMap::new(), upstream, &outputs)
    }

    /// Table of the evaluated classifiers (missing ones are marked) and ROC
    /// point files.
    pub fn report(&self) -> Result<()> {
        let mut upstream = BTreeMap::new();
        let mut present = Vec::new();
        for stage in CLASSIFIERS {
            let step = format!("evaluate-{stage}");
            if self.layout.provenance_record(&step).exists() {
                self.require(&step, &format!("evaluate {stage}"), &mut upstream)?;
                present.push(stage);
            }
        }
        if present.is_empty() {
            return Err(Error::MissingArtifact {
                path: self.layout.provenance_record("evaluate-stage2"),
                hint: "evaluate <stage>".into(),
            });
        }
        let outputs = write_report(&self.layout, &present, self.cfg.network.num_classes)?;
        self.record("report", BTreeMap::new(), upstream, &outputs)
    }

    /// Configured classifiers whose training step has a provenance record,
    /// in table order.
    pub fn trained_stages(&self) -> Vec<&'static str> {
        CLASSIFIERS
            .iter()
            .copied()
            .filter(|c| self.cfg.experiment.classifiers.iter().any(|x| x == c))
            .filter(|c| self.layout.provenance_record(&format!("train-{c}")).exists())
            .collect()
    }

    /// Every step in order for the configured classifiers.
    pub fn run_all(&self) -> Result<()> {
        let t = Instant::now();
        self.synth()?;
        self.tile()?;
        self.folds()?;
        let classifiers: Vec<&str> = CLASSIFIERS
            .iter()
            .copied()
            .filter(|c| self.cfg.experiment.classifiers.iter().any(|x| x == c))
            .collect();
        if classifiers.contains(&"stage1") {
            self.pretrain()?;
        }
        // stage2 needs stage1's checkpoints, so stages go in this order
        for stage in ["stage1", "stage2", "baseline1", "baseline2"] {
            if classifiers.contains(&stage) {
                self.train(stage)?;
                self.predict(stage)?;
                self.aggregate(stage)?;
                self.evaluate(stage)?;
            }
        }
        self.report()?;
        log::info!("pipeline finished in {:.1}s", t.elapsed().as_secs_f64());
        Ok(())
    }
}
