//! Pipeline stages. Each stage reads the previous stage's manifest from the
//! run directory, writes its own artifacts plus a deterministic `log.txt`,
//! and saves the effective config so the directory is self-describing.
//! Mutating stages hold an advisory `.lock` file while they run.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use slc_core::augment::{plan_balance, execute_plan, SourceImage};
use slc_core::config::{ModelChoice, RunConfig};
use slc_core::dataset::{self, DatasetManifest, ManifestEntry};
use slc_core::imaging::{self, Image, Mask};
use slc_core::models::{self, NetworkSpec, CLASS_NAMES, NUM_CLASSES};
use slc_core::rng::hash_bytes;
use slc_core::segmentation::threshold_segment;
use slc_core::training::{self, TrainConfig, TrainSample};
use slc_core::weights::{load_weights, save_weights};
use slc_core::{Error, Result, SeededRng, Tensor};

use crate::RunFlags;

/// Effective configuration plus the run directory it maps to.
pub struct RunContext {
    pub cfg: RunConfig,
    pub run_dir: PathBuf,
}

impl RunContext {
    pub fn new(flags: &RunFlags) -> Result<RunContext> {
        let mut cfg = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = flags.seed {
            cfg.seed = seed;
        }
        if let Some(model) = &flags.model {
            cfg.model = model.parse()?;
        }
        if let Some(folds) = flags.folds {
            cfg.folds = folds;
        }
        if flags.use_mask {
            cfg.use_mask = true;
        }
        let run_dir = flags.out.join(cfg.run_dir_name());
        Ok(RunContext { cfg, run_dir })
    }

    fn stage_dir(&self, stage: &str) -> PathBuf {
        self.run_dir.join(stage)
    }

    fn require_manifest(&self, stage: &str) -> Result<DatasetManifest> {
        let p = self.stage_dir(stage).join("manifest.csv");
        if !p.is_file() {
            return Err(Error::Dataset(format!(
                "missing {}; run `slc {stage}` first",
                p.display()
            )));
        }
        DatasetManifest::load(&p)
    }

    fn save_config(&self) -> Result<()> {
        self.cfg.save(&self.run_dir.join("config.txt"))
    }
}

/// Advisory run-directory lock: stages that write artifacts create `.lock`
/// for their duration. A leftover lock (e.g. after a kill) must be removed
/// by hand.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(run_dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Io(std::io::Error::new(
                ErrorKind::AlreadyExists,
                format!(
                    "run directory {} is locked ({} exists; remove it if stale)",
                    run_dir.display(),
                    path.display()
                ),
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn model_spec(cfg: &RunConfig) -> Result<NetworkSpec> {
    match cfg.model {
        ModelChoice::M1 => models::build_model1(cfg.m1_size, cfg.m1_size),
        ModelChoice::M2One => models::build_model2_onepath(cfg.m2_size, cfg.m2_size),
        ModelChoice::M2Dual => models::build_model2_dualpath(cfg.m2_size, cfg.m2_size),
    }
}

fn model_input_size(cfg: &RunConfig) -> usize {
    match cfg.model {
        ModelChoice::M1 => cfg.m1_size,
        _ => cfg.m2_size,
    }
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: cfg.adam(),
        seed: cfg.seed,
    }
}

/// Full normalization of one raw image for the configured model: border
/// crop, then either the grayscale contrast-stretch path or the color
/// constancy path, always at the model's square input size.
pub fn preprocess_image(cfg: &RunConfig, img: &Image) -> Result<Image> {
    let cropped = imaging::crop_black_border(img, cfg.crop_threshold)?;
    match cfg.model {
        ModelChoice::M1 => {
            let resized = imaging::resize(&cropped, cfg.m1_size, cfg.m1_size)?;
            let gray = imaging::to_grayscale(&resized)?;
            imaging::piecewise_linear(&gray, &cfg.piecewise()?)
        }
        _ => {
            let resized = imaging::resize(&cropped, cfg.m2_size, cfg.m2_size)?;
            imaging::shades_of_gray(&resized, cfg.minkowski_p)
        }
    }
}

pub fn ingest(flags: &RunFlags, labels: &Path, images: &Path) -> Result<()> {
    let ctx = RunContext::new(flags)?;
    let _lock = RunLock::acquire(&ctx.run_dir)?;
    ctx.save_config()?;
    let manifest = dataset::ingest(labels, images)?;
    let dir = ctx.stage_dir("ingest");
    fs::create_dir_all(&dir)?;
    manifest.save(&dir.join("manifest.csv"))?;

    let counts = manifest.class_counts();
    let mut log = format!("labels: {}\nimages: {}\n", labels.display(), images.display());
    for (name, n) in CLASS_NAMES.iter().zip(counts) {
        log.push_str(&format!("{name}: {n}\n"));
    }
    log.push_str(&format!("total: {}\n", manifest.len()));
    fs::write(dir.join("log.txt"), &log)?;
    print!("{log}");
    Ok(())
}

pub fn preprocess(flags: &RunFlags) -> Result<()> {
    let ctx = RunContext::new(flags)?;
    let _lock = RunLock::acquire(&ctx.run_dir)?;
    ctx.save_config()?;
    let src = ctx.require_manifest("ingest")?;
    let dir = ctx.stage_dir("preprocess");
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir)?;

    let mut entries = Vec::with_capacity(src.len());
    for e in &src.entries {
        let img = Image::load(&e.path).map_err(|err| Error::Dataset(format!("image {}: {err}", e.id)))?;
        let out = preprocess_image(&ctx.cfg, &img).map_err(|err| Error::Dataset(format!("image {}: {err}", e.id)))?;
        let out_path = img_dir.join(format!("{}.png", e.id));
        out.save(&out_path)?;
        entries.push(ManifestEntry {
            id: e.id.clone(),
            path: out_path,
            class: e.class,
            mask_path: None,
            tags: String::new(),
        });
    }
    let manifest = DatasetManifest { entries };
    manifest.save(&dir.join("manifest.csv"))?;

    let size = model_input_size(&ctx.cfg);
    let log = format!("model: {}\nimages: {}\nsize: {size}x{size}\n", ctx.cfg.model, manifest.len());
    fs::write(dir.join("log.txt"), &log)?;
    println!("preprocessed {} images at {size}x{size}", manifest.len());
    Ok(())
}

pub fn segment(flags: &RunFlags) -> Result<()> {
    let ctx = RunContext::new(flags)?;
    let _lock = RunLock::acquire(&ctx.run_dir)?;
    ctx.save_config()?;
    let src = ctx.require_manifest("preprocess")?;
    let dir = ctx.stage_dir("segment");
    let mask_dir = dir.join("masks");
    fs::create_dir_all(&mask_dir)?;

    let params = ctx.cfg.piecewise()?;
    let mut entries = Vec::with_capacity(src.len());
    let mut coverage_sum = 0.0f64;
    for e in &src.entries {
        let img = Image::load(&e.path).map_err(|err| Error::Dataset(format!("image {}: {err}", e.id)))?;
        let mask = threshold_segment(&img, &params, ctx.cfg.seg_threshold)
            .map_err(|err| Error::Dataset(format!("image {}: {err}", e.id)))?;
        coverage_sum += mask.coverage();
        let mask_path = mask_dir.join(format!("{}.png", e.id));
        mask.save(&mask_path)?;
        entries.push(ManifestEntry { mask_path: Some(mask_path), ..e.clone() });
    }
    let manifest = DatasetManifest { entries };
    manifest.save(&dir.join("manifest.csv"))?;

    let mean = coverage_sum / manifest.len().max(1) as f64;
    let log = format!(
        "threshold: {}\nmasks: {}\nmean coverage: {mean:.4}\n",
        ctx.cfg.seg_threshold,
        manifest.len()
    );
    fs::write(dir.join("log.txt"), &log)?;
    println!("segmented {} images, mean lesion coverage {mean:.4}", manifest.len());
    Ok(())
}

pub fn augment(flags: &RunFlags) -> Result<()> {
    let ctx = RunContext::new(flags)?;
    let _lock = RunLock::acquire(&ctx.run_dir)?;
    ctx.save_config()?;
    let src = ctx.require_manifest("segment")?;
    let size = model_input_size(&ctx.cfg);

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut sources: BTreeMap<String, Vec<SourceImage>> = BTreeMap::new();
    for e in &src.entries {
        let name = CLASS_NAMES[e.class].to_string();
        *counts.entry(name.clone()).or_insert(0) += 1;
        sources
            .entry(name)
            .or_default()
            .push(SourceImage { id: e.id.clone(), path: e.path.clone() });
    }
    let plan = plan_balance(&counts, ctx.cfg.balance_target, size, size, &ctx.cfg.ranges(), ctx.cfg.seed)?;

    let dir = ctx.stage_dir("augment");
    let rows = execute_plan(&plan, &sources, &dir.join("images"))?;

    // Synthesized images get their own mask, derived the same way the
    // segment stage derives masks for originals, so downstream inputs stay
    // aligned with what the network actually sees.
    let mask_dir = dir.join("masks");
    fs::create_dir_all(&mask_dir)?;
    let params = ctx.cfg.piecewise()?;
    let by_id: BTreeMap<&str, &ManifestEntry> = src.entries.iter().map(|e| (e.id.as_str(), e)).collect();

    let mut entries = Vec::with_capacity(rows.len());
    for row in &rows {
        let class = models::class_index(&row.class)?;
        if row.op_chain.is_empty() {
            let orig = by_id
                .get(row.src_id.as_str())
                .ok_or_else(|| Error::Dataset(format!("kept image {} missing from segment manifest", row.src_id)))?;
            entries.push(ManifestEntry {
                id: row.src_id.clone(),
                path: PathBuf::from(&row.out_path),
                class,
                mask_path: orig.mask_path.clone(),
                tags: format!("src={}", row.src_id),
            });
        } else {
            let out_path = PathBuf::from(&row.out_path);
            let id = out_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| Error::Dataset(format!("augmented path {} has no file name", out_path.display())))?;
            let img = Image::load(&out_path)?;
            let mask = threshold_segment(&img, &params, ctx.cfg.seg_threshold)
                .map_err(|err| Error::Dataset(format!("augmented image {id}: {err}")))?;
            let mask_path = mask_dir.join(format!("{id}.png"));
            mask.save(&mask_path)?;
            entries.push(ManifestEntry {
                id,
                path: out_path,
                class,
                mask_path: Some(mask_path),
                tags: format!("src={};ops={}", row.src_id, row.op_chain),
            });
        }
    }
    let manifest = DatasetManifest { entries };
    manifest.save(&dir.join("manifest.csv"))?;

    let mut log = format!("target per class: {}\n", ctx.cfg.balance_target);
    for cp in &plan.classes {
        log.push_str(&format!(
            "{}: {} sources, kept {}, synthesized {}\n",
            cp.class,
            cp.source_count,
            cp.keep.len(),
            cp.synth.len()
        ));
    }
    log.push_str(&format!("total: {}\n", manifest.len()));
    fs::write(dir.join("log.txt"), &log)?;
    print!("{log}");
    Ok(())
}

/// Dataset loaded into tensors, with every row traced back to its source
/// image so splits and folds can be made at the source level. Augmented
/// copies then always land on the same side as their original.
pub struct SampleSet {
    pub samples: Vec<TrainSample>,
    /// `samples[i]` derives from source ordinal `source_of[i]`.
    pub source_of: Vec<usize>,
    /// Class of each source ordinal.
    pub source_labels: Vec<usize>,
}

fn needs_mask(cfg: &RunConfig) -> bool {
    matches!(cfg.model, ModelChoice::M2Dual) || (matches!(cfg.model, ModelChoice::M1) && cfg.use_mask)
}

fn one_hot(class: usize) -> Result<Tensor> {
    let mut data = vec![0.0f32; NUM_CLASSES];
    data[class] = 1.0;
    Tensor::new(vec![NUM_CLASSES], data)
}

/// The mask as a three-channel 0/1 tensor, the dual-path model's second
/// input.
fn mask_tensor(mask: &Mask) -> Result<Tensor> {
    let mut px = Vec::with_capacity(mask.bits().len() * 3);
    for &b in mask.bits() {
        let v = b * 255;
        px.extend_from_slice(&[v, v, v]);
    }
    Ok(imaging::to_tensor(&Image::new(mask.height(), mask.width(), 3, px)?))
}

fn need<'a>(mask: Option<&'a Mask>) -> Result<&'a Mask> {
    mask.ok_or_else(|| Error::Dataset("model input needs a mask".into()))
}

fn sample_inputs(cfg: &RunConfig, img: &Image, mask: Option<&Mask>) -> Result<Vec<Tensor>> {
    match cfg.model {
        ModelChoice::M1 => {
            let shaped = if cfg.use_mask {
                imaging::apply_mask(img, need(mask)?)?
            } else {
                img.clone()
            };
            Ok(vec![imaging::to_tensor(&shaped)])
        }
        ModelChoice::M2One => Ok(vec![imaging::to_tensor(img)]),
        ModelChoice::M2Dual => Ok(vec![imaging::to_tensor(img), mask_tensor(need(mask)?)?]),
    }
}

fn source_tag<'a>(tags: &'a str, fallback: &'a str) -> &'a str {
    tags.split(';').find_map(|t| t.strip_prefix("src=")).unwrap_or(fallback)
}

pub fn build_samples(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<SampleSet> {
    let with_mask = needs_mask(cfg);
    let mut samples = Vec::with_capacity(manifest.len());
    let mut source_of = Vec::with_capacity(manifest.len());
    let mut source_ord: BTreeMap<String, usize> = BTreeMap::new();
    let mut source_labels = Vec::new();
    for e in &manifest.entries {
        let img = Image::load(&e.path).map_err(|err| Error::Dataset(format!("image {}: {err}", e.id)))?;
        let mask = if with_mask {
            let p = e.mask_path.as_ref().ok_or_else(|| {
                Error::Dataset(format!("image {} has no mask; run `slc segment` first", e.id))
            })?;
            Some(Mask::load(p).map_err(|err| Error::Dataset(format!("mask of {}: {err}", e.id)))?)
        } else {
            None
        };
        let inputs = sample_inputs(cfg, &img, mask.as_ref())?;
        let src = source_tag(&e.tags, &e.id).to_string();
        let next = source_ord.len();
        let ord = *source_ord.entry(src).or_insert(next);
        if ord == source_labels.len() {
            source_labels.push(e.class);
        }
        source_of.push(ord);
        samples.push(TrainSample { inputs, target: one_hot(e.class)? });
    }
    Ok(SampleSet { samples, source_of, source_labels })
}

pub fn train(flags: &RunFlags) -> Result<()> {
    let ctx = RunContext::new(flags)?;
    let _lock = RunLock::acquire(&ctx.run_dir)?;
    ctx.save_config()?;
    let manifest = ctx.require_manifest("augment")?;
    let spec = model_spec(&ctx.cfg)?;
    let set = build_samples(&ctx.cfg, &manifest)?;

    let split_rng = SeededRng::new(ctx.cfg.seed).derive(hash_bytes(b"split"));
    let (_, val_sources) = training::stratified_split(&set.source_labels, ctx.cfg.val_fraction, &split_rng)?;
    let mut in_val = vec![false; set.source_labels.len()];
    for &s in &val_sources {
        in_val[s] = true;
    }
    let train_idx: Vec<usize> = (0..set.samples.len()).filter(|&i| !in_val[set.source_of[i]]).collect();
    let val_idx: Vec<usize> = (0..set.samples.len()).filter(|&i| in_val[set.source_of[i]]).collect();

    let tcfg = train_config(&ctx.cfg);
    let stream = SeededRng::new(ctx.cfg.seed).derive(hash_bytes(b"train"));
    let outcome = training::train_with_validation(&spec, &set.samples, &train_idx, &val_idx, &tcfg, &stream)?;

    let dir = ctx.stage_dir("train");
    fs::create_dir_all(&dir)?;
    save_weights(&outcome.weights, &dir.join("weights.slcw"))?;

    let mut log = format!(
        "model: {}\ntrain samples: {}\nval samples: {}\nbest epoch: {}\nval accuracy: {:.6}\nmean sensitivity: {:.6}\n",
        ctx.cfg.model,
        train_idx.len(),
        val_idx.len(),
        outcome.best_epoch,
        outcome.accuracy,
        outcome.mean_sensitivity
    );
    for (i, acc) in outcome.epoch_accuracy.iter().enumerate() {
        log.push_str(&format!("epoch {i}: val accuracy {acc:.6}\n"));
    }
    fs::write(dir.join("log.txt"), &log)?;
    println!(
        "trained {} epochs; best epoch {} with val accuracy {:.4}",
        ctx.cfg.epochs, outcome.best_epoch, outcome.accuracy
    );
    Ok(())
}

pub fn crossval(flags: &RunFlags) -> Result<()> {
    let ctx = RunContext::new(flags)?;
    let _lock = RunLock::acquire(&ctx.run_dir)?;
    ctx.save_config()?;
    let manifest = ctx.require_manifest("augment")?;
    let spec = model_spec(&ctx.cfg)?;
    let set = build_samples(&ctx.cfg, &manifest)?;

    let fold_rng = SeededRng::new(ctx.cfg.seed).derive(hash_bytes(b"folds"));
    let source_plan = training::make_stratified_folds(&set.source_labels, ctx.cfg.folds, &fold_rng)?;
    let plan = training::inherit_source_folds(&source_plan, &set.source_of)?;

    let tcfg = train_config(&ctx.cfg);
    let report = training::cross_validate(&spec, &set.samples, &plan, &tcfg)?;

    let dir = ctx.stage_dir("crossval");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("metrics.json"), report.to_json()?)?;
    fs::write(dir.join("metrics.txt"), report.format_table())?;

    // Rebuild the winning fold's training run (same derived stream) so the
    // saved weights are exactly the ones behind its reported metrics.
    let mut best = 0;
    for (i, f) in report.folds.iter().enumerate() {
        if f.accuracy > report.folds[best].accuracy {
            best = i;
        }
    }
    let root = SeededRng::new(tcfg.seed);
    let outcome = training::train_with_validation(
        &spec,
        &set.samples,
        &plan.train_indices(best),
        &plan.val_indices(best),
        &tcfg,
        &root.derive(best as u64),
    )?;
    save_weights(&outcome.weights, &dir.join("best.slcw"))?;

    let log = format!("{}best fold: {best}\n", report.format_table());
    fs::write(dir.join("log.txt"), &log)?;
    print!("{log}");
    Ok(())
}

fn resolve_weights(ctx: &RunContext, explicit: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        if p.is_file() {
            return Ok(p);
        }
        return Err(Error::Dataset(format!("weights file {} not found", p.display())));
    }
    let candidates = [
        ctx.run_dir.join("crossval").join("best.slcw"),
        ctx.run_dir.join("train").join("weights.slcw"),
    ];
    for c in &candidates {
        if c.is_file() {
            return Ok(c.clone());
        }
    }
    Err(Error::Dataset(format!(
        "no weights found (tried {} and {}); run `slc train` or `slc crossval`, or pass --weights",
        candidates[0].display(),
        candidates[1].display()
    )))
}

#[derive(serde::Serialize)]
struct EvalReport {
    model: String,
    weights: String,
    samples: usize,
    accuracy: f64,
    mean_sensitivity: f64,
    confusion: Vec<Vec<u64>>,
}

pub fn evaluate(flags: &RunFlags, weights_path: Option<PathBuf>) -> Result<()> {
    let ctx = RunContext::new(flags)?;
    let manifest = ctx.require_manifest("augment")?;
    let spec = model_spec(&ctx.cfg)?;
    let set = build_samples(&ctx.cfg, &manifest)?;
    let wpath = resolve_weights(&ctx, weights_path)?;
    let weights = load_weights(&wpath)?;

    let all: Vec<usize> = (0..set.samples.len()).collect();
    let confusion = training::confusion_matrix(&spec, &weights, &set.samples, &all)?;
    let accuracy = training::accuracy(&confusion)?;
    let mean_sensitivity = training::mean_sensitivity(&confusion)?;

    let report = EvalReport {
        model: ctx.cfg.model.to_string(),
        weights: wpath.display().to_string(),
        samples: set.samples.len(),
        accuracy,
        mean_sensitivity,
        confusion,
    };
    let encoded = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Validation(format!("report encode: {e}")))?;
    let dir = ctx.stage_dir("evaluate");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.json"), encoded)?;
    println!(
        "accuracy {accuracy:.4}, mean sensitivity {mean_sensitivity:.4} over {} images",
        set.samples.len()
    );
    Ok(())
}

pub fn predict(flags: &RunFlags, image: &Path, weights_path: Option<PathBuf>) -> Result<()> {
    let ctx = RunContext::new(flags)?;
    let spec = model_spec(&ctx.cfg)?;
    let wpath = resolve_weights(&ctx, weights_path)?;
    let weights = load_weights(&wpath)?;

    let raw = Image::load(image)?;
    let pre = preprocess_image(&ctx.cfg, &raw)?;
    let mask = if needs_mask(&ctx.cfg) {
        Some(threshold_segment(&pre, &ctx.cfg.piecewise()?, ctx.cfg.seg_threshold)?)
    } else {
        None
    };
    let inputs = sample_inputs(&ctx.cfg, &pre, mask.as_ref())?;
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let probs = models::forward(&spec, &weights, &refs)?;
    let class = models::predicted_class(&probs)?;
    let joined: Vec<String> = probs.data().iter().map(|p| p.to_string()).collect();
    println!("{},{}", CLASS_NAMES[class], joined.join(","));
    Ok(())
}
