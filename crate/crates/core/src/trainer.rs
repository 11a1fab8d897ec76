//! Training loop and the `train` / `eval` / `sampler-stats` commands.
//!
//! Each epoch picks a sampler (random during warmup, hard-mined afterwards,
//! unless overridden), builds an [`EpochPlan`] from a snapshot of the class
//! weights, and runs one SGD step per batch on
//! `L_id + triplet_weight * L_triplet - lambda * L_adv`. Every step appends a
//! [`MetricsRecord`]; held-out retrieval is evaluated before training, every
//! `eval_every` epochs and after the last epoch.
//!
//! All randomness is derived from `(seed, stream, index)`, so a config fully
//! determines every output byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment, AugmentConfig, ImageBuffer};
use crate::checkpoint::Checkpoint;
use crate::common::{streams, Matrix, RngState};
use crate::data::{choose_holdout, load_jsonl, save_jsonl, split_query_gallery, synth_generate, Dataset, Split, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EmbeddedSet, EvalReport, EvalResult, RerankParams};
use crate::losses::{
    batch_hard_triplet, l2_normalize_backward, l2_normalize_rows, scene_adversarial_loss, softmax_cross_entropy,
    total_loss,
};
use crate::model::{backward, cosine_lr, embed, forward, init_params, sgd_step, GradReversalCoeff, ModelDims, ModelParams, Velocity};
use crate::sampling::{hard_batch_epoch, intra_batch_similarity, pk_random_epoch, schedule, EpochPlan, SamplerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthSpec),
    Jsonl(PathBuf),
}

/// Which sampler each epoch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Random,
    Hard,
    /// Random for `warmup_epochs`, hard-mined afterwards.
    Scheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub p: usize,
    pub k: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub triplet_weight: f64,
    pub lambda: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub data: DataSource,
    pub eval_every: usize,
    pub sampler: SamplerMode,
    /// Identities held out of training for query/gallery evaluation.
    /// Ignored when the dataset already carries split tags.
    pub holdout_classes: usize,
    pub split_seed: u64,
    /// L2-normalize embeddings before the triplet loss and retrieval.
    pub normalize_embeddings: bool,
    /// When false the scene head is neither evaluated nor trained.
    pub scene_branch: bool,
    /// Applied to image-backed datasets only.
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 16,
            k: 4,
            epochs: 30,
            base_lr: 0.008,
            momentum: 0.9,
            weight_decay: 1e-4,
            margin: 0.3,
            triplet_weight: 1.0,
            lambda: 0.1,
            warmup_epochs: 1,
            seed: 0,
            hidden: vec![32],
            embedding_dim: 16,
            data: DataSource::Synth(SynthSpec::default()),
            eval_every: 5,
            sampler: SamplerMode::Scheduled,
            holdout_classes: 10,
            split_seed: 1,
            normalize_embeddings: false,
            scene_branch: true,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: TrainConfig = serde_json::from_str(&text)?;
        // relative dataset paths are relative to the config file
        if let DataSource::Jsonl(p) = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 || self.p * self.k < 4 {
            return Err(Error::invalid(format!("need P >= 2, K >= 2, got P={} K={}", self.p, self.k)));
        }
        if !(self.base_lr >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::invalid("base_lr, momentum and weight_decay must be >= 0"));
        }
        if !(self.lambda >= 0.0 && self.triplet_weight >= 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("lambda and triplet_weight must be >= 0, margin finite"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be >= 1"));
        }
        Ok(())
    }

    /// SHA-256 of the serialized config.
    pub fn hash(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).into()
    }

    fn sampler_for(&self, epoch: usize) -> SamplerKind {
        match self.sampler {
            SamplerMode::Random => SamplerKind::Random,
            SamplerMode::Hard => SamplerKind::HardMined,
            SamplerMode::Scheduled => schedule(epoch, self.warmup_epochs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: usize,
    pub sampler: SamplerKind,
    pub l_id: f64,
    pub l_triplet: f64,
    pub l_adv: f64,
    pub l_total: f64,
    pub active_triplet_fraction: f64,
    pub intra_batch_similarity: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Epochs completed when evaluated.
    pub epoch: usize,
    pub map: f64,
    pub cmc1: f64,
    pub cmc5: f64,
}

/// Feature source for a dataset: vectors, or decoded images that get
/// augmented during training.
pub enum Inputs {
    Vectors(Matrix),
    Images(Vec<ImageBuffer>),
}

impl Inputs {
    pub fn for_dataset(dataset: &Dataset) -> Result<Self> {
        if dataset.is_image_backed() {
            Ok(Inputs::Images(dataset.load_images()?))
        } else {
            let all: Vec<usize> = (0..dataset.len()).collect();
            Ok(Inputs::Vectors(dataset.feature_matrix(&all)?))
        }
    }

    /// Un-augmented rows.
    pub fn rows(&self, indices: &[usize]) -> Matrix {
        match self {
            Inputs::Vectors(m) => m.select_rows(indices),
            Inputs::Images(imgs) => image_rows(indices.iter().map(|&i| imgs[i].clone())),
        }
    }

    fn augmented_rows(&self, indices: &[usize], cfg: &AugmentConfig, rng: &mut RngState) -> Result<Matrix> {
        match self {
            Inputs::Vectors(m) => Ok(m.select_rows(indices)),
            Inputs::Images(imgs) => {
                let out = indices
                    .iter()
                    .map(|&i| augment(&imgs[i], cfg, rng))
                    .collect::<Result<Vec<_>>>()?;
                Ok(image_rows(out.into_iter()))
            }
        }
    }
}

fn image_rows(imgs: impl Iterator<Item = ImageBuffer>) -> Matrix {
    let rows: Vec<Vec<f64>> = imgs.map(|img| img.to_features()).collect();
    Matrix::from_rows(&rows).expect("images share one size")
}

/// Loads or generates the dataset and applies the query/gallery split, unless
/// the data already carries one.
pub fn prepare_dataset(cfg: &TrainConfig) -> Result<Dataset> {
    let dataset = match &cfg.data {
        DataSource::Synth(spec) => synth_generate(spec)?,
        DataSource::Jsonl(path) => load_jsonl(path)?,
    };
    if dataset.samples.iter().any(|s| s.split != Split::Train) {
        dataset.check_split()?;
        return Ok(dataset);
    }
    let holdout = choose_holdout(
        dataset.num_classes,
        cfg.holdout_classes,
        &mut RngState::derive(cfg.split_seed, streams::SPLIT, 0),
    )?;
    split_query_gallery(&dataset, &holdout, &mut RngState::derive(cfg.split_seed, streams::SPLIT, 1))
}

pub fn model_dims(cfg: &TrainConfig, dataset: &Dataset) -> ModelDims {
    ModelDims {
        input_dim: dataset.dim,
        hidden: cfg.hidden.clone(),
        embedding_dim: cfg.embedding_dim,
        num_classes: dataset.num_classes,
        num_scenes: dataset.num_scenes,
    }
}

/// Embeds the query and gallery splits and scores retrieval.
pub fn evaluate_split(
    params: &ModelParams,
    dataset: &Dataset,
    inputs: &Inputs,
    normalize: bool,
    rerank: Option<&RerankParams>,
) -> Result<EvalResult> {
    let (query, gallery) = embed_split(params, dataset, inputs, normalize)?;
    evaluate(&query, &gallery, rerank)
}

pub fn embed_split(
    params: &ModelParams,
    dataset: &Dataset,
    inputs: &Inputs,
    normalize: bool,
) -> Result<(EmbeddedSet, EmbeddedSet)> {
    let set = |split: Split| -> Result<EmbeddedSet> {
        let idx = dataset.indices(split);
        let mut emb = embed(params, &inputs.rows(&idx))?;
        if normalize {
            emb = l2_normalize_rows(&emb)?.0;
        }
        EmbeddedSet::new(emb, dataset.class_ids(&idx), dataset.scene_ids(&idx))
    };
    Ok((set(Split::Query)?, set(Split::Gallery)?))
}

fn eval_record(epoch: usize, r: &EvalResult) -> EvalRecord {
    let at = |rank: usize| r.cmc.get(rank.min(r.cmc.len()) - 1).copied().unwrap_or(0.0);
    EvalRecord {
        epoch,
        map: r.map,
        cmc1: at(1),
        cmc5: at(5),
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub velocity: Velocity,
    pub metrics: Vec<MetricsRecord>,
    pub evals: Vec<EvalRecord>,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        Checkpoint {
            config_hash: cfg.hash(),
            epoch: cfg.epochs as u64,
            step: self.steps as u64,
            params: self.params.clone(),
            velocity: Some(self.velocity.clone()),
        }
    }
}

/// Runs training on an already split dataset. `on_eval` is called with the
/// current parameters at every evaluation point.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut on_eval: impl FnMut(usize, &ModelParams) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dims = model_dims(cfg, dataset);
    dims.validate()?;
    let train_idx = dataset.indices(Split::Train);
    let train_labels = dataset.class_ids(&train_idx);
    let train_classes: std::collections::BTreeSet<usize> = train_labels.iter().copied().collect();
    if train_classes.len() < cfg.p {
        return Err(Error::Contract(format!(
            "{} training classes cannot fill P={}",
            train_classes.len(),
            cfg.p
        )));
    }
    let has_eval = !dataset.indices(Split::Query).is_empty();
    if has_eval {
        dataset.check_split()?;
    }
    let inputs = Inputs::for_dataset(dataset)?;

    let mut params = init_params(&mut RngState::derive(cfg.seed, streams::INIT, 0), &dims)?;
    let mut velocity = params.zeros_like();
    let grl = GradReversalCoeff::new(cfg.lambda)?;
    let batches_per_epoch = train_classes.len() / cfg.p;
    let total_steps = (batches_per_epoch * cfg.epochs).max(1);

    let mut metrics = Vec::with_capacity(batches_per_epoch * cfg.epochs);
    let mut evals = Vec::new();
    let mut run_eval = |epoch: usize, params: &ModelParams, evals: &mut Vec<EvalRecord>| -> Result<()> {
        if has_eval {
            let r = evaluate_split(params, dataset, &inputs, cfg.normalize_embeddings, None)?;
            log::info!("epoch {epoch}: mAP {:.4} cmc1 {:.4}", r.map, r.cmc[0]);
            evals.push(eval_record(epoch, &r));
        }
        on_eval(epoch, params)
    };
    run_eval(0, &params, &mut evals)?;

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let kind = cfg.sampler_for(epoch);
        let mut plan_rng = RngState::derive(cfg.seed, streams::PLAN, epoch as u64);
        let plan: EpochPlan = match kind {
            SamplerKind::Random => pk_random_epoch(&train_labels, cfg.p, cfg.k, &mut plan_rng)?,
            SamplerKind::HardMined => {
                let snapshot = params.class_weights.clone();
                hard_batch_epoch(&snapshot, &train_labels, cfg.p, cfg.k, &mut plan_rng)?
            }
        };
        for batch in &plan.batches {
            let idx: Vec<usize> = batch.indices.iter().map(|&i| train_idx[i]).collect();
            let mut aug_rng = RngState::derive(cfg.seed, streams::AUGMENT, step as u64);
            let x = inputs.augmented_rows(&idx, &cfg.augment, &mut aug_rng)?;
            let labels = dataset.class_ids(&idx);
            let scenes = dataset.scene_ids(&idx);

            let trace = forward(&params, &x)?;
            let id = softmax_cross_entropy(&trace.id_logits, &labels)?;
            let (triplet, stats) = if cfg.normalize_embeddings {
                let (normed, norms) = l2_normalize_rows(&trace.embeddings)?;
                let (mut out, stats) = batch_hard_triplet(&normed, &labels, cfg.margin)?;
                out.grad = l2_normalize_backward(&normed, &norms, &out.grad);
                (out, stats)
            } else {
                batch_hard_triplet(&trace.embeddings, &labels, cfg.margin)?
            };
            let mut grad_emb = triplet.grad;
            grad_emb.data_mut().iter_mut().for_each(|g| *g *= cfg.triplet_weight);
            let (l_adv, grad_scene) = if cfg.scene_branch {
                let adv = scene_adversarial_loss(&trace.scene_logits, &scenes)?;
                (adv.value, adv.grad)
            } else {
                (0.0, Matrix::zeros(idx.len(), dims.num_scenes))
            };
            let l_total = total_loss(id.value, triplet.value, l_adv, cfg.triplet_weight, cfg.lambda)?;
            let grads = backward(&params, &trace, &grad_emb, &id.grad, &grad_scene, grl)?;
            let lr = cosine_lr(step, total_steps, cfg.base_lr)?;
            let similarity = intra_batch_similarity(&params.class_weights, batch)?;
            sgd_step(&mut params, &grads, lr, cfg.momentum, cfg.weight_decay, &mut velocity)?;
            if !params.all_finite() {
                return Err(Error::NonFinite("parameters after SGD step"));
            }
            metrics.push(MetricsRecord {
                epoch,
                step,
                sampler: kind,
                l_id: id.value,
                l_triplet: triplet.value,
                l_adv,
                l_total,
                active_triplet_fraction: stats.active_fraction,
                intra_batch_similarity: similarity,
                lr,
            });
            step += 1;
        }
        let done = epoch + 1;
        if done % cfg.eval_every == 0 || done == cfg.epochs {
            run_eval(done, &params, &mut evals)?;
        }
    }
    Ok(TrainOutcome {
        params,
        velocity,
        metrics,
        evals,
        steps: step,
    })
}

fn jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(
        "epoch,step,sampler,l_id,l_triplet,l_adv,l_total,active_triplet_fraction,intra_batch_similarity,lr\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.step,
            r.sampler,
            r.l_id,
            r.l_triplet,
            r.l_adv,
            r.l_total,
            r.active_triplet_fraction,
            r.intra_batch_similarity,
            r.lr
        );
    }
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Output file names inside the training output directory.
pub mod files {
    pub const CHECKPOINT: &str = "checkpoint.bin";
    pub const METRICS: &str = "metrics.jsonl";
    pub const METRICS_CSV: &str = "metrics.csv";
    pub const EVALS: &str = "evals.jsonl";
    pub const DATASET: &str = "dataset.jsonl";
    pub const CONFIG: &str = "config.json";
}

/// Trains and writes checkpoint, metrics, evaluation log, the resolved config
/// and the split dataset into `out_dir`.
pub fn cmd_train(cfg: &TrainConfig, out_dir: impl AsRef<Path>, csv: bool) -> Result<TrainOutcome> {
    let out_dir = out_dir.as_ref();
    cfg.validate()?;
    let dataset = prepare_dataset(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join(files::CHECKPOINT);
    let hash = cfg.hash();
    let outcome = train(cfg, &dataset, |epoch, params| {
        // intermediate checkpoints at each evaluation point; velocity and
        // step are only final in the last one
        Checkpoint {
            config_hash: hash,
            epoch: epoch as u64,
            step: 0,
            params: params.clone(),
            velocity: None,
        }
        .save(&ckpt_path)
    })?;
    outcome.checkpoint(cfg).save(&ckpt_path)?;
    write(&out_dir.join(files::METRICS), &jsonl(&outcome.metrics)?)?;
    write(&out_dir.join(files::EVALS), &jsonl(&outcome.evals)?)?;
    if csv {
        write(&out_dir.join(files::METRICS_CSV), metrics_csv(&outcome.metrics).as_bytes())?;
    }
    save_jsonl(&dataset, out_dir.join(files::DATASET))?;
    write(&out_dir.join(files::CONFIG), &serde_json::to_vec_pretty(cfg)?)?;
    Ok(outcome)
}

fn check_dims(params: &ModelParams, dataset: &Dataset) -> Result<()> {
    let dims = params.dims();
    if dims.input_dim != dataset.dim {
        return Err(Error::Contract(format!(
            "checkpoint expects {}-dim inputs, dataset has {}",
            dims.input_dim, dataset.dim
        )));
    }
    if let Some(s) = dataset.samples.iter().find(|s| s.class_id >= dims.num_classes) {
        return Err(Error::Contract(format!(
            "dataset class {} exceeds the checkpoint's {} classes",
            s.class_id, dims.num_classes
        )));
    }
    Ok(())
}

/// Evaluates a checkpoint on the query/gallery split of `dataset`.
pub fn cmd_eval(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    rerank: Option<RerankParams>,
    normalize: bool,
) -> Result<EvalReport> {
    check_dims(&checkpoint.params, dataset)?;
    dataset.check_split()?;
    let inputs = Inputs::for_dataset(dataset)?;
    let (query, gallery) = embed_split(&checkpoint.params, dataset, &inputs, normalize)?;
    if query.is_empty() || gallery.is_empty() {
        return Err(Error::Contract("dataset has no query/gallery split".into()));
    }
    let fitted = rerank.map(|p| p.fitted(gallery.len()));
    let result = evaluate(&query, &gallery, fitted.as_ref())?;
    Ok(EvalReport::new(&result, query.len(), gallery.len(), fitted))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerStatsOptions {
    pub epochs: usize,
    pub p: usize,
    pub k: usize,
    pub seed: u64,
    /// Also report the batch-hard active fraction under the checkpoint's
    /// embeddings.
    pub with_embeddings: bool,
    pub margin: f64,
}

/// Per-batch statistics of random and hard-mined plans built from the
/// checkpoint's class weights, as CSV with the columns
/// `sampler,epoch,batch,anchor_class,intra_batch_similarity,active_triplet_fraction`.
/// `anchor_class` and `active_triplet_fraction` are empty when not applicable.
pub fn cmd_sampler_stats(checkpoint: &Checkpoint, dataset: &Dataset, opts: &SamplerStatsOptions) -> Result<String> {
    check_dims(&checkpoint.params, dataset)?;
    let params = &checkpoint.params;
    let train_idx = dataset.indices(Split::Train);
    let labels = dataset.class_ids(&train_idx);
    let inputs = if opts.with_embeddings {
        Some(Inputs::for_dataset(dataset)?)
    } else {
        None
    };
    let mut out = String::from("sampler,epoch,batch,anchor_class,intra_batch_similarity,active_triplet_fraction\n");
    for kind in [SamplerKind::Random, SamplerKind::HardMined] {
        for epoch in 0..opts.epochs {
            let mut rng = RngState::derive(opts.seed, streams::PLAN, epoch as u64);
            let plan = match kind {
                SamplerKind::Random => pk_random_epoch(&labels, opts.p, opts.k, &mut rng)?,
                SamplerKind::HardMined => hard_batch_epoch(&params.class_weights, &labels, opts.p, opts.k, &mut rng)?,
            };
            for (b, batch) in plan.batches.iter().enumerate() {
                let sim = intra_batch_similarity(&params.class_weights, batch)?;
                let active = match &inputs {
                    Some(inputs) => {
                        let idx: Vec<usize> = batch.indices.iter().map(|&i| train_idx[i]).collect();
                        let emb = embed(params, &inputs.rows(&idx))?;
                        let (_, stats) = batch_hard_triplet(&emb, &dataset.class_ids(&idx), opts.margin)?;
                        stats.active_fraction.to_string()
                    }
                    None => String::new(),
                };
                let anchor = plan.anchor_class.map(|a| a.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{kind},{epoch},{b},{anchor},{sim},{active}");
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            p: 4,
            k: 2,
            epochs: 3,
            base_lr: 0.05,
            hidden: vec![8],
            embedding_dim: 4,
            holdout_classes: 3,
            eval_every: 2,
            data: DataSource::Synth(SynthSpec {
                num_classes: 12,
                dim: 6,
                samples_per_class: 4,
                ..SynthSpec::default()
            }),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_defaults_and_minimal_json() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!((cfg.p, cfg.k), (16, 4));
        assert_eq!(cfg.base_lr, 0.008);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 1e-4);
        let cfg: TrainConfig = serde_json::from_str(r#"{"data": {"jsonl": "d.jsonl"}, "lambda": 0.25}"#).unwrap();
        assert_eq!(cfg.data, DataSource::Jsonl("d.jsonl".into()));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda": 1}"#).is_err());
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let d = prepare_dataset(&cfg).unwrap();
        let out = train(&cfg, &d, |_, _| Ok(())).unwrap();
        assert!(out.metrics.is_empty());
        let init = init_params(
            &mut RngState::derive(cfg.seed, streams::INIT, 0),
            &model_dims(&cfg, &d),
        )
        .unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn loss_accounting_and_schedule() {
        let cfg = tiny_config();
        let d = prepare_dataset(&cfg).unwrap();
        let mut seen = vec![];
        let out = train(&cfg, &d, |e, _| {
            seen.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 2, 3]);
        assert_eq!(out.evals.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![0, 2, 3]);
        // 9 training classes, P=4 -> 2 batches per epoch
        assert_eq!(out.metrics.len(), 6);
        for m in &out.metrics {
            let expect = m.l_id + cfg.triplet_weight * m.l_triplet - cfg.lambda * m.l_adv;
            assert!((m.l_total - expect).abs() < 1e-12);
            let kind = if m.epoch == 0 { SamplerKind::Random } else { SamplerKind::HardMined };
            assert_eq!(m.sampler, kind);
        }
        assert_eq!(out.metrics[0].lr, cfg.base_lr);
    }

    #[test]
    fn lambda_zero_matches_ablated_scene_branch() {
        let cfg = TrainConfig {
            lambda: 0.0,
            ..tiny_config()
        };
        let ablated = TrainConfig {
            scene_branch: false,
            ..cfg.clone()
        };
        let d = prepare_dataset(&cfg).unwrap();
        let a = train(&cfg, &d, |_, _| Ok(())).unwrap();
        let b = train(&ablated, &d, |_, _| Ok(())).unwrap();
        let n = a.params.extractor_tensor_count() + 1;
        for ((_, x), (_, y)) in a.params.tensors().iter().zip(b.params.tensors()).take(n) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn invalid_configs_fail_before_training() {
        let cfg = TrainConfig {
            p: 20,
            ..tiny_config()
        };
        let d = prepare_dataset(&cfg).unwrap();
        assert!(matches!(train(&cfg, &d, |_, _| Ok(())), Err(Error::Contract(_))));
        let cfg = TrainConfig {
            k: 1,
            ..tiny_config()
        };
        assert!(train(&cfg, &d, |_, _| Ok(())).is_err());
        let cfg = TrainConfig {
            lambda: -1.0,
            ..tiny_config()
        };
        assert!(train(&cfg, &d, |_, _| Ok(())).is_err());
    }

    #[test]
    fn sampler_stats_with_all_classes_in_one_batch() {
        let cfg = tiny_config();
        let d = prepare_dataset(&cfg).unwrap();
        let out = train(&cfg, &d, |_, _| Ok(())).unwrap();
        let ckpt = out.checkpoint(&cfg);
        let opts = SamplerStatsOptions {
            epochs: 2,
            p: 9,
            k: 4,
            seed: 3,
            with_embeddings: true,
            margin: 0.3,
        };
        let csv = cmd_sampler_stats(&ckpt, &d, &opts).unwrap();
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 4);
        let sim = |r: &Vec<&str>| r[4].parse::<f64>().unwrap();
        let act = |r: &Vec<&str>| r[5].parse::<f64>().unwrap();
        for r in &rows[1..] {
            assert!((sim(r) - sim(&rows[0])).abs() < 1e-12);
            assert!((act(r) - act(&rows[0])).abs() < 1e-12);
        }
        assert_eq!(csv, cmd_sampler_stats(&ckpt, &d, &opts).unwrap());
    }

    #[test]
    fn eval_rejects_dim_mismatch() {
        let cfg = tiny_config();
        let d = prepare_dataset(&cfg).unwrap();
        let out = train(&TrainConfig { epochs: 0, ..cfg.clone() }, &d, |_, _| Ok(())).unwrap();
        let ckpt = out.checkpoint(&cfg);
        let mut other = d.clone();
        other.dim = 5;
        assert!(matches!(cmd_eval(&ckpt, &other, None, false), Err(Error::Contract(_))));
        let a = cmd_eval(&ckpt, &d, None, false).unwrap();
        let b = cmd_eval(&ckpt, &d, Some(RerankParams { lambda_rr: 1.0, ..RerankParams::default() }), false).unwrap();
        assert_eq!(a.map, b.map);
        assert!(b.reranked);
    }
}
