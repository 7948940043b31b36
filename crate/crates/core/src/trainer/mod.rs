//! Training loop: two augmented views, masked semantic embeddings, the
//! weighted objective, one SGD step, key-encoder momentum update, enqueue.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};

pub use config::{ModelConfig, TrainConfig, TrainMode};

use crate::augment::{two_views, AugmentationSpec};
use crate::checkpoint;
use crate::data::{ClassId, GzslDataset, SampleData, Split};
use crate::encoders::{init_encoders, DecoderInput, EncoderSet, ForwardOutput, VisualBatch};
use crate::error::{DcenError, Result};
use crate::evaluator::evaluate_val;
use crate::image::Image;
use crate::losses::{
    attribute_prediction_loss, instance_discrimination_loss, mask_attributes, semantic_alignment_loss,
    total_loss, zsl_loss, LossBundle, NegativeQueue,
};
use crate::nn::l2_normalize_rows_backward;
use crate::optim::{cosine_lr, Sgd};
use crate::rng::Rng;

/// Environment variable holding the number of augmentation workers.
pub const WORKERS_ENV: &str = "DCEN_WORKERS";

pub const METRICS_HEADER: &str = "step,l_sa,l_sp,l_id,l_total,pos_sim_mean,queue_length";

/// Everything that changes during training. Random draws are derived from
/// `(config seed, step)`, so the step counter is the whole random state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub encoders: EncoderSet,
    pub queue: NegativeQueue,
    pub optimizer: Sgd,
    pub step: u64,
}

impl TrainState {
    pub fn init(ds: &GzslDataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let arch = cfg.arch_for(ds)?;
        let encoders = init_encoders(&arch, cfg.seed)?;
        Ok(TrainState {
            queue: NegativeQueue::new(cfg.queue_capacity, arch.embed_dim)?,
            optimizer: Sgd::new(cfg.sgd_momentum, cfg.weight_decay),
            encoders,
            step: 0,
        })
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub losses: LossBundle,
    pub queue_length: usize,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, l.l_sa, l.l_sp, l.l_id, l.l_total, l.pos_sim_mean, self.queue_length
        )
    }
}

/// Per-dataset data reused by every step.
pub struct TrainContext {
    pub seen_ids: Vec<ClassId>,
    /// Unmasked attribute rows of the seen classes, in `seen_ids` order.
    pub seen_attrs: Array2<f64>,
    pub augmentation: AugmentationSpec,
    pub workers: usize,
}

impl TrainContext {
    pub fn new(ds: &GzslDataset, cfg: &TrainConfig) -> Result<Self> {
        let seen_ids = ds.seen_list();
        let seen_attrs = ds.attributes.select(&seen_ids)?;
        Ok(TrainContext {
            seen_ids,
            seen_attrs,
            augmentation: cfg.resolved_augmentation()?,
            workers: workers_from_env(),
        })
    }
}

/// Worker count from [`WORKERS_ENV`]; 1 when unset or invalid.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0).unwrap_or(1)
}

fn step_label(step: u64) -> [u8; 8] {
    step.to_le_bytes()
}

fn augment_pair(
    img: &Image,
    spec: &AugmentationSpec,
    seed: u64,
    step: u64,
    pos: usize,
) -> Result<(Image, Image)> {
    let mut rng = Rng::derived(seed, &[b"views", &step_label(step), &(pos as u64).to_le_bytes()]);
    two_views(img, spec, &mut rng)
}

/// Both augmented views of every sample in `batch`. Each sample draws from
/// its own stream, so the result does not depend on the worker count.
fn make_views(
    ds: &GzslDataset,
    batch: &[usize],
    ctx: &TrainContext,
    seed: u64,
    step: u64,
) -> Result<(VisualBatch, VisualBatch)> {
    if let Some(SampleData::Features(_)) = batch.first().map(|&i| &ds.samples[i].data) {
        let rows = batch
            .iter()
            .map(|&i| match &ds.samples[i].data {
                SampleData::Features(v) => Ok(v),
                SampleData::Image(_) => Err(DcenError::DimensionMismatch("mixed sample kinds".into())),
            })
            .collect::<Result<Vec<_>>>()?;
        let b = VisualBatch::from_features(&rows)?;
        return Ok((b.clone(), b));
    }
    let images = batch
        .iter()
        .map(|&i| match &ds.samples[i].data {
            SampleData::Image(img) => Ok(img),
            SampleData::Features(_) => Err(DcenError::DimensionMismatch("mixed sample kinds".into())),
        })
        .collect::<Result<Vec<&Image>>>()?;
    let spec = &ctx.augmentation;
    let pairs: Vec<Result<(Image, Image)>> = if ctx.workers <= 1 || images.len() < 2 {
        images.iter().enumerate().map(|(pos, img)| augment_pair(img, spec, seed, step, pos)).collect()
    } else {
        let chunk = images.len().div_ceil(ctx.workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = images
                .chunks(chunk)
                .enumerate()
                .map(|(c, imgs)| {
                    scope.spawn(move || {
                        imgs.iter()
                            .enumerate()
                            .map(|(k, img)| augment_pair(img, spec, seed, step, c * chunk + k))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("augmentation worker panicked")).collect()
        })
    };
    let (mut v1, mut v2) = (Vec::with_capacity(pairs.len()), Vec::with_capacity(pairs.len()));
    for p in pairs {
        let (a, b) = p?;
        v1.push(a);
        v2.push(b);
    }
    let r1: Vec<&Image> = v1.iter().collect();
    let r2: Vec<&Image> = v2.iter().collect();
    Ok((VisualBatch::from_images(&r1)?, VisualBatch::from_images(&r2)?))
}

fn gather(rows: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    rows.select(Axis(0), idx)
}

fn scatter_add(target: &mut Array2<f64>, idx: &[usize], src: &Array2<f64>) {
    for (r, &i) in idx.iter().enumerate() {
        let mut row = target.row_mut(i);
        row += &src.row(r);
    }
}

/// One optimization step on the samples `batch` (dataset indices).
pub fn train_step(
    state: &mut TrainState,
    ds: &GzslDataset,
    batch: &[usize],
    cfg: &TrainConfig,
    ctx: &TrainContext,
) -> Result<LossBundle> {
    let step = state.step;
    let mode = cfg.mode;
    let labels: Vec<ClassId> = batch.iter().map(|&i| ds.samples[i].label).collect();
    let label_rows = labels
        .iter()
        .map(|l| ctx.seen_ids.binary_search(l).map_err(|_| DcenError::UnknownClass(*l)))
        .collect::<Result<Vec<usize>>>()?;

    // (1) two views; (2) f on view 1, g on view 2.
    let (view1, view2) = make_views(ds, batch, ctx, cfg.seed, step)?;
    let enc = &mut state.encoders;
    let (raw_f, f_cache) = enc.visual.forward_train(&view1)?;
    let f_out = ForwardOutput::from_raw(raw_f);
    let keys = if mode.uses_visual_contrast() {
        Some(ForwardOutput::from_raw(enc.key.forward_keys(&view2)?).unit)
    } else {
        None
    };

    // (3) masking over the seen-class matrix; (4) semantic embeddings.
    let sem_input = if mode.uses_semantic_contrast() {
        let mut rng = Rng::derived(cfg.seed, &[b"mask", &step_label(step)]);
        mask_attributes(&ctx.seen_attrs, cfg.sigma, cfg.choose_p, &mut rng)?.masked_attrs
    } else {
        ctx.seen_attrs.clone()
    };
    let (raw_h, h_cache) = enc.semantic.forward_train(&sem_input)?;
    let h_out = ForwardOutput::from_raw(raw_h);

    // (5) loss terms and their gradients.
    let mut grads = enc.zero_grads();
    let mut d_unit_f = Array2::zeros(f_out.unit.dim());
    let mut d_unit_h = Array2::zeros(h_out.unit.dim());
    let mut d_raw_f = Array2::zeros(f_out.raw.dim());
    let mut d_raw_h = Array2::zeros(h_out.raw.dim());
    let mut bundle = LossBundle::default();

    if mode.uses_semantic_contrast() {
        let sa = semantic_alignment_loss(&f_out.unit, &labels, &h_out.unit, &ctx.seen_ids, cfg.hinge_margin)?;
        bundle.l_sa = sa.value;
        bundle.pos_sim_mean = sa.pos_sim_mean;
        bundle.hardest_negatives = sa.hardest_negatives;
        d_unit_f += &sa.d_visual;
        d_unit_h += &sa.d_classes;

        let (vis_in, sem_in) = match enc.arch.decoder_input {
            DecoderInput::Raw => (&f_out.raw, gather(&h_out.raw, &label_rows)),
            DecoderInput::Unit => (&f_out.unit, gather(&h_out.unit, &label_rows)),
        };
        let (pred, d_cache) = enc.decoder.forward_train(vis_in, &sem_in)?;
        let sp = attribute_prediction_loss(&pred, &gather(&ctx.seen_attrs, &label_rows))?;
        bundle.l_sp = sp.value;
        if cfg.lambda2 != 0.0 {
            let (dv, ds_) = enc.decoder.backward(&d_cache, &(sp.d_pred * cfg.lambda2), &mut grads.decoder);
            match enc.arch.decoder_input {
                DecoderInput::Raw => {
                    d_raw_f += &dv;
                    scatter_add(&mut d_raw_h, &label_rows, &ds_);
                }
                DecoderInput::Unit => {
                    d_unit_f += &dv;
                    scatter_add(&mut d_unit_h, &label_rows, &ds_);
                }
            }
        }
    } else {
        let z = zsl_loss(&f_out.unit, &gather(&h_out.unit, &label_rows))?;
        bundle.l_sa = z.value;
        bundle.pos_sim_mean = -z.value;
        d_unit_f += &z.d_visual;
        scatter_add(&mut d_unit_h, &label_rows, &z.d_semantic);
    }

    if let Some(keys) = &keys {
        let id = instance_discrimination_loss(&f_out.unit, keys, state.queue.negatives(), cfg.tau)?;
        bundle.l_id = id.value;
        if cfg.lambda1 != 0.0 {
            d_unit_f.scaled_add(cfg.lambda1, &id.d_query);
        }
    }

    bundle.l_total = total_loss(bundle.l_sa, bundle.l_sp, bundle.l_id, cfg.lambda1, cfg.lambda2)?;
    if !bundle.l_total.is_finite() {
        return Err(DcenError::NonFinite {
            step,
            dump: format!(
                "l_sa={} l_sp={} l_id={} pos_sim_mean={} queue_length={}",
                bundle.l_sa,
                bundle.l_sp,
                bundle.l_id,
                bundle.pos_sim_mean,
                state.queue.len()
            ),
        });
    }

    // (6) gradient step on f, h and (when active) the decoder.
    d_raw_f += &l2_normalize_rows_backward(&f_out.unit, &f_out.norms, &d_unit_f);
    d_raw_h += &l2_normalize_rows_backward(&h_out.unit, &h_out.norms, &d_unit_h);
    enc.visual.backward(&f_cache, &d_raw_f, &mut grads.visual);
    enc.semantic.backward(&h_cache, &d_raw_h, &mut grads.semantic);
    let lr = cosine_lr(cfg.learning_rate, step, cfg.steps);
    let opt = &mut state.optimizer;
    opt.step("f", &mut enc.visual, &grads.visual, lr);
    opt.step("h", &mut enc.semantic, &grads.semantic, lr);
    if mode.uses_semantic_contrast() {
        opt.step("hhat", &mut enc.decoder, &grads.decoder, lr);
    }

    // (7) momentum update of g; (8) enqueue keys.
    if let Some(keys) = keys {
        enc.momentum_update(cfg.key_momentum)?;
        state.queue.enqueue(&keys)?;
    }
    state.step += 1;
    Ok(bundle)
}

/// Dataset indices of the training batch for `step`: consecutive slices of
/// a per-epoch seeded permutation of the train split.
pub struct BatchSampler {
    train: Vec<usize>,
    seed: u64,
    batch_size: usize,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchSampler {
    pub fn new(ds: &GzslDataset, seed: u64, batch_size: usize) -> Result<Self> {
        let train = ds.indices_of(Split::Train);
        if train.is_empty() {
            return Err(DcenError::EmptySplit("train".into()));
        }
        Ok(BatchSampler { train, seed, batch_size, cached: None })
    }

    fn epoch_perm(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let perm =
                Rng::derived(self.seed, &[b"epoch", &epoch.to_le_bytes()]).permutation(self.train.len());
            self.cached = Some((epoch, perm));
        }
        &self.cached.as_ref().expect("just filled").1
    }

    pub fn batch(&mut self, step: u64) -> Vec<usize> {
        let n = self.train.len() as u64;
        (0..self.batch_size as u64)
            .map(|j| {
                let pos = step * self.batch_size as u64 + j;
                let k = self.epoch_perm(pos / n)[(pos % n) as usize];
                self.train[k]
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<StepMetrics>,
    /// `(step, validation MCA)` pairs.
    pub evals: Vec<(u64, f64)>,
}

/// Output file locations under a run directory.
pub struct RunPaths {
    pub metrics: PathBuf,
    pub evals: PathBuf,
    pub checkpoint: PathBuf,
    pub checkpoint_dir: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Self {
        RunPaths {
            metrics: out_dir.join("metrics.csv"),
            evals: out_dir.join("val.csv"),
            checkpoint: out_dir.join("checkpoint.dcen"),
            checkpoint_dir: out_dir.join("checkpoints"),
        }
    }
}

/// Fresh run of `cfg.steps` steps.
pub fn train(ds: &GzslDataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let state = TrainState::init(ds, cfg)?;
    train_from(ds, cfg, state, out_dir)
}

/// Continue `state` up to `cfg.steps`. With `out_dir`, writes the metrics
/// log, validation log, a checkpoint at every evaluation and a final
/// checkpoint.
pub fn train_from(
    ds: &GzslDataset,
    cfg: &TrainConfig,
    mut state: TrainState,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.ensure_valid()?;
    let arch = cfg.arch_for(ds)?;
    if arch != state.encoders.arch {
        return Err(DcenError::DimensionMismatch(
            "checkpoint architecture does not match dataset and config".into(),
        ));
    }
    let ctx = TrainContext::new(ds, cfg)?;
    let mut sampler = BatchSampler::new(ds, cfg.seed, cfg.batch_size)?;
    let has_val = ds.count(Split::Val) > 0;

    let paths = out_dir.map(RunPaths::new);
    let mut metrics_file = None;
    let mut evals_file = None;
    if let Some(p) = &paths {
        fs::create_dir_all(&p.checkpoint_dir).map_err(|e| DcenError::io(&p.checkpoint_dir, e))?;
        let mut m = fs::File::create(&p.metrics).map_err(|e| DcenError::io(&p.metrics, e))?;
        writeln!(m, "{METRICS_HEADER}").map_err(|e| DcenError::io(&p.metrics, e))?;
        metrics_file = Some(m);
        let mut e = fs::File::create(&p.evals).map_err(|e| DcenError::io(&p.evals, e))?;
        writeln!(e, "step,val_mca").map_err(|err| DcenError::io(&p.evals, err))?;
        evals_file = Some(e);
    }

    let mut metrics = Vec::new();
    let mut evals = Vec::new();
    while state.step < cfg.steps {
        let batch = sampler.batch(state.step);
        let losses = train_step(&mut state, ds, &batch, cfg, &ctx)?;
        let row = StepMetrics { step: state.step, losses, queue_length: state.queue.len() };
        if let (Some(f), Some(p)) = (metrics_file.as_mut(), &paths) {
            writeln!(f, "{}", row.csv_row()).map_err(|e| DcenError::io(&p.metrics, e))?;
        }
        log::debug!("{}", row.csv_row());
        metrics.push(row);

        if cfg.eval_every > 0 && state.step.is_multiple_of(cfg.eval_every) && state.step < cfg.steps {
            if has_val {
                let mca = evaluate_val(&state.encoders, ds)?;
                log::info!("step {} val MCA {:.2}", state.step, mca);
                evals.push((state.step, mca));
                if let (Some(f), Some(p)) = (evals_file.as_mut(), &paths) {
                    writeln!(f, "{},{}", state.step, mca).map_err(|e| DcenError::io(&p.evals, e))?;
                }
            }
            if let Some(p) = &paths {
                let path = p.checkpoint_dir.join(format!("step_{:06}.dcen", state.step));
                checkpoint::save(&path, &state, cfg)?;
            }
        }
    }
    if let Some(p) = &paths {
        checkpoint::save(&p.checkpoint, &state, cfg)?;
    }
    Ok(TrainOutcome { state, metrics, evals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn tiny() -> (GzslDataset, TrainConfig) {
        let ds = generate_synthetic(&SynthConfig {
            num_seen: 3,
            num_unseen: 2,
            attr_dim: 6,
            samples_per_class: 10,
            image_size: 16,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            steps: 3,
            queue_capacity: 6,
            eval_every: 0,
            augmentation: AugmentationSpec { out_size: 16, ..AugmentationSpec::default() },
            model: ModelConfig { embed_dim: 8, conv_widths: vec![4, 8], ..ModelConfig::default() },
            ..TrainConfig::default()
        };
        (ds, cfg)
    }

    #[test]
    fn sampler_covers_each_epoch_once() {
        let (ds, _) = tiny();
        let n = ds.count(Split::Train);
        let mut s = BatchSampler::new(&ds, 1, n).unwrap();
        let mut first = s.batch(0);
        first.sort_unstable();
        assert_eq!(first, ds.indices_of(Split::Train));
    }

    #[test]
    fn queue_length_law_and_key_recursion() {
        let (ds, cfg) = tiny();
        let mut state = TrainState::init(&ds, &cfg).unwrap();
        let ctx = TrainContext::new(&ds, &cfg).unwrap();
        let mut sampler = BatchSampler::new(&ds, cfg.seed, cfg.batch_size).unwrap();
        for n in 1..=3u64 {
            let prev_key = state.encoders.key.clone();
            let batch = sampler.batch(state.step);
            train_step(&mut state, &ds, &batch, &cfg, &ctx).unwrap();
            assert_eq!(state.queue.len() as u64, (n * cfg.batch_size as u64).min(cfg.queue_capacity as u64));
            let mut expect = state.encoders.clone();
            expect.key = prev_key;
            expect.momentum_update(cfg.key_momentum).unwrap();
            assert!(crate::nn::params_equal(&expect.key, &state.encoders.key));
        }
    }

    #[test]
    fn basic_mode_leaves_decoder_and_key_untouched() {
        let (ds, mut cfg) = tiny();
        cfg.mode = TrainMode::BasicZsl;
        let init = TrainState::init(&ds, &cfg).unwrap();
        let out = train(&ds, &cfg, None).unwrap();
        for m in &out.metrics {
            assert_eq!(m.losses.l_sp, 0.0);
            assert_eq!(m.losses.l_id, 0.0);
        }
        assert_eq!(out.state.encoders.decoder, init.encoders.decoder);
        assert_eq!(out.state.encoders.key, init.encoders.key);
        assert_ne!(out.state.encoders.visual, init.encoders.visual);
        assert_ne!(out.state.encoders.semantic, init.encoders.semantic);
    }

    #[test]
    fn feature_mode_rejects_visual_contrast() {
        let (mut ds, cfg) = tiny();
        for s in &mut ds.samples {
            s.data = SampleData::Features(ndarray::Array1::from_elem(5, 0.5));
        }
        assert!(matches!(TrainState::init(&ds, &cfg), Err(DcenError::Config(_))));
        let cfg = TrainConfig { mode: TrainMode::ScmOnly, ..cfg };
        let out = train(&ds, &cfg, None).unwrap();
        assert_eq!(out.metrics.len(), 3);
    }
}
