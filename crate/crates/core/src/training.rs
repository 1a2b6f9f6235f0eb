//! Optimization: AdamW with decoupled weight decay (layer-norm and bias
//! parameters excluded), linear warmup + cosine decay, single-frame batch
//! construction (or sorted multi-frame sampling for the temporal recipe),
//! per-step metrics and epoch checkpoints. Runs are pure functions of
//! `(seed, config, data)` in fixed precision.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Var};
use crate::data::augment::{augment_frame, AugmentOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{sample_train_frame, sample_train_frames};
use crate::model::{Model, ProjectionHead, SeqVars};
use crate::objectives::{
    apply_mlm_masking, mlm_loss_from_states, sample_hard_negatives, vtc_loss_t, MlmExample,
};
use crate::qa::qa_loss_t;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            peak_lr: 1e-4,
            min_lr: 1e-6,
            warmup_steps: 0,
            total_steps: 1000,
            weight_decay: 0.02,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.min_lr > self.peak_lr {
            return Err(Error::Config("min_lr must not exceed peak_lr".into()));
        }
        Ok(())
    }
}

/// Linear ramp 0 -> peak over the warmup, then cosine decay to min;
/// clamped to min beyond the schedule end.
pub fn lr_at_step(step: usize, sched: &ScheduleConfig) -> f64 {
    if step >= sched.total_steps {
        return sched.min_lr;
    }
    if sched.warmup_steps > 0 && step < sched.warmup_steps {
        return sched.peak_lr * step as f64 / sched.warmup_steps as f64;
    }
    let span = (sched.total_steps - sched.warmup_steps) as f64;
    let progress = (step - sched.warmup_steps) as f64 / span;
    sched.min_lr
        + 0.5 * (sched.peak_lr - sched.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Weight decay applies to weights and embeddings but not biases,
/// layer-norm parameters or the temperature.
pub fn decays(name: &str) -> bool {
    if name == "log_tau" {
        return false;
    }
    let last = name.rsplit('.').next().unwrap_or(name);
    !(last.starts_with('b') || last == "g")
}

#[derive(Debug, Default)]
pub struct AdamW {
    m: BTreeMap<String, Mat>,
    v: BTreeMap<String, Mat>,
    t: usize,
}

impl AdamW {
    pub fn new() -> Self {
        AdamW::default()
    }

    /// One decoupled update over the gradient map.
    pub fn step(
        &mut self,
        params: &mut crate::model::Params,
        grads: &BTreeMap<String, Mat>,
        lr: f64,
        sched: &ScheduleConfig,
    ) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - sched.beta1.powi(t);
        let bc2 = 1.0 - sched.beta2.powi(t);
        for (name, grad) in grads {
            let shape = grad.dim();
            let m = self.m.entry(name.clone()).or_insert_with(|| Mat::zeros(shape));
            let v = self.v.entry(name.clone()).or_insert_with(|| Mat::zeros(shape));
            let p = params.get_mut(name);
            let apply_decay = decays(name);
            for ((pv, gv), (mv, vv)) in
                p.iter_mut().zip(grad.iter()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = sched.beta1 * *mv + (1.0 - sched.beta1) * gv;
                *vv = sched.beta2 * *vv + (1.0 - sched.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + 1e-8);
                if apply_decay {
                    *pv -= lr * sched.weight_decay * *pv;
                }
            }
        }
    }
}

/// Scale gradients so the global L2 norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Mat>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.values() {
        for &x in g.iter() {
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.mapv_inplace(|x| x * scale);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Vtc,
    Mlm,
    Vtm,
    Qa,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub objectives: BTreeSet<Objective>,
    pub schedule: ScheduleConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// 1 for single-frame training; >1 runs the temporal path.
    pub frames_per_step: usize,
    pub augment: AugmentOptions,
    pub grad_clip: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            objectives: [Objective::Vtc, Objective::Vtm].into_iter().collect(),
            schedule: ScheduleConfig::default(),
            batch_size: 16,
            epochs: 4,
            frames_per_step: 1,
            augment: AugmentOptions::default(),
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_vtc: f64,
    pub loss_mlm: f64,
    pub loss_vtm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_qa: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Steps per epoch for a dataset/batch combination (trailing batches that
/// are too small for pair losses are dropped).
pub fn steps_per_epoch(n_examples: usize, batch_size: usize, min_batch: usize) -> usize {
    let full = n_examples / batch_size;
    let rem = n_examples % batch_size;
    full + usize::from(rem >= min_batch)
}

pub fn run_training(
    model: &mut Model,
    dataset: &Dataset,
    opts: &TrainOptions,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    crate::data::require_frames(dataset)?;
    opts.schedule.validate()?;
    if opts.objectives.is_empty() {
        return Err(Error::Input("no training objectives selected".into()));
    }
    if opts.frames_per_step == 0 {
        return Err(Error::Input("frames_per_step must be at least 1".into()));
    }
    if opts.frames_per_step > 1 && !model.has_temporal() {
        return Err(Error::Config(
            "multi-frame training requires the temporal encoder (add_temporal)".into(),
        ));
    }
    if opts.objectives.contains(&Objective::Qa) && !model.has_qa() {
        return Err(Error::Config("qa objective requires the answer decoder (add_qa_decoder)".into()));
    }
    let pair_losses = opts.objectives.contains(&Objective::Vtc)
        || opts.objectives.contains(&Objective::Vtm);
    let min_batch = if pair_losses { 2 } else { 1 };
    if opts.batch_size < min_batch {
        return Err(Error::Input(format!("batch_size must be at least {min_batch}")));
    }

    let mut shuffle_rng = stream_rng(seed, Stream::Shuffle);
    let mut frame_rng = stream_rng(seed, Stream::FrameSampling);
    let mut mask_rng = stream_rng(seed, Stream::Masking);
    let mut neg_rng = stream_rng(seed, Stream::Negatives);
    let mut caption_rng = stream_rng(seed, Stream::CaptionPick);
    let mut augment_rng = stream_rng(seed, Stream::Augment);

    let mut optimizer = AdamW::new();
    let mut report = TrainReport::default();
    let mut step = 0usize;

    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(opts.batch_size) {
            if batch.len() < min_batch {
                continue;
            }
            let lr = lr_at_step(step, &opts.schedule);
            let record = train_step(
                model,
                dataset,
                batch,
                opts,
                lr,
                step,
                &mut optimizer,
                &mut frame_rng,
                &mut mask_rng,
                &mut neg_rng,
                &mut caption_rng,
                &mut augment_rng,
            )?;
            if !record.loss_total.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!(
                        "non-finite loss (vtc {}, mlm {}, vtm {}, qa {:?})",
                        record.loss_vtc, record.loss_mlm, record.loss_vtm, record.loss_qa
                    ),
                });
            }
            report.records.push(record);
            step += 1;
        }
        if let Some(dir) = run_dir {
            let path = dir.join(format!("ckpt_ep{epoch}"));
            crate::checkpoint::save(model, &path)?;
            report.checkpoints.push(path);
        }
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut Model,
    dataset: &Dataset,
    batch: &[usize],
    opts: &TrainOptions,
    lr: f64,
    step: usize,
    optimizer: &mut AdamW,
    frame_rng: &mut rand_chacha::ChaCha8Rng,
    mask_rng: &mut rand_chacha::ChaCha8Rng,
    neg_rng: &mut rand_chacha::ChaCha8Rng,
    caption_rng: &mut rand_chacha::ChaCha8Rng,
    augment_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<StepRecord> {
    let n = batch.len();
    let max_len = model.config.max_text_len;

    // per-example inputs, drawn in fixed order
    let mut captions: Vec<String> = Vec::with_capacity(n);
    let mut frames_per_example: Vec<Vec<crate::model::FrameTensor>> = Vec::with_capacity(n);
    for &idx in batch {
        let ex = &dataset.examples[idx];
        let caption = if ex.captions.len() == 1 {
            ex.captions[0].clone()
        } else {
            ex.captions[caption_rng.random_range(0..ex.captions.len())].clone()
        };
        captions.push(caption);
        let picks = if opts.frames_per_step == 1 {
            vec![sample_train_frame(ex.frames.len(), frame_rng)?]
        } else {
            sample_train_frames(ex.frames.len(), opts.frames_per_step, frame_rng)?
        };
        let frames: Vec<_> = picks
            .iter()
            .map(|&f| augment_frame(&ex.frames[f], ex.flip_safe(), &opts.augment, augment_rng))
            .collect();
        frames_per_example.push(frames);
    }

    // caption-duplicate groups for the negative pools
    let mut group_of: BTreeMap<&str, usize> = BTreeMap::new();
    let caption_group: Vec<usize> = captions
        .iter()
        .map(|c| {
            let next = group_of.len();
            *group_of.entry(c.as_str()).or_insert(next)
        })
        .collect();

    let mlm_examples: Vec<Option<MlmExample>> = if opts.objectives.contains(&Objective::Mlm) {
        captions
            .iter()
            .map(|c| {
                let tokens = model.vocab.encode(c, max_len)?;
                apply_mlm_masking(&tokens, model.config.mlm_mask_ratio, model.config.vocab_size, mask_rng)
                    .map(Some)
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; n]
    };

    let mut loss_vtc = 0.0;
    let mut loss_mlm = 0.0;
    let mut loss_vtm = 0.0;
    let mut loss_qa: Option<f64> = None;

    let grads = {
        let mut fw = model.forward();
        let mut texts: Vec<SeqVars> = Vec::with_capacity(n);
        for c in &captions {
            let tokens = fw.model().vocab.encode(c, max_len)?;
            texts.push(fw.encode_text(&tokens)?);
        }
        let mut visuals: Vec<Var> = Vec::with_capacity(n);
        for frames in &frames_per_example {
            if opts.frames_per_step == 1 {
                visuals.push(fw.encode_frame(&frames[0])?.states);
            } else {
                let encoded: Vec<Var> = frames
                    .iter()
                    .map(|f| Ok(fw.encode_frame(f)?.states))
                    .collect::<Result<_>>()?;
                visuals.push(fw.temporal_encode(&encoded)?);
            }
        }

        let mut losses: Vec<Var> = Vec::new();
        let mut tau_value = model.config.temperature_init;

        let needs_projections = opts.objectives.contains(&Objective::Vtc)
            || opts.objectives.contains(&Objective::Vtm);
        let mut sims: Option<Mat> = None;
        if needs_projections {
            let mut vrows = Vec::with_capacity(n);
            let mut trows = Vec::with_capacity(n);
            for i in 0..n {
                let vpool = fw.tape.slice_rows(visuals[i], 0, 1);
                vrows.push(fw.project(vpool, ProjectionHead::Vision));
                let tpool = fw.pool(&texts[i]);
                trows.push(fw.project(tpool, ProjectionHead::Text));
            }
            let vstack = fw.tape.concat_rows(&vrows);
            let tstack = fw.tape.concat_rows(&trows);
            let (tau, inv_tau) = fw.tau();
            tau_value = fw.tape.scalar(tau);
            // detached similarities for the negative sampler
            let vp = fw.tape.value(vstack).clone();
            let tp = fw.tape.value(tstack).clone();
            let mut s = Mat::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    let mut dot = 0.0;
                    for k in 0..vp.ncols() {
                        dot += vp[(i, k)] * tp[(j, k)];
                    }
                    s[(i, j)] = dot;
                }
            }
            sims = Some(s);

            if opts.objectives.contains(&Objective::Vtc) {
                let vtc = vtc_loss_t(&mut fw.tape, vstack, tstack, inv_tau);
                loss_vtc = fw.tape.scalar(vtc) / n as f64;
                let scaled = fw.tape.scale(vtc, 1.0 / n as f64);
                losses.push(scaled);
            }
        }

        if opts.objectives.contains(&Objective::Vtm) {
            let sims = sims.as_ref().expect("similarities computed for vtm");
            let negatives = sample_hard_negatives(sims, tau_value, Some(&caption_group), neg_rng)?;
            let vtm = crate::objectives::vtm_loss_t(&mut fw, &texts, &visuals, &negatives)?;
            loss_vtm = fw.tape.scalar(vtm);
            losses.push(vtm);
        }

        if opts.objectives.contains(&Objective::Mlm) {
            let mut per_example: Vec<(Var, &MlmExample)> = Vec::new();
            for (i, ex) in mlm_examples.iter().enumerate() {
                let ex = ex.as_ref().expect("mlm examples prepared");
                let masked_text = fw.encode_text(&ex.input)?;
                let fused = fw.fuse(&masked_text, visuals[i])?;
                per_example.push((fused.states, ex));
            }
            if let Some(mlm) = mlm_loss_from_states(&mut fw, &per_example) {
                loss_mlm = fw.tape.scalar(mlm);
                losses.push(mlm);
            }
        }

        if opts.objectives.contains(&Objective::Qa) {
            let mut qa_terms: Vec<Var> = Vec::new();
            for i in 0..n {
                let ex = &dataset.examples[batch[i]];
                let answer = ex
                    .meta
                    .as_ref()
                    .and_then(|m| m.answer.as_deref())
                    .ok_or_else(|| {
                        Error::Input(format!("video {:?} has no answer for qa training", ex.video_id))
                    })?;
                let answer_ids: Vec<usize> = answer
                    .split_whitespace()
                    .map(|w| fw.model().vocab.word_id(w))
                    .collect::<Result<_>>()?;
                let fused = fw.fuse(&texts[i], visuals[i])?;
                let term = qa_loss_t(&mut fw, &answer_ids, fused.states, &texts[i].mask)?;
                qa_terms.push(term);
            }
            let stacked = fw.tape.concat_rows(&qa_terms);
            let mean = fw.tape.mean_all(stacked);
            loss_qa = Some(fw.tape.scalar(mean));
            losses.push(mean);
        }

        let total = match losses.len() {
            0 => return Err(Error::Input("no loss terms produced for batch".into())),
            1 => losses[0],
            _ => {
                let mut acc = losses[0];
                for &l in &losses[1..] {
                    acc = fw.tape.add(acc, l);
                }
                acc
            }
        };
        let _ = step;
        fw.grads(total)
    };

    let mut grads = grads;
    clip_global_norm(&mut grads, opts.grad_clip);
    optimizer.step(&mut model.params, &grads, lr, &opts.schedule);

    let loss_total = loss_vtc + loss_mlm + loss_vtm + loss_qa.unwrap_or(0.0);
    Ok(StepRecord {
        step,
        lr,
        loss_total,
        loss_vtc,
        loss_mlm,
        loss_vtm,
        loss_qa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::generate::{generate_static_corpus, StaticCorpusSpec};
    use crate::tokenizer::Vocab;

    #[test]
    fn lr_schedule_anchor_points() {
        let sched = ScheduleConfig {
            peak_lr: 1e-4,
            min_lr: 1e-6,
            warmup_steps: 100,
            total_steps: 1000,
            ..ScheduleConfig::default()
        };
        assert_eq!(lr_at_step(100, &sched), 1e-4);
        assert_eq!(lr_at_step(1000, &sched), 1e-6);
        assert_eq!(lr_at_step(5000, &sched), 1e-6);
        let mid = lr_at_step(550, &sched);
        assert!((mid - 5.05e-5).abs() < 1e-12, "midpoint lr {mid}");
        assert_eq!(lr_at_step(0, &sched), 0.0);
        assert_eq!(lr_at_step(50, &sched), 0.5e-4);
    }

    #[test]
    fn lr_schedule_continuous_and_monotone_after_warmup() {
        let sched = ScheduleConfig {
            peak_lr: 3e-4,
            min_lr: 1e-6,
            warmup_steps: 37,
            total_steps: 500,
            ..ScheduleConfig::default()
        };
        let mut prev = f64::INFINITY;
        for step in 0..=500 {
            let lr = lr_at_step(step, &sched);
            if step > 0 && step <= sched.warmup_steps {
                let gap = (lr - lr_at_step(step - 1, &sched)).abs();
                assert!(gap <= sched.peak_lr / sched.warmup_steps as f64 + 1e-12);
            }
            if step >= sched.warmup_steps {
                assert!(lr <= prev + 1e-15, "lr rose after warmup at {step}");
                prev = lr;
            }
        }
    }

    #[test]
    fn decay_rules() {
        assert!(decays("vision.patch.w"));
        assert!(decays("text.tok"));
        assert!(decays("vision.pos"));
        assert!(!decays("vision.block0.ln1.g"));
        assert!(!decays("vision.block0.ln1.b"));
        assert!(!decays("vision.block0.attn.bq"));
        assert!(!decays("mlm.b"));
        assert!(!decays("log_tau"));
        assert!(decays("temporal.table"));
    }

    #[test]
    fn zero_gradient_parameter_shrinks_by_decay_factor() {
        let vocab = Vocab::build(["red square"]);
        let mut model = Model::new(ModelConfig::tiny(), vocab, 0).unwrap();
        let sched = ScheduleConfig {
            weight_decay: 0.02,
            ..ScheduleConfig::default()
        };
        let lr = 1e-3;
        let before = model.params.get("proj.vision.w").clone();
        let mut grads = BTreeMap::new();
        grads.insert("proj.vision.w".to_string(), Mat::zeros(before.dim()));
        let mut opt = AdamW::new();
        opt.step(&mut model.params, &grads, lr, &sched);
        let after = model.params.get("proj.vision.w");
        for (b, a) in before.iter().zip(after.iter()) {
            assert!((a - b * (1.0 - lr * sched.weight_decay)).abs() < 1e-15);
        }
    }

    #[test]
    fn epoch_frame_coverage() {
        // the training sampler touches every index of a T=8 video over an epoch's
        // worth of draws
        let mut rng = stream_rng(3, Stream::FrameSampling);
        let mut seen = [false; 8];
        for _ in 0..200 {
            seen[sample_train_frame(8, &mut rng).unwrap()] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    fn tiny_training_world() -> (Model, Dataset, TrainOptions) {
        let spec = StaticCorpusSpec {
            n_videos: 8,
            frames_per_video: 4,
            image_size: 16,
        };
        let ds = generate_static_corpus(&spec, 100).unwrap();
        let vocab = ds.build_vocab();
        let mut config = ModelConfig::tiny();
        config.max_text_len = 8;
        config.hidden_dim = 16;
        config.proj_dim = 8;
        config.heads = 4;
        let model = Model::new(config, vocab, 101).unwrap();
        let opts = TrainOptions {
            objectives: [Objective::Vtc, Objective::Mlm, Objective::Vtm].into_iter().collect(),
            schedule: ScheduleConfig {
                peak_lr: 1e-2,
                min_lr: 1e-4,
                warmup_steps: 10,
                total_steps: 200,
                ..ScheduleConfig::default()
            },
            batch_size: 8,
            epochs: 200,
            frames_per_step: 1,
            augment: AugmentOptions {
                enabled: false,
                ..AugmentOptions::default()
            },
            grad_clip: 1.0,
        };
        (model, ds, opts)
    }

    #[test]
    fn overfit_tiny_corpus_and_reproduce_exactly() {
        let (model, ds, opts) = tiny_training_world();
        let mut m1 = model.clone();
        let r1 = run_training(&mut m1, &ds, &opts, 7, None).unwrap();
        let first = r1.records.first().unwrap().loss_total;
        let last = r1.records.last().unwrap().loss_total;
        assert!(
            last < 0.1 * first,
            "expected < 10% of initial loss, got {last} from {first}"
        );

        // bit-exact reproducibility
        let mut m2 = model.clone();
        let r2 = run_training(&mut m2, &ds, &opts, 7, None).unwrap();
        assert_eq!(r1.records.len(), r2.records.len());
        for (a, b) in r1.records.iter().zip(r2.records.iter()) {
            assert_eq!(a.loss_total.to_bits(), b.loss_total.to_bits());
        }
        for (name, p1) in m1.params.iter() {
            let p2 = m2.params.get(name);
            for (a, b) in p1.iter().zip(p2.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "param {name} diverged");
            }
        }

        // a different seed changes the trajectory
        let mut m3 = model.clone();
        let r3 = run_training(&mut m3, &ds, &opts, 8, None).unwrap();
        assert_ne!(
            r1.records.last().unwrap().loss_total.to_bits(),
            r3.records.last().unwrap().loss_total.to_bits()
        );
    }

    #[test]
    fn rejects_bad_configurations() {
        let (model, ds, opts) = tiny_training_world();
        let mut m = model.clone();
        let empty = Dataset::default();
        assert!(run_training(&mut m, &empty, &opts, 0, None).is_err());
        let mut temporal_opts = opts.clone();
        temporal_opts.frames_per_step = 4;
        assert!(matches!(
            run_training(&mut m, &ds, &temporal_opts, 0, None),
            Err(Error::Config(_))
        ));
        let mut qa_opts = opts.clone();
        qa_opts.objectives = [Objective::Qa].into_iter().collect();
        assert!(matches!(
            run_training(&mut m, &ds, &qa_opts, 0, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn steps_per_epoch_drops_tiny_tails() {
        assert_eq!(steps_per_epoch(10, 4, 2), 3); // 4+4+2
        assert_eq!(steps_per_epoch(9, 4, 2), 2); // 4+4, tail of 1 dropped
        assert_eq!(steps_per_epoch(9, 4, 1), 3);
        assert_eq!(steps_per_epoch(3, 8, 2), 1);
    }
}
