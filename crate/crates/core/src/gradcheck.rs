//! Finite-difference verification of every loss path on a D=8 / n=3
//! configuration. Each loss is evaluated as a pure function of the
//! parameters (negative sampling and masking are frozen up front), and
//! analytic gradients are compared against central differences.

use std::collections::BTreeMap;

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Var};
use crate::config::ModelConfig;
use crate::data::generate::{generate_static_corpus, StaticCorpusSpec};
use crate::error::Result;
use crate::model::{FrameTensor, Model, ProjectionHead, SeqVars};
use crate::objectives::{apply_mlm_masking, mlm_loss_from_states, vtc_loss_t, HardNegatives, MlmExample};
use crate::qa::qa_loss_t;
use crate::rng::{stream_rng, Stream};
use crate::tokenizer::TokenSequence;
use crate::training::Objective;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossCheck {
    pub max_rel_err: f64,
    pub entries_checked: usize,
    pub params_covered: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub losses: BTreeMap<String, LossCheck>,
    pub passed: bool,
}

struct World {
    model: Model,
    tokens: Vec<TokenSequence>,
    frames: Vec<FrameTensor>,
    temporal_frames: Vec<FrameTensor>,
    mlm: Vec<MlmExample>,
    negatives: HardNegatives,
    answer_ids: Vec<usize>,
}

fn build_world(seed: u64) -> Result<World> {
    let spec = StaticCorpusSpec {
        n_videos: 3,
        frames_per_video: 2,
        image_size: 16,
    };
    let corpus = generate_static_corpus(&spec, seed)?;
    let vocab = corpus.build_vocab();
    let mut config = ModelConfig::tiny();
    config.t_train_temporal = 2;
    let mut model = Model::new(config, vocab, seed ^ 1)?;
    model.add_temporal(seed ^ 2);
    model.add_qa_decoder(seed ^ 3);
    // generic (non-zero) temporal table so its gradient is exercised
    let mut rng = stream_rng(seed ^ 4, Stream::Init);
    *model.params.get_mut("temporal.table") =
        Mat::from_shape_fn((2, model.config.hidden_dim), |_| rng.random_range(-0.2..0.2));

    let tokens: Vec<TokenSequence> = corpus
        .examples
        .iter()
        .map(|ex| model.vocab.encode(&ex.captions[0], model.config.max_text_len))
        .collect::<Result<_>>()?;
    let frames: Vec<FrameTensor> =
        corpus.examples.iter().map(|ex| ex.frames[0].clone()).collect();
    let temporal_frames = vec![
        corpus.examples[0].frames[0].clone(),
        corpus.examples[0].frames[1].clone(),
    ];
    let mut mask_rng = stream_rng(seed ^ 5, Stream::Masking);
    let mlm: Vec<MlmExample> = tokens
        .iter()
        .map(|t| apply_mlm_masking(t, 0.5, model.config.vocab_size, &mut mask_rng))
        .collect::<Result<_>>()?;
    let negatives = HardNegatives {
        text_for_video: vec![1, 2, 0],
        video_for_text: vec![2, 0, 1],
    };
    let answer = corpus.examples[0].captions[0].split_whitespace().next().unwrap();
    let answer_ids = vec![model.vocab.word_id(answer)?];
    Ok(World {
        model,
        tokens,
        frames,
        temporal_frames,
        mlm,
        negatives,
        answer_ids,
    })
}

fn loss_value(world: &World, model: &Model, objective: &str) -> Result<f64> {
    let mut fw = model.forward();
    let texts: Vec<SeqVars> = world
        .tokens
        .iter()
        .map(|t| fw.encode_text(t))
        .collect::<Result<_>>()?;
    match objective {
        "vtc" => {
            let mut vrows = Vec::new();
            let mut trows = Vec::new();
            for (tok, text) in world.frames.iter().zip(&texts) {
                let vis = fw.encode_frame(tok)?;
                let vpool = fw.tape.slice_rows(vis.states, 0, 1);
                vrows.push(fw.project(vpool, ProjectionHead::Vision));
                let tpool = fw.pool(text);
                trows.push(fw.project(tpool, ProjectionHead::Text));
            }
            let v = fw.tape.concat_rows(&vrows);
            let t = fw.tape.concat_rows(&trows);
            let (_, inv) = fw.tau();
            let loss = vtc_loss_t(&mut fw.tape, v, t, inv);
            Ok(fw.tape.scalar(loss))
        }
        "mlm" => {
            let mut per_example = Vec::new();
            let mut visuals = Vec::new();
            for f in &world.frames {
                visuals.push(fw.encode_frame(f)?.states);
            }
            for (i, ex) in world.mlm.iter().enumerate() {
                let masked = fw.encode_text(&ex.input)?;
                let fused = fw.fuse(&masked, visuals[i])?;
                per_example.push((fused.states, ex));
            }
            let loss = mlm_loss_from_states(&mut fw, &per_example).expect("labeled positions");
            Ok(fw.tape.scalar(loss))
        }
        "vtm" => {
            let visuals: Vec<Var> = world
                .frames
                .iter()
                .map(|f| Ok(fw.encode_frame(f)?.states))
                .collect::<Result<_>>()?;
            let loss = crate::objectives::vtm_loss_t(&mut fw, &texts, &visuals, &world.negatives)?;
            Ok(fw.tape.scalar(loss))
        }
        "qa" => {
            let vis = fw.encode_frame(&world.frames[0])?;
            let fused = fw.fuse(&texts[0], vis.states)?;
            let loss = qa_loss_t(&mut fw, &world.answer_ids, fused.states, &world.tokens[0].mask)?;
            Ok(fw.tape.scalar(loss))
        }
        "temporal" => {
            let frame_vars: Vec<Var> = world
                .temporal_frames
                .iter()
                .map(|f| Ok(fw.encode_frame(f)?.states))
                .collect::<Result<_>>()?;
            let video = fw.temporal_encode(&frame_vars)?;
            let fused = fw.fuse(&texts[0], video)?;
            Ok(fw.tape.scalar(fused.match_logit))
        }
        other => unreachable!("unknown objective {other}"),
    }
}

fn loss_grads(world: &World, objective: &str) -> Result<BTreeMap<String, Mat>> {
    let model = &world.model;
    let mut fw = model.forward();
    let texts: Vec<SeqVars> = world
        .tokens
        .iter()
        .map(|t| fw.encode_text(t))
        .collect::<Result<_>>()?;
    let loss = match objective {
        "vtc" => {
            let mut vrows = Vec::new();
            let mut trows = Vec::new();
            for (f, text) in world.frames.iter().zip(&texts) {
                let vis = fw.encode_frame(f)?;
                let vpool = fw.tape.slice_rows(vis.states, 0, 1);
                vrows.push(fw.project(vpool, ProjectionHead::Vision));
                let tpool = fw.pool(text);
                trows.push(fw.project(tpool, ProjectionHead::Text));
            }
            let v = fw.tape.concat_rows(&vrows);
            let t = fw.tape.concat_rows(&trows);
            let (_, inv) = fw.tau();
            vtc_loss_t(&mut fw.tape, v, t, inv)
        }
        "mlm" => {
            let mut visuals = Vec::new();
            for f in &world.frames {
                visuals.push(fw.encode_frame(f)?.states);
            }
            let mut per_example = Vec::new();
            for (i, ex) in world.mlm.iter().enumerate() {
                let masked = fw.encode_text(&ex.input)?;
                let fused = fw.fuse(&masked, visuals[i])?;
                per_example.push((fused.states, ex));
            }
            mlm_loss_from_states(&mut fw, &per_example).expect("labeled positions")
        }
        "vtm" => {
            let visuals: Vec<Var> = world
                .frames
                .iter()
                .map(|f| Ok(fw.encode_frame(f)?.states))
                .collect::<Result<_>>()?;
            crate::objectives::vtm_loss_t(&mut fw, &texts, &visuals, &world.negatives)?
        }
        "qa" => {
            let vis = fw.encode_frame(&world.frames[0])?;
            let fused = fw.fuse(&texts[0], vis.states)?;
            qa_loss_t(&mut fw, &world.answer_ids, fused.states, &world.tokens[0].mask)?
        }
        "temporal" => {
            let frame_vars: Vec<Var> = world
                .temporal_frames
                .iter()
                .map(|f| Ok(fw.encode_frame(f)?.states))
                .collect::<Result<_>>()?;
            let video = fw.temporal_encode(&frame_vars)?;
            fw.fuse(&texts[0], video)?.match_logit
        }
        other => unreachable!("unknown objective {other}"),
    };
    Ok(fw.grads(loss))
}

/// Evenly spread sample of entry indices covering both corners.
fn pick_entries(rows: usize, cols: usize, k: usize) -> Vec<(usize, usize)> {
    let total = rows * cols;
    let k = k.min(total);
    let mut picks: Vec<usize> = if k == 1 {
        vec![0]
    } else {
        (0..k).map(|i| i * (total - 1) / (k - 1)).collect()
    };
    picks.dedup();
    picks.into_iter().map(|p| (p / cols, p % cols)).collect()
}

fn check_one_loss(world: &World, objective: &str, entries_per_param: usize) -> Result<LossCheck> {
    let grads = loss_grads(world, objective)?;
    let mut max_rel = 0.0f64;
    let mut entries = 0usize;
    for (name, grad) in &grads {
        let (rows, cols) = grad.dim();
        for (i, j) in pick_entries(rows, cols, entries_per_param) {
            let mut up = world.model.clone();
            up.params.get_mut(name)[(i, j)] += FD_STEP;
            let mut down = world.model.clone();
            down.params.get_mut(name)[(i, j)] -= FD_STEP;
            let num = (loss_value(world, &up, objective)? - loss_value(world, &down, objective)?)
                / (2.0 * FD_STEP);
            let ana = grad[(i, j)];
            let denom = num.abs().max(ana.abs()).max(1e-6);
            max_rel = max_rel.max((num - ana).abs() / denom);
            entries += 1;
        }
    }
    Ok(LossCheck {
        max_rel_err: max_rel,
        entries_checked: entries,
        params_covered: grads.len(),
        passed: max_rel <= DEFAULT_TOLERANCE,
    })
}

/// Run the finite-difference suite over all five loss paths.
pub fn run_gradcheck(seed: u64, entries_per_param: usize) -> Result<GradcheckReport> {
    let world = build_world(seed)?;
    let mut losses = BTreeMap::new();
    for objective in ["vtc", "mlm", "vtm", "qa", "temporal"] {
        losses.insert(objective.to_string(), check_one_loss(&world, objective, entries_per_param)?);
    }
    let passed = losses.values().all(|c| c.passed);
    Ok(GradcheckReport {
        tolerance: DEFAULT_TOLERANCE,
        losses,
        passed,
    })
}

/// Frame with independent uniform pixels (test helper).
pub fn random_frame(config: &ModelConfig, seed: u64) -> FrameTensor {
    let mut rng = stream_rng(seed, Stream::Generator);
    FrameTensor {
        pixels: Array3::from_shape_fn(
            (config.image_size, config.image_size, config.channels),
            |_| rng.random_range(0.0..1.0),
        ),
    }
}

/// Objectives exercised by the suite (kept in sync with `run_gradcheck`).
pub fn checked_objectives() -> Vec<Objective> {
    vec![Objective::Vtc, Objective::Mlm, Objective::Vtm, Objective::Qa]
}
