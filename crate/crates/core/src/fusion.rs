//! Frame sampling and the four video-level prediction strategies: early
//! fusion (concatenate frame encodings into one key/value set) and the
//! three late-fusion aggregators over per-frame scores.

use ndarray::concatenate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncodedSequence, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleStrategy {
    /// Early fusion: one multi-modal pass over all frames' tokens.
    Concat,
    /// Late fusion: log-mean-exp of per-frame scores.
    Lse,
    Max,
    Mean,
}

impl EnsembleStrategy {
    pub const ALL: [EnsembleStrategy; 4] = [
        EnsembleStrategy::Concat,
        EnsembleStrategy::Lse,
        EnsembleStrategy::Max,
        EnsembleStrategy::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnsembleStrategy::Concat => "concat",
            EnsembleStrategy::Lse => "lse",
            EnsembleStrategy::Max => "max",
            EnsembleStrategy::Mean => "mean",
        }
    }

    pub fn parse(s: &str) -> Result<EnsembleStrategy> {
        match s {
            "concat" => Ok(EnsembleStrategy::Concat),
            "lse" => Ok(EnsembleStrategy::Lse),
            "max" => Ok(EnsembleStrategy::Max),
            "mean" => Ok(EnsembleStrategy::Mean),
            other => Err(Error::Input(format!(
                "unknown ensemble strategy {other:?} (expected concat|lse|max|mean)"
            ))),
        }
    }
}

/// Late-fusion aggregator over per-frame scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Lse,
    Max,
    Mean,
}

/// One training frame index, uniform over the video.
pub fn sample_train_frame(total_frames: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    if total_frames == 0 {
        return Err(Error::Input("cannot sample a frame from an empty video".into()));
    }
    Ok(rng.random_range(0..total_frames))
}

/// Sorted training frame indices for multi-frame (temporal) steps: a random
/// subset without replacement when the video is long enough, otherwise with
/// replacement; always ascending so temporal order is preserved.
pub fn sample_train_frames(
    total_frames: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if total_frames == 0 || count == 0 {
        return Err(Error::Input("frame sampling needs a non-empty video and count".into()));
    }
    let mut picked: Vec<usize> = if count <= total_frames {
        // partial Fisher-Yates over the index pool
        let mut pool: Vec<usize> = (0..total_frames).collect();
        for i in 0..count {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    } else {
        (0..count).map(|_| rng.random_range(0..total_frames)).collect()
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Midpoint-rule uniform inference sampling: index i maps to
/// floor((i + 0.5) * T / T_test). Duplicates appear when T_test > T.
pub fn sample_inference_frames(total_frames: usize, t_test: usize) -> Result<Vec<usize>> {
    if total_frames == 0 || t_test == 0 {
        return Err(Error::Input("inference sampling needs T >= 1 and T_test >= 1".into()));
    }
    Ok((0..t_test)
        .map(|i| ((i as f64 + 0.5) * total_frames as f64 / t_test as f64) as usize)
        .map(|idx| idx.min(total_frames - 1))
        .collect())
}

/// Reduce per-frame scores to one video-level score.
pub fn aggregate_scores(scores: &[f64], aggregator: Aggregator) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Input("cannot aggregate an empty score list".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("non-finite score in aggregation".into()));
    }
    let n = scores.len() as f64;
    Ok(match aggregator {
        Aggregator::Mean => scores.iter().sum::<f64>() / n,
        Aggregator::Max => scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        Aggregator::Lse => {
            // log-mean-exp keeps constant inputs fixed points and scores
            // comparable across frame counts
            let hi = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = scores.iter().map(|&s| (s - hi).exp()).sum();
            hi + (sum / n).ln()
        }
    })
}

/// Concatenate frame encodings along the token axis into one visual
/// sequence for early fusion.
pub fn concat_frame_encodings(frames: &[EncodedSequence]) -> Result<EncodedSequence> {
    if frames.is_empty() {
        return Err(Error::Input("early fusion needs at least one frame encoding".into()));
    }
    let d = frames[0].states.ncols();
    if frames.iter().any(|f| f.states.ncols() != d) {
        return Err(Error::Input("frame encodings disagree on hidden dim".into()));
    }
    let views: Vec<_> = frames.iter().map(|f| f.states.view()).collect();
    let states = concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::Input(format!("concat failed: {e}")))?;
    let mask = vec![true; states.nrows()];
    let pooled = frames[0].pooled.clone();
    Ok(EncodedSequence { states, mask, pooled })
}

/// Early fusion (one multi-modal pass over all frames' tokens).
pub fn predict_early_fusion(
    model: &Model,
    text: &EncodedSequence,
    frames: &[EncodedSequence],
) -> Result<f64> {
    let visual = concat_frame_encodings(frames)?;
    Ok(model.multimodal_fuse(text, &visual)?.match_logit)
}

/// Late fusion: score each frame separately, then aggregate.
pub fn predict_late_fusion(
    model: &Model,
    text: &EncodedSequence,
    frames: &[EncodedSequence],
    aggregator: Aggregator,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Input("late fusion needs at least one frame encoding".into()));
    }
    let mut scores = Vec::with_capacity(frames.len());
    for f in frames {
        scores.push(model.multimodal_fuse(text, f)?.match_logit);
    }
    aggregate_scores(&scores, aggregator)
}

/// Video-level score under any of the four strategies.
pub fn predict_with_strategy(
    model: &Model,
    text: &EncodedSequence,
    frames: &[EncodedSequence],
    strategy: EnsembleStrategy,
) -> Result<f64> {
    match strategy {
        EnsembleStrategy::Concat => predict_early_fusion(model, text, frames),
        EnsembleStrategy::Lse => predict_late_fusion(model, text, frames, Aggregator::Lse),
        EnsembleStrategy::Max => predict_late_fusion(model, text, frames, Aggregator::Max),
        EnsembleStrategy::Mean => predict_late_fusion(model, text, frames, Aggregator::Mean),
    }
}
