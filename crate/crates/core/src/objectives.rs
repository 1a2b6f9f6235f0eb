//! The three pre-training losses: vision-text contrastive (VTC), masked
//! language modeling (MLM) over fused states, and vision-text matching
//! (VTM) with in-batch hard negatives.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Forward, FusedVars, SeqVars};
use crate::tokenizer::{TokenSequence, MASK};

/// Inputs to the contrastive loss: unit-norm projection rows and the
/// (already clamped) temperature.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub vision_proj: Mat,
    pub text_proj: Mat,
    pub tau: f64,
}

impl ContrastiveBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.vision_proj.nrows();
        if n < 2 || self.text_proj.nrows() != n {
            return Err(Error::Input(format!(
                "contrastive batch needs matching n >= 2, got {} and {}",
                n,
                self.text_proj.nrows()
            )));
        }
        if self.vision_proj.ncols() != self.text_proj.ncols() {
            return Err(Error::Input("projection widths differ".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::Input(format!("temperature must be positive, got {}", self.tau)));
        }
        for m in [&self.vision_proj, &self.text_proj] {
            for row in m.rows() {
                let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-5 {
                    return Err(Error::Input(format!("projection row norm {norm} not unit")));
                }
            }
        }
        Ok(())
    }
}

/// Two-directional contrastive loss on the tape, summed over the batch
/// (unreduced; the training loop divides by n).
pub fn vtc_loss_t(tape: &mut Tape, vision_proj: Var, text_proj: Var, inv_tau: Var) -> Var {
    let n = tape.value(vision_proj).nrows();
    let diag: Vec<usize> = (0..n).collect();
    let tt = tape.transpose(text_proj);
    let sims = tape.matmul(vision_proj, tt);
    let scaled = tape.mul_scalar_var(sims, inv_tau);

    // softmax over texts for each video row
    let lsm_v = tape.log_softmax_rows(scaled);
    let diag_v = tape.pick_per_row(lsm_v, &diag);
    // softmax over videos for each text: transpose first
    let scaled_t = tape.transpose(scaled);
    let lsm_l = tape.log_softmax_rows(scaled_t);
    let diag_l = tape.pick_per_row(lsm_l, &diag);

    let sum_v = tape.sum_all(diag_v);
    let sum_l = tape.sum_all(diag_l);
    let total = tape.add(sum_v, sum_l);
    tape.scale(total, -1.0)
}

/// Contrastive loss of a concrete batch (summed, unreduced).
pub fn vtc_loss(batch: &ContrastiveBatch) -> Result<f64> {
    batch.validate()?;
    let mut tape = Tape::new();
    let v = tape.leaf(batch.vision_proj.clone());
    let t = tape.leaf(batch.text_proj.clone());
    let inv = tape.leaf_scalar(1.0 / batch.tau);
    let loss = vtc_loss_t(&mut tape, v, t, inv);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Input("contrastive loss is not finite".into()));
    }
    Ok(value)
}

/// One MLM-corrupted example: the corrupted ids plus per-position labels,
/// -1 everywhere except corrupted positions (which hold the original id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlmExample {
    pub input: TokenSequence,
    pub labels: Vec<i64>,
}

impl MlmExample {
    pub fn labeled_positions(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l >= 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// BERT-style corruption: each maskable (non-special, non-pad) position is
/// independently selected with probability `ratio`; selected positions go
/// to `[MASK]` 80% of the time, a random vocab token 10%, unchanged 10%.
pub fn apply_mlm_masking(
    tokens: &TokenSequence,
    ratio: f64,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MlmExample> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Input(format!("mask ratio must lie in (0, 1), got {ratio}")));
    }
    let mut input = tokens.clone();
    let mut labels = vec![-1i64; tokens.len()];
    for pos in tokens.maskable() {
        if rng.random_range(0.0..1.0) >= ratio {
            continue;
        }
        labels[pos] = tokens.ids[pos] as i64;
        let action: f64 = rng.random_range(0.0..1.0);
        if action < 0.8 {
            input.ids[pos] = MASK;
        } else if action < 0.9 {
            input.ids[pos] = rng.random_range(0..vocab_size);
        }
        // else: keep the original token, label only
    }
    Ok(MlmExample { input, labels })
}

/// Cross-entropy over the vocabulary given logits for the labeled rows.
pub fn mlm_ce(tape: &mut Tape, logits: Var, labels: &[usize]) -> Var {
    let lsm = tape.log_softmax_rows(logits);
    let picked = tape.pick_per_row(lsm, labels);
    let mean = tape.mean_all(picked);
    tape.scale(mean, -1.0)
}

/// MLM loss from per-example fused states. Returns `None` when the batch
/// holds no labeled position (skip: zero loss, zero gradient).
pub fn mlm_loss_from_states(
    fw: &mut Forward<'_>,
    per_example: &[(Var, &MlmExample)],
) -> Option<Var> {
    let w = fw.p("mlm.w");
    let b = fw.p("mlm.b");
    let tape = &mut fw.tape;
    let mut gathered = Vec::new();
    let mut labels = Vec::new();
    for (states, ex) in per_example {
        let positions = ex.labeled_positions();
        if positions.is_empty() {
            continue;
        }
        for &p in &positions {
            labels.push(ex.labels[p] as usize);
        }
        gathered.push(tape.gather_rows(*states, &positions));
    }
    if gathered.is_empty() {
        return None;
    }
    let all = tape.concat_rows(&gathered);
    let scores = tape.matmul(all, w);
    let logits = tape.add_row(scores, b);
    Some(mlm_ce(tape, logits, &labels))
}

/// Hard-negative distribution for one row/column of the similarity matrix:
/// softmax of the tau-scaled scores with the diagonal (and any excluded
/// duplicates) removed. Returns per-index probabilities (0 at exclusions).
pub fn hard_negative_distribution(
    scores: &[f64],
    own_index: usize,
    tau: f64,
    excluded: &[bool],
) -> Vec<f64> {
    let n = scores.len();
    let mut allowed: Vec<bool> = (0..n).map(|j| j != own_index && !excluded[j]).collect();
    if !allowed.iter().any(|&a| a) {
        // degenerate batch (every candidate excluded): fall back to all
        // non-diagonal entries
        for (j, a) in allowed.iter_mut().enumerate() {
            *a = j != own_index;
        }
    }
    let hi = scores
        .iter()
        .zip(&allowed)
        .filter(|(_, &a)| a)
        .map(|(&s, _)| s / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; n];
    let mut z = 0.0;
    for j in 0..n {
        if allowed[j] {
            let e = (scores[j] / tau - hi).exp();
            probs[j] = e;
            z += e;
        }
    }
    for p in &mut probs {
        *p /= z;
    }
    probs
}

fn multinomial(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = j;
            acc += p;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Sampled in-batch hard negatives: one text per video (from the video's
/// similarity row) and one video per text (from the text's column).
#[derive(Debug, Clone)]
pub struct HardNegatives {
    pub text_for_video: Vec<usize>,
    pub video_for_text: Vec<usize>,
}

/// `caption_group[i] == caption_group[j]` marks examples with identical
/// captions; those are excluded from each other's negative pools (they are
/// not negatives at all in heavily duplicated synthetic corpora).
pub fn sample_hard_negatives(
    sims: &Mat,
    tau: f64,
    caption_group: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
) -> Result<HardNegatives> {
    let n = sims.nrows();
    if n < 2 || sims.ncols() != n {
        return Err(Error::Input(format!(
            "hard-negative sampling needs a square similarity matrix with n >= 2, got {}x{}",
            n,
            sims.ncols()
        )));
    }
    let dup = |i: usize, j: usize| caption_group.map(|g| g[i] == g[j]).unwrap_or(false);
    let mut text_for_video = Vec::with_capacity(n);
    let mut video_for_text = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| sims[(i, j)]).collect();
        let excluded: Vec<bool> = (0..n).map(|j| dup(i, j)).collect();
        let probs = hard_negative_distribution(&row, i, tau, &excluded);
        text_for_video.push(multinomial(&probs, rng));
    }
    for i in 0..n {
        let col: Vec<f64> = (0..n).map(|j| sims[(j, i)]).collect();
        let excluded: Vec<bool> = (0..n).map(|j| dup(j, i)).collect();
        let probs = hard_negative_distribution(&col, i, tau, &excluded);
        video_for_text.push(multinomial(&probs, rng));
    }
    Ok(HardNegatives { text_for_video, video_for_text })
}

/// VTM loss on the tape: binary cross-entropy over n positive pairs plus 2n
/// sampled hard-negative pairs, averaged over all 3n logits.
pub fn vtm_loss_t(
    fw: &mut Forward<'_>,
    texts: &[SeqVars],
    visuals: &[Var],
    negatives: &HardNegatives,
) -> Result<Var> {
    let n = texts.len();
    if n < 2 || visuals.len() != n {
        return Err(Error::Input(format!(
            "vtm needs matching texts/visuals with n >= 2, got {n} texts, {} visuals",
            visuals.len()
        )));
    }
    let mut logits = Vec::with_capacity(3 * n);
    let mut targets = Vec::with_capacity(3 * n);
    for i in 0..n {
        let fused: FusedVars = fw.fuse(&texts[i], visuals[i])?;
        logits.push(fused.match_logit);
        targets.push(1.0);
    }
    for i in 0..n {
        let j = negatives.text_for_video[i];
        let fused = fw.fuse(&texts[j], visuals[i])?;
        logits.push(fused.match_logit);
        targets.push(0.0);
    }
    for i in 0..n {
        let j = negatives.video_for_text[i];
        let fused = fw.fuse(&texts[i], visuals[j])?;
        logits.push(fused.match_logit);
        targets.push(0.0);
    }
    let stacked = fw.tape.concat_rows(&logits);
    Ok(fw.tape.bce_with_logits_mean(stacked, &targets))
}
