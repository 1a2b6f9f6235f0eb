//! Open-ended answer generation: a multi-modal decoder with the same
//! architecture as the multi-modal encoder (plus a causal self-attention
//! mask), cross-attending to the fused question states and decoding
//! greedily from `[CLS]`. Multiple-choice prediction reuses the retrieval
//! scorer over candidate captions.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::fusion::predict_early_fusion;
use crate::model::{key_mask, EncodedSequence, Forward, Model};
use crate::tokenizer::{TokenSequence, CLS, MASK, PAD, SEP};

impl Forward<'_> {
    /// Decoder stack over a token prefix, cross-attending to fused states.
    /// Returns per-position vocabulary logits.
    pub fn qa_decoder_logits(
        &mut self,
        prefix_ids: &[usize],
        fused_states: Var,
        fused_mask: &[bool],
    ) -> Result<Var> {
        if !self.model().has_qa() {
            return Err(Error::Config("model has no answer decoder parameters".into()));
        }
        let c = self.config();
        if prefix_ids.is_empty() || prefix_ids.len() > c.max_text_len {
            return Err(Error::Input(format!(
                "decoder prefix length {} out of range 1..={}",
                prefix_ids.len(),
                c.max_text_len
            )));
        }
        let layers = c.multimodal_layers;
        let len = prefix_ids.len();
        let tok = self.p("text.tok");
        let emb = self.tape.gather_rows(tok, prefix_ids);
        let pos_table = self.p("text.pos");
        let pos = self.tape.gather_rows(pos_table, &(0..len).collect::<Vec<_>>());
        let mut x = self.tape.add(emb, pos);

        let causal = key_mask(len, &vec![true; len], true);
        let cross = key_mask(len, fused_mask, false);
        for i in 0..layers {
            x = self.cross_block(x, fused_states, Some(&causal), Some(&cross), &format!("qa.block{i}"));
        }
        let x = self.layer_norm_block(x, "qa.ln_out");
        let w = self.p("qa.lm.w");
        let b = self.p("qa.lm.b");
        let scores = self.tape.matmul(x, w);
        Ok(self.tape.add_row(scores, b))
    }
}

/// Teacher-forced decoder cross-entropy for one example: the prefix is
/// `[CLS] a1 .. ak` and the targets are `a1 .. ak [SEP]`.
pub fn qa_loss_t(
    fw: &mut Forward<'_>,
    answer_ids: &[usize],
    fused_states: Var,
    fused_mask: &[bool],
) -> Result<Var> {
    if answer_ids.is_empty() {
        return Err(Error::Input("answer must have at least one token".into()));
    }
    let mut prefix = vec![CLS];
    prefix.extend_from_slice(answer_ids);
    let mut targets: Vec<usize> = answer_ids.to_vec();
    targets.push(SEP);
    let logits = fw.qa_decoder_logits(&prefix, fused_states, fused_mask)?;
    Ok(crate::objectives::mlm_ce(&mut fw.tape, logits, &targets))
}

/// Greedy decoding from `[CLS]`; stops at `[SEP]` or `max_len` generated
/// tokens. `[PAD]`, `[CLS]` and `[MASK]` are never emitted, and `[SEP]` is
/// suppressed on the first step so answers are non-empty.
pub fn decode_answer(
    model: &Model,
    question_fused: &EncodedSequence,
    max_len: usize,
) -> Result<TokenSequence> {
    if max_len < 1 {
        return Err(Error::Input("max_len must be at least 1".into()));
    }
    let budget = max_len.min(model.config.max_text_len - 1);
    let mut prefix = vec![CLS];
    let mut generated = Vec::new();
    for step in 0..budget {
        let mut fw = model.forward();
        let fused = fw.tape.leaf(question_fused.states.clone());
        let logits = fw.qa_decoder_logits(&prefix, fused, &question_fused.mask)?;
        let row = fw.tape.value(logits);
        let last = row.nrows() - 1;
        let mut best = None;
        for id in 0..model.config.vocab_size {
            if id == PAD || id == CLS || id == MASK {
                continue;
            }
            if id == SEP && step == 0 {
                continue;
            }
            let score = row[(last, id)];
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, id));
            }
        }
        let (_, id) = best.expect("vocabulary has at least one emittable token");
        if id == SEP {
            break;
        }
        generated.push(id);
        prefix.push(id);
    }
    let mask = vec![true; generated.len()];
    Ok(TokenSequence { ids: generated, mask })
}

/// Score every candidate caption against the video with the early-fusion
/// retrieval scorer; ties break toward the lowest index.
pub fn multiple_choice_predict(
    model: &Model,
    frame_encodings: &[EncodedSequence],
    candidates: &[TokenSequence],
) -> Result<usize> {
    if candidates.len() < 2 {
        return Err(Error::Input(format!(
            "multiple choice needs at least 2 candidates, got {}",
            candidates.len()
        )));
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        let text = model.encode_text(cand)?;
        let score = predict_early_fusion(model, &text, frame_encodings)?;
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, i));
        }
    }
    Ok(best.expect("non-empty candidates").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::FrameTensor;
    use crate::rng::{stream_rng, Stream};
    use crate::tokenizer::Vocab;
    use ndarray::Array3;
    use rand::Rng;

    fn qa_model() -> Model {
        let vocab = Vocab::build(["what color is the shape", "red", "green", "blue", "yellow"]);
        let mut m = Model::new(ModelConfig::tiny(), vocab, 41).unwrap();
        m.add_qa_decoder(42);
        m
    }

    fn random_frame(config: &ModelConfig, seed: u64) -> FrameTensor {
        let mut rng = stream_rng(seed, Stream::Generator);
        FrameTensor {
            pixels: Array3::from_shape_fn(
                (config.image_size, config.image_size, config.channels),
                |_| rng.random_range(0.0..1.0),
            ),
        }
    }

    fn fused_question(m: &Model, seed: u64) -> EncodedSequence {
        let q = m.vocab.encode("what color is the shape", m.config.max_text_len).unwrap();
        let text = m.encode_text(&q).unwrap();
        let vis = m.encode_frame(&random_frame(&m.config, seed)).unwrap();
        let fused = m.multimodal_fuse(&text, &vis).unwrap();
        EncodedSequence {
            states: fused.states,
            mask: text.mask.clone(),
            pooled: vec![],
        }
    }

    #[test]
    fn decoder_initializes_from_multimodal_weights() {
        let m = qa_model();
        for name in ["block0.attn.wq", "block0.xattn.wk", "ln_out.g"] {
            assert_eq!(m.params.get(&format!("qa.{name}")), m.params.get(&format!("mm.{name}")));
        }
        assert!(m.params.contains("qa.lm.w"));
    }

    #[test]
    fn max_len_one_generates_exactly_one_token() {
        let m = qa_model();
        let fused = fused_question(&m, 1);
        let out = decode_answer(&m, &fused, 1).unwrap();
        assert_eq!(out.ids.len(), 1);
        assert!(out.ids[0] >= crate::tokenizer::NUM_SPECIAL);
        assert!(decode_answer(&m, &fused, 0).is_err());
    }

    #[test]
    fn decoding_is_deterministic_and_never_pads() {
        let m = qa_model();
        let fused = fused_question(&m, 2);
        let a = decode_answer(&m, &fused, 5).unwrap();
        let b = decode_answer(&m, &fused, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.ids.len() <= 5);
        assert!(a.ids.iter().all(|&id| id != PAD));
    }

    #[test]
    fn multiple_choice_argmax_and_ties() {
        // direct argmax checks on the documented rule
        let scores = [0.1, 0.9, 0.3, 0.2, 0.4];
        let best = scores
            .iter()
            .enumerate()
            .fold(None::<(f64, usize)>, |acc, (i, &s)| match acc {
                Some((bs, bi)) if bs >= s => Some((bs, bi)),
                _ => Some((s, i)),
            })
            .unwrap()
            .1;
        assert_eq!(best, 1);

        let m = qa_model();
        let frames = vec![m.encode_frame(&random_frame(&m.config, 3)).unwrap()];
        let candidates: Vec<TokenSequence> = ["red", "green", "blue"]
            .iter()
            .map(|s| m.vocab.encode(s, m.config.max_text_len).unwrap())
            .collect();
        let chosen = multiple_choice_predict(&m, &frames, &candidates).unwrap();
        // permuting candidates must select the same content
        let perm = [2usize, 0, 1];
        let permuted: Vec<TokenSequence> = perm.iter().map(|&i| candidates[i].clone()).collect();
        let chosen_p = multiple_choice_predict(&m, &frames, &permuted).unwrap();
        assert_eq!(candidates[chosen], permuted[chosen_p]);
        assert!(multiple_choice_predict(&m, &frames, &candidates[..1]).is_err());
    }

    #[test]
    fn qa_loss_grads_pass_finite_differences() {
        let model = qa_model();
        let q = model
            .vocab
            .encode("what color is the shape", model.config.max_text_len)
            .unwrap();
        let frame = random_frame(&model.config, 4);
        let answer = vec![model.vocab.word_id("red").unwrap()];

        let run = |m: &Model| {
            let mut fw = m.forward();
            let text = fw.encode_text(&q).unwrap();
            let vis = fw.encode_frame(&frame).unwrap();
            let fused = fw.fuse(&text, vis.states).unwrap();
            let loss = qa_loss_t(&mut fw, &answer, fused.states, &q.mask).unwrap();
            fw.tape.scalar(loss)
        };

        let mut fw = model.forward();
        let text = fw.encode_text(&q).unwrap();
        let vis = fw.encode_frame(&frame).unwrap();
        let fused = fw.fuse(&text, vis.states).unwrap();
        let loss = qa_loss_t(&mut fw, &answer, fused.states, &q.mask).unwrap();
        let grads = fw.grads(loss);

        let h = 1e-5;
        // spot-check a few parameter groups end to end
        for name in ["qa.lm.w", "qa.block0.xattn.wq", "text.tok", "vision.patch.w"] {
            let grad = &grads[name];
            let base = model.params.get(name);
            let (rows, cols) = base.dim();
            let mut rng = stream_rng(5, Stream::Generator);
            for _ in 0..20 {
                let i = rng.random_range(0..rows);
                let j = rng.random_range(0..cols);
                let mut up = model.clone();
                up.params.get_mut(name)[(i, j)] += h;
                let mut down = model.clone();
                down.params.get_mut(name)[(i, j)] -= h;
                let num = (run(&up) - run(&down)) / (2.0 * h);
                let ana = grad[(i, j)];
                let denom = num.abs().max(ana.abs()).max(1e-6);
                assert!(
                    (num - ana).abs() / denom <= 1e-4,
                    "{name}({i},{j}): fd {num} vs grad {ana}"
                );
            }
        }
    }
}
