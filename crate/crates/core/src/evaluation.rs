//! Retrieval metrics and evaluation protocols: R@K with pessimistic tie
//! handling, per-caption / paragraph / deduplicated-query text-to-video
//! retrieval, QA exact-match accuracy, and the ensemble-comparison sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{predict_with_strategy, sample_inference_frames, EnsembleStrategy};
use crate::model::{EncodedSequence, Model};
use crate::qa::decode_answer;
use crate::tokenizer::TokenSequence;

/// Text-to-video score matrix. Each text row carries the set of its
/// ground-truth video indices (a singleton for ordinary retrieval; several
/// for deduplicated template/label queries).
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub scores: Mat,
    pub gt: Vec<Vec<usize>>,
}

impl SimilarityMatrix {
    pub fn validate(&self) -> Result<()> {
        let (n_text, n_video) = self.scores.dim();
        if self.gt.len() != n_text {
            return Err(Error::Input(format!(
                "gt rows {} != text rows {n_text}",
                self.gt.len()
            )));
        }
        for (i, g) in self.gt.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Input(format!("text row {i} has no ground truth")));
            }
            if g.iter().any(|&v| v >= n_video) {
                return Err(Error::Input(format!("text row {i} has out-of-range gt index")));
            }
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("similarity matrix contains non-finite scores".into()));
        }
        Ok(())
    }
}

/// Percentage of text rows whose ground truth ranks in the top k under
/// descending score. Ties are pessimistic: any non-ground-truth video
/// scoring equal to the best ground-truth video ranks ahead of it.
pub fn recall_at_k(sim: &SimilarityMatrix, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    sim.validate()?;
    let (n_text, n_video) = sim.scores.dim();
    let k = k.min(n_video);
    let mut hits = 0usize;
    for i in 0..n_text {
        let gt = &sim.gt[i];
        let is_gt = |j: usize| gt.contains(&j);
        let best_gt = gt
            .iter()
            .map(|&j| sim.scores[(i, j)])
            .fold(f64::NEG_INFINITY, f64::max);
        let ahead = (0..n_video)
            .filter(|&j| !is_gt(j) && sim.scores[(i, j)] >= best_gt)
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / n_text as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub avg_recall: f64,
    pub n_text: usize,
    pub n_video: usize,
}

pub fn report_from_similarity(sim: &SimilarityMatrix) -> Result<RetrievalReport> {
    let r1 = recall_at_k(sim, 1)?;
    let r5 = recall_at_k(sim, 5)?;
    let r10 = recall_at_k(sim, 10)?;
    Ok(RetrievalReport {
        r1,
        r5,
        r10,
        avg_recall: (r1 + r5 + r10) / 3.0,
        n_text: sim.gt.len(),
        n_video: sim.scores.ncols(),
    })
}

/// How text queries are built from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// One query per caption, ground truth is its own video.
    PerCaption,
    /// All captions of a video joined by [SEP] into one query.
    Paragraph,
    /// Distinct caption strings as queries; every video sharing the string
    /// is ground truth (template/label style tasks).
    DedupCaption,
}

#[derive(Debug, Clone)]
pub struct RetrievalEval {
    pub report: RetrievalReport,
    pub similarity: SimilarityMatrix,
    pub warnings: Vec<String>,
}

struct QuerySet {
    tokens: Vec<TokenSequence>,
    gt: Vec<Vec<usize>>,
}

fn build_queries(model: &Model, dataset: &Dataset, mode: QueryMode) -> Result<(QuerySet, Vec<String>)> {
    let max_len = model.config.max_text_len;
    let mut tokens = Vec::new();
    let mut gt: Vec<Vec<usize>> = Vec::new();
    let mut warnings = Vec::new();
    match mode {
        QueryMode::PerCaption => {
            for (v, ex) in dataset.examples.iter().enumerate() {
                if ex.captions.is_empty() {
                    warnings.push(format!("video {:?} skipped: no captions", ex.video_id));
                    continue;
                }
                for c in &ex.captions {
                    tokens.push(model.vocab.encode(c, max_len)?);
                    gt.push(vec![v]);
                }
            }
        }
        QueryMode::Paragraph => {
            for (v, ex) in dataset.examples.iter().enumerate() {
                if ex.captions.is_empty() {
                    warnings.push(format!("video {:?} skipped: no captions", ex.video_id));
                    continue;
                }
                tokens.push(model.vocab.encode_paragraph(&ex.captions, max_len)?);
                gt.push(vec![v]);
            }
        }
        QueryMode::DedupCaption => {
            let mut by_caption: std::collections::BTreeMap<&str, Vec<usize>> =
                std::collections::BTreeMap::new();
            for (v, ex) in dataset.examples.iter().enumerate() {
                if ex.captions.is_empty() {
                    warnings.push(format!("video {:?} skipped: no captions", ex.video_id));
                    continue;
                }
                for c in &ex.captions {
                    by_caption.entry(c.as_str()).or_default().push(v);
                }
            }
            for (caption, videos) in by_caption {
                tokens.push(model.vocab.encode(caption, max_len)?);
                gt.push(videos);
            }
        }
    }
    if tokens.is_empty() {
        return Err(Error::Input("no usable queries in dataset".into()));
    }
    Ok((QuerySet { tokens, gt }, warnings))
}

fn encode_video_frames(
    model: &Model,
    dataset: &Dataset,
    t_test: usize,
) -> Result<Vec<Vec<EncodedSequence>>> {
    crate::data::require_frames(dataset)?;
    dataset
        .examples
        .par_iter()
        .map(|ex| {
            let idx = sample_inference_frames(ex.frames.len(), t_test)?;
            idx.iter().map(|&i| model.encode_frame(&ex.frames[i])).collect()
        })
        .collect()
}

/// Full text x video retrieval with the chosen strategy over `t_test`
/// uniformly sampled frames. Temporal models score through the temporal
/// encoder (with position interpolation) instead of the strategy.
pub fn evaluate_retrieval(
    model: &Model,
    dataset: &Dataset,
    strategy: EnsembleStrategy,
    t_test: usize,
    mode: QueryMode,
) -> Result<RetrievalEval> {
    if dataset.len() < 2 {
        return Err(Error::Input("retrieval needs at least 2 videos".into()));
    }
    let (queries, warnings) = build_queries(model, dataset, mode)?;
    let video_frames = encode_video_frames(model, dataset, t_test)?;
    let texts: Vec<EncodedSequence> = queries
        .tokens
        .par_iter()
        .map(|t| model.encode_text(t))
        .collect::<Result<_>>()?;

    let n_text = texts.len();
    let n_video = video_frames.len();
    let cells: Vec<f64> = (0..n_text * n_video)
        .into_par_iter()
        .map(|cell| {
            let q = cell / n_video;
            let v = cell % n_video;
            if model.has_temporal() {
                model.predict_temporal(&texts[q], &video_frames[v])
            } else {
                predict_with_strategy(model, &texts[q], &video_frames[v], strategy)
            }
        })
        .collect::<Result<_>>()?;
    let scores = Mat::from_shape_vec((n_text, n_video), cells).expect("grid shape");
    let similarity = SimilarityMatrix { scores, gt: queries.gt };
    let report = report_from_similarity(&similarity)?;
    Ok(RetrievalEval { report, similarity, warnings })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaReport {
    pub accuracy: f64,
    pub n: usize,
}

/// Exact-match accuracy of greedy decoding against gold answers, frames
/// ensembled by concatenation.
pub fn evaluate_qa(model: &Model, dataset: &Dataset, t_test: usize, max_answer_len: usize) -> Result<QaReport> {
    if dataset.is_empty() {
        return Err(Error::Input("qa evaluation needs a non-empty dataset".into()));
    }
    crate::data::require_frames(dataset)?;
    let max_len = model.config.max_text_len;
    let correct: Vec<bool> = dataset
        .examples
        .par_iter()
        .map(|ex| -> Result<bool> {
            let gold = ex
                .meta
                .as_ref()
                .and_then(|m| m.answer.as_deref())
                .ok_or_else(|| Error::Input(format!("video {:?} has no gold answer", ex.video_id)))?;
            let question = ex.captions.first().cloned().unwrap_or_default();
            let q_tokens = model.vocab.encode(&question, max_len)?;
            let text = model.encode_text(&q_tokens)?;
            let idx = sample_inference_frames(ex.frames.len(), t_test)?;
            let frames: Vec<EncodedSequence> = idx
                .iter()
                .map(|&i| model.encode_frame(&ex.frames[i]))
                .collect::<Result<_>>()?;
            let visual = crate::fusion::concat_frame_encodings(&frames)?;
            let fused = model.multimodal_fuse(&text, &visual)?;
            let fused_seq = EncodedSequence {
                states: fused.states,
                mask: text.mask.clone(),
                pooled: vec![],
            };
            let out = decode_answer(model, &fused_seq, max_answer_len)?;
            let prediction = model.vocab.decode_words(&out.ids)?;
            Ok(prediction == gold)
        })
        .collect::<Result<_>>()?;
    let n = correct.len();
    let hits = correct.iter().filter(|&&c| c).count();
    Ok(QaReport {
        accuracy: 100.0 * hits as f64 / n as f64,
        n,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub strategy: String,
    pub t_test: usize,
    pub report: RetrievalReport,
}

/// Evaluate every (strategy, frame count) pair with the same checkpoint;
/// differences across cells come only from the inference strategy.
pub fn compare_ensembles(
    model: &Model,
    dataset: &Dataset,
    frame_counts: &[usize],
    strategies: &[EnsembleStrategy],
    mode: QueryMode,
) -> Result<Vec<GridCell>> {
    if frame_counts.is_empty() || strategies.is_empty() {
        return Err(Error::Input("compare_ensembles needs frame counts and strategies".into()));
    }
    let mut grid = Vec::with_capacity(frame_counts.len() * strategies.len());
    for &t_test in frame_counts {
        for &strategy in strategies {
            let eval = evaluate_retrieval(model, dataset, strategy, t_test, mode)?;
            grid.push(GridCell {
                strategy: strategy.name().to_string(),
                t_test,
                report: eval.report,
            });
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::mat_from_rows;
    use crate::config::ModelConfig;
    use crate::data::generate::{generate_static_corpus, StaticCorpusSpec};
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn single(gt: &[usize]) -> Vec<Vec<usize>> {
        gt.iter().map(|&g| vec![g]).collect()
    }

    #[test]
    fn recall_identity_matrix_is_100() {
        for n in [2usize, 5, 9] {
            let mut scores = Mat::zeros((n, n));
            for i in 0..n {
                scores[(i, i)] = 1.0;
            }
            let sim = SimilarityMatrix {
                scores,
                gt: single(&(0..n).collect::<Vec<_>>()),
            };
            assert_eq!(recall_at_k(&sim, 1).unwrap(), 100.0);
        }
    }

    #[test]
    fn recall_rank_example() {
        let sim = SimilarityMatrix {
            scores: mat_from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2]]),
            gt: single(&[0, 1]),
        };
        assert_eq!(recall_at_k(&sim, 1).unwrap(), 50.0);
        assert_eq!(recall_at_k(&sim, 2).unwrap(), 100.0);
    }

    #[test]
    fn recall_pessimistic_ties() {
        let sim = SimilarityMatrix {
            scores: mat_from_rows(&[vec![0.5, 0.5]]),
            gt: single(&[0]),
        };
        assert_eq!(recall_at_k(&sim, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&sim, 2).unwrap(), 100.0);
    }

    #[test]
    fn recall_k_beyond_videos_saturates() {
        let sim = SimilarityMatrix {
            scores: mat_from_rows(&[vec![0.1, 0.2, 0.3]]),
            gt: single(&[0]),
        };
        assert_eq!(recall_at_k(&sim, 50).unwrap(), 100.0);
        assert!(recall_at_k(&sim, 0).is_err());
    }

    #[test]
    fn recall_multi_gt_uses_best_ranked() {
        let sim = SimilarityMatrix {
            scores: mat_from_rows(&[vec![0.9, 0.8, 0.1, 0.95]]),
            gt: vec![vec![0, 2]],
        };
        // best gt (index 0, score 0.9) has one non-gt ahead (0.95)
        assert_eq!(recall_at_k(&sim, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&sim, 2).unwrap(), 100.0);
    }

    /// Brute-force oracle: sort with the adversarial tie order and scan.
    fn recall_oracle(sim: &SimilarityMatrix, k: usize) -> f64 {
        let (n_text, n_video) = sim.scores.dim();
        let k = k.min(n_video);
        let mut hits = 0;
        for i in 0..n_text {
            let mut order: Vec<usize> = (0..n_video).collect();
            // descending score; non-gt before gt on equal scores
            order.sort_by(|&a, &b| {
                let sa = sim.scores[(i, a)];
                let sb = sim.scores[(i, b)];
                sb.partial_cmp(&sa)
                    .unwrap()
                    .then_with(|| sim.gt[i].contains(&a).cmp(&sim.gt[i].contains(&b)))
            });
            if order[..k].iter().any(|v| sim.gt[i].contains(v)) {
                hits += 1;
            }
        }
        100.0 * hits as f64 / n_text as f64
    }

    #[test]
    fn recall_matches_bruteforce_oracle_on_random_matrices() {
        let mut rng = stream_rng(7, Stream::Generator);
        for trial in 0..1000 {
            let n_text = rng.random_range(1..=20);
            let n_video = rng.random_range(1..=20);
            // quantized scores so ties actually happen
            let scores = Mat::from_shape_fn((n_text, n_video), |_| {
                (rng.random_range(0..8) as f64) / 4.0
            });
            let gt: Vec<Vec<usize>> = (0..n_text)
                .map(|_| {
                    let n_gt = rng.random_range(1..=n_video.min(3));
                    let mut g: Vec<usize> =
                        (0..n_gt).map(|_| rng.random_range(0..n_video)).collect();
                    g.sort();
                    g.dedup();
                    g
                })
                .collect();
            let sim = SimilarityMatrix { scores, gt };
            for k in [1usize, 2, 5, 10] {
                let fast = recall_at_k(&sim, k).unwrap();
                let slow = recall_oracle(&sim, k);
                assert_eq!(fast, slow, "trial {trial} k={k}");
            }
        }
    }

    #[test]
    fn recall_monotone_in_k_and_avg_is_mean() {
        let mut rng = stream_rng(8, Stream::Generator);
        let scores = Mat::from_shape_fn((12, 15), |_| rng.random_range(-1.0..1.0));
        let gt: Vec<Vec<usize>> = (0..12).map(|_| vec![rng.random_range(0..15)]).collect();
        let sim = SimilarityMatrix { scores, gt };
        let report = report_from_similarity(&sim).unwrap();
        assert!(report.r1 <= report.r5 && report.r5 <= report.r10);
        let mean = (report.r1 + report.r5 + report.r10) / 3.0;
        assert!((report.avg_recall - mean).abs() < 1e-12);
    }

    fn tiny_world() -> (Model, Dataset) {
        let spec = StaticCorpusSpec {
            n_videos: 6,
            frames_per_video: 4,
            image_size: 32,
        };
        let ds = generate_static_corpus(&spec, 11).unwrap();
        let vocab = ds.build_vocab();
        let model = Model::new(ModelConfig::default(), vocab, 13).unwrap();
        (model, ds)
    }

    #[test]
    fn paragraph_mode_equals_per_caption_for_single_captions() {
        let (model, ds) = tiny_world();
        let a = evaluate_retrieval(&model, &ds, EnsembleStrategy::Mean, 2, QueryMode::PerCaption)
            .unwrap();
        let b = evaluate_retrieval(&model, &ds, EnsembleStrategy::Mean, 2, QueryMode::Paragraph)
            .unwrap();
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn single_frame_collapse_across_strategies() {
        let (model, ds) = tiny_world();
        let reports: Vec<RetrievalReport> = EnsembleStrategy::ALL
            .iter()
            .map(|&s| {
                evaluate_retrieval(&model, &ds, s, 1, QueryMode::PerCaption)
                    .unwrap()
                    .report
            })
            .collect();
        for r in &reports[1..] {
            assert_eq!(*r, reports[0]);
        }
    }

    #[test]
    fn untrained_scorer_near_chance() {
        // 64 videos, untrained weights: R@1 within [0, 10] around 1.6% chance
        let spec = StaticCorpusSpec {
            n_videos: 64,
            frames_per_video: 2,
            image_size: 32,
        };
        let ds = generate_static_corpus(&spec, 17).unwrap();
        let vocab = ds.build_vocab();
        let model = Model::new(ModelConfig::default(), vocab, 19).unwrap();
        let eval =
            evaluate_retrieval(&model, &ds, EnsembleStrategy::Concat, 1, QueryMode::PerCaption)
                .unwrap();
        assert!(
            (0.0..=10.0).contains(&eval.report.r1),
            "untrained R@1 = {}",
            eval.report.r1
        );
    }

    #[test]
    fn grid_has_all_cells_and_collapses_at_one_frame() {
        let (model, ds) = tiny_world();
        let grid = compare_ensembles(
            &model,
            &ds,
            &[1],
            &EnsembleStrategy::ALL,
            QueryMode::PerCaption,
        )
        .unwrap();
        assert_eq!(grid.len(), 4);
        for cell in &grid[1..] {
            assert_eq!(cell.report, grid[0].report);
        }
    }
}
