//! Python bindings: the model with its encoders and scoring strategies,
//! frame sampling, aggregation, recall and the learning-rate schedule.
//! Frames cross the boundary as flat row-major `f32` lists
//! (`T * H * W * C`); matrices come back as nested lists.
//!
//! Build: `cargo build --release -p monoframe-py`, then copy
//! `target/release/libmonoframe_py.so` next to your script as
//! `monoframe.so` (`python/smoke_test.py` does this automatically).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use monoframe::autograd::Mat;
use monoframe::checkpoint;
use monoframe::config::ModelConfig;
use monoframe::data::augment::AugmentOptions;
use monoframe::data::generate::{
    generate_static_corpus, generate_temporal_corpus, StaticCorpusSpec, TemporalCorpusSpec,
};
use monoframe::data::{load_manifest, save_manifest};
use monoframe::error::Error as CoreError;
use monoframe::evaluation::{
    evaluate_retrieval, recall_at_k as core_recall, QueryMode, SimilarityMatrix,
};
use monoframe::fusion::{
    aggregate_scores as core_aggregate, predict_with_strategy, sample_inference_frames as core_sample,
    Aggregator, EnsembleStrategy,
};
use monoframe::model::{EncodedSequence, FrameTensor, Model, ProjectionHead};
use monoframe::temporal::interpolate_temporal_encoding;
use monoframe::training::{
    lr_at_step as core_lr, run_training, Objective, ScheduleConfig, TrainOptions,
};

fn py_err(e: CoreError) -> PyErr {
    match e {
        CoreError::Io { .. } | CoreError::Divergence { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn frames_from_flat(config: &ModelConfig, flat: &[f32], n_frames: usize) -> PyResult<Vec<FrameTensor>> {
    let per = config.image_size * config.image_size * config.channels;
    if n_frames == 0 || flat.len() != per * n_frames {
        return Err(PyValueError::new_err(format!(
            "expected {n_frames} frames x {per} values, got {}",
            flat.len()
        )));
    }
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let slab = &flat[t * per..(t + 1) * per];
        let arr = ndarray_from_slab(config, slab);
        frames.push(FrameTensor { pixels: arr });
    }
    Ok(frames)
}

fn ndarray_from_slab(config: &ModelConfig, slab: &[f32]) -> ndarray::Array3<f32> {
    let (h, w, c) = (config.image_size, config.image_size, config.channels);
    ndarray::Array3::from_shape_vec((h, w, c), slab.to_vec()).expect("slab length checked")
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// The single-frame video-text model.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    /// Fresh model over the vocabulary of `captions`. `config_json`
    /// overrides individual config fields.
    #[new]
    #[pyo3(signature = (captions, seed = 0, config_json = None))]
    fn new(captions: Vec<String>, seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let config: ModelConfig = match config_json {
            Some(j) => serde_json::from_str(j)
                .map_err(|e| PyValueError::new_err(format!("config_json: {e}")))?,
            None => ModelConfig::default(),
        };
        let vocab = monoframe::tokenizer::Vocab::build(captions.iter().map(|s| s.as_str()));
        let inner = Model::new(config, vocab, seed).map_err(py_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: checkpoint::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(py_err)
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.config)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn vocab(&self) -> Vec<String> {
        self.inner.vocab.words().to_vec()
    }

    fn has_temporal(&self) -> bool {
        self.inner.has_temporal()
    }

    fn has_qa(&self) -> bool {
        self.inner.has_qa()
    }

    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    /// Encoded states of one frame (rows: CLS then patches).
    fn encode_frame(&self, frame: Vec<f32>) -> PyResult<Vec<Vec<f64>>> {
        let frames = frames_from_flat(&self.inner.config, &frame, 1)?;
        let enc = self.inner.encode_frame(&frames[0]).map_err(py_err)?;
        Ok(mat_to_rows(&enc.states))
    }

    /// Encoded states of a caption (rows: CLS, words, SEP, padding).
    fn encode_text(&self, caption: &str) -> PyResult<Vec<Vec<f64>>> {
        let tokens = self
            .inner
            .vocab
            .encode(caption, self.inner.config.max_text_len)
            .map_err(py_err)?;
        let enc = self.inner.encode_text(&tokens).map_err(py_err)?;
        Ok(mat_to_rows(&enc.states))
    }

    /// Unit-norm contrastive projections and their dot product.
    fn similarity(&self, caption: &str, frame: Vec<f32>) -> PyResult<f64> {
        let tokens = self
            .inner
            .vocab
            .encode(caption, self.inner.config.max_text_len)
            .map_err(py_err)?;
        let text = self.inner.encode_text(&tokens).map_err(py_err)?;
        let frames = frames_from_flat(&self.inner.config, &frame, 1)?;
        let vis = self.inner.encode_frame(&frames[0]).map_err(py_err)?;
        let t = self.inner.project_pool(&text, ProjectionHead::Text).map_err(py_err)?;
        let v = self.inner.project_pool(&vis, ProjectionHead::Vision).map_err(py_err)?;
        Ok(t.iter().zip(v.iter()).map(|(a, b)| a * b).sum())
    }

    /// Video-level match score: `t_test` uniformly sampled frames under the
    /// given strategy (or through the temporal encoder when present).
    #[pyo3(signature = (caption, frames, n_frames, t_test = 4, strategy = "concat"))]
    fn score(
        &self,
        caption: &str,
        frames: Vec<f32>,
        n_frames: usize,
        t_test: usize,
        strategy: &str,
    ) -> PyResult<f64> {
        let frames = frames_from_flat(&self.inner.config, &frames, n_frames)?;
        let tokens = self
            .inner
            .vocab
            .encode(caption, self.inner.config.max_text_len)
            .map_err(py_err)?;
        let text = self.inner.encode_text(&tokens).map_err(py_err)?;
        let idx = core_sample(frames.len(), t_test).map_err(py_err)?;
        let encoded: Vec<EncodedSequence> = idx
            .iter()
            .map(|&i| self.inner.encode_frame(&frames[i]))
            .collect::<Result<_, _>>()
            .map_err(py_err)?;
        if self.inner.has_temporal() {
            return self.inner.predict_temporal(&text, &encoded).map_err(py_err);
        }
        let strategy = EnsembleStrategy::parse(strategy).map_err(py_err)?;
        predict_with_strategy(&self.inner, &text, &encoded, strategy).map_err(py_err)
    }

    /// Train on a manifest; returns per-step total losses.
    #[pyo3(signature = (manifest, objectives, epochs = 2, batch_size = 8, peak_lr = 1e-3, seed = 0, frames_per_step = 1, augment = false))]
    #[allow(clippy::too_many_arguments)]
    fn train_on_manifest(
        &mut self,
        manifest: PathBuf,
        objectives: Vec<String>,
        epochs: usize,
        batch_size: usize,
        peak_lr: f64,
        seed: u64,
        frames_per_step: usize,
        augment: bool,
    ) -> PyResult<Vec<f64>> {
        let dataset = load_manifest(&manifest).map_err(py_err)?;
        let mut set = BTreeSet::new();
        for o in &objectives {
            set.insert(match o.as_str() {
                "vtc" => Objective::Vtc,
                "mlm" => Objective::Mlm,
                "vtm" => Objective::Vtm,
                "qa" => Objective::Qa,
                other => return Err(PyValueError::new_err(format!("unknown objective {other}"))),
            });
        }
        if set.contains(&Objective::Qa) {
            self.inner.add_qa_decoder(seed);
        }
        if frames_per_step > 1 {
            self.inner.add_temporal(seed);
        }
        let spe = monoframe::training::steps_per_epoch(dataset.len(), batch_size, 2).max(1);
        let opts = TrainOptions {
            objectives: set,
            schedule: ScheduleConfig {
                peak_lr,
                min_lr: peak_lr / 100.0,
                warmup_steps: (epochs * spe / 20).min(20),
                total_steps: (epochs * spe).max(1),
                ..ScheduleConfig::default()
            },
            batch_size,
            epochs,
            frames_per_step,
            augment: AugmentOptions {
                enabled: augment,
                ..AugmentOptions::default()
            },
            grad_clip: 1.0,
        };
        let report = run_training(&mut self.inner, &dataset, &opts, seed, None).map_err(py_err)?;
        Ok(report.records.iter().map(|r| r.loss_total).collect())
    }

    /// Retrieval report on a manifest: (r1, r5, r10, avg_recall).
    #[pyo3(signature = (manifest, t_test = 4, strategy = "concat", query_mode = "per_caption"))]
    fn evaluate_retrieval(
        &self,
        manifest: PathBuf,
        t_test: usize,
        strategy: &str,
        query_mode: &str,
    ) -> PyResult<(f64, f64, f64, f64)> {
        let dataset = load_manifest(&manifest).map_err(py_err)?;
        let strategy = EnsembleStrategy::parse(strategy).map_err(py_err)?;
        let mode = match query_mode {
            "per_caption" => QueryMode::PerCaption,
            "paragraph" => QueryMode::Paragraph,
            "dedup_caption" => QueryMode::DedupCaption,
            other => return Err(PyValueError::new_err(format!("unknown query_mode {other}"))),
        };
        let eval = evaluate_retrieval(&self.inner, &dataset, strategy, t_test, mode).map_err(py_err)?;
        Ok((
            eval.report.r1,
            eval.report.r5,
            eval.report.r10,
            eval.report.avg_recall,
        ))
    }
}

/// Midpoint-rule uniform frame sampling.
#[pyfunction]
fn sample_inference_frames(total_frames: usize, t_test: usize) -> PyResult<Vec<usize>> {
    core_sample(total_frames, t_test).map_err(py_err)
}

/// Late-fusion aggregation: kind is one of lse | max | mean.
#[pyfunction]
fn aggregate_scores(scores: Vec<f64>, kind: &str) -> PyResult<f64> {
    let agg = match kind {
        "lse" => Aggregator::Lse,
        "max" => Aggregator::Max,
        "mean" => Aggregator::Mean,
        other => return Err(PyValueError::new_err(format!("unknown aggregator {other}"))),
    };
    core_aggregate(&scores, agg).map_err(py_err)
}

/// R@k percentage with pessimistic ties; `gt` lists the ground-truth video
/// indices per text row.
#[pyfunction]
fn recall_at_k(scores: Vec<Vec<f64>>, gt: Vec<Vec<usize>>, k: usize) -> PyResult<f64> {
    let n_text = scores.len();
    let n_video = scores.first().map(|r| r.len()).unwrap_or(0);
    if n_text == 0 || n_video == 0 {
        return Err(PyValueError::new_err("scores must be a non-empty matrix"));
    }
    if scores.iter().any(|r| r.len() != n_video) {
        return Err(PyValueError::new_err("ragged score matrix"));
    }
    let flat: Vec<f64> = scores.into_iter().flatten().collect();
    let sim = SimilarityMatrix {
        scores: Mat::from_shape_vec((n_text, n_video), flat).expect("checked shape"),
        gt,
    };
    core_recall(&sim, k).map_err(py_err)
}

/// Endpoint-aligned linear interpolation of temporal position rows.
#[pyfunction]
fn interpolate_rows(table: Vec<Vec<f64>>, t_test: usize) -> PyResult<Vec<Vec<f64>>> {
    let rows = table.len();
    let cols = table.first().map(|r| r.len()).unwrap_or(0);
    if table.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged table"));
    }
    let flat: Vec<f64> = table.into_iter().flatten().collect();
    let m = Mat::from_shape_vec((rows, cols), flat).expect("checked shape");
    let out = interpolate_temporal_encoding(&m, t_test).map_err(py_err)?;
    Ok(mat_to_rows(&out))
}

/// Warmup + cosine learning rate.
#[pyfunction]
#[pyo3(signature = (step, peak_lr, min_lr, warmup_steps, total_steps))]
fn lr_at_step(step: usize, peak_lr: f64, min_lr: f64, warmup_steps: usize, total_steps: usize) -> f64 {
    core_lr(
        step,
        &ScheduleConfig {
            peak_lr,
            min_lr,
            warmup_steps,
            total_steps,
            ..ScheduleConfig::default()
        },
    )
}

/// Generate the static synthetic corpus; writes `{out}/{name}.jsonl` and
/// frame payloads, returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, name = "train", n_videos = 64, frames_per_video = 8, image_size = 32, seed = 0))]
fn gen_static_corpus(
    out_dir: PathBuf,
    name: &str,
    n_videos: usize,
    frames_per_video: usize,
    image_size: usize,
    seed: u64,
) -> PyResult<PathBuf> {
    let spec = StaticCorpusSpec {
        n_videos,
        frames_per_video,
        image_size,
    };
    let ds = generate_static_corpus(&spec, seed).map_err(py_err)?;
    ensure_dir(&out_dir)?;
    save_manifest(&ds, &out_dir, name).map_err(py_err)
}

/// Generate the temporal-order synthetic corpus.
#[pyfunction]
#[pyo3(signature = (out_dir, name = "train", n_videos = 32, frames_per_video = 8, image_size = 32, seed = 0))]
fn gen_temporal_corpus(
    out_dir: PathBuf,
    name: &str,
    n_videos: usize,
    frames_per_video: usize,
    image_size: usize,
    seed: u64,
) -> PyResult<PathBuf> {
    let spec = TemporalCorpusSpec {
        n_videos,
        frames_per_video,
        image_size,
    };
    let ds = generate_temporal_corpus(&spec, seed).map_err(py_err)?;
    ensure_dir(&out_dir)?;
    save_manifest(&ds, &out_dir, name).map_err(py_err)
}

fn ensure_dir(dir: &Path) -> PyResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| PyRuntimeError::new_err(format!("create {}: {e}", dir.display())))
}

#[pymodule(name = "monoframe")]
fn monoframe_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(sample_inference_frames, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_scores, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_rows, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at_step, m)?)?;
    m.add_function(wrap_pyfunction!(gen_static_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(gen_temporal_corpus, m)?)?;
    Ok(())
}
