//! Datasets: video examples, JSON-lines manifests with npy frame payloads,
//! synthetic corpus generators, augmentation, and the SSv2-style task
//! builder.

pub mod augment;
pub mod generate;
pub mod npy;
pub mod ssv2;

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FrameTensor;
use crate::tokenizer::Vocab;

/// Free-form per-video annotations carried through manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Direction-defined videos are marked flip-unsafe by the generator;
    /// augmentation honors the mark.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flip_safe: Option<bool>,
}

/// One video with its frame stack and caption(s).
#[derive(Debug, Clone)]
pub struct VideoExample {
    pub video_id: String,
    pub frames: Vec<FrameTensor>,
    pub captions: Vec<String>,
    pub meta: Option<ExampleMeta>,
}

impl VideoExample {
    pub fn flip_safe(&self) -> bool {
        self.meta
            .as_ref()
            .and_then(|m| m.flip_safe)
            .unwrap_or(true)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<VideoExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Vocabulary over every caption plus meta answer/template/label words,
    /// so queries and gold answers always tokenize.
    pub fn build_vocab(&self) -> Vocab {
        let mut texts: Vec<&str> = Vec::new();
        for ex in &self.examples {
            for c in &ex.captions {
                texts.push(c);
            }
            if let Some(meta) = &ex.meta {
                for t in [&meta.template, &meta.label, &meta.answer].into_iter().flatten() {
                    texts.push(t);
                }
            }
        }
        Vocab::build(texts)
    }
}

/// One manifest line. `frames` is a path (relative to the manifest file)
/// to an npy stack; annotation-only manifests omit it.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRecord {
    video_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<String>,
    captions: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<ExampleMeta>,
}

/// Write a dataset as `{dir}/{name}.jsonl` plus one npy file per video
/// under `{dir}/frames/`.
pub fn save_manifest(dataset: &Dataset, dir: &Path, name: &str) -> Result<PathBuf> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)
        .map_err(|e| Error::io(format!("create {}", frames_dir.display()), e))?;
    let manifest_path = dir.join(format!("{name}.jsonl"));
    let mut out = fs::File::create(&manifest_path)
        .map_err(|e| Error::io(format!("create {}", manifest_path.display()), e))?;
    for ex in &dataset.examples {
        let rel = format!("frames/{}.npy", ex.video_id);
        if !ex.frames.is_empty() {
            let t = ex.frames.len();
            let (h, w, c) = ex.frames[0].pixels.dim();
            let mut flat = Vec::with_capacity(t * h * w * c);
            for f in &ex.frames {
                flat.extend(f.pixels.iter().copied());
            }
            npy::write_f32(&dir.join(&rel), &[t, h, w, c], &flat)?;
        }
        let record = ManifestRecord {
            video_id: ex.video_id.clone(),
            frames: (!ex.frames.is_empty()).then_some(rel),
            captions: ex.captions.clone(),
            meta: ex.meta.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::json("serialize manifest record", e))?;
        writeln!(out, "{line}")
            .map_err(|e| Error::io(format!("write {}", manifest_path.display()), e))?;
    }
    Ok(manifest_path)
}

/// Load a JSON-lines manifest, resolving frame paths relative to it.
/// Rejects duplicate ids, empty caption lists and malformed lines, naming
/// the offending line.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(file);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let record: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| schema_err(format!("invalid JSON: {e}")))?;
        if record.video_id.is_empty() {
            return Err(schema_err("empty video_id".into()));
        }
        if !seen.insert(record.video_id.clone()) {
            return Err(schema_err(format!("duplicate video_id {:?}", record.video_id)));
        }
        if record.captions.is_empty() {
            return Err(schema_err(format!("video {:?} has no captions", record.video_id)));
        }
        let frames = match &record.frames {
            None => Vec::new(),
            Some(rel) => {
                let fpath = base.join(rel);
                if !fpath.exists() {
                    return Err(schema_err(format!("missing frame file {}", fpath.display())));
                }
                load_frames(&fpath)?
            }
        };
        examples.push(VideoExample {
            video_id: record.video_id,
            frames,
            captions: record.captions,
            meta: record.meta,
        });
    }
    Ok(Dataset { examples })
}

fn load_frames(path: &Path) -> Result<Vec<FrameTensor>> {
    let (shape, data) = npy::read_f32(path)?;
    if shape.len() != 4 {
        return Err(Error::Input(format!(
            "{}: expected a (T, H, W, C) stack, got shape {shape:?}",
            path.display()
        )));
    }
    let (t, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let mut frames = Vec::with_capacity(t);
    for i in 0..t {
        let slab = &data[i * h * w * c..(i + 1) * h * w * c];
        let arr = Array3::from_shape_vec((h, w, c), slab.to_vec())
            .map_err(|e| Error::Input(format!("{}: bad frame layout: {e}", path.display())))?;
        frames.push(FrameTensor { pixels: arr });
    }
    Ok(frames)
}

/// Frame-bearing subset check used by training and evaluation entry points.
pub fn require_frames(dataset: &Dataset) -> Result<()> {
    for ex in &dataset.examples {
        if ex.frames.is_empty() {
            return Err(Error::Input(format!(
                "video {:?} has no frames (annotation-only manifest?)",
                ex.video_id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate::{generate_static_corpus, StaticCorpusSpec};

    #[test]
    fn manifest_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = StaticCorpusSpec {
            n_videos: 6,
            frames_per_video: 3,
            image_size: 32,
        };
        let ds = generate_static_corpus(&spec, 77).unwrap();
        save_manifest(&ds, dir.path(), "train").unwrap();
        let loaded = load_manifest(&dir.path().join("train.jsonl")).unwrap();
        assert_eq!(loaded.len(), ds.len());
        for (a, b) in ds.examples.iter().zip(loaded.examples.iter()) {
            assert_eq!(a.video_id, b.video_id);
            assert_eq!(a.captions, b.captions);
            assert_eq!(a.meta, b.meta);
            assert_eq!(a.frames.len(), b.frames.len());
            for (fa, fb) in a.frames.iter().zip(b.frames.iter()) {
                assert_eq!(fa.pixels, fb.pixels);
            }
        }
    }

    #[test]
    fn duplicate_id_is_schema_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("bad.jsonl");
        std::fs::write(
            &manifest,
            concat!(
                "{\"video_id\":\"a\",\"captions\":[\"x\"]}\n",
                "{\"video_id\":\"a\",\"captions\":[\"y\"]}\n"
            ),
        )
        .unwrap();
        match load_manifest(&manifest) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn empty_captions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("bad.jsonl");
        std::fs::write(&manifest, "{\"video_id\":\"a\",\"captions\":[]}\n").unwrap();
        assert!(matches!(load_manifest(&manifest), Err(Error::Schema { line: 1, .. })));
    }

    #[test]
    fn missing_frame_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("bad.jsonl");
        std::fs::write(
            &manifest,
            "{\"video_id\":\"a\",\"frames\":\"frames/a.npy\",\"captions\":[\"x\"]}\n",
        )
        .unwrap();
        match load_manifest(&manifest) {
            Err(Error::Schema { message, .. }) => assert!(message.contains("a.npy")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_json_points_at_line() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("bad.jsonl");
        std::fs::write(&manifest, "{\"video_id\":\"a\",\"captions\":[\"x\"]}\nnot json\n").unwrap();
        assert!(matches!(load_manifest(&manifest), Err(Error::Schema { line: 2, .. })));
    }
}
