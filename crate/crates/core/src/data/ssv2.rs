//! SSv2-style task construction: template retrieval (object-masked action
//! phrases as queries) and label retrieval (filled phrases as queries),
//! built from annotation records with `{id, template, label, placeholders}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SSv2Annotation {
    pub id: String,
    pub template: String,
    pub label: String,
    #[serde(default)]
    pub placeholders: Vec<String>,
    pub split: Split,
}

/// Raw record in the public annotation layout (no split field; the split
/// comes from which file the record sits in).
#[derive(Debug, Clone, Deserialize)]
struct RawAnnotation {
    id: serde_json::Value,
    template: String,
    label: String,
    #[serde(default)]
    placeholders: Vec<String>,
}

/// Parse one public-layout annotation file (a JSON list) into records of
/// the given split.
pub fn parse_annotation_file(path: &Path, split: Split) -> Result<Vec<SSv2Annotation>> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let raw: Vec<RawAnnotation> = serde_json::from_str(&text)
        .map_err(|e| Error::json(format!("parse {}", path.display()), e))?;
    Ok(raw
        .into_iter()
        .map(|r| SSv2Annotation {
            id: match r.id {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            },
            template: r.template,
            label: r.label,
            placeholders: r.placeholders,
            split,
        })
        .collect())
}

/// `label` must equal `template` with every bracketed placeholder
/// substituted (case-insensitive, whitespace-collapsed).
pub fn annotation_is_consistent(ann: &SSv2Annotation) -> bool {
    let mut filled = String::new();
    let mut rest = ann.template.as_str();
    let mut ph = ann.placeholders.iter();
    loop {
        match rest.find('[') {
            None => {
                filled.push_str(rest);
                break;
            }
            Some(open) => {
                let Some(close_rel) = rest[open..].find(']') else {
                    return false;
                };
                filled.push_str(&rest[..open]);
                match ph.next() {
                    Some(p) => filled.push_str(p),
                    None => return false,
                }
                rest = &rest[open + close_rel + 1..];
            }
        }
    }
    if ph.next().is_some() {
        return false;
    }
    normalize(&filled) == normalize(&ann.label)
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskEntry {
    pub video_id: String,
    pub caption: String,
    pub template: String,
    pub label: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Ssv2Tasks {
    pub template_train: Vec<TaskEntry>,
    pub template_test: Vec<TaskEntry>,
    pub label_train: Vec<TaskEntry>,
    pub label_test: Vec<TaskEntry>,
    /// Distinct template queries over the test set, sorted.
    pub template_queries: Vec<String>,
    /// Deduplicated label queries over the test set, sorted.
    pub label_queries: Vec<String>,
    pub warnings: Vec<String>,
    /// Malformed annotations rejected with a diagnostic.
    pub rejected: Vec<String>,
}

/// Build both retrieval tasks. For every distinct validation template,
/// `per_template` videos are sampled (seeded, without replacement); a
/// template with fewer videos contributes all of them plus a warning.
/// Training annotations pass through unchanged.
pub fn build_ssv2_tasks(
    annotations: &[SSv2Annotation],
    per_template: usize,
    seed: u64,
) -> Result<Ssv2Tasks> {
    if per_template == 0 {
        return Err(Error::Input("per_template must be at least 1".into()));
    }
    let mut tasks = Ssv2Tasks::default();
    let mut valid: Vec<&SSv2Annotation> = Vec::new();
    for ann in annotations {
        if annotation_is_consistent(ann) {
            valid.push(ann);
        } else {
            tasks.rejected.push(format!(
                "annotation {}: label {:?} does not match template {:?} with placeholders {:?}",
                ann.id, ann.label, ann.template, ann.placeholders
            ));
        }
    }

    // training passes through unchanged, in input order
    for ann in valid.iter().filter(|a| a.split == Split::Train) {
        tasks.template_train.push(TaskEntry {
            video_id: ann.id.clone(),
            caption: ann.template.clone(),
            template: ann.template.clone(),
            label: ann.label.clone(),
        });
        tasks.label_train.push(TaskEntry {
            video_id: ann.id.clone(),
            caption: ann.label.clone(),
            template: ann.template.clone(),
            label: ann.label.clone(),
        });
    }

    // group validation videos by template (sorted template order)
    let mut by_template: BTreeMap<&str, Vec<&SSv2Annotation>> = BTreeMap::new();
    for ann in valid.iter().filter(|a| a.split == Split::Validation) {
        by_template.entry(ann.template.as_str()).or_default().push(ann);
    }
    if by_template.is_empty() {
        return Err(Error::Input("no validation annotations to build the test sets from".into()));
    }

    let mut rng = stream_rng(seed, Stream::Generator);
    for (template, mut candidates) in by_template {
        candidates.sort_by(|a, b| a.id.cmp(&b.id));
        let chosen: Vec<&SSv2Annotation> = if candidates.len() <= per_template {
            if candidates.len() < per_template {
                tasks.warnings.push(format!(
                    "template {template:?} has only {} validation videos (wanted {per_template}); taking all",
                    candidates.len()
                ));
            }
            candidates
        } else {
            // partial Fisher-Yates, then restore id order
            let mut pool = candidates;
            for i in 0..per_template {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(per_template);
            pool.sort_by(|a, b| a.id.cmp(&b.id));
            pool
        };
        for ann in chosen {
            tasks.template_test.push(TaskEntry {
                video_id: ann.id.clone(),
                caption: ann.template.clone(),
                template: ann.template.clone(),
                label: ann.label.clone(),
            });
            tasks.label_test.push(TaskEntry {
                video_id: ann.id.clone(),
                caption: ann.label.clone(),
                template: ann.template.clone(),
                label: ann.label.clone(),
            });
        }
    }

    let mut template_queries: Vec<String> =
        tasks.template_test.iter().map(|e| e.template.clone()).collect();
    template_queries.sort();
    template_queries.dedup();
    tasks.template_queries = template_queries;

    let mut label_queries: Vec<String> =
        tasks.label_test.iter().map(|e| e.label.clone()).collect();
    label_queries.sort();
    label_queries.dedup();
    tasks.label_queries = label_queries;

    Ok(tasks)
}

/// Derive annotations from a generated corpus that carries template/label
/// meta (e.g. the synthetic temporal corpus).
pub fn annotations_from_dataset(dataset: &crate::data::Dataset, split: Split) -> Vec<SSv2Annotation> {
    dataset
        .examples
        .iter()
        .filter_map(|ex| {
            let meta = ex.meta.as_ref()?;
            Some(SSv2Annotation {
                id: ex.video_id.clone(),
                template: meta.template.clone()?,
                label: meta.label.clone()?,
                placeholders: Vec::new(),
                split,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct TaskManifestRecord<'a> {
    video_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<String>,
    captions: [&'a str; 1],
    meta: crate::data::ExampleMeta,
}

/// Relative path from `dir` to `target` (both made absolute first).
fn relative_to(dir: &Path, target: &Path) -> PathBuf {
    let abs = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            std::env::current_dir().unwrap_or_else(|_| PathBuf::from(".")).join(p)
        }
    };
    let dir = abs(dir);
    let target = abs(target);
    let dir_parts: Vec<_> = dir.components().collect();
    let tgt_parts: Vec<_> = target.components().collect();
    let common = dir_parts
        .iter()
        .zip(tgt_parts.iter())
        .take_while(|(a, b)| a == b)
        .count();
    let mut out = PathBuf::new();
    for _ in common..dir_parts.len() {
        out.push("..");
    }
    for part in &tgt_parts[common..] {
        out.push(part);
    }
    out
}

/// Write the four task manifests under `{out}/{template|label}/{split}.jsonl`.
/// `frames_by_id` maps a video id to the npy file holding its frames; when
/// present, manifests reference it by a path relative to themselves.
pub fn write_task_manifests(
    tasks: &Ssv2Tasks,
    out_dir: &Path,
    frames_by_id: Option<&BTreeMap<String, PathBuf>>,
) -> Result<()> {
    let sets: [(&str, &str, &[TaskEntry]); 4] = [
        ("template", "train", &tasks.template_train),
        ("template", "test", &tasks.template_test),
        ("label", "train", &tasks.label_train),
        ("label", "test", &tasks.label_test),
    ];
    for (task, split, entries) in sets {
        let dir = out_dir.join(task);
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        let path = dir.join(format!("{split}.jsonl"));
        let mut f = fs::File::create(&path)
            .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        for e in entries {
            let frames = frames_by_id
                .and_then(|m| m.get(&e.video_id))
                .map(|p| relative_to(&dir, p).to_string_lossy().into_owned());
            let record = TaskManifestRecord {
                video_id: &e.video_id,
                frames,
                captions: [e.caption.as_str()],
                meta: crate::data::ExampleMeta {
                    template: Some(e.template.clone()),
                    label: Some(e.label.clone()),
                    answer: None,
                    flip_safe: Some(false),
                },
            };
            let line = serde_json::to_string(&record)
                .map_err(|er| Error::json("serialize task record", er))?;
            writeln!(f, "{line}").map_err(|er| Error::io(format!("write {}", path.display()), er))?;
        }
    }
    Ok(())
}

/// A small annotation fixture: `n_templates` distinct templates, each with
/// `train_per_template` training and `val_per_template` validation videos.
/// Labels reuse a tiny object pool, so labels deduplicate across videos.
pub fn make_annotation_fixture(
    n_templates: usize,
    train_per_template: usize,
    val_per_template: usize,
) -> Vec<SSv2Annotation> {
    let objects = ["pen", "cup", "keys"];
    let mut out = Vec::new();
    for t in 0..n_templates {
        let template = format!("doing action {t} with [something]");
        for (k, split, count) in [
            ('t', Split::Train, train_per_template),
            ('v', Split::Validation, val_per_template),
        ] {
            for i in 0..count {
                let object = objects[i % objects.len()];
                out.push(SSv2Annotation {
                    id: format!("{k}{t:02}{i:04}"),
                    template: template.clone(),
                    label: format!("doing action {t} with {object}"),
                    placeholders: vec![object.to_string()],
                    split,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_check_fills_placeholders() {
        let good = SSv2Annotation {
            id: "1".into(),
            template: "Throwing [something] in the air and catching it".into(),
            label: "Throwing keys in the air and catching it".into(),
            placeholders: vec!["keys".into()],
            split: Split::Validation,
        };
        assert!(annotation_is_consistent(&good));
        let bad = SSv2Annotation {
            label: "Throwing a ball in the air".into(),
            ..good.clone()
        };
        assert!(!annotation_is_consistent(&bad));
        let missing_placeholder = SSv2Annotation {
            placeholders: vec![],
            ..good
        };
        assert!(!annotation_is_consistent(&missing_placeholder));
    }

    #[test]
    fn fixture_counts_match_derivation() {
        // 3 templates x 20 validation videos, per_template = 12
        // -> 36 test videos, 3 template queries; 100 train annotations pass through
        let mut anns = make_annotation_fixture(3, 0, 20);
        anns.extend(make_annotation_fixture(1, 100, 0).into_iter().filter(|a| a.split == Split::Train));
        let tasks = build_ssv2_tasks(&anns, 12, 4).unwrap();
        assert_eq!(tasks.template_test.len(), 36);
        assert_eq!(tasks.label_test.len(), 36);
        assert_eq!(tasks.template_queries.len(), 3);
        assert_eq!(tasks.template_train.len(), 100);
        assert_eq!(tasks.label_train.len(), 100);
        // labels reuse 3 objects per template -> deduplicated label queries
        assert_eq!(tasks.label_queries.len(), 9);
        assert!(tasks.warnings.is_empty());
    }

    #[test]
    fn real_scale_arithmetic() {
        // 174 templates x 12 sampled validation videos = 2088 test videos
        let anns = make_annotation_fixture(174, 0, 15);
        let tasks = build_ssv2_tasks(&anns, 12, 0).unwrap();
        assert_eq!(tasks.template_test.len(), 2088);
        assert_eq!(tasks.template_queries.len(), 174);
    }

    #[test]
    fn short_templates_take_all_with_warning() {
        let anns = make_annotation_fixture(2, 0, 5);
        let tasks = build_ssv2_tasks(&anns, 12, 0).unwrap();
        assert_eq!(tasks.template_test.len(), 10);
        assert_eq!(tasks.warnings.len(), 2);
    }

    #[test]
    fn malformed_annotations_are_rejected_with_diagnostics() {
        let mut anns = make_annotation_fixture(1, 0, 4);
        anns[0].label = "entirely different".into();
        let tasks = build_ssv2_tasks(&anns, 2, 0).unwrap();
        assert_eq!(tasks.rejected.len(), 1);
        assert!(tasks.rejected[0].contains("does not match"));
        assert_eq!(tasks.template_test.len(), 2);
    }

    #[test]
    fn sampling_is_seeded() {
        let anns = make_annotation_fixture(1, 0, 30);
        let a = build_ssv2_tasks(&anns, 12, 7).unwrap();
        let b = build_ssv2_tasks(&anns, 12, 7).unwrap();
        let c = build_ssv2_tasks(&anns, 12, 8).unwrap();
        let ids = |t: &Ssv2Tasks| t.template_test.iter().map(|e| e.video_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        assert_ne!(ids(&a), ids(&c));
    }
}
