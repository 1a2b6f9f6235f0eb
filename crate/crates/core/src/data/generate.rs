//! Synthetic corpora. The static corpus is solvable from any single frame
//! (shape + color naming). The temporal corpus is built so that all four
//! motion classes of one object share the same frame multiset in different
//! orders: no single frame, nor any unordered frame set, identifies the
//! class.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, ExampleMeta, VideoExample};
use crate::error::{Error, Result};
use crate::model::FrameTensor;
use crate::rng::{item_rng, Stream};

pub const SHAPES: [&str; 8] = [
    "square", "circle", "triangle", "diamond", "cross", "ring", "bar", "dot",
];
pub const COLORS: [&str; 8] = [
    "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "white",
];

const COLOR_RGB: [[f64; 3]; 8] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.80, 0.10],
    [0.15, 0.20, 0.90],
    [0.90, 0.85, 0.10],
    [0.10, 0.85, 0.85],
    [0.85, 0.10, 0.85],
    [0.95, 0.55, 0.10],
    [0.95, 0.95, 0.95],
];

/// Motion classes of the temporal corpus, in fixed order. Classes 0/1 and
/// 2/3 are exact frame-reversal pairs.
pub const MOTION_TEMPLATES: [&str; 4] = [
    "moving [something] from left to right",
    "moving [something] from right to left",
    "moving [something] from the middle to the sides",
    "moving [something] from the sides to the middle",
];

#[derive(Debug, Clone)]
pub struct StaticCorpusSpec {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
}

impl Default for StaticCorpusSpec {
    fn default() -> Self {
        StaticCorpusSpec {
            n_videos: 64,
            frames_per_video: 8,
            image_size: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TemporalCorpusSpec {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub image_size: usize,
}

impl Default for TemporalCorpusSpec {
    fn default() -> Self {
        TemporalCorpusSpec {
            n_videos: 32,
            frames_per_video: 8,
            image_size: 32,
        }
    }
}

fn shape_hit(shape: usize, x: f64, y: f64, cx: f64, cy: f64, r: f64) -> bool {
    let dx = x - cx;
    let dy = y - cy;
    match shape {
        0 => dx.abs() <= r && dy.abs() <= r,
        1 => dx * dx + dy * dy <= r * r,
        2 => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
        3 => dx.abs() + dy.abs() <= r,
        4 => (dx.abs() <= r / 3.0 && dy.abs() <= r) || (dy.abs() <= r / 3.0 && dx.abs() <= r),
        5 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (r * 0.55) * (r * 0.55)
        }
        6 => dy.abs() <= r / 3.0 && dx.abs() <= r,
        7 => dx * dx + dy * dy <= (r * 0.5) * (r * 0.5),
        _ => unreachable!("shape index out of range"),
    }
}

/// Paint one shape over a flat background; returns an f32 frame.
#[allow(clippy::too_many_arguments)]
fn render(
    image_size: usize,
    shape: usize,
    rgb: [f64; 3],
    cx: f64,
    cy: f64,
    r: f64,
    background: f64,
    noise: Option<(&mut ChaCha8Rng, f64)>,
) -> FrameTensor {
    let mut pixels = ndarray::Array3::<f32>::zeros((image_size, image_size, 3));
    for y in 0..image_size {
        for x in 0..image_size {
            let inside = shape_hit(shape, x as f64, y as f64, cx, cy, r);
            for c in 0..3 {
                let v = if inside { rgb[c] } else { background };
                pixels[(y, x, c)] = v as f32;
            }
        }
    }
    if let Some((rng, amp)) = noise {
        for v in pixels.iter_mut() {
            let n: f64 = rng.random_range(-amp..amp);
            *v = (*v as f64 + n).clamp(0.0, 1.0) as f32;
        }
    }
    FrameTensor { pixels }
}

/// Static corpus: one (shape, color) per video, identical frames up to
/// small pixel jitter (every pairwise pixel difference stays below 0.05).
/// Combos repeat with fresh jitter once `n_videos` exceeds the 8x8 grid.
pub fn generate_static_corpus(spec: &StaticCorpusSpec, seed: u64) -> Result<Dataset> {
    if spec.n_videos < 2 {
        return Err(Error::Input("static corpus needs at least 2 videos".into()));
    }
    if spec.frames_per_video == 0 {
        return Err(Error::Input("frames_per_video must be at least 1".into()));
    }
    let mut examples = Vec::with_capacity(spec.n_videos);
    for i in 0..spec.n_videos {
        let combo = i % (SHAPES.len() * COLORS.len());
        let color = combo % COLORS.len();
        let shape = combo / COLORS.len();
        let mut rng = item_rng(seed, Stream::Generator, i as u64);
        let side = spec.image_size as f64;
        let jitter = side / 16.0;
        let cx = side / 2.0 + rng.random_range(-jitter..jitter);
        let cy = side / 2.0 + rng.random_range(-jitter..jitter);
        let r = side * rng.random_range(0.19..0.30);
        let tint: f64 = rng.random_range(0.85..1.0);
        let rgb = [
            COLOR_RGB[color][0] * tint,
            COLOR_RGB[color][1] * tint,
            COLOR_RGB[color][2] * tint,
        ];
        let background = rng.random_range(0.06..0.12);
        let frames: Vec<FrameTensor> = (0..spec.frames_per_video)
            .map(|_| {
                render(spec.image_size, shape, rgb, cx, cy, r, background, Some((&mut rng, 0.02)))
            })
            .collect();
        examples.push(VideoExample {
            video_id: format!("static_{i:05}"),
            frames,
            captions: vec![format!("{} {}", COLORS[color], SHAPES[shape])],
            meta: Some(ExampleMeta {
                flip_safe: Some(true),
                ..ExampleMeta::default()
            }),
        });
    }
    Ok(Dataset { examples })
}

/// Slot visiting order for the "middle to sides" class; its reverse is the
/// "sides to middle" class.
pub fn middle_out_order(t: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(t);
    let mut lo = (t as i64 - 1) / 2;
    let mut hi = lo + 1;
    while out.len() < t {
        if lo >= 0 {
            out.push(lo as usize);
            lo -= 1;
        }
        if (hi as usize) < t && out.len() < t {
            out.push(hi as usize);
            hi += 1;
        }
    }
    out
}

/// Temporal corpus: videos come in quads over one object and one jitter
/// draw; the four class orderings permute the same slot-rendered frames,
/// and opposite classes are exact reversals of each other.
pub fn generate_temporal_corpus(spec: &TemporalCorpusSpec, seed: u64) -> Result<Dataset> {
    if spec.n_videos < 2 {
        return Err(Error::Input("temporal corpus needs at least 2 videos".into()));
    }
    if spec.frames_per_video < 2 {
        return Err(Error::Input(
            "temporal corpus needs frames_per_video >= 2 (order undefinable)".into(),
        ));
    }
    let t = spec.frames_per_video;
    let ascending: Vec<usize> = (0..t).collect();
    let descending: Vec<usize> = (0..t).rev().collect();
    let mid_out = middle_out_order(t);
    let mut edges_in = mid_out.clone();
    edges_in.reverse();
    let orderings = [ascending, descending, mid_out, edges_in];

    let n_objects = 16; // 4 shapes x 4 colors
    let groups = spec.n_videos.div_ceil(4);
    let mut examples = Vec::with_capacity(spec.n_videos);
    'outer: for g in 0..groups {
        let object = g % n_objects;
        let shape = object % 4;
        let color = object / 4;
        let mut rng = item_rng(seed, Stream::Generator, g as u64);
        let cy = spec.image_size as f64 / 2.0 + rng.random_range(-2.0..2.0);
        let r: f64 = rng.random_range(3.0..4.5);
        let tint: f64 = rng.random_range(0.85..1.0);
        let rgb = [
            COLOR_RGB[color][0] * tint,
            COLOR_RGB[color][1] * tint,
            COLOR_RGB[color][2] * tint,
        ];
        let background = rng.random_range(0.06..0.12);
        // one frame per horizontal slot, shared by the whole quad
        let margin = r.ceil() + 1.0;
        let span = spec.image_size as f64 - 1.0 - 2.0 * margin;
        let slot_frames: Vec<FrameTensor> = (0..t)
            .map(|s| {
                let cx = margin + span * s as f64 / (t - 1) as f64;
                render(spec.image_size, shape, rgb, cx, cy, r, background, Some((&mut rng, 0.015)))
            })
            .collect();
        let object_phrase = format!("{} {}", COLORS[color], SHAPES[shape]);
        for (class, order) in orderings.iter().enumerate() {
            let idx = g * 4 + class;
            if idx >= spec.n_videos {
                break 'outer;
            }
            let frames: Vec<FrameTensor> = order.iter().map(|&s| slot_frames[s].clone()).collect();
            let template = MOTION_TEMPLATES[class].to_string();
            let label = template.replace("[something]", &object_phrase);
            examples.push(VideoExample {
                video_id: format!("temporal_{idx:05}"),
                frames,
                captions: vec![label.clone()],
                meta: Some(ExampleMeta {
                    template: Some(template),
                    label: Some(label),
                    answer: None,
                    flip_safe: Some(false),
                }),
            });
        }
    }
    Ok(Dataset { examples })
}

/// Color-naming QA corpus over static renders: the question is empty (the
/// task is purely visual) and the gold answer is the color word, balanced
/// across the first four colors.
pub fn generate_qa_corpus(spec: &StaticCorpusSpec, seed: u64) -> Result<Dataset> {
    if spec.n_videos < 1 {
        return Err(Error::Input("qa corpus needs at least 1 video".into()));
    }
    if spec.frames_per_video == 0 {
        return Err(Error::Input("frames_per_video must be at least 1".into()));
    }
    let n_colors = 4;
    let n_shapes = 4;
    let mut examples = Vec::with_capacity(spec.n_videos);
    for i in 0..spec.n_videos {
        let color = i % n_colors;
        let shape = (i / n_colors) % n_shapes;
        let mut rng = item_rng(seed, Stream::Generator, i as u64);
        let side = spec.image_size as f64;
        let jitter = side / 16.0;
        let cx = side / 2.0 + rng.random_range(-jitter..jitter);
        let cy = side / 2.0 + rng.random_range(-jitter..jitter);
        let r = side * rng.random_range(0.19..0.30);
        let rgb = COLOR_RGB[color];
        let background = rng.random_range(0.06..0.12);
        let frames: Vec<FrameTensor> = (0..spec.frames_per_video)
            .map(|_| {
                render(spec.image_size, shape, rgb, cx, cy, r, background, Some((&mut rng, 0.02)))
            })
            .collect();
        examples.push(VideoExample {
            video_id: format!("qa_{i:05}"),
            frames,
            captions: vec![String::new()],
            meta: Some(ExampleMeta {
                answer: Some(COLORS[color].to_string()),
                flip_safe: Some(true),
                ..ExampleMeta::default()
            }),
        });
    }
    Ok(Dataset { examples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_corpus_counts_and_jitter_bound() {
        let spec = StaticCorpusSpec {
            n_videos: 64,
            frames_per_video: 8,
            image_size: 32,
        };
        let ds = generate_static_corpus(&spec, 1).unwrap();
        assert_eq!(ds.len(), 64);
        // 64 distinct captions at n = 64
        let captions: std::collections::BTreeSet<_> =
            ds.examples.iter().map(|e| e.captions[0].clone()).collect();
        assert_eq!(captions.len(), 64);
        for ex in &ds.examples {
            assert_eq!(ex.frames.len(), 8);
            for a in 0..8 {
                for b in (a + 1)..8 {
                    let max_diff = ex.frames[a]
                        .pixels
                        .iter()
                        .zip(ex.frames[b].pixels.iter())
                        .fold(0.0f32, |acc, (x, y)| acc.max((x - y).abs()));
                    assert!(max_diff <= 0.05, "{}: frames differ by {max_diff}", ex.video_id);
                }
            }
        }
    }

    #[test]
    fn static_corpus_is_seed_deterministic() {
        let spec = StaticCorpusSpec::default();
        let a = generate_static_corpus(&spec, 9).unwrap();
        let b = generate_static_corpus(&spec, 9).unwrap();
        for (x, y) in a.examples.iter().zip(b.examples.iter()) {
            assert_eq!(x.captions, y.captions);
            for (fa, fb) in x.frames.iter().zip(y.frames.iter()) {
                assert_eq!(fa.pixels, fb.pixels);
            }
        }
        let c = generate_static_corpus(&spec, 10).unwrap();
        assert!(a.examples[0].frames[0].pixels != c.examples[0].frames[0].pixels);
    }

    #[test]
    fn middle_out_orders() {
        assert_eq!(middle_out_order(8), vec![3, 4, 2, 5, 1, 6, 0, 7]);
        assert_eq!(middle_out_order(5), vec![2, 3, 1, 4, 0]);
        assert_eq!(middle_out_order(2), vec![0, 1]);
    }

    #[test]
    fn temporal_quads_share_frames_and_reverse_exactly() {
        let spec = TemporalCorpusSpec {
            n_videos: 32,
            frames_per_video: 8,
            image_size: 32,
        };
        let ds = generate_temporal_corpus(&spec, 3).unwrap();
        assert_eq!(ds.len(), 32);
        for quad in ds.examples.chunks(4) {
            let [lr, rl, mo, ei] = quad else { panic!("quad expected") };
            // opposite-direction pairs are exact frame reversals
            for (a, b) in lr.frames.iter().zip(rl.frames.iter().rev()) {
                assert_eq!(a.pixels, b.pixels);
            }
            for (a, b) in mo.frames.iter().zip(ei.frames.iter().rev()) {
                assert_eq!(a.pixels, b.pixels);
            }
            // all four classes share one frame multiset: compare sorted byte keys
            let key = |v: &VideoExample| {
                let mut keys: Vec<Vec<u32>> = v
                    .frames
                    .iter()
                    .map(|f| f.pixels.iter().map(|p| p.to_bits()).collect())
                    .collect();
                keys.sort();
                keys
            };
            let k = key(lr);
            for v in [rl, mo, ei] {
                assert_eq!(key(v), k, "{} multiset differs", v.video_id);
            }
            // flip-unsafe marking
            assert!(!lr.flip_safe());
        }
        // four distinct templates
        let templates: std::collections::BTreeSet<_> = ds
            .examples
            .iter()
            .map(|e| e.meta.as_ref().unwrap().template.clone().unwrap())
            .collect();
        assert_eq!(templates.len(), 4);
        // labels substitute the placeholder
        for ex in &ds.examples {
            let meta = ex.meta.as_ref().unwrap();
            let t = meta.template.as_ref().unwrap();
            let l = meta.label.as_ref().unwrap();
            assert!(t.contains("[something]"));
            assert!(!l.contains("[something]"));
        }
    }

    #[test]
    fn temporal_needs_two_frames() {
        let spec = TemporalCorpusSpec {
            n_videos: 8,
            frames_per_video: 1,
            image_size: 32,
        };
        assert!(generate_temporal_corpus(&spec, 0).is_err());
    }

    #[test]
    fn qa_corpus_balanced_answers() {
        let spec = StaticCorpusSpec {
            n_videos: 200,
            frames_per_video: 4,
            image_size: 32,
        };
        let ds = generate_qa_corpus(&spec, 5).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for ex in &ds.examples {
            *counts
                .entry(ex.meta.as_ref().unwrap().answer.clone().unwrap())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        for (_, c) in counts {
            assert_eq!(c, 50);
        }
    }
}
