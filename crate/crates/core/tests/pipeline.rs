//! End-to-end pipeline: generate -> save -> load -> train -> checkpoint ->
//! evaluate, all through the public library surface.

use monoframe::checkpoint;
use monoframe::config::ModelConfig;
use monoframe::data::augment::AugmentOptions;
use monoframe::data::generate::{generate_static_corpus, StaticCorpusSpec};
use monoframe::data::{load_manifest, save_manifest};
use monoframe::evaluation::{evaluate_retrieval, QueryMode};
use monoframe::fusion::EnsembleStrategy;
use monoframe::model::Model;
use monoframe::training::{run_training, Objective, ScheduleConfig, TrainOptions};

#[test]
fn generate_train_checkpoint_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = StaticCorpusSpec {
        n_videos: 8,
        frames_per_video: 4,
        image_size: 16,
    };
    let corpus = generate_static_corpus(&spec, 300).unwrap();
    let manifest = save_manifest(&corpus, dir.path(), "train").unwrap();
    let loaded = load_manifest(&manifest).unwrap();
    assert_eq!(loaded.len(), 8);

    let vocab = loaded.build_vocab();
    let config = ModelConfig {
        image_size: 16,
        hidden_dim: 16,
        proj_dim: 8,
        heads: 4,
        max_text_len: 8,
        ..ModelConfig::tiny()
    };
    let mut model = Model::new(config, vocab, 301).unwrap();
    let opts = TrainOptions {
        objectives: [Objective::Vtc, Objective::Vtm].into_iter().collect(),
        schedule: ScheduleConfig {
            peak_lr: 1e-2,
            min_lr: 1e-4,
            warmup_steps: 10,
            total_steps: 350,
            ..ScheduleConfig::default()
        },
        batch_size: 8,
        epochs: 350,
        frames_per_step: 1,
        augment: AugmentOptions {
            enabled: false,
            ..AugmentOptions::default()
        },
        grad_clip: 1.0,
    };
    let report = run_training(&mut model, &loaded, &opts, 302, Some(dir.path())).unwrap();
    assert_eq!(report.checkpoints.len(), 350);
    let last = report.records.last().unwrap();
    assert!(last.loss_total < 0.5, "training should converge, got {}", last.loss_total);

    // reload the final checkpoint and verify identical scoring
    let restored = checkpoint::load(report.checkpoints.last().unwrap()).unwrap();
    let eval_a =
        evaluate_retrieval(&model, &loaded, EnsembleStrategy::Concat, 2, QueryMode::PerCaption)
            .unwrap();
    let eval_b =
        evaluate_retrieval(&restored, &loaded, EnsembleStrategy::Concat, 2, QueryMode::PerCaption)
            .unwrap();
    for (a, b) in eval_a.similarity.scores.iter().zip(eval_b.similarity.scores.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert!(eval_a.report.r1 >= 60.0, "overfit retrieval r1 {}", eval_a.report.r1);
    assert!(eval_a.report.r10 >= 95.0, "overfit retrieval r10 {}", eval_a.report.r10);
}

#[test]
fn checkpoint_resume_training_continues() {
    let dir = tempfile::tempdir().unwrap();
    let spec = StaticCorpusSpec {
        n_videos: 6,
        frames_per_video: 2,
        image_size: 16,
    };
    let corpus = generate_static_corpus(&spec, 310).unwrap();
    let manifest = save_manifest(&corpus, dir.path(), "train").unwrap();
    let loaded = load_manifest(&manifest).unwrap();
    let vocab = loaded.build_vocab();
    let config = ModelConfig {
        image_size: 16,
        hidden_dim: 16,
        proj_dim: 8,
        heads: 4,
        max_text_len: 8,
        ..ModelConfig::tiny()
    };
    let mut model = Model::new(config, vocab, 311).unwrap();
    let opts = TrainOptions {
        objectives: [Objective::Vtc, Objective::Vtm].into_iter().collect(),
        schedule: ScheduleConfig {
            peak_lr: 2e-3,
            min_lr: 1e-4,
            warmup_steps: 2,
            total_steps: 20,
            ..ScheduleConfig::default()
        },
        batch_size: 6,
        epochs: 10,
        frames_per_step: 1,
        augment: AugmentOptions::default(),
        grad_clip: 1.0,
    };
    run_training(&mut model, &loaded, &opts, 312, Some(dir.path())).unwrap();
    let resumed = checkpoint::load(&dir.path().join("ckpt_ep9")).unwrap();
    let mut resumed = resumed;
    // a second stage on top of the checkpoint trains without error
    let report = run_training(&mut resumed, &loaded, &opts, 313, None).unwrap();
    assert_eq!(report.records.len(), 10);
}
