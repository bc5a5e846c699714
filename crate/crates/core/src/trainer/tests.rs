use approx::assert_abs_diff_eq;

use super::*;
use crate::data::{generate_dataset, Dataset, DatasetSpec, GeneratedSplits};
use crate::error::Error;
use crate::metrics::{gap_at_k, predictions_to_csv, VideoPrediction};
use crate::numerics::{GradSet, ParamStore, Tensor};
use crate::parallel::Execution;
use crate::pooling::PoolingKind;

fn splits(seed: u64) -> GeneratedSplits {
    let spec = DatasetSpec {
        num_videos: 300,
        num_classes: 8,
        dim: 12,
        audio_dim: 4,
        t_max: 10,
        num_label_groups: 4,
        seed,
        ..Default::default()
    };
    generate_dataset(&spec, Execution::Parallel).unwrap()
}

fn small_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.pooling.cell_size = 8;
    c.pooling.cnn_channels = 8;
    c.classifier.moe2_hidden = 8;
    c.classifier.mlp_hidden = 16;
    c.classifier.m2m_cell_size = 8;
    c.train.batch_size = 16;
    c.train.epochs = 1;
    c.train.max_steps = 12;
    c.train.eval_interval = 5;
    c.train.base_lr = 0.005;
    c
}

fn run(cfg: &ModelConfig, s: &GeneratedSplits, exec: Execution) -> (Model, AdamState, Vec<LogRecord>) {
    let mut model = Model::for_dataset(cfg, &s.train, exec).unwrap();
    let mut adam = AdamState::from_config(&model.store, &cfg.train);
    let log = train(&mut model, &mut adam, &s.train, Some(&s.validate), exec, &mut |_, _| Ok(())).unwrap();
    (model, adam, log)
}

#[test]
fn adam_first_step_is_lr_sized() {
    let mut store = ParamStore::new();
    let id = store.add("theta", Tensor::vector(vec![1.0])).unwrap();
    let mut adam = AdamState::new(&store, 0.9, 0.999, 1e-8);
    let mut g = GradSet::new(1);
    g.add(id, &[1.0]);
    adam.step(&mut store, &g, 1.0, 0.1).unwrap();
    assert_abs_diff_eq!(store.get(id).values()[0], 1.0 - 0.1 / (1.0 + 1e-8), epsilon = 1e-15);
}

#[test]
fn adam_zero_gradient_is_identity() {
    let mut store = ParamStore::new();
    store.add("a", Tensor::vector(vec![0.3, -2.0])).unwrap();
    let before = store.clone();
    let mut adam = AdamState::new(&store, 0.9, 0.999, 1e-8);
    for _ in 0..10 {
        adam.step(&mut store, &GradSet::new(1), 1.0, 0.1).unwrap();
    }
    assert_eq!(store, before);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("theta", Tensor::vector(vec![1.0])).unwrap();
    let mut adam = AdamState::new(&store, 0.9, 0.999, 1e-8);
    let mut reached = None;
    for step in 1..=500 {
        let theta = store.get(id).values()[0];
        let mut g = GradSet::new(1);
        g.add(id, &[2.0 * theta]);
        adam.step(&mut store, &g, 1.0, 0.05).unwrap();
        if store.get(id).values()[0].abs() < 0.01 && reached.is_none() {
            reached = Some(step);
        }
    }
    assert!(reached.is_some(), "final θ = {}", store.get(id).values()[0]);
}

#[test]
fn lr_schedule_values() {
    assert_eq!(lr_schedule(0, 0.0006, 0.95, 2000), 0.0006);
    assert_eq!(lr_schedule(1999, 0.0006, 0.95, 2000), 0.0006);
    assert_abs_diff_eq!(lr_schedule(2000, 0.0006, 0.95, 2000), 5.7e-4, epsilon = 1e-15);
    let mut prev = f64::INFINITY;
    for s in (0..100_000).step_by(777) {
        let lr = lr_schedule(s, 0.0006, 0.95, 2000);
        assert!(lr <= prev);
        prev = lr;
    }
}

#[test]
fn config_defaults_and_validation() {
    let c = ModelConfig::from_toml("").unwrap();
    assert_eq!(c, ModelConfig::default());
    assert_eq!(c.train.base_lr, 0.0006);
    assert_eq!(ModelConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert!(ModelConfig::from_toml("[pooling]\nbogus = 1").is_err());
    let m2m = "[classifier]\nkind = \"many_to_many\"";
    assert_eq!(ModelConfig::from_toml(m2m).unwrap_err().kind(), "config");
    ModelConfig::from_toml(&format!("{m2m}\n[pooling]\nkind = \"none\"")).unwrap();
    assert!(ModelConfig::from_toml("[pooling]\nkind = \"none\"").is_err());
    assert_ne!(c.hash(), ModelConfig { seed: 2, ..c.clone() }.hash());
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let s = splits(1);
    let mut cfg = small_config();
    cfg.train.epochs = 0;
    let fresh = Model::for_dataset(&cfg, &s.train, Execution::Parallel).unwrap();
    let (model, adam, log) = run(&cfg, &s, Execution::Parallel);
    assert_eq!(model.store, fresh.store);
    assert_eq!(adam.t, 0);
    assert!(log.is_empty());
}

#[test]
fn fixed_batch_loss_strictly_decreases() {
    let s = splits(2);
    let batch = Dataset::new(s.train.num_classes, s.train.dim, s.train.videos[..32].to_vec()).unwrap();
    let mut cfg = ModelConfig::default();
    cfg.train.batch_size = 32;
    cfg.train.epochs = 50;
    cfg.train.eval_interval = 0;
    let mut model = Model::for_dataset(&cfg, &batch, Execution::Parallel).unwrap();
    let mut adam = AdamState::from_config(&model.store, &cfg.train);
    let mut losses = vec![mean_loss(&model, &batch, Execution::Parallel).unwrap()];
    train(&mut model, &mut adam, &batch, None, Execution::Parallel, &mut |e, m| {
        if let TrainEvent::Step { .. } = e {
            losses.push(mean_loss(m, &batch, Execution::Parallel)?);
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(losses.len(), 51);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn training_is_deterministic_across_runs_and_thread_modes() {
    let s = splits(3);
    for kind in [PoolingKind::Lstm, PoolingKind::AdaptiveNoise] {
        let mut cfg = small_config();
        cfg.pooling.kind = kind;
        let (m1, a1, l1) = run(&cfg, &s, Execution::Parallel);
        let (m2, a2, l2) = run(&cfg, &s, Execution::Parallel);
        let (m3, _, l3) = run(&cfg, &s, Execution::Sequential);
        assert_eq!(l1, l2);
        assert_eq!(l1, l3);
        assert_eq!(m1.store, m2.store);
        assert_eq!(m1.store, m3.store);
        assert_eq!(a1, a2);
        assert_eq!(l1.last().unwrap().step, 12);
        assert!(l1.iter().all(|r| r.val_gap.is_some()));
    }
}

#[test]
fn log_records_follow_the_interval() {
    let s = splits(4);
    let (_, _, log) = run(&small_config(), &s, Execution::Parallel);
    let steps: Vec<u64> = log.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![5, 10, 12]);
    let line = serde_json::to_string(&log[0]).unwrap();
    for key in ["\"step\":5", "\"lr\":", "\"train_loss\":", "\"val_gap\":"] {
        assert!(line.contains(key), "{line}");
    }
}

#[test]
fn identity_label_layer_matches_no_label_layer() {
    let s = splits(5);
    let plain = small_config();
    let mut with = plain.clone();
    with.label.enabled = true;
    with.label.alpha = 1.0;
    with.label.beta = 0.0;
    with.label.gamma = 0.0;
    let (m1, _, l1) = run(&plain, &s, Execution::Parallel);
    let (m2, _, l2) = run(&with, &s, Execution::Parallel);
    assert_eq!(l1, l2);
    for (id, name, t) in m1.store.iter() {
        assert_eq!(m2.store.get(m2.store.lookup(name).unwrap()), t, "{name} ({id:?})");
    }
}

#[test]
fn non_finite_input_aborts_with_diagnostics() {
    let mut s = splits(6);
    s.train.videos[0].frames.values_mut()[0] = f64::NAN;
    let mut cfg = small_config();
    cfg.train.batch_size = s.train.len();
    cfg.train.eval_interval = 0;
    let mut model = Model::for_dataset(&cfg, &s.train, Execution::Parallel).unwrap();
    let mut adam = AdamState::from_config(&model.store, &cfg.train);
    match train(&mut model, &mut adam, &s.train, None, Execution::Parallel, &mut |_, _| Ok(())) {
        Err(Error::NonFinite { step, layer, magnitude }) => {
            assert_eq!(step, 0);
            assert!(!layer.is_empty());
            assert!(!magnitude.is_finite());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn dataset_mismatch_is_a_config_error() {
    let s = splits(7);
    let model = Model::for_dataset(&small_config(), &s.train, Execution::Parallel).unwrap();
    let mut other = s.test.clone();
    other.dim += 1;
    assert_eq!(evaluate(&model, &other, 20, Execution::Parallel).unwrap_err().kind(), "config");
}

#[test]
fn evaluation_and_checkpoints_are_reproducible() {
    let s = splits(8);
    let mut cfg = small_config();
    cfg.label.enabled = true;
    cfg.label.beta = 0.1;
    cfg.label.gamma = 0.05;
    cfg.loss.kind = crate::loss::LossKind::CeCenter;
    let (model, adam, _) = run(&cfg, &s, Execution::Parallel);
    let (g1, p1) = evaluate(&model, &s.test, 20, Execution::Parallel).unwrap();
    let (g2, p2) = evaluate(&model, &s.test, 20, Execution::Sequential).unwrap();
    assert_eq!(g1, g2);
    assert_eq!(predictions_to_csv(&p1), predictions_to_csv(&p2));

    let bytes = encode_checkpoint(&model, &adam).unwrap();
    let (m2, a2) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(m2, model);
    assert_eq!(a2, adam);
    assert_eq!(encode_checkpoint(&m2, &a2).unwrap(), bytes);
    assert_eq!(evaluate(&m2, &s.test, 20, Execution::Parallel).unwrap().0, g1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&model, &adam, &path).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap().0, model);
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let s = splits(10);
    let (model, adam, _) = run(&small_config(), &s, Execution::Parallel);
    let bytes = encode_checkpoint(&model, &adam).unwrap();
    for cut in [0, 3, 5, 40, bytes.len() / 2, bytes.len() - 1] {
        assert_eq!(decode_checkpoint(&bytes[..cut]).unwrap_err().kind(), "format", "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert_eq!(decode_checkpoint(&bad).unwrap_err().kind(), "format");
    let mut bad = bytes.clone();
    bad[4] = 99;
    assert_eq!(decode_checkpoint(&bad).unwrap_err().kind(), "format");
    // Flip a byte inside the embedded config: the hash no longer matches or it fails to parse.
    let mut bad = bytes.clone();
    bad[12] ^= 0x01;
    assert_eq!(decode_checkpoint(&bad).unwrap_err().kind(), "format");
    let mut long = bytes;
    long.push(0);
    assert_eq!(decode_checkpoint(&long).unwrap_err().kind(), "format");
}

fn vp(id: &str, pairs: &[(u32, f64)]) -> VideoPrediction {
    VideoPrediction {
        video_id: id.into(),
        pairs: pairs.to_vec(),
    }
}

#[test]
fn ensemble_examples() {
    let a = vec![vp("x", &[(0, 0.2)]), vp("y", &[(1, 0.5), (0, 0.25)])];
    let b = vec![vp("y", &[(1, 0.7)]), vp("x", &[(0, 0.4)])];
    let m = ensemble_average(&[a.clone(), b], 20).unwrap();
    assert_eq!(m[0], vp("x", &[(0, 0.3)]));
    assert_eq!(m[1], vp("y", &[(1, 0.6), (0, 0.125)]));
    let same = ensemble_average(&[a.clone(), a.clone(), a.clone()], 20).unwrap();
    assert_eq!(predictions_to_csv(&same), predictions_to_csv(&a));
}

#[test]
fn ensemble_rejects_mismatched_videos() {
    let a = vec![vp("x", &[(0, 0.2)]), vp("y", &[])];
    let b = vec![vp("x", &[(0, 0.2)]), vp("z", &[])];
    let err = ensemble_average(&[a, b], 20).unwrap_err();
    assert_eq!(err.kind(), "input");
    let msg = err.to_string();
    assert!(msg.contains("\"y\"") && msg.contains("\"z\""), "{msg}");
}

#[test]
fn ensemble_of_perfect_and_inverted_beats_inverted() {
    let truth = vec![vec![0], vec![1], vec![2, 3]];
    let perfect: Vec<VideoPrediction> = truth
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let scores: Vec<f64> = (0..4u32).map(|c| if t.contains(&c) { 0.9 } else { 0.1 }).collect();
            VideoPrediction::from_scores(format!("v{i}"), &scores, 20)
        })
        .collect();
    let inverted: Vec<VideoPrediction> = perfect
        .iter()
        .map(|p| vp(&p.video_id, &p.pairs.iter().map(|&(c, s)| (c, 1.0 - s)).collect::<Vec<_>>()))
        .collect();
    let merged = ensemble_average(&[perfect, inverted.clone()], 20).unwrap();
    let g_inv = gap_at_k(&inverted, &truth, 20).unwrap();
    let g_merged = gap_at_k(&merged, &truth, 20).unwrap();
    assert!(g_merged > g_inv, "{g_merged} vs {g_inv}");
}

#[test]
fn candidate_parsing_and_application() {
    let text = r#"
[[candidates]]
name = "cnn"
[candidates.pooling]
kind = "cnn"

[[candidates]]
name = "m2m"
[candidates.classifier]
kind = "many_to_many"
"#;
    let cands = parse_candidates(text).unwrap();
    assert_eq!(cands.len(), 2);
    let base = ModelConfig::default();
    let c = apply_candidate(&base, Component::Pooling, &cands[0]).unwrap();
    assert_eq!(c.pooling.kind, PoolingKind::Cnn);
    assert_eq!(c.classifier, base.classifier);
    assert!(apply_candidate(&base, Component::Pooling, &cands[1]).is_err());
    let c = apply_candidate(&base, Component::Classifier, &cands[1]).unwrap();
    assert_eq!(c.pooling.kind, PoolingKind::None);
    assert!("pooling".parse::<Component>().is_ok());
    assert!("bogus".parse::<Component>().is_err());
    assert!(parse_candidates("candidates = []").is_err());
}

#[test]
fn sweep_ranks_candidates_and_isolates_failures() {
    let s = splits(11);
    let base = small_config();
    let text = r#"
[[candidates]]
name = "broken"
[candidates.pooling]
kind = "lstm"
dropout_rate = 7.0

[[candidates]]
name = "position"
[candidates.pooling]
kind = "position"

[[candidates]]
name = "attention"
[candidates.pooling]
kind = "attention"
"#;
    let cands = parse_candidates(text).unwrap();
    let report = greedy_sweep(&base, Component::Pooling, &cands, &s.train, &s.validate, Execution::Parallel);
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows[..2].iter().all(|r| r.gap.is_some()));
    assert!(report.rows[0].gap >= report.rows[1].gap);
    let failed = &report.rows[2];
    assert_eq!(failed.name, "broken");
    assert!(failed.error.as_deref().unwrap().starts_with("config"));
    let csv = report.to_csv();
    assert!(csv.starts_with("rank,method,gap_at_k"));
    assert_eq!(csv.lines().count(), 4);

    let single = greedy_sweep(&base, Component::Pooling, &cands[1..2], &s.train, &s.validate, Execution::Parallel);
    assert_eq!(single.best().unwrap().name, "position");
}

#[test]
fn gradcheck_passes_and_catches_a_sign_flip() {
    let dims = GradcheckDims::default();
    let mut cfg = ModelConfig::default();
    cfg.classifier.kind = crate::classifier::HeadKind::Moe2;
    cfg.label.enabled = true;
    let ok = gradcheck(&cfg, &dims, None).unwrap();
    assert!(ok.passed, "{ok:?}");
    assert!(ok.groups.iter().any(|g| g.name == "input[0]"));
    let bad = gradcheck(&cfg, &dims, Some("activation")).unwrap();
    assert!(!bad.passed);
}

#[test]
fn pipeline_grid_covers_every_combination() {
    let grid = pipeline_grid(&ModelConfig::default());
    assert_eq!(grid.len(), 16 * 2 * 3);
    assert!(grid.iter().all(|c| c.validate().is_ok()));
    let names: std::collections::HashSet<String> = grid.iter().map(pipeline_name).collect();
    assert_eq!(names.len(), grid.len());
}
