use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::Example;
use crate::Tensor;
use crate::config::RunConfig;
use crate::data::{generate_dataset, SynthSpec};
use crate::nn::{AestheticNet, Group};
use crate::optim::Orientation;
use crate::testutil::rng;

fn tiny_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.stem_channels = 4;
    c.model.stage_channels = vec![6];
    c.model.head_channels = 4;
    c.model.input_side = 8;
    c.model.aab_pool = 4;
    c.train.epochs_binary = 3;
    c.train.epochs_class = 2;
    c.train.epochs_reg = 2;
    c.train.batch_class = 8;
    c.train.batch_reg = 8;
    c.train.batch_scale = 1.0;
    c.train.lr = 1e-2;
    c.meta.quota = 2;
    c.meta.meta_batch = 4;
    c.meta.hidden = 8;
    c
}

fn flat_item(id: u64, level: f64, score: f64) -> Item {
    Item { id, image: Tensor::full(vec![3, 8, 8], level), score: Some(score), binary: u8::from(score >= 5.0) }
}

fn separable(n: usize, seed: u64) -> Vec<Item> {
    let mut r = rng(seed);
    (0..n as u64)
        .map(|i| {
            let hi = i % 2 == 0;
            let level = if hi { r.random_range(0.7..0.9) } else { r.random_range(0.1..0.3) };
            flat_item(i, level, if hi { r.random_range(7.0..9.0) } else { r.random_range(1.0..3.0) })
        })
        .collect()
}

fn synthetic(n: usize, rho: f64, dir: &std::path::Path) -> (Manifest, std::path::PathBuf) {
    let spec = SynthSpec { corruption_fraction: rho, meta_pool: 30, min_side: 6, max_side: 10, ..Default::default() };
    let m = generate_dataset(&spec, n, 5, dir).unwrap();
    let p = dir.join("manifest.csv");
    m.save(&p).unwrap();
    (m, p)
}

#[test]
fn label_rules() {
    assert_eq!(binarize_label(7.2).unwrap(), 1);
    assert_eq!(binarize_label(3.0).unwrap(), 0);
    assert_eq!(binarize_label(5.0).unwrap(), 1);
    assert!(matches!(binarize_label(10.5), Err(Error::Data(_))));
    for (s, k) in [(0.0, 0), (1.0, 0), (1.0001, 1), (7.3, 7), (9.99, 9), (10.0, 9)] {
        assert_eq!(ten_class_label(s).unwrap(), k, "{s}");
    }
    assert!(matches!(ten_class_label(-0.1), Err(Error::Data(_))));
}

#[test]
fn variant_keys() {
    for v in [Variant::R, Variant::Cr, Variant::Pcr] {
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
    }
    assert!(matches!("rc".parse::<Variant>(), Err(Error::Config(_))));
}

#[test]
fn fusion_rule() {
    assert!((fuse_score(0, 4.2, 9.0, 4.6) - 4.4).abs() < 1e-12);
    assert!((fuse_score(1, 0.0, 7.0, 6.0) - 6.5).abs() < 1e-12);
    for l in [0, 1] {
        assert_eq!(fuse_score(l, 3.3, 3.3, 3.3), 3.3);
    }
    assert_eq!(fuse_score(1, 0.0, 9.9, 11.3), 10.0);
    assert_eq!(fuse_score(0, -4.0, 0.0, -1.0), 0.0);
}

proptest! {
    #[test]
    fn fused_score_in_range(l in 0u8..2, a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0) {
        let s = fuse_score(l, a, b, c);
        prop_assert!((0.0..=10.0).contains(&s));
    }
}

#[test]
fn separable_binary_task_reaches_full_accuracy() {
    let mut cfg = tiny_config();
    cfg.train.epochs_binary = 15;
    cfg.train.lr = 0.03;
    cfg.train.patience = 5;
    let train = separable(40, 1);
    let valid = separable(12, 2);
    let m = train_binary(StageSet { train: &train, valid: &valid, meta: &[] }, &cfg, false, 3).unwrap();
    let best = m.logs[0].1.iter().map(|l| l.val_metric).fold(0.0, f64::max);
    assert_eq!(best, 1.0);
    let imgs: Vec<&Tensor> = valid.iter().map(|i| &i.image).collect();
    let pred = class_predictions(&m.net, &imgs).unwrap();
    assert!(pred.iter().zip(&valid).all(|(&p, it)| p as u8 == it.binary));

    // a perfect classifier reproduces the ground-truth binarization
    let split = pseudo_split(&m.net, &valid, &valid).unwrap();
    assert!(split.train.iter().zip(&valid).all(|(&(id, l), it)| id == it.id && l == it.binary));
    assert!(matches!(
        train_binary(StageSet { train: &[], valid: &valid, meta: &[] }, &cfg, false, 3),
        Err(Error::Data(_))
    ));
}

#[test]
fn constant_classifier_empties_a_branch() {
    let cfg = tiny_config();
    let mut net = AestheticNet::new(cfg.net_config(2), 0).unwrap();
    let bias = net.class_head.fc.bias;
    *net.params.get_mut(bias) = Tensor::from_f64(vec![2], &[50.0, -50.0]).unwrap();
    let w = net.class_head.fc.weight;
    *net.params.get_mut(w) = Tensor::zeros(net.params.get(w).dims().to_vec());
    let items = separable(20, 4);
    let split = pseudo_split(&net, &items, &items[..5]).unwrap();
    assert_eq!(split.counts(), [[20, 0], [5, 0]]);
    assert_eq!(SplitAssignment::subset(&items, &split.train, 0).len(), 20);
    assert!(SplitAssignment::subset(&items, &split.train, 1).is_empty());
}

#[test]
fn split_is_a_partition() {
    let cfg = tiny_config();
    let net = AestheticNet::new(cfg.net_config(2), 9).unwrap();
    let items = separable(30, 5);
    let split = pseudo_split(&net, &items, &items[..10]).unwrap();
    let a = SplitAssignment::subset(&items, &split.train, 0);
    let b = SplitAssignment::subset(&items, &split.train, 1);
    assert_eq!(a.len() + b.len(), items.len());
    let mut ids: Vec<u64> = a.iter().chain(&b).map(|i| i.id).collect();
    ids.sort();
    assert_eq!(ids, (0..30).collect::<Vec<_>>());
}

#[test]
fn frozen_parameters_are_bit_identical() {
    let cfg = tiny_config();
    let mut net = AestheticNet::new(cfg.net_config(10), 2).unwrap();
    let before = net.params.clone();
    let items = separable(16, 6);
    let train: Vec<Example> = items.iter().map(|i| i.score_example().unwrap()).collect();
    let spec = PhaseSpec {
        name: "head",
        epochs: 2,
        batch_size: 8,
        trainable: net.group_ids(Group::RegHead),
        orientation: Orientation::LowerBetter,
        patience: 2,
        meta: cfg.meta_config(8),
        seed: 1,
    };
    let shadow = net.clone();
    // always improving so the final parameters are kept
    let calls = std::cell::Cell::new(0.0);
    let out = run_phase(&mut net.params, &ScoreObjective { net: &shadow }, &train, &[], MrnMode::Off, &spec, &|_| {
        calls.set(calls.get() - 1.0);
        Ok(calls.get())
    })
    .unwrap();
    assert_eq!(out.history.len(), 2);
    for id in net.params.ids() {
        let same = net.params.get(id) == before.get(id);
        assert_eq!(same, shadow.group(id) != Group::RegHead, "{}", net.params.name(id));
    }
}

#[test]
fn phase_rejects_undersized_subsets() {
    let cfg = tiny_config();
    let items = separable(6, 7);
    let r = train_branch(StageSet { train: &items, valid: &items, meta: &[] }, &cfg, false, 1);
    assert!(matches!(r, Err(Error::Data(_))));
}

#[test]
fn ten_class_loss_improves_on_learnable_data() {
    let mut cfg = tiny_config();
    cfg.train.epochs_class = 4;
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = synthetic(120, 0.0, dir.path());
    let data = LoadedData::load(&m, &p, cfg.model.prep, cfg.model.input_side).unwrap();
    let set = StageSet { train: &data.train, valid: &data.valid, meta: &[] };
    let a = train_cr(set, &cfg, false, 4).unwrap();
    let losses: Vec<f64> = a.logs[0].1.iter().map(|l| l.mean_loss).collect();
    let best: Vec<f64> = losses.iter().scan(f64::INFINITY, |b, &l| { *b = b.min(l); Some(*b) }).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    assert!(best.last().unwrap() < &losses[0]);

    // without reweighting a branch is exactly the CR path
    let b = train_branch(set, &cfg, false, 4).unwrap();
    assert_eq!(a.net, b.net);
    assert!(a.mrn.is_none());
}

#[test]
fn reweighted_cr_trains_and_freezes_the_mrn() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = synthetic(100, 0.2, dir.path());
    let data = LoadedData::load(&m, &p, cfg.model.prep, cfg.model.input_side).unwrap();
    let meta = data.meta_set(cfg.meta.quota, 1).unwrap();
    assert_eq!(meta.len(), 20);
    let out = train_cr(StageSet { train: &data.train, valid: &data.valid, meta: &meta }, &cfg, true, 2).unwrap();
    let mrn = out.mrn.unwrap();
    assert_ne!(mrn, crate::nn::Mrn::with_hidden(2 ^ 0x6d72_6e00, cfg.meta.hidden));
}

#[test]
fn pcr_run_is_reproducible_and_ignores_corruption_flags() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = synthetic(120, 0.3, dir.path());
    let spec = RunSpec { variant: Variant::Pcr, prep: Prep::Aab, eca: true, mrn: true, seed: 3 };
    let a = run_experiment(&cfg, &m, &p, spec).unwrap();
    let b = run_experiment(&cfg, &m, &p, spec).unwrap();
    assert_eq!(a.report, b.report);
    let (Models::Pcr { split: sa, .. }, Models::Pcr { split: sb, .. }) = (&a.models, &b.models) else { panic!() };
    assert_eq!(sa, sb);
    assert_eq!(a.segments.as_ref().unwrap().len(), 10);
    assert!(a.predictions.iter().all(|(_, s, _)| (0.0..=10.0).contains(s)));

    // routing audit: the mask is invisible to every training path
    let mut flipped = m.clone();
    for s in &mut flipped.samples {
        s.corrupted = !s.corrupted;
    }
    let c = run_experiment(&cfg, &flipped, &p, spec).unwrap();
    assert_eq!(c.report, a.report);
}

#[test]
fn fused_scores_ignore_ground_truth() {
    let cfg = tiny_config();
    let models = PcrModels {
        c2: AestheticNet::new(cfg.net_config(2), 1).unwrap(),
        r0: Some(AestheticNet::new(cfg.net_config(10), 2).unwrap()),
        r1: None,
        r_all: AestheticNet::new(cfg.net_config(10), 3).unwrap(),
    };
    let mut items = separable(10, 8);
    let imgs: Vec<Tensor> = items.iter().map(|i| i.image.clone()).collect();
    let refs: Vec<&Tensor> = imgs.iter().collect();
    let before = models.predict(&refs).unwrap();
    items.reverse();
    let scores: Vec<Option<f64>> = items.iter().map(|i| i.score).collect();
    items.reverse();
    for (it, s) in items.iter_mut().zip(scores) {
        it.score = s;
    }
    let refs2: Vec<&Tensor> = items.iter().map(|i| &i.image).collect();
    assert_eq!(models.predict(&refs2).unwrap(), before);
    assert!(before.iter().all(|s| (0.0..=10.0).contains(s)));
}

#[test]
fn ablation_rows_follow_matrix_order() {
    let mut cfg = tiny_config();
    cfg.ablation.variants = vec![Variant::R, Variant::Cr];
    cfg.ablation.mrn = vec![false];
    cfg.ablation.seeds = vec![1, 2];
    let dir = tempfile::tempdir().unwrap();
    let (m, p) = synthetic(60, 0.0, dir.path());
    let rows = run_ablation(&cfg, &m, &p, 2).unwrap();
    let specs: Vec<RunSpec> = rows.iter().map(|r| r.spec).collect();
    assert_eq!(specs, ablation_matrix(&cfg));
    assert_eq!(rows, run_ablation(&cfg, &m, &p, 1).unwrap());
    let out = dir.path().join("ablation.csv");
    write_ablation_csv(&out, &rows).unwrap();
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with(&ABLATION_HEADER.join(",")));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn artifact_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let split = SplitAssignment { train: vec![(1, 0), (4, 1)], valid: vec![(9, 1)] };
    let p = dir.path().join("split.csv");
    write_split_csv(&p, &split).unwrap();
    assert_eq!(read_split_csv(&p).unwrap(), split);
    assert!(matches!(read_split_csv(&dir.path().join("none.csv")), Err(Error::Dependency(_))));
    let rows = crate::metrics::segment_report(&[1, 0], &[6.5, 6.2]).unwrap();
    let sp = dir.path().join("seg.csv");
    write_segment_csv(&sp, &rows).unwrap();
    let text = std::fs::read_to_string(sp).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.contains("6.0-7.0,2,0.500000,0.500000"));
    assert!(text.contains("0.0-1.0,0,,"));
}

#[test]
fn model_checkpoint_restores_by_name() {
    let cfg = tiny_config();
    let net = AestheticNet::<f64>::new(cfg.net_config(10), 3).unwrap();
    let mut adam = crate::optim::Adam::new(cfg.meta_config(1).main_adam(), net.params.tensors());
    adam.t = 7;
    adam.m[0] = Tensor::full(adam.m[0].dims().to_vec(), 0.25);
    adam.v[2] = Tensor::full(adam.v[2].dims().to_vec(), 1e-3);
    let model = TrainedModel { net, mrn: Some(crate::nn::Mrn::with_hidden(4, 6)), adam, logs: Vec::new() };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    save_model(&p, &model, &cfg).unwrap();

    let back = load_model(&p, &cfg, 10).unwrap();
    assert_eq!(back.net.params, model.net.params);
    assert_eq!(back.mrn, model.mrn);
    assert_eq!((back.adam.m, back.adam.v, back.adam.t), (model.adam.m.clone(), model.adam.v.clone(), 7));

    let mut lr_only = cfg.clone();
    lr_only.train.lr *= 2.0;
    assert!(load_model(&p, &lr_only, 10).is_ok());
    let mut wider = cfg.clone();
    wider.model.head_channels += 1;
    assert!(matches!(load_model(&p, &wider, 10), Err(Error::Config(_))));
    assert!(matches!(load_model(&p, &cfg, 2), Err(Error::Config(_))));
    assert!(matches!(load_model(&dir.path().join("none.ckpt"), &cfg, 10), Err(Error::Dependency(_))));

    let plain = TrainedModel { mrn: None, ..model };
    save_model(&p, &plain, &cfg).unwrap();
    assert!(load_model(&p, &cfg, 10).unwrap().mrn.is_none());
}
