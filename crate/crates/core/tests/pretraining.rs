mod common;

use lightpath::encoder::EncoderModel;
use lightpath::graph::SparsePath;
use lightpath::numerics::{ExprGraph, ParameterSet};
use lightpath::rng;
use lightpath::ssl::{
    batch_losses, build_views, momentum_fold, pretrain, BoundDual, DualEncoder, PositivePairing, PretrainConfig,
    RelationHead, ViewConfig,
};

fn quick(epochs: usize, batch_size: usize) -> PretrainConfig {
    PretrainConfig {
        epochs,
        warmup_epochs: 1,
        batch_size,
        lr: 2e-3,
        ..Default::default()
    }
}

#[test]
fn auxiliary_is_the_fold_of_the_main_trajectory() {
    let net = common::network(6);
    let paths = common::walks(&net, 20, 8, 3);
    let main = common::encoder(&net, common::config(&net, 2, 2, 8, 8), 4);
    let mut dual = DualEncoder::new(main, 0.9).unwrap();
    let initial = dual.aux.params().clone();
    let mut head = RelationHead::new(8, 4).unwrap();
    let mut snapshots: Vec<ParameterSet<f64>> = Vec::new();
    pretrain(&mut dual, &mut head, &paths, &quick(4, 6), 8, |s| snapshots.push(s.main.params().clone())).unwrap();
    assert_eq!(snapshots.len(), 4 * 4);

    let mut replay = initial.clone();
    for theta in &snapshots {
        momentum_fold(&mut replay, theta, 0.9).unwrap();
    }
    assert_eq!(&replay, dual.aux.params());
    assert_ne!(&initial, dual.aux.params());
}

#[test]
fn unit_momentum_freezes_the_auxiliary_encoder() {
    let net = common::network(6);
    let paths = common::walks(&net, 12, 8, 5);
    let main = common::encoder(&net, common::config(&net, 2, 2, 8, 8), 6);
    let mut dual = DualEncoder::new(main, 1.0).unwrap();
    let before = dual.aux.clone();
    let probe = SparsePath::full(&paths[0]);
    let pr_before = before.encode(&probe).unwrap().pr;
    let mut head = RelationHead::new(8, 6).unwrap();
    pretrain(&mut dual, &mut head, &paths, &quick(3, 4), 2, |_| {}).unwrap();
    assert_eq!(dual.aux, before);
    assert_eq!(dual.aux.encode(&probe).unwrap().pr, pr_before);
    assert_ne!(dual.main, before);
}

#[test]
fn identical_encoders_give_identical_representations() {
    let net = common::network(6);
    let paths = common::walks(&net, 6, 8, 7);
    let dual = DualEncoder::new(common::encoder(&net, common::config(&net, 2, 2, 8, 8), 1), 0.99).unwrap();
    let head = RelationHead::new(8, 1).unwrap();
    let mut r = rng::rng_from(3);
    let views: Vec<_> = paths
        .iter()
        .map(|p| build_views(p, &ViewConfig::default(), &mut r).unwrap())
        .collect();
    let mut g = ExprGraph::new();
    let bound = BoundDual::new(&mut g, &dual, &head);
    for j in 0..2 {
        let batch: Vec<SparsePath> = views.iter().map(|v| if j == 0 { v.0.clone() } else { v.1.clone() }).collect();
        let a = bound.main.encode(&mut g, &batch).unwrap();
        let b = bound.aux.encode(&mut g, &batch).unwrap();
        let (pa, pb) = (a.prs(&mut g).unwrap(), b.prs(&mut g).unwrap());
        assert_eq!(g.value(pa), g.value(pb));
    }
}

#[test]
fn single_batch_loss_decreases() {
    let net = common::network(6);
    let paths = common::walks(&net, 8, 10, 9);
    let main = common::encoder(&net, common::config(&net, 2, 2, 16, 10), 2);
    let mut dual = DualEncoder::new(main, 0.99).unwrap();
    let mut head = RelationHead::new(16, 2).unwrap();
    let config = PretrainConfig {
        epochs: 50,
        warmup_epochs: 5,
        batch_size: 8,
        ..Default::default()
    };
    let log = pretrain(&mut dual, &mut head, &paths, &config, 1, |_| {}).unwrap();
    assert_eq!(log.len(), 50);
    assert!(log[49].total < log[0].total, "{} -> {}", log[0].total, log[49].total);
}

/// Mean relation loss (cross-network plus cross-view) over `n` seeded batches.
fn mean_relation_loss(dual: &DualEncoder<f64>, head: &RelationHead<f64>, views: ViewConfig, n: u64) -> f64 {
    let net = common::network(8);
    let mut total = 0.0;
    for seed in 0..n {
        let paths = common::walks(&net, 10, 10, 1000 + seed);
        let mut r = rng::fork(seed, "swap-views");
        let v: Vec<_> = paths.iter().map(|p| build_views(p, &views, &mut r).unwrap()).collect();
        let mut g = ExprGraph::new();
        let bound = BoundDual::new(&mut g, dual, head);
        let mut neg = rng::fork(seed, "swap-negatives");
        let l = batch_losses(&mut g, &bound, &paths, &v, PositivePairing::SameView, &mut neg).unwrap();
        total += g.value(l.cn.loss).item() + g.value(l.cv.loss).item();
    }
    total / n as f64
}

#[test]
fn swapping_view_ratios_preserves_the_mean_relation_loss() {
    let net = common::network(8);
    let paths = common::walks(&net, 60, 10, 11);
    let mut dual = DualEncoder::new(common::encoder(&net, common::config(&net, 2, 2, 16, 10), 3), 0.99).unwrap();
    let mut head = RelationHead::new(16, 3).unwrap();
    pretrain(&mut dual, &mut head, &paths, &quick(5, 10), 4, |_| {}).unwrap();

    let a = mean_relation_loss(&dual, &head, ViewConfig { gamma1: 0.4, gamma2: 0.8 }, 100);
    let b = mean_relation_loss(&dual, &head, ViewConfig { gamma1: 0.8, gamma2: 0.4 }, 100);
    assert!((a - b).abs() / a.max(b) < 0.02, "{} vs {}", a, b);
}

#[test]
fn momentum_recursion_matches_closed_form() {
    let net = common::network(4);
    let c = common::config(&net, 2, 1, 4, 4);
    let theta: EncoderModel<f64> = EncoderModel::new(c.clone(), 1).unwrap();
    let start: EncoderModel<f64> = EncoderModel::new(c, 2).unwrap();
    let m = 0.99;
    let mut aux = start.params().clone();
    for k in 1..=1000 {
        momentum_fold(&mut aux, theta.params(), m).unwrap();
        if k % 250 == 0 {
            let mk = m.powi(k);
            for ((_, a), ((_, s), (_, t))) in aux.iter().zip(start.params().iter().zip(theta.params().iter())) {
                for ((x, s), t) in a.data().iter().zip(s.data()).zip(t.data()) {
                    assert!((x - (mk * s + (1.0 - mk) * t)).abs() < 1e-12);
                }
            }
        }
    }
}
