use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use osfl_core::chain::{
    run_consensus, Block, ConsensusConfig, Identity, Keyring, NodeId, NodeKind, RoundSpec, SignatureScheme,
    Transaction, TxKind,
};
use osfl_core::classifier::McddModel;
use osfl_core::detector::{default_architecture, threshold_from_errors};
use osfl_core::nn::{self, Activation, Architecture, ParamVector, ReconstructionMse};

fn points(n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..d).map(|j| ((i * 31 + j * 7) % 97) as f64 / 97.0).collect())
        .collect()
}

fn nn_backward(c: &mut Criterion) {
    let params = ParamVector::init(default_architecture(40), 1);
    let pts = points(32, 40);
    let batch: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    c.bench_function("dae backward, d=40, batch 32", |b| {
        b.iter(|| nn::backward(black_box(&params), &batch, &ReconstructionMse).unwrap())
    });
}

fn mcdd_grad(c: &mut Criterion) {
    let arch = Architecture::new(
        vec![40, 32, 16, 8],
        vec![Activation::Relu, Activation::Relu, Activation::Identity],
    )
    .unwrap();
    let means = (0..4).map(|k| vec![k as f64; 8]).collect();
    let m = McddModel::new(ParamVector::init(arch, 2), means, vec![0, 1, 2, 3], 1.0, 0.1).unwrap();
    let pts = points(32, 40);
    let xs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
    let ys: Vec<usize> = (0..32).map(|i| i % 4).collect();
    c.bench_function("mcdd loss and grad, K=4, batch 32", |b| {
        b.iter(|| black_box(&m).loss_and_grad(&xs, &ys).unwrap())
    });
}

fn threshold(c: &mut Criterion) {
    let re: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 10_007) as f64 / 10_007.0).collect();
    c.bench_function("median/mad threshold, 10k errors", |b| {
        b.iter(|| threshold_from_errors(black_box(&re), 3.0).unwrap())
    });
}

fn consensus(c: &mut Criterion) {
    for scheme in [SignatureScheme::Ed25519, SignatureScheme::KeyedHash] {
        let (n_val, n_work) = (7u32, 8u32);
        let mut ids = BTreeMap::new();
        let mut keyring = Keyring::new();
        for i in 0..n_val + n_work {
            let id = Identity::generate(NodeId(i), NodeKind::MecActive, scheme, 3);
            keyring.register(&id).unwrap();
            ids.insert(NodeId(i), id);
        }
        let validators: Vec<NodeId> = (0..n_val).map(NodeId).collect();
        let workers: Vec<NodeId> = (n_val..n_val + n_work).map(NodeId).collect();
        let txs: Vec<Transaction> = workers
            .iter()
            .map(|w| Transaction::new(&ids[w], TxKind::Ad, 1, 100, vec![w.0 as u8; 4096]))
            .collect();
        let faults = BTreeMap::new();
        let tip = Block::genesis(0, validators.clone());
        let spec = RoundSpec {
            round: 1,
            validators: &validators,
            observers: &workers,
            txs: &txs,
            faults: &faults,
            tip: &tip,
        };
        let scorer = |_: NodeId, tx: &Transaction| tx.author.0 as f64 * 1e-3;
        let cfg = ConsensusConfig::default();
        c.bench_function(&format!("consensus round, 7 validators, 8 txs, {scheme:?}"), |b| {
            b.iter(|| run_consensus(&spec, &ids, &keyring, &scorer, &cfg, 5))
        });
    }
}

criterion_group!(benches, nn_backward, mcdd_grad, threshold, consensus);
criterion_main!(benches);
