use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use topicseg::eval::word_counts;
use topicseg::hmm::{boundary_posteriors, build_hmm, viterbi};
use topicseg::tree::train;
use topicseg::{HmmConfig, TreeTrainConfig};
use topicseg_bench::fixture;

fn decoding(c: &mut Criterion) {
    let mut g = c.benchmark_group("hmm");
    for clusters in [10, 100] {
        let f = fixture(clusters, 1, 200);
        let p = &f.prepared[0];
        let em = p.emissions.as_ref().unwrap();
        let hmm = build_hmm(&f.lm, HmmConfig::new(clusters, 1e-4).unwrap()).unwrap();
        g.bench_with_input(BenchmarkId::new("viterbi", clusters), &clusters, |b, _| {
            b.iter(|| viterbi(&hmm, black_box(em), None).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("forward_backward", clusters), &clusters, |b, _| {
            b.iter(|| boundary_posteriors(&hmm, black_box(em), None).unwrap())
        });
    }
    g.finish();
}

fn word_metric(c: &mut Criterion) {
    let n = 20_000;
    let reference: Vec<usize> = (1..n).step_by(150).collect();
    let hypothesis: Vec<usize> = (7..n).step_by(130).collect();
    c.bench_function("word_counts_20k", |b| {
        b.iter(|| word_counts(n, black_box(&reference), black_box(&hypothesis), 50).unwrap())
    });
}

fn tree_training(c: &mut Criterion) {
    let f = fixture(10, 20, 100);
    let vectors: Vec<_> = f.prepared.iter().flat_map(|p| p.vectors()).collect();
    let schema = topicseg::synth::synth_schema();
    let cfg = TreeTrainConfig::default();
    let mut g = c.benchmark_group("tree");
    g.sample_size(10);
    g.bench_function("train_2k_rows", |b| b.iter(|| train(black_box(&vectors), &schema, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, decoding, word_metric, tree_training);
criterion_main!(benches);
