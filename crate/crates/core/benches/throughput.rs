use std::convert::Infallible;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fewshot_core::exec::Execution;
use fewshot_core::mbr::compute_utility_matrix;
use fewshot_core::metrics::ChrF;
use fewshot_core::overlap::{overlap_report, NGramIndex, OverlapConfig};
use fewshot_core::text::WordPieceTokenizer;
use fewshot_core::ul2::{PreprocessConfig, Ul2Preprocessor};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn documents(n: usize, words: usize) -> Vec<String> {
    (0..n).map(|d| (0..words).map(|i| format!("w{}", (i * 31 + d * 17) % 5003)).collect::<Vec<_>>().join(" ")).collect()
}

fn candidates(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("The committee approved the {} proposal on day {} after {} rounds", i % 7, i, i % 5))
        .collect()
}

fn utility_matrix(c: &mut Criterion) {
    let mut g = c.benchmark_group("utility_matrix");
    for n in [16, 64] {
        let cands = candidates(n);
        g.throughput(Throughput::Elements((n * (n - 1) / 2) as u64));
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n), &cands, |b, cands| {
                b.iter(|| compute_utility_matrix(black_box(cands), &ChrF, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn overlap_index(c: &mut Criterion) {
    let docs = documents(2000, 200);
    let refs: Vec<String> = documents(500, 40);
    let tok = WordPieceTokenizer;
    let cfg = OverlapConfig::default();
    let mut g = c.benchmark_group("overlap");
    g.sample_size(10);
    g.throughput(Throughput::Elements(docs.len() as u64));
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("build", name), |b| {
            b.iter(|| NGramIndex::build(docs.iter().cloned().map(Ok::<_, Infallible>), cfg, &tok, exec).unwrap())
        });
        let index = NGramIndex::build(docs.iter().cloned().map(Ok::<_, Infallible>), cfg, &tok, exec).unwrap();
        g.bench_function(BenchmarkId::new("query", name), |b| {
            b.iter(|| overlap_report(black_box(&refs), &index, &tok, exec).unwrap())
        });
    }
    g.finish();
}

fn ul2_build(c: &mut Criterion) {
    let docs = documents(1000, 600);
    let tok = WordPieceTokenizer;
    let pre = Ul2Preprocessor::new(PreprocessConfig { max_sequence_length: 512, ..Default::default() }, &tok).unwrap();
    let mut g = c.benchmark_group("ul2_build");
    g.sample_size(10);
    g.throughput(Throughput::Elements(docs.len() as u64));
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut n = 0usize;
                pre.build(docs.iter().cloned().map(Ok::<_, Infallible>), exec, |ex| {
                    n += ex.target.len();
                    Ok(())
                })
                .unwrap();
                n
            })
        });
    }
    g.finish();
}

criterion_group!(benches, utility_matrix, overlap_index, ul2_build);
criterion_main!(benches);
