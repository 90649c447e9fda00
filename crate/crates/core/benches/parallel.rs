//! Sequential vs. rayon execution of the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flushleak::attack::{analyze_detection_with, DEFAULT_SEQUENCE_CAP};
use flushleak::flush::{flush_refill_map_with, FlushBehavior, FlushKind, RefillOrder};
use flushleak::policy::DEFAULT_STATE_CAP;
use flushleak::{Execution, PolicyConfig};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn channel(c: &mut Criterion) {
    let mut group = c.benchmark_group("flush_refill_map");
    for policy in [
        PolicyConfig::plru(16).unwrap(),
        PolicyConfig::qlru(8).unwrap(),
    ] {
        let refill = RefillOrder::PolicyDefault.blocks(policy);
        let label = format!("{}-{}", policy.kind().name(), policy.assoc());
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, &label), &exec, |b, &exec| {
                b.iter(|| {
                    flush_refill_map_with(
                        black_box(policy),
                        FlushKind::Wbinvd,
                        FlushBehavior::PreservesControl,
                        &refill,
                        DEFAULT_STATE_CAP,
                        exec,
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn detection(c: &mut Criterion) {
    let mut group = c.benchmark_group("analyze_detection");
    group.sample_size(10);
    let policy = PolicyConfig::plru(8).unwrap();
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "plru-8/m4/k7"), &exec, |b, &exec| {
            b.iter(|| {
                analyze_detection_with(black_box(policy), 4, 7, false, DEFAULT_SEQUENCE_CAP, exec)
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, channel, detection);
criterion_main!(benches);
