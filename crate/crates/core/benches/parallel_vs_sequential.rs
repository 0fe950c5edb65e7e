use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use labelforge::audit::wilson_coverage;
use labelforge::duplicates::find_candidate_pairs_with;
use labelforge::synth::{generate, SynthConfig};
use labelforge::workflow::{WorkflowConfig, WorkflowState};
use labelforge::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn candidate_pairs(c: &mut Criterion) {
    let ds = generate(&SynthConfig {
        n: 20_000,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut g = c.benchmark_group("candidate_pairs");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| find_candidate_pairs_with(&ds.store, 0.9, exec).unwrap())
        });
    }
    g.finish();
}

fn workflow_round(c: &mut Criterion) {
    let ds = generate(&SynthConfig {
        n: 10_000,
        ..SynthConfig::default()
    })
    .unwrap();
    let (seed, rest) = ds.seed_split(0.1);
    let state = WorkflowState::init("bench", &ds.attribute, &seed, rest, WorkflowConfig::default()).unwrap();
    let mut g = c.benchmark_group("workflow_round");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut s = state.clone();
                s.run_round_with(&ds.store, exec).unwrap().len()
            })
        });
    }
    g.finish();
}

fn coverage(c: &mut Criterion) {
    let mut g = c.benchmark_group("wilson_coverage");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| wilson_coverage(0.2, 500, 1000, 0, exec)));
    }
    g.finish();
}

criterion_group!(benches, candidate_pairs, workflow_round, coverage);
criterion_main!(benches);
