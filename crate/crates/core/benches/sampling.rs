//! Throughput benchmarks for the hot loops: weak sampling and
//! Monte-Carlo power estimation.
//!
//! With the `parallel` feature on (the default), every workload runs
//! twice — once on the global rayon pool and once inside a one-thread
//! pool — so the parallel speedup is measured directly.  With
//! `--no-default-features` only the plain sequential build is timed.
//!
//!     cargo bench -p mgverify-core
//!     cargo bench -p mgverify-core --no-default-features

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use mgverify_core::experiments::{
    brickwork_circuit, reference_circuit, REFERENCE_GAMMA, REFERENCE_P_C,
};
use mgverify_core::gaussian::weak_sample;
use mgverify_core::noise::{Bindings, ErrorModelConfig};
use mgverify_core::stats::{self, TestKind};

/// Run `work` once per scheduling mode: the ambient pool, plus (when
/// the parallel feature is on) a single-thread pool for the baseline.
fn for_each_mode(mut run: impl FnMut(&str, &dyn Fn(&(dyn Fn() + Sync)))) {
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("pool");
        run("parallel", &|work| work());
        run("one-thread", &|work| single.install(|| work()));
    }
    #[cfg(not(feature = "parallel"))]
    run("sequential", &|work| work());
}

fn bench_weak_sampling(c: &mut Criterion) {
    let circuit = reference_circuit(0).expect("reference circuit");
    let model = ErrorModelConfig::new(REFERENCE_P_C, REFERENCE_GAMMA);
    let bindings = model.bind(&circuit).expect("bindings");
    let shots = 400usize;

    let mut group = c.benchmark_group("weak_sample/reference-noisy");
    group.throughput(Throughput::Elements(shots as u64));
    for_each_mode(|mode, in_pool| {
        group.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| {
                in_pool(&|| {
                    weak_sample(&circuit, &bindings, shots, 7).expect("sampling");
                })
            })
        });
    });
    group.finish();

    let wide = brickwork_circuit(32, 16, 1).expect("wide circuit");
    let none = Bindings::none();
    let mut group = c.benchmark_group("weak_sample/wide-noiseless");
    group.throughput(Throughput::Elements(shots as u64));
    group.sample_size(20);
    for_each_mode(|mode, in_pool| {
        group.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| {
                in_pool(&|| {
                    weak_sample(&wide, &none, shots, 7).expect("sampling");
                })
            })
        });
    });
    group.finish();
}

fn bench_power_estimation(c: &mut Criterion) {
    // Two fixed discrete distributions, resampled each repetition: the
    // shape of the per-grid-point work in the experiment drivers.
    let p: Vec<f64> = (0..64).map(|i| (i as f64 + 1.0).recip()).collect();
    let q: Vec<f64> = (0..64).map(|i| (64.0 - i as f64).recip()).collect();
    let norm_p: f64 = p.iter().sum();
    let norm_q: f64 = q.iter().sum();
    let p: Vec<f64> = p.iter().map(|v| v / norm_p).collect();
    let q: Vec<f64> = q.iter().map(|v| v / norm_q).collect();
    let shots = 400usize;
    let reps = 200usize;

    let mut group = c.benchmark_group("power/ks-keep-rate");
    group.throughput(Throughput::Elements(reps as u64));
    for_each_mode(|mode, in_pool| {
        group.bench_function(BenchmarkId::from_parameter(mode), |b| {
            b.iter(|| {
                in_pool(&|| {
                    stats::monte_carlo_keep_rate(reps, 5, |_, rng| {
                        let xs: Vec<f64> = mgverify_core::dense::sample_indices(&p, shots, rng)
                            .into_iter()
                            .map(|i| i as f64)
                            .collect();
                        let ys: Vec<f64> = mgverify_core::dense::sample_indices(&q, shots, rng)
                            .into_iter()
                            .map(|i| i as f64)
                            .collect();
                        stats::keeps_null(TestKind::Ks, &xs, &ys, 0.05)
                    })
                    .expect("keep rate");
                })
            })
        });
    });
    group.finish();
}

criterion_group!(benches, bench_weak_sampling, bench_power_estimation);
criterion_main!(benches);
