use std::hint::black_box;

use ccpred::charting::{ChartPosition, FcfModel};
use ccpred::dataset::generate_scenario;
use ccpred::dissimilarity::geodesic;
use ccpred::eval::{select_array, sum_rate};
use ccpred::features::{angle_delay_profile, csi_feature, FeatureConfig};
use ccpred::phase_linalg::{principal_eigpair, DEFAULT_TOL};
use ccpred::wiener::{build_filter, estimate_correlations};
use ccpred::{
    AutocorrMatrix, CsiTensor, DissimilarityMatrix, NoiseModel, ScenarioConfig, Triangulation, C64,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_csi(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> CsiTensor {
    let (b, m, n) = shape;
    let data = (0..b * m * n)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    CsiTensor::from_vec(b, m, n, data).unwrap()
}

fn eigen(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut z = AutocorrMatrix::zeros(8);
    for _ in 0..8 {
        let v: Vec<C64> = (0..8)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        z.add_outer(&v, 1.0);
    }
    c.bench_function("principal_eigpair 8x8", |b| {
        b.iter(|| principal_eigpair(black_box(&z), DEFAULT_TOL).unwrap())
    });
}

fn wiener(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let csi: Vec<CsiTensor> = (0..500).map(|_| random_csi(&mut rng, (4, 8, 8))).collect();
    c.bench_function("estimate_correlations L=500 lag=49", |b| {
        b.iter(|| estimate_correlations(black_box(&csi), 49).unwrap())
    });
    let model = estimate_correlations(&csi, 49).unwrap();
    c.bench_function("build_filter K=25", |b| {
        b.iter(|| build_filter(black_box(&model), 25, 10).unwrap())
    });
}

fn geometry(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("delaunay");
    for n in [500, 3000] {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(0.0..15.0), rng.random_range(0.0..13.0)])
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| {
            b.iter(|| Triangulation::from_points(black_box(pts)).unwrap())
        });
    }
    group.finish();
    let pts: Vec<[f64; 2]> = (0..3000)
        .map(|_| [rng.random_range(0.0..15.0), rng.random_range(0.0..13.0)])
        .collect();
    let tri = Triangulation::from_points(&pts).unwrap();
    let queries: Vec<ChartPosition> = (0..100)
        .map(|_| ChartPosition([rng.random_range(0.0..15.0), rng.random_range(0.0..13.0)]))
        .collect();
    c.bench_function("locate x100 in 3000 points", |b| {
        b.iter(|| {
            for &q in &queries {
                black_box(tri.locate(black_box(q)));
            }
        })
    });
}

fn features(c: &mut Criterion) {
    let cfg = ScenarioConfig {
        num_snapshots: 1,
        ..ScenarioConfig::default()
    };
    let h = generate_scenario(&cfg).unwrap().snapshots()[0].csi.clone();
    c.bench_function("csi_feature", |b| {
        b.iter(|| csi_feature(black_box(&h), 4).unwrap())
    });
    let fcfg = FeatureConfig::default();
    c.bench_function("angle_delay_profile", |b| {
        b.iter(|| angle_delay_profile(black_box(&h), &fcfg).unwrap())
    });
}

fn dissimilarity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 1000;
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.0..15.0), rng.random_range(0.0..13.0)])
        .collect();
    let data = (0..n * n)
        .map(|e| {
            let (a, b) = (pts[e / n], pts[e % n]);
            (a[0] - b[0]).hypot(a[1] - b[1])
        })
        .collect();
    let d = DissimilarityMatrix::from_full(n, data).unwrap();
    let mut group = c.benchmark_group("geodesic");
    group.sample_size(10);
    group.bench_function("n=1000 k=20", |b| {
        b.iter(|| geodesic(black_box(&d), 20).unwrap())
    });
    group.finish();
}

fn charting(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 256;
    let model = FcfModel::new(dim, &[256, 128, 64], 0).unwrap();
    let features: Vec<_> = (0..256)
        .map(|_| {
            ccpred::features::CsiFeature((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect();
    c.bench_function("fcf forward x256", |b| {
        b.iter(|| model.forward_batch(black_box(&features)).unwrap())
    });
}

fn sum_rates(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h, g) = (
        random_csi(&mut rng, (4, 8, 32)),
        random_csi(&mut rng, (4, 8, 32)),
    );
    let noise = NoiseModel::new(0.01, 100.0).unwrap();
    c.bench_function("select_array + sum_rate", |b| {
        b.iter(|| sum_rate(black_box(&h), black_box(&g), select_array(&g), &noise).unwrap())
    });
}

criterion_group!(
    benches,
    eigen,
    wiener,
    geometry,
    features,
    dissimilarity,
    charting,
    sum_rates
);
criterion_main!(benches);
