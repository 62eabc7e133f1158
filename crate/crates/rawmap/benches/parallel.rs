//! Compares the rayon data-parallel hot paths against a single-thread pool:
//! scene rendering, transform-bank fitting, and batch gradient computation.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rawmap::color::{Illuminant, RawImage};
use rawmap::knn::TransformBank;
use rawmap::mlp::{backward, MlpModel, MlpMode, PixelSampleSet};
use rawmap::par;
use rawmap::spectral::{
    auto_exposure, blackbody_spd, normalize_power, random_reflectance, render, CameraModel,
    SpectralScene,
};

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

fn make_scene(rng: &mut ChaCha8Rng, size: usize, palette: usize) -> SpectralScene {
    let curves: Vec<_> =
        (0..palette).map(|i| random_reflectance(rng, format!("r{i}"))).collect();
    let indices = (0..size * size).map(|_| rng.random_range(0..palette)).collect();
    SpectralScene::new("bench", size, size, curves, indices).unwrap()
}

fn bench_render(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scene = make_scene(&mut rng, 48, 120);
    let cam = CameraModel::preset("broadband_a").unwrap();
    let spds: Vec<_> = (0..24)
        .map(|i| {
            normalize_power(&blackbody_spd(2500.0 + 300.0 * i as f64).unwrap(), 800.0).unwrap()
        })
        .collect();
    let job = |spd: &rawmap::spectral::SpectralCurve| {
        let e = auto_exposure(&scene, spd, &cam).unwrap();
        render(&scene, spd, &cam, e).unwrap()
    };
    let mut g = c.benchmark_group("render_24_images");
    g.bench_function("threads_1", |b| {
        let p = pool(1);
        b.iter(|| p.install(|| par::map(&spds, job)))
    });
    g.bench_function("threads_all", |b| b.iter(|| par::map(&spds, job)));
    g.finish();
}

fn random_images(rng: &mut ChaCha8Rng, n: usize, px: usize) -> (Vec<Illuminant>, Vec<RawImage>) {
    let illums: Vec<Illuminant> = (0..n)
        .map(|i| {
            Illuminant::new(
                [
                    0.4 + rng.random::<f64>(),
                    0.4 + rng.random::<f64>(),
                    0.4 + rng.random::<f64>(),
                ],
                format!("l{i}"),
            )
            .unwrap()
        })
        .collect();
    let images = illums
        .iter()
        .map(|l| {
            let data = (0..px * 3).map(|_| rng.random::<f64>()).collect();
            RawImage::new(px, 1, 3, data, "cam", l.id.clone()).unwrap()
        })
        .collect();
    (illums, images)
}

fn bench_bank_fit(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (illums, images) = random_images(&mut rng, 24, 1024);
    let mut g = c.benchmark_group("bank_fit_24x24");
    g.bench_function("threads_1", |b| {
        let p = pool(1);
        b.iter(|| p.install(|| TransformBank::fit(&illums, &images).unwrap()))
    });
    g.bench_function("threads_all", |b| b.iter(|| TransformBank::fit(&illums, &images).unwrap()));
    g.finish();
}

fn bench_batch_gradients(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = MlpModel::new(MlpMode::Illum, &[32, 32], 7).unwrap();
    let batch: Vec<(Vec<f64>, PixelSampleSet)> = (0..32)
        .map(|_| {
            let input: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let src: Vec<[f64; 3]> = (0..1000)
                .map(|_| {
                    [
                        0.05 + rng.random::<f64>(),
                        0.05 + rng.random::<f64>(),
                        0.05 + rng.random::<f64>(),
                    ]
                })
                .collect();
            let dst = src.iter().map(|p| [p[0] * 1.2, p[1], p[2] * 0.8]).collect();
            (input, PixelSampleSet::new(src, dst).unwrap())
        })
        .collect();
    let job = |item: &(Vec<f64>, PixelSampleSet)| {
        backward(&model, std::slice::from_ref(item)).unwrap()
    };
    let mut g = c.benchmark_group("batch_gradients_32x1000");
    g.bench_function("threads_1", |b| {
        let p = pool(1);
        b.iter(|| p.install(|| par::map(&batch, job)))
    });
    g.bench_function("threads_all", |b| b.iter(|| par::map(&batch, job)));
    g.finish();
}

criterion_group!(benches, bench_render, bench_bank_fit, bench_batch_gradients);
criterion_main!(benches);
