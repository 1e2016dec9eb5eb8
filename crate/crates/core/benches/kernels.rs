//! Rayon pool against a single worker (or the sequential build, with
//! `--no-default-features`) on the hot paths: convolution forward and
//! backward, one training step, and SPIE.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segadapt::data::io::tensor_to_image;
use segadapt::data::{make_batches, synth_generate, Dataset};
use segadapt::metrics::{spie, SegmenterParams};
use segadapt::model::{ArchConfig, ModelParams};
use segadapt::trainer::{compute_gradients, TrainConfig};
use segadapt::{Graph, Tensor};

fn random(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv_round_trip(x: &Tensor, k: &Tensor, b: &Tensor) {
    let mut g = Graph::new();
    let (xv, kv, bv) = (g.param(x.clone()), g.param(k.clone()), g.param(b.clone()));
    let y = g.conv2d(xv, kv, bv, 1, 1).unwrap();
    let m = g.mean(y);
    g.backward(m).unwrap();
}

/// Runs `f` under each backend the build offers.
fn variants(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let mut grp = c.benchmark_group(group);
    grp.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        grp.bench_function(BenchmarkId::new("rayon", "1-thread"), |bch| bch.iter(|| single.install(&f)));
        let threads = rayon::current_num_threads();
        grp.bench_function(BenchmarkId::new("rayon", format!("{threads}-threads")), |bch| bch.iter(&f));
    }
    #[cfg(not(feature = "parallel"))]
    grp.bench_function(BenchmarkId::new("sequential", "1-thread"), |bch| bch.iter(&f));
    grp.finish();
}

fn bench_conv(c: &mut Criterion) {
    let x = random(vec![8, 16, 32, 32], 1);
    let k = random(vec![32, 16, 3, 3], 2);
    let b = random(vec![32], 3);
    variants(c, "conv2d_forward_backward", || conv_round_trip(&x, &k, &b));
}

fn bench_step(c: &mut Criterion) {
    let corpus = synth_generate(1, 16, (32, 32), 6).unwrap();
    let data: Vec<Dataset> = vec![corpus.a, corpus.b, corpus.c];
    let cfg = TrainConfig::default();
    let batch = make_batches(&data, cfg.batch_size, cfg.labelled_fraction, 0).unwrap().remove(0);
    let params = ModelParams::init(&ArchConfig::default(), 0).unwrap();
    variants(c, "training_step", || {
        compute_gradients(&params, &batch, &cfg).unwrap();
    });
}

fn bench_spie(c: &mut Criterion) {
    let corpus = synth_generate(2, 16, (32, 32), 6).unwrap();
    let images: Vec<_> = corpus.a.samples().iter().map(|s| tensor_to_image(&s.image).unwrap()).collect();
    let masks: Vec<_> = corpus.b.samples().iter().map(|s| tensor_to_image(&s.image).unwrap()).collect();
    let p = SegmenterParams::default();
    variants(c, "spie_16_images", || {
        spie(&masks, &images, &p).unwrap();
    });
}

criterion_group!(benches, bench_conv, bench_step, bench_spie);
criterion_main!(benches);
