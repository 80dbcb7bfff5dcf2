#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ltfb::datastore::{write_bundles, BundleCatalog};
use ltfb::nn::{Activation, DenseTensor, GradAt, Mlp, MlpSpec};
use ltfb::surrogate::{ModalityDims, SurrogateConfig};
use ltfb::synthdata::{GeneratorSpec, SampleRecord, Simulator};
use ltfb::tournament::{RunConfig, RunMode};

pub fn records(dims: ModalityDims, n: usize) -> Vec<SampleRecord> {
    Simulator::new(GeneratorSpec::new(dims, 1))
        .unwrap()
        .generate_dataset(n, 2)
        .unwrap()
}

pub fn memory_catalog(n: usize, per_file: usize) -> Arc<BundleCatalog> {
    let dims = ModalityDims::tiny();
    Arc::new(BundleCatalog::from_records(&records(dims, n), &dims, per_file).unwrap())
}

pub fn disk_catalog(
    dir: &Path,
    dims: ModalityDims,
    n: usize,
    per_file: usize,
) -> Arc<BundleCatalog> {
    write_bundles(&records(dims, n), &dims, per_file, dir).unwrap();
    Arc::new(BundleCatalog::open(dir).unwrap())
}

/// Small fast run on tiny dims.
pub fn tiny_run(
    mode: RunMode,
    k: usize,
    steps: u64,
    interval: Option<u64>,
    seed: u64,
) -> RunConfig {
    let mut cfg = RunConfig {
        mode,
        surrogate: SurrogateConfig::with_dims(ModalityDims::tiny()),
        steps,
        pretrain_steps: 50,
        pretrain_pool: 512,
        seed,
        ..RunConfig::default()
    };
    cfg.surrogate.forward_hidden = vec![16];
    cfg.surrogate.inverse_hidden = vec![16];
    cfg.surrogate.encoder_hidden = vec![16];
    cfg.surrogate.discriminator_hidden = vec![8];
    cfg.trainer.n_shards = 2;
    cfg.trainer.batch_size = 32;
    cfg.ltfb.k_trainers = k;
    cfg.ltfb.tournament_interval = interval;
    cfg.ltfb.pairing_seed = seed;
    cfg
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub const ACTIVATIONS: [Activation; 5] = [
    Activation::Identity,
    Activation::Relu,
    Activation::LeakyRelu { slope: 0.1 },
    Activation::Tanh,
    Activation::Sigmoid,
];

/// A random network: 1 to 3 layers, widths 1..=6, random activations.
pub fn random_spec(rng: &mut ChaCha8Rng) -> MlpSpec {
    let layers = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..=layers).map(|_| rng.random_range(1..=6)).collect();
    let acts = (0..layers)
        .map(|_| ACTIVATIONS[rng.random_range(0..ACTIVATIONS.len())])
        .collect();
    MlpSpec::new(widths, acts, rng.random())
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseTensor<f64> {
    DenseTensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

/// Worst relative error between backprop and central differences for the
/// scalar loss `Σ w ⊙ net(x)`, over every parameter and input.
pub fn mlp_gradient_error(spec: MlpSpec, batch: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::<f64>::new(spec.clone()).unwrap();
    // Random biases too: zero biases put ReLU units exactly on their kink.
    for v in net.params_mut().as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    let x = random_matrix(&mut rng, batch, spec.input_dim());
    let w = random_matrix(&mut rng, batch, spec.output_dim());
    let loss = |net: &Mlp<f64>, x: &DenseTensor<f64>| -> f64 {
        let out = net.predict(x).unwrap();
        out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    };
    let (_, tape) = net.forward(&x).unwrap();
    let (grads, dx) = net.backward(&tape, &w, GradAt::Output).unwrap();

    let mut worst = 0.0f64;
    for i in 0..grads.len() {
        let orig = net.params().as_slice()[i];
        let fd = central_difference(|d| {
            net.params_mut().as_mut_slice()[i] = orig + d;
            let v = loss(&net, &x);
            net.params_mut().as_mut_slice()[i] = orig;
            v
        });
        worst = worst.max(tolerant_err(grads.as_slice()[i], fd));
    }
    for i in 0..x.len() {
        let fd = central_difference(|d| {
            let mut xs = x.clone();
            xs.data_mut()[i] += d;
            loss(&net, &xs)
        });
        worst = worst.max(tolerant_err(dx.data()[i], fd));
    }
    worst
}

/// Fourth-order central difference `f'(0)` with step 1e-4. Truncation and
/// roundoff both stay near 1e-12, so gradients of order 1e-6 still resolve.
pub fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = 1e-4;
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Relative error, with an absolute floor for gradients that are zero up
/// to finite-difference noise.
pub fn tolerant_err(analytic: f64, fd: f64) -> f64 {
    if analytic.abs().max(fd.abs()) < 1e-8 {
        (analytic - fd).abs() * 1e3
    } else {
        rel_err(analytic, fd)
    }
}

/// Tiny-dim surrogate with narrow layers.
pub fn tiny_surrogate(seed: u64) -> SurrogateConfig {
    let mut cfg = SurrogateConfig::with_dims(ModalityDims::tiny());
    cfg.encoder_hidden = vec![16];
    cfg.forward_hidden = vec![16];
    cfg.inverse_hidden = vec![16];
    cfg.discriminator_hidden = vec![8];
    cfg.seed = seed;
    cfg
}

/// A tiny model whose autoencoder has been briefly pretrained and frozen.
pub fn frozen_model(seed: u64) -> ltfb::surrogate::CycleGanModel<f32> {
    let dims = ModalityDims::tiny();
    let recs = records(dims, 256);
    let (_, y) = ltfb::synthdata::to_tensors::<f32, _>(&recs, &dims);
    let mut m = ltfb::surrogate::CycleGanModel::<f32>::new(tiny_surrogate(seed)).unwrap();
    ltfb::surrogate::pretrain_autoencoder(&mut m, &y, 20, 64, seed).unwrap();
    m
}

pub fn batch(n: usize, seed: u64) -> (DenseTensor<f32>, DenseTensor<f32>) {
    let dims = ModalityDims::tiny();
    let recs = Simulator::new(GeneratorSpec::new(dims, 1))
        .unwrap()
        .generate_dataset(n, seed)
        .unwrap();
    ltfb::synthdata::to_tensors(&recs, &dims)
}
