//! Cycle-consistent GAN surrogate: a pre-trained multimodal autoencoder,
//! forward model `F: inputs → latent`, inverse model `G: latent → inputs`
//! and a latent-space discriminator `D`.

pub mod checkpoint;
mod dims;
mod metric;
mod model;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dims::ModalityDims;
pub use metric::EvalMetric;
pub use model::{
    hash_blob, mix_seed, CycleGanModel, GeneratorGrads, GeneratorLosses, Network, SurrogateConfig,
};

use crate::error::Result;
use crate::nn::{DenseTensor, Real};

/// Trains the autoencoder on random minibatches of `outputs` and freezes it.
/// Returns the per-step reconstruction losses.
pub fn pretrain_autoencoder<T: Real>(
    model: &mut CycleGanModel<T>,
    outputs: &DenseTensor<T>,
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = outputs.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let cols = outputs.cols();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let b = batch_size.min(n);
        let mut data = Vec::with_capacity(b * cols);
        for _ in 0..b {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            data.extend_from_slice(outputs.row(order[cursor]));
            cursor += 1;
        }
        let batch = DenseTensor::matrix(b, cols, data)?;
        losses.push(model.autoencoder_step(&batch)?);
    }
    model.freeze_autoencoder();
    Ok(losses)
}
