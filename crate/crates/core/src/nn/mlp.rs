//! Stacked dense layers with an explicit activation tape.
//!
//! Parameters live in one contiguous blob so they can be averaged, hashed,
//! checkpointed and shipped between trainers without reshaping. Layer `l`
//! stores its `out × in` weight matrix (row-major) followed by its bias.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseTensor, Real};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Architecture of a dense network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    /// One per layer transition, so `layer_widths.len() - 1` entries.
    pub activations: Vec<Activation>,
    /// Seed for the scaled-uniform fan-in initializer.
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activations: Vec<Activation>, init_seed: u64) -> Self {
        Self {
            layer_widths,
            activations,
            init_seed,
        }
    }

    /// Hidden layers share `hidden_act`; the last layer uses `output_act`.
    pub fn uniform(
        layer_widths: Vec<usize>,
        hidden_act: Activation,
        output_act: Activation,
        init_seed: u64,
    ) -> Self {
        let n = layer_widths.len().saturating_sub(1);
        let mut activations = vec![hidden_act; n];
        if let Some(last) = activations.last_mut() {
            *last = output_act;
        }
        Self::new(layer_widths, activations, init_seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Contract(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if let Some(i) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::Contract(format!("layer width {i} is zero")));
        }
        if self.activations.len() != self.layer_widths.len() - 1 {
            return Err(Error::dim(
                "activation list",
                self.layer_widths.len() - 1,
                self.activations.len(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// One named tensor inside a flattened parameter blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ManifestEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weights and biases of an MLP (or gradients shaped like them).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    widths: Vec<usize>,
    blob: Vec<T>,
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(widths: &[usize]) -> Self {
        let n = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            widths: widths.to_vec(),
            blob: vec![T::zero(); n],
        }
    }

    /// Scaled-uniform fan-in init: weights ~ U(-a, a) with a = sqrt(1 / fan_in),
    /// biases zero. Draws are made in f64 so f32 and f64 nets start identical.
    pub fn init(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut params = Self::zeros(&spec.layer_widths);
        for l in 0..spec.num_layers() {
            let fan_in = spec.layer_widths[l];
            let a = (1.0 / fan_in as f64).sqrt();
            let (w, _) = params.layer_mut(l);
            for v in w.iter_mut() {
                *v = T::lit(rng.random_range(-a..a));
            }
        }
        Ok(params)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut out = Vec::with_capacity(2 * (self.widths.len() - 1));
        let mut off = 0;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            out.push(ManifestEntry {
                name: format!("layer{l}.weight"),
                offset: off,
                shape: vec![fan_out, fan_in],
            });
            off += fan_in * fan_out;
            out.push(ManifestEntry {
                name: format!("layer{l}.bias"),
                offset: off,
                shape: vec![fan_out],
            });
            off += fan_out;
        }
        out
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.widths[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Weight (row-major `out × in`) and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[T], &[T]) {
        let off = self.layer_offset(l);
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        let (w, rest) = self.blob[off..].split_at(fi * fo);
        (w, &rest[..fo])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [T], &mut [T]) {
        let off = self.layer_offset(l);
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        let (w, rest) = self.blob[off..].split_at_mut(fi * fo);
        (w, &mut rest[..fo])
    }

    /// Layer `l` as (weight, bias) tensors.
    pub fn layer_tensors(&self, l: usize) -> (DenseTensor<T>, DenseTensor<T>) {
        let (w, b) = self.layer(l);
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        (
            DenseTensor::matrix(fo, fi, w.to_vec()).unwrap(),
            DenseTensor::new(vec![fo], b.to_vec()).unwrap(),
        )
    }

    pub fn flatten(&self) -> Vec<T> {
        self.blob.clone()
    }

    pub fn unflatten(widths: &[usize], blob: Vec<T>) -> Result<Self> {
        let expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if blob.len() != expected {
            return Err(Error::dim(
                format!("parameter blob for widths {widths:?}"),
                expected,
                blob.len(),
            ));
        }
        Ok(Self {
            widths: widths.to_vec(),
            blob,
        })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.blob
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.blob
    }

    pub fn len(&self) -> usize {
        self.blob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blob.is_empty()
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.blob {
            *v = *v * s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blob.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            widths: self.widths.clone(),
            blob: self.blob.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Where the incoming gradient of a backward pass is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradAt {
    /// Gradient w.r.t. the network output (after the last activation).
    Output,
    /// Gradient w.r.t. the last layer's pre-activation, e.g. logits for BCE.
    Logits,
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    generation: u64,
    batch: usize,
    /// `inputs[l]` feeds layer `l`; `inputs[0]` is the batch itself.
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Last layer pre-activations (logits when the output is a sigmoid).
    pub fn logits(&self) -> &[T] {
        self.pre.last().unwrap()
    }
}

/// A dense network: architecture plus parameters.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    spec: MlpSpec,
    params: MlpParams<T>,
    generation: u64,
}

impl<T: Real> Mlp<T> {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        let params = MlpParams::init(&spec)?;
        Ok(Self {
            spec,
            params,
            generation: next_generation(),
        })
    }

    pub fn with_params(spec: MlpSpec, params: MlpParams<T>) -> Result<Self> {
        spec.validate()?;
        if params.widths() != spec.layer_widths.as_slice() {
            return Err(Error::dim(
                "parameter widths",
                format!("{:?}", spec.layer_widths),
                format!("{:?}", params.widths()),
            ));
        }
        Ok(Self {
            spec,
            params,
            generation: next_generation(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &MlpParams<T> {
        &self.params
    }

    /// Mutable access; outstanding tapes become stale.
    pub fn params_mut(&mut self) -> &mut MlpParams<T> {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn set_blob(&mut self, blob: &[T]) -> Result<()> {
        if blob.len() != self.params.len() {
            return Err(Error::dim("parameter blob", self.params.len(), blob.len()));
        }
        self.params_mut().as_mut_slice().copy_from_slice(blob);
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            params: self.params.cast(),
            generation: next_generation(),
        }
    }

    pub fn forward(&self, batch: &DenseTensor<T>) -> Result<(DenseTensor<T>, Tape<T>)> {
        let widths = &self.spec.layer_widths;
        if batch.cols() != widths[0] {
            return Err(Error::dim("layer 0 input columns", widths[0], batch.cols()));
        }
        let b = batch.rows();
        let mut inputs = Vec::with_capacity(self.spec.num_layers());
        let mut pre = Vec::with_capacity(self.spec.num_layers());
        let mut x = batch.data().to_vec();
        for (l, act) in self.spec.activations.iter().enumerate() {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let (w, bias) = self.params.layer(l);
            let mut z = vec![T::zero(); b * fo];
            for (xr, zr) in x.chunks_exact(fi).zip(z.chunks_exact_mut(fo)) {
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = bias[o] + dot(&w[o * fi..(o + 1) * fi], xr);
                }
            }
            let y: Vec<T> = z.iter().map(|&v| act.apply(v)).collect();
            inputs.push(std::mem::replace(&mut x, y));
            pre.push(z);
        }
        let out = DenseTensor::matrix(b, self.spec.output_dim(), x.clone())?;
        Ok((
            out,
            Tape {
                generation: self.generation,
                batch: b,
                inputs,
                pre,
                output: x,
            },
        ))
    }

    /// Forward pass without keeping a tape.
    pub fn predict(&self, batch: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        self.forward(batch).map(|(o, _)| o)
    }

    /// Exact gradients of a scalar loss through the recorded forward pass.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        grad: &DenseTensor<T>,
        at: GradAt,
    ) -> Result<(MlpParams<T>, DenseTensor<T>)> {
        let (g, dx) = self.backward_impl(tape, grad, at, true)?;
        Ok((g.unwrap(), dx))
    }

    /// Like [`Mlp::backward`] but only propagates to the input; used when this
    /// network is frozen and only serves as a path for upstream gradients.
    pub fn backward_input(
        &self,
        tape: &Tape<T>,
        grad: &DenseTensor<T>,
        at: GradAt,
    ) -> Result<DenseTensor<T>> {
        self.backward_impl(tape, grad, at, false).map(|(_, dx)| dx)
    }

    fn backward_impl(
        &self,
        tape: &Tape<T>,
        grad: &DenseTensor<T>,
        at: GradAt,
        want_params: bool,
    ) -> Result<(Option<MlpParams<T>>, DenseTensor<T>)> {
        if tape.generation != self.generation {
            return Err(Error::Contract(
                "tape was recorded against different or since-modified parameters".into(),
            ));
        }
        let widths = &self.spec.layer_widths;
        let b = tape.batch;
        let out_dim = self.spec.output_dim();
        if grad.len() != b * out_dim {
            return Err(Error::dim(
                "backward gradient",
                format!("{b}x{out_dim}"),
                format!("{:?}", grad.shape()),
            ));
        }
        let mut grads = want_params.then(|| MlpParams::zeros(widths));
        let mut delta: Vec<T> = grad.data().to_vec();
        let n_layers = self.spec.num_layers();
        for l in (0..n_layers).rev() {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let act = self.spec.activations[l];
            let skip_act = l == n_layers - 1 && at == GradAt::Logits;
            if !skip_act {
                let post = if l + 1 < n_layers {
                    &tape.inputs[l + 1]
                } else {
                    &tape.output
                };
                for ((d, &z), &y) in delta.iter_mut().zip(&tape.pre[l]).zip(post) {
                    *d = *d * act.derivative(z, y);
                }
            }
            let x = &tape.inputs[l];
            if let Some(g) = grads.as_mut() {
                let (gw, gb) = g.layer_mut(l);
                for (dr, xr) in delta.chunks_exact(fo).zip(x.chunks_exact(fi)) {
                    for (o, &d) in dr.iter().enumerate() {
                        gb[o] = gb[o] + d;
                        if d != T::zero() {
                            axpy(&mut gw[o * fi..(o + 1) * fi], d, xr);
                        }
                    }
                }
            }
            let (w, _) = self.params.layer(l);
            let mut dx = vec![T::zero(); b * fi];
            for (dr, dxr) in delta.chunks_exact(fo).zip(dx.chunks_exact_mut(fi)) {
                for (o, &d) in dr.iter().enumerate() {
                    if d != T::zero() {
                        axpy(dxr, d, &w[o * fi..(o + 1) * fi]);
                    }
                }
            }
            delta = dx;
        }
        Ok((grads, DenseTensor::matrix(b, widths[0], delta)?))
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Four independent partial sums keep the loop vectorizable.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] = acc[0] + a[j] * b[j];
        acc[1] = acc[1] + a[j + 1] * b[j + 1];
        acc[2] = acc[2] + a[j + 2] * b[j + 2];
        acc[3] = acc[3] + a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s = s + a[j] * b[j];
    }
    s
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}
