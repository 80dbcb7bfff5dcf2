//! Analytic stand-in for an implosion simulator.
//!
//! A 5-vector of inputs in `[0,1]` maps to 15 scalars and a stack of
//! `views × channels` images. Input 0 plays the role of drive strength:
//! it sets blob amplitude and width and enters the scalars through strongly
//! nonlinear basis functions. Inputs 1..=4 are shape parameters: they set
//! the blob's anisotropy, orientation and offset. Each view rotates the
//! blob by a fixed angle; each channel widens it (a wavelength effect).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DenseTensor, Real};
use crate::surrogate::ModalityDims;

const N_BASIS: usize = 20;
/// Shape parameters at this value give a centred, circularly symmetric blob.
pub const SHAPE_MIDPOINT: f64 = 0.5;

/// One simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub input: Vec<f32>,
    pub scalars: Vec<f32>,
    /// `[view][channel][row][col]`, flattened.
    pub images: Vec<f32>,
}

impl SampleRecord {
    /// Scalars followed by images: the surrogate's output vector.
    pub fn output(&self) -> impl Iterator<Item = f32> + '_ {
        self.scalars.iter().chain(&self.images).copied()
    }

    pub fn image(&self, dims: &ModalityDims, view: usize, channel: usize) -> &[f32] {
        let hw = dims.image_h * dims.image_w;
        let off = (view * dims.image_channels + channel) * hw;
        &self.images[off..off + hw]
    }

    pub fn check_dims(&self, dims: &ModalityDims) -> Result<()> {
        if self.input.len() != dims.input_dim
            || self.scalars.len() != dims.scalar_dim
            || self.images.len() != dims.image_len()
        {
            return Err(Error::dim(
                "sample record",
                format!(
                    "{}/{}/{}",
                    dims.input_dim,
                    dims.scalar_dim,
                    dims.image_len()
                ),
                format!(
                    "{}/{}/{}",
                    self.input.len(),
                    self.scalars.len(),
                    self.images.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Stacks records into `(inputs B×input_dim, outputs B×output_dim)`.
pub fn to_tensors<T: Real, R: AsRef<SampleRecord>>(
    records: &[R],
    dims: &ModalityDims,
) -> (DenseTensor<T>, DenseTensor<T>) {
    let b = records.len();
    let mut x = Vec::with_capacity(b * dims.input_dim);
    let mut y = Vec::with_capacity(b * dims.output_dim());
    for r in records {
        let r = r.as_ref();
        x.extend(r.input.iter().map(|&v| T::lit(v as f64)));
        y.extend(r.output().map(|v| T::lit(v as f64)));
    }
    (
        DenseTensor::matrix(b, dims.input_dim, x).unwrap(),
        DenseTensor::matrix(b, dims.output_dim(), y).unwrap(),
    )
}

impl AsRef<SampleRecord> for SampleRecord {
    fn as_ref(&self) -> &SampleRecord {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub dims: ModalityDims,
    /// Std-dev of additive Gaussian observation noise; 0 disables it.
    pub noise_level: f64,
    /// Seeds the scalar coefficient table.
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(dims: ModalityDims, seed: u64) -> Self {
        Self {
            dims,
            noise_level: 0.0,
            seed,
        }
    }
}

/// A generator with its coefficient table materialized.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: GeneratorSpec,
    coeffs: Vec<f64>,
}

impl Simulator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.dims.validate()?;
        if spec.dims.input_dim != 5 {
            return Err(Error::Contract(format!(
                "the analytic generator needs input_dim = 5, got {}",
                spec.dims.input_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let scale = 1.0 / (N_BASIS as f64).sqrt();
        let coeffs = (0..spec.dims.scalar_dim * N_BASIS)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                // Drive-dependent basis functions (indices < 8) dominate.
                let w = if i % N_BASIS < 8 { 2.0 } else { 1.0 };
                z * scale * w
            })
            .collect();
        Ok(Self { spec, coeffs })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn dims(&self) -> &ModalityDims {
        &self.spec.dims
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Evaluates the analytic model at `params ∈ [0,1]^5`.
    pub fn sample(&self, params: &[f64]) -> Result<SampleRecord> {
        let dims = &self.spec.dims;
        if params.len() != dims.input_dim {
            return Err(Error::dim("synth params", dims.input_dim, params.len()));
        }
        if let Some(i) = params
            .iter()
            .position(|p| !(0.0..=1.0).contains(p) || !p.is_finite())
        {
            return Err(Error::Contract(format!(
                "param {i} = {} outside [0, 1]",
                params[i]
            )));
        }
        let basis = basis(params);
        let mut scalars: Vec<f64> = self
            .coeffs
            .chunks_exact(N_BASIS)
            .map(|row| row.iter().zip(&basis).map(|(c, b)| c * b).sum())
            .collect();
        let mut images = render_images(dims, params);

        if self.spec.noise_level > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(self.spec.seed, params));
            let s = self.spec.noise_level;
            for v in scalars.iter_mut() {
                *v += s * rng.sample::<f64, _>(StandardNormal);
            }
            for v in images.iter_mut() {
                *v = (*v + s * rng.sample::<f64, _>(StandardNormal)).max(0.0);
            }
        }

        Ok(SampleRecord {
            input: params.iter().map(|&p| p as f32).collect(),
            scalars: scalars.into_iter().map(|v| v as f32).collect(),
            images: images.into_iter().map(|v| v as f32).collect(),
        })
    }

    /// `n` samples in sweep order: a lexicographic grid over `[0,1]^5`
    /// (input 0 varies slowest) with seeded jitter inside each cell.
    pub fn generate_dataset(&self, n: usize, sampling_seed: u64) -> Result<Vec<SampleRecord>> {
        if n == 0 {
            return Err(Error::Contract("dataset size must be >= 1".into()));
        }
        sweep_params(n, self.spec.dims.input_dim, sampling_seed)
            .iter()
            .map(|p| self.sample(p))
            .collect()
    }
}

/// Grid-sweep parameter vectors in generation order.
pub fn sweep_params(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = 1usize;
    while r.pow(dim as u32) < n {
        r += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = if r > 1 { 1.0 / (r - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|i| {
            let mut digits = vec![0usize; dim];
            let mut rem = i;
            for d in (0..dim).rev() {
                digits[d] = rem % r;
                rem /= r;
            }
            digits
                .iter()
                .map(|&k| {
                    let jitter = if r > 1 {
                        rng.random_range(-0.25..0.25) * cell
                    } else {
                        0.0
                    };
                    (k as f64 * cell + jitter).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect()
}

fn basis(p: &[f64]) -> [f64; N_BASIS] {
    let d = p[0];
    [
        // drive terms
        d,
        d * d,
        (2.0 * PI * d).sin(),
        (3.0 * PI * d).cos(),
        ((2.0 * d).exp() - 1.0) / 6.0,
        (6.0 * (d - 0.5)).tanh(),
        d * d * d,
        (5.0 * d).sin() * d,
        // shape and cross terms
        1.0,
        p[1],
        p[2],
        p[3],
        p[4],
        d * p[1],
        d * p[2],
        p[1] * p[3],
        p[2] * p[4],
        (PI * (p[1] + p[2])).sin(),
        (PI * (p[3] - p[4])).cos(),
        p[3] * p[4],
    ]
}

fn render_images(dims: &ModalityDims, p: &[f64]) -> Vec<f64> {
    let (h, w) = (dims.image_h, dims.image_w);
    let drive = p[0];
    let (s1, s2, s3, s4) = (
        p[1] - SHAPE_MIDPOINT,
        p[2] - SHAPE_MIDPOINT,
        p[3] - SHAPE_MIDPOINT,
        p[4] - SHAPE_MIDPOINT,
    );
    let anisotropy = 0.9 * s1 + 0.5 * s3;
    let base_theta = PI * s2 + 0.5 * PI * s4;
    let base_width = 0.10 + 0.08 * drive * drive;
    let amp = 0.4 + 0.6 * (0.5 * PI * drive).sin().powi(2);
    let mut out = Vec::with_capacity(dims.image_len());
    for view in 0..dims.image_views {
        let view_rot = PI * view as f64 / dims.image_views as f64;
        let theta = base_theta + view_rot;
        let (sin_v, cos_v) = view_rot.sin_cos();
        let (ox, oy) = (0.1 * s3, 0.1 * s4);
        let cx = cos_v * ox - sin_v * oy;
        let cy = sin_v * ox + cos_v * oy;
        let (sin_t, cos_t) = theta.sin_cos();
        for ch in 0..dims.image_channels {
            let width = base_width * (1.0 + 0.15 * ch as f64);
            let sig_major = width * anisotropy.exp();
            let sig_minor = width * (-anisotropy).exp();
            let a = amp * (1.0 - 0.1 * ch as f64).max(0.1);
            for i in 0..h {
                let v = (i as f64 + 0.5) / h as f64 - 0.5 - cy;
                for j in 0..w {
                    let u = (j as f64 + 0.5) / w as f64 - 0.5 - cx;
                    let ur = cos_t * u + sin_t * v;
                    let vr = -sin_t * u + cos_t * v;
                    let q = (ur / sig_major).powi(2) + (vr / sig_minor).powi(2);
                    out.push(a * (-0.5 * q).exp());
                }
            }
        }
    }
    out
}

fn noise_seed(seed: u64, params: &[f64]) -> u64 {
    // FNV-1a over the parameter bits.
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for p in params {
        for b in p.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(dims: ModalityDims) -> Simulator {
        Simulator::new(GeneratorSpec::new(dims, 42)).unwrap()
    }

    #[test]
    fn deterministic_and_shaped() {
        let s = sim(ModalityDims::default());
        let p = [0.3, 0.1, 0.9, 0.5, 0.7];
        let a = s.sample(&p).unwrap();
        let b = s.sample(&p).unwrap();
        assert_eq!(a, b);
        a.check_dims(s.dims()).unwrap();
        assert!(a.images.iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert!(a.scalars.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn noisy_samples_are_still_deterministic() {
        let mut spec = GeneratorSpec::new(ModalityDims::tiny(), 3);
        spec.noise_level = 0.05;
        let s = Simulator::new(spec).unwrap();
        let p = [0.2; 5];
        assert_eq!(s.sample(&p).unwrap(), s.sample(&p).unwrap());
        assert!(s.sample(&p).unwrap().images.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn out_of_range_params_rejected() {
        let s = sim(ModalityDims::tiny());
        assert!(matches!(
            s.sample(&[0.1, 1.2, 0.0, 0.0, 0.0]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(s.sample(&[0.1; 4]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn midpoint_shape_gives_symmetric_blob() {
        let dims = ModalityDims::default();
        let s = sim(dims);
        for drive in [0.0, 0.37, 1.0] {
            let r = s.sample(&[drive, 0.5, 0.5, 0.5, 0.5]).unwrap();
            let n = dims.image_w;
            for view in 0..dims.image_views {
                for ch in 0..dims.image_channels {
                    let img = r.image(&dims, view, ch);
                    for i in 0..n {
                        for j in 0..n {
                            let v = img[i * n + j];
                            // transpose
                            assert!((v - img[j * n + i]).abs() < 1e-6);
                            // quarter turn
                            assert!((v - img[j * n + (n - 1 - i)]).abs() < 1e-6);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn off_midpoint_shape_breaks_symmetry() {
        let dims = ModalityDims::tiny();
        let r = sim(dims).sample(&[0.5, 0.9, 0.2, 0.5, 0.5]).unwrap();
        let img = r.image(&dims, 0, 0);
        let n = dims.image_w;
        let asym: f32 = (0..n * n)
            .map(|k| (img[k] - img[(k % n) * n + k / n]).abs())
            .sum();
        assert!(asym > 1e-2);
    }

    #[test]
    fn single_sample_sits_at_origin() {
        let d = sim(ModalityDims::tiny()).generate_dataset(1, 9).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].input, vec![0.0; 5]);
    }

    #[test]
    fn full_grid_is_centred() {
        // 4^5 points: the full sweep at resolution 4
        let ps = sweep_params(1024, 5, 5);
        for dim in 0..5 {
            let mean: f64 = ps.iter().map(|p| p[dim]).sum::<f64>() / ps.len() as f64;
            // well inside one grid cell (1/3)
            assert!((mean - 0.5).abs() < 0.02, "dim {dim}: {mean}");
        }
    }

    #[test]
    fn sweep_order_is_non_iid() {
        // First "file" of 200 samples vs the whole 2000-sample sweep.
        let s = sim(ModalityDims::tiny());
        let data = s.generate_dataset(2000, 1).unwrap();
        let first = &data[..200];
        for k in 0..3 {
            let col = |rs: &[SampleRecord]| -> Vec<f64> {
                rs.iter().map(|r| r.scalars[k] as f64).collect()
            };
            let (a, b) = (col(first), col(&data));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let var = |v: &[f64], m: f64| {
                v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
            };
            let (ma, mb) = (mean(&a), mean(&b));
            let se = (var(&a, ma) / a.len() as f64 + var(&b, mb) / b.len() as f64).sqrt();
            assert!(
                (ma - mb).abs() > 3.0 * se,
                "scalar {k}: gap {} se {se}",
                (ma - mb).abs()
            );
        }
    }
}
