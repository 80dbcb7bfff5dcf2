use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{
    bce_loss, mae, mae_loss, Activation, AdamHyper, AdamState, DenseTensor, GradAt, Mlp, MlpParams,
    MlpSpec, Real,
};
use crate::surrogate::{EvalMetric, ModalityDims};

/// Architecture and loss weights of the cycle-consistent surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub dims: ModalityDims,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub encoder_hidden: Vec<usize>,
    pub forward_hidden: Vec<usize>,
    pub inverse_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub lambda_adv: f64,
    pub lambda_cyc: f64,
    /// Weights of forward and inverse MAE in the evaluation metric.
    pub eval_forward_weight: f64,
    pub eval_inverse_weight: f64,
    pub adam: AdamHyper,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            dims: ModalityDims::default(),
            encoder_hidden: vec![64],
            forward_hidden: vec![64, 64],
            inverse_hidden: vec![64, 64],
            discriminator_hidden: vec![32],
            hidden_activation: Activation::LeakyRelu { slope: 0.2 },
            lambda_adv: 0.01,
            lambda_cyc: 1.0,
            eval_forward_weight: 1.0,
            eval_inverse_weight: 1.0,
            adam: AdamHyper::default(),
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn with_dims(dims: ModalityDims) -> Self {
        Self {
            dims,
            ..Self::default()
        }
    }

    fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(hidden.len() + 2);
        w.push(input);
        w.extend_from_slice(hidden);
        w.push(output);
        w
    }

    fn spec(&self, widths: Vec<usize>, out_act: Activation, salt: u64) -> MlpSpec {
        MlpSpec::uniform(
            widths,
            self.hidden_activation,
            out_act,
            mix_seed(self.seed, salt),
        )
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        let d = &self.dims;
        let w = Self::widths(d.output_dim(), &self.encoder_hidden, d.latent_dim);
        self.spec(w, Activation::Identity, 1)
    }

    pub fn decoder_spec(&self) -> MlpSpec {
        let d = &self.dims;
        let hidden: Vec<usize> = self.encoder_hidden.iter().rev().copied().collect();
        let w = Self::widths(d.latent_dim, &hidden, d.output_dim());
        self.spec(w, Activation::Identity, 2)
    }

    pub fn forward_spec(&self) -> MlpSpec {
        let d = &self.dims;
        let w = Self::widths(d.input_dim, &self.forward_hidden, d.latent_dim);
        self.spec(w, Activation::Identity, 3)
    }

    pub fn inverse_spec(&self) -> MlpSpec {
        let d = &self.dims;
        let w = Self::widths(d.latent_dim, &self.inverse_hidden, d.input_dim);
        self.spec(w, Activation::Identity, 4)
    }

    pub fn discriminator_spec(&self) -> MlpSpec {
        let w = Self::widths(self.dims.latent_dim, &self.discriminator_hidden, 1);
        self.spec(w, Activation::Sigmoid, 5)
    }
}

/// SplitMix64 finalizer over `seed + salt`.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The five networks of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    Encoder,
    Decoder,
    Forward,
    Inverse,
    Discriminator,
}

impl Network {
    pub const ALL: [Network; 5] = [
        Network::Encoder,
        Network::Decoder,
        Network::Forward,
        Network::Inverse,
        Network::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Network::Encoder => "encoder",
            Network::Decoder => "decoder",
            Network::Forward => "forward",
            Network::Inverse => "inverse",
            Network::Discriminator => "discriminator",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneratorLosses {
    pub total: f64,
    pub forward: f64,
    pub adversarial: f64,
    pub cycle: f64,
}

/// Gradients of the generator-side networks for one (sub)batch.
#[derive(Debug, Clone)]
pub struct GeneratorGrads<T> {
    pub forward: MlpParams<T>,
    pub inverse: MlpParams<T>,
}

#[derive(Debug, Clone)]
struct Slot<T> {
    net: Mlp<T>,
    opt: AdamState<T>,
}

impl<T: Real> Slot<T> {
    fn new(spec: MlpSpec, hyper: AdamHyper) -> Result<Self> {
        let net = Mlp::new(spec)?;
        let opt = AdamState::new(net.params().len(), hyper);
        Ok(Self { net, opt })
    }

    fn apply(&mut self, grads: &MlpParams<T>) -> Result<()> {
        if grads.widths() != self.net.params().widths() {
            return Err(Error::Contract(
                "gradient manifest does not match network".into(),
            ));
        }
        // borrow split: the optimizer and the parameters are separate fields
        let Slot { net, opt } = self;
        opt.step_params(net.params_mut(), grads)
    }
}

/// Encoder/decoder autoencoder, forward model, inverse model and latent
/// discriminator, each with its own Adam state.
#[derive(Debug, Clone)]
pub struct CycleGanModel<T> {
    config: SurrogateConfig,
    encoder: Slot<T>,
    decoder: Slot<T>,
    forward: Slot<T>,
    inverse: Slot<T>,
    discriminator: Slot<T>,
    autoencoder_frozen: bool,
}

impl<T: Real> CycleGanModel<T> {
    pub fn new(config: SurrogateConfig) -> Result<Self> {
        config.dims.validate()?;
        let h = config.adam;
        Ok(Self {
            encoder: Slot::new(config.encoder_spec(), h)?,
            decoder: Slot::new(config.decoder_spec(), h)?,
            forward: Slot::new(config.forward_spec(), h)?,
            inverse: Slot::new(config.inverse_spec(), h)?,
            discriminator: Slot::new(config.discriminator_spec(), h)?,
            autoencoder_frozen: false,
            config,
        })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn dims(&self) -> &ModalityDims {
        &self.config.dims
    }

    pub fn set_loss_weights(&mut self, lambda_adv: f64, lambda_cyc: f64) {
        self.config.lambda_adv = lambda_adv;
        self.config.lambda_cyc = lambda_cyc;
    }

    /// Sets the learning rate of every optimizer.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.adam.lr = lr;
        for n in Network::ALL {
            self.slot_mut(n).opt.hyper.lr = lr;
        }
    }

    fn slot(&self, n: Network) -> &Slot<T> {
        match n {
            Network::Encoder => &self.encoder,
            Network::Decoder => &self.decoder,
            Network::Forward => &self.forward,
            Network::Inverse => &self.inverse,
            Network::Discriminator => &self.discriminator,
        }
    }

    fn slot_mut(&mut self, n: Network) -> &mut Slot<T> {
        match n {
            Network::Encoder => &mut self.encoder,
            Network::Decoder => &mut self.decoder,
            Network::Forward => &mut self.forward,
            Network::Inverse => &mut self.inverse,
            Network::Discriminator => &mut self.discriminator,
        }
    }

    pub fn network(&self, n: Network) -> &Mlp<T> {
        &self.slot(n).net
    }

    pub fn network_mut(&mut self, n: Network) -> &mut Mlp<T> {
        &mut self.slot_mut(n).net
    }

    pub fn optimizer(&self, n: Network) -> &AdamState<T> {
        &self.slot(n).opt
    }

    pub fn blob(&self, n: Network) -> &[T] {
        self.network(n).params().as_slice()
    }

    /// Hex SHA-256 of a network's little-endian parameter bytes.
    pub fn blob_hash(&self, n: Network) -> String {
        hash_blob(self.blob(n))
    }

    pub fn is_autoencoder_frozen(&self) -> bool {
        self.autoencoder_frozen
    }

    pub fn freeze_autoencoder(&mut self) {
        self.autoencoder_frozen = true;
    }

    /// Copies the encoder and decoder (weights only) from `other`.
    pub fn adopt_autoencoder(&mut self, other: &CycleGanModel<T>) -> Result<()> {
        for n in [Network::Encoder, Network::Decoder] {
            let blob = other.blob(n).to_vec();
            self.network_mut(n).set_blob(&blob)?;
        }
        self.autoencoder_frozen = other.autoencoder_frozen;
        Ok(())
    }

    /// Replaces the forward and inverse weights. Adam moments are zeroed when
    /// `reset_moments`; step counts are kept either way.
    pub fn set_generator(
        &mut self,
        forward: &[T],
        inverse: &[T],
        reset_moments: bool,
    ) -> Result<()> {
        self.forward.net.set_blob(forward)?;
        self.inverse.net.set_blob(inverse)?;
        if reset_moments {
            self.forward.opt.reset_moments();
            self.inverse.opt.reset_moments();
        }
        Ok(())
    }

    fn check_batch(&self, x: Option<&DenseTensor<T>>, y: Option<&DenseTensor<T>>) -> Result<usize> {
        let d = &self.config.dims;
        let mut rows = None;
        if let Some(x) = x {
            if x.cols() != d.input_dim {
                return Err(Error::dim("input batch columns", d.input_dim, x.cols()));
            }
            rows = Some(x.rows());
        }
        if let Some(y) = y {
            if y.cols() != d.output_dim() {
                return Err(Error::dim("output batch columns", d.output_dim(), y.cols()));
            }
            if let Some(r) = rows {
                if r != y.rows() {
                    return Err(Error::dim("batch rows", r, y.rows()));
                }
            }
            rows = Some(y.rows());
        }
        match rows {
            Some(0) | None => Err(Error::Contract("empty batch".into())),
            Some(r) => Ok(r),
        }
    }

    /// Encoder latents of ground-truth outputs.
    pub fn encode(&self, y: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        self.encoder.net.predict(y)
    }

    /// `Dec(F(x))`: predicted output bundles.
    pub fn predict_outputs(&self, x: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let z = self.forward.net.predict(x)?;
        self.decoder.net.predict(&z)
    }

    /// `G(F(x))`: inputs reconstructed through the latent space.
    pub fn cycle_inputs(&self, x: &DenseTensor<T>) -> Result<DenseTensor<T>> {
        let z = self.forward.net.predict(x)?;
        self.inverse.net.predict(&z)
    }

    // ---- autoencoder pre-training -------------------------------------

    pub fn autoencoder_grads(
        &self,
        y: &DenseTensor<T>,
    ) -> Result<(MlpParams<T>, MlpParams<T>, f64)> {
        if self.autoencoder_frozen {
            return Err(Error::Contract(
                "autoencoder is frozen; pre-training has ended".into(),
            ));
        }
        self.check_batch(None, Some(y))?;
        let (z, enc_tape) = self.encoder.net.forward(y)?;
        let (recon, dec_tape) = self.decoder.net.forward(&z)?;
        let (loss, g) = mae_loss(&recon, y)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("autoencoder loss is not finite".into()));
        }
        let (g_dec, g_z) = self.decoder.net.backward(&dec_tape, &g, GradAt::Output)?;
        let (g_enc, _) = self.encoder.net.backward(&enc_tape, &g_z, GradAt::Output)?;
        Ok((g_enc, g_dec, loss))
    }

    pub fn apply_autoencoder(&mut self, g_enc: &MlpParams<T>, g_dec: &MlpParams<T>) -> Result<()> {
        if self.autoencoder_frozen {
            return Err(Error::Contract("autoencoder is frozen".into()));
        }
        check_finite(g_enc, "encoder")?;
        check_finite(g_dec, "decoder")?;
        self.encoder.apply(g_enc)?;
        self.decoder.apply(g_dec)
    }

    /// One Adam step on encoder and decoder minimizing reconstruction MAE.
    /// Returns the batch loss measured before the update.
    pub fn autoencoder_step(&mut self, y: &DenseTensor<T>) -> Result<f64> {
        let (ge, gd, loss) = self.autoencoder_grads(y)?;
        self.apply_autoencoder(&ge, &gd)?;
        Ok(loss)
    }

    pub fn reconstruction_loss(&self, y: &DenseTensor<T>) -> Result<f64> {
        let z = self.encoder.net.predict(y)?;
        mae(&self.decoder.net.predict(&z)?, y)
    }

    // ---- generator (forward + inverse) ---------------------------------

    /// Losses and gradients of
    /// `MAE(Dec(F(x)), y) + λ_adv·(−log D(F(x))) + λ_cyc·MAE(G(F(x)), x)`
    /// w.r.t. the forward and inverse networks.
    pub fn generator_grads(
        &self,
        x: &DenseTensor<T>,
        y: &DenseTensor<T>,
    ) -> Result<(GeneratorGrads<T>, GeneratorLosses)> {
        let b = self.check_batch(Some(x), Some(y))?;
        let lam_adv = self.config.lambda_adv;
        let lam_cyc = self.config.lambda_cyc;

        let (z, f_tape) = self.forward.net.forward(x)?;

        let (pred, dec_tape) = self.decoder.net.forward(&z)?;
        let (loss_fwd, g_pred) = mae_loss(&pred, y)?;
        let mut g_z = self
            .decoder
            .net
            .backward_input(&dec_tape, &g_pred, GradAt::Output)?;

        let (prob, d_tape) = self.discriminator.net.forward(&z)?;
        let ones = DenseTensor::filled(vec![b, 1], T::one());
        let (loss_adv, g_logit) = bce_loss(&prob, &ones)?;
        if lam_adv != 0.0 {
            let g = self
                .discriminator
                .net
                .backward_input(&d_tape, &g_logit, GradAt::Logits)?;
            g_z.add_scaled(&g, T::lit(lam_adv))?;
        }

        let (xr, g_tape) = self.inverse.net.forward(&z)?;
        let (loss_cyc, mut g_xr) = mae_loss(&xr, x)?;
        for v in g_xr.data_mut() {
            *v = *v * T::lit(lam_cyc);
        }
        let (g_inv, g_z_cyc) = self.inverse.net.backward(&g_tape, &g_xr, GradAt::Output)?;
        g_z.add_scaled(&g_z_cyc, T::one())?;

        let (g_fwd, _) = self.forward.net.backward(&f_tape, &g_z, GradAt::Output)?;

        let total = loss_fwd + lam_adv * loss_adv + lam_cyc * loss_cyc;
        let losses = GeneratorLosses {
            total,
            forward: loss_fwd,
            adversarial: loss_adv,
            cycle: loss_cyc,
        };
        if !total.is_finite() {
            return Err(Error::Numeric(format!("generator loss is {total}")));
        }
        Ok((
            GeneratorGrads {
                forward: g_fwd,
                inverse: g_inv,
            },
            losses,
        ))
    }

    pub fn apply_generator(&mut self, grads: &GeneratorGrads<T>) -> Result<()> {
        self.require_frozen()?;
        check_finite(&grads.forward, "forward")?;
        check_finite(&grads.inverse, "inverse")?;
        self.forward.apply(&grads.forward)?;
        self.inverse.apply(&grads.inverse)
    }

    /// One Adam step on the forward and inverse networks.
    pub fn generator_step(
        &mut self,
        x: &DenseTensor<T>,
        y: &DenseTensor<T>,
    ) -> Result<GeneratorLosses> {
        self.require_frozen()?;
        let (g, losses) = self.generator_grads(x, y)?;
        self.apply_generator(&g)?;
        Ok(losses)
    }

    // ---- discriminator --------------------------------------------------

    /// BCE of the discriminator with real = `E(y)` (label 1) and fake =
    /// `F(x)` (label 0), and its gradient.
    pub fn discriminator_grads(
        &self,
        x: &DenseTensor<T>,
        y: &DenseTensor<T>,
    ) -> Result<(MlpParams<T>, f64)> {
        let b = self.check_batch(Some(x), Some(y))?;
        let real = self.encoder.net.predict(y)?;
        let fake = self.forward.net.predict(x)?;
        let latent = self.config.dims.latent_dim;
        let mut data = real.into_data();
        data.extend_from_slice(fake.data());
        let both = DenseTensor::matrix(2 * b, latent, data)?;
        let mut labels = vec![T::one(); b];
        labels.resize(2 * b, T::zero());
        let labels = DenseTensor::matrix(2 * b, 1, labels)?;
        self.discriminator_grads_on(&both, &labels)
    }

    /// Discriminator loss and gradient on explicit latents and labels.
    pub fn discriminator_grads_on(
        &self,
        latents: &DenseTensor<T>,
        labels: &DenseTensor<T>,
    ) -> Result<(MlpParams<T>, f64)> {
        let (prob, tape) = self.discriminator.net.forward(latents)?;
        let (loss, g) = bce_loss(&prob, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("discriminator loss is {loss}")));
        }
        let (grads, _) = self.discriminator.net.backward(&tape, &g, GradAt::Logits)?;
        Ok((grads, loss))
    }

    pub fn apply_discriminator(&mut self, grads: &MlpParams<T>) -> Result<()> {
        check_finite(grads, "discriminator")?;
        self.discriminator.apply(grads)
    }

    pub fn discriminator_step(&mut self, x: &DenseTensor<T>, y: &DenseTensor<T>) -> Result<f64> {
        self.require_frozen()?;
        let (g, loss) = self.discriminator_grads(x, y)?;
        self.apply_discriminator(&g)?;
        Ok(loss)
    }

    fn require_frozen(&self) -> Result<()> {
        if !self.autoencoder_frozen {
            return Err(Error::Contract(
                "encoder/decoder must be frozen before adversarial training".into(),
            ));
        }
        Ok(())
    }

    // ---- evaluation -----------------------------------------------------

    /// Forward and inverse MAE on a labelled slice. Deterministic; excludes
    /// the adversarial term.
    pub fn evaluate(&self, x: &DenseTensor<T>, y: &DenseTensor<T>) -> Result<EvalMetric> {
        let n = self.check_batch(Some(x), Some(y))?;
        const CHUNK: usize = 512;
        let d = &self.config.dims;
        let (mut scalar_sum, mut image_sum, mut inv_sum) = (0.0f64, 0.0f64, 0.0f64);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let xs = x.slice_rows(start, end);
            let ys = y.slice_rows(start, end);
            let z = self.forward.net.predict(&xs)?;
            let pred = self.decoder.net.predict(&z)?;
            let xr = self.inverse.net.predict(&z)?;
            for (pr, yr) in pred
                .data()
                .chunks_exact(d.output_dim())
                .zip(ys.data().chunks_exact(d.output_dim()))
            {
                let (ps, pi) = pr.split_at(d.scalar_dim);
                let (ts, ti) = yr.split_at(d.scalar_dim);
                scalar_sum += abs_diff_sum(ps, ts);
                image_sum += abs_diff_sum(pi, ti);
            }
            inv_sum += abs_diff_sum(xr.data(), xs.data());
            start = end;
        }
        let nf = n as f64;
        let forward_mae = (scalar_sum + image_sum) / (nf * d.output_dim() as f64);
        let inverse_mae = inv_sum / (nf * d.input_dim as f64);
        Ok(EvalMetric::new(
            forward_mae,
            inverse_mae,
            scalar_sum / (nf * d.scalar_dim as f64),
            image_sum / (nf * d.image_len() as f64),
            self.config.eval_forward_weight,
            self.config.eval_inverse_weight,
        ))
    }

    pub fn cast<U: Real>(&self) -> CycleGanModel<U> {
        let cast_slot = |s: &Slot<T>| Slot {
            net: s.net.cast(),
            opt: AdamState {
                m: s.opt.m.iter().map(|v| U::lit(v.as_f64())).collect(),
                v: s.opt.v.iter().map(|v| U::lit(v.as_f64())).collect(),
                t: s.opt.t,
                hyper: s.opt.hyper,
            },
        };
        CycleGanModel {
            config: self.config.clone(),
            encoder: cast_slot(&self.encoder),
            decoder: cast_slot(&self.decoder),
            forward: cast_slot(&self.forward),
            inverse: cast_slot(&self.inverse),
            discriminator: cast_slot(&self.discriminator),
            autoencoder_frozen: self.autoencoder_frozen,
        }
    }

    /// Rebuilds a model from per-network parameter blobs.
    pub fn from_blobs(
        config: SurrogateConfig,
        blobs: Vec<(Network, Vec<T>)>,
        frozen: bool,
    ) -> Result<Self> {
        let mut model = Self::new(config)?;
        for (n, blob) in blobs {
            model.network_mut(n).set_blob(&blob)?;
        }
        model.autoencoder_frozen = frozen;
        Ok(model)
    }
}

fn abs_diff_sum<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&p, &q)| (p - q).as_f64().abs()).sum()
}

fn check_finite<T: Real>(g: &MlpParams<T>, name: &str) -> Result<()> {
    if g.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {name} gradient")))
    }
}

pub fn hash_blob<T: Real>(blob: &[T]) -> String {
    let mut bytes = Vec::with_capacity(blob.len() * T::BYTES);
    for &v in blob {
        v.write_le(&mut bytes);
    }
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
