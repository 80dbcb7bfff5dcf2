mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{mlp_gradient_error, random_matrix, random_spec, tolerant_err};
use ltfb::nn::{bce_loss, mae_loss, Activation, AdamHyper, AdamState, DenseTensor, MlpSpec};
use ltfb::surrogate::{CycleGanModel, ModalityDims, Network, SurrogateConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backprop_matches_central_differences(seed in any::<u64>(), batch in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng);
        let err = mlp_gradient_error(spec.clone(), batch, seed ^ 0x55);
        prop_assert!(err <= 1e-5, "{spec:?}: rel err {err}");
    }

    #[test]
    fn adam_never_moves_params_on_zero_gradient(
        params in prop::collection::vec(-10.0f64..10.0, 1..20),
        steps in 1usize..10,
    ) {
        let mut p = params.clone();
        let mut opt = AdamState::<f64>::new(p.len(), AdamHyper::default());
        let zero = vec![0.0; p.len()];
        for _ in 0..steps {
            opt.step(&mut p, &zero).unwrap();
        }
        prop_assert_eq!(p, params);
    }

    #[test]
    fn adam_step_is_bounded_by_lr(grad in prop::collection::vec(-1e3f64..1e3, 1..10)) {
        // |Δθ| ≤ lr (1 + tiny) on the first step, whatever the gradient scale.
        let mut p = vec![0.0; grad.len()];
        let hyper = AdamHyper::with_lr(0.01);
        AdamState::<f64>::new(p.len(), hyper).step(&mut p, &grad).unwrap();
        for v in p {
            prop_assert!(v.abs() <= 0.01 * (1.0 + 1e-6));
        }
    }
}

#[test]
fn deep_tanh_chain_gradient() {
    let spec = MlpSpec::new(vec![3, 5, 5, 5, 2], vec![Activation::Tanh; 4], 11);
    assert!(mlp_gradient_error(spec, 4, 3) <= 1e-6);
}

#[test]
fn bce_and_mae_gradients_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred = random_matrix(&mut rng, 4, 3);
    let target = random_matrix(&mut rng, 4, 3);
    let (_, g) = mae_loss(&pred, &target).unwrap();
    let h = 1e-7;
    for i in 0..pred.len() {
        let mut p = pred.clone();
        p.data_mut()[i] += h;
        let up = mae_loss(&p, &target).unwrap().0;
        p.data_mut()[i] -= 2.0 * h;
        let down = mae_loss(&p, &target).unwrap().0;
        assert!(tolerant_err(g.data()[i], (up - down) / (2.0 * h)) < 1e-6);
    }

    // BCE gradient is taken with respect to the logits of a sigmoid output.
    let logits = random_matrix(&mut rng, 6, 1);
    let labels = DenseTensor::matrix(6, 1, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let prob = |l: &DenseTensor<f64>| {
        DenseTensor::matrix(
            6,
            1,
            l.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        )
        .unwrap()
    };
    let (_, g) = bce_loss(&prob(&logits), &labels).unwrap();
    for i in 0..6 {
        let mut l = logits.clone();
        l.data_mut()[i] += 1e-6;
        let up = bce_loss(&prob(&l), &labels).unwrap().0;
        l.data_mut()[i] -= 2e-6;
        let down = bce_loss(&prob(&l), &labels).unwrap().0;
        assert!(tolerant_err(g.data()[i], (up - down) / 2e-6) < 1e-6);
    }
}

fn small_gan(seed: u64) -> CycleGanModel<f64> {
    let mut cfg = SurrogateConfig::with_dims(ModalityDims {
        input_dim: 3,
        latent_dim: 4,
        scalar_dim: 2,
        image_views: 1,
        image_channels: 1,
        image_h: 2,
        image_w: 2,
    });
    cfg.encoder_hidden = vec![5];
    cfg.forward_hidden = vec![5];
    cfg.inverse_hidden = vec![5];
    cfg.discriminator_hidden = vec![3];
    cfg.hidden_activation = Activation::Tanh;
    cfg.lambda_adv = 0.3;
    cfg.seed = seed;
    let mut m = CycleGanModel::<f64>::new(cfg).unwrap();
    m.freeze_autoencoder();
    m
}

#[test]
fn generator_gradient_matches_total_loss_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = small_gan(4);
    let x = random_matrix(&mut rng, 5, 3);
    let y = random_matrix(&mut rng, 5, 6);
    let (g, _) = m.generator_grads(&x, &y).unwrap();
    let total = |m: &CycleGanModel<f64>| m.generator_grads(&x, &y).unwrap().1.total;
    let h = 1e-6;
    for (net, grads) in [
        (Network::Forward, &g.forward),
        (Network::Inverse, &g.inverse),
    ] {
        for i in 0..grads.len() {
            let orig = m.blob(net)[i];
            let set = |v: f64, m: &mut CycleGanModel<f64>| {
                m.network_mut(net).params_mut().as_mut_slice()[i] = v;
            };
            set(orig + h, &mut m);
            let up = total(&m);
            set(orig - h, &mut m);
            let down = total(&m);
            set(orig, &mut m);
            let err = tolerant_err(grads.as_slice()[i], (up - down) / (2.0 * h));
            assert!(err < 1e-5, "{net:?}[{i}]: {err}");
        }
    }
}

#[test]
fn discriminator_gradient_matches_loss_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut m = small_gan(6);
    let x = random_matrix(&mut rng, 4, 3);
    let y = random_matrix(&mut rng, 4, 6);
    let (g, _) = m.discriminator_grads(&x, &y).unwrap();
    let h = 1e-6;
    for i in 0..g.len() {
        let orig = m.blob(Network::Discriminator)[i];
        m.network_mut(Network::Discriminator)
            .params_mut()
            .as_mut_slice()[i] = orig + h;
        let up = m.discriminator_grads(&x, &y).unwrap().1;
        m.network_mut(Network::Discriminator)
            .params_mut()
            .as_mut_slice()[i] = orig - h;
        let down = m.discriminator_grads(&x, &y).unwrap().1;
        m.network_mut(Network::Discriminator)
            .params_mut()
            .as_mut_slice()[i] = orig;
        assert!(tolerant_err(g.as_slice()[i], (up - down) / (2.0 * h)) < 1e-5);
    }
}
