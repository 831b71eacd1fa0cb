use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::autograd::check::{check_inputs, check_params, worst, FdOptions};
use crate::autograd::{keyed_rng, ParamStore, Tensor};

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = keyed_rng(seed, "losses");
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn brute_l1(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        total += (a.data()[i] - b.data()[i]).abs();
    }
    total / a.len() as f64
}

fn eval2(
    f: fn(&mut Graph<'_, f64>, Var, Var) -> Result<Var>,
    a: &Tensor<f64>,
    b: &Tensor<f64>,
) -> Result<f64> {
    let mut g = Graph::new();
    let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
    let l = f(&mut g, x, y)?;
    Ok(g.value(l).item())
}

#[test]
fn dct_loss_cases() {
    let t = rand_tensor(&[64, 2, 2], 1);
    assert_eq!(eval2(dct_loss, &t, &t).unwrap(), 0.0);
    let shifted = t.map(|v| v + 1.0);
    assert!((eval2(dct_loss, &shifted, &t).unwrap() - 1.0).abs() < 1e-12);
    let u = rand_tensor(&[64, 2, 2], 2);
    assert_eq!(eval2(dct_loss, &t, &u).unwrap(), brute_l1(&t, &u));
    assert!(matches!(eval2(dct_loss, &t, &rand_tensor(&[64, 2, 1], 3)), Err(Error::Dimension(_))));
}

#[test]
fn ssc_loss_cases() {
    let t = rand_tensor(&[3, 8, 8], 4);
    assert_eq!(eval2(ssc_loss, &t, &t).unwrap(), 0.0);
    assert!((eval2(ssc_loss, &t, &t.map(|v| v - 0.5)).unwrap() - 0.5).abs() < 1e-12);
    let u = rand_tensor(&[3, 8, 8], 5);
    assert_eq!(eval2(ssc_loss, &t, &u).unwrap(), brute_l1(&t, &u));
    assert!(eval2(ssc_loss, &t, &rand_tensor(&[3, 8, 7], 6)).is_err());
}

fn feature_loss_value(fx: &FeatureExtractor, store: &ParamStore<f64>, sr: &Tensor<f64>, hr: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    g.bind(store, false);
    let h = g.constant(hr.clone());
    let hf = fx.forward(&mut g, h).unwrap();
    let s = g.constant(sr.clone());
    let l = fx.loss(&mut g, s, hf).unwrap();
    g.value(l).item()
}

#[test]
fn feature_loss_zero_and_nonnegative() {
    let fx = FeatureExtractor::new(7).unwrap();
    let store = fx.store.cast::<f64>();
    let hr = rand_tensor(&[3, 12, 12], 8);
    assert_eq!(feature_loss_value(&fx, &store, &hr, &hr), 0.0);
    for seed in 9..13 {
        assert!(feature_loss_value(&fx, &store, &rand_tensor(&[3, 12, 12], seed), &hr) > 0.0);
    }
}

#[test]
fn feature_loss_gradient_matches_finite_differences() {
    let fx = FeatureExtractor::new(14).unwrap();
    let store = fx.store.cast::<f64>();
    let hr = rand_tensor(&[3, 6, 6], 15);
    let sr = rand_tensor(&[3, 6, 6], 16);
    let res = check_inputs(
        "feature_loss",
        &[sr],
        |g, v| {
            g.bind(&store, false);
            let h = g.constant(hr.clone());
            let hf = fx.forward(g, h)?;
            fx.loss(g, v[0], hf)
        },
        &FdOptions::default(),
    )
    .unwrap();
    assert!(worst(&res) < 1e-3, "{res:?}");
}

#[test]
#[allow(clippy::approx_constant)]
fn adversarial_reference_values() {
    let (g, d) = adversarial_losses(0.5, 0.5).unwrap();
    assert!((d - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert!((g - 2f64.ln()).abs() < 1e-12);
    assert!((d - 1.3863).abs() < 1e-4 && (g - 0.6931).abs() < 1e-4);
    let (_, perfect) = adversarial_losses(1.0 - 1e-12, 1e-12).unwrap();
    assert!(perfect < 1e-9);
    assert!(matches!(adversarial_losses(1.5, 0.5), Err(Error::Usage(_))));
    assert!(adversarial_losses(0.5, f64::NAN).is_err());
    // endpoints are clamped rather than producing infinities
    assert!(adversarial_losses(0.0, 1.0).unwrap().1.is_finite());
}

#[test]
fn generator_loss_decreases_in_d_fake() {
    let vals: Vec<f64> = (1..100).map(|i| adversarial_losses(0.5, i as f64 / 100.0).unwrap().0).collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn graph_adversarial_terms_match_scalar_form() {
    let mut g = Graph::<f64>::new();
    let r = g.constant(Tensor::new(&[1], vec![0.8]).unwrap());
    let f = g.constant(Tensor::new(&[1], vec![0.3]).unwrap());
    let gl = generator_adv_loss(&mut g, f).unwrap();
    let dl = discriminator_loss(&mut g, r, f).unwrap();
    let (eg, ed) = adversarial_losses(0.8, 0.3).unwrap();
    assert!((g.value(gl).item() - eg).abs() < 1e-12);
    assert!((g.value(dl).item() - ed).abs() < 1e-12);
}

#[test]
fn final_loss_cases() {
    let ones = LossParts { vgg: 1.0, adv: 1.0, dct: 1.0, ssc: 1.0 };
    let unit = LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 };
    assert_eq!(final_loss(&ones, &unit).unwrap(), 4.0);
    let zero = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0 };
    let p = LossParts { vgg: 0.37, adv: 5.0, dct: 2.0, ssc: 9.0 };
    assert_eq!(final_loss(&p, &zero).unwrap(), 0.37);
    let bad = LossParts { dct: f64::NAN, ..p };
    assert!(matches!(final_loss(&bad, &unit), Err(Error::Numeric(_))));
    assert!(LossWeights { alpha: -1.0, ..unit }.validate().is_err());
}

fn slopes(base: LossParts, w: &LossWeights) -> [f64; 3] {
    let h = 0.5;
    let f0 = final_loss(&base, w).unwrap();
    [
        (final_loss(&LossParts { adv: base.adv + h, ..base }, w).unwrap() - f0) / h,
        (final_loss(&LossParts { dct: base.dct + h, ..base }, w).unwrap() - f0) / h,
        (final_loss(&LossParts { ssc: base.ssc + h, ..base }, w).unwrap() - f0) / h,
    ]
}

proptest! {
    #[test]
    fn final_loss_is_affine_with_weight_slopes(
        vgg in 0.0f64..5.0, adv in 0.0f64..5.0, dct in 0.0f64..5.0, ssc in 0.0f64..5.0,
        alpha in 0.0f64..2.0, beta in 0.0f64..2.0, gamma in 0.0f64..2.0,
    ) {
        let w = LossWeights { alpha, beta, gamma };
        let s = slopes(LossParts { vgg, adv, dct, ssc }, &w);
        prop_assert!((s[0] - alpha).abs() < 1e-6);
        prop_assert!((s[1] - beta).abs() < 1e-6);
        prop_assert!((s[2] - gamma).abs() < 1e-6);
    }

    #[test]
    fn l1_losses_nonnegative(seed in 0u64..1000) {
        let (a, b) = (rand_tensor(&[3, 4, 4], seed), rand_tensor(&[3, 4, 4], seed + 1));
        prop_assert!(eval2(ssc_loss, &a, &b).unwrap() >= 0.0);
        prop_assert!(eval2(dct_loss, &a, &b).unwrap() >= 0.0);
    }
}

#[test]
fn combine_matches_scalar_final_loss() {
    let w = LossWeights { alpha: 0.1, beta: 0.7, gamma: 2.0 };
    let mut g = Graph::<f64>::new();
    let v: Vec<Var> = [0.3, 1.5, 0.2, 0.9].iter().map(|x| g.constant(Tensor::scalar(*x))).collect();
    let l = combine_losses(&mut g, v[0], Some(v[1]), Some(v[2]), Some(v[3]), &w).unwrap();
    let p = LossParts { vgg: 0.3, adv: 1.5, dct: 0.2, ssc: 0.9 };
    assert!((g.value(l).item() - final_loss(&p, &w).unwrap()).abs() < 1e-12);
    let only = combine_losses(&mut g, v[0], None, None, None, &w).unwrap();
    assert_eq!(g.value(only).item(), 0.3);
}

fn small_disc(store: &mut ParamStore) -> Discriminator {
    Discriminator::new(
        store,
        DiscriminatorConfig { input_size: 8, widths: vec![4, 4], dense: 6 },
    )
    .unwrap()
}

#[test]
fn discriminator_output_is_probability() {
    let mut store = ParamStore::new(20);
    let d = Discriminator::new(&mut store, DiscriminatorConfig::toy(64)).unwrap();
    for seed in 0..3 {
        let mut g = Graph::new();
        g.bind(&store, false);
        let x = g.constant(rand_tensor(&[3, 64, 64], seed).cast::<f32>());
        let p = d.forward(&mut g, x).unwrap();
        let v = g.value(p);
        assert_eq!(v.shape(), &[1]);
        assert!(v.item() > 0.0 && v.item() < 1.0);
    }
    let mut g = Graph::new();
    g.bind(&store, false);
    let x = g.constant(Tensor::zeros(&[3, 32, 32]));
    assert!(matches!(d.forward(&mut g, x), Err(Error::Dimension(_))));
}

#[test]
fn zero_final_dense_gives_one_half() {
    let mut store = ParamStore::new(21);
    let d = small_disc(&mut store);
    store.get_mut(d.output.weight).data_mut().fill(0.0);
    let mut g = Graph::new();
    g.bind(&store, false);
    let x = g.constant(rand_tensor(&[3, 8, 8], 22).cast::<f32>());
    let p = d.forward(&mut g, x).unwrap();
    assert_eq!(g.value(p).item(), 0.5);
}

#[test]
fn discriminator_gradients_match_finite_differences() {
    let mut store = ParamStore::new(23);
    let d = small_disc(&mut store);
    let s64 = store.cast::<f64>();
    let img = rand_tensor(&[3, 8, 8], 24);
    let opts = FdOptions::default();
    let res = check_params(
        &s64,
        |g| {
            let x = g.constant(img.clone());
            d.forward(g, x)
        },
        &opts,
    )
    .unwrap();
    assert!(worst(&res) < 1e-3, "{res:?}");
    let res = check_inputs(
        "disc",
        std::slice::from_ref(&img),
        |g, v| {
            g.bind(&s64, false);
            d.forward(g, v[0])
        },
        &opts,
    )
    .unwrap();
    assert!(worst(&res) < 1e-3, "{res:?}");
}
