//! Finite-difference verification suite over the engine primitives, the
//! frequency path, the blocks, the losses and the whole generator.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::check::{check_inputs, check_params, check_params_with, FdOptions, FdResult};
use crate::autograd::{keyed_rng, CustomBackward, Graph, ParamStore, Tensor, Var};
use crate::blocks::{CecAm, CecAmConfig, HfeBlock, HfeConfig, Reconstruct};
use crate::error::{Error, Result};
use crate::freq::{dct_grid_to_image_var, image_to_dct_grid_var};
use crate::generator::{lr_dct_grid, Generator, GeneratorConfig};
use crate::losses::{
    combine_losses, dct_loss, discriminator_loss, generator_adv_loss, ssc_loss, Discriminator, DiscriminatorConfig,
    FeatureExtractor, LossWeights,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selector {
    All,
    Primitives,
    Dct,
    Blocks,
    Losses,
    Generator,
    /// Harness self-test: an op with a deliberately wrong backward.
    Corrupted,
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Selector::All,
            "primitives" => Selector::Primitives,
            "dct" => Selector::Dct,
            "blocks" => Selector::Blocks,
            "losses" => Selector::Losses,
            "generator" => Selector::Generator,
            "corrupted" => Selector::Corrupted,
            other => return Err(Error::usage(format!("unknown gradcheck selector {other:?}"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub results: Vec<FdResult>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        crate::autograd::check::worst(&self.results)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance
    }

    pub fn failures(&self) -> Vec<&FdResult> {
        self.results.iter().filter(|r| !(r.max_rel_err < self.tolerance)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("check\tmax_rel_err\tprobed\tkink_crossings\tstatus\n");
        for r in &self.results {
            let status = if r.max_rel_err < self.tolerance { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{}\t{:.3e}\t{}\t{}\t{status}", r.name, r.max_rel_err, r.probed, r.crossed);
        }
        s
    }
}

struct Inputs {
    rng: rand_chacha::ChaCha8Rng,
}

impl Inputs {
    fn new(seed: u64) -> Self {
        Inputs {
            rng: keyed_rng(seed, "gradcheck"),
        }
    }

    fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.rng.random_range(lo..hi))
    }

    fn signed(&mut self, shape: &[usize]) -> Tensor<f64> {
        self.uniform(shape, -1.0, 1.0)
    }

    /// Values at least 0.1 away from zero.
    fn off_zero(&mut self, shape: &[usize]) -> Tensor<f64> {
        self.signed(shape).map(|v| v + 0.1 * v.signum())
    }
}

/// `sum(y * w)` for a fixed random `w`: a generic scalar readout.
fn readout(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = keyed_rng(seed, "gradcheck.readout");
    let w = Tensor::from_fn(g.shape(y), |_| rng.random_range(-1.0..1.0));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>>);

fn primitive_cases(inp: &mut Inputs) -> Vec<Case> {
    let x = inp.signed(&[3, 5, 5]);
    let y = inp.signed(&[3, 5, 5]);
    let shape = [3, 5, 5];
    let far = {
        let d = inp.off_zero(&shape);
        let mut t = x.clone();
        t.data_mut().iter_mut().zip(d.data()).for_each(|(a, b)| *a += b);
        t
    };
    vec![
        ("add", vec![x.clone(), y.clone()], Box::new(|g, v| { let o = g.add(v[0], v[1])?; readout(g, o, 1) })),
        ("sub", vec![x.clone(), y.clone()], Box::new(|g, v| { let o = g.sub(v[0], v[1])?; readout(g, o, 2) })),
        ("mul", vec![x.clone(), y.clone()], Box::new(|g, v| { let o = g.mul(v[0], v[1])?; readout(g, o, 3) })),
        ("scale", vec![x.clone()], Box::new(|g, v| { let o = g.scale(v[0], -1.7)?; readout(g, o, 4) })),
        ("add_scalar", vec![x.clone()], Box::new(|g, v| { let o = g.add_scalar(v[0], 0.4)?; let o = g.mul(o, o)?; readout(g, o, 5) })),
        ("leaky_relu", vec![inp.off_zero(&shape)], Box::new(|g, v| { let o = g.leaky_relu(v[0], 0.2)?; readout(g, o, 6) })),
        ("sigmoid", vec![x.clone()], Box::new(|g, v| { let o = g.sigmoid(v[0])?; readout(g, o, 7) })),
        ("ln_clamped", vec![inp.uniform(&shape, 0.2, 1.5)], Box::new(|g, v| { let o = g.ln_clamped(v[0], 1e-7)?; readout(g, o, 8) })),
        ("conv2d_3x3", vec![x.clone(), inp.signed(&[4, 3, 3, 3]), inp.signed(&[4])], Box::new(|g, v| { let o = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?; readout(g, o, 9) })),
        ("conv2d_stride2", vec![x.clone(), inp.signed(&[2, 3, 3, 3]), inp.signed(&[2])], Box::new(|g, v| { let o = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?; readout(g, o, 10) })),
        ("conv2d_1x1", vec![x.clone(), inp.signed(&[2, 3, 1, 1]), inp.signed(&[2])], Box::new(|g, v| { let o = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?; readout(g, o, 11) })),
        ("conv2d_5x5", vec![x.clone(), inp.signed(&[2, 3, 5, 5]), inp.signed(&[2])], Box::new(|g, v| { let o = g.conv2d(v[0], v[1], Some(v[2]), 1, 2)?; readout(g, o, 12) })),
        ("depthwise_conv2d", vec![x.clone(), inp.signed(&[3, 1, 3, 3]), inp.signed(&[3])], Box::new(|g, v| { let o = g.depthwise_conv2d(v[0], v[1], Some(v[2]), 1, 1)?; readout(g, o, 13) })),
        ("pixel_shuffle", vec![inp.signed(&[8, 2, 3])], Box::new(|g, v| { let o = g.pixel_shuffle(v[0], 2)?; readout(g, o, 14) })),
        ("concat", vec![x.clone(), inp.signed(&[1, 5, 5])], Box::new(|g, v| { let o = g.concat(&[v[0], v[1]])?; readout(g, o, 15) })),
        ("global_avg_pool", vec![x.clone()], Box::new(|g, v| { let o = g.global_avg_pool(v[0])?; readout(g, o, 16) })),
        ("linear", vec![inp.signed(&[6]), inp.signed(&[4, 6]), inp.signed(&[4])], Box::new(|g, v| { let o = g.linear(v[0], v[1], Some(v[2]))?; readout(g, o, 17) })),
        ("channel_scale", vec![x.clone(), inp.uniform(&[3], 0.1, 0.9)], Box::new(|g, v| { let o = g.channel_scale(v[0], v[1])?; readout(g, o, 18) })),
        ("sum", vec![x.clone()], Box::new(|g, v| { let o = g.mul(v[0], v[0])?; g.sum(o) })),
        ("mean", vec![x.clone()], Box::new(|g, v| { let o = g.mul(v[0], v[0])?; g.mean(o) })),
        ("mean_abs_diff", vec![far, x.clone()], Box::new(|g, v| g.mean_abs_diff(v[0], v[1]))),
        ("mean_sq_diff", vec![x.clone(), y.clone()], Box::new(|g, v| g.mean_sq_diff(v[0], v[1]))),
        ("upsample_nearest", vec![x.clone()], Box::new(|g, v| { let o = g.upsample_nearest(v[0], 2)?; readout(g, o, 19) })),
        ("reshape", vec![x], Box::new(|g, v| { let o = g.reshape(v[0], &[75])?; readout(g, o, 20) })),
    ]
}

fn dct_cases(inp: &mut Inputs) -> Vec<Case> {
    vec![
        ("dct_grid_to_image", vec![inp.signed(&[64, 2, 1])], Box::new(|g, v| { let o = dct_grid_to_image_var(g, v[0])?; readout(g, o, 21) })),
        ("image_to_dct_grid", vec![inp.signed(&[1, 8, 16])], Box::new(|g, v| { let o = image_to_dct_grid_var(g, v[0], 8)?; readout(g, o, 22) })),
        (
            "dct_fusion_path",
            vec![inp.signed(&[3, 16, 8]), inp.signed(&[64, 2, 1]), inp.signed(&[3, 4, 1, 1])],
            Box::new(|g, v| {
                let map = dct_grid_to_image_var(g, v[1])?;
                let cat = g.concat(&[v[0], map])?;
                let o = g.conv2d(cat, v[2], None, 1, 0)?;
                readout(g, o, 23)
            }),
        ),
    ]
}

fn run_cases(cases: Vec<Case>, opts: &FdOptions, out: &mut Vec<FdResult>) -> Result<()> {
    for (name, inputs, f) in cases {
        let res = check_inputs(name, &inputs, |g, v| f(g, v), opts)?;
        out.push(merge(name, &res));
    }
    Ok(())
}

fn merge(name: &str, res: &[FdResult]) -> FdResult {
    FdResult {
        name: name.to_string(),
        max_rel_err: crate::autograd::check::worst(res),
        probed: res.iter().map(|r| r.probed).sum(),
        crossed: res.iter().map(|r| r.crossed).sum(),
    }
}

fn block_checks(inp: &mut Inputs, seed: u64, opts: &FdOptions, out: &mut Vec<FdResult>) -> Result<()> {
    let mut store = ParamStore::new(seed);
    let hfe = HfeBlock::new(&mut store, "hfe", HfeConfig::for_width(4))?;
    let cec = CecAm::new(
        &mut store,
        "cec",
        CecAmConfig { in_channels: 8, out_channels: 4, expansion: 2, reduction: 4 },
    )?;
    let rec = Reconstruct::new(&mut store, "recon", 4, 2, true)?;
    let s64 = store.cast::<f64>();
    let x4 = inp.signed(&[4, 5, 5]);
    let x8 = inp.signed(&[8, 4, 4]);

    type Fwd<'a> = Box<dyn Fn(&mut Graph<'_, f64>, Var) -> Result<Var> + 'a>;
    let parts: Vec<(&str, Tensor<f64>, Fwd)> = vec![
        ("hfe_block", x4.clone(), Box::new(|g, x| hfe.forward(g, x))),
        ("cec_am", x8, Box::new(|g, x| cec.forward(g, x))),
        ("reconstruct_x2", x4, Box::new(|g, x| rec.forward(g, x))),
    ];
    for (i, (name, x, f)) in parts.iter().enumerate() {
        let res = check_inputs(
            name,
            std::slice::from_ref(x),
            |g, v| {
                g.bind(&s64, false);
                let y = f(g, v[0])?;
                readout(g, y, 30 + i as u64)
            },
            opts,
        )?;
        out.push(merge(&format!("{name}.input"), &res));
    }
    let res = check_params(
        &s64,
        |g| {
            let mut total: Option<Var> = None;
            for (i, (_, x, f)) in parts.iter().enumerate() {
                let xv = g.constant(x.clone());
                let y = f(g, xv)?;
                let r = readout(g, y, 40 + i as u64)?;
                total = Some(match total {
                    Some(t) => g.add(t, r)?,
                    None => r,
                });
            }
            Ok(total.expect("three parts"))
        },
        opts,
    )?;
    out.push(merge("blocks.params", &res));
    Ok(())
}

fn loss_checks(inp: &mut Inputs, seed: u64, opts: &FdOptions, out: &mut Vec<FdResult>) -> Result<()> {
    let fx = FeatureExtractor::new(seed)?;
    let fx64 = fx.store.cast::<f64>();
    let hr = inp.uniform(&[3, 6, 6], 0.0, 1.0);
    let res = check_inputs(
        "feature_loss",
        &[inp.uniform(&[3, 6, 6], 0.0, 1.0)],
        |g, v| {
            g.bind(&fx64, false);
            let h = g.constant(hr.clone());
            let hf = fx.forward(g, h)?;
            fx.loss(g, v[0], hf)
        },
        opts,
    )?;
    out.push(merge("feature_loss", &res));

    let base = inp.signed(&[64, 2, 2]);
    let res = check_inputs(
        "dct_loss",
        &[base.map(|v| v + 3.0), base],
        |g, v| dct_loss(g, v[0], v[1]),
        opts,
    )?;
    out.push(merge("dct_loss", &res));
    let img = inp.uniform(&[3, 4, 4], 0.0, 1.0);
    let res = check_inputs("ssc_loss", &[img.map(|v| v - 2.0), img], |g, v| ssc_loss(g, v[0], v[1]), opts)?;
    out.push(merge("ssc_loss", &res));
    let res = check_inputs(
        "adversarial",
        &[inp.uniform(&[1], 0.2, 0.8), inp.uniform(&[1], 0.2, 0.8)],
        |g, v| {
            let d = discriminator_loss(g, v[0], v[1])?;
            let gl = generator_adv_loss(g, v[1])?;
            g.add(d, gl)
        },
        opts,
    )?;
    out.push(merge("adversarial_losses", &res));

    let mut dstore = ParamStore::new(seed);
    let disc = Discriminator::new(&mut dstore, DiscriminatorConfig { input_size: 8, widths: vec![4, 4], dense: 6 })?;
    let d64 = dstore.cast::<f64>();
    let x = inp.uniform(&[3, 8, 8], 0.0, 1.0);
    let res = check_params(&d64, |g| { let xv = g.constant(x.clone()); disc.forward(g, xv) }, opts)?;
    out.push(merge("discriminator.params", &res));
    let res = check_inputs("discriminator", std::slice::from_ref(&x), |g, v| { g.bind(&d64, false); disc.forward(g, v[0]) }, opts)?;
    out.push(merge("discriminator.input", &res));
    Ok(())
}

/// Full three-branch generator under the combined training loss.
fn generator_check(inp: &mut Inputs, seed: u64, opts: &FdOptions, out: &mut Vec<FdResult>) -> Result<()> {
    let cfg = GeneratorConfig::tiny();
    let (lr_n, hr_n) = (cfg.lr_size, cfg.hr_size());
    let mut gstore = ParamStore::new(seed);
    let gen = Generator::new(&mut gstore, cfg)?;
    let mut dstore = ParamStore::new(seed);
    let disc = Discriminator::new(&mut dstore, DiscriminatorConfig::toy(hr_n))?;
    let fx = FeatureExtractor::new(seed)?;
    let (g64, d64, fx64) = (gstore.cast::<f64>(), dstore.cast::<f64>(), fx.store.cast::<f64>());

    let lr = inp.uniform(&[3, lr_n, lr_n], 0.0, 1.0);
    let lr_dct = lr_dct_grid(&lr)?;
    let hr = inp.uniform(&[3, hr_n, hr_n], 0.0, 1.0);
    // targets well away from the initial outputs
    let dct_target = inp.uniform(&[64, hr_n / 8, hr_n / 8], 4.0, 5.0);
    let ssc_target = inp.uniform(&[3, hr_n, hr_n], 3.0, 4.0);
    let weights = LossWeights { alpha: 0.1, ..LossWeights::default() };
    let res = check_params_with(
        &g64,
        &[&d64, &fx64],
        |g| {
            let x = g.constant(lr.clone());
            let xd = g.constant(lr_dct.clone());
            let o = gen.forward_with_dct(g, x, Some(xd))?;
            let h = g.constant(hr.clone());
            let hf = fx.forward(g, h)?;
            let vgg = fx.loss(g, o.sr, hf)?;
            let p = disc.forward(g, o.sr)?;
            let adv = generator_adv_loss(g, p)?;
            let dt = g.constant(dct_target.clone());
            let dct = dct_loss(g, o.dct.expect("dct branch"), dt)?;
            let st = g.constant(ssc_target.clone());
            let ssc = ssc_loss(g, o.ssc.expect("ssc branch"), st)?;
            combine_losses(g, vgg, Some(adv), Some(dct), Some(ssc), &weights)
        },
        opts,
    )?;
    let mut by_part: Vec<FdResult> = Vec::new();
    for r in res {
        let part = r.name.split('.').next().unwrap_or("").to_string();
        match by_part.iter_mut().find(|p| p.name == format!("generator.{part}")) {
            Some(p) => {
                p.max_rel_err = p.max_rel_err.max(r.max_rel_err);
                p.probed += r.probed;
                p.crossed += r.crossed;
            }
            None => by_part.push(FdResult { name: format!("generator.{part}"), ..r }),
        }
    }
    out.extend(by_part);
    Ok(())
}

/// Squares its input but reports a gradient of `3x` instead of `2x`.
struct WrongSquare;

impl CustomBackward<f64> for WrongSquare {
    fn backward(&self, inputs: &[&Tensor<f64>], grad_out: &Tensor<f64>) -> Vec<Option<Tensor<f64>>> {
        let x = inputs[0];
        vec![Some(Tensor::from_fn(x.shape(), |i| 3.0 * x.data()[i] * grad_out.data()[i]))]
    }
}

fn corrupted_check(inp: &mut Inputs, opts: &FdOptions, out: &mut Vec<FdResult>) -> Result<()> {
    let res = check_inputs(
        "corrupted_square",
        &[inp.off_zero(&[2, 3, 3])],
        |g, v| {
            let x = g.value(v[0]).clone();
            let y = g.custom(&[v[0]], x.map(|a| a * a), Box::new(WrongSquare))?;
            readout(g, y, 50)
        },
        opts,
    )?;
    out.push(merge("corrupted_square", &res));
    Ok(())
}

pub fn run_gradcheck(selector: Selector, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    let opts = FdOptions { seed, ..FdOptions::default() };
    let mut inp = Inputs::new(seed);
    let mut results = Vec::new();
    let want = |s: Selector| selector == s || (selector == Selector::All && s != Selector::Corrupted);
    if want(Selector::Primitives) {
        run_cases(primitive_cases(&mut inp), &opts, &mut results)?;
    }
    if want(Selector::Dct) {
        run_cases(dct_cases(&mut inp), &opts, &mut results)?;
    }
    if want(Selector::Blocks) {
        block_checks(&mut inp, seed, &opts, &mut results)?;
    }
    if want(Selector::Losses) {
        loss_checks(&mut inp, seed, &opts, &mut results)?;
    }
    if want(Selector::Generator) {
        generator_check(&mut inp, seed, &opts, &mut results)?;
    }
    if want(Selector::Corrupted) {
        corrupted_check(&mut inp, &opts, &mut results)?;
    }
    Ok(GradcheckReport { results, tolerance })
}
