//! Alternating generator/discriminator optimization.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;

use super::checkpoint::{Models, TrainingState};
use super::dataset::Dataset;
use crate::autograd::{keyed_rng, Graph, Tensor};
use crate::error::{Error, Result};
use crate::losses::{
    combine_losses, dct_loss, discriminator_loss, final_loss, generator_adv_loss, ssc_loss, LossParts,
};

/// Batch means of every logged quantity for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub parts: LossParts,
    pub total: f64,
    pub d_loss: f64,
}

pub const LOG_HEADER: &str = "step,L_vgg,L_adv,L_dct,L_ssc,L_total,d_loss";

impl StepLog {
    pub fn csv_row(&self) -> String {
        let p = &self.parts;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, p.vgg, p.adv, p.dct, p.ssc, self.total, self.d_loss
        )
    }
}

/// Dataset indices for `step`: consecutive slices of per-epoch
/// permutations, a pure function of `(seed, step)`.
pub fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut perm_epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    (0..batch)
        .map(|j| {
            let pos = step * batch as u64 + j as u64;
            let epoch = pos / n as u64;
            if epoch != perm_epoch {
                perm = (0..n).collect();
                perm.shuffle(&mut keyed_rng(seed, &format!("epoch{epoch}")));
                perm_epoch = epoch;
            }
            perm[(pos % n as u64) as usize]
        })
        .collect()
}

fn check_finite(tensors: &[Tensor], what: &str) -> Result<()> {
    if tensors.iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{what} became non-finite")))
    }
}

/// Trains on one dataset, reusing fixed HR feature targets.
pub struct Trainer<'a> {
    pub models: &'a Models,
    pub data: &'a Dataset,
    hr_features: Vec<Tensor>,
}

impl<'a> Trainer<'a> {
    pub fn new(models: &'a Models, data: &'a Dataset, state: &TrainingState) -> Result<Self> {
        let cfg = &state.config.generator;
        let (lr, hr) = data.sizes();
        if lr != cfg.lr_size || hr != cfg.hr_size() {
            return Err(Error::dim(format!(
                "dataset is {lr}->{hr}, model expects {}->{}",
                cfg.lr_size,
                cfg.hr_size()
            )));
        }
        let fx = &models.features;
        let hr_features = data
            .samples
            .iter()
            .map(|s| {
                let mut g = Graph::new();
                g.bind(&fx.store, false);
                let x = g.constant(s.hr.clone());
                let f = fx.forward(&mut g, x)?;
                Ok(g.value(f).clone())
            })
            .collect::<Result<_>>()?;
        Ok(Trainer {
            models,
            data,
            hr_features,
        })
    }

    /// One generator update followed by one discriminator update.
    pub fn step(&self, state: &mut TrainingState) -> Result<StepLog> {
        let cfg = state.config.clone();
        let w = cfg.weights;
        let idx = batch_indices(cfg.seed, state.step, self.data.len(), cfg.batch_size);
        let inv_b = 1.0 / idx.len() as f32;
        let inv = 1.0 / idx.len() as f64;
        let (gen, disc, fx) = (&self.models.generator, &self.models.discriminator, &self.models.features);

        let mut g_acc = state.g.zeros_like();
        let mut fakes = Vec::with_capacity(idx.len());
        let mut parts = LossParts::default();
        let mut adv_logged = false;
        for &i in &idx {
            let s = &self.data.samples[i];
            let mut g = Graph::new();
            g.bind(&state.g, true);
            g.bind(&fx.store, false);
            if w.alpha > 0.0 {
                g.bind(&state.d, false);
            }
            let lr = g.constant(s.lr.clone());
            let lr_dct = g.constant(s.lr_dct.clone());
            let out = gen.forward_with_dct(&mut g, lr, gen.dctae.as_ref().map(|_| lr_dct))?;
            let hf = g.constant(self.hr_features[i].clone());
            let vgg = fx.loss(&mut g, out.sr, hf)?;
            let adv = if w.alpha > 0.0 {
                let p = disc.forward(&mut g, out.sr)?;
                Some(generator_adv_loss(&mut g, p)?)
            } else {
                None
            };
            let dct = match out.dct {
                Some(pred) => {
                    let t = g.constant(s.hr_dct.clone());
                    Some(dct_loss(&mut g, pred, t)?)
                }
                None => None,
            };
            let ssc = match out.ssc {
                Some(pred) => {
                    let t = g.constant(s.ssc.clone());
                    Some(ssc_loss(&mut g, pred, t)?)
                }
                None => None,
            };
            let total = combine_losses(&mut g, vgg, adv, dct, ssc, &w)?;
            let value = |v: Option<crate::autograd::Var>| v.map_or(0.0, |v| g.value(v).item() as f64);
            parts.vgg += inv * value(Some(vgg));
            parts.dct += inv * value(dct);
            parts.ssc += inv * value(ssc);
            if adv.is_some() {
                parts.adv += inv * value(adv);
                adv_logged = true;
            }
            if !g.value(total).all_finite() {
                return Err(Error::numeric("generator loss is not finite"));
            }
            g.backward(total)?.accumulate(&state.g, &mut g_acc, inv_b);
            fakes.push(g.value(out.sr).clone());
        }
        check_finite(&g_acc, "generator gradient")?;
        state.g_opt.step(&mut state.g, &g_acc)?;
        check_finite(state.g.tensors(), "generator parameters")?;

        let mut d_acc = state.d.zeros_like();
        let mut d_loss = 0.0;
        for (&i, fake) in idx.iter().zip(fakes) {
            let mut g = Graph::new();
            g.bind(&state.d, true);
            let real = g.constant(self.data.samples[i].hr.clone());
            let fake = g.constant(fake);
            let pr = disc.forward(&mut g, real)?;
            let pf = disc.forward(&mut g, fake)?;
            let l = discriminator_loss(&mut g, pr, pf)?;
            if !adv_logged {
                let ga = generator_adv_loss(&mut g, pf)?;
                parts.adv += inv * g.value(ga).item() as f64;
            }
            d_loss += inv * g.value(l).item() as f64;
            g.backward(l)?.accumulate(&state.d, &mut d_acc, inv_b);
        }
        check_finite(&d_acc, "discriminator gradient")?;
        state.d_opt.step(&mut state.d, &d_acc)?;
        check_finite(state.d.tensors(), "discriminator parameters")?;

        state.step += 1;
        let total = final_loss(&parts, &w)?;
        if !d_loss.is_finite() {
            return Err(Error::numeric("discriminator loss is not finite"));
        }
        Ok(StepLog {
            step: state.step,
            parts,
            total,
            d_loss,
        })
    }
}

/// Output locations of a training run.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub out_dir: PathBuf,
}

impl RunPaths {
    pub fn log(&self) -> PathBuf {
        self.out_dir.join("train_log.csv")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.out_dir.join("checkpoint")
    }

    pub fn diagnostic(&self) -> PathBuf {
        self.out_dir.join("diagnostic")
    }

    pub fn numbered(&self, step: u64) -> PathBuf {
        self.out_dir.join(format!("ckpt-{step:06}"))
    }
}

/// Runs `state.config.steps - state.step` further steps, appending to the
/// CSV log and writing checkpoints. On a numeric failure the state at the
/// failing step is saved to `diagnostic/` before the error is returned.
pub fn run(state: &mut TrainingState, models: &Models, data: &Dataset, paths: &RunPaths) -> Result<Vec<StepLog>> {
    fs::create_dir_all(&paths.out_dir).map_err(|e| Error::io(&paths.out_dir, e))?;
    let trainer = Trainer::new(models, data, state)?;
    let log_path = paths.log();
    let fresh = state.step == 0 || !log_path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if fresh {
        writeln!(file, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    }
    let mut logs = Vec::new();
    while state.step < state.config.steps {
        let entry = match trainer.step(state) {
            Ok(entry) => entry,
            Err(e @ Error::Numeric(_)) => {
                state.save(&paths.diagnostic())?;
                return Err(Error::numeric(format!(
                    "step {}: {e}; diagnostic checkpoint at {}",
                    state.step + 1,
                    paths.diagnostic().display()
                )));
            }
            Err(e) => return Err(e),
        };
        let mut row = entry.csv_row();
        row.push('\n');
        file.write_all(row.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        log::info!("{}", entry.csv_row());
        let every = state.config.checkpoint_every;
        if every > 0 && state.step.is_multiple_of(every) {
            state.save(&paths.numbered(state.step))?;
        }
        logs.push(entry);
    }
    state.save(&paths.final_checkpoint())?;
    Ok(logs)
}

/// CSV text for a list of step records, with header.
pub fn log_csv(logs: &[StepLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for l in logs {
        let _ = writeln!(s, "{}", l.csv_row());
    }
    s
}
