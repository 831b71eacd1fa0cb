//! Training state and its directory form: `config.txt`, `state.txt`, and a
//! `tensors.txt` manifest over the little-endian `tensors.bin` blob.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::adam::Adam;
use super::config::RunConfig;
use crate::autograd::{load_tensors, save_tensors, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::losses::{Discriminator, FeatureExtractor};

/// Networks rebuilt deterministically from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct Models {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub features: FeatureExtractor,
}

#[derive(Clone, Debug)]
pub struct TrainingState {
    pub config: RunConfig,
    pub step: u64,
    pub g: ParamStore,
    pub d: ParamStore,
    pub g_opt: Adam,
    pub d_opt: Adam,
}

const G: &str = "g";
const D: &str = "d";

impl TrainingState {
    /// Fresh seeded initialization.
    pub fn new(config: RunConfig) -> Result<(Self, Models)> {
        config.validate()?;
        let mut g = ParamStore::new(config.seed);
        let generator = Generator::new(&mut g, config.generator.clone())?;
        let mut d = ParamStore::new(config.seed);
        let discriminator = Discriminator::new(&mut d, config.discriminator.clone())?;
        let features = FeatureExtractor::new(config.seed)?;
        let state = TrainingState {
            g_opt: Adam::new(&g, config.adam),
            d_opt: Adam::new(&d, config.adam),
            config,
            step: 0,
            g,
            d,
        };
        Ok((
            state,
            Models {
                generator,
                discriminator,
                features,
            },
        ))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::autograd::write_file(&dir.join("config.txt"), self.config.to_text().as_bytes())?;
        let state = format!(
            "step = {}\nseed = {}\ng_adam_t = {}\nd_adam_t = {}\n",
            self.step, self.config.seed, self.g_opt.t, self.d_opt.t
        );
        crate::autograd::write_file(&dir.join("state.txt"), state.as_bytes())?;
        let mut items: Vec<(String, &Tensor)> = Vec::new();
        for (prefix, store, opt) in [(G, &self.g, &self.g_opt), (D, &self.d, &self.d_opt)] {
            for (name, t) in store.named() {
                items.push((format!("{prefix}:{name}"), t));
            }
            for (name, t) in store.named().map(|(n, _)| n).zip(&opt.m) {
                items.push((format!("{prefix}.m:{name}"), t));
            }
            for (name, t) in store.named().map(|(n, _)| n).zip(&opt.v) {
                items.push((format!("{prefix}.v:{name}"), t));
            }
        }
        save_tensors(
            &dir.join("tensors.txt"),
            &dir.join("tensors.bin"),
            items.iter().map(|(n, t)| (n.as_str(), *t)),
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, Models)> {
        let config = RunConfig::load(&dir.join("config.txt"))?;
        let state_path = dir.join("state.txt");
        let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let mut fields = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(state_path.display().to_string(), format!("bad line {line:?}")))?;
            let v: u64 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(state_path.display().to_string(), format!("bad value in {line:?}")))?;
            fields.insert(k.trim().to_string(), v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(state_path.display().to_string(), format!("missing {k}")))
        };
        if get("seed")? != config.seed {
            return Err(Error::parse(state_path.display().to_string(), "seed disagrees with config"));
        }
        let (mut state, models) = TrainingState::new(config)?;
        state.step = get("step")?;
        state.g_opt.t = get("g_adam_t")?;
        state.d_opt.t = get("d_adam_t")?;

        let mut groups: HashMap<String, Vec<(String, Tensor)>> = HashMap::new();
        for (name, t) in load_tensors::<f32>(&dir.join("tensors.txt"), &dir.join("tensors.bin"))? {
            let (prefix, rest) = name
                .split_once(':')
                .ok_or_else(|| Error::parse("checkpoint manifest", format!("unprefixed tensor {name:?}")))?;
            groups.entry(prefix.to_string()).or_default().push((rest.to_string(), t));
        }
        let mut take = |k: &str| groups.remove(k).unwrap_or_default();
        let (g, gm, gv, d, dm, dv) = (take(G), take("g.m"), take("g.v"), take(D), take("d.m"), take("d.v"));
        state.g.assign(g)?;
        state.d.assign(d)?;
        for (opt, store, m, v) in [(&mut state.g_opt, &state.g, gm, gv), (&mut state.d_opt, &state.d, dm, dv)] {
            let mut sm = store.clone();
            sm.assign(m)?;
            let mut sv = store.clone();
            sv.assign(v)?;
            opt.m = sm.tensors().to_vec();
            opt.v = sv.tensors().to_vec();
        }
        Ok((state, models))
    }

    /// True when every parameter and moment is bitwise equal.
    pub fn bit_identical(&self, other: &TrainingState) -> bool {
        let bits = |a: &[Tensor], b: &[Tensor]| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
                })
        };
        self.step == other.step
            && self.config == other.config
            && self.g_opt.t == other.g_opt.t
            && self.d_opt.t == other.d_opt.t
            && bits(self.g.tensors(), other.g.tensors())
            && bits(self.d.tensors(), other.d.tensors())
            && bits(&self.g_opt.m, &other.g_opt.m)
            && bits(&self.g_opt.v, &other.g_opt.v)
            && bits(&self.d_opt.m, &other.d_opt.m)
            && bits(&self.d_opt.v, &other.d_opt.v)
    }
}
