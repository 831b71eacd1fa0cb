//! Run configuration and its flat `key = value` text form.

use std::path::Path;

use super::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::losses::{DiscriminatorConfig, LossWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Name of the preset the generator and discriminator started from.
    pub preset: String,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// Write a numbered checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let generator = match name {
            "toy" => GeneratorConfig::toy(),
            "full" | "full-x4" => GeneratorConfig::full(4),
            "full-x8" => GeneratorConfig::full(8),
            "tiny" => GeneratorConfig::tiny(),
            "overfit" => GeneratorConfig::toy(),
            other => return Err(Error::usage(format!("unknown preset {other:?}"))),
        };
        let discriminator = if name.starts_with("full") {
            DiscriminatorConfig::full()
        } else {
            DiscriminatorConfig::toy(generator.hr_size())
        };
        let mut cfg = RunConfig {
            preset: name.to_string(),
            generator,
            discriminator,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            batch_size: 8,
            steps: 1000,
            seed: 0,
            checkpoint_every: 0,
        };
        if name == "overfit" {
            cfg.weights.alpha = 0.0;
            cfg.batch_size = 4;
            cfg.adam.lr = 1e-3;
            cfg.steps = 400;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::usage("batch_size must be positive"));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::usage(format!("lr {} must be positive", self.adam.lr)));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::usage("Adam betas must lie in [0, 1)"));
        }
        if self.discriminator.input_size != self.generator.hr_size() {
            return Err(Error::dim(format!(
                "discriminator input {} does not match HR size {}",
                self.discriminator.input_size,
                self.generator.hr_size()
            )));
        }
        Ok(())
    }

    /// Applies one setting. `preset` resets everything, `ablation` sets the
    /// four component switches, `scale`/`lr_size` also resize the
    /// discriminator input.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let ctx = format!("config key {key}");
        let bad = |m: &str| Error::parse(ctx.clone(), format!("{m}: {value:?}"));
        let uint = || value.parse::<usize>().map_err(|_| bad("expected an unsigned integer"));
        let u64v = || value.parse::<u64>().map_err(|_| bad("expected an unsigned integer"));
        let real = || value.parse::<f64>().map_err(|_| bad("expected a number"));
        let flag = || match value {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(bad("expected a boolean")),
        };
        if key == "preset" {
            *self = RunConfig::preset(value)?;
            return Ok(());
        }
        let g = &mut self.generator;
        match key {
            "ablation" => {
                let mut chars = value.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => *g = g.clone().with_ablation(c)?,
                    _ => return Err(bad("expected one of a-f")),
                }
            }
            "scale" => g.scale = uint()?,
            "lr_size" => g.lr_size = uint()?,
            "channels" => g.channels = uint()?,
            "modules" => g.modules = uint()?,
            "blocks" => g.blocks = uint()?,
            "cec_taps" => g.cec_taps = uint()?,
            "cec_expansion" => g.cec_expansion = uint()?,
            "cec_reduction" => g.cec_reduction = uint()?,
            "ae_width" => g.ae_width = uint()?,
            "ssc_blocks" => g.ssc_blocks = uint()?,
            "progressive" => g.progressive = flag()?,
            "enable_cec" => g.enable_cec = flag()?,
            "enable_dctae" => g.enable_dctae = flag()?,
            "enable_ssc" => g.enable_ssc = flag()?,
            "bicubic_skip" => g.bicubic_skip = flag()?,
            "disc_widths" => {
                self.discriminator.widths = value
                    .split(',')
                    .map(|w| w.trim().parse::<usize>().map_err(|_| bad("expected comma-separated widths")))
                    .collect::<Result<_>>()?
            }
            "disc_dense" => self.discriminator.dense = uint()?,
            "alpha" => self.weights.alpha = real()?,
            "beta" => self.weights.beta = real()?,
            "gamma" => self.weights.gamma = real()?,
            "lr" => self.adam.lr = real()?,
            "beta1" => self.adam.beta1 = real()?,
            "beta2" => self.adam.beta2 = real()?,
            "adam_eps" => self.adam.eps = real()?,
            "batch_size" => self.batch_size = uint()?,
            "steps" => self.steps = u64v()?,
            "seed" => self.seed = u64v()?,
            "checkpoint_every" => self.checkpoint_every = u64v()?,
            _ => return Err(Error::parse(ctx, "unknown key")),
        }
        if matches!(key, "scale" | "lr_size") {
            self.discriminator.input_size = self.generator.hr_size();
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. A `preset` line, if
    /// present, is applied before all other keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("config line {}", n + 1), format!("expected key = value, got {line:?}")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let preset = pairs.iter().rev().find(|(k, _)| k == "preset").map_or("toy", |(_, v)| v.as_str());
        let mut cfg = RunConfig::preset(preset)?;
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let d = &self.discriminator;
        let widths: Vec<String> = d.widths.iter().map(|w| w.to_string()).collect();
        let lines = [
            ("preset", self.preset.clone()),
            ("scale", g.scale.to_string()),
            ("lr_size", g.lr_size.to_string()),
            ("channels", g.channels.to_string()),
            ("modules", g.modules.to_string()),
            ("blocks", g.blocks.to_string()),
            ("cec_taps", g.cec_taps.to_string()),
            ("cec_expansion", g.cec_expansion.to_string()),
            ("cec_reduction", g.cec_reduction.to_string()),
            ("ae_width", g.ae_width.to_string()),
            ("ssc_blocks", g.ssc_blocks.to_string()),
            ("progressive", g.progressive.to_string()),
            ("enable_cec", g.enable_cec.to_string()),
            ("enable_dctae", g.enable_dctae.to_string()),
            ("enable_ssc", g.enable_ssc.to_string()),
            ("bicubic_skip", g.bicubic_skip.to_string()),
            ("disc_widths", widths.join(",")),
            ("disc_dense", d.dense.to_string()),
            ("alpha", self.weights.alpha.to_string()),
            ("beta", self.weights.beta.to_string()),
            ("gamma", self.weights.gamma.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_training_defaults() {
        let cfg = RunConfig::preset("full").unwrap();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.adam.lr, 1e-4);
        assert_eq!((cfg.adam.beta1, cfg.adam.beta2), (0.9, 0.999));
        assert_eq!(cfg.weights, LossWeights { alpha: 1e-3, beta: 1.0, gamma: 1.0 });
        cfg.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        for name in ["toy", "full-x8", "tiny", "overfit"] {
            let mut cfg = RunConfig::preset(name).unwrap();
            cfg.set("lr", "0.00037").unwrap();
            cfg.set("ablation", "e").unwrap();
            assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn preset_applies_first_and_comments_are_ignored() {
        let cfg = RunConfig::parse("steps = 7 # short\n\n# comment\npreset = tiny\nseed=3\n").unwrap();
        assert_eq!(cfg.generator, GeneratorConfig::tiny());
        assert_eq!((cfg.steps, cfg.seed), (7, 3));
    }

    #[test]
    fn scale_change_resizes_discriminator() {
        let cfg = RunConfig::parse("scale = 8\nlr_size = 8\n").unwrap();
        assert_eq!(cfg.discriminator.input_size, 64);
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(Error::Parse { .. })));
        assert!(matches!(RunConfig::parse("steps = -1"), Err(Error::Parse { .. })));
        assert!(matches!(RunConfig::parse("no equals sign"), Err(Error::Parse { .. })));
        assert!(matches!(RunConfig::parse("lr = 0"), Err(Error::Usage(_))));
        assert!(RunConfig::parse("preset = huge").is_err());
        assert!(RunConfig::parse("ablation = ab").is_err());
        assert!(RunConfig::parse("enable_ssc = maybe").is_err());
    }
}
