//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Values given on the
//! command line (`--set key=value`) are applied after the file. The hash is
//! taken over the fully resolved configuration, so two runs with the same
//! hash used the same settings regardless of how they were spelled.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{Aggregator, ModelConfig};
use crate::priors::PriorConfig;
use crate::synthetic::CohortSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub folds: usize,
    pub tile_px: u64,
    pub priors: PriorConfig,
    pub aggregator: Aggregator,
    pub hidden_dim: usize,
    pub n_heads: usize,
    pub n_attn_layers: usize,
    pub clam_k: usize,
    /// `None` selects the aggregator's default rate.
    pub lr_base: Option<f64>,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub clip_norm: f64,
    /// 0 disables tile subsampling.
    pub max_tiles: usize,
    pub clam_instance_coeff: f64,
    pub threshold: f64,
    pub cohort: CohortSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::new(Aggregator::TransMil, 1);
        Self {
            seed: 0,
            folds: 5,
            tile_px: 256,
            priors: PriorConfig::none(),
            aggregator: Aggregator::TransMil,
            hidden_dim: m.hidden_dim,
            n_heads: m.n_heads,
            n_attn_layers: m.n_attn_layers,
            clam_k: m.clam_k,
            lr_base: None,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            warmup_epochs: t.warmup_epochs,
            clip_norm: t.clip_norm,
            max_tiles: 0,
            clam_instance_coeff: t.clam_instance_coeff,
            threshold: t.threshold,
            cohort: CohortSpec::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl RunConfig {
    /// All recognised keys, in canonical order.
    pub fn keys() -> Vec<&'static str> {
        Self::default().pairs().into_iter().map(|(k, _)| k).collect()
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let c = &self.cohort;
        vec![
            ("seed", self.seed.to_string()),
            ("folds", self.folds.to_string()),
            ("tile_px", self.tile_px.to_string()),
            ("use_pd", self.priors.use_pd.to_string()),
            ("use_lin", self.priors.use_lin.to_string()),
            ("radius_norm", self.priors.radius_norm.to_string()),
            ("epsilon", self.priors.epsilon.to_string()),
            ("aggregator", self.aggregator.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_attn_layers", self.n_attn_layers.to_string()),
            ("clam_k", self.clam_k.to_string()),
            (
                "lr_base",
                self.lr_base.map_or("auto".to_string(), |v| v.to_string()),
            ),
            ("weight_decay", self.weight_decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("max_tiles", self.max_tiles.to_string()),
            ("clam_instance_coeff", self.clam_instance_coeff.to_string()),
            ("threshold", self.threshold.to_string()),
            ("n_slides", c.n_slides.to_string()),
            ("msi_fraction", c.msi_fraction.to_string()),
            ("tiles_min", c.tiles_min.to_string()),
            ("tiles_max", c.tiles_max.to_string()),
            ("feature_dim", c.feature_dim.to_string()),
            ("pitch_px", c.pitch_px.to_string()),
            ("ring_width_norm", c.ring_width_norm.to_string()),
            ("lym_enrichment", c.lym_enrichment.to_string()),
            ("lym_base_rate", c.lym_base_rate.to_string()),
            ("msi_lym_excess", c.msi_lym_excess.to_string()),
            ("interior_depletion", c.interior_depletion.to_string()),
            ("site_offset_scale", c.site_offset_scale.to_string()),
            ("offset_label_coupling", c.offset_label_coupling.to_string()),
            ("offset_noise", c.offset_noise.to_string()),
            ("noise_scale", c.noise_scale.to_string()),
            ("feature_scale", c.feature_scale.to_string()),
            ("hyper_flip", c.hyper_flip.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let c = &mut self.cohort;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "tile_px" => self.tile_px = parse(key, value)?,
            "use_pd" => self.priors.use_pd = parse_bool(key, value)?,
            "use_lin" => self.priors.use_lin = parse_bool(key, value)?,
            "radius_norm" => self.priors.radius_norm = parse(key, value)?,
            "epsilon" => self.priors.epsilon = parse(key, value)?,
            "aggregator" => self.aggregator = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "n_attn_layers" => self.n_attn_layers = parse(key, value)?,
            "clam_k" => self.clam_k = parse(key, value)?,
            "lr_base" => {
                self.lr_base = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "max_tiles" => self.max_tiles = parse(key, value)?,
            "clam_instance_coeff" => self.clam_instance_coeff = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "n_slides" => c.n_slides = parse(key, value)?,
            "msi_fraction" => c.msi_fraction = parse(key, value)?,
            "tiles_min" => c.tiles_min = parse(key, value)?,
            "tiles_max" => c.tiles_max = parse(key, value)?,
            "feature_dim" => c.feature_dim = parse(key, value)?,
            "pitch_px" => c.pitch_px = parse(key, value)?,
            "ring_width_norm" => c.ring_width_norm = parse(key, value)?,
            "lym_enrichment" => c.lym_enrichment = parse(key, value)?,
            "lym_base_rate" => c.lym_base_rate = parse(key, value)?,
            "msi_lym_excess" => c.msi_lym_excess = parse(key, value)?,
            "interior_depletion" => c.interior_depletion = parse(key, value)?,
            "site_offset_scale" => c.site_offset_scale = parse(key, value)?,
            "offset_label_coupling" => c.offset_label_coupling = parse(key, value)?,
            "offset_noise" => c.offset_noise = parse(key, value)?,
            "noise_scale" => c.noise_scale = parse(key, value)?,
            "feature_scale" => c.feature_scale = parse(key, value)?,
            "hyper_flip" => c.hyper_flip = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}`; valid keys: {}",
                    Self::keys().join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        }
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hex SHA-256 of the canonical rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            aggregator: self.aggregator,
            input_dim,
            hidden_dim: self.hidden_dim,
            n_heads: self.n_heads,
            n_attn_layers: self.n_attn_layers,
            clam_k: self.clam_k,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::for_aggregator(self.aggregator);
        TrainConfig {
            lr_base: self.lr_base.unwrap_or(base.lr_base),
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            clip_norm: self.clip_norm,
            max_tiles: (self.max_tiles > 0).then_some(self.max_tiles),
            seed: self.seed,
            clam_instance_coeff: self.clam_instance_coeff,
            threshold: self.threshold,
        }
    }

    pub fn cohort_spec(&self) -> CohortSpec {
        CohortSpec {
            seed: self.seed,
            ..self.cohort.clone()
        }
    }
}
