//! Pipeline configuration, loaded from TOML. Every section and key is
//! optional; omitted values take their defaults and unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ethucy::ImportOptions;
use crate::data::pairs::{CandidateConfig, SplitSel};
use crate::data::synth::SynthConfig;
use crate::diffusion::DiffusionConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::scoring::ScoreTrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsConfig {
    pub fraction: f64,
    pub pairs_per_history: usize,
    pub split: SplitSel,
    pub speed_tie_threshold: f64,
    pub turn_tie_threshold: f64,
    /// Fraction of test-split histories labeled for held-out accuracy.
    pub heldout_fraction: f64,
    pub candidates: CandidateConfig,
}

impl Default for PairsConfig {
    fn default() -> Self {
        Self {
            fraction: 0.01,
            pairs_per_history: 4,
            split: SplitSel::Train,
            speed_tie_threshold: 0.1,
            turn_tie_threshold: 0.087,
            heldout_fraction: 0.25,
            candidates: CandidateConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_c: usize,
    pub n_s: usize,
    /// Test histories evaluated; 0 means all of them.
    pub max_histories: usize,
    pub adherence_grid: usize,
    pub adherence_samples: usize,
    pub grid_size: usize,
    pub grid_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_c: 20,
            n_s: 20,
            max_histories: 20,
            adherence_grid: 20,
            adherence_samples: 5,
            grid_size: 5,
            grid_samples: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Base seed; the CLI `--seed` flag overrides it and the value used is
    /// what a checkpoint snapshot records.
    pub seed: u64,
    /// Corpus-level bound on per-step displacement, m/s.
    pub v_max: f64,
    pub synth: SynthConfig,
    pub import: ImportOptions,
    pub pairs: PairsConfig,
    pub encoder: EncoderConfig,
    pub score: ScoreTrainConfig,
    pub diffusion: DiffusionConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            v_max: crate::data::DEFAULT_V_MAX,
            synth: SynthConfig::default(),
            import: ImportOptions::default(),
            pairs: PairsConfig::default(),
            encoder: EncoderConfig::default(),
            score: ScoreTrainConfig::default(),
            diffusion: DiffusionConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0) {
            return Err(Error::Config("v_max must be > 0".into()));
        }
        self.synth.validate()?;
        self.import.validate()?;
        let p = &self.pairs;
        let frac_ok = |f: f64| f > 0.0 && f <= 1.0;
        if !frac_ok(p.fraction) || !frac_ok(p.heldout_fraction) {
            return Err(Error::Config("pairs fractions must be in (0, 1]".into()));
        }
        if p.pairs_per_history == 0 || !(p.speed_tie_threshold >= 0.0) || !(p.turn_tie_threshold >= 0.0) {
            return Err(Error::Config("pairs_per_history must be >= 1 and tie thresholds >= 0".into()));
        }
        p.candidates.validate()?;
        self.encoder.validate()?;
        self.score.validate()?;
        self.diffusion.validate()?;
        let e = &self.eval;
        if e.n_c == 0 || e.n_s == 0 || e.adherence_grid < 2 || e.adherence_samples == 0 || e.grid_size < 2 || e.grid_samples == 0 {
            return Err(Error::Config("eval sizes must be >= 1 (grids >= 2)".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = Config::default();
        c.score.lambda = 0.0;
        c.diffusion.denoiser.heads = 8;
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(Config::from_toml("[score]\nlamda = 0.1\n").is_err());
        assert!(Config::from_toml("bogus = 1\n").is_err());
        assert!(Config::from_toml("[score]\nk = 1\n").is_err());
        assert!(Config::from_toml("[diffusion]\nbeta_end = 1.5\n").is_err());
        assert!(Config::from_toml("[diffusion.denoiser]\nwidth = 30\nheads = 4\n").is_err());
        let c = Config::from_toml("[score]\nlambda = 0.5\nhidden = [32, 16]\n").unwrap();
        assert_eq!(c.score.lambda, 0.5);
        assert_eq!(c.score.hidden, vec![32, 16]);
    }
}
