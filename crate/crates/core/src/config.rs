//! Experiment configuration (TOML) and its content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BbParams, MpcParams};
use crate::env::SessionConfig;
use crate::error::{Error, Result};
use crate::quality::QualityModel;
use crate::sac::SacConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Quality-model TOML; the built-in ladder and curves are used when unset.
    pub quality_file: Option<PathBuf>,
    /// Overrides the playback threshold of the quality model.
    pub r0: Option<f64>,
    pub policy: String,
    pub trace_dir: PathBuf,
    /// Train/test split listing; created next to the outputs when missing.
    pub split_file: Option<PathBuf>,
    pub train_fraction: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub rate_window: usize,
    pub session: SessionConfig,
    pub bb: BbParams,
    pub mpc: MpcParams,
    pub sac: SacConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            quality_file: None,
            r0: None,
            policy: "bb".into(),
            trace_dir: PathBuf::from("traces"),
            split_file: None,
            train_fraction: 0.8,
            seed: 42,
            output_dir: PathBuf::from("out"),
            rate_window: 5,
            session: SessionConfig::default(),
            bb: BbParams::default(),
            mpc: MpcParams::default(),
            sac: SacConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.session.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if let Some(r0) = self.r0 {
            if !(r0 > 0.0 && r0 <= 1.0) {
                return Err(Error::Config(format!("r0 {r0} outside (0, 1]")));
            }
        }
        if let Some(path) = &self.quality_file {
            if !path.is_file() {
                return Err(Error::Config(format!("quality file {} not found", path.display())));
            }
        }
        Ok(())
    }

    /// The quality model after applying the file and the `r0` override.
    pub fn quality(&self) -> Result<QualityModel> {
        let model = match &self.quality_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                QualityModel::from_toml(&text)?
            }
            None => QualityModel::default(),
        };
        let model = match self.r0 {
            Some(r0) => model.with_r0(r0)?,
            None => model,
        };
        model.validate()?;
        Ok(model)
    }

    /// Hex SHA-256 over the serialized config (minus the output directory)
    /// and the resolved quality model.
    pub fn hash(&self) -> Result<String> {
        let located = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let mut h = Sha256::new();
        h.update(located.to_toml().as_bytes());
        h.update(self.quality()?.to_toml().as_bytes());
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), c);
        assert_eq!(c.session.chunk_duration, 4.0);
        assert_eq!(c.session.num_chunks, 40);
        assert_eq!(c.session.max_buffer, 60.0);
        assert_eq!(c.session.history_len, 8);
        assert_eq!(c.sac.actor_lr, 1e-4);
        assert_eq!(c.sac.critic_lr, 1e-3);
        assert_eq!(c.sac.target_entropy, 1.78);
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let c = ExperimentConfig::from_toml("seed = 7\n[sac]\nbatch_size = 32\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.sac.batch_size, 32);
        assert_eq!(c.sac.warmup_steps, 1000);
        assert!(ExperimentConfig::from_toml("sede = 7").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..a.clone() };
        let c = ExperimentConfig {
            r0: Some(0.8),
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
        let moved = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), moved.hash().unwrap());
    }

    #[test]
    fn validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        assert!(ExperimentConfig {
            r0: Some(1.2),
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ExperimentConfig {
            train_fraction: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let missing = ExperimentConfig {
            quality_file: Some("/nonexistent/q.toml".into()),
            ..Default::default()
        };
        assert!(missing.validate().is_err());
    }
}
