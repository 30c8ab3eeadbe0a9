use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::corpus::DEFAULT_WINDOW_LEN;
use crate::lm::LmConfig;

/// Noise scale for the noisy strategy: fixed, or taken from a sigma search.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SigmaSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for SigmaSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SigmaSetting::Auto => s.serialize_str("auto"),
            SigmaSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for SigmaSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = SigmaSetting;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"auto\" or a non-negative number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<SigmaSetting, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<SigmaSetting, E> {
                if v.is_finite() && v >= 0.0 {
                    Ok(SigmaSetting::Fixed(v))
                } else {
                    Err(E::custom(format!("sigma must be non-negative, got {v}")))
                }
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<SigmaSetting, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<SigmaSetting, E> {
                self.visit_f64(v as f64)
            }
        }
        d.deserialize_any(V)
    }
}

impl std::str::FromStr for SigmaSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(SigmaSetting::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(SigmaSetting::Fixed(v)),
            _ => Err(format!(
                "expected \"auto\" or a non-negative number, got {s:?}"
            )),
        }
    }
}

fn default_lm() -> LmConfig {
    LmConfig {
        learning_rate: 1e-3,
        train_steps: 1700,
        ..LmConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub window_len: usize,
    /// Window stride; `None` means non-overlapping windows.
    pub stride: Option<usize>,
    pub member_fraction: f64,
    pub shadow_k: usize,
    pub neighbor_k: usize,
    pub sigma: SigmaSetting,
    pub sigma_bracket: (f64, f64),
    pub sigma_tol: f64,
    /// Per-class cap on the calibration samples used by the sigma search.
    pub calibration_cap: Option<usize>,
    /// Per-class cap on evaluation samples.
    pub eval_cap: Option<usize>,
    pub lm: LmConfig,
    /// Steps per shadow model; `None` matches the target's epoch count.
    pub shadow_steps: Option<usize>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("data/corpus.txt"),
            window_len: DEFAULT_WINDOW_LEN,
            stride: None,
            member_fraction: 0.6,
            shadow_k: 10,
            neighbor_k: 10,
            sigma: SigmaSetting::Auto,
            sigma_bracket: (1e-3, 10.0),
            sigma_tol: 0.02,
            calibration_cap: Some(150),
            eval_cap: None,
            lm: default_lm(),
            shadow_steps: None,
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

const TARGET_SALT: u64 = 0x7461_7267_6574_0000;
const NOISE_SALT: u64 = 0x6e6f_6973_6500_0000;
const CALIBRATION_SALT: u64 = 0x6361_6c69_6200_0000;

/// Every seed of a run, derived from the master seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub split: u64,
    pub target: u64,
    pub shadows: Vec<u64>,
    pub noise: u64,
    pub calibration: u64,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window_len)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Data(format!("invalid config: {m}")));
        if !(self.member_fraction > 0.0 && self.member_fraction < 1.0) {
            return bad(format!(
                "member_fraction {} not in (0, 1)",
                self.member_fraction
            ));
        }
        if self.shadow_k == 0 || self.neighbor_k == 0 {
            return bad("shadow_k and neighbor_k must be positive".into());
        }
        let (lo, hi) = self.sigma_bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return bad(format!("sigma_bracket [{lo}, {hi}] needs 0 < lo < hi"));
        }
        if !(self.sigma_tol > 0.0) {
            return bad("sigma_tol must be positive".into());
        }
        if self.calibration_cap == Some(0) || self.eval_cap == Some(0) {
            return bad("sample caps must be positive".into());
        }
        if self.lm.context_len < self.window_len {
            return bad(format!(
                "context_len {} shorter than window_len {}",
                self.lm.context_len, self.window_len
            ));
        }
        self.lm
            .validate()
            .map_err(|e| CliError::Data(format!("invalid config: {e}")))
    }

    pub fn seeds(&self) -> Seeds {
        let m = self.seed;
        Seeds {
            master: m,
            split: m,
            target: m ^ TARGET_SALT,
            shadows: (0..self.shadow_k as u64).map(|i| m ^ i).collect(),
            noise: m ^ NOISE_SALT,
            calibration: m ^ CALIBRATION_SALT,
        }
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
