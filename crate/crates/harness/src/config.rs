use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub struct RegistryEntry {
    pub id: &'static str,
    pub stochastic: bool,
    pub summary: &'static str,
}

pub const REGISTRY: &[RegistryEntry] = &[
    RegistryEntry { id: "saa-demo", stochastic: true, summary: "plain iterate on a perturbed linear field" },
    RegistryEntry { id: "projective-demo", stochastic: true, summary: "projective partner, containment and event separation" },
    RegistryEntry { id: "avi-discounted", stochastic: true, summary: "approximate value iteration on a discounted MDP" },
    RegistryEntry { id: "avi-ssp", stochastic: true, summary: "approximate value iteration on a shortest-path MDP" },
    RegistryEntry { id: "avi-pnorm", stochastic: true, summary: "approximate value iteration with weighted p-norm errors" },
    RegistryEntry { id: "epsilon-sweep", stochastic: true, summary: "AVI tail distance as the error bound shrinks" },
    RegistryEntry { id: "fixed-point", stochastic: true, summary: "fixed points of a contractive set-valued map" },
    RegistryEntry { id: "note-lemma", stochastic: true, summary: "boundedness of stage-map iterates against a projected partner" },
    RegistryEntry { id: "lyapunov-build", stochastic: false, summary: "numerical Lyapunov function from trajectories" },
    RegistryEntry { id: "inward-check", stochastic: false, summary: "inward-directing test on boundary samples" },
    RegistryEntry { id: "noise-window", stochastic: true, summary: "windowed sums of weighted noise" },
];

pub fn lookup(id: &str) -> Result<&'static RegistryEntry> {
    REGISTRY.iter().find(|e| e.id == id).ok_or_else(|| HarnessError::UnknownExperiment(id.to_string()))
}

/// Root for run outputs: `$SVSA_OUT` if set, otherwise `./svsa-out`.
pub fn output_root() -> PathBuf {
    std::env::var_os("SVSA_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("svsa-out"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Output directory, relative to the output root unless absolute.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub params: toml::Table,
    /// Directory that relative data paths in `params` resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|source| HarnessError::Toml { path: path.to_path_buf(), source })?;
        cfg.base_dir = base;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|source| HarnessError::Toml { path: PathBuf::from("<inline>"), source })?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    /// Registry and seed checks; parameter checks happen when the
    /// experiment decodes its own record.
    pub fn validate(&self) -> Result<&'static RegistryEntry> {
        let entry = lookup(&self.id)?;
        if entry.stochastic && self.seed.is_none() {
            return Err(HarnessError::MissingSeed(self.id.clone()));
        }
        Ok(entry)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig { seed: Some(seed), ..self.clone() }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// The config as JSON, without the output location.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "id": self.id, "seed": self.seed, "params": self.params })
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self, root: &Path) -> PathBuf {
        match &self.output {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => root.join(p),
            None => root.join(&self.id).join(format!("seed-{}", self.seed())),
        }
    }

    pub fn params<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        toml::Value::Table(self.params.clone())
            .try_into()
            .map_err(|source| HarnessError::Params { id: self.id.clone(), source })
    }
}

/// Parse `a..b` (exclusive) or `a..=b`.
pub fn parse_seed_range(s: &str) -> Result<std::ops::Range<u64>> {
    let bad = || HarnessError::SeedRange(s.to_string());
    let (lo, hi, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    let hi = if inclusive { hi + 1 } else { hi };
    if hi <= lo {
        return Err(bad());
    }
    Ok(lo..hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("0..4").unwrap(), 0..4);
        assert_eq!(parse_seed_range("3..=5").unwrap(), 3..6);
        assert!(parse_seed_range("5..5").is_err());
        assert!(parse_seed_range("x..2").is_err());
        assert!(parse_seed_range("7").is_err());
    }

    #[test]
    fn hash_ignores_output_but_not_seed() {
        let a = ExperimentConfig::from_toml_str("id = \"saa-demo\"\nseed = 1\n[params]\nn_iter = 10\n", ".").unwrap();
        let mut b = a.clone();
        b.output = Some(PathBuf::from("elsewhere"));
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), a.with_seed(2).hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn stochastic_needs_seed() {
        let cfg = ExperimentConfig::from_toml_str("id = \"avi-ssp\"\n", ".").unwrap();
        assert!(matches!(cfg.validate(), Err(HarnessError::MissingSeed(_))));
        let cfg = ExperimentConfig::from_toml_str("id = \"inward-check\"\n", ".").unwrap();
        assert!(cfg.validate().is_ok());
        let cfg = ExperimentConfig::from_toml_str("id = \"nope\"\nseed = 1\n", ".").unwrap();
        assert!(matches!(cfg.validate(), Err(HarnessError::UnknownExperiment(_))));
    }

    #[test]
    fn unknown_top_level_key_rejected() {
        assert!(ExperimentConfig::from_toml_str("id = \"saa-demo\"\nsed = 1\n", ".").is_err());
    }
}
