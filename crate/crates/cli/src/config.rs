use std::path::{Path, PathBuf};

use geoqa_core::store::StoreConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub fixtures: PathBuf,
    /// Empty means the built-in template set.
    pub templates: Option<PathBuf>,
    pub store: PathBuf,
    pub cache: PathBuf,
    pub dataset: PathBuf,
    pub splits: PathBuf,
    pub runs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            fixtures: "data/fixtures".into(),
            templates: None,
            store: "data/store.sqlite".into(),
            cache: "data/cache.jsonl".into(),
            dataset: "data/dataset.jsonl".into(),
            splits: "data/splits".into(),
            runs: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureSection {
    pub communities_per_city: usize,
    pub pois_per_city: usize,
}

impl Default for FixtureSection {
    fn default() -> Self {
        FixtureSection {
            communities_per_city: 200,
            pois_per_city: 150,
        }
    }
}

/// Chat endpoint. The key itself never appears here, only the name of the
/// environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub fixture: u64,
    pub provider: u64,
    pub generator: u64,
    pub split: u64,
    pub fewshot: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            fixture: 7,
            provider: 7,
            generator: 7,
            split: 7,
            fewshot: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub step_cap: usize,
    pub attempt_cap: usize,
    pub parallelism: usize,
    pub top_k: usize,
    pub fewshot_shots: usize,
    pub attempts_per_template: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            step_cap: geoqa_core::agent::DEFAULT_STEP_CAP,
            attempt_cap: geoqa_core::map_agent::DEFAULT_ATTEMPT_CAP,
            parallelism: 0,
            top_k: 3,
            fewshot_shots: geoqa_core::slu::DEFAULT_SHOTS,
            attempts_per_template: 100,
        }
    }
}

/// Contents of the TOML config file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub paths: Paths,
    pub store: StoreConfig,
    pub fixture: FixtureSection,
    pub backend: BackendSection,
    pub seeds: Seeds,
    pub run: RunSection,
}

impl CliConfig {
    /// Relative paths in a file are taken relative to that file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: CliConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for slot in [&mut p.fixtures, &mut p.store, &mut p.cache, &mut p.dataset, &mut p.splits, &mut p.runs] {
            if slot.is_relative() {
                *slot = base.join(&*slot);
            }
        }
        if let Some(t) = &mut p.templates {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.store.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.run.step_cap == 0 || self.run.attempt_cap == 0 {
            return Err(CliError::Config("step_cap and attempt_cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults_and_rebases_paths() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("geoqa.toml");
        std::fs::write(&f, "[paths]\nstore = \"s.sqlite\"\n[run]\nstep_cap = 5\n").unwrap();
        let cfg = CliConfig::load(&f).unwrap();
        assert_eq!(cfg.paths.store, dir.path().join("s.sqlite"));
        assert_eq!(cfg.run.step_cap, 5);
        assert_eq!(cfg.run.attempt_cap, 3);
        std::fs::write(&f, "[backend]\napi_key = \"sk-123\"\n").unwrap();
        assert!(CliConfig::load(&f).is_err());
    }
}
