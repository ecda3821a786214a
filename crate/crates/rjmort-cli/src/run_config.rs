//! Fit-run settings: defaults, optional flat `key=value` config file, and
//! command-line overrides (flags win over file values).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rjmort::prior::{ModelPrior, ParamPrior};

use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: PathBuf,
    pub chains: usize,
    pub burn: usize,
    pub keep: usize,
    pub thin: usize,
    pub seed: u64,
    pub model_prior: ModelPrior,
    /// Configuration string; empty means the family default.
    pub init_config: Option<String>,
    /// Proper prior scale; absent means flat priors.
    pub prior_tau: Option<f64>,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn param_prior(&self) -> ParamPrior {
        match self.prior_tau {
            Some(tau) => ParamPrior::Normal { tau },
            None => ParamPrior::Flat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.keep == 0 || self.thin == 0 {
            return Err(CliError::Config("chains, keep, and thin must be positive".into()));
        }
        if let Some(tau) = self.prior_tau {
            if !(tau > 0.0) {
                return Err(CliError::Config("prior tau must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Unresolved settings: every field optional so the file and flags can each
/// contribute.
#[derive(Debug, Clone, Default)]
pub struct PartialRunConfig {
    pub data: Option<PathBuf>,
    pub chains: Option<usize>,
    pub burn: Option<usize>,
    pub keep: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
    pub model_prior: Option<ModelPrior>,
    pub init_config: Option<String>,
    pub prior_tau: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl PartialRunConfig {
    /// Fill gaps from `fallback` (file values under flag values).
    pub fn or(self, fallback: PartialRunConfig) -> PartialRunConfig {
        PartialRunConfig {
            data: self.data.or(fallback.data),
            chains: self.chains.or(fallback.chains),
            burn: self.burn.or(fallback.burn),
            keep: self.keep.or(fallback.keep),
            thin: self.thin.or(fallback.thin),
            seed: self.seed.or(fallback.seed),
            model_prior: self.model_prior.or(fallback.model_prior),
            init_config: self.init_config.or(fallback.init_config),
            prior_tau: self.prior_tau.or(fallback.prior_tau),
            out_dir: self.out_dir.or(fallback.out_dir),
        }
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let config = RunConfig {
            data: self.data.ok_or_else(|| CliError::Config("missing data path".into()))?,
            chains: self.chains.unwrap_or(2),
            burn: self.burn.unwrap_or(5000),
            keep: self.keep.unwrap_or(5000),
            thin: self.thin.unwrap_or(1),
            seed: self.seed.unwrap_or(42),
            model_prior: self.model_prior.unwrap_or(ModelPrior::Uniform),
            init_config: self.init_config,
            prior_tau: self.prior_tau,
            out_dir: self.out_dir.ok_or_else(|| CliError::Config("missing output directory".into()))?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parse a flat `key=value` file; `#` starts a comment.
pub fn parse_config_file(path: &Path) -> Result<PartialRunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut kv = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected key=value", path.display(), lineno + 1))
        })?;
        kv.insert(key.trim().to_string(), value.trim().to_string());
    }

    let mut out = PartialRunConfig::default();
    for (key, value) in kv {
        let bad = |what: &str| CliError::Config(format!("config key {key}: bad {what} {value:?}"));
        match key.as_str() {
            "data" => out.data = Some(PathBuf::from(&value)),
            "chains" => out.chains = Some(value.parse().map_err(|_| bad("count"))?),
            "burn" => out.burn = Some(value.parse().map_err(|_| bad("count"))?),
            "keep" => out.keep = Some(value.parse().map_err(|_| bad("count"))?),
            "thin" => out.thin = Some(value.parse().map_err(|_| bad("count"))?),
            "seed" => out.seed = Some(value.parse().map_err(|_| bad("seed"))?),
            "model_prior" => {
                out.model_prior =
                    Some(ModelPrior::parse(&value).ok_or_else(|| bad("model prior"))?)
            }
            "init_config" => out.init_config = Some(value),
            "prior_tau" => out.prior_tau = Some(value.parse().map_err(|_| bad("number"))?),
            "out_dir" => out.out_dir = Some(PathBuf::from(&value)),
            other => {
                return Err(CliError::Config(format!("unknown config key {other:?}")));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flags_override_file_values() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# fit settings\nchains = 4\nburn = 100\nseed = 9").unwrap();
        let from_file = parse_config_file(file.path()).unwrap();
        let flags = PartialRunConfig {
            burn: Some(250),
            data: Some(PathBuf::from("d.csv")),
            out_dir: Some(PathBuf::from("out")),
            ..Default::default()
        };
        let resolved = flags.or(from_file).resolve().unwrap();
        assert_eq!(resolved.chains, 4); // from file
        assert_eq!(resolved.burn, 250); // flag wins
        assert_eq!(resolved.seed, 9);
        assert_eq!(resolved.keep, 5000); // default
    }

    #[test]
    fn unknown_key_is_config_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "wat = 1").unwrap();
        let err = parse_config_file(file.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
