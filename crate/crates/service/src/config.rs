//! Service configuration.
//!
//! Sources, lowest precedence first: built-in defaults, a flat `key = value`
//! file, the `KGR_DB_PATH` and `KGR_SEED` environment variables, and command
//! line flags. Every value is type-checked when it is read, so a bad file
//! fails at startup rather than at first use.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kgr_core::metrics::SpectralParams;
use kgr_core::reward::RewardConfig;
use kgr_core::store::DB_PATH_ENV;
use kgr_core::update::UpdateParams;
use thiserror::Error;

pub const SEED_ENV: &str = "KGR_SEED";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {message}")]
    InvalidValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Line-delimited JSON file backing the store; in-memory when unset.
    pub store_path: Option<PathBuf>,
    pub seed: u64,
    pub log_level: tracing::Level,
    pub reward: RewardConfig,
    pub spectral: SpectralParams,
    pub update: UpdateParams,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.parse().expect("valid default address"),
            store_path: None,
            seed: 0,
            log_level: tracing::Level::INFO,
            reward: RewardConfig::default(),
            spectral: SpectralParams::default(),
            update: UpdateParams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        message: e.to_string(),
    })
}

impl ServiceConfig {
    /// Every key accepted by [`ServiceConfig::set`].
    pub const KEYS: [&'static str; 20] = [
        "bind",
        "port",
        "store_path",
        "seed",
        "log_level",
        "reward.alpha",
        "reward.gamma",
        "reward.lambda_contr",
        "reward.lambda_t",
        "reward.eta_alpha",
        "spectral.eps",
        "spectral.mu",
        "spectral.kappa",
        "spectral.h",
        "spectral.beta_t",
        "spectral.lambda_spec",
        "update.kappa_s",
        "update.tau",
        "update.xi",
        "update.accept_threshold",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let f = |v: &str| parse::<f64>(key, v);
        match key {
            "bind" => self.bind = parse(key, value)?,
            "port" => self.bind.set_port(parse(key, value)?),
            "store_path" => self.store_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "seed" => self.seed = parse(key, value)?,
            "log_level" => self.log_level = parse(key, value)?,
            "reward.alpha" => self.reward.alpha = f(value)?,
            "reward.gamma" => self.reward.gamma = f(value)?,
            "reward.lambda_contr" => self.reward.lambda_contr = f(value)?,
            "reward.lambda_t" => self.reward.lambda_t = f(value)?,
            "reward.eta_alpha" => self.reward.eta_alpha = f(value)?,
            "spectral.eps" => self.spectral.eps = f(value)?,
            "spectral.mu" => self.spectral.mu = f(value)?,
            "spectral.kappa" => self.spectral.kappa = f(value)?,
            "spectral.h" => self.spectral.h = parse(key, value)?,
            "spectral.beta_t" => self.spectral.beta_t = f(value)?,
            "spectral.lambda_spec" => self.spectral.lambda_spec = f(value)?,
            "update.kappa_s" => self.update.kappa_s = f(value)?,
            "update.tau" => self.update.tau = f(value)?,
            "update.xi" => self.update.xi = f(value)?,
            "update.accept_threshold" => self.update.accept_threshold = f(value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Apply `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.into(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text)
    }

    /// Apply `KGR_DB_PATH` and `KGR_SEED` as read by `get`.
    pub fn apply_env_with(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(p) = get(DB_PATH_ENV).filter(|v| !v.is_empty()) {
            self.store_path = Some(PathBuf::from(p));
        }
        if let Some(s) = get(SEED_ENV).filter(|v| !v.is_empty()) {
            self.seed = parse(SEED_ENV, &s)?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env_with(|k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bind.port() == 0 {
            return Err(ConfigError::Invalid("port must be non-zero".into()));
        }
        self.reward
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.spectral
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.update.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
