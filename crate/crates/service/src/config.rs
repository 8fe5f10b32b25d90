//! Service configuration: engine defaults plus a small `key = value`
//! override file, selectable with `--config` or the `RASP_CONFIG`
//! environment variable.

use std::path::Path;

use rasp_core::knn::BoundPolicy;

use crate::error::{Error, Result};

pub const CONFIG_ENV_VAR: &str = "RASP_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub buckets: usize,
    pub beta: f64,
    pub v0: f64,
    pub v1: f64,
    pub capacity: usize,
    pub eps_terminate: f64,
    pub delta: usize,
    pub bound_policy: BoundPolicy,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            buckets: 256,
            beta: 4.0,
            v0: 4.0,
            v1: 4.25,
            capacity: 20,
            eps_terminate: 1e-6,
            delta: 0,
            bound_policy: BoundPolicy::default(),
            seed: 7,
        }
    }
}

impl ServiceConfig {
    /// Loads overrides from a file of `key = value` lines; `#` starts a
    /// comment. Unknown keys are rejected so typos surface immediately.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ServiceConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Resolution order: explicit path, then `RASP_CONFIG`, then defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        if let Ok(p) = std::env::var(CONFIG_ENV_VAR) {
            return Self::load(Path::new(&p));
        }
        Ok(ServiceConfig::default())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::Config(format!("bad value '{v}' for {k}"));
        match key {
            "buckets" => self.buckets = value.parse().map_err(|_| bad(key, value))?,
            "beta" => self.beta = value.parse().map_err(|_| bad(key, value))?,
            "v0" => self.v0 = value.parse().map_err(|_| bad(key, value))?,
            "v1" => self.v1 = value.parse().map_err(|_| bad(key, value))?,
            "capacity" => self.capacity = value.parse().map_err(|_| bad(key, value))?,
            "eps_terminate" => self.eps_terminate = value.parse().map_err(|_| bad(key, value))?,
            "delta" => self.delta = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "bound_policy" => self.bound_policy = parse_bound_policy(value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn key_params(&self) -> Result<rasp_core::KeyParams> {
        Ok(rasp_core::KeyParams {
            buckets: self.buckets,
            beta: self.beta,
            noise: rasp_core::NoiseSpec::new(self.v0, self.v1)?,
        })
    }
}

/// `user:<edge>`, `center:<epsilon>`, or `full`.
pub fn parse_bound_policy(value: &str) -> Result<BoundPolicy> {
    let parts: Vec<&str> = value.splitn(2, ':').collect();
    match parts.as_slice() {
        ["full"] => Ok(BoundPolicy::FullDomain),
        ["user", edge] => edge
            .parse()
            .map(|edge| BoundPolicy::UserBound { edge })
            .map_err(|_| Error::Config(format!("bad user bound '{value}'"))),
        ["center", eps] => eps
            .parse()
            .map(|epsilon| BoundPolicy::CenterDistance { epsilon })
            .map_err(|_| Error::Config(format!("bad center bound '{value}'"))),
        _ => Err(Error::Config(format!(
            "bound policy '{value}' not one of user:<edge>, center:<eps>, full"
        ))),
    }
}
