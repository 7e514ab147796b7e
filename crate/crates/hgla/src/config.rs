//! Run configuration: JSON file plus flag overrides.
//!
//! Schema (all fields optional, defaults shown):
//!
//! ```json
//! {
//!   "t": 2, "h": 8, "w": 8, "d": 8, "k": 2,
//!   "rank": 2, "layers": 1, "heads": 1,
//!   "seed": 0, "timestep": 500.0, "tolerance": 1e-5
//! }
//! ```
//!
//! The feed-forward width is fixed at `4 * D`.

use std::fmt;
use std::path::Path;

use serde::Deserialize;

use hgla_core::block::BlockConfig;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "defaults::t")]
    pub t: usize,
    #[serde(default = "defaults::h")]
    pub h: usize,
    #[serde(default = "defaults::w")]
    pub w: usize,
    #[serde(default = "defaults::d")]
    pub d: usize,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::rank")]
    pub rank: usize,
    #[serde(default = "defaults::layers")]
    pub layers: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::timestep")]
    pub timestep: f32,
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
}

mod defaults {
    pub fn t() -> usize {
        2
    }
    pub fn h() -> usize {
        8
    }
    pub fn w() -> usize {
        8
    }
    pub fn d() -> usize {
        8
    }
    pub fn k() -> usize {
        2
    }
    pub fn rank() -> usize {
        2
    }
    pub fn layers() -> usize {
        1
    }
    pub fn heads() -> usize {
        1
    }
    pub fn timestep() -> f32 {
        500.0
    }
    pub fn tolerance() -> f64 {
        1e-5
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are complete")
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("cannot parse {}: {e}", path.display())))
    }

    pub fn dim_ff(&self) -> usize {
        4 * self.d
    }

    /// Checks every block invariant and names the violated rule.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let rule = |msg: String| Err(ConfigError(msg));
        if self.t == 0 || self.h == 0 || self.w == 0 || self.d == 0 {
            return rule(format!(
                "all dims must be >= 1, got T={}, H={}, W={}, D={}",
                self.t, self.h, self.w, self.d
            ));
        }
        if self.k < 2 || !self.k.is_multiple_of(2) {
            return rule(format!("K must be even and >= 2, got {}", self.k));
        }
        if !self.h.is_multiple_of(2 * self.k) || !self.w.is_multiple_of(2 * self.k) {
            return rule(format!(
                "H and W must be divisible by 2K = {}, got {}x{}",
                2 * self.k,
                self.h,
                self.w
            ));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return rule(format!(
                "heads must divide D, got heads={} and D={}",
                self.heads, self.d
            ));
        }
        let limit = self.d.min(self.dim_ff()) / 4;
        if self.rank == 0 || self.rank > limit {
            return rule(format!(
                "rank must satisfy 1 <= r <= min(D, D_ff)/4 = {limit}, got {}",
                self.rank
            ));
        }
        if self.layers == 0 {
            return rule("layers must be >= 1, got 0".to_string());
        }
        if !(0.0..=1000.0).contains(&self.timestep) {
            return rule(format!(
                "timestep must lie in [0, 1000], got {}",
                self.timestep
            ));
        }
        if !self.tolerance.is_finite() || self.tolerance < 0.0 {
            return rule(format!(
                "tolerance must be finite and >= 0, got {}",
                self.tolerance
            ));
        }
        Ok(())
    }

    /// The block configuration for one layer of this run.
    pub fn block_config(&self, layer_index: usize) -> Result<BlockConfig, ConfigError> {
        self.validate()?;
        BlockConfig::new(
            self.k,
            self.rank,
            self.d,
            self.dim_ff(),
            self.heads,
            layer_index,
        )
        .map_err(|e| ConfigError(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn violations_name_the_rule() {
        let check = |cfg: RunConfig, needle: &str| {
            let msg = cfg.validate().unwrap_err().to_string();
            assert!(msg.contains(needle), "'{msg}' lacks '{needle}'");
        };
        check(
            RunConfig {
                k: 3,
                ..Default::default()
            },
            "even",
        );
        check(
            RunConfig {
                h: 10,
                ..Default::default()
            },
            "divisible by 2K",
        );
        check(
            RunConfig {
                heads: 3,
                ..Default::default()
            },
            "heads",
        );
        check(
            RunConfig {
                timestep: 2000.0,
                ..Default::default()
            },
            "timestep",
        );
        check(
            RunConfig {
                rank: 9,
                ..Default::default()
            },
            "rank",
        );
    }

    #[test]
    fn json_parsing_with_partial_fields() {
        let cfg: RunConfig = serde_json::from_str(r#"{"h": 16, "w": 16, "k": 4}"#).unwrap();
        assert_eq!(cfg.h, 16);
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.d, 8);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"dff": 3}"#).is_err());
    }
}
