use std::path::{Path, PathBuf};

use dispose_core::guidance_net::{DatasetConfig, NetConfig, Variant};
use dispose_core::motion_field::{PropagatorParams, DEFAULT_SIGMA};
use dispose_core::{flow_sampling, trajectory, Error, Result};
use serde::{Deserialize, Serialize};

/// Every tunable of a run. Loaded from `--config`, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub poses: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub external_cmp: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub sigma: f64,
    pub beta: f64,
    pub tol: f64,
    pub max_iters: Option<usize>,
    pub conf_threshold: f64,
    pub kf: usize,
    pub edge_threshold: f64,
    /// Correspondence grids as `[height, width]`; empty means full resolution only.
    pub levels: Vec<[usize; 2]>,
    pub feature_dim: usize,
    pub seed: u64,
    pub variant: Variant,
    pub steps: usize,
    pub batch_size: usize,
    pub net: NetConfig,
    pub dataset: DatasetConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let prop = PropagatorParams::default();
        RunConfig {
            poses: None,
            flow: None,
            features: None,
            reference: None,
            external_cmp: None,
            out_dir: PathBuf::from("out"),
            sigma: DEFAULT_SIGMA,
            beta: prop.beta,
            tol: prop.tol,
            max_iters: None,
            conf_threshold: trajectory::DEFAULT_CONF_THRESHOLD,
            kf: flow_sampling::DEFAULT_KERNEL,
            edge_threshold: flow_sampling::DEFAULT_EDGE_THRESHOLD,
            levels: Vec::new(),
            feature_dim: 8,
            seed: 0,
            variant: Variant::Full,
            steps: 200,
            batch_size: 4,
            net: NetConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            field: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(self.beta > 0.0) || !(self.tol > 0.0) {
            return bad(format!("beta and tol must be > 0, got {} and {}", self.beta, self.tol));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return bad(format!("conf_threshold must lie in [0, 1], got {}", self.conf_threshold));
        }
        if self.kf < 3 || self.kf.is_multiple_of(2) {
            return bad(format!("kf must be odd and >= 3, got {}", self.kf));
        }
        if !(self.edge_threshold >= 0.0) {
            return bad(format!("edge_threshold must be >= 0, got {}", self.edge_threshold));
        }
        if self.feature_dim == 0 || self.batch_size == 0 {
            return bad("feature_dim and batch_size must be positive".into());
        }
        if self.levels.iter().any(|[h, w]| *h == 0 || *w == 0) {
            return bad("levels must be non-empty grids".into());
        }
        self.net.validate()
    }

    pub fn propagator(&self) -> PropagatorParams {
        PropagatorParams {
            beta: self.beta,
            tol: self.tol,
            max_iters: self.max_iters,
            ..PropagatorParams::default()
        }
    }
}

/// Parses `HxW` (height by width).
pub fn parse_level(s: &str) -> std::result::Result<[usize; 2], String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok([p(h)?, p(w)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"sigma": 2.0, "variant": "exp1", "net": {"image_height": 32, "image_width": 32}}"#).unwrap();
        assert_eq!(c.sigma, 2.0);
        assert_eq!(c.variant, Variant::Exp1);
        assert_eq!(c.net.image_height, 32);
        assert_eq!(c.kf, 5);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sigmaa": 2.0}"#).is_err());
    }

    #[test]
    fn validation() {
        let c = RunConfig {
            kf: 4,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn level_syntax() {
        assert_eq!(parse_level("8x16").unwrap(), [8, 16]);
        assert!(parse_level("8").is_err());
    }
}
