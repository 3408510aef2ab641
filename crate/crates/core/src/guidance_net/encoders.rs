use rand::Rng;

use super::config::NetConfig;
use super::graph::{Graph, Var};
use super::layers::{Conv2d, ConvSpec};
use super::params::{Component, ParamStore};

/// Multi-scale convolutional encoder; each stage is a stride-2 conv, SiLU, then a zero-initialised 1x1 conv.
#[derive(Debug, Clone)]
pub struct MotionBranch {
    pub stages: Vec<(Conv2d, Conv2d)>,
}

impl MotionBranch {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, cfg: &NetConfig) -> Self {
        let mut cin = 2;
        let stages = cfg
            .motion_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = Conv2d::new(
                    store,
                    rng,
                    &format!("{prefix}.stage{i}.conv"),
                    Component::MotionEncoder,
                    ConvSpec::standard(cin, c, 3).stride(2),
                );
                let zero = Conv2d::new(store, rng, &format!("{prefix}.stage{i}.zero"), Component::MotionEncoder, ConvSpec::zero(c, c, 1));
                cin = c;
                (conv, zero)
            })
            .collect();
        MotionBranch { stages }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        self.stages.iter().fold(x, |h, (conv, zero)| {
            let h = conv.forward(g, h);
            let h = g.silu(h);
            zero.forward(g, h)
        })
    }
}

/// Sparse and dense branches of identical structure, summed and fused by one conv
/// (random weights, zero bias), so the output is exactly zero until the zero convs move.
#[derive(Debug, Clone)]
pub struct MotionEncoder {
    pub sparse: MotionBranch,
    pub dense: MotionBranch,
    pub fuse: Conv2d,
}

impl MotionEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &NetConfig) -> Self {
        let last = *cfg.motion_channels.last().expect("validated");
        MotionEncoder {
            sparse: MotionBranch::new(store, rng, "motion.sparse", cfg),
            dense: MotionBranch::new(store, rng, "motion.dense", cfg),
            fuse: Conv2d::new(
                store,
                rng,
                "motion.fuse",
                Component::MotionEncoder,
                ConvSpec::standard(last, cfg.latent_channels, 3).bias(Some(super::params::Init::Zeros)),
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph, sparse: Var, dense: Var) -> Var {
        let s = self.sparse.forward(g, sparse);
        let d = self.dense.forward(g, dense);
        let sum = g.add(s, d);
        self.fuse.forward(g, sum)
    }
}

/// Per-level two-layer per-pixel perceptron `D_p -> hidden -> C_l`, bias-free, with
/// the second layer zero-initialised. Zero input columns always map to zero columns.
#[derive(Debug, Clone)]
pub struct PointEncoder {
    pub levels: Vec<(Conv2d, Conv2d)>,
}

impl PointEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &NetConfig) -> Self {
        let levels = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                let fc1 = Conv2d::new(
                    store,
                    rng,
                    &format!("point.level{l}.fc1"),
                    Component::PointEncoder,
                    ConvSpec::standard(cfg.point_dim, cfg.point_hidden, 1).bias(None),
                );
                let fc2 = Conv2d::new(
                    store,
                    rng,
                    &format!("point.level{l}.fc2"),
                    Component::PointEncoder,
                    ConvSpec::zero(cfg.point_hidden, c, 1).bias(None),
                );
                (fc1, fc2)
            })
            .collect();
        PointEncoder { levels }
    }

    pub fn forward(&self, g: &mut Graph, map: Var, level: usize) -> Var {
        let (fc1, fc2) = &self.levels[level];
        let h = fc1.forward(g, map);
        let h = g.silu(h);
        fc2.forward(g, h)
    }
}
