use super::config::NetConfig;
use super::denoiser::{ResidualVars, ToyDenoiser, UNetEncoder};
use super::graph::{Graph, Var};
use super::layers::{Conv2d, ConvSpec};
use super::params::{Component, ParamStore};

/// Trainable copy of the denoiser's down path whose per-level and middle activations
/// pass through zero-initialised 1x1 convs to become decoder residuals.
#[derive(Debug, Clone)]
pub struct HybridControlNet {
    pub encoder: UNetEncoder,
    pub level_zero: Vec<Conv2d>,
    pub mid_zero: Conv2d,
}

impl HybridControlNet {
    /// Copies the base encoder's current weights.
    pub fn from_denoiser<R: rand::Rng>(store: &mut ParamStore, rng: &mut R, base: &ToyDenoiser, cfg: &NetConfig) -> Self {
        let encoder = base.encoder.duplicate(store, "controlnet.enc", Component::ControlNet);
        let level_zero = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(l, &c)| Conv2d::new(store, rng, &format!("controlnet.zero{l}"), Component::ControlNet, ConvSpec::zero(c, c, 1)))
            .collect();
        let last = *cfg.channels.last().expect("validated");
        let mid_zero = Conv2d::new(store, rng, "controlnet.zero_mid", Component::ControlNet, ConvSpec::zero(last, last, 1));
        HybridControlNet {
            encoder,
            level_zero,
            mid_zero,
        }
    }

    /// `x` is the (possibly motion-augmented) noisy latent; `level_add` injects point features per level.
    pub fn forward(&self, g: &mut Graph, x: Var, timesteps: &[usize], level_add: &[Option<Var>]) -> ResidualVars {
        let enc = self.encoder.forward(g, x, timesteps, level_add);
        let levels = enc
            .skips
            .iter()
            .zip(&self.level_zero)
            .map(|(s, z)| z.forward(g, *s))
            .collect();
        let mid = self.mid_zero.forward(g, enc.mid);
        ResidualVars { mid, levels }
    }
}
