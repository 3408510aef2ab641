use rand::Rng;

use super::config::NetConfig;
use super::graph::{Graph, Var};
use super::layers::{Conv2d, ConvSpec, ResBlock, TimeEmbedding};
use super::params::{Component, ParamStore};

/// Down path shared by the denoiser and its ControlNet copy:
/// `conv_in`, one residual block per level (stride-2 convs between levels), middle block.
#[derive(Debug, Clone)]
pub struct UNetEncoder {
    pub time: TimeEmbedding,
    pub conv_in: Conv2d,
    pub blocks: Vec<ResBlock>,
    pub downs: Vec<Conv2d>,
    pub mid: ResBlock,
}

/// Intermediate activations of a down pass.
pub struct EncoderOutput {
    pub temb: Var,
    /// Output of each level's block, finest first.
    pub skips: Vec<Var>,
    pub mid: Var,
}

impl UNetEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, component: Component, cfg: &NetConfig) -> Self {
        let ch = &cfg.channels;
        let time = TimeEmbedding::new(store, rng, &format!("{prefix}.time"), component, cfg.freq_dim, cfg.temb_dim);
        let conv_in = Conv2d::new(store, rng, &format!("{prefix}.conv_in"), component, ConvSpec::standard(cfg.latent_channels, ch[0], 3));
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        for l in 0..ch.len() {
            blocks.push(ResBlock::new(store, rng, &format!("{prefix}.down{l}"), component, ch[l], cfg.temb_dim));
            if l + 1 < ch.len() {
                downs.push(Conv2d::new(
                    store,
                    rng,
                    &format!("{prefix}.downsample{l}"),
                    component,
                    ConvSpec::standard(ch[l], ch[l + 1], 3).stride(2),
                ));
            }
        }
        let mid = ResBlock::new(store, rng, &format!("{prefix}.mid"), component, *ch.last().unwrap(), cfg.temb_dim);
        UNetEncoder {
            time,
            conv_in,
            blocks,
            downs,
            mid,
        }
    }

    pub fn duplicate(&self, store: &mut ParamStore, prefix: &str, component: Component) -> Self {
        UNetEncoder {
            time: self.time.duplicate(store, &format!("{prefix}.time"), component),
            conv_in: self.conv_in.duplicate(store, &format!("{prefix}.conv_in"), component),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(l, b)| b.duplicate(store, &format!("{prefix}.down{l}"), component))
                .collect(),
            downs: self
                .downs
                .iter()
                .enumerate()
                .map(|(l, d)| d.duplicate(store, &format!("{prefix}.downsample{l}"), component))
                .collect(),
            mid: self.mid.duplicate(store, &format!("{prefix}.mid"), component),
        }
    }

    pub fn levels(&self) -> usize {
        self.blocks.len()
    }

    /// `level_add[l]`, when present, is added to the input of level `l`'s block.
    pub fn forward(&self, g: &mut Graph, x: Var, timesteps: &[usize], level_add: &[Option<Var>]) -> EncoderOutput {
        let temb = self.time.forward(g, timesteps);
        let mut h = self.conv_in.forward(g, x);
        let mut skips = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            if let Some(Some(a)) = level_add.get(l) {
                h = g.add(h, *a);
            }
            h = block.forward(g, h, temb);
            skips.push(h);
            if let Some(down) = self.downs.get(l) {
                h = down.forward(g, h);
            }
        }
        let mid = self.mid.forward(g, h, temb);
        EncoderOutput { temb, skips, mid }
    }
}

/// Residuals added to the denoiser's decoder: one at the middle block output and
/// one at the input of each up level (indexed finest first).
pub struct ResidualVars {
    pub mid: Var,
    pub levels: Vec<Var>,
}

/// Up path: per level (coarsest first) upsample + conv, add skip, residual block; then output conv.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub ups: Vec<Conv2d>,
    pub blocks: Vec<ResBlock>,
    pub conv_out: Conv2d,
}

impl Decoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, component: Component, cfg: &NetConfig) -> Self {
        let ch = &cfg.channels;
        let mut ups = Vec::new();
        let mut blocks = Vec::new();
        for l in 0..ch.len() {
            if l + 1 < ch.len() {
                ups.push(Conv2d::new(store, rng, &format!("{prefix}.upsample{l}"), component, ConvSpec::standard(ch[l + 1], ch[l], 3)));
            }
            blocks.push(ResBlock::new(store, rng, &format!("{prefix}.up{l}"), component, ch[l], cfg.temb_dim));
        }
        let conv_out = Conv2d::new(store, rng, &format!("{prefix}.conv_out"), component, ConvSpec::standard(ch[0], cfg.latent_channels, 3));
        Decoder { ups, blocks, conv_out }
    }

    pub fn forward(&self, g: &mut Graph, enc: &EncoderOutput, residuals: Option<&ResidualVars>) -> Var {
        let mut h = enc.mid;
        if let Some(r) = residuals {
            h = g.add(h, r.mid);
        }
        for l in (0..self.blocks.len()).rev() {
            if let Some(up) = self.ups.get(l) {
                let u = g.upsample2(h);
                h = up.forward(g, u);
            }
            h = g.add(h, enc.skips[l]);
            if let Some(r) = residuals {
                h = g.add(h, r.levels[l]);
            }
            h = self.blocks[l].forward(g, h, enc.temb);
        }
        let h = g.silu(h);
        self.conv_out.forward(g, h)
    }
}

/// Frozen stand-in for a pretrained noise-prediction U-Net.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    pub encoder: UNetEncoder,
    pub decoder: Decoder,
}

impl ToyDenoiser {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &NetConfig) -> Self {
        ToyDenoiser {
            encoder: UNetEncoder::new(store, rng, "denoiser.enc", Component::Base, cfg),
            decoder: Decoder::new(store, rng, "denoiser.dec", Component::Base, cfg),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        z: Var,
        timesteps: &[usize],
        level_add: &[Option<Var>],
        residuals: Option<&ResidualVars>,
    ) -> (Var, EncoderOutput) {
        let enc = self.encoder.forward(g, z, timesteps, level_add);
        let out = self.decoder.forward(g, &enc, residuals);
        (out, enc)
    }
}
