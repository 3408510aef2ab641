use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Component, Init, ParamId, ParamStore};
use super::tensor::Tensor;

/// Square-kernel 2-D convolution; also serves as a per-pixel linear layer when `k = 1`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight_init: Init,
    /// `None` for a bias-free layer.
    pub bias_init: Option<Init>,
}

impl ConvSpec {
    /// Random weights scaled by fan-in, small random bias.
    pub fn standard(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            weight_init: Init::Normal(fan_in.sqrt().recip()),
            bias_init: Some(Init::Normal(0.05)),
        }
    }

    /// All-zero weights and bias.
    pub fn zero(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            weight_init: Init::Zeros,
            bias_init: Some(Init::Zeros),
            ..Self::standard(in_channels, out_channels, kernel)
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn bias(mut self, init: Option<Init>) -> Self {
        self.bias_init = init;
        self
    }
}

impl Conv2d {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, component: Component, spec: ConvSpec) -> Self {
        let k = spec.kernel;
        let weight = store.add(
            format!("{name}.weight"),
            component,
            spec.weight_init.tensor([spec.out_channels, spec.in_channels, k, k], rng),
        );
        let bias = spec
            .bias_init
            .map(|init| store.add(format!("{name}.bias"), component, init.tensor([1, spec.out_channels, 1, 1], rng)));
        Conv2d {
            weight,
            bias,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            kernel: k,
            stride: spec.stride,
        }
    }

    /// Registers a copy of this layer's current values under a new name and component.
    pub fn duplicate(&self, store: &mut ParamStore, name: &str, component: Component) -> Self {
        let w = store.get(self.weight).clone();
        let weight = store.add(format!("{name}.weight"), component, w);
        let bias = self.bias.map(|b| {
            let v = store.get(b).clone();
            store.add(format!("{name}.bias"), component, v)
        });
        Conv2d {
            weight,
            bias,
            ..self.clone()
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.kernel / 2)
    }
}

/// `x + conv2(silu(conv1(silu(x)) + proj(temb)))`
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub temb_proj: Conv2d,
}

impl ResBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, component: Component, channels: usize, temb_dim: usize) -> Self {
        ResBlock {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), component, ConvSpec::standard(channels, channels, 3)),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), component, ConvSpec::standard(channels, channels, 3)),
            temb_proj: Conv2d::new(store, rng, &format!("{name}.temb_proj"), component, ConvSpec::standard(temb_dim, channels, 1)),
        }
    }

    pub fn duplicate(&self, store: &mut ParamStore, name: &str, component: Component) -> Self {
        ResBlock {
            conv1: self.conv1.duplicate(store, &format!("{name}.conv1"), component),
            conv2: self.conv2.duplicate(store, &format!("{name}.conv2"), component),
            temb_proj: self.temb_proj.duplicate(store, &format!("{name}.temb_proj"), component),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, temb: Var) -> Var {
        let h = g.silu(x);
        let h = self.conv1.forward(g, h);
        let t = self.temb_proj.forward(g, temb);
        let h = g.add_broadcast(h, t);
        let h = g.silu(h);
        let h = self.conv2.forward(g, h);
        g.add(x, h)
    }
}

/// Sinusoidal timestep features followed by a two-layer MLP, plus a learned
/// null conditioning vector standing in for a text embedding.
#[derive(Debug, Clone)]
pub struct TimeEmbedding {
    pub freq_dim: usize,
    pub lin1: Conv2d,
    pub lin2: Conv2d,
    pub null_cond: ParamId,
}

impl TimeEmbedding {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, component: Component, freq_dim: usize, dim: usize) -> Self {
        TimeEmbedding {
            freq_dim,
            lin1: Conv2d::new(store, rng, &format!("{name}.lin1"), component, ConvSpec::standard(freq_dim, dim, 1)),
            lin2: Conv2d::new(store, rng, &format!("{name}.lin2"), component, ConvSpec::standard(dim, dim, 1)),
            null_cond: store.add(format!("{name}.null_cond"), component, Init::Normal(0.1).tensor([1, dim, 1, 1], rng)),
        }
    }

    pub fn duplicate(&self, store: &mut ParamStore, name: &str, component: Component) -> Self {
        let nc = store.get(self.null_cond).clone();
        TimeEmbedding {
            freq_dim: self.freq_dim,
            lin1: self.lin1.duplicate(store, &format!("{name}.lin1"), component),
            lin2: self.lin2.duplicate(store, &format!("{name}.lin2"), component),
            null_cond: store.add(format!("{name}.null_cond"), component, nc),
        }
    }

    /// `batch x freq_dim x 1 x 1` sinusoidal features of integer timesteps.
    pub fn sinusoid(&self, timesteps: &[usize]) -> Tensor {
        let half = self.freq_dim / 2;
        let mut t = Tensor::zeros([timesteps.len(), self.freq_dim, 1, 1]);
        for (b, step) in timesteps.iter().enumerate() {
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
                let arg = *step as f64 * freq;
                let (si, ci) = (t.index(b, i, 0, 0), t.index(b, half + i, 0, 0));
                t.data_mut()[si] = arg.sin();
                t.data_mut()[ci] = arg.cos();
            }
        }
        t
    }

    pub fn forward(&self, g: &mut Graph, timesteps: &[usize]) -> Var {
        let s = g.input(self.sinusoid(timesteps));
        let h = self.lin1.forward(g, s);
        let h = g.silu(h);
        let h = self.lin2.forward(g, h);
        let nc = g.param(self.null_cond);
        g.add_broadcast(h, nc)
    }
}
