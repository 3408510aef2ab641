use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::tensor::Tensor;

/// Which sub-network a parameter belongs to. Only the base denoiser is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Base,
    MotionEncoder,
    PointEncoder,
    ControlNet,
}

impl Component {
    pub const TRAINABLE: [Component; 3] = [Component::MotionEncoder, Component::PointEncoder, Component::ControlNet];

    pub fn is_trainable(self) -> bool {
        self != Component::Base
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Base => "base",
            Component::MotionEncoder => "motion_encoder",
            Component::PointEncoder => "point_encoder",
            Component::ControlNet => "controlnet",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub component: Component,
    pub value: Tensor,
}

/// Flat registry of every parameter in a pipeline.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, component: Component, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            component,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_of(&self, component: Component) -> Vec<ParamId> {
        self.ids().filter(|id| self.entries[id.0].component == component).collect()
    }

    pub fn scalar_count(&self, component: Component) -> usize {
        self.entries
            .iter()
            .filter(|e| e.component == component)
            .map(|e| e.value.len())
            .sum()
    }

    /// SHA-256 over the names and exact bit patterns of one component's parameters.
    pub fn checksum(&self, component: Component) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| e.component == component) {
            h.update(e.name.as_bytes());
            for v in e.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Weight initialisation for a new parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Gaussian with the given standard deviation.
    Normal(f64),
}

impl Init {
    pub fn tensor<R: Rng>(self, shape: [usize; 4], rng: &mut R) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                let n = shape.iter().product();
                Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("sized")
            }
        }
    }
}
