use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph};
use super::layers::{Conv2d, ConvSpec};
use super::params::{Component, ParamId, ParamStore};
use super::pipeline::GuidancePipeline;
use super::train::TrainBatch;
use crate::{Error, Result};

/// Denominator floor in the relative error, so that two tiny gradients agreeing to
/// within round-off do not register as a large relative disagreement.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes.iter().max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }
}

/// Compares analytic gradients against central differences at `probe_count`
/// scalars drawn without replacement from `ids` (all of them if fewer exist).
/// `loss` must be a pure function of the store.
pub fn gradcheck_params(
    store: &mut ParamStore,
    ids: &[ParamId],
    probe_count: usize,
    h: f64,
    seed: u64,
    loss: impl Fn(&ParamStore) -> Result<(f64, Gradients)>,
) -> Result<GradcheckReport> {
    if !(h > 0.0) {
        return Err(Error::Param(format!("step h must be > 0, got {h}")));
    }
    let sizes: Vec<usize> = ids.iter().map(|id| store.get(*id).len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Param("no parameters to probe".into()));
    }
    let (_, grads) = loss(store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat: Vec<usize> = sample(&mut rng, total, probe_count.min(total)).into_vec();
    flat.sort_unstable();
    let mut probes = Vec::with_capacity(flat.len());
    for f in flat {
        let (mut slot, mut index) = (0, f);
        while index >= sizes[slot] {
            index -= sizes[slot];
            slot += 1;
        }
        let id = ids[slot];
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[index]);
        let orig = store.get(id).data()[index];
        store.get_mut(id).data_mut()[index] = orig + h;
        let plus = loss(store)?.0;
        store.get_mut(id).data_mut()[index] = orig - h;
        let minus = loss(store)?.0;
        store.get_mut(id).data_mut()[index] = orig;
        probes.push(Probe {
            param: store.entry(id).name.clone(),
            index,
            analytic,
            numeric: (plus - minus) / (2.0 * h),
        });
    }
    let max_rel_error = probes.iter().map(Probe::rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { probes, max_rel_error })
}

/// Gradient check of the pipeline's noise-prediction loss with respect to one component.
pub fn finite_diff_gradcheck(
    pipeline: &mut GuidancePipeline,
    batch: &TrainBatch,
    component: Component,
    probe_count: usize,
    h: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    let ids = pipeline.store().ids_of(component);
    if ids.is_empty() {
        return Err(Error::Param(format!("component {component} has no parameters")));
    }
    let snapshot = pipeline.clone();
    let mut store = pipeline.store().clone();
    let report = gradcheck_params(&mut store, &ids, probe_count, h, seed, |s| {
        let mut p = snapshot.clone();
        *p.store_mut() = s.clone();
        p.loss_and_grads(&batch.inputs, &batch.eps)
    })?;
    Ok(report)
}

/// A single per-pixel linear layer under a quadratic loss.
pub fn linear_layer_gradcheck(probe_count: usize, h: f64, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = Conv2d::new(&mut store, &mut rng, "linear", Component::ControlNet, ConvSpec::standard(5, 3, 1));
    let x = super::params::Init::Normal(1.0).tensor([2, 5, 3, 3], &mut rng);
    let y = super::params::Init::Normal(1.0).tensor([2, 3, 3, 3], &mut rng);
    let ids: Vec<_> = store.ids().collect();
    gradcheck_params(&mut store, &ids, probe_count, h, seed, |s| {
        let mut g = Graph::new(s);
        let xv = g.input(x.clone());
        let out = layer.forward(&mut g, xv);
        let yv = g.input(y.clone());
        let l = g.mse(out, yv);
        Ok((g.value(l).data()[0], g.backward(l)))
    })
}
