use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::SyntheticDataset;
use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::pipeline::{flow_tensor, GuidanceInputs, GuidancePipeline};
use super::schedule::{forward_diffuse, NoiseSchedule};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Fixed batches scored before and after training.
    pub eval_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 4,
            lr: 1e-3,
            momentum: 0.9,
            seed: 0,
            eval_batches: 4,
        }
    }
}

/// Stochastic gradient descent with heavy-ball momentum; frozen parameters are skipped.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// `v = momentum * v + g; theta -= lr * v`
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if !store.entry(id).component.is_trainable() {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let v = self.velocity[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.momentum * *vi + gi;
            }
            let lr = self.lr;
            for (p, vi) in store.get_mut(id).data_mut().iter_mut().zip(v.data()) {
                *p -= lr * vi;
            }
        }
    }
}

/// Inputs plus the noise they were built with.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub inputs: GuidanceInputs,
    pub eps: Tensor,
}

/// Draws `batch_size` samples with replacement, a uniform timestep and standard
/// normal noise for each.
pub fn sample_batch<R: Rng>(
    dataset: &SyntheticDataset,
    schedule: &NoiseSchedule,
    batch_size: usize,
    rng: &mut R,
) -> Result<TrainBatch> {
    if dataset.is_empty() || batch_size == 0 {
        return Err(Error::Config("empty dataset or zero batch size".into()));
    }
    let mut z = Vec::with_capacity(batch_size);
    let mut eps_all = Vec::with_capacity(batch_size);
    let mut timesteps = Vec::with_capacity(batch_size);
    let mut sparse = Vec::with_capacity(batch_size);
    let mut dense = Vec::with_capacity(batch_size);
    let levels = dataset.samples[0].points.len();
    let mut points: Vec<Vec<Tensor>> = vec![Vec::with_capacity(batch_size); levels];
    for _ in 0..batch_size {
        let s = &dataset.samples[rng.random_range(0..dataset.len())];
        let t = rng.random_range(1..=schedule.steps());
        let eps = Tensor::from_vec(s.z0.shape(), (0..s.z0.len()).map(|_| StandardNormal.sample(rng)).collect())?;
        z.push(forward_diffuse(&s.z0, t, &eps, schedule)?);
        eps_all.push(eps);
        timesteps.push(t);
        sparse.push(&s.sparse);
        dense.push(&s.dense);
        for (l, p) in s.points.iter().enumerate() {
            points[l].push(p.clone());
        }
    }
    Ok(TrainBatch {
        inputs: GuidanceInputs {
            z_t: Tensor::stack(&z)?,
            timesteps,
            sparse: flow_tensor(&sparse)?,
            dense: flow_tensor(&dense)?,
            points: points.iter().map(|p| Tensor::stack(p)).collect::<Result<_>>()?,
        },
        eps: Tensor::stack(&eps_all)?,
    })
}

/// One optimisation step; returns the loss before the update.
pub fn training_step(pipeline: &mut GuidancePipeline, batch: &TrainBatch, opt: &mut Sgd, step: usize) -> Result<f64> {
    let (loss, grads) = pipeline.loss_and_grads(&batch.inputs, &batch.eps)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!(
                "loss {loss}; max |z_t| {:.3e}, max |eps| {:.3e}",
                batch.inputs.z_t.max_abs(),
                batch.eps.max_abs()
            ),
        });
    }
    opt.step(pipeline.store_mut(), &grads);
    Ok(loss)
}

/// Per-step training losses and held-out losses on fixed evaluation batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub eval_before: f64,
    pub eval_after: f64,
}

fn eval_loss(pipeline: &GuidancePipeline, batches: &[TrainBatch]) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        total += pipeline.loss(&b.inputs, &b.eps)?;
    }
    Ok(total / batches.len().max(1) as f64)
}

/// Seeded training run. Batches, timesteps and noise all come from one ChaCha stream,
/// so equal seeds give bit-identical trajectories.
pub fn train(pipeline: &mut GuidancePipeline, dataset: &SyntheticDataset, tcfg: &TrainConfig) -> Result<TrainReport> {
    let schedule = NoiseSchedule::default();
    let mut eval_rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5eed_e7a1);
    let eval: Vec<TrainBatch> = (0..tcfg.eval_batches)
        .map(|_| sample_batch(dataset, &schedule, tcfg.batch_size, &mut eval_rng))
        .collect::<Result<_>>()?;
    let eval_before = eval_loss(pipeline, &eval)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut opt = Sgd::new(tcfg.lr, tcfg.momentum);
    let mut losses = Vec::with_capacity(tcfg.steps);
    for step in 0..tcfg.steps {
        let batch = sample_batch(dataset, &schedule, tcfg.batch_size, &mut rng)?;
        let loss = training_step(pipeline, &batch, &mut opt, step)?;
        log::debug!("step {step} loss {loss:.6}");
        losses.push(loss);
    }
    let eval_after = eval_loss(pipeline, &eval)?;
    Ok(TrainReport {
        losses,
        eval_before,
        eval_after,
    })
}

/// `step,loss` rows with a header.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l:.17e}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance_net::params::Component;
    use crate::guidance_net::{build_dataset, DatasetConfig, NetConfig, Variant};

    fn tiny_setup(variant: Variant) -> (GuidancePipeline, SyntheticDataset) {
        let p = GuidancePipeline::new(NetConfig::tiny(), variant, 3).unwrap();
        let ds = build_dataset(
            &p,
            &DatasetConfig {
                clips: 2,
                frames_per_clip: 3,
                keypoints: 4,
                ..DatasetConfig::default()
            },
        )
        .unwrap();
        (p, ds)
    }

    #[test]
    fn mse_of_exact_prediction_is_zero() {
        let (p, ds) = tiny_setup(Variant::Full);
        let b = sample_batch(&ds, &NoiseSchedule::default(), 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let eps_hat = p.predict(&b.inputs).unwrap();
        assert_eq!(p.loss(&b.inputs, &eps_hat).unwrap(), 0.0);
    }

    #[test]
    fn base_frozen_and_trainables_move() {
        for v in Variant::ALL {
            let (mut p, ds) = tiny_setup(v);
            let base = p.store().checksum(Component::Base);
            let before: Vec<String> = p.trainable_components().iter().map(|c| p.store().checksum(*c)).collect();
            let cfg = TrainConfig {
                steps: 10,
                batch_size: 2,
                eval_batches: 1,
                ..TrainConfig::default()
            };
            train(&mut p, &ds, &cfg).unwrap();
            assert_eq!(p.store().checksum(Component::Base), base, "{v}");
            let after: Vec<String> = p.trainable_components().iter().map(|c| p.store().checksum(*c)).collect();
            for (b, a) in before.iter().zip(&after) {
                assert_ne!(a, b, "{v}");
            }
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 2,
            eval_batches: 1,
            ..TrainConfig::default()
        };
        let (mut a, ds) = tiny_setup(Variant::Full);
        let (mut b, _) = tiny_setup(Variant::Full);
        let ra = train(&mut a, &ds, &cfg).unwrap();
        let rb = train(&mut b, &ds, &cfg).unwrap();
        assert_eq!(loss_csv(&ra.losses), loss_csv(&rb.losses));
        assert!(ra.losses.iter().zip(&rb.losses).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.store().checksum(Component::ControlNet), b.store().checksum(Component::ControlNet));
    }

    #[test]
    fn nan_loss_aborts() {
        let (mut p, ds) = tiny_setup(Variant::Full);
        let mut b = sample_batch(&ds, &NoiseSchedule::default(), 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        b.eps.data_mut()[0] = f64::NAN;
        let err = training_step(&mut p, &b, &mut Sgd::new(1e-3, 0.9), 4).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 4, .. }));
    }

    #[test]
    fn point_support_preserved_after_training() {
        let (mut p, ds) = tiny_setup(Variant::Full);
        let cfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            eval_batches: 1,
            ..TrainConfig::default()
        };
        train(&mut p, &ds, &cfg).unwrap();
        let c = p.config().clone();
        let (h, w) = c.level_dims(0);
        let mut map = Tensor::zeros([1, c.point_dim, h, w]);
        let i = map.index(0, 0, 1, 1);
        map.data_mut()[i] = 2.0;
        let out = p.point_encode_level(&map, 0).unwrap();
        for y in 0..h {
            for x in 0..w {
                let nz = (0..c.channels[0]).any(|ch| out.at(0, ch, y, x) != 0.0);
                assert_eq!(nz, (x, y) == (1, 1));
            }
        }
    }

    #[test]
    fn csv_format() {
        assert_eq!(loss_csv(&[0.5]), "step,loss\n0,5.00000000000000000e-1\n");
    }
}
