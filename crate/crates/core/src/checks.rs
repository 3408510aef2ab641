//! Built-in invariant suite, run by `dispose check`.
//!
//! Every check draws small seeded instances, so a run is deterministic and takes
//! a few seconds. Each result carries a witness string describing the worst case seen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correspondence::{
    build_correspondence_map, extract_point_embeddings, rescale_correspondence, retrieve_point, FeatureMap,
    FeatureProvider, SyntheticProvider,
};
use crate::flow_sampling::{nms_peaks, watershed_distance_map, EdgeMask};
use crate::guidance_net::{
    build_dataset, finite_diff_gradcheck, load_checkpoint, sample_batch, save_checkpoint, train, Component,
    DatasetConfig, GuidanceInputs, GuidancePipeline, Init, NetConfig, NoiseSchedule, TrainConfig, Variant,
};
use crate::motion_field::{propagate_dense, FlowSample, PropagatorParams, ReferenceImage, SparseFlow};
use crate::pose_io::{flow_to_image, read_flo, write_flo, FlowField};
use crate::trajectory::{reference_displacements, track_matrix, TrajectoryMap};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub witness: String,
}

pub const MODULES: [&str; 6] = [
    "pose_io",
    "trajectory",
    "motion_field",
    "flow_sampling",
    "correspondence",
    "guidance_net",
];

fn run(module: &'static str, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let (passed, witness) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        module,
        name,
        passed,
        witness,
    }
}

/// Runs one module's checks, or every module's for `"all"`.
pub fn run_suite(suite: &str) -> Result<Vec<CheckResult>> {
    if suite == "all" {
        let mut out = Vec::new();
        for m in MODULES {
            out.extend(run_suite(m)?);
        }
        return Ok(out);
    }
    Ok(match suite {
        "pose_io" => vec![
            run("pose_io", "flo_round_trip_bit_exact", flo_round_trip),
            run("pose_io", "zero_field_renders_white", zero_field_white),
        ],
        "trajectory" => vec![run("trajectory", "track_sum_telescopes", telescoping)],
        "motion_field" => vec![run("motion_field", "propagation_keeps_constraints_and_bounds", propagation_bounds)],
        "flow_sampling" => vec![
            run("flow_sampling", "distance_map_matches_brute_force", edt_oracle),
            run("flow_sampling", "nms_count_non_increasing_no_border", nms_monotone),
        ],
        "correspondence" => vec![
            run("correspondence", "self_retrieval_exact", self_retrieval),
            run("correspondence", "columns_copy_embeddings", columns_copy),
        ],
        "guidance_net" => vec![
            run("guidance_net", "transparency_at_init", transparency),
            run("guidance_net", "base_frozen_under_training", freezing),
            run("guidance_net", "gradients_match_central_differences", gradients),
            run("guidance_net", "diffused_variance_tends_to_one", diffusion_variance),
            run("guidance_net", "checkpoint_round_trip_bit_exact", checkpoint_round_trip),
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown suite {other:?} (expected all or one of {})",
                MODULES.join(", ")
            )))
        }
    })
}

fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FlowField {
    FlowField::from_planes(
        w,
        h,
        (0..w * h).map(|_| rng.random_range(-50.0..50.0)).collect(),
        (0..w * h).map(|_| rng.random_range(-50.0..50.0)).collect(),
    )
    .expect("finite")
}

fn flo_round_trip() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..20 {
        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let f = random_field(&mut rng, w, h);
        let f = FlowField::from_fn(f.width(), f.height(), |x, y| {
            let (u, v) = f.get(x, y);
            (u as f32 as f64, v as f32 as f64)
        });
        let mut a = Vec::new();
        write_flo(&f, &mut a).map_err(|e| Error::io("<memory>", e))?;
        let g = read_flo(a.as_slice(), std::path::Path::new("<memory>"))?;
        let mut b = Vec::new();
        write_flo(&g, &mut b).map_err(|e| Error::io("<memory>", e))?;
        if a != b || f != g {
            return Ok((false, format!("instance {i} ({}x{}) differs", f.width(), f.height())));
        }
    }
    Ok((true, "20 fields".into()))
}

fn zero_field_white() -> Result<(bool, String)> {
    let img = flow_to_image(&FlowField::zeros(7, 5));
    let ok = img.pixels().all(|p| p.0 == [255, 255, 255]);
    Ok((ok, format!("first pixel {:?}", img.get_pixel(0, 0).0)))
}

fn telescoping() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (k, n) = (rng.random_range(1..=32), rng.random_range(1..=64));
        let pts = (0..=n)
            .map(|_| (0..k).map(|_| (rng.random_range(-10.0..100.0), rng.random_range(-10.0..100.0))).collect())
            .collect();
        let traj = TrajectoryMap::from_points(90, 90, pts)?;
        let (tm, rd) = (track_matrix(&traj), reference_displacements(&traj));
        for kk in 0..k {
            let (mut su, mut sv) = (0.0, 0.0);
            for f in 1..=n {
                let (u, v) = tm.raw(f, kk);
                su += u;
                sv += v;
                let (ru, rv) = rd.raw(f, kk);
                worst = worst.max((su - ru).abs()).max((sv - rv).abs());
            }
        }
    }
    Ok((worst <= 1e-6, format!("max deviation {worst:.3e} px")))
}

fn propagation_bounds() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10 {
        let img = ReferenceImage::new(16, 16, (0..256).map(|_| [rng.random(), rng.random(), rng.random()]).collect())?;
        let mut taken = std::collections::HashSet::new();
        let mut samples = Vec::new();
        for _ in 0..rng.random_range(1..12) {
            let (x, y) = (rng.random_range(0..16), rng.random_range(0..16));
            if taken.insert((x, y)) {
                samples.push(FlowSample {
                    x,
                    y,
                    u: rng.random_range(-5.0..5.0),
                    v: rng.random_range(-5.0..5.0),
                });
            }
        }
        let c = SparseFlow::new(16, 16, samples.clone())?;
        let (f, _) = propagate_dense(&img, &c, &PropagatorParams::default())?;
        let bound = |sel: fn(&FlowSample) -> f64| {
            samples.iter().map(sel).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
        };
        let (ul, uh) = bound(|s| s.u);
        let (vl, vh) = bound(|s| s.v);
        for s in &samples {
            if f.get(s.x, s.y) != (s.u, s.v) {
                return Ok((false, format!("instance {i}: constraint at ({}, {}) moved", s.x, s.y)));
            }
        }
        if f.u().iter().any(|u| *u < ul || *u > uh) || f.v().iter().any(|v| *v < vl || *v > vh) {
            return Ok((false, format!("instance {i}: value outside constraint range")));
        }
    }
    Ok((true, "10 instances".into()))
}

fn random_edges(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> Result<EdgeMask> {
    EdgeMask::new(w, h, (0..w * h).map(|_| rng.random_bool(p)).collect())
}

fn edt_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..5 {
        let (w, h) = (20, 16);
        let mask = random_edges(&mut rng, w, h, 0.05)?;
        let d = watershed_distance_map(&mask);
        let edges: Vec<(i64, i64)> = (0..w * h)
            .filter(|p| mask.edges[*p])
            .map(|p| ((p % w) as i64, (p / w) as i64))
            .collect();
        for y in 0..h {
            for x in 0..w {
                let expect = if edges.is_empty() {
                    x.min(y).min(w - 1 - x).min(h - 1 - y) as f64
                } else {
                    let m = edges
                        .iter()
                        .map(|(ex, ey)| (ex - x as i64).pow(2) + (ey - y as i64).pow(2))
                        .min()
                        .expect("non-empty");
                    (m as f64).sqrt()
                };
                if d.get(x, y) != expect {
                    return Ok((false, format!("instance {i}: ({x}, {y}) got {} expected {expect}", d.get(x, y))));
                }
            }
        }
    }
    Ok((true, "5 random masks, exact".into()))
}

fn nms_monotone() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..5 {
        let mask = random_edges(&mut rng, 32, 32, 0.04)?;
        let d = watershed_distance_map(&mask);
        let mut prev = usize::MAX;
        for k in [3, 5, 7, 9] {
            let peaks = nms_peaks(&d, k)?;
            if peaks.iter().any(|&(x, y)| x == 0 || y == 0 || x == 31 || y == 31) {
                return Ok((false, format!("instance {i}: border sample at K={k}")));
            }
            if peaks.len() > prev {
                return Ok((false, format!("instance {i}: count rose to {} at K={k}", peaks.len())));
            }
            prev = peaks.len();
        }
    }
    Ok((true, "5 maps, K in 3,5,7,9".into()))
}

fn self_retrieval() -> Result<(bool, String)> {
    let img = ReferenceImage::uniform(24, 20, [0.0; 3]);
    let f = SyntheticProvider { dp: 6, seed: 9 }.features(&img)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let q = (rng.random_range(0..24), rng.random_range(0..20));
        let got = retrieve_point(&f, q, &f)?;
        if got != q {
            return Ok((false, format!("query {q:?} retrieved {got:?}")));
        }
    }
    Ok((true, "30 queries".into()))
}

fn columns_copy() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts: Vec<Vec<(f64, f64)>> = (0..4)
        .map(|_| (0..8).map(|_| (rng.random_range(0.0..31.0), rng.random_range(0.0..31.0))).collect())
        .collect();
    let traj = TrajectoryMap::from_points(32, 32, pts)?;
    let feat = FeatureMap::from_fn(5, 32, 32, |c, y, x| (c * 1000 + y * 32 + x) as f64 + 0.25)?;
    let emb = extract_point_embeddings(&feat, &traj)?;
    for stack in [build_correspondence_map(&emb, &traj)?, rescale_correspondence(&emb, &traj, 8, 8)?] {
        for frame in &stack.frames {
            for (_, _, k, col) in &frame.columns {
                let e = emb.get(*k).expect("valid keypoint");
                if col.iter().zip(e).any(|(a, b)| a.to_bits() != b.to_bits()) {
                    return Ok((false, format!("keypoint {k} column differs at {}x{}", stack.width, stack.height)));
                }
            }
        }
    }
    Ok((true, "full resolution and 8x8".into()))
}

fn random_inputs(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> GuidanceInputs {
    let n = Init::Normal(1.0);
    GuidanceInputs {
        z_t: n.tensor(cfg.latent_shape(1), rng),
        timesteps: vec![rng.random_range(1..=1000)],
        sparse: n.tensor([1, 2, cfg.image_height, cfg.image_width], rng),
        dense: n.tensor([1, 2, cfg.image_height, cfg.image_width], rng),
        points: (0..cfg.levels())
            .map(|l| {
                let (h, w) = cfg.level_dims(l);
                n.tensor([1, cfg.point_dim, h, w], rng)
            })
            .collect(),
    }
}

fn transparency() -> Result<(bool, String)> {
    let cfg = NetConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for v in Variant::ALL {
        let p = GuidancePipeline::new(cfg.clone(), v, 8)?;
        for i in 0..5 {
            let inp = random_inputs(&cfg, &mut rng);
            if !p.predict(&inp)?.bit_eq(&p.unguided(&inp.z_t, &inp.timesteps)?) {
                return Ok((false, format!("variant {v}, input {i} differs")));
            }
        }
    }
    Ok((true, "3 variants x 5 inputs".into()))
}

fn tiny_dataset(p: &GuidancePipeline) -> Result<crate::guidance_net::SyntheticDataset> {
    build_dataset(
        p,
        &DatasetConfig {
            clips: 1,
            frames_per_clip: 3,
            keypoints: 4,
            ..DatasetConfig::default()
        },
    )
}

fn freezing() -> Result<(bool, String)> {
    let mut p = GuidancePipeline::new(NetConfig::tiny(), Variant::Full, 9)?;
    let ds = tiny_dataset(&p)?;
    let before = p.store().checksum(Component::Base);
    let cfg = TrainConfig {
        steps: 3,
        batch_size: 2,
        eval_batches: 1,
        ..TrainConfig::default()
    };
    train(&mut p, &ds, &cfg)?;
    let after = p.store().checksum(Component::Base);
    Ok((before == after, format!("base sha256 {}", &after[..16])))
}

fn gradients() -> Result<(bool, String)> {
    let mut p = GuidancePipeline::new(NetConfig::tiny(), Variant::Full, 10)?;
    let ds = tiny_dataset(&p)?;
    let batch = sample_batch(&ds, &NoiseSchedule::default(), 1, &mut ChaCha8Rng::seed_from_u64(10))?;
    p.randomize_zero_params(0.1, 10);
    let mut worst = (0.0, String::new());
    for c in Component::TRAINABLE {
        let r = finite_diff_gradcheck(&mut p, &batch, c, 16, 1e-5, 10)?;
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, c.to_string());
        }
    }
    Ok((worst.0 < 1e-4, format!("max relative error {:.3e} ({})", worst.0, worst.1)))
}

fn diffusion_variance() -> Result<(bool, String)> {
    let s = NoiseSchedule::default();
    let t = s.steps();
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z0 = Init::Normal(1.0).tensor([1, 1, 1, n], &mut rng);
    let eps = Init::Normal(1.0).tensor([1, 1, 1, n], &mut rng);
    let z = crate::guidance_net::forward_diffuse(&z0, t, &eps, &s)?;
    let mean = z.data().iter().sum::<f64>() / n as f64;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(((var - 1.0).abs() <= 0.05, format!("Var(z_T) = {var:.4}, abar_T = {:.3e}", s.alpha_bar(t)?)))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let dir = std::env::temp_dir().join(format!("dispose-check-{}", std::process::id()));
    let mut p = GuidancePipeline::new(NetConfig::tiny(), Variant::Full, 12)?;
    p.randomize_zero_params(0.1, 12);
    let res = (|| {
        save_checkpoint(&p, dir.join("a"))?;
        save_checkpoint(&load_checkpoint(dir.join("a"))?, dir.join("b"))?;
        let read = |d: &str, f: &str| std::fs::read(dir.join(d).join(f)).map_err(|e| Error::io(dir.join(d).join(f), e));
        let same = read("a", "params.bin")? == read("b", "params.bin")?
            && read("a", "manifest.json")? == read("b", "manifest.json")?;
        Ok((same, "save, load, save".to_string()))
    })();
    let _ = std::fs::remove_dir_all(&dir);
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let results = run_suite("all").unwrap();
        assert_eq!(results.len(), 13);
        for r in &results {
            assert!(r.passed, "{}::{} {}", r.module, r.name, r.witness);
        }
    }

    #[test]
    fn unknown_suite() {
        assert!(matches!(run_suite("nope"), Err(Error::Config(_))));
    }
}
