//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any fails.
//!
//! Run with `cargo test -p dispose-core --test acceptance`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dispose_core::correspondence::{
    build_correspondence_map, extract_point_embeddings, rescale_correspondence, retrieve_point, FeatureProvider,
    SyntheticProvider,
};
use dispose_core::flow_sampling::{nms_peaks, watershed_distance_map, DistanceMap, EdgeMask};
use dispose_core::guidance_net::{
    build_dataset, finite_diff_gradcheck, load_checkpoint, loss_csv, sample_batch, save_checkpoint, train, Component,
    DatasetConfig, GuidanceInputs, GuidancePipeline, Init, NetConfig, NoiseSchedule, TrainConfig, Variant,
    MANIFEST_FILE, PAYLOAD_FILE,
};
use dispose_core::motion_field::{propagate_dense, FlowSample, PropagatorParams, ReferenceImage, SparseFlow};
use dispose_core::pose_io::{read_flo, write_flo, FlowField};
use dispose_core::trajectory::{reference_displacements, track_matrix, TrajectoryMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRANSPARENCY_INPUTS: usize = 100;
const TRANSPARENCY_BUDGET: Duration = Duration::from_secs(10);
const TELESCOPE_TRAJECTORIES: usize = 1000;
const TELESCOPE_TOL_PX: f64 = 1e-6;
const PROPAGATION_INSTANCES: usize = 50;
const PROPAGATION_TOL: f64 = 1e-4;
/// Solver stopping tolerance (fixed-point residual) used against the oracle.
const PROPAGATION_SOLVER_TOL: f64 = 1e-8;
const ORACLE_STEP_TOL: f64 = 1e-13;
const WATERSHED_INSTANCES: usize = 20;
const NMS_KERNELS: [usize; 4] = [3, 5, 7, 9];
const RETRIEVAL_QUERIES: usize = 100;
const GRAD_PROBES: usize = 64;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const TRAIN_SEED: u64 = 7;
const TRAIN_STEPS: usize = 200;
const TRAIN_RATIO_MAX: f64 = 0.5;
const TRAIN_BUDGET: Duration = Duration::from_secs(300);
/// Observed held-out losses of the seeded run, pinned as a regression oracle.
const PINNED_EVAL_BEFORE: f64 = 2.299513560618844;
const PINNED_EVAL_AFTER: f64 = 1.0701125342714661;
const PINNED_REL_TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
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

fn transparency() -> Outcome {
    let start = Instant::now();
    let cfg = NetConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for v in Variant::ALL {
        let p = GuidancePipeline::new(cfg.clone(), v, 1).map_err(err)?;
        for i in 0..TRANSPARENCY_INPUTS {
            let inp = random_inputs(&cfg, &mut rng);
            let guided = p.predict(&inp).map_err(err)?;
            let plain = p.unguided(&inp.z_t, &inp.timesteps).map_err(err)?;
            ensure(guided.bit_eq(&plain), || format!("variant {v}, input {i}: outputs differ"))?;
        }
    }
    let t = start.elapsed();
    ensure(t < TRANSPARENCY_BUDGET, || format!("took {t:?}"))?;
    Ok(format!("3 variants x {TRANSPARENCY_INPUTS} inputs bit-identical in {:.2}s", t.as_secs_f64()))
}

fn telescoping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..TELESCOPE_TRAJECTORIES {
        let (k, n) = (rng.random_range(1..=32), rng.random_range(1..=64));
        let (w, h) = (rng.random_range(16..512), rng.random_range(16..512));
        let pts: Vec<Vec<(f64, f64)>> = (0..=n)
            .map(|_| {
                (0..k)
                    .map(|_| (rng.random_range(-20.0..w as f64 + 20.0), rng.random_range(-20.0..h as f64 + 20.0)))
                    .collect()
            })
            .collect();
        let traj = TrajectoryMap::from_points(w, h, pts.clone()).map_err(err)?;
        let (tm, rd) = (track_matrix(&traj), reference_displacements(&traj));
        #[allow(clippy::needless_range_loop)]
        for kk in 0..k {
            let (mut su, mut sv) = (0.0, 0.0);
            for f in 1..=n {
                let (u, v) = tm.get(f, kk).ok_or("missing track entry")?;
                su += u;
                sv += v;
                let (ru, rv) = rd.get(f, kk).ok_or("missing reference entry")?;
                let (ou, ov) = (pts[f][kk].0 - pts[0][kk].0, pts[f][kk].1 - pts[0][kk].1);
                worst = worst
                    .max((su - ru).abs())
                    .max((sv - rv).abs())
                    .max((ru - ou).abs())
                    .max((rv - ov).abs());
            }
        }
    }
    ensure(worst <= TELESCOPE_TOL_PX, || format!("max deviation {worst:.3e} px"))?;
    Ok(format!("{TELESCOPE_TRAJECTORIES} trajectories, max deviation {worst:.2e} px"))
}

/// Plain Jacobi iteration of the harmonic fixed point, run until updates vanish.
fn fixed_point_oracle(img: &ReferenceImage, samples: &[FlowSample], beta: f64, channel: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let weight = |a: [f64; 3], b: [f64; 3]| {
        let d2: f64 = (0..3).map(|c| (a[c] - b[c]).powi(2)).sum();
        (-d2 / beta).exp().max(1e-280)
    };
    let mut fixed = vec![None; w * h];
    for s in samples {
        fixed[s.y * w + s.x] = Some(if channel == 0 { s.u } else { s.v });
    }
    let mut cur: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    let mut next = cur.clone();
    for _ in 0..5_000_000 {
        let mut step = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if fixed[i].is_some() {
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                let nbrs = [
                    (x > 0).then(|| i - 1),
                    (x + 1 < w).then(|| i + 1),
                    (y > 0).then(|| i - w),
                    (y + 1 < h).then(|| i + w),
                ];
                for j in nbrs.into_iter().flatten() {
                    let wt = weight(img.get(x, y), img.get(j % w, j / w));
                    num += wt * cur[j];
                    den += wt;
                }
                next[i] = num / den;
                step = step.max((next[i] - cur[i]).abs());
            }
        }
        std::mem::swap(&mut cur, &mut next);
        if step < ORACLE_STEP_TOL {
            break;
        }
    }
    cur
}

fn propagation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = PropagatorParams {
        tol: PROPAGATION_SOLVER_TOL,
        ..PropagatorParams::default()
    };
    let mut worst = 0.0f64;
    let mut worst_default = 0.0f64;
    for inst in 0..PROPAGATION_INSTANCES {
        let contrast: f64 = rng.random_range(0.05..0.2);
        let pixels = (0..256)
            .map(|_| [rng.random::<f64>() * contrast, rng.random::<f64>() * contrast, rng.random::<f64>() * contrast])
            .collect();
        let img = ReferenceImage::new(16, 16, pixels).map_err(err)?;
        let mut taken = std::collections::HashSet::new();
        let mut samples = Vec::new();
        for _ in 0..rng.random_range(1..=16) {
            let (x, y) = (rng.random_range(0..16), rng.random_range(0..16));
            if taken.insert((x, y)) {
                samples.push(FlowSample {
                    x,
                    y,
                    u: rng.random_range(-8.0..8.0),
                    v: rng.random_range(-8.0..8.0),
                });
            }
        }
        let constraints = SparseFlow::new(16, 16, samples.clone()).map_err(err)?;
        let (field, _) = propagate_dense(&img, &constraints, &params).map_err(err)?;
        let (loose, _) = propagate_dense(&img, &constraints, &PropagatorParams::default()).map_err(err)?;
        for ch in 0..2 {
            let oracle = fixed_point_oracle(&img, &samples, params.beta, ch);
            let got = field.channel(ch);
            for (g, o) in loose.channel(ch).iter().zip(&oracle) {
                worst_default = worst_default.max((g - o).abs());
            }
            let vals: Vec<f64> = samples.iter().map(|s| if ch == 0 { s.u } else { s.v }).collect();
            let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            for s in &samples {
                let c = if ch == 0 { s.u } else { s.v };
                let g = got[s.y * 16 + s.x];
                ensure(g.to_bits() == c.to_bits(), || {
                    format!("instance {inst}: constraint ({}, {}) channel {ch} is {g}, expected {c}", s.x, s.y)
                })?;
            }
            for (i, (g, o)) in got.iter().zip(&oracle).enumerate() {
                ensure(*g >= lo && *g <= hi, || format!("instance {inst}: pixel {i} = {g} outside [{lo}, {hi}]"))?;
                worst = worst.max((g - o).abs());
            }
        }
        ensure(worst <= PROPAGATION_TOL, || format!("instance {inst}: max deviation {worst:.3e}"))?;
    }
    Ok(format!(
        "{PROPAGATION_INSTANCES} instances at tol {PROPAGATION_SOLVER_TOL:e}, max deviation from oracle {worst:.2e}, constraints exact, bounds held (default tol 1e-5 gives {worst_default:.2e})"
    ))
}

fn brute_force_distance(mask: &EdgeMask) -> Vec<f64> {
    let (w, h) = (mask.width, mask.height);
    let edges: Vec<(i64, i64)> = (0..w * h)
        .filter(|p| mask.edges[*p])
        .map(|p| ((p % w) as i64, (p / w) as i64))
        .collect();
    (0..w * h)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            if edges.is_empty() {
                return x.min(y).min(w - 1 - x).min(h - 1 - y) as f64;
            }
            let best = edges
                .iter()
                .map(|(ex, ey)| (ex - x as i64).pow(2) + (ey - y as i64).pow(2))
                .min()
                .expect("non-empty");
            (best as f64).sqrt()
        })
        .collect()
}

fn watershed() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for inst in 0..WATERSHED_INSTANCES {
        let p = if inst == 0 { 0.0 } else { rng.random_range(0.002..0.2) };
        let mask = EdgeMask::new(32, 32, (0..1024).map(|_| rng.random_bool(p)).collect()).map_err(err)?;
        let d = watershed_distance_map(&mask);
        let oracle = brute_force_distance(&mask);
        for (i, (a, b)) in d.distance.iter().zip(&oracle).enumerate() {
            ensure(a.to_bits() == b.to_bits(), || format!("edge set {inst}: pixel {i} got {a}, expected {b}"))?;
        }
    }
    let mut total = 0;
    for inst in 0..WATERSHED_INSTANCES {
        let map = if inst % 2 == 0 {
            let mask = EdgeMask::new(32, 32, (0..1024).map(|_| rng.random_bool(0.03)).collect()).map_err(err)?;
            watershed_distance_map(&mask)
        } else {
            DistanceMap {
                width: 32,
                height: 32,
                distance: (0..1024).map(|_| rng.random_range(0..6) as f64).collect(),
            }
        };
        let mut prev = usize::MAX;
        for k in NMS_KERNELS {
            let peaks = nms_peaks(&map, k).map_err(err)?;
            ensure(peaks.len() <= prev, || format!("map {inst}: count rose to {} at K_f = {k}", peaks.len()))?;
            ensure(peaks.iter().all(|&(x, y)| x > 0 && y > 0 && x < 31 && y < 31), || {
                format!("map {inst}: border sample at K_f = {k}")
            })?;
            prev = peaks.len();
            total += peaks.len();
        }
    }
    Ok(format!(
        "{WATERSHED_INSTANCES} edge sets exact, {WATERSHED_INSTANCES} maps monotone over K_f 3..9 ({total} samples, none on the border)"
    ))
}

fn correspondence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = ReferenceImage::uniform(40, 30, [0.0; 3]);
    let feats = SyntheticProvider { dp: 8, seed: 5 }.features(&img).map_err(err)?;
    let mut hits = 0;
    for _ in 0..RETRIEVAL_QUERIES {
        let q = (rng.random_range(0..40), rng.random_range(0..30));
        if retrieve_point(&feats, q, &feats).map_err(err)? == q {
            hits += 1;
        }
    }
    ensure(hits == RETRIEVAL_QUERIES, || format!("top-1 {hits}/{RETRIEVAL_QUERIES}"))?;

    let cfg = NetConfig::default();
    let pipeline = GuidancePipeline::new(cfg.clone(), Variant::Full, 5).map_err(err)?;
    let pts: Vec<Vec<(f64, f64)>> = (0..6)
        .map(|_| (0..10).map(|_| (rng.random_range(-2.0..66.0), rng.random_range(-2.0..66.0))).collect())
        .collect();
    let traj = TrajectoryMap::from_points(cfg.image_width, cfg.image_height, pts).map_err(err)?;
    let ref_img = ReferenceImage::from_fn(64, 64, |x, y| [x as f64 / 63.0, y as f64 / 63.0, ((x * y) % 7) as f64 / 7.0]);
    let feats = SyntheticProvider { dp: cfg.point_dim, seed: 6 }.features(&ref_img).map_err(err)?;
    let emb = extract_point_embeddings(&feats, &traj).map_err(err)?;
    let full = build_correspondence_map(&emb, &traj).map_err(err)?;
    let mut columns = 0;
    let mut stacks = vec![full];
    for l in 0..cfg.levels() {
        let (h, w) = cfg.level_dims(l);
        stacks.push(rescale_correspondence(&emb, &traj, h, w).map_err(err)?);
    }
    for s in &stacks {
        for frame in &s.frames {
            let dense = frame.to_dense();
            let plane = s.width * s.height;
            for p in 0..plane {
                let col: Vec<f64> = (0..s.dp).map(|c| dense[c * plane + p]).collect();
                if col.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let (x, y) = (p % s.width, p / s.width);
                let (_, _, k, _) = frame
                    .columns
                    .iter()
                    .find(|(cx, cy, _, _)| (*cx, *cy) == (x, y))
                    .ok_or_else(|| format!("nonzero column at ({x}, {y}) has no keypoint"))?;
                let e = emb.get(*k).ok_or("invalid keypoint placed")?;
                ensure(col.iter().zip(e).all(|(a, b)| a.to_bits() == b.to_bits()), || {
                    format!("column at ({x}, {y}) differs from embedding {k}")
                })?;
                columns += 1;
            }
        }
    }

    let mut g = dispose_core::guidance_net::Graph::new(pipeline.store());
    let z = g.input(Init::Zeros.tensor(cfg.latent_shape(1), &mut rng));
    let enc = pipeline.denoiser_encoder().forward(&mut g, z, &[1], &[]);
    for (l, skip) in enc.skips.iter().enumerate() {
        let [_, c, h, w] = g.shape(*skip);
        let s = &stacks[l + 1];
        ensure((s.height, s.width) == (h, w), || {
            format!("level {l}: map {}x{} vs encoder {w}x{h}", s.width, s.height)
        })?;
        let frame = &s.frames[0];
        let t = dispose_core::guidance_net::correspondence_tensor(&[frame]).map_err(err)?;
        let f_c = pipeline.point_encode_level(&t, l).map_err(err)?;
        ensure(f_c.shape() == [1, c, h, w], || format!("level {l}: F_c {:?} vs encoder {:?}", f_c.shape(), [1, c, h, w]))?;
    }
    Ok(format!(
        "top-1 {hits}/{RETRIEVAL_QUERIES}; {columns} nonzero columns bit-exact; {} levels match encoder dims",
        cfg.levels()
    ))
}

fn gradients() -> Outcome {
    let mut p = GuidancePipeline::new(NetConfig::default(), Variant::Full, 6).map_err(err)?;
    let ds = build_dataset(
        &p,
        &DatasetConfig {
            clips: 1,
            frames_per_clip: 3,
            ..DatasetConfig::default()
        },
    )
    .map_err(err)?;
    let batch = sample_batch(&ds, &NoiseSchedule::default(), 2, &mut ChaCha8Rng::seed_from_u64(6)).map_err(err)?;
    p.randomize_zero_params(0.1, 6);
    let mut parts = Vec::new();
    for c in Component::TRAINABLE {
        let r = finite_diff_gradcheck(&mut p, &batch, c, GRAD_PROBES, GRAD_STEP, 6).map_err(err)?;
        ensure(r.probes.len() >= GRAD_PROBES, || format!("{c}: only {} probes", r.probes.len()))?;
        ensure(r.max_rel_error < GRAD_TOL, || format!("{c}: max relative error {:.3e} at {:?}", r.max_rel_error, r.worst()))?;
        parts.push(format!("{c} {:.1e}", r.max_rel_error));
    }
    Ok(format!("{GRAD_PROBES} probes each, max relative error: {}", parts.join(", ")))
}

fn toy_training() -> Outcome {
    let start = Instant::now();
    let run = || -> Result<(GuidancePipeline, dispose_core::guidance_net::TrainReport, String), String> {
        let mut p = GuidancePipeline::new(NetConfig::default(), Variant::Full, TRAIN_SEED).map_err(err)?;
        let base = p.store().checksum(Component::Base);
        let ds = build_dataset(&p, &DatasetConfig::default()).map_err(err)?;
        let cfg = TrainConfig {
            steps: TRAIN_STEPS,
            seed: TRAIN_SEED,
            ..TrainConfig::default()
        };
        let report = train(&mut p, &ds, &cfg).map_err(err)?;
        Ok((p, report, base))
    };
    let (pa, ra, base_a) = run()?;
    let (pb, rb, _) = run()?;
    let t = start.elapsed();
    let ratio = ra.eval_after / ra.eval_before;
    let same_curve = ra.losses.len() == rb.losses.len()
        && ra.losses.iter().zip(&rb.losses).all(|(a, b)| a.to_bits() == b.to_bits())
        && loss_csv(&ra.losses) == loss_csv(&rb.losses);
    ensure(same_curve, || "loss curves differ between runs".into())?;
    for c in Component::TRAINABLE {
        ensure(pa.store().checksum(c) == pb.store().checksum(c), || format!("{c} weights differ between runs"))?;
    }
    ensure(pa.store().checksum(Component::Base) == base_a, || "base weights changed".into())?;
    ensure(t < TRAIN_BUDGET, || format!("two runs took {t:?}"))?;
    let pinned = |got: f64, want: f64| (got - want).abs() <= PINNED_REL_TOL * want.abs();
    ensure(pinned(ra.eval_before, PINNED_EVAL_BEFORE) && pinned(ra.eval_after, PINNED_EVAL_AFTER), || {
        format!("curve drifted: {} -> {}", ra.eval_before, ra.eval_after)
    })?;
    ensure(ratio <= TRAIN_RATIO_MAX, || format!("loss ratio {ratio:.4} ({} -> {})", ra.eval_before, ra.eval_after))?;
    Ok(format!(
        "held-out loss {:.4} -> {:.4} (ratio {ratio:.3}), two runs bit-identical, base unchanged, {:.1}s",
        ra.eval_before,
        ra.eval_after,
        t.as_secs_f64()
    ))
}

fn golden_flow() -> FlowField {
    FlowField::from_fn(3, 2, |x, y| (x as f64 - 0.5 * y as f64, 0.25 * (x + 2 * y) as f64 - 1.0))
}

fn golden_pipeline() -> Result<GuidancePipeline, String> {
    let mut p = GuidancePipeline::new(NetConfig::tiny(), Variant::Full, 1).map_err(err)?;
    p.randomize_zero_params(0.1, 1);
    Ok(p)
}

fn format_fidelity() -> Outcome {
    let dir = golden_dir();
    let golden_flo = std::fs::read(dir.join("ramp_3x2.flo")).map_err(err)?;
    let mut written = Vec::new();
    write_flo(&golden_flow(), &mut written).map_err(err)?;
    ensure(written == golden_flo, || "writer output differs from golden .flo".into())?;
    let read = read_flo(golden_flo.as_slice(), &dir.join("ramp_3x2.flo")).map_err(err)?;
    ensure(read == golden_flow(), || "golden .flo decodes to a different field".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..50 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let f = FlowField::from_fn(w, h, |_, _| (0.0, 0.0));
        let vals: Vec<f64> = (0..2 * w * h).map(|_| f32::from_bits(rng.random::<u32>() & 0xbfff_ffff) as f64).collect();
        let f = FlowField::from_planes(w, h, vals[..w * h].to_vec(), vals[w * h..].to_vec()).unwrap_or(f);
        let mut a = Vec::new();
        write_flo(&f, &mut a).map_err(err)?;
        let g = read_flo(a.as_slice(), Path::new("<memory>")).map_err(err)?;
        let mut b = Vec::new();
        write_flo(&g, &mut b).map_err(err)?;
        ensure(a == b && f == g, || format!("random field {i} ({w}x{h}) did not round-trip"))?;
    }

    let tmp = tempfile::tempdir().map_err(err)?;
    let gold_ckpt = dir.join("checkpoint_tiny");
    let loaded = load_checkpoint(&gold_ckpt).map_err(err)?;
    save_checkpoint(&loaded, tmp.path().join("resaved")).map_err(err)?;
    save_checkpoint(&golden_pipeline()?, tmp.path().join("fresh")).map_err(err)?;
    for f in [MANIFEST_FILE, PAYLOAD_FILE] {
        let gold = std::fs::read(gold_ckpt.join(f)).map_err(err)?;
        for which in ["resaved", "fresh"] {
            let got = std::fs::read(tmp.path().join(which).join(f)).map_err(err)?;
            ensure(got == gold, || format!("{which} {f} differs from golden"))?;
        }
    }
    let trained_like = {
        let mut p = golden_pipeline()?;
        p.randomize_zero_params(0.5, 2);
        p
    };
    save_checkpoint(&trained_like, tmp.path().join("a")).map_err(err)?;
    save_checkpoint(&load_checkpoint(tmp.path().join("a")).map_err(err)?, tmp.path().join("b")).map_err(err)?;
    for f in [MANIFEST_FILE, PAYLOAD_FILE] {
        let a = std::fs::read(tmp.path().join("a").join(f)).map_err(err)?;
        let b = std::fs::read(tmp.path().join("b").join(f)).map_err(err)?;
        ensure(a == b, || format!("checkpoint {f} changed across save, load, save"))?;
    }
    Ok("golden .flo and checkpoint reproduced byte-for-byte; 50 random .flo and a checkpoint round-trip bit-exact".into())
}

fn regenerate_golden() {
    let dir = golden_dir();
    std::fs::create_dir_all(&dir).unwrap();
    let mut buf = Vec::new();
    write_flo(&golden_flow(), &mut buf).unwrap();
    std::fs::write(dir.join("ramp_3x2.flo"), buf).unwrap();
    save_checkpoint(&golden_pipeline().unwrap(), dir.join("checkpoint_tiny")).unwrap();
    println!("golden files written to {}", dir.display());
}

fn main() {
    if std::env::var_os("DISPOSE_REGENERATE_GOLDEN").is_some() {
        regenerate_golden();
        return;
    }
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("transparency", transparency),
        ("telescoping", telescoping),
        ("propagation oracle", propagation),
        ("watershed oracle", watershed),
        ("correspondence", correspondence),
        ("gradients", gradients),
        ("toy training", toy_training),
        ("format fidelity", format_fidelity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
