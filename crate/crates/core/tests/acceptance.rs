//! Acceptance gate A1-A8. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pwi_core::aberration::{sample_profile, SIGMA_LEVELS};
use pwi_core::beamform::{das_all, ApodizationSpec, DasTensor, Window};
use pwi_core::bench::{run_bench, BenchMethod};
use pwi_core::compound::cpc_all;
use pwi_core::config::{default_probe, ImagingConfig, ProbeConfig, SystemConfig};
use pwi_core::dataio::{aberration_seed, emit_dataset, DatasetConfig, TensorBlob};
use pwi_core::metrics::{evaluate, gcnr_values, lesion_rois, Domain, RoiSpec};
use pwi_core::postproc::{analytic_signal, bmode, log_compress};
use pwi_core::rfsim::{covering_duration, make_phantom, simulate, PhantomGeometry, PhantomKind, RfCube};
use pwi_core::svdbf::{svd_beamform, DEFAULT_PATCH};

const A1_TOL: f64 = 1e-9;
const A3_TOL: f64 = 1e-7;
const A3_LEAK: f64 = 1e-9;
const A4_SAME_MAX: f64 = 0.1;
const A4_HALF_TOL: f64 = 0.02;
const A6_RANK1_DB: f64 = 0.1;
const A7_CPC_MS: f64 = 1000.0;
const SCENE_SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.1} s of {limit_s:.0} s"))
}

fn finish(checks: bool, detail: String, start: Instant, limit_s: f64) -> Outcome {
    let (in_time, timing) = within(start.elapsed(), limit_s);
    Outcome {
        pass: checks && in_time,
        detail: format!("{detail}; {timing}"),
    }
}

// A1: optimized DAS against a direct triple loop.

fn naive_das(cube: &RfCube, sos: &Array2<f64>, apod: &ApodizationSpec, cfg: &ImagingConfig) -> Array3<f64> {
    let depths = cfg.depths();
    let (nt, ne, nk) = cube.samples().dim();
    let mut out = Array3::zeros((depths.len(), cfg.num_scanlines, nk));
    for (a, &z) in depths.iter().enumerate() {
        for l in 0..cfg.num_scanlines {
            let x = cube.element_x[l];
            for k in 0..nk {
                let theta = cube.angles[k];
                let c = sos[[l, k]];
                let mut sum = 0.0;
                let mut count = 0;
                for i in 0..ne {
                    let xe = cube.element_x[i];
                    let w = apod.weight(x - xe, z);
                    if w == 0.0 {
                        continue;
                    }
                    count += 1;
                    let t = (z * theta.cos() + x * theta.sin() + ((x - xe).powi(2) + z * z).sqrt()) / c;
                    let pos = (t - cube.t0) * cube.fs;
                    let v = if pos < 0.0 || pos > (nt - 1) as f64 {
                        0.0
                    } else {
                        let i0 = pos.floor() as usize;
                        let f = pos - i0 as f64;
                        let next = if i0 + 1 < nt { cube.samples()[[i0 + 1, i, k]] } else { 0.0 };
                        (1.0 - f) * cube.samples()[[i0, i, k]] + f * next
                    };
                    sum += w * v;
                }
                if count > 0 {
                    out[[a, l, k]] = sum / count as f64;
                }
            }
        }
    }
    out
}

fn a1() -> Outcome {
    let start = Instant::now();
    let probe = ProbeConfig {
        num_elements: 32,
        num_planewaves: 3,
        ..default_probe()
    };
    let cfg = ImagingConfig {
        depth_start: 0.1e-3,
        depth_end: 1.1e-3,
        num_depth_samples: 40,
        num_scanlines: 32,
        ..ImagingConfig::default()
    };
    let mut worst: f64 = 0.0;
    for trial in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let samples = Array3::from_shape_simple_fn((64, 32, 3), || rng.gen_range(-1.0..1.0));
        let angles = vec![-0.12, 0.0, 0.09];
        let cube = RfCube::new(samples, probe.sampling_frequency, 0.0, probe.element_positions(), angles).unwrap();
        let apod = ApodizationSpec {
            window: if trial % 2 == 0 { Window::Hann } else { Window::Rectangular },
            f_number: 0.6 + 0.1 * trial as f64,
        };
        let profile = sample_profile(1540.0, 3.85, 32, 3, trial).unwrap();
        let got = das_all(&cube, &profile, &apod, &cfg).unwrap().data;
        let want = naive_das(&cube, &profile.sos, &apod, &cfg);
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = got.iter().zip(want.iter()).fold(0.0f64, |m, (g, w)| m.max((g - w).abs()));
        worst = worst.max(err / scale);
    }
    finish(worst < A1_TOL, format!("max relative error {worst:.2e} (< {A1_TOL:e}) over 10 cubes 64x32x3"), start, 10.0)
}

// A2: point targets land on their grid cells.

fn a2() -> Outcome {
    let start = Instant::now();
    let sys = SystemConfig::default();
    let geom = PhantomGeometry::default();
    let phantom = make_phantom(PhantomKind::PointTargets, 0, &geom).unwrap();
    let angles = sys.full_angle_set().unwrap();
    let depth = phantom.max_depth().max(sys.imaging.depth_end);
    let duration = covering_duration(&sys.probe, &angles, depth, sys.imaging.assumed_sos);
    let cube = simulate(&phantom, &sys.probe, &angles, duration).unwrap();
    let profile = sample_profile(sys.imaging.assumed_sos, 0.0, sys.imaging.num_scanlines, angles.len(), 0).unwrap();
    let tensor = das_all(&cube, &profile, &sys.apodization, &sys.imaging).unwrap();
    let img = bmode(&cpc_all(&tensor).unwrap(), sys.imaging.dynamic_range).unwrap();

    let x_first = sys.probe.element_positions()[0];
    let dz = sys.imaging.depth_spacing();
    let (rows, cols) = img.db.dim();
    let mut worst = (0.0f64, 0.0f64);
    let mut ok = true;
    for &z in &geom.point_depths {
        let true_col = (geom.point_x - x_first) / sys.probe.pitch;
        let true_row = (z - sys.imaging.depth_start) / dz;
        // search a +-1 mm neighbourhood
        let (hr, hc) = ((1e-3 / dz) as usize, (1e-3 / sys.probe.pitch) as usize);
        let (r0, c0) = (true_row as usize, true_col as usize);
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for r in r0.saturating_sub(hr)..(r0 + hr + 1).min(rows) {
            for c in c0.saturating_sub(hc)..(c0 + hc + 1).min(cols) {
                if img.db[[r, c]] > best.0 {
                    best = (img.db[[r, c]], r, c);
                }
            }
        }
        let (dr, dc) = ((best.1 as f64 - true_row).abs(), (best.2 as f64 - true_col).abs());
        worst = (worst.0.max(dr), worst.1.max(dc));
        ok &= dr <= 1.0 && dc <= 1.0;
    }
    finish(
        ok,
        format!("{} targets, worst offset {:.2} rows / {:.2} cols (<= 1 cell)", geom.point_depths.len(), worst.0, worst.1),
        start,
        30.0,
    )
}

// A3: analytic signal against a direct DFT.

fn dft(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let phase = sign * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
                acc += v * Complex64::new(phase.cos(), phase.sin());
            }
            if inverse {
                acc / n as f64
            } else {
                acc
            }
        })
        .collect()
}

fn a3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut err, mut leak) = (0.0f64, 0.0f64);
    for n in [64usize, 257, 1024] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spectrum = dft(&x.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>(), false);
        let weighted: Vec<Complex64> = spectrum
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if k == 0 || 2 * k == n {
                    v
                } else if 2 * k < n {
                    2.0 * v
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let want = dft(&weighted, true);
        let got = analytic_signal(&x);
        err = got.iter().zip(&want).fold(err, |m, (g, w)| m.max((g - w).norm()));
        let spectrum = dft(&got, false);
        let peak = spectrum.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let neg = spectrum[n / 2 + 1..].iter().fold(0.0f64, |m, v| m.max(v.norm()));
        leak = leak.max(neg / peak);
    }
    finish(
        err < A3_TOL && leak < A3_LEAK,
        format!("max error {err:.2e} (< {A3_TOL:e}), negative-frequency leakage {leak:.2e} (< {A3_LEAK:e})"),
        start,
        5.0,
    )
}

// A4: GCNR sanity.

fn a4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = Array2::from_shape_simple_fn((64, 64), || rng.gen_range(-60.0..0.0));
    let mut in_range = 0;
    for _ in 0..100 {
        let w = rng.gen_range(4.0..20.0);
        let h = rng.gen_range(4.0..30.0);
        let x0 = rng.gen_range(0.0..(30.0 - w));
        let z0 = rng.gen_range(0.0..(63.0 - h));
        let ra = RoiSpec::Rect { x0, z0, x1: x0 + w, z1: z0 + h };
        let x0 = rng.gen_range(32.0..(63.0 - w));
        let z0 = rng.gen_range(0.0..(63.0 - h));
        let rb = RoiSpec::Rect { x0, z0, x1: x0 + w, z1: z0 + h };
        let g = pwi_core::metrics::evaluate_values(img.view(), &ra, &rb, 256, Domain::Db).unwrap().gcnr;
        in_range += (0.0..=1.0).contains(&g) as usize;
    }
    let same: Vec<f64> = (0..100_000).map(|_| rng.gen_range(-50.0..-10.0)).collect();
    let g_same = gcnr_values(&same[..50_000], &same[50_000..], 256).unwrap();
    let low: Vec<f64> = (0..1000).map(|_| rng.gen_range(-60.0..-40.0)).collect();
    let high: Vec<f64> = (0..1000).map(|_| rng.gen_range(-30.0..0.0)).collect();
    let g_disjoint = gcnr_values(&low, &high, 256).unwrap();
    let u1: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let u2: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.5..1.5)).collect();
    let g_half = gcnr_values(&u1, &u2, 256).unwrap();
    let ok = in_range == 100 && g_same <= A4_SAME_MAX && g_disjoint == 1.0 && (g_half - 0.5).abs() <= A4_HALF_TOL;
    finish(
        ok,
        format!("{in_range}/100 in [0,1]; same population {g_same:.3}; disjoint {g_disjoint}; half overlap {g_half:.3}"),
        start,
        10.0,
    )
}

// A5 / A6: cyst scenes under speed-of-sound errors.

fn scene_system() -> SystemConfig {
    let mut sys = SystemConfig::default();
    sys.imaging.depth_start = 16e-3;
    sys.imaging.depth_end = 24e-3;
    sys.imaging.num_depth_samples = 206;
    sys
}

struct SceneMetrics {
    cnr: [f64; 3],
    gcnr: [f64; 3],
    svd_gcnr: f64,
    svd_cnr: f64,
}

struct Scenes {
    per_seed: Vec<SceneMetrics>,
    cpc_time: Duration,
    svd_time: Duration,
    rank1_db: f64,
}

fn run_scenes() -> Scenes {
    let sys = scene_system();
    let geom = PhantomGeometry::default();
    let (lesion, background) = lesion_rois(&geom, &sys);
    let angles = sys.full_angle_set().unwrap();
    let k = angles.len();
    let dr = sys.imaging.dynamic_range;
    let mut per_seed = Vec::new();
    let (mut cpc_time, mut svd_time) = (Duration::ZERO, Duration::ZERO);
    let mut rank1_db = 0.0f64;
    for seed in 0..SCENE_SEEDS {
        let t = Instant::now();
        let phantom = make_phantom(PhantomKind::Hypoechoic, seed, &geom).unwrap();
        let depth = phantom.max_depth().max(sys.imaging.depth_end);
        let duration = covering_duration(&sys.probe, &angles, depth, sys.imaging.assumed_sos - 3.85);
        let cube = simulate(&phantom, &sys.probe, &angles, duration).unwrap();
        let (mut cnr, mut gcnr) = ([0.0; 3], [0.0; 3]);
        let mut last = None;
        for (si, &sigma) in SIGMA_LEVELS.iter().enumerate() {
            let profile = sample_profile(sys.imaging.assumed_sos, sigma, sys.imaging.num_scanlines, k, aberration_seed(seed)).unwrap();
            let tensor = das_all(&cube, &profile, &sys.apodization, &sys.imaging).unwrap();
            let img = bmode(&cpc_all(&tensor).unwrap(), dr).unwrap();
            let rep = evaluate(&img, &lesion, &background, Domain::Db).unwrap();
            cnr[si] = rep.cnr;
            gcnr[si] = rep.gcnr;
            last = Some(tensor);
        }
        cpc_time += t.elapsed();

        let t = Instant::now();
        let tensor = last.unwrap();
        let svd = svd_beamform(&tensor, DEFAULT_PATCH).unwrap();
        let rep = evaluate(&svd.bmode(dr).unwrap(), &lesion, &background, Domain::Db).unwrap();
        if seed == 0 {
            rank1_db = rank1_error_db(&tensor, dr);
        }
        svd_time += t.elapsed();
        per_seed.push(SceneMetrics {
            cnr,
            gcnr,
            svd_gcnr: rep.gcnr,
            svd_cnr: rep.cnr,
        });
    }
    Scenes {
        per_seed,
        cpc_time,
        svd_time,
        rank1_db,
    }
}

/// Worst per-pixel dB gap between SVD and CPC B-mode for a rank-1 tensor
/// built from one slab of `tensor` with positive per-plane-wave gains.
fn rank1_error_db(tensor: &DasTensor, dr: f64) -> f64 {
    let (a, l, k) = tensor.dim();
    let base = tensor.slab(k / 2).to_owned();
    let gains: Vec<f64> = (0..k).map(|j| 0.5 + j as f64 / k as f64).collect();
    let data = Array3::from_shape_fn((a, l, k), |(r, c, j)| base[[r, c]] * gains[j]);
    let rank1 = DasTensor::new(data, tensor.angles.clone()).unwrap();
    let cpc = bmode(&cpc_all(&rank1).unwrap(), dr).unwrap();
    let svd = svd_beamform(&rank1, DEFAULT_PATCH).unwrap();
    let svd = log_compress(&svd.envelope(), dr).unwrap();
    cpc.db.iter().zip(svd.db.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn a5(s: &Scenes) -> Outcome {
    let cnr: Vec<f64> = (0..3).map(|i| mean(s.per_seed.iter().map(|m| m.cnr[i]))).collect();
    let gcnr: Vec<f64> = (0..3).map(|i| mean(s.per_seed.iter().map(|m| m.gcnr[i]))).collect();
    let ok = cnr[0] >= cnr[1] && cnr[1] >= cnr[2] && gcnr[0] >= gcnr[1] && gcnr[1] >= gcnr[2];
    let (in_time, timing) = within(s.cpc_time, 300.0);
    Outcome {
        pass: ok && in_time,
        detail: format!(
            "{} seeds, mean CNR {:.4} / {:.4} / {:.4}, mean GCNR {:.4} / {:.4} / {:.4} at sigma 0 / 1.54 / 3.85; {timing}",
            s.per_seed.len(),
            cnr[0],
            cnr[1],
            cnr[2],
            gcnr[0],
            gcnr[1],
            gcnr[2]
        ),
    }
}

fn a6(s: &Scenes) -> Outcome {
    let svd = mean(s.per_seed.iter().map(|m| m.svd_gcnr));
    let cpc = mean(s.per_seed.iter().map(|m| m.gcnr[2]));
    let svd_cnr = mean(s.per_seed.iter().map(|m| m.svd_cnr));
    let ok = svd >= cpc && s.rank1_db < A6_RANK1_DB;
    let (in_time, timing) = within(s.cpc_time + s.svd_time, 300.0);
    Outcome {
        pass: ok && in_time,
        detail: format!(
            "sigma 3.85, K 31: mean GCNR svd {svd:.4} vs cpc {cpc:.4} (svd CNR {svd_cnr:.4}); rank-1 gap {:.2e} dB (< {A6_RANK1_DB}); {timing}",
            s.rank1_db
        ),
    }
}

// A7: timing order.

fn a7() -> Outcome {
    let start = Instant::now();
    let r = run_bench(31, 1024, 192, 3, 1).unwrap();
    let cpc = r.iter().find(|b| b.method == BenchMethod::Cpc).unwrap().wall_ms;
    let svd = r.iter().find(|b| b.method == BenchMethod::Svd).unwrap().wall_ms;
    Outcome {
        pass: svd > cpc && cpc < A7_CPC_MS,
        detail: format!(
            "1024x192x31 median of 3, one thread: cpc {cpc:.2} ms (< {A7_CPC_MS} ms), svd {svd:.1} ms; {:.1} s total",
            start.elapsed().as_secs_f64()
        ),
    }
}

// A8: dataset determinism and blob round trip.

fn small_dataset_config() -> DatasetConfig {
    let mut cfg = DatasetConfig::default();
    cfg.system.probe.num_elements = 32;
    cfg.system.imaging.num_scanlines = 32;
    cfg.system.imaging.depth_start = 7e-3;
    cfg.system.imaging.depth_end = 11e-3;
    cfg.system.imaging.num_depth_samples = 64;
    cfg.geometry.field_x = (-2e-3, 2e-3);
    cfg.geometry.field_z = (8e-3, 10e-3);
    cfg.geometry.lesion_center = (0.0, 9e-3);
    cfg.geometry.lesion_radius = 0.8e-3;
    cfg
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn a8() -> Outcome {
    let start = Instant::now();
    let cfg = small_dataset_config();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m1 = emit_dataset(2, d1.path(), &[11, 12], &cfg).unwrap();
    let m2 = emit_dataset(2, d2.path(), &[11, 12], &cfg).unwrap();
    let (f1, f2) = (dir_bytes(d1.path()), dir_bytes(d2.path()));
    let identical = m1 == m2 && f1 == f2;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let real = Array3::from_shape_simple_fn((31, 64, 192), || rng.gen::<f64>() * 2.0 - 1.0);
    let single = real.mapv(|v| v as f32);
    let complex = real.mapv(|v| Complex64::new(v as f32 as f64, (1.0 - v) as f32 as f64));
    let mut round_trip = true;
    for blob in [
        TensorBlob::from_f64(&real).unwrap(),
        TensorBlob::from_f32(&single).unwrap(),
        TensorBlob::from_complex(&complex).unwrap(),
    ] {
        let bytes = blob.to_bytes();
        let back = TensorBlob::from_bytes(&bytes).unwrap();
        round_trip &= back == blob && back.to_bytes() == bytes;
    }
    round_trip &= TensorBlob::from_f64(&real).unwrap().to_array3().unwrap() == real;
    finish(
        identical && round_trip && f1.len() == 2 * 10 + 1,
        format!("{} files identical across runs: {identical}; f32/f64/complex blob round trip bitwise: {round_trip}", f1.len()),
        start,
        120.0,
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, o: Outcome| {
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    };
    report("A1", "DAS oracle", a1());
    report("A2", "point-target localization", a2());
    report("A3", "Hilbert transform", a3());
    report("A4", "GCNR sanity", a4());
    let scenes = run_scenes();
    report("A5", "aberration degradation", a5(&scenes));
    report("A6", "SVD beamformer gain", a6(&scenes));
    report("A7", "timing order", a7());
    report("A8", "dataset and blob determinism", a8());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
