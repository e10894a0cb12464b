//! Acceptance criteria. Runs as a plain binary so every criterion prints a
//! PASS/FAIL line; exits nonzero if any criterion fails.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use cinemagraph::euler::euler_forward;
use cinemagraph::fields::{BinaryMask, FlowField, Image};
use cinemagraph::flowsynth::{hint_from_angle, quadrant_arc_degrees, quadrant_for_angle, synth_flow, QUADRANTS};
use cinemagraph::io::{decode_atns, decode_flo, encode_atns, encode_flo, read_atns, read_flo, write_atns, write_flo};
use cinemagraph::maskgen::{
    adjusted_rand_index, average_attention, select_clusters, single_step_affinity, spectral_cluster,
    AffinityMatrix, AttentionStack, DEFAULT_CLUSTERS, DEFAULT_OVERLAP, FINE_STRUCTURE_OVERLAP,
};
use cinemagraph::pipeline::{frame_path, generate_loop, generate_loop_frames, write_loop, LoopConfig, OutputFormat};
use cinemagraph::splat::forward_splat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INTEGRATION_TOL: f32 = 1e-5;
const INTEGRATION_BUDGET: Duration = Duration::from_millis(50);
const ZERO_FLOW_TOL: f32 = 1e-6;
const CONSERVATION_TOL: f64 = 1e-4;
const DIRECTION_TOL: f32 = 1e-6;
const PIPELINE_BUDGET: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;

fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::new(w, h, c, (0..w * h * c).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

fn ac1_constant_flow_integration() -> Outcome {
    let (w, h, n) = (64usize, 64usize, 10usize);
    let c = [1.5f32, -0.5f32];
    let flow = FlowField::constant(w, h, c).unwrap();
    let t = Instant::now();
    let out = euler_forward(&flow, n);
    let elapsed = t.elapsed();
    let mut checked = 0;
    let mut worst = 0.0f32;
    for y in 0..h {
        for x in 0..w {
            // trajectory x + k*1.5, y - k*0.5 for k = 0..=n must stay on the raster
            let end_x = x as f32 + n as f32 * c[0];
            let end_y = y as f32 + n as f32 * c[1];
            if end_x > (w - 1) as f32 || end_y < 0.0 {
                continue;
            }
            let v = out.get(x, y);
            worst = worst.max((v[0] - 15.0).abs()).max((v[1] + 5.0).abs());
            checked += 1;
        }
    }
    let detail = format!("{checked} pixels, max err {worst:.2e}, {:.2} ms", elapsed.as_secs_f64() * 1e3);
    if worst <= INTEGRATION_TOL && elapsed < INTEGRATION_BUDGET && checked > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac2_loop_closure() -> Outcome {
    let (w, h) = (128usize, 128usize);
    let img = random_image(w, h, 3, 2);
    let mask = BinaryMask::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f32 - 64.0, y as f32 - 70.0);
        dx * dx + dy * dy < 45.0 * 45.0
    });
    let flow = synth_flow(&mask, 200f64.to_radians(), 1.7).unwrap();
    let mut bad = Vec::new();
    for total in [1usize, 7, 60] {
        let cfg = LoopConfig::new(total, 30, OutputFormat::PngSequence).unwrap();
        let frames = generate_loop_frames(&img, &flow, &mask, &cfg).unwrap();
        for idx in [0, total] {
            let same = frames[idx].to_u8() == img.to_u8()
                && frames[idx].data().iter().zip(img.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                bad.push(format!("N={total} frame {idx}"));
            }
        }
    }
    if bad.is_empty() {
        Ok("frames 0 and N bit-identical for N in {1, 7, 60}".into())
    } else {
        Err(format!("mismatch: {}", bad.join(", ")))
    }
}

fn ac3_zero_flow_fixed_point() -> Outcome {
    let (w, h) = (64usize, 48usize);
    let img = random_image(w, h, 3, 3);
    let cfg = LoopConfig::new(60, 30, OutputFormat::PngSequence).unwrap();
    let mask = BinaryMask::filled(w, h, true);
    let frames = generate_loop_frames(&img, &FlowField::zeros(w, h), &mask, &cfg).unwrap();
    let worst = frames
        .iter()
        .flat_map(|f| f.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()))
        .fold(0.0f32, f32::max);
    let detail = format!("{} frames, max deviation {worst:.2e}", frames.len());
    if frames.len() == 61 && worst <= ZERO_FLOW_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac4_splat_conservation() -> Outcome {
    let (w, h) = (32usize, 32usize);
    let img = random_image(w, h, 3, 4);
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = rng.gen_range(0.1..12.0f32);
        // random flow, then clamp each target into [0, w-2] x [0, h-2] so all four taps land
        let flow = FlowField::from_fn(w, h, |x, y| {
            let tx = (x as f32 + rng.gen_range(-amp..amp)).clamp(0.0, (w - 2) as f32);
            let ty = (y as f32 + rng.gen_range(-amp..amp)).clamp(0.0, (h - 2) as f32);
            [tx - x as f32, ty - y as f32]
        })
        .unwrap();
        let weight = rng.gen_range(0.01..1.0f64);
        let acc = forward_splat(&img, &flow, weight).unwrap();
        let expected = (w * h) as f64 * weight;
        worst = worst.max((acc.total_weight() - expected).abs() / expected);
    }
    let detail = format!("50 flows, max relative error {worst:.2e}");
    if worst <= CONSERVATION_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn planted(sizes: &[usize], noise: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let truth: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| vec![b; s]).collect();
    let n = truth.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = if truth[i] == truth[j] { 1.0 } else { rng.gen::<f64>() * noise };
            e[i * n + j] = v;
            e[j * n + i] = v;
        }
    }
    (e, truth)
}

fn ac5_spectral_recovery() -> Outcome {
    let sizes = [300usize, 400, 324];
    let mut worst = f64::INFINITY;
    for seed in 0..20u64 {
        let (e, truth) = planted(&sizes, 0.01, 1000 + seed);
        let a = AffinityMatrix::new(1024, e).unwrap();
        let labels = spectral_cluster(&a, 3, seed).unwrap();
        worst = worst.min(adjusted_rand_index(labels.labels(), &truth).unwrap());
    }
    if worst != 1.0 {
        return Err(format!("min ARI over 20 seeds {worst}"));
    }
    if DEFAULT_CLUSTERS != 10 {
        return Err(format!("default cluster count {DEFAULT_CLUSTERS}"));
    }

    // ablation ordering: noisy early maps, clean late maps on a 32x32 grid
    let grid = 32usize;
    let n = grid * grid;
    let truth: Vec<usize> = (0..n).map(|t| (t % grid) * 3 / grid).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ids = Vec::new();
    let mut maps = Vec::new();
    for step in (0..50u32).step_by(5) {
        let map: Vec<f32> = if step < 25 {
            (0..n * n).map(|_| rng.gen::<f32>()).collect()
        } else {
            (0..n * n)
                .map(|t| {
                    let same = truth[t / n] == truth[t % n];
                    if same { 0.8 + 0.2 * rng.gen::<f32>() } else { 0.05 * rng.gen::<f32>() }
                })
                .collect()
        };
        ids.push(step);
        maps.push(map);
    }
    let stack = AttentionStack::new(grid, grid, ids, maps).unwrap();
    let averaged = spectral_cluster(&average_attention(&stack, 25).unwrap(), 3, 0).unwrap();
    let single = spectral_cluster(&single_step_affinity(&stack, 5).unwrap(), 3, 0).unwrap();
    let ari_avg = adjusted_rand_index(averaged.labels(), &truth).unwrap();
    let ari_single = adjusted_rand_index(single.labels(), &truth).unwrap();
    let detail = format!("ARI 1.0 on 20 seeds; k default 10; ablation avg {ari_avg:.3} >= single-step {ari_single:.3}");
    if ari_avg >= ari_single {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac6_mask_selection() -> Outcome {
    // guide covers the left half; each cluster is 10 pixels of its own row
    let (w, h) = (20usize, 4usize);
    let guide = BinaryMask::from_fn(w, h, |x, _| x < 10);
    let inside_counts = [10usize, 8, 6, 0];
    let clusters: Vec<BinaryMask> = inside_counts
        .iter()
        .enumerate()
        .map(|(row, &k)| BinaryMask::from_fn(w, h, |x, y| y == row && x >= 10 - k && x < 20 - k))
        .collect();
    let union_of = |rows: &[usize]| BinaryMask::from_fn(w, h, |x, y| rows.contains(&y) && clusters[y].get(x, y));
    let at70 = select_clusters(&clusters, &guide, DEFAULT_OVERLAP).unwrap();
    let at90 = select_clusters(&clusters, &guide, FINE_STRUCTURE_OVERLAP).unwrap();
    let ok = at70 == union_of(&[0, 1]) && at90 == union_of(&[0]) && DEFAULT_OVERLAP == 0.70 && FINE_STRUCTURE_OVERLAP == 0.90;
    let detail = "ratios {1.0, 0.8, 0.6, 0.0}: 0.70 keeps first two, 0.90 keeps first".to_string();
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ac7_direction_formula() -> Outcome {
    let mask = BinaryMask::filled(3, 3, true);
    let v = hint_from_angle(90f64.to_radians(), &mask).get(1, 1);
    if v[0].abs() > DIRECTION_TOL || (v[1] + 1.0).abs() > DIRECTION_TOL {
        return Err(format!("hint at 90 deg is {v:?}"));
    }
    // 12 arcs of 30 degrees, pairwise disjoint, covering [0, 360)
    let mut arcs: Vec<(f64, f64)> = (0..QUADRANTS).map(quadrant_arc_degrees).collect();
    if arcs.iter().any(|(s, e)| e - s != 30.0) {
        return Err("arc width differs from 30 degrees".into());
    }
    arcs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in arcs.windows(2) {
        if pair[0].1 != pair[1].0 {
            return Err(format!("gap or overlap between {pair:?}"));
        }
    }
    if arcs.last().unwrap().1 - arcs[0].0 != 360.0 {
        return Err("arcs do not span 360 degrees".into());
    }
    for i in 0..36_000 {
        let deg = i as f64 / 100.0;
        let q = quadrant_for_angle(deg.to_radians());
        let (s, _) = quadrant_arc_degrees(q);
        if (deg - s).rem_euclid(360.0) >= 30.0 {
            return Err(format!("{deg} deg assigned to quadrant {q}"));
        }
    }
    Ok(format!("hint(90 deg) = ({}, {}); 12 disjoint 30-degree arcs tile the circle", v[0], v[1]))
}

fn ac8_codec_identity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..1000 {
        let (w, h) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let flow = FlowField::from_fn(w, h, |_, _| [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)]).unwrap();
        let bytes = encode_flo(&flow);
        let p = dir.path().join("f.flo");
        std::fs::write(&p, &bytes).unwrap();
        let read = read_flo(&p).map_err(|e| e.to_string())?;
        let q = dir.path().join("g.flo");
        write_flo(&read, &q).unwrap();
        if std::fs::read(&q).unwrap() != bytes || decode_flo(&bytes).unwrap() != flow {
            return Err(format!(".flo roundtrip {i} differs"));
        }

        let (gh, gw) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let t = rng.gen_range(1..4);
        let tok = gh * gw;
        let stack = AttentionStack::new(
            gh,
            gw,
            (0..t).map(|_| rng.gen()).collect(),
            (0..t).map(|_| (0..tok * tok).map(|_| rng.gen::<f32>() * 10.0).collect()).collect(),
        )
        .unwrap();
        let bytes = encode_atns(&stack);
        let p = dir.path().join("a.atns");
        std::fs::write(&p, &bytes).unwrap();
        let read = read_atns(&p).map_err(|e| e.to_string())?;
        let q = dir.path().join("b.atns");
        write_atns(&read, &q).unwrap();
        if std::fs::read(&q).unwrap() != bytes || decode_atns(&bytes).unwrap() != stack {
            return Err(format!(".atns roundtrip {i} differs"));
        }
    }
    Ok("1000 .flo + 1000 .atns file roundtrips bitwise identical".into())
}

fn ac9_static_region() -> Outcome {
    let (w, h) = (256usize, 256usize);
    let img = random_image(w, h, 3, 9);
    let mask = BinaryMask::from_fn(w, h, |x, _| x >= 128);
    let cfg = LoopConfig::new(120, 30, OutputFormat::PngSequence).unwrap();
    let mut report = Vec::new();
    // flow pointing into, away from, and along the static half
    for deg in [180.0f64, 0.0, 90.0] {
        let flow = synth_flow(&mask, deg.to_radians(), 2.0).unwrap();
        let mut changed = 0usize;
        let mut frames = 0usize;
        generate_loop(&img, &flow, &mask, &cfg, |_, frame| {
            frames += 1;
            for y in 0..h {
                for x in 0..128 {
                    if frame.pixel(x, y) != img.pixel(x, y) {
                        changed += 1;
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        if changed > 0 || frames != 121 {
            return Err(format!("theta {deg}: {changed} static pixels changed over {frames} frames"));
        }
        report.push(format!("{deg}"));
    }
    Ok(format!("121 frames x 3 directions ({} deg), 0 static pixels changed", report.join("/")))
}

fn frame_hashes(img: &Image, flow: &FlowField, mask: &BinaryMask, cfg: &LoopConfig, threads: usize) -> Vec<u64> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let mut hashes = Vec::new();
    pool.install(|| {
        generate_loop(img, flow, mask, cfg, |_, f| {
            let mut hs = DefaultHasher::new();
            f.to_u8().hash(&mut hs);
            hashes.push(hs.finish());
            Ok(())
        })
    })
    .unwrap();
    hashes
}

fn ac10_performance_and_determinism() -> Outcome {
    let (w, h) = (512usize, 512usize);
    let img = random_image(w, h, 3, 10);
    let mask = BinaryMask::from_fn(w, h, |x, y| y > 200 && (x + y) % 512 > 100);
    let flow = synth_flow(&mask, 330f64.to_radians(), 1.5).unwrap();
    let cfg = LoopConfig::new(120, 30, OutputFormat::PngSequence).unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let t = Instant::now();
    pool.install(|| write_loop(&img, &flow, &mask, &cfg, dir.path())).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let written = (0..=120).filter(|&n| frame_path(dir.path(), n, 120).is_file()).count();

    let four = frame_hashes(&img, &flow, &mask, &cfg, 4);
    let one = frame_hashes(&img, &flow, &mask, &cfg, 1);
    let three = frame_hashes(&img, &flow, &mask, &cfg, 3);
    let detail = format!(
        "512x512, N=120, {written} PNGs in {:.1} s on {} available core(s); frames identical for 1/3/4 threads: {}",
        elapsed.as_secs_f64(),
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        four == one && four == three
    );
    if elapsed < PIPELINE_BUDGET && written == 121 && four == one && four == three {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("AC1 constant-flow integration", ac1_constant_flow_integration),
        ("AC2 loop closure", ac2_loop_closure),
        ("AC3 zero-flow fixed point", ac3_zero_flow_fixed_point),
        ("AC4 splat conservation", ac4_splat_conservation),
        ("AC5 spectral recovery + ablation ordering", ac5_spectral_recovery),
        ("AC6 mask selection thresholds", ac6_mask_selection),
        ("AC7 direction formula + quadrant tiling", ac7_direction_formula),
        ("AC8 codec identity", ac8_codec_identity),
        ("AC9 static-region preservation", ac9_static_region),
        ("AC10 desk-scale performance + determinism", ac10_performance_and_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{:.2}s]", t.elapsed().as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{:.2}s]", t.elapsed().as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
