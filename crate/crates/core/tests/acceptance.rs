//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (outside the harness's capture) and fails when its criterion does.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use evanet_core::autodiff::{sigmoid, Checkpoint, GradCheckConfig, Graph, Tensor};
use evanet_core::gradsuite::run_suite;
use evanet_core::loss::{
    classify_pair, delta_term, f_value, loss_eva, violation_rate, weight, BorderPairs, LossConfig, LossScheme, PairCase,
    Reduce, Weighting,
};
use evanet_core::pipeline::{evaluate, predict_region, train, EvalReport, InputMode, OptimizerKind, TrainConfig};
use evanet_core::raster::{
    read_grid_bytes, reflect_pad, split_patches, stitch_patches, ElevationMap, Grid, LabelMap, PatchLayout, DRY, FLOOD,
    UNLABELED,
};
use evanet_core::terrain::{
    flood_truth, gen_region, gen_terrain, propagate_dry, propagate_flood, region_seed, PitfillThreshold, Region,
    SynthConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

fn verdict(name: &str, failures: &[String], started: Instant) {
    let secs = started.elapsed().as_secs_f64();
    let line = if failures.is_empty() {
        format!("PASS {name} ({secs:.1}s)\n")
    } else {
        format!("FAIL {name} ({secs:.1}s): {}\n", failures.join("; "))
    };
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(failures.is_empty(), "{line}");
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if n == 1 {
        0
    } else if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// The elevation-guided loss as a plain loop over labeled pixels and their
/// eight mirrored neighbors.
fn pair_loop_loss(scores: &[f64], gt: &[i8], h: &[f32], w: usize, ht: usize, weighting: Weighting) -> f64 {
    let hw = w * ht;
    let mut total = 0.0;
    for y in 0..ht {
        for x in 0..w {
            let p = y * w + x;
            if gt[p] == 0 {
                continue;
            }
            let (s_dry, s_flood) = (scores[p], scores[hw + p]);
            let f = if s_flood >= s_dry { sigmoid(s_flood) } else { -sigmoid(s_dry) };
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let n = mirror(y as isize + dy, ht) * w + mirror(x as isize + dx, w);
                    let dh = h[p] as f64 - h[n] as f64;
                    let push = -(gt[n] as f64) * dh;
                    let wgt = if push <= 0.0 {
                        0.0
                    } else {
                        match weighting {
                            Weighting::Binary => 1.0,
                            Weighting::EvaDiff => push,
                            Weighting::LogEvaDiff => (1.0 + push).ln(),
                        }
                    };
                    total += wgt * (1.0 - gt[n] as f64 * f);
                }
            }
        }
    }
    total
}

#[test]
fn loss_matches_pair_loop_oracle() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        let (w, h) = (32, 32);
        let scores: Vec<f64> = (0..2 * w * h).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let gt: Vec<i8> = (0..w * h).map(|_| rng.gen_range(-1..=1)).collect();
        let elev: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.0..30.0)).collect();
        let gt_map = LabelMap::from_vec(w, h, gt.clone()).unwrap();
        let h_map = ElevationMap::from_vec(w, h, elev.clone()).unwrap();
        for weighting in [Weighting::Binary, Weighting::EvaDiff, Weighting::LogEvaDiff] {
            let cfg = LossConfig {
                scheme: LossScheme::Eva,
                weighting,
                reduce: Reduce::Sum,
                border_pairs: BorderPairs::Include,
                lambda: 1.0,
            };
            let mut g = Graph::<f64>::new();
            let s = g.input(Tensor::chw(2, h, w, scores.clone()).unwrap());
            let l = loss_eva(&mut g, s, &gt_map, &h_map, &cfg).unwrap();
            let got = g.scalar_value(l);
            let want = pair_loop_loss(&scores, &gt, &elev, w, h, weighting);
            let e = rel_err(got, want);
            worst = worst.max(e);
            if e > 1e-10 {
                failures.push(format!("instance {instance} {weighting:?}: {got} vs {want}"));
            }
        }
    }
    eprintln!("max relative error {worst:.2e}");
    verdict("loss oracle (50 instances x 3 weightings, 1e-10)", &failures, t0);
}

#[test]
fn only_constrained_cases_carry_weight() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    for gt_n in [DRY, UNLABELED, FLOOD] {
        for dh in [-2.5, 0.0, 2.5] {
            // n flooded and higher than p, or n dry and lower than p.
            let constrained = (gt_n == FLOOD && dh < 0.0) || (gt_n == DRY && dh > 0.0);
            let want = match (gt_n, constrained) {
                (FLOOD, true) => PairCase::FloodedNeighborHigher,
                (FLOOD, false) => PairCase::FloodedNeighborNotHigher,
                (DRY, true) => PairCase::DryNeighborLower,
                (DRY, false) => PairCase::DryNeighborNotLower,
                _ => PairCase::UnlabeledNeighbor,
            };
            let case = classify_pair(gt_n, dh);
            if case != want || case.is_active() != constrained {
                failures.push(format!("gt_n {gt_n} dh {dh}: {case:?}"));
            }
            for scheme in [Weighting::Binary, Weighting::EvaDiff, Weighting::LogEvaDiff] {
                let w = weight(gt_n, dh, scheme);
                if (w > 0.0) != constrained || w < 0.0 {
                    failures.push(format!("gt_n {gt_n} dh {dh} {scheme:?}: weight {w}"));
                }
            }
        }
    }
    verdict("case exhaustion (9 combinations x 3 weightings)", &failures, t0);
}

#[test]
fn deviation_bounds_and_monotonicity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut failures = Vec::new();
    for i in 0..10_000 {
        let f = f_value(rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0));
        let (up, down) = (delta_term(FLOOD, f), delta_term(DRY, f));
        if !(up > 0.0 && up < 2.0 && down > 0.0 && down < 2.0) {
            failures.push(format!("sample {i}: f {f} gives {up}, {down}"));
        }
        if delta_term(UNLABELED, f) != 1.0 {
            failures.push(format!("sample {i}: unlabeled neighbor gives {}", delta_term(UNLABELED, f)));
        }
        let g = f_value(rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0));
        let (lo, hi) = if f <= g { (f, g) } else { (g, f) };
        // Falls with f toward a flooded neighbor, rises toward a dry one.
        if delta_term(FLOOD, hi) > delta_term(FLOOD, lo) || delta_term(DRY, hi) < delta_term(DRY, lo) {
            failures.push(format!("sample {i}: not monotone between {lo} and {hi}"));
        }
    }
    failures.truncate(5);
    verdict("delta bounds and monotonicity (10^4 samples)", &failures, t0);
}

#[test]
fn gradients_match_finite_differences() {
    let t0 = Instant::now();
    let cfg = GradCheckConfig::default();
    let mut failures = Vec::new();
    for r in run_suite(&cfg).unwrap() {
        let rep = &r.report;
        eprintln!(
            "{:<26} checked {:>4} kinks {:>3} max rel {:.2e}",
            r.name,
            rep.checked(),
            rep.kinks(),
            rep.max_rel_err()
        );
        if !rep.passed() || rep.max_rel_err() > 1e-4 || rep.checked() * 2 <= rep.entries.len() {
            failures.push(format!("{} (max rel {:.2e})", r.name, rep.max_rel_err()));
        }
    }
    verdict("gradient checks (ops, ERC layer, 2-block P=16 net, losses; 1e-4)", &failures, t0);
}

fn brute_conv(x: &[f64], cin: usize, h: usize, w: usize, k: &[f64], b: &[f64]) -> Vec<f64> {
    let cout = b.len();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b[o];
                for i in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = clamp(y as isize + ky as isize - 1, h);
                            let sx = clamp(xx as isize + kx as isize - 1, w);
                            acc += k[((o * cin + i) * 3 + ky) * 3 + kx] * x[(i * h + sy) * w + sx];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// Gather form of the stride-2 transposed convolution: output (oy, ox) takes
/// input (iy, ix) through tap (oy - 2 iy + 1, ox - 2 ix + 1).
fn brute_conv_t(x: &[f64], cin: usize, h: usize, w: usize, k: &[f64], b: &[f64]) -> Vec<f64> {
    let cout = b.len();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[o];
                for i in 0..cin {
                    for iy in 0..h {
                        for ix in 0..w {
                            let ky = oy as isize - 2 * iy as isize + 1;
                            let kx = ox as isize - 2 * ix as isize + 1;
                            if (0..3).contains(&ky) && (0..3).contains(&kx) {
                                let tap = ((i * cout + o) * 3 + ky as usize) * 3 + kx as usize;
                                acc += x[(i * h + iy) * w + ix] * k[tap];
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn convolutions_match_brute_force() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut failures = Vec::new();
    for trial in 0..20 {
        let (cin, cout) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let mut rv = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let (x, k, b) = (rv(cin * h * w), rv(cout * cin * 9), rv(cout));
        let (th, tw) = (h.div_ceil(2), w.div_ceil(2));
        let (xt, kt) = (rv(cin * th * tw), rv(cin * cout * 9));

        let mut g = Graph::<f64>::new();
        let xv = g.input(Tensor::chw(cin, h, w, x.clone()).unwrap());
        let kv = g.input(Tensor::new(vec![cout, cin, 3, 3], k.clone()).unwrap());
        let bv = g.input(Tensor::new(vec![cout], b.clone()).unwrap());
        let y = g.conv2d(xv, kv, bv).unwrap();
        let err = max_abs_diff(g.value(y), &brute_conv(&x, cin, h, w, &k, &b));
        if err > 1e-10 {
            failures.push(format!("conv2d trial {trial} ({cin}->{cout}, {h}x{w}): {err:.2e}"));
        }

        let xv = g.input(Tensor::chw(cin, th, tw, xt.clone()).unwrap());
        let kv = g.input(Tensor::new(vec![cin, cout, 3, 3], kt.clone()).unwrap());
        let y = g.conv_transpose2d(xv, kv, bv).unwrap();
        let err = max_abs_diff(g.value(y), &brute_conv_t(&xt, cin, th, tw, &kt, &b));
        if err > 1e-10 {
            failures.push(format!("conv_transpose2d trial {trial} ({cin}->{cout}, {th}x{tw}): {err:.2e}"));
        }
    }
    verdict("convolution oracle (replicate conv, transposed conv; 1e-10)", &failures, t0);
}

#[test]
fn padding_tiling_and_files_round_trip() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut failures = Vec::new();
    for trial in 0..100 {
        let ps = [2usize, 4, 8, 16, 32, 64][rng.gen_range(0..6)];
        let (w, h) = (rng.gen_range(ps / 2 + 2..=5 * ps), rng.gen_range(ps / 2 + 2..=5 * ps));
        let c = rng.gen_range(1..=3);
        let g = Grid::from_fn(w, h, c, |_, _, _| rng.gen::<f32>()).unwrap();
        let layout = PatchLayout::new(w, h, ps).unwrap();
        let padded = reflect_pad(&g, &layout).unwrap();
        let back = stitch_patches(&split_patches(&padded, &layout).unwrap(), &layout).unwrap();
        if back != g {
            failures.push(format!("trial {trial}: {w}x{h}x{c} patch {ps}"));
        }
    }

    let floats = Grid::from_fn(7, 5, 2, |c, y, x| {
        if (c, y, x) == (1, 2, 3) {
            f32::from_bits(0x7fc0_1234)
        } else {
            f32::from_bits(rng.gen::<u32>() & 0xff7f_ffff)
        }
    })
    .unwrap();
    let back = read_grid_bytes(&floats.to_fgrd_bytes()).unwrap().into_typed::<f32>().unwrap();
    let bits = |g: &Grid<f32>| g.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if bits(&back) != bits(&floats) || (back.width(), back.height(), back.channels()) != (7, 5, 2) {
        failures.push("FGRD float32 round trip".into());
    }
    let labels = Grid::from_fn(9, 4, 1, |_, _, _| rng.gen_range(-1i8..=1)).unwrap();
    if read_grid_bytes(&labels.to_fgrd_bytes()).unwrap().into_typed::<i8>().unwrap() != labels {
        failures.push("FGRD int8 round trip".into());
    }

    let mut ckpt = Checkpoint::default();
    for (i, name) in ["enc.0.spectral.w", "head.b", "x"].iter().enumerate() {
        let data = (0..6 * (i + 1)).map(|_| f32::from_bits(rng.gen::<u32>() & 0xff7f_ffff)).collect();
        ckpt.insert(*name, vec![i + 1, 3, 2], data);
    }
    let bytes = ckpt.to_bytes();
    let again = Checkpoint::from_bytes(&bytes).unwrap();
    if again.to_bytes() != bytes || again.tensors.len() != 3 {
        failures.push("EVAW1 round trip".into());
    }
    verdict("round trips (pad/split/stitch x100, FGRD, EVAW1)", &failures, t0);
}

#[test]
fn generator_truth_is_physics_consistent() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut failures = Vec::new();
    for k in 0..20 {
        let h = gen_terrain(&SynthConfig {
            width: 48,
            height: 40,
            seed: rng.gen(),
            ..SynthConfig::default()
        })
        .unwrap();
        let (lo, hi) = h.values().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let level = lo as f64 + rng.gen_range(0.1..0.9) * (hi - lo) as f64;
        let truth = flood_truth(&h, level);
        for border in [BorderPairs::Include, BorderPairs::Exclude] {
            let v = violation_rate(&truth, &truth, &h, border).unwrap();
            if v.violations != 0 || v.active_pairs == 0 {
                failures.push(format!("pair {k}: {} of {} active pairs violated", v.violations, v.active_pairs));
            }
        }
    }
    let layout = PatchLayout::new(1856, 4104, 128).unwrap();
    let got = (layout.pad_left, layout.pad_right, layout.pad_top, layout.pad_bottom, layout.cols, layout.rows);
    if got != (32, 32, 60, 60, 15, 33) || (layout.padded_width(), layout.padded_height()) != (1920, 4224) {
        failures.push(format!("1856x4104 layout {got:?}"));
    }
    verdict("physics-consistent truth (20 pairs) and 1856x4104 padding", &failures, t0);
}

/// Pixels reachable from `seed` over 8-neighbors, stepping `c -> q` when `admit(h(c), h(q))`.
fn reach(h: &ElevationMap, seed: (usize, usize), admit: impl Fn(f32, f32) -> bool) -> Vec<bool> {
    let (w, ht) = (h.width(), h.height());
    let mut seen = vec![false; w * ht];
    let mut queue = VecDeque::from([seed]);
    seen[seed.0 * w + seed.1] = true;
    while let Some((r, c)) = queue.pop_front() {
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= ht as isize || nc >= w as isize {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if !seen[nr * w + nc] && admit(h.at(r, c), h.at(nr, nc)) {
                    seen[nr * w + nc] = true;
                    queue.push_back((nr, nc));
                }
            }
        }
    }
    seen
}

#[test]
fn bfs_propagation_examples_and_properties() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    let valley = ElevationMap::from_vec(5, 1, vec![5.0, 3.0, 1.0, 3.0, 5.0]).unwrap();
    let got = propagate_flood(&valley, (0, 1), PitfillThreshold::Seed).unwrap();
    if got != [false, true, true, true, false] {
        failures.push(format!("flood on [5,3,1,3,5] from 1: {got:?}"));
    }
    let hill = ElevationMap::from_vec(5, 1, vec![1.0, 2.0, 3.0, 2.0, 1.0]).unwrap();
    let got = propagate_dry(&hill, (0, 0)).unwrap();
    if got != [true, true, true, false, false] {
        failures.push(format!("dry on [1,2,3,2,1] from 0: {got:?}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for t in 0..10 {
        let h = gen_terrain(&SynthConfig {
            width: 40,
            height: 36,
            seed: 1000 + t,
            ..SynthConfig::default()
        })
        .unwrap();
        for _ in 0..10 {
            let seed = (rng.gen_range(0..h.height()), rng.gen_range(0..h.width()));
            let level = h.at(seed.0, seed.1);
            let flood = propagate_flood(&h, seed, PitfillThreshold::Seed).unwrap();
            if flood.iter().zip(h.values()).any(|(&f, &v)| f && v > level) {
                failures.push(format!("terrain {t} seed {seed:?}: flood set rises above the seed"));
            }
            if flood != reach(&h, seed, |_, q| q <= level) {
                failures.push(format!("terrain {t} seed {seed:?}: flood set differs from the fill oracle"));
            }
            if propagate_dry(&h, seed).unwrap() != reach(&h, seed, |c, q| q >= c) {
                failures.push(format!("terrain {t} seed {seed:?}: dry set differs from the climb oracle"));
            }
        }
    }
    failures.truncate(5);
    verdict("BFS propagation (hand examples, 100 seeds on 10 terrains)", &failures, t0);
}

#[test]
fn metrics_follow_the_confusion_matrix() {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    // Dry as positive: TP 3, FP 1, FN 1, TN 5, plus two unlabeled pixels.
    let gt = LabelMap::from_vec(12, 1, vec![-1, -1, -1, -1, 1, 1, 1, 1, 1, 1, 0, 0]).unwrap();
    let pred = LabelMap::from_vec(12, 1, vec![-1, -1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1]).unwrap();
    let r = evaluate(&pred, &gt).unwrap();
    let d = r.dry;
    if (d.precision, d.recall, d.accuracy, d.f1) != (0.75, 0.75, 0.8, 0.75) || r.labeled_pixels != 10 {
        failures.push(format!("hand confusion: {d:?}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for trial in 0..200 {
        let n = rng.gen_range(1..60);
        let gt: Vec<i8> = (0..n).map(|_| rng.gen_range(-1..=1)).collect();
        if gt.iter().all(|&v| v == UNLABELED) {
            continue;
        }
        let pred: Vec<i8> = (0..n).map(|_| if rng.gen() { FLOOD } else { DRY }).collect();
        let r = evaluate(
            &LabelMap::from_vec(n, 1, pred.clone()).unwrap(),
            &LabelMap::from_vec(n, 1, gt.clone()).unwrap(),
        )
        .unwrap();
        let count = |t: i8, p: i8| gt.iter().zip(&pred).filter(|&(&a, &b)| a == t && b == p).count() as f64;
        let (ff, fd, df, dd) = (count(FLOOD, FLOOD), count(FLOOD, DRY), count(DRY, FLOOD), count(DRY, DRY));
        let prf = |tp: f64, fp: f64, fn_: f64| {
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f)
        };
        let acc = (ff + dd) / (ff + fd + df + dd);
        let flood = prf(ff, df, fd);
        let dry = prf(dd, fd, df);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        let got_flood = (r.flood.precision, r.flood.recall, r.flood.f1);
        let got_dry = (r.dry.precision, r.dry.recall, r.dry.f1);
        let same = |a: (f64, f64, f64), b: (f64, f64, f64)| close(a.0, b.0) && close(a.1, b.1) && close(a.2, b.2);
        if r.dry.accuracy != r.flood.accuracy || !close(r.flood.accuracy, acc) || !same(got_flood, flood) || !same(got_dry, dry) {
            failures.push(format!("trial {trial}: {r:?}"));
        }
    }
    failures.truncate(3);
    verdict("metrics (hand confusion, shared accuracy, 200 recomputed reports)", &failures, t0);
}

const EXPERIMENT_EPOCHS: usize = 30;
/// Plain SGD on summed losses. Under Adam the elevation-only arm saturates the
/// winning sigmoid, where its gradient is exactly zero, and collapses to all-dry.
const EXPERIMENT_LR: f64 = 3e-5;

fn experiment_regions() -> (Vec<Region>, Region) {
    let base = SynthConfig {
        width: 256,
        height: 256,
        seed: 0,
        ambiguity_fraction: 0.15,
        canopy_fraction: 0.2,
        ..SynthConfig::default()
    };
    let mut regions: Vec<Region> = (0..3)
        .map(|k| {
            gen_region(&SynthConfig {
                seed: region_seed(base.seed, k),
                ..base.clone()
            })
            .unwrap()
        })
        .collect();
    let test = regions.pop().unwrap();
    (regions, test)
}

/// Truth restricted to the pixels the canopy hid from the annotations.
fn canopy_truth(region: &Region) -> LabelMap {
    let values = region
        .labels
        .values()
        .iter()
        .zip(region.truth.values())
        .map(|(&l, &t)| if l == UNLABELED { t } else { UNLABELED })
        .collect();
    LabelMap::from_vec(region.width(), region.height(), values).unwrap()
}

#[derive(Serialize)]
struct ArmReport {
    arm: &'static str,
    seed: u64,
    canopy: EvalReport,
    full: EvalReport,
    violation_rate: f64,
    losses: Vec<f64>,
}

fn arm_config(scheme: LossScheme, mode: InputMode, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: EXPERIMENT_EPOCHS,
        lr: EXPERIMENT_LR,
        batch_size: 4,
        optimizer: OptimizerKind::Sgd,
        seed,
        checkpoint_every: 0,
        input_mode: mode,
        patch_size: 32,
        loss: LossConfig {
            scheme,
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Trains one arm into `out`, scores it on the test region and writes `report.json`.
fn run_arm(arm: &'static str, cfg: &TrainConfig, train_set: &[Region], test: &Region, out: &Path) -> ArmReport {
    let outcome = train(cfg, train_set, out, None).unwrap();
    let pred = predict_region(&outcome.model, test).unwrap();
    let report = ArmReport {
        arm,
        seed: cfg.seed,
        canopy: evaluate(&pred.hard, &canopy_truth(test)).unwrap(),
        full: evaluate(&pred.hard, &test.truth).unwrap(),
        violation_rate: violation_rate(&pred.hard, &test.truth, &test.elevation, BorderPairs::Include)
            .unwrap()
            .rate,
        losses: outcome.history.iter().map(|s| s.mean_loss).collect(),
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report).unwrap()).unwrap();
    report
}

#[test]
fn directional_synthetic_experiment() {
    let t0 = Instant::now();
    let (train_set, test) = experiment_regions();
    let dir = tempfile::tempdir().unwrap();
    let arms = [
        ("a", LossScheme::Ce, InputMode::C3),
        ("b", LossScheme::Ce, InputMode::C7),
        ("c", LossScheme::CeEva, InputMode::C7),
        ("d", LossScheme::Eva, InputMode::C7),
    ];
    let mut failures = Vec::new();
    let mut wins = 0;
    for seed in 1..=3u64 {
        let mut reports = Vec::new();
        for (arm, scheme, mode) in arms {
            let out = dir.path().join(format!("{arm}{seed}"));
            let r = run_arm(arm, &arm_config(scheme, mode, seed), &train_set, &test, &out);
            eprintln!(
                "seed {seed} arm {arm}: canopy F1 {:.4}, full F1 {:.4}, violation rate {:.4}, loss {:.1} / {:.1} / {:.1}",
                r.canopy.flood.f1,
                r.full.flood.f1,
                r.violation_rate,
                r.losses[0],
                r.losses[19],
                r.losses[EXPERIMENT_EPOCHS - 1]
            );
            if r.losses[19] >= r.losses[0] {
                failures.push(format!("seed {seed} arm {arm}: epoch-20 loss {} >= epoch-1 loss {}", r.losses[19], r.losses[0]));
            }
            reports.push(r);
        }
        let (a, d) = (&reports[0], &reports[3]);
        if d.canopy.flood.f1 >= a.canopy.flood.f1 && d.violation_rate <= a.violation_rate {
            wins += 1;
        }
    }
    if wins < 2 {
        failures.push(format!("7C elevation loss beat 3C cross-entropy on canopy F1 and violation rate in {wins} of 3 seeds"));
    }
    verdict("directional experiment (4 arms x 3 seeds x 30 epochs)", &failures, t0);
}

#[test]
fn full_run_is_bit_reproducible() {
    let t0 = Instant::now();
    let (train_set, test) = experiment_regions();
    let dir = tempfile::tempdir().unwrap();
    let cfg = arm_config(LossScheme::Eva, InputMode::C7, 1);
    let files = ["loss.csv", "report.json", "final.evaw"];
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        run_arm("d", &cfg, &train_set, &test, &out);
        runs.push(files.map(|f| fs::read(out.join(f)).unwrap()));
    }
    let failures: Vec<String> = files
        .iter()
        .zip(runs[0].iter().zip(&runs[1]))
        .filter(|(_, (a, b))| a != b)
        .map(|(f, _)| format!("{f} differs between identical runs"))
        .collect();
    verdict("determinism (train and evaluate twice, byte-identical outputs)", &failures, t0);
}
