//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (visible with `cargo test --test acceptance -- --nocapture`). Criteria
//! share a lock so wall-clock measurements run alone.

use std::process::Command;
use std::sync::{Mutex, MutexGuard, PoisonError};
use std::time::Instant;

use hgla::bench::bench;
use hgla::config::RunConfig;

use hgla_core::block::{local_branch, BlockConfig, BlockParams, FusionGate};
use hgla_core::cost::{
    analytic_total, counted_flops, ratio_equals, speedup, FlopCounter, Rational,
};
use hgla_core::grad::{finite_diff_check, Tensor64};
use hgla_core::metrics::hd_mse;
use hgla_core::ops::{depthwise_compress, DepthwiseKernel2D};
use hgla_core::oracle::{
    assert_degenerate_equivalence, brute_force_resample, full_attention_counted,
};
use hgla_core::rng::SplitMix64;
use hgla_core::{aggregate, make_partition, partition, random_latent, VideoLatent};

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(PoisonError::into_inner)
}

fn report(id: u32, pass: bool, detail: &str) {
    println!(
        "criterion {id:02} {}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id:02} failed: {detail}");
}

#[test]
fn criterion_01_degenerate_oracle_equivalence() {
    let _guard = serial();
    let start = Instant::now();
    let result = assert_degenerate_equivalence(0, [1, 2, 8, 8, 8], 1e-5).expect("runs");
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        result.pass && elapsed < 5.0,
        &format!(
            "block vs full attention max abs diff {:.2e} (tol 1e-5), {elapsed:.2} s (< 5 s)",
            result.max_abs_diff
        ),
    );
}

#[test]
fn criterion_02_speedup_law_and_counted_ratio() {
    let _guard = serial();
    let law = speedup(4).expect("valid");
    let exact_rational = law == Rational::new(1024, 84).expect("valid");

    let (t, h, w, d, k) = (1usize, 64usize, 64usize, 16usize, 4usize);
    let cfg = BlockConfig::new(k, 2, d, 4 * d, 1, 0).expect("valid");
    let params = BlockParams::init(&cfg, 0).expect("valid");
    let z = random_latent([1, t, h, w, d], 0).expect("valid");
    let counts = counted_flops(&z, &cfg, &params).expect("runs");
    let counter = FlopCounter::new();
    full_attention_counted(
        &z,
        &params.base,
        &params.norm_attn,
        &params.norm_ffn,
        Some(&counter),
    )
    .expect("runs");
    let full_map = counter.snapshot().map;
    let decomposed_map = counts.map_total();
    let ratio_exact = ratio_equals(full_map, decomposed_map, law)
        && 1024u128 * decomposed_map as u128 == 84u128 * full_map as u128;

    report(
        2,
        exact_rational && ratio_exact,
        &format!(
            "speedup(4) = {law} ({:.4}); counted map ratio {full_map}/{decomposed_map} = 1024/84 exactly",
            law.to_f64()
        ),
    );
}

#[test]
fn criterion_03_analytic_identity_ten_configs() {
    let _guard = serial();
    let configs = [
        (1usize, 8usize, 8usize, 4usize, 2usize),
        (2, 8, 8, 4, 2),
        (1, 16, 16, 8, 2),
        (2, 16, 16, 8, 4),
        (1, 64, 64, 16, 4),
        (4, 32, 32, 8, 4),
        (3, 24, 24, 4, 6),
        (1, 48, 48, 2, 6),
        (2, 64, 32, 4, 8),
        (1, 80, 80, 2, 10),
    ];
    let mut all = true;
    for (t, h, w, d, k) in configs {
        let total = analytic_total(t, h, w, d, k).expect("valid");
        let thw = (t * h * w) as u128;
        let (du, ku) = (d as u128, k as u128);
        let expect = 5 * thw * thw * du / (4 * ku * ku) + thw * thw * du / (ku * ku * ku * ku);
        all &= total == expect;
    }
    report(
        3,
        all,
        "T(n) = (5/4)(THW)^2 D/K^2 + (THW)^2 D/K^4 holds as exact integers on 10 configs",
    );
}

#[test]
fn criterion_04_wall_clock_ratio() {
    let _guard = serial();
    let start = Instant::now();
    let cfg = RunConfig {
        t: 4,
        h: 128,
        w: 128,
        d: 64,
        k: 4,
        rank: 4,
        layers: 1,
        heads: 1,
        seed: 0,
        timestep: 500.0,
        tolerance: 1e-5,
    };
    let result = bench(&cfg, 5, 0).expect("bench runs");
    let elapsed = start.elapsed().as_secs_f64();
    let full_ms = result.wall.full_ms.expect("full attention timed");
    let block_ms = result.wall.block_ms;
    let ratio_ok = block_ms <= full_ms / 3.0;
    let budget_ok = elapsed < 600.0;
    report(
        4,
        result.full_timed && ratio_ok && budget_ok,
        &format!(
            "decomposed median {block_ms:.0} ms vs full {full_ms:.0} ms \
             (ratio {:.3} <= 1/3), suite {elapsed:.0} s (< 600 s)",
            block_ms / full_ms
        ),
    );
}

#[test]
fn criterion_05_compression_init_average_pooling() {
    let _guard = serial();
    let mut rng = SplitMix64::new(505);
    let mut worst = 0.0f32;
    for _ in 0..50 {
        let k = 1 + (rng.next_u64() % 4) as usize;
        let blocks_h = 1 + (rng.next_u64() % 6) as usize;
        let blocks_w = 1 + (rng.next_u64() % 6) as usize;
        let d = 1 + (rng.next_u64() % 3) as usize;
        let (h, w) = (blocks_h * k, blocks_w * k);
        let z = random_latent([1, 1, h, w, d], rng.next_u64()).expect("valid");
        let kern = DepthwiseKernel2D::averaging(k, d).expect("valid");
        let fast = depthwise_compress(&z, &kern).expect("divisible");
        for bh in 0..blocks_h {
            for bw in 0..blocks_w {
                for c in 0..d {
                    let mut sum = 0.0f64;
                    for i in 0..k {
                        for j in 0..k {
                            sum += z.get(0, 0, bh * k + i, bw * k + j, c) as f64;
                        }
                    }
                    let mean = (sum / (k * k) as f64) as f32;
                    worst = worst.max((fast.get(0, 0, bh, bw, c) - mean).abs());
                }
            }
        }
    }
    report(
        5,
        worst <= 1e-6,
        &format!("50 random frames, max |conv - pooling oracle| = {worst:.2e} (tol 1e-6)"),
    );
}

#[test]
fn criterion_06_partition_algebra() {
    let _guard = serial();
    let mut rng = SplitMix64::new(606);
    let mut round_trips_ok = true;
    for _ in 0..100 {
        let h = 1 + (rng.next_u64() % 14) as usize;
        let w = 1 + (rng.next_u64() % 14) as usize;
        let p = 1 + (rng.next_u64() as usize) % h.min(w);
        let z = random_latent(
            [
                1 + (rng.next_u64() % 2) as usize,
                1 + (rng.next_u64() % 3) as usize,
                h,
                w,
                2,
            ],
            rng.next_u64(),
        )
        .expect("valid");
        let spec = make_partition(h, w, p).expect("valid");
        let windows = partition(&z, &spec).expect("partition");
        let back = aggregate(&windows, &spec).expect("aggregate");
        round_trips_ok &= back.data() == z.data();
    }

    let mut disjoint_ok = true;
    for h in [20usize, 40, 60] {
        for k in [2usize, 3, 4] {
            let a = make_partition(h, h, k).expect("valid");
            let b = make_partition(h, h, k + 1).expect("valid");
            let interior_a = &a.row_bounds()[1..k];
            let interior_b = &b.row_bounds()[1..k + 1];
            disjoint_ok &= interior_a.iter().all(|x| !interior_b.contains(x));
        }
    }
    report(
        6,
        round_trips_ok && disjoint_ok,
        "aggregate∘partition bitwise on 100 cases; K vs K+1 interior boundaries disjoint",
    );
}

#[test]
fn criterion_07_gradient_validity() {
    let _guard = serial();
    let start = Instant::now();
    let rand_t = |dims: Vec<usize>, seed: u64, scale: f64| {
        let mut rng = SplitMix64::new(seed);
        let len = dims.iter().product();
        Tensor64::new(dims, (0..len).map(|_| rng.next_f64() * scale).collect()).expect("valid")
    };

    // (a) softmax + dot.
    let err_a = finite_diff_check(
        |t, v| {
            let p = t.softmax(v[0])?;
            t.dot(p, v[1])
        },
        &[rand_t(vec![16], 1, 1.0), rand_t(vec![16], 2, 1.0)],
    )
    .expect("runs");

    // (b) single-window attention sub-block, every weight a leaf; N = 6.
    let d = 4usize;
    let inputs_b = vec![
        rand_t(vec![6, d], 10, 1.0),
        rand_t(vec![d, d], 11, 0.5),
        rand_t(vec![d, d], 12, 0.5),
        rand_t(vec![d, d], 13, 0.5),
        rand_t(vec![d, d], 14, 0.5),
        rand_t(vec![d, 2 * d], 15, 0.5),
        rand_t(vec![2 * d], 16, 0.1),
        rand_t(vec![2 * d, d], 17, 0.5),
        rand_t(vec![d], 18, 0.1),
    ];
    let err_b = finite_diff_check(
        |t, v| {
            let scale = 1.0 / (d as f64).sqrt();
            let q = t.matmul(v[0], v[1])?;
            let k = t.matmul(v[0], v[2])?;
            let val = t.matmul(v[0], v[3])?;
            let s = t.score(q, k, scale)?;
            let p = t.softmax(s)?;
            let ctx = t.apply_attn(p, val)?;
            let o = t.matmul(ctx, v[4])?;
            let h = t.add(v[0], o)?;
            let f1 = t.matmul(h, v[5])?;
            let f1 = t.add_row_bias(f1, v[6])?;
            let f1 = t.silu(f1)?;
            let f2 = t.matmul(f1, v[7])?;
            let f2 = t.add_row_bias(f2, v[8])?;
            let out = t.add(h, f2)?;
            let sq = t.mul(out, out)?;
            t.sum(sq)
        },
        &inputs_b,
    )
    .expect("runs");

    // (c) depthwise-compress -> attention -> bilinear -> conv3d; 8 tokens.
    let (tt, hh, ww, dd) = (2usize, 4usize, 4usize, 2usize);
    let n = tt * (hh / 2) * (ww / 2);
    let inputs_c = vec![
        rand_t(vec![1, tt, hh, ww, dd], 20, 1.0),
        rand_t(vec![dd * 4], 21, 0.3),
        rand_t(vec![dd], 22, 0.1),
        rand_t(vec![dd, dd], 23, 0.5),
        rand_t(vec![dd * 27], 24, 0.2),
        rand_t(vec![dd], 25, 0.1),
    ];
    let err_c = finite_diff_check(
        |t, v| {
            let scale = 1.0 / (dd as f64).sqrt();
            let c = t.depthwise_compress(v[0], v[1], v[2], 2, false)?;
            let tok = t.reshape(c, vec![n, dd])?;
            let q = t.matmul(tok, v[3])?;
            let s = t.score(q, tok, scale)?;
            let p = t.softmax(s)?;
            let o = t.apply_attn(p, tok)?;
            let back = t.reshape(o, vec![1, tt, hh / 2, ww / 2, dd])?;
            let up = t.bilinear(back, hh, ww)?;
            let conv = t.conv3d(up, v[4], v[5], (3, 3, 3))?;
            let sq = t.mul(conv, conv)?;
            t.sum(sq)
        },
        &inputs_c,
    )
    .expect("runs");

    let elapsed = start.elapsed().as_secs_f64();
    report(
        7,
        err_a <= 1e-5 && err_b <= 1e-5 && err_c <= 1e-5 && elapsed < 120.0,
        &format!(
            "rel err vs central differences: softmax+dot {err_a:.2e}, attention sub-block \
             {err_b:.2e}, compress pipeline {err_c:.2e} (tol 1e-5), {elapsed:.1} s (< 120 s)"
        ),
    );
}

#[test]
fn criterion_08_fusion_gate() {
    let _guard = serial();
    let neutral = FusionGate::neutral(8, 3);
    let a = random_latent([1, 2, 4, 4, 8], 1).expect("valid");
    let b = random_latent([1, 2, 4, 4, 8], 2).expect("valid");
    let fused = hgla_core::block::fuse(&a, &b, 500.0, &neutral).expect("valid");
    let mut exact_mean = true;
    for ((f, x), y) in fused.data().iter().zip(a.data()).zip(b.data()) {
        exact_mean &= *f == (x + y) / 2.0;
    }

    let mut open_interval = true;
    for seed in 0..5u64 {
        let gate = FusionGate::random(8, seed);
        for &t in &[0.0f32, 500.0, 999.0] {
            open_interval &= gate
                .alpha(t)
                .expect("valid")
                .iter()
                .all(|&x| x > 0.0 && x < 1.0);
        }
    }
    report(
        8,
        exact_mean && open_interval,
        "zero-init final layer fuses to (z_g + z_l)/2 exactly; alpha in (0,1) at t in {0,500,999}",
    );
}

#[test]
fn criterion_09_window_locality() {
    let _guard = serial();
    let cfg = BlockConfig::new(2, 1, 4, 8, 1, 0).expect("valid");
    let params = BlockParams::random(&cfg, 9).expect("valid");
    let z = random_latent([1, 2, 8, 8, 4], 10).expect("valid");
    let base = local_branch(&z, &cfg, &params).expect("runs");

    // Delta inside window (0, 1): rows 0..4, cols 4..8.
    let mut poked = z.clone();
    let idx = poked.index(0, 0, 2, 6, 1);
    poked.data_mut()[idx] += 0.25;
    let out = local_branch(&poked, &cfg, &params).expect("runs");

    let mut outside = 0.0f32;
    let mut inside = 0.0f32;
    for t in 0..2 {
        for h in 0..8 {
            for w in 0..8 {
                for d in 0..4 {
                    let delta = (out.get(0, t, h, w, d) - base.get(0, t, h, w, d)).abs();
                    if h < 4 && w >= 4 {
                        inside = inside.max(delta);
                    } else {
                        outside = outside.max(delta);
                    }
                }
            }
        }
    }
    report(
        9,
        outside == 0.0 && inside > 0.0,
        &format!(
            "perturbation stays in window (0,1): outside diff {outside}, inside diff {inside:.2e}"
        ),
    );
}

#[test]
fn criterion_10_hd_mse() {
    let _guard = serial();
    let constant = VideoLatent::new([1, 1, 32, 32, 1], vec![0.5; 32 * 32]).expect("valid");
    let zero = hd_mse(&constant).expect("runs");

    let v = random_latent([1, 2, 64, 64, 1], 42).expect("valid");
    let result = hd_mse(&v).expect("runs");
    let mut oracle_ok = true;
    for (i, &(factor, got)) in result.per_factor.iter().enumerate() {
        let _ = i;
        let (hd, wd) = (64usize.div_ceil(factor), 64usize.div_ceil(factor));
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for t in 0..2 {
            let frame: Vec<f32> = (0..64 * 64).map(|p| v.data()[t * 64 * 64 + p]).collect();
            let down = brute_force_resample(&frame, 64, 64, hd, wd).expect("runs");
            let rec = brute_force_resample(&down, hd, wd, 64, 64).expect("runs");
            for (a, b) in frame.iter().zip(&rec) {
                let d = (*a - *b) as f64;
                sum += d * d;
                count += 1;
            }
        }
        oracle_ok &= (got - sum / count as f64).abs() < 1e-6;
    }

    let c = 3.0f32;
    let scaled =
        VideoLatent::new(v.dims(), v.data().iter().map(|x| x * c).collect()).expect("valid");
    let big = hd_mse(&scaled).expect("runs");
    let mut scale_ok = true;
    for ((_, a), (_, b)) in result.per_factor.iter().zip(&big.per_factor) {
        scale_ok &= (b - a * (c as f64) * (c as f64)).abs() / b.max(1e-30) < 1e-6;
    }

    report(
        10,
        zero.total == 0.0 && oracle_ok && scale_ok,
        &format!(
            "constant -> {}; 64x64 vs brute-force oracle within 1e-6; c^2 scale equivariance",
            zero.total
        ),
    );
}

#[test]
fn criterion_11_demo_determinism() {
    let _guard = serial();
    let dir = tempfile::tempdir().expect("tempdir");
    let bin = env!("CARGO_BIN_EXE_hgla");
    let run = |out: &std::path::Path, threads: &str| {
        let status = Command::new(bin)
            .args([
                "demo",
                "--seed",
                "7",
                "--threads",
                threads,
                "--out",
                out.to_str().expect("utf-8 path"),
            ])
            .status()
            .expect("demo runs");
        assert!(status.success(), "demo exited with {status}");
    };
    let (a, b, c) = (
        dir.path().join("a.ugt"),
        dir.path().join("b.ugt"),
        dir.path().join("c.ugt"),
    );
    run(&a, "1");
    run(&b, "1");
    run(&c, "4");
    let bytes_a = std::fs::read(&a).expect("read");
    let bytes_b = std::fs::read(&b).expect("read");
    let bytes_c = std::fs::read(&c).expect("read");
    report(
        11,
        bytes_a == bytes_b && bytes_a == bytes_c,
        &format!(
            "{} bytes identical across two runs and across --threads 1 vs --threads 4",
            bytes_a.len()
        ),
    );
}
