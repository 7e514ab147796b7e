//! The invariant suite behind `hgla verify`: partition algebra, kernel
//! initializations, gate behavior, gradient checks and the cost laws, each
//! reported as a named pass/fail with a one-line detail.

use serde::Serialize;

use hgla_core::block::{fuse, FusionGate};
use hgla_core::cost::{analytic_total, ratio_equals, speedup, Rational};
use hgla_core::grad::{finite_diff_check, Tensor64};
use hgla_core::ops::{bilinear_resample, conv3d, depthwise_compress, DepthwiseKernel2D, Kernel3D};
use hgla_core::oracle::assert_degenerate_equivalence;
use hgla_core::rng::SplitMix64;
use hgla_core::{aggregate, make_partition, partition, random_latent};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

/// Runs the whole suite. `inject_fault` flips the sign of one compression
/// weight inside the pooling check, which must make exactly that check fail;
/// it exists so the harness can prove it reports failures.
pub fn run_verification(inject_fault: bool) -> Vec<Check> {
    vec![
        partition_round_trip(),
        window_balance(),
        boundary_disjointness(),
        pooling_init_equality(inject_fault),
        bilinear_identity(),
        conv3d_identity(),
        gate_neutrality(),
        gate_open_interval(),
        gradient_softmax_dot(),
        gradient_attention_sub_block(),
        gradient_compress_pipeline(),
        speedup_law(),
        degenerate_equivalence_small(),
    ]
}

fn partition_round_trip() -> Check {
    let mut rng = SplitMix64::new(41);
    let mut failures = 0usize;
    let cases = 20usize;
    for _ in 0..cases {
        let h = 1 + (rng.next_u64() % 12) as usize;
        let w = 1 + (rng.next_u64() % 12) as usize;
        let p = 1 + (rng.next_u64() as usize) % h.min(w);
        let z = random_latent([1, 2, h, w, 3], rng.next_u64()).expect("valid dims");
        let spec = make_partition(h, w, p).expect("valid partition");
        let windows = partition(&z, &spec).expect("partition");
        let back = aggregate(&windows, &spec).expect("aggregate");
        if back.data() != z.data() {
            failures += 1;
        }
    }
    Check::new(
        "partition_round_trip",
        failures == 0,
        format!(
            "{}/{cases} random (shape, P) cases bitwise identical",
            cases - failures
        ),
    )
}

fn window_balance() -> Check {
    let mut worst = 0usize;
    let mut ok = true;
    for (h, p) in [(20usize, 4usize), (5, 2), (23, 7), (64, 5)] {
        let spec = make_partition(h, h, p).expect("valid");
        let sizes: Vec<usize> = spec.row_bounds().windows(2).map(|b| b[1] - b[0]).collect();
        let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        worst = worst.max(spread);
        ok &= spread <= 1 && sizes.iter().sum::<usize>() == h;
    }
    Check::new(
        "window_balance",
        ok,
        format!("max extent spread {worst} (must be <= 1)"),
    )
}

fn boundary_disjointness() -> Check {
    let mut ok = true;
    for h in [20usize, 40, 60] {
        for k in [2usize, 3, 4] {
            let a = make_partition(h, h, k).expect("valid");
            let b = make_partition(h, h, k + 1).expect("valid");
            let interior_a = &a.row_bounds()[1..k];
            let interior_b = &b.row_bounds()[1..k + 1];
            ok &= interior_a.iter().all(|x| !interior_b.contains(x));
        }
    }
    Check::new(
        "boundary_disjointness",
        ok,
        "K vs K+1 interior boundaries for H in {20,40,60}, K in {2,3,4}".to_string(),
    )
}

fn pooling_init_equality(inject_fault: bool) -> Check {
    let mut rng = SplitMix64::new(31);
    let mut worst = 0.0f32;
    for frame in 0..10 {
        let k = 1 + (rng.next_u64() % 4) as usize;
        let blocks = 1 + (rng.next_u64() % 5) as usize;
        let d = 1 + (rng.next_u64() % 3) as usize;
        let size = k * blocks;
        let z = random_latent([1, 1, size, size, d], rng.next_u64()).expect("valid");
        let mut kern = DepthwiseKernel2D::averaging(k, d).expect("valid");
        if inject_fault && frame == 0 {
            let mut w = kern.weights().to_vec();
            w[0] = -w[0];
            kern = DepthwiseKernel2D::new(k, d, w, kern.bias().to_vec()).expect("valid");
        }
        let fast = depthwise_compress(&z, &kern).expect("divisible");
        for bo in 0..blocks {
            for bi in 0..blocks {
                for c in 0..d {
                    let mut sum = 0.0f64;
                    for i in 0..k {
                        for j in 0..k {
                            sum += z.get(0, 0, bo * k + i, bi * k + j, c) as f64;
                        }
                    }
                    let mean = (sum / (k * k) as f64) as f32;
                    worst = worst.max((fast.get(0, 0, bo, bi, c) - mean).abs());
                }
            }
        }
    }
    Check::new(
        "pooling_init_equality",
        worst <= 1e-6,
        format!("max |conv - pooling oracle| = {worst:.2e} (tolerance 1e-6)"),
    )
}

fn bilinear_identity() -> Check {
    let z = random_latent([1, 2, 7, 5, 3], 8).expect("valid");
    let same = bilinear_resample(&z, 7, 5).expect("valid");
    let identity_diff = same.max_abs_diff(&z).expect("same dims");

    let row = hgla_core::VideoLatent::new([1, 1, 1, 2, 1], vec![0.0, 2.0]).expect("valid");
    let up = bilinear_resample(&row, 1, 4).expect("valid");
    let hand = [0.0f32, 0.5, 1.5, 2.0];
    let hand_diff = up
        .data()
        .iter()
        .zip(&hand)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);

    Check::new(
        "bilinear_identity",
        identity_diff <= 1e-6 && hand_diff <= 1e-6,
        format!("identity diff {identity_diff:.2e}, half-pixel fixture diff {hand_diff:.2e}"),
    )
}

fn conv3d_identity() -> Check {
    let z = random_latent([1, 3, 4, 4, 2], 9).expect("valid");
    let kern = Kernel3D::identity(3, 3, 3, 2).expect("valid");
    let out = conv3d(&z, &kern).expect("valid");
    let exact = out.data() == z.data();
    Check::new(
        "conv3d_identity",
        exact,
        "identity-initialized 3D convolution reproduces its input bitwise".to_string(),
    )
}

fn gate_neutrality() -> Check {
    let gate = FusionGate::neutral(4, 7);
    let a = random_latent([1, 1, 2, 2, 4], 1).expect("valid");
    let b = random_latent([1, 1, 2, 2, 4], 2).expect("valid");
    let mut exact = true;
    for &t in &[0.0f32, 500.0, 999.0] {
        let alpha = gate.alpha(t).expect("valid");
        exact &= alpha.iter().all(|&x| x == 0.5);
        let fused = fuse(&a, &b, t, &gate).expect("valid");
        for ((f, x), y) in fused.data().iter().zip(a.data()).zip(b.data()) {
            exact &= *f == (x + y) / 2.0;
        }
    }
    Check::new(
        "gate_neutrality",
        exact,
        "zero-initialized final layer gives alpha = 0.5 and exact midpoint fusion".to_string(),
    )
}

fn gate_open_interval() -> Check {
    let mut ok = true;
    for seed in 0..5u64 {
        let gate = FusionGate::random(6, seed);
        for &t in &[0.0f32, 500.0, 999.0] {
            ok &= gate
                .alpha(t)
                .expect("valid")
                .iter()
                .all(|&a| a > 0.0 && a < 1.0);
        }
    }
    Check::new(
        "gate_open_interval",
        ok,
        "alpha(t) strictly inside (0,1) for t in {0, 500, 999}".to_string(),
    )
}

fn grad_check(name: &str, err: f64, tolerance: f64) -> Check {
    Check::new(
        name,
        err <= tolerance,
        format!("max relative error vs central differences {err:.2e} (tolerance {tolerance:.0e})"),
    )
}

fn rand_tensor(dims: Vec<usize>, seed: u64, scale: f64) -> Tensor64 {
    let mut rng = SplitMix64::new(seed);
    let len = dims.iter().product();
    Tensor64::new(dims, (0..len).map(|_| rng.next_f64() * scale).collect()).expect("valid dims")
}

fn gradient_softmax_dot() -> Check {
    let err = finite_diff_check(
        |t, v| {
            let p = t.softmax(v[0])?;
            t.dot(p, v[1])
        },
        &[rand_tensor(vec![12], 3, 1.0), rand_tensor(vec![12], 4, 1.0)],
    )
    .unwrap_or(f64::INFINITY);
    grad_check("gradient_softmax_dot", err, 1e-5)
}

fn gradient_attention_sub_block() -> Check {
    let d = 4usize;
    let inputs = vec![
        rand_tensor(vec![5, d], 10, 1.0),
        rand_tensor(vec![d, d], 11, 0.5),
        rand_tensor(vec![d, d], 12, 0.5),
        rand_tensor(vec![d, d], 13, 0.5),
        rand_tensor(vec![d, d], 14, 0.5),
    ];
    let err = finite_diff_check(
        |t, v| {
            let scale = 1.0 / (d as f64).sqrt();
            let q = t.matmul(v[0], v[1])?;
            let k = t.matmul(v[0], v[2])?;
            let val = t.matmul(v[0], v[3])?;
            let s = t.score(q, k, scale)?;
            let p = t.softmax(s)?;
            let ctx = t.apply_attn(p, val)?;
            let o = t.matmul(ctx, v[4])?;
            let res = t.add(v[0], o)?;
            let sq = t.mul(res, res)?;
            t.sum(sq)
        },
        &inputs,
    )
    .unwrap_or(f64::INFINITY);
    grad_check("gradient_attention_sub_block", err, 1e-5)
}

fn gradient_compress_pipeline() -> Check {
    let (tt, h, w, d) = (1usize, 4usize, 4usize, 2usize);
    let n = tt * (h / 2) * (w / 2);
    let inputs = vec![
        rand_tensor(vec![1, tt, h, w, d], 20, 1.0),
        rand_tensor(vec![d * 4], 21, 0.3),
        rand_tensor(vec![d], 22, 0.1),
        rand_tensor(vec![d, d], 23, 0.5),
        rand_tensor(vec![d * 27], 24, 0.2),
        rand_tensor(vec![d], 25, 0.1),
    ];
    let err = finite_diff_check(
        |t, v| {
            let scale = 1.0 / (d as f64).sqrt();
            let c = t.depthwise_compress(v[0], v[1], v[2], 2, false)?;
            let tok = t.reshape(c, vec![n, d])?;
            let q = t.matmul(tok, v[3])?;
            let s = t.score(q, q, scale)?;
            let p = t.softmax(s)?;
            let o = t.apply_attn(p, tok)?;
            let back = t.reshape(o, vec![1, tt, h / 2, w / 2, d])?;
            let up = t.bilinear(back, h, w)?;
            let conv = t.conv3d(up, v[4], v[5], (3, 3, 3))?;
            let sq = t.mul(conv, conv)?;
            t.sum(sq)
        },
        &inputs,
    )
    .unwrap_or(f64::INFINITY);
    grad_check("gradient_compress_pipeline", err, 1e-5)
}

fn speedup_law() -> Check {
    let s4 = speedup(4).expect("valid");
    let law_ok = s4 == Rational::new(1024, 84).expect("valid")
        && ratio_equals(1024, 84, s4)
        && (s4.to_f64() - 12.190_476_190_476_19).abs() < 1e-9;
    let mut identity_ok = true;
    for (t, h, w, d, k) in [(1usize, 8usize, 8usize, 4usize, 2usize), (2, 16, 16, 8, 4)] {
        let total = analytic_total(t, h, w, d, k).expect("valid");
        let thw = (t * h * w) as u128;
        let (du, ku) = (d as u128, k as u128);
        identity_ok &=
            total == 5 * thw * thw * du / (4 * ku * ku) + thw * thw * du / (ku * ku * ku * ku);
    }
    Check::new(
        "speedup_law",
        law_ok && identity_ok,
        format!("speedup(4) = {s4} = {:.4}", s4.to_f64()),
    )
}

fn degenerate_equivalence_small() -> Check {
    match assert_degenerate_equivalence(0, [1, 1, 4, 4, 4], 1e-5) {
        Ok(report) => Check::new(
            "degenerate_equivalence_small",
            report.pass,
            format!("max abs diff {:.2e} (tolerance 1e-5)", report.max_abs_diff),
        ),
        Err(e) => Check::new("degenerate_equivalence_small", false, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_suite_passes() {
        let checks = run_verification(false);
        assert!(checks.len() >= 12);
        for check in &checks {
            assert!(check.pass, "{} failed: {}", check.name, check.detail);
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let checks = run_verification(true);
        let pooling = checks
            .iter()
            .find(|c| c.name == "pooling_init_equality")
            .unwrap();
        assert!(!pooling.pass);
        assert!(checks.iter().any(|c| !c.pass));
    }
}
