//! Acceptance gate: eight release criteria, run sequentially, one printed
//! PASS/FAIL line each. The process exits nonzero if any criterion fails.
//!
//! Criteria 5, 6, and 8 share four full MNIST training runs under the pinned
//! 30-epoch protocol and together take over an hour on a desktop CPU; the
//! rest finish in a few minutes. Run only the quick ones with
//! `cargo test --test acceptance -- --skip-mnist` (criteria 5, 6, and 8 are
//! then reported as SKIP and the gate fails, since the gate is only green
//! when everything ran and passed).

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use gaussnet::data::{synthetic_images, Dataset};
use gaussnet::moments::{
    expected_prediction, relu_gaussian_mean_scalar, NoiseSpec,
};
use gaussnet::nets::{build_model, ArchitectureId, Layer, SplitNetwork};
use gaussnet::objective::ObjectiveConfig;
use gaussnet::optim::{self, TrainConfig, TrainReport, TrainSink};
use gaussnet::robustness::{
    robustness_sweep, sample_fixed_norm_noise, NoiseMode, RobustnessConfig,
};
use gaussnet::rng;
use gaussnet::special::{normal_cdf, normal_pdf};
use gaussnet::{Graph, Tensor, VarId};

fn main() {
    let skip_mnist = std::env::args().any(|a| a == "--skip-mnist");
    let started = Instant::now();
    let mut failures = 0usize;
    let mut verdict = |n: usize, what: &str, res: Result<String, String>| match res {
        Ok(detail) => println!("criterion {n} [PASS] {what}: {detail}"),
        Err(detail) => {
            println!("criterion {n} [FAIL] {what}: {detail}");
            failures += 1;
        }
    };

    verdict(1, "analytic Gaussian-ReLU mean", criterion_1());
    verdict(2, "gradient suite", criterion_2());
    let nets = frozen_two_layer_nets();
    verdict(3, "two-layer exactness", criterion_3(&nets));
    verdict(4, "Jensen direction", criterion_4(&nets));

    let mnist = if skip_mnist {
        Err("skipped on request (--skip-mnist)".to_string())
    } else {
        println!(
            "running the pinned MNIST protocol (4 training runs, expect roughly an hour)..."
        );
        mnist_runs()
    };
    verdict(5, "MNIST reproduction", criterion_5(&mnist));
    verdict(6, "regularizer cost advantage", criterion_6(&mnist));
    verdict(7, "robustness metric properties", criterion_7());
    verdict(8, "training determinism", criterion_8(&mnist));

    let minutes = started.elapsed().as_secs_f64() / 60.0;
    println!(
        "acceptance: {} of 8 criteria passed in {minutes:.1} min",
        8 - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}

fn budget(t0: Instant, limit: Duration, detail: String) -> Result<String, String> {
    let took = t0.elapsed();
    if took > limit {
        Err(format!(
            "{detail}; but runtime {:.0}s exceeded the {:.0}s budget",
            took.as_secs_f64(),
            limit.as_secs_f64()
        ))
    } else {
        Ok(format!("{detail} ({:.0}s)", took.as_secs_f64()))
    }
}

// --- criterion 1: T(mu, sigma) against Monte Carlo and its identities ------

fn criterion_1() -> Result<String, String> {
    let t0 = Instant::now();
    let mus = [-3.0, -1.0, -0.1, 0.0, 0.1, 1.0, 3.0];
    let sigmas = [0.1, 1.0, 10.0];
    let grid: Vec<(f64, f64)> = mus
        .iter()
        .flat_map(|&m| sigmas.iter().map(move |&s| (m, s)))
        .collect();

    const N: usize = 10_000_000;
    let devs: Vec<Result<f64, String>> = grid
        .par_iter()
        .map(|&(mu, sigma)| {
            let mut rng = rng::stream(2024, &[mu.to_bits(), sigma.to_bits()]);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..N {
                let v = (mu + sigma * rng::standard_normal(&mut rng)).max(0.0);
                sum += v;
                sumsq += v * v;
            }
            let n = N as f64;
            let mean = sum / n;
            let var = (sumsq - sum * sum / n) / (n - 1.0);
            let se = (var / n).sqrt();
            let t = relu_gaussian_mean_scalar(mu, sigma)
                .map_err(|e| format!("T({mu},{sigma}): {e}"))?;
            // Deep in the left tail every sample is exactly zero and the
            // estimated SE collapses; a 1e-12 absolute floor covers that
            // degenerate corner without loosening any meaningful point.
            let diff = (t - mean).abs();
            if diff > 4.0 * se + 1e-12 {
                return Err(format!(
                    "T({mu},{sigma}) = {t} is {diff:e} away from the {N}-sample mean \
                     {mean} (4 SE = {:e})",
                    4.0 * se
                ));
            }
            Ok(if se > 0.0 { diff / se } else { 0.0 })
        })
        .collect();
    let mut worst = 0.0f64;
    for d in devs {
        worst = worst.max(d?);
    }

    let mut worst_identity = 0.0f64;
    for &(mu, sigma) in &grid {
        let t = relu_gaussian_mean_scalar(mu, sigma).map_err(|e| e.to_string())?;
        let t_neg = relu_gaussian_mean_scalar(-mu, sigma).map_err(|e| e.to_string())?;
        let shift = (t - t_neg - mu).abs();
        worst_identity = worst_identity.max(shift);
        if shift > 1e-10 {
            return Err(format!(
                "T({mu},{sigma}) - T({},{sigma}) - {mu} = {shift:e} exceeds 1e-10",
                -mu
            ));
        }
        for c in [0.5, 2.0, 7.5] {
            let scaled = relu_gaussian_mean_scalar(c * mu, c * sigma)
                .map_err(|e| e.to_string())?;
            let res = (scaled - c * t).abs();
            worst_identity = worst_identity.max(res);
            if res > 1e-10 {
                return Err(format!(
                    "T({c}*{mu}, {c}*{sigma}) - {c}*T({mu},{sigma}) = {res:e} exceeds 1e-10"
                ));
            }
        }
    }
    budget(
        t0,
        Duration::from_secs(60),
        format!(
            "max Monte Carlo deviation {worst:.2} SE over {} points at 1e7 samples; \
             identity residuals <= {worst_identity:.1e}",
            grid.len()
        ),
    )
}

// --- criterion 2: finite differences over every primitive ------------------

/// Central-difference check of d(scalar root)/d(inputs[i]) for a graph the
/// closure rebuilds from the given leaf tensors. The closure returns the
/// scalar root plus the leaf ids in input order. Returns the worst relative
/// error across every element of every input.
fn fd_check(
    build: &dyn Fn(&mut Graph, &[Tensor]) -> (VarId, Vec<VarId>),
    inputs: &[Tensor],
) -> Result<f64, String> {
    let mut g = Graph::new();
    let (root, leaves) = build(&mut g, inputs);
    if g.value(root).numel() != 1 {
        return Err("fd_check needs a scalar root".into());
    }
    if leaves.len() != inputs.len() {
        return Err("builder returned the wrong number of leaves".into());
    }
    g.backward(root).map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            g.grad(id)
                .map(|s| s.to_vec())
                .ok_or_else(|| format!("input {i} has no gradient"))
        })
        .collect::<Result<_, _>>()?;

    let eval = |tensors: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let (root, _) = build(&mut g, tensors);
        g.value(root).data()[0]
    };

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let v = input.data()[j];
            let h = 1e-5 * v.abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] = v + h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] = v - h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = analytic[i][j];
            let denom = an.abs().max(fd.abs());
            if denom < 1e-8 {
                continue;
            }
            let rel = (fd - an).abs() / denom.max(1e-3);
            worst = worst.max(rel);
            if rel > 1e-4 {
                return Err(format!(
                    "input {i} element {j}: analytic {an} vs central difference {fd} \
                     (rel err {rel:.2e})"
                ));
            }
        }
    }
    Ok(worst)
}

fn randn_tensor(shape: &[usize], rng: &mut impl rand::Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    rng::fill_standard_normal(rng, t.data_mut());
    t
}

/// Random tensor bounded away from zero, for kinked ops.
fn randn_offset(shape: &[usize], min_abs: f64, rng: &mut impl rand::Rng) -> Tensor {
    let mut t = randn_tensor(shape, rng);
    for v in t.data_mut() {
        if v.abs() < min_abs {
            *v = min_abs * if *v < 0.0 { -1.0 } else { 1.0 } + *v;
        }
    }
    t
}

/// Reduces a tensor to a scalar with fixed pseudo-random weights so every
/// output element contributes a distinct gradient path.
fn weighted_sum(g: &mut Graph, x: VarId, seed: u64) -> VarId {
    let shape = g.value(x).shape().to_vec();
    let mut rng = rng::stream(seed, &[77]);
    let w = g.constant(randn_tensor(&shape, &mut rng));
    let prod = g.mul(x, w).expect("same shape");
    g.sum(prod)
}

fn criterion_2() -> Result<String, String> {
    let t0 = Instant::now();
    let mut reports: Vec<(&str, f64)> = Vec::new();
    let mut check_op =
        |name: &'static str,
         build: &dyn Fn(&mut Graph, &[Tensor]) -> (VarId, Vec<VarId>),
         gen: &dyn Fn(u64) -> Vec<Tensor>|
         -> Result<(), String> {
            let mut worst = 0.0f64;
            for seed in 0..20 {
                let inputs = gen(seed);
                let w = fd_check(build, &inputs)
                    .map_err(|e| format!("{name}, instance {seed}: {e}"))?;
                worst = worst.max(w);
            }
            reports.push((name, worst));
            Ok(())
        };

    check_op(
        "add",
        &|g, t| {
            let a = g.leaf(t[0].clone());
            let b = g.leaf(t[1].clone());
            let s = g.add(a, b).unwrap();
            (weighted_sum(g, s, 1), vec![a, b])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[1]);
            vec![randn_tensor(&[3, 4], &mut r), randn_tensor(&[3, 4], &mut r)]
        },
    )?;
    check_op(
        "add_bias",
        &|g, t| {
            let x = g.leaf(t[0].clone());
            let b = g.leaf(t[1].clone());
            let s = g.add_bias(x, b).unwrap();
            (weighted_sum(g, s, 2), vec![x, b])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[2]);
            vec![randn_tensor(&[4, 5], &mut r), randn_tensor(&[5], &mut r)]
        },
    )?;
    check_op(
        "mul",
        &|g, t| {
            let a = g.leaf(t[0].clone());
            let b = g.leaf(t[1].clone());
            let s = g.mul(a, b).unwrap();
            (weighted_sum(g, s, 3), vec![a, b])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[3]);
            vec![randn_tensor(&[2, 6], &mut r), randn_tensor(&[2, 6], &mut r)]
        },
    )?;
    check_op(
        "scale",
        &|g, t| {
            let x = g.leaf(t[0].clone());
            let s = g.scale(x, 0.37);
            (weighted_sum(g, s, 4), vec![x])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[4]);
            vec![randn_tensor(&[3, 3], &mut r)]
        },
    )?;
    check_op(
        "relu",
        &|g, t| {
            let x = g.leaf(t[0].clone());
            let s = g.relu(x);
            (weighted_sum(g, s, 5), vec![x])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[5]);
            vec![randn_offset(&[4, 4], 0.05, &mut r)]
        },
    )?;
    check_op(
        "sqrt",
        &|g, t| {
            let x = g.leaf(t[0].clone());
            let s = g.sqrt(x).unwrap();
            (weighted_sum(g, s, 6), vec![x])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[6]);
            let mut t = randn_tensor(&[3, 4], &mut r);
            for v in t.data_mut() {
                *v = 0.2 + v.abs();
            }
            vec![t]
        },
    )?;
    check_op(
        "reshape",
        &|g, t| {
            let x = g.leaf(t[0].clone());
            let s = g.reshape(x, &[4, 6]).unwrap();
            (weighted_sum(g, s, 7), vec![x])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[7]);
            vec![randn_tensor(&[2, 3, 4], &mut r)]
        },
    )?;
    check_op(
        "sum",
        &|g, t| {
            let x = g.leaf(t[0].clone());
            (g.sum(x), vec![x])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[8]);
            vec![randn_tensor(&[5, 2], &mut r)]
        },
    )?;
    check_op(
        "matmul",
        &|g, t| {
            let a = g.leaf(t[0].clone());
            let b = g.leaf(t[1].clone());
            let s = g.matmul(a, b).unwrap();
            (weighted_sum(g, s, 9), vec![a, b])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[9]);
            vec![randn_tensor(&[3, 4], &mut r), randn_tensor(&[4, 5], &mut r)]
        },
    )?;
    check_op(
        "conv2d",
        &|g, t| {
            let x = g.leaf(t[0].clone());
            let w = g.leaf(t[1].clone());
            let b = g.leaf(t[2].clone());
            let stride = 1 + t[1].shape()[0] % 2;
            let s = g.conv2d(x, w, Some(b), stride, 1).unwrap();
            (weighted_sum(g, s, 10), vec![x, w, b])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[10]);
            let f = 2 + (seed as usize) % 2;
            vec![
                randn_tensor(&[2, 3, 6, 6], &mut r),
                randn_tensor(&[f, 3, 3, 3], &mut r),
                randn_tensor(&[f], &mut r),
            ]
        },
    )?;
    check_op(
        "maxpool2d",
        &|g, t| {
            let x = g.leaf(t[0].clone());
            let s = g.maxpool2d(x, 2, 2).unwrap();
            (weighted_sum(g, s, 11), vec![x])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[11]);
            // Ties or near-ties inside a window break finite differences;
            // spread each window's entries far enough apart.
            let mut t = randn_tensor(&[2, 2, 6, 6], &mut r);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = *v * 3.0 + ((i * 29) % 7) as f64 * 0.11;
            }
            vec![t]
        },
    )?;
    check_op(
        "relu_gauss_mean",
        &|g, t| {
            let mu = g.leaf(t[0].clone());
            let sigma = g.leaf(t[1].clone());
            let s = g.relu_gauss_mean(mu, sigma).unwrap();
            (weighted_sum(g, s, 12), vec![mu, sigma])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[12]);
            let mu = randn_tensor(&[3, 4], &mut r);
            let mut sigma = randn_tensor(&[1, 4], &mut r);
            for v in sigma.data_mut() {
                *v = 0.3 + v.abs();
            }
            vec![mu, sigma]
        },
    )?;
    check_op(
        "softmax_cross_entropy",
        &|g, t| {
            let z = g.leaf(t[0].clone());
            (g.softmax_cross_entropy(z, &[0, 2, 4, 1]).unwrap(), vec![z])
        },
        &|seed| {
            let mut r = rng::stream(seed, &[13]);
            vec![randn_tensor(&[4, 5], &mut r)]
        },
    )?;
    check_op(
        "expected_prediction",
        &|g, t| {
            let d = t[0].shape()[0];
            let k = t[2].shape()[1];
            let net = SplitNetwork::new(
                "fd",
                vec![d],
                k,
                Layer::Dense {
                    weight: t[0].clone(),
                    bias: t[1].clone(),
                },
                vec![Layer::Dense {
                    weight: t[2].clone(),
                    bias: t[3].clone(),
                }],
            )
            .unwrap();
            let staged = net.stage(g, true);
            let x = g.leaf(t[4].clone());
            let noise = NoiseSpec::isotropic_std(0.6).unwrap();
            let out =
                gaussnet::moments::expected_prediction_on(g, &staged, x, &noise).unwrap();
            let mut leaves = staged.param_ids();
            leaves.push(x);
            (weighted_sum(g, out, 14), leaves)
        },
        &|seed| {
            let mut r = rng::stream(seed, &[14]);
            let (d, h, k) = (2 + seed as usize % 4, 3 + seed as usize % 3, 2 + seed as usize % 3);
            vec![
                randn_tensor(&[d, h], &mut r),
                randn_tensor(&[h], &mut r),
                randn_tensor(&[h, k], &mut r),
                randn_tensor(&[k], &mut r),
                randn_tensor(&[2, d], &mut r),
            ]
        },
    )?;

    // Closed-form derivatives of T: dT/dmu = Phi(mu/sigma), dT/dsigma =
    // phi(mu/sigma), checked through the graph's backward pass.
    let mut worst_mu = 0.0f64;
    let mut worst_sigma = 0.0f64;
    for &mu in &[-2.0, -0.5, 0.0, 0.5, 2.0] {
        for &sigma in &[0.2, 1.0, 5.0] {
            let mut g = Graph::new();
            let m = g.leaf(Tensor::new(vec![1, 1], vec![mu]).unwrap());
            let s = g.leaf(Tensor::new(vec![1, 1], vec![sigma]).unwrap());
            let t = g.relu_gauss_mean(m, s).map_err(|e| e.to_string())?;
            let root = g.sum(t);
            g.backward(root).map_err(|e| e.to_string())?;
            let r = mu / sigma;
            let dmu = (g.grad(m).unwrap()[0] - normal_cdf(r)).abs();
            let dsigma = (g.grad(s).unwrap()[0] - normal_pdf(r)).abs();
            worst_mu = worst_mu.max(dmu);
            worst_sigma = worst_sigma.max(dsigma);
            if dmu > 1e-7 || dsigma > 1e-7 {
                return Err(format!(
                    "dT at (mu {mu}, sigma {sigma}): |dmu - Phi| = {dmu:e}, \
                     |dsigma - phi| = {dsigma:e}, tolerance 1e-7"
                ));
            }
        }
    }

    let ops = reports.len();
    let worst = reports
        .iter()
        .fold((0.0f64, ""), |acc, &(n, w)| if w > acc.0 { (w, n) } else { acc });
    budget(
        t0,
        Duration::from_secs(120),
        format!(
            "{ops} ops x 20 instances; worst finite-difference rel err {:.1e} ({}); \
             closed-form dT residuals {worst_mu:.1e} / {worst_sigma:.1e}",
            worst.0, worst.1
        ),
    )
}

// --- criteria 3 and 4: frozen two-layer nets --------------------------------

struct TwoLayer {
    net: SplitNetwork,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    x: Tensor,
    sigma_x: f64,
}

fn frozen_two_layer_nets() -> Vec<TwoLayer> {
    (0..10u64)
        .map(|seed| {
            let mut r = rng::stream(4096, &[seed]);
            let d = 3 + (seed as usize * 7) % 18;
            let h = 4 + (seed as usize * 5) % 13;
            let k = 2 + (seed as usize) % 5;
            let scale = 1.0 / (d as f64).sqrt();
            let mut w1 = randn_tensor(&[d, h], &mut r);
            for v in w1.data_mut() {
                *v *= scale;
            }
            let b1 = randn_tensor(&[h], &mut r);
            let w2 = randn_tensor(&[h, k], &mut r);
            let b2 = randn_tensor(&[k], &mut r);
            let x = randn_tensor(&[1, d], &mut r);
            let sigma_x = 0.2 + 1.3 * (seed as f64 / 9.0);
            let net = SplitNetwork::new(
                format!("two-layer-{seed}"),
                vec![d],
                k,
                Layer::Dense {
                    weight: w1.clone(),
                    bias: b1.clone(),
                },
                vec![Layer::Dense {
                    weight: w2.clone(),
                    bias: b2.clone(),
                }],
            )
            .unwrap();
            TwoLayer {
                net,
                w1,
                b1,
                w2,
                b2,
                x,
                sigma_x,
            }
        })
        .collect()
}

/// Plain-loop forward pass of a two-layer net, used as the test-side oracle.
fn oracle_forward(tl: &TwoLayer, x: &[f64]) -> Vec<f64> {
    let (d, h) = (tl.w1.shape()[0], tl.w1.shape()[1]);
    let k = tl.w2.shape()[1];
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let mut acc = tl.b1.data()[j];
        for i in 0..d {
            acc += x[i] * tl.w1.data()[i * h + j];
        }
        hidden[j] = acc.max(0.0);
    }
    let mut out = vec![0.0; k];
    for c in 0..k {
        let mut acc = tl.b2.data()[c];
        for j in 0..h {
            acc += hidden[j] * tl.w2.data()[j * k + c];
        }
        out[c] = acc;
    }
    out
}

fn criterion_3(nets: &[TwoLayer]) -> Result<String, String> {
    let t0 = Instant::now();
    let mut worst_closed = 0.0f64;
    let mut worst_mc = 0.0f64;
    for (idx, tl) in nets.iter().enumerate() {
        let noise = NoiseSpec::isotropic_std(tl.sigma_x).map_err(|e| e.to_string())?;
        let analytic = expected_prediction(&tl.net, &tl.x, &noise)
            .map_err(|e| format!("net {idx}: {e}"))?;
        let (d, h) = (tl.w1.shape()[0], tl.w1.shape()[1]);
        let k = tl.w2.shape()[1];

        // Independent closed form: mu2 and sigma2 by plain loops, then
        // B * T(mu2, sigma2) + c2.
        let mut expect = vec![0.0; k];
        let mut t_hidden = vec![0.0; h];
        for j in 0..h {
            let mut mu2 = tl.b1.data()[j];
            let mut w_sq = 0.0;
            for i in 0..d {
                let w = tl.w1.data()[i * h + j];
                mu2 += tl.x.data()[i] * w;
                w_sq += w * w;
            }
            let s2 = tl.sigma_x * w_sq.sqrt();
            let r = mu2 / s2;
            t_hidden[j] = mu2 * normal_cdf(r) + s2 * normal_pdf(r);
        }
        for c in 0..k {
            let mut acc = tl.b2.data()[c];
            for j in 0..h {
                acc += t_hidden[j] * tl.w2.data()[j * k + c];
            }
            expect[c] = acc;
        }
        for c in 0..k {
            let diff = (analytic.data()[c] - expect[c]).abs();
            worst_closed = worst_closed.max(diff);
            if diff > 1e-12 {
                return Err(format!(
                    "net {idx} coordinate {c}: analytic {} vs independent {} \
                     (|diff| {diff:e} > 1e-12)",
                    analytic.data()[c],
                    expect[c]
                ));
            }
        }

        // Monte-Carlo estimate of E[g(x + n)], 4 SE per coordinate.
        const N: usize = 1_000_000;
        let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..8u64)
            .into_par_iter()
            .map(|part| {
                let mut rng = rng::stream(5150, &[idx as u64, part]);
                let mut sum = vec![0.0; k];
                let mut sumsq = vec![0.0; k];
                let mut xn = vec![0.0; d];
                for _ in 0..N / 8 {
                    for i in 0..d {
                        xn[i] = tl.x.data()[i] + tl.sigma_x * rng::standard_normal(&mut rng);
                    }
                    let out = oracle_forward(tl, &xn);
                    for c in 0..k {
                        sum[c] += out[c];
                        sumsq[c] += out[c] * out[c];
                    }
                }
                (sum, sumsq)
            })
            .collect();
        let n = (N / 8 * 8) as f64;
        for c in 0..k {
            let sum: f64 = chunks.iter().map(|(s, _)| s[c]).sum();
            let sumsq: f64 = chunks.iter().map(|(_, q)| q[c]).sum();
            let mean = sum / n;
            let var = (sumsq - sum * sum / n) / (n - 1.0);
            let se = (var / n).sqrt().max(1e-12);
            let dev = (analytic.data()[c] - mean).abs() / se;
            worst_mc = worst_mc.max(dev);
            if dev > 4.0 {
                return Err(format!(
                    "net {idx} coordinate {c}: analytic {} is {dev:.2} SE from the \
                     1e6-sample mean {mean}",
                    analytic.data()[c]
                ));
            }
        }
    }
    budget(
        t0,
        Duration::from_secs(120),
        format!(
            "10 nets: closed-form match <= {worst_closed:.1e} (tol 1e-12), \
             worst Monte Carlo deviation {worst_mc:.2} SE"
        ),
    )
}

fn criterion_4(nets: &[TwoLayer]) -> Result<String, String> {
    let t0 = Instant::now();
    let mut min_slack = f64::INFINITY;
    for (idx, tl) in nets.iter().enumerate() {
        let k = tl.w2.shape()[1];
        let d = tl.w1.shape()[0];
        let noise = NoiseSpec::isotropic_std(tl.sigma_x).map_err(|e| e.to_string())?;
        let mut point_rng = rng::stream(6007, &[idx as u64]);
        for point in 0..3u64 {
            let x = randn_tensor(&[1, d], &mut point_rng);
            let label = (point as usize) % k;

            let expected = expected_prediction(&tl.net, &x, &noise)
                .map_err(|e| format!("net {idx}: {e}"))?;
            let z = expected.data();
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
            let analytic_loss = lse - z[label];

            const N: usize = 200_000;
            let mut rng = rng::stream(6007, &[idx as u64, 100 + point]);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            let mut xn = vec![0.0; d];
            for _ in 0..N {
                for i in 0..d {
                    xn[i] = x.data()[i] + tl.sigma_x * rng::standard_normal(&mut rng);
                }
                let out = oracle_forward(tl, &xn);
                let omax = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = omax + out.iter().map(|v| (v - omax).exp()).sum::<f64>().ln();
                let loss = lse - out[label];
                sum += loss;
                sumsq += loss * loss;
            }
            let n = N as f64;
            let mean = sum / n;
            let var = (sumsq - sum * sum / n) / (n - 1.0);
            let se = (var / n).sqrt();
            let slack = mean + 3.0 * se - analytic_loss;
            min_slack = min_slack.min(slack);
            if slack < 0.0 {
                return Err(format!(
                    "net {idx} point {point}: loss of expectation {analytic_loss} exceeds \
                     Monte Carlo expected loss {mean} + 3 SE ({se:.2e})"
                ));
            }
        }
    }
    budget(
        t0,
        Duration::from_secs(120),
        format!(
            "loss of the expected prediction stayed below the sampled expected loss \
             on all 30 points (smallest slack {min_slack:.3e})"
        ),
    )
}

// --- criteria 5, 6, 8: the pinned MNIST protocol ----------------------------

struct MnistRun {
    report: TrainReport,
    accuracy: f64,
    robustness: f64,
    wall_secs: f64,
}

struct MnistRuns {
    baseline: MnistRun,
    regularized: MnistRun,
    regularized_repeat: MnistRun,
    aug_epoch_secs: f64,
}

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// The pinned protocol: Adam defaults for LeNet-MNIST, seed 0, capped at 30
/// epochs; robustness on the default grid over the first 1000 test images.
fn pinned_train_config(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        ..TrainConfig::defaults_for(ArchitectureId::LeNetMnist)
    }
}

fn run_mnist(
    train_set: &Dataset,
    test_set: &Dataset,
    sweep_set: &Dataset,
    objective: &ObjectiveConfig,
    max_epochs: usize,
    label: &str,
) -> Result<MnistRun, String> {
    let cfg = pinned_train_config(max_epochs);
    let mut net = build_model(ArchitectureId::LeNetMnist, 10, cfg.seed)
        .map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let report = optim::train(&mut net, train_set, objective, &cfg, TrainSink::default())
        .map_err(|e| format!("{label} training: {e}"))?;
    let accuracy = optim::evaluate_accuracy(&net, test_set, cfg.minibatch_size)
        .map_err(|e| e.to_string())?;
    let rob = robustness_sweep(&net, sweep_set, &RobustnessConfig::default())
        .map_err(|e| format!("{label} sweep: {e}"))?;
    let wall_secs = t0.elapsed().as_secs_f64();
    println!(
        "  {label}: {} epochs, accuracy {accuracy:.4}, robustness {:.4} ({wall_secs:.0}s)",
        report.epochs.len(),
        rob.aggregate,
    );
    Ok(MnistRun {
        report,
        accuracy,
        robustness: rob.aggregate,
        wall_secs,
    })
}

fn mnist_runs() -> Result<MnistRuns, String> {
    let dir = mnist_dir();
    let (train_set, test_set) =
        gaussnet::data::load_mnist(&dir).map_err(|e| format!("loading MNIST: {e}"))?;
    let sweep_set = test_set.take(1000).map_err(|e| e.to_string())?;
    let noise = NoiseSpec::isotropic_std(0.5).map_err(|e| e.to_string())?;

    let baseline = run_mnist(
        &train_set,
        &test_set,
        &sweep_set,
        &ObjectiveConfig::baseline(),
        30,
        "baseline",
    )?;
    let reg_obj = ObjectiveConfig::moment_regularizer(1.0, noise.clone());
    let regularized =
        run_mnist(&train_set, &test_set, &sweep_set, &reg_obj, 30, "regularizer")?;
    let regularized_repeat = run_mnist(
        &train_set,
        &test_set,
        &sweep_set,
        &reg_obj,
        30,
        "regularizer repeat",
    )?;

    // Two epochs are enough for a stable per-epoch cost of the augmentation
    // objective; its trained model is not evaluated.
    let aug_obj = ObjectiveConfig::augmentation(1.0, noise, 6);
    let aug = run_mnist(
        &train_set,
        &test_set,
        &sweep_set,
        &aug_obj,
        2,
        "augmentation (timing)",
    )?;
    let aug_epoch_secs = aug.report.epochs.iter().map(|e| e.seconds).sum::<f64>()
        / aug.report.epochs.len().max(1) as f64;

    Ok(MnistRuns {
        baseline,
        regularized,
        regularized_repeat,
        aug_epoch_secs,
    })
}

fn criterion_5(runs: &Result<MnistRuns, String>) -> Result<String, String> {
    let runs = runs.as_ref().map_err(|e| e.clone())?;
    let base = &runs.baseline;
    let reg = &runs.regularized;
    let mut problems = Vec::new();
    if base.accuracy < 0.985 {
        problems.push(format!(
            "baseline accuracy {:.4} is below the 0.985 bar; the pinned 30-epoch \
             CPU protocol tops out under it",
            base.accuracy
        ));
    }
    if reg.accuracy < base.accuracy - 0.010 {
        problems.push(format!(
            "regularized accuracy {:.4} is more than 1.0 point below the baseline {:.4}",
            reg.accuracy, base.accuracy
        ));
    }
    if reg.robustness <= base.robustness {
        problems.push(format!(
            "regularized robustness {:.4} does not exceed the baseline's {:.4}",
            reg.robustness, base.robustness
        ));
    }
    let runtime = base.wall_secs + reg.wall_secs;
    if runtime > 7200.0 {
        problems.push(format!(
            "the two runs took {runtime:.0}s, over the 7200s budget"
        ));
    }
    let summary = format!(
        "baseline accuracy {:.4}, regularized accuracy {:.4}, robustness {:.4} vs {:.4}, \
         {runtime:.0}s",
        base.accuracy, reg.accuracy, reg.robustness, base.robustness
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", problems.join("; ")))
    }
}

fn criterion_6(runs: &Result<MnistRuns, String>) -> Result<String, String> {
    let runs = runs.as_ref().map_err(|e| e.clone())?;
    let reg = &runs.regularized.report;
    if reg.epochs.is_empty() {
        return Err("regularized run recorded no epochs".into());
    }
    let reg_epoch = reg.epochs.iter().map(|e| e.seconds).sum::<f64>() / reg.epochs.len() as f64;
    let margin = runs.aug_epoch_secs / reg_epoch;
    let detail = format!(
        "regularizer {reg_epoch:.1}s per epoch vs augmentation (6 replicas) \
         {:.1}s, margin {margin:.2}x",
        runs.aug_epoch_secs
    );
    if reg_epoch < runs.aug_epoch_secs && margin >= 1.5 {
        Ok(detail)
    } else {
        Err(format!("{detail}; required strictly faster with margin >= 1.5x"))
    }
}

// --- criterion 7: robustness metric properties ------------------------------

fn criterion_7() -> Result<String, String> {
    let t0 = Instant::now();
    let data = synthetic_images(64, &[1, 28, 28], 10, 31).map_err(|e| e.to_string())?;

    // A sigma = 0 sweep perturbs nothing, so every prediction survives.
    let net = build_model(ArchitectureId::LeNetMnist, 10, 3).map_err(|e| e.to_string())?;
    let zero_cfg = RobustnessConfig {
        sigma_grid: vec![0.0],
        m: 3,
        mode: NoiseMode::GaussianSamples,
        seed: 9,
    };
    let zero = robustness_sweep(&net, &data, &zero_cfg).map_err(|e| e.to_string())?;
    if zero.aggregate != 1.0 {
        return Err(format!(
            "sigma = 0 sweep scored {} instead of exactly 1",
            zero.aggregate
        ));
    }

    // A constant classifier never changes its answer under any noise.
    let constant = SplitNetwork::new(
        "constant",
        vec![2],
        10,
        Layer::Dense {
            weight: Tensor::zeros(&[2, 4]),
            bias: Tensor::zeros(&[4]),
        },
        vec![Layer::Dense {
            weight: Tensor::zeros(&[4, 10]),
            bias: Tensor::from_vec(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        }],
    )
    .map_err(|e| e.to_string())?;
    let blobs = gaussnet::data::synthetic_blobs(64, 15);
    let flat = robustness_sweep(&constant, &blobs, &RobustnessConfig::default())
        .map_err(|e| e.to_string())?;
    if flat.aggregate != 1.0 {
        return Err(format!(
            "constant classifier scored {} instead of exactly 1",
            flat.aggregate
        ));
    }

    // Average-energy samples land exactly on the sigma * sqrt(n) sphere.
    let shape = [1, 28, 28];
    let n = 784.0f64;
    let sigma = 0.7;
    let target = sigma * n.sqrt();
    let mut rng = rng::stream(12, &[99]);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let noise = sample_fixed_norm_noise(&shape, sigma, &mut rng).map_err(|e| e.to_string())?;
        let norm = noise.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = (norm - target).abs() / target;
        worst = worst.max(rel);
        if rel > 1e-9 {
            return Err(format!(
                "draw norm {norm} deviates from {target} by {rel:.2e} relative (tol 1e-9)"
            ));
        }
    }
    budget(
        t0,
        Duration::from_secs(60),
        format!(
            "sigma = 0 and constant-classifier sweeps both exactly 1; \
             1000 fixed-norm draws within {worst:.1e} relative"
        ),
    )
}

fn criterion_8(runs: &Result<MnistRuns, String>) -> Result<String, String> {
    let runs = runs.as_ref().map_err(|e| e.clone())?;
    let a = &runs.regularized;
    let b = &runs.regularized_repeat;
    if a.report.epochs.len() != b.report.epochs.len() {
        return Err(format!(
            "epoch counts differ: {} vs {}",
            a.report.epochs.len(),
            b.report.epochs.len()
        ));
    }
    for (ea, eb) in a.report.epochs.iter().zip(&b.report.epochs) {
        if ea.train_loss.to_bits() != eb.train_loss.to_bits()
            || ea.val_loss.to_bits() != eb.val_loss.to_bits()
        {
            return Err(format!(
                "epoch {} diverged: train {} vs {}, val {} vs {}",
                ea.epoch, ea.train_loss, eb.train_loss, ea.val_loss, eb.val_loss
            ));
        }
    }
    if a.robustness.to_bits() != b.robustness.to_bits() {
        return Err(format!(
            "robustness differs bitwise: {} vs {}",
            a.robustness, b.robustness
        ));
    }
    Ok(format!(
        "{} epochs of losses and the robustness aggregate {:.6} reproduced bitwise",
        a.report.epochs.len(),
        a.robustness
    ))
}
