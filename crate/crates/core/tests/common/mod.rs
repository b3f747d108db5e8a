#![allow(dead_code)]

use clnas::builder::{decode, ComponentConfig, DownsampleKind, HeadSelector, Mode, Network};
use clnas::harness::{make_synthetic_benchmark, split_tasks, SyntheticSpec, TaskStream, TrainConfig};
use clnas::numerics::{Tape, Tensor};
use clnas::{Bounds, Genotype, InputShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean of per-stage means, written directly from the definition.
pub fn aia_direct(a: &[Vec<f64>]) -> f64 {
    let k = a.len();
    let mut total = 0.0;
    for b in 0..k {
        let mut s = 0.0;
        for i in 0..=b {
            s += a[b][i];
        }
        total += s / (b + 1) as f64;
    }
    total / k as f64
}

pub fn la_direct(a: &[Vec<f64>]) -> f64 {
    let k = a.len();
    a[k - 1].iter().sum::<f64>() / k as f64
}

/// Random lower-triangular matrix, stored stage-major.
pub fn random_stage_rows(rng: &mut impl Rng, k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|b| (0..=b).map(|_| rng.gen_range(0.0..=1.0)).collect()).collect()
}

/// `HSIC(X, Y) / sqrt(HSIC(X, X) HSIC(Y, Y))` built from n×n centered linear
/// Gram matrices.
pub fn cka_hsic(x: &[f64], dx: usize, y: &[f64], dy: usize, n: usize) -> f64 {
    let gram = |m: &[f64], d: usize| {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = (0..d).map(|c| m[i * d + c] * m[j * d + c]).sum();
            }
        }
        // H K H with H = I - 11ᵀ/n
        let row: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k[i * n + j]).sum::<f64>() / n as f64).collect();
        let col: Vec<f64> = (0..n).map(|j| (0..n).map(|i| k[i * n + j]).sum::<f64>() / n as f64).collect();
        let all = row.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] += all - row[i] - col[j];
            }
        }
        k
    };
    let kx = gram(x, dx);
    let ky = gram(y, dy);
    let hsic = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    hsic(&kx, &ky) / (hsic(&kx, &kx) * hsic(&ky, &ky)).sqrt()
}

pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    /// Draws rejected because the stencil crossed a ReLU or max-pool kink.
    pub kinked: usize,
    pub params: usize,
}

/// Loss and activation pattern of one train-mode forward pass.
fn loss_of(net: &mut Network<f64>, x: &Tensor<f64>, labels: &[usize]) -> (f64, Vec<usize>) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let logits = net.forward_logits(&mut tape, xv, HeadSelector::Unified, Mode::Train).unwrap();
    let (loss, _) = tape.softmax_cross_entropy(logits, labels, None).unwrap();
    (tape.value(loss).data()[0], tape.activation_pattern())
}

/// Relative error with a floor on the denominator so that gradients at
/// round-off scale are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences with step `h` on `coords` sampled entries of a random
/// decoded network of at most `max_params` parameters. A coordinate whose
/// `±h` stencil changes the activation pattern is not differentiable there
/// and is redrawn.
pub fn gradcheck_random_network(seed: u64, max_params: usize, coords: usize, h: f64) -> GradCheck {
    let mut r = rng(seed);
    let bounds = Bounds {
        d_min: 1,
        d_max: 4,
        w_min: 2,
        w_max: 8,
        w_step: 2,
        code_max: 5,
        param_limit: None,
    };
    let input = InputShape::square(3, 8);
    let classes = 4;
    let (mut net, _) = loop {
        let g = clnas::genotype::random_genotype(&mut r, &bounds).unwrap();
        let kind = DownsampleKind::ALL[r.gen_range(0..3)];
        let cfg = ComponentConfig::custom(kind, r.gen_bool(0.5), r.gen_bool(0.5));
        let Ok(plan) = decode(&g, &cfg, input, classes) else { continue };
        if plan.param_count() > max_params {
            continue;
        }
        break (Network::<f64>::instantiate(&plan, &mut r), plan);
    };
    let n = 4;
    let x = Tensor::new(vec![n, 3, 8, 8], (0..n * 192).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let logits = net.forward_logits(&mut tape, xv, HeadSelector::Unified, Mode::Train).unwrap();
    let (loss, _) = tape.softmax_cross_entropy(logits, &labels, None).unwrap();
    net.store_mut().zero_grad();
    clnas::numerics::backward_into(&tape, loss, net.store_mut()).unwrap();
    let analytic: Vec<Vec<f64>> = net.store().iter().map(|p| p.grad.data().to_vec()).collect();

    let sizes: Vec<usize> = net.store().iter().map(|p| p.value.numel()).collect();
    let total: usize = sizes.iter().sum();
    let (_, base_pattern) = loss_of(&mut net, &x, &labels);
    let mut passed = 0;
    let mut kinked = 0;
    let mut checked = 0;
    while checked < coords {
        let mut flat = r.gen_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let id = clnas::numerics::ParamId(pi);
        let orig = net.store().get(id).value.data()[flat];
        net.store_mut().get_mut(id).value.data_mut()[flat] = orig + h;
        let (up, up_pattern) = loss_of(&mut net, &x, &labels);
        net.store_mut().get_mut(id).value.data_mut()[flat] = orig - h;
        let (down, down_pattern) = loss_of(&mut net, &x, &labels);
        net.store_mut().get_mut(id).value.data_mut()[flat] = orig;
        if up_pattern != base_pattern || down_pattern != base_pattern {
            kinked += 1;
            assert!(kinked < 100 * coords, "almost every stencil crosses a kink");
            continue;
        }
        checked += 1;
        let numeric = (up - down) / (2.0 * h);
        if rel_err(analytic[pi][flat], numeric) < 1e-4 {
            passed += 1;
        } else if std::env::var("GRADCHECK_DEBUG").is_ok() {
            eprintln!("{} [{flat}] analytic {:e} numeric {:e}", net.store().get(id).name, analytic[pi][flat], numeric);
        }
    }
    GradCheck {
        checked,
        passed,
        kinked,
        params: total,
    }
}

/// The desk-scale benchmark used by the end-to-end checks: 10 classes in
/// five 2-class tasks of 16×16×3 images.
pub fn desk_stream(noise: f64) -> TaskStream {
    let bench = make_synthetic_benchmark(&SyntheticSpec {
        num_classes: 10,
        per_class_train: 20,
        per_class_test: 20,
        image_size: 16,
        channels: 3,
        noise_level: noise,
        seed: 1,
    })
    .unwrap();
    split_tasks(&bench, 5, 2, 1).unwrap()
}

pub fn desk_train() -> TrainConfig {
    TrainConfig {
        epochs_first: 5,
        epochs_rest: 3,
        lr: 0.02,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

pub fn genotype(text: &str) -> Genotype {
    text.parse().unwrap()
}
