mod common;

use clnas::analysis::{linear_cka, FeatureMatrix};
use clnas::builder::{decode, ComponentConfig, DownsampleKind, Network};
use clnas::genotype::{count_parameters, mutate, random_genotype, scale_to_budget, CODE_COUNT};
use clnas::harness::{AccuracyMatrix, ReplayBuffer};
use clnas::numerics::ops::{conv2d, linear, pool2d};
use clnas::numerics::{PoolKind, Tensor};
use clnas::{Bounds, Genotype, InputShape};
use common::{aia_direct, la_direct, rng};
use proptest::prelude::*;
use rand::Rng;

fn small_bounds() -> Bounds {
    Bounds {
        d_min: 1,
        d_max: 6,
        w_min: 4,
        w_max: 16,
        w_step: 4,
        code_max: 7,
        param_limit: None,
    }
}

fn component(kind: usize, skip: bool, gap: bool) -> ComponentConfig {
    ComponentConfig::custom(DownsampleKind::ALL[kind % 3], skip, gap)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn genotype_text_round_trips(seed in any::<u64>()) {
        let g = random_genotype(&mut rng(seed), &Bounds::default()).unwrap();
        let text = g.to_string();
        prop_assert_eq!(text.parse::<Genotype>().unwrap(), g);
        prop_assert_eq!(Genotype::from_codes(g.codes()), g);
    }

    #[test]
    fn mutation_is_closed_and_changes_one_code(seed in any::<u64>()) {
        let bounds = Bounds::default();
        let mut r = rng(seed);
        let parent = random_genotype(&mut r, &bounds).unwrap();
        let child = mutate(&parent, &mut r, &bounds).unwrap();
        bounds.check(&child).unwrap();
        prop_assert_ne!(child, parent);
        if child.depth != parent.depth {
            let remapped = parent.with_depth(child.depth, bounds.code_max);
            prop_assert_eq!(child, remapped);
            for x in parent.active_downsample().into_iter().chain(parent.active_doubling()) {
                let x2 = ((x * child.depth) / parent.depth).min(bounds.code_max);
                let gap = (x2 as f64 / child.depth as f64 - x as f64 / parent.depth as f64).abs();
                prop_assert!(gap < 1.0 / child.depth as f64);
            }
        } else {
            let differing = parent.codes().iter().zip(child.codes()).filter(|(a, b)| **a != *b).count();
            prop_assert_eq!(differing, 1);
        }
    }

    #[test]
    fn inert_codes_do_not_change_the_plan(seed in any::<u64>(), kind in 0usize..3, skip: bool, gap: bool) {
        let bounds = small_bounds();
        let mut r = rng(seed);
        let g = random_genotype(&mut r, &bounds).unwrap();
        let mut codes = g.codes();
        for c in codes.iter_mut().skip(2) {
            if *c >= g.depth {
                *c = r.gen_range(g.depth..=bounds.code_max.max(g.depth));
            }
        }
        let h = Genotype::from_codes(codes);
        let cfg = component(kind, skip, gap);
        let input = InputShape::square(3, 16);
        match (decode(&g, &cfg, input, 10), decode(&h, &cfg, input, 10)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.layers, b.layers),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "decodability differs between {} and {}", g, h),
        }
    }

    #[test]
    fn decoded_shapes_follow_the_halving_law(seed in any::<u64>(), kind in 0usize..3, skip: bool) {
        let mut r = rng(seed);
        let g = random_genotype(&mut r, &small_bounds()).unwrap();
        let cfg = component(kind, skip, true);
        let Ok(plan) = decode(&g, &cfg, InputShape::square(3, 16), 10) else { return Ok(()) };
        let halvings = g.active_downsample().len() as u32;
        let doublings = g.active_doubling().len() as u32;
        let net = Network::<f32>::instantiate(&plan, &mut r);
        let map = net.feature_map(&Tensor::full(&[2, 3, 16, 16], 0.5)).unwrap();
        prop_assert_eq!(map.shape(), &[2, g.width * 2usize.pow(doublings), 16 >> halvings, 16 >> halvings][..]);
    }

    #[test]
    fn count_matches_instantiation(seed in any::<u64>(), kind in 0usize..3, skip: bool, gap: bool) {
        let mut r = rng(seed);
        let g = random_genotype(&mut r, &small_bounds()).unwrap();
        let cfg = component(kind, skip, gap);
        let input = InputShape::square(3, 16);
        let Ok(plan) = decode(&g, &cfg, input, 10) else { return Ok(()) };
        let net = Network::<f32>::instantiate(&plan, &mut r);
        let summed: usize = net.store().iter().map(|p| p.value.numel()).sum();
        prop_assert_eq!(count_parameters(&g, &cfg, input, 10).unwrap(), summed);
    }

    #[test]
    fn budget_scaling_respects_limit(seed in any::<u64>(), limit in 3_000usize..200_000) {
        let bounds = Bounds::default();
        let mut r = rng(seed);
        let g = random_genotype(&mut r, &bounds).unwrap();
        let cfg = ComponentConfig::class_il();
        let input = InputShape::square(3, 16);
        if count_parameters(&g, &cfg, input, 10).is_err() {
            return Ok(());
        }
        match scale_to_budget(&g, limit, &bounds, &cfg, input, 10) {
            Ok(s) => {
                prop_assert!(count_parameters(&s, &cfg, input, 10).unwrap() <= limit);
                prop_assert!(s.depth >= bounds.d_min && s.width >= bounds.w_min);
                prop_assert!(s.depth <= g.depth && s.width <= g.width);
            }
            Err(clnas::Error::InfeasibleBudget { minimum, .. }) => prop_assert!(minimum > limit),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn metrics_match_direct_evaluation(seed in any::<u64>(), k in 1usize..12) {
        let rows = common::random_stage_rows(&mut rng(seed), k);
        let m = AccuracyMatrix::from_rows(rows.clone()).unwrap();
        prop_assert!((m.aia() - aia_direct(&rows)).abs() < 1e-12);
        prop_assert!((m.la() - la_direct(&rows)).abs() < 1e-12);
        if k == 1 {
            prop_assert_eq!(m.aia(), m.la());
            prop_assert!(m.af().is_err());
        }
    }

    #[test]
    fn buffer_stays_within_capacity(seed in any::<u64>(), capacity in 10usize..60, tasks in 1usize..6) {
        let mut r = rng(seed);
        let mut buf = ReplayBuffer::new(capacity);
        let mut seen = Vec::new();
        let mut next = 0;
        for t in 0..tasks {
            let data: Vec<(usize, Vec<usize>)> = (0..2)
                .map(|c| {
                    let n = r.gen_range(1..30);
                    let idx: Vec<usize> = (next..next + n).collect();
                    next += n;
                    (2 * t + c, idx)
                })
                .collect();
            seen.extend(data.iter().flat_map(|(_, v)| v.iter().copied()));
            buf.update(&data, seed ^ t as u64).unwrap();
            prop_assert!(buf.len() <= capacity);
            prop_assert!(buf.indices().iter().all(|i| seen.contains(i)));
        }
    }

    #[test]
    fn cka_is_symmetric_bounded_and_invariant(seed in any::<u64>(), n in 4usize..16, d1 in 1usize..6, d2 in 1usize..6, c in 0.1f64..10.0) {
        let mut r = rng(seed);
        let mut rand_mat = |d: usize| FeatureMatrix::new(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = rand_mat(d1);
        let y = rand_mat(d2);
        let q = random_orthogonal(&mut rng(seed ^ 1), d1);
        let a = linear_cka(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - linear_cka(&y, &x).unwrap()).abs() < 1e-8);
        let scaled = FeatureMatrix::new(n, d1, x.data().iter().map(|v| v * c).collect()).unwrap();
        prop_assert!((linear_cka(&scaled, &y).unwrap() - a).abs() < 1e-8);
        prop_assert!((linear_cka(&x, &scaled).unwrap() - 1.0).abs() < 1e-8);
        let rotated = matmul(x.data(), n, d1, &q, d1);
        let rotated = FeatureMatrix::new(n, d1, rotated).unwrap();
        prop_assert!((linear_cka(&rotated, &y).unwrap() - a).abs() < 1e-8);
        prop_assert!((linear_cka(&x, &rotated).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn op_shapes_follow_their_formulas(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4, h in 2usize..9, k in prop::sample::select(vec![1usize, 3]), stride in 1usize..3,
    ) {
        let pad = k / 2;
        let x = Tensor::<f64>::full(&[n, cin, h, h], 0.5);
        let kernel = Tensor::full(&[cout, cin, k, k], 0.1);
        let y = conv2d(&x, &kernel, None, stride, pad).unwrap();
        let out = (h + 2 * pad - k) / stride + 1;
        prop_assert_eq!(y.shape(), &[n, cout, out, out][..]);
        if h % 2 == 0 {
            for kind in [PoolKind::Max, PoolKind::Avg] {
                let (p, _) = pool2d(&x, kind).unwrap();
                prop_assert_eq!(p.shape(), &[n, cin, h / 2, h / 2][..]);
            }
        } else {
            prop_assert!(pool2d(&x, PoolKind::Max).is_err());
        }
        let flat = Tensor::<f64>::full(&[n, cin * h], 1.0);
        let l = linear(&flat, &Tensor::full(&[cin * h, cout], 0.5), &Tensor::zeros(&[cout])).unwrap();
        prop_assert_eq!(l.shape(), &[n, cout][..]);
    }
}

fn matmul(a: &[f64], n: usize, k: usize, b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|l| a[i * k + l] * b[l * m + j]).sum();
        }
    }
    out
}

/// Gram-Schmidt on a random square matrix.
fn random_orthogonal(r: &mut impl Rng, d: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut q = vec![0.0; d * d];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..d {
            q[i * d + j] = c[i];
        }
    }
    q
}

#[test]
fn forward_is_bit_deterministic() {
    let g: Genotype = "3,8,0,1,7,7,7,1,7,7,7,7".parse().unwrap();
    let plan = decode(&g, &ComponentConfig::class_il(), InputShape::square(3, 16), 10).unwrap();
    let x = Tensor::<f32>::full(&[2, 3, 16, 16], 0.25);
    let a = Network::<f32>::instantiate(&plan, &mut rng(4)).features(&x).unwrap();
    let b = Network::<f32>::instantiate(&plan, &mut rng(4)).features(&x).unwrap();
    assert_eq!(a, b);
    assert_eq!(CODE_COUNT, 12);
}
