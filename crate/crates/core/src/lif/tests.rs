use super::*;
use proptest::prelude::*;

fn chain_h(v: &[f64]) -> Tensor4<f64> {
    Tensor4::from_vec([1, 1, v.len(), 1], v.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

const CHAIN: [f64; 4] = [0.5, 0.1, 0.1, 0.3];

#[test]
fn four_step_chain_forward() {
    let p = LifParams::default();
    let (r, saved) = forward(
        &chain_h(&CHAIN),
        &p,
        &LifConfig::new(Direction::Vertical, 4),
    )
    .unwrap();
    assert!(close(r.data(), &[0.5, 0.25, 0.25, 0.33125], 1e-15));
    assert!(close(saved.u.data(), &[0.5, 0.1, 0.125, 0.33125], 1e-15));
    assert_eq!(saved.fired, vec![true, false, false, true]);
}

#[test]
fn two_groups_split_the_chain() {
    let p = LifParams::default();
    let (r, _) = forward(
        &chain_h(&CHAIN),
        &p,
        &LifConfig::new(Direction::Vertical, 2),
    )
    .unwrap();
    assert!(close(r.data(), &[0.5, 0.25, 0.25, 0.325], 1e-15));
}

#[test]
fn horizontal_matches_vertical_on_transposed_input() {
    let p = LifParams::default();
    let x = Tensor4::from_vec([1, 1, 1, 4], CHAIN.to_vec()).unwrap();
    let (r, _) = forward(&x, &p, &LifConfig::new(Direction::Horizontal, 4)).unwrap();
    assert!(close(r.data(), &[0.5, 0.25, 0.25, 0.33125], 1e-15));
}

#[test]
fn single_step_groups_clamp() {
    let p = LifParams::new(0.25, 0.0);
    let x = Tensor4::from_vec([1, 1, 1, 2], vec![-1.0, 0.5]).unwrap();
    let (r, _) = forward(&x, &p, &LifConfig::new(Direction::Horizontal, 1)).unwrap();
    assert_eq!(r.data(), &[0.0, 0.5]);
}

#[test]
fn rejects_non_finite_and_zero_groups() {
    let p = LifParams::default();
    let mut x = Tensor4::<f64>::zeros([1, 2, 3, 3]);
    x.set(0, 1, 2, 0, f64::NAN);
    match forward(&x, &p, &LifConfig::new(Direction::Vertical, 2)) {
        Err(Error::NonFinite { index, .. }) => assert_eq!(index, [0, 1, 2, 0]),
        other => panic!("{other:?}"),
    }
    let x = Tensor4::<f64>::zeros([1, 1, 2, 2]);
    assert!(forward(&x, &p, &LifConfig::new(Direction::Vertical, 0)).is_err());
}

#[test]
fn empty_input_is_fine() {
    let x = Tensor4::<f32>::zeros([0, 4, 3, 3]);
    let (r, saved) = forward(
        &x,
        &LifParams::default(),
        &LifConfig::new(Direction::Vertical, 4),
    )
    .unwrap();
    assert!(r.is_empty());
    let g = backward(&r, &saved).unwrap();
    assert_eq!(g.d_tau, 0.0);
}

#[test]
fn four_step_chain_backward() {
    // Frozen against central differences of Σ r (step 1e-6, f64):
    // d_input = [1, 0.0625, 0.25, 1], d_tau = 0.15, d_v_th = 2.
    let p = LifParams::default();
    let cfg = LifConfig::new(Direction::Vertical, 4);
    let (r, saved) = forward(&chain_h(&CHAIN), &p, &cfg).unwrap();
    let g = backward(&Tensor4::full(r.shape(), 1.0), &saved).unwrap();
    assert!(close(g.d_input.data(), &[1.0, 0.0625, 0.25, 1.0], 1e-15));
    assert!((g.d_v_th - 2.0).abs() < 1e-15);
    assert!((g.d_tau - 0.15).abs() < 1e-15);

    let oracle = |y: &[f64], tau: f64, v: f64| oracle_scalar(y, tau, v).r.iter().sum::<f64>();
    let h = 1e-6;
    let fd_tau = (oracle(&CHAIN, 0.25 + h, 0.25) - oracle(&CHAIN, 0.25 - h, 0.25)) / (2.0 * h);
    let fd_vth = (oracle(&CHAIN, 0.25, 0.25 + h) - oracle(&CHAIN, 0.25, 0.25 - h)) / (2.0 * h);
    assert!((fd_tau - g.d_tau).abs() < 1e-8);
    assert!((fd_vth - g.d_v_th).abs() < 1e-8);
    for i in 0..4 {
        let mut a = CHAIN;
        let mut b = CHAIN;
        a[i] += h;
        b[i] -= h;
        let fd = (oracle(&a, 0.25, 0.25) - oracle(&b, 0.25, 0.25)) / (2.0 * h);
        assert!((fd - g.d_input.data()[i]).abs() < 1e-8, "index {i}: {fd}");
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let x = Tensor4::from_fn([2, 3, 5, 4], |i| ((i * 7919) % 13) as f64 / 10.0 - 0.3);
    let (r, saved) = forward(
        &x,
        &LifParams::default(),
        &LifConfig::new(Direction::Horizontal, 3),
    )
    .unwrap();
    let g = backward(&Tensor4::zeros(r.shape()), &saved).unwrap();
    assert!(g.d_input.data().iter().all(|&v| v == 0.0));
    assert_eq!((g.d_tau, g.d_v_th), (0.0, 0.0));
}

#[test]
fn single_step_backward_is_masked_upstream() {
    let x = Tensor4::from_vec([1, 1, 1, 4], vec![0.1, 0.4, -0.2, 0.3]).unwrap();
    let (_, saved) = forward(
        &x,
        &LifParams::default(),
        &LifConfig::new(Direction::Horizontal, 1),
    )
    .unwrap();
    let dr = Tensor4::from_vec([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let g = backward(&dr, &saved).unwrap();
    assert_eq!(g.d_input.data(), &[0.0, 2.0, 0.0, 4.0]);
    assert_eq!(g.d_v_th, 4.0);
    assert_eq!(g.d_tau, 0.0);
}

#[test]
fn backward_rejects_shape_mismatch() {
    let (_, saved) = forward(
        &chain_h(&CHAIN),
        &LifParams::default(),
        &LifConfig::new(Direction::Vertical, 4),
    )
    .unwrap();
    assert!(backward(&Tensor4::zeros([1, 1, 3, 1]), &saved).is_err());
}

#[test]
fn scalar_oracle_examples() {
    let t = oracle_scalar(&CHAIN, 0.25, 0.25);
    assert!(close(&t.r, &[0.5, 0.25, 0.25, 0.33125], 1e-15));
    assert_eq!(oracle_scalar(&[-3.0], 0.25, 0.25).r, vec![0.25]);
    let t = oracle_scalar(&[0.25, 0.25], 0.0, 0.25);
    assert_eq!(t.u, vec![0.25, 0.25]);
    assert_eq!(t.r, vec![0.25, 0.25]);
}

#[test]
fn classical_binary_examples() {
    assert_eq!(
        classical_binary(&CHAIN, 0.25, 0.25),
        vec![true, false, false, true]
    );
    assert!(classical_binary(&[0.1, 0.2, 0.25, -1.0], 0.0, 0.25)
        .iter()
        .all(|&s| !s));
    assert!(classical_binary(&[0.3, 0.9, 2.0], 0.7, 0.25)
        .iter()
        .all(|&s| s));
}

#[test]
fn gradient_check_default_case() {
    let r = forward_backward_check(
        Shape::new(2, 3, 8, 8),
        LifConfig::new(Direction::Vertical, 4),
        7,
        &CheckOptions::default(),
    )
    .unwrap();
    assert!(r.passed(1e-5), "{r:?}");
}

#[test]
fn gradient_check_zero_upstream_and_all_firing() {
    let opts = CheckOptions {
        zero_upstream: true,
        ..Default::default()
    };
    let r = forward_backward_check(
        Shape::new(1, 2, 6, 5),
        LifConfig::new(Direction::Horizontal, 4),
        1,
        &opts,
    )
    .unwrap();
    assert_eq!(r.max_error(), 0.0);

    let opts = CheckOptions {
        all_above_threshold: true,
        ..Default::default()
    };
    let r = forward_backward_check(
        Shape::new(1, 2, 6, 5),
        LifConfig::new(Direction::Vertical, 3),
        2,
        &opts,
    )
    .unwrap();
    // Finite differences only carry rounding noise here; the analytic side is exact (below).
    assert!(r.max_error() < 1e-9, "{r:?}");
    assert_eq!(r.d_v_th, 0.0);
}

#[test]
fn all_firing_backward_passes_upstream_through_exactly() {
    let x = Tensor4::from_fn([2, 2, 5, 6], |i| 0.3 + (i % 7) as f64 * 0.1);
    let w = Tensor4::from_fn(x.shape(), |i| ((i * 31) % 11) as f64 - 5.0);
    for dir in [Direction::Vertical, Direction::Horizontal] {
        let (_, saved) = forward(&x, &LifParams::default(), &LifConfig::new(dir, 4)).unwrap();
        let g = backward(&w, &saved).unwrap();
        assert_eq!(g.d_input, w);
        assert_eq!((g.d_tau, g.d_v_th), (0.0, 0.0));
    }
}

#[test]
fn corrupted_backward_is_caught() {
    let r = check::forward_backward_check_with(
        Shape::new(1, 2, 4, 4),
        LifConfig::new(Direction::Vertical, 4),
        3,
        &CheckOptions::default(),
        |d, s| {
            let mut g = backward(d, s)?;
            g.d_tau *= 1.01;
            Ok(g)
        },
    )
    .unwrap();
    assert!(!r.passed(1e-5));
    assert!(r.d_tau > 1e-3);
}

#[test]
fn impossible_margin_is_reported() {
    let opts = CheckOptions {
        margin: 10.0,
        max_attempts: 3,
        ..Default::default()
    };
    let e = forward_backward_check(
        Shape::new(1, 1, 2, 2),
        LifConfig::new(Direction::Vertical, 2),
        0,
        &opts,
    )
    .unwrap_err();
    assert!(matches!(e, Error::MarginNotFound { attempts: 3, .. }));
}

#[test]
fn parallel_and_sequential_paths_are_bit_identical() {
    let x = Tensor4::from_fn([3, 5, 9, 7], |i| ((i as f64) * 0.7311).sin());
    let p = LifParams::new(0.4, 0.1);
    for cfg in [
        LifConfig::new(Direction::Vertical, 4),
        LifConfig::new(Direction::Horizontal, 3),
    ] {
        crate::exec::set_parallel(false);
        let (r0, s0) = forward(&x, &p, &cfg).unwrap();
        let g0 = backward(&x, &s0).unwrap();
        crate::exec::set_parallel(true);
        let (r1, s1) = forward(&x, &p, &cfg).unwrap();
        let g1 = backward(&x, &s1).unwrap();
        assert_eq!(r0, r1);
        assert_eq!(g0, g1);
    }
}

/// Applies the scalar oracle to every chain of `x` independently.
fn oracle_tensor(x: &Tensor4<f64>, p: &LifParams<f64>, cfg: &LifConfig) -> Vec<f64> {
    let s = x.shape();
    let mut out = vec![0.0; s.len()];
    let (along, across) = match cfg.direction {
        Direction::Vertical => (s.h, s.w),
        Direction::Horizontal => (s.w, s.h),
    };
    for i in 0..s.n {
        for j in 0..s.c {
            for a in 0..across {
                let idx = |t: usize| match cfg.direction {
                    Direction::Vertical => s.offset(i, j, t, a),
                    Direction::Horizontal => s.offset(i, j, a, t),
                };
                let mut start = 0;
                while start < along {
                    let end = (start + cfg.groups).min(along);
                    let chain: Vec<f64> = (start..end).map(|t| x.data()[idx(t)]).collect();
                    let tr = oracle_scalar(&chain, p.tau, p.v_th);
                    for (k, t) in (start..end).enumerate() {
                        out[idx(t)] = tr.r[k];
                    }
                    start = end;
                }
            }
        }
    }
    out
}

fn arb_case() -> impl Strategy<Value = (Tensor4<f64>, LifParams<f64>, LifConfig)> {
    (
        1usize..3,
        1usize..4,
        1usize..9,
        1usize..9,
        1usize..10,
        any::<bool>(),
        0.0f64..1.0,
        -0.5f64..0.5,
    )
        .prop_flat_map(|(n, c, h, w, g, vert, tau, v_th)| {
            prop::collection::vec(-1.0f64..1.5, n * c * h * w).prop_map(move |data| {
                let dir = if vert {
                    Direction::Vertical
                } else {
                    Direction::Horizontal
                };
                (
                    Tensor4::from_vec([n, c, h, w], data).unwrap(),
                    LifParams::new(tau, v_th),
                    LifConfig::new(dir, g),
                )
            })
        })
}

proptest! {
    #[test]
    fn prop_matches_oracle_exactly((x, p, cfg) in arb_case()) {
        let (r, _) = forward(&x, &p, &cfg).unwrap();
        prop_assert_eq!(r.data(), &oracle_tensor(&x, &p, &cfg)[..]);
    }

    #[test]
    fn prop_floor_bound_and_mask_consistency((x, p, cfg) in arb_case()) {
        let (r, saved) = forward(&x, &p, &cfg).unwrap();
        prop_assert!(r.data().iter().all(|&v| v >= p.v_th));
        for (u, &o) in saved.u.data().iter().zip(&saved.fired) {
            prop_assert_eq!(o, *u > p.v_th);
        }
    }

    #[test]
    fn prop_fire_reset_identity((x, p, cfg) in arb_case()) {
        let lifted = x.map(|v| p.v_th + 0.01 + v.abs());
        let (r, _) = forward(&lifted, &p, &cfg).unwrap();
        prop_assert_eq!(r.data(), lifted.data());
    }

    #[test]
    fn prop_global_when_groups_cover_axis((x, p, cfg) in arb_case(), extra in 0usize..5) {
        let extent = x.shape().extent(cfg.direction.axis());
        let (a, _) = forward(&x, &p, &LifConfig::new(cfg.direction, extent + extra)).unwrap();
        let (b, _) = forward(&x, &p, &LifConfig::new(cfg.direction, extent)).unwrap();
        prop_assert_eq!(a, b);
    }
}
