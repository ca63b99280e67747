use proptest::prelude::*;

use iwan_core::eval::{moving_average, relative_l2, TestGrid};
use iwan_core::net::{project_ball, Activation, Mlp, MlpSpec, ParamVector};
use iwan_core::optim::{gradient_mapping, OptimizerKind, OptimizerState};
use iwan_core::problems::{apply_noise, make_problem, ProblemId};
use iwan_core::sampling::{mc_integral, sample_boundary, sample_interior, stream_rng, BoxDomain, Density};

fn vec_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_in_ball_and_is_idempotent(v in vec_strategy(1..40), b in 0.01..100.0f64) {
        let p = project_ball(&ParamVector::from_vec(v.clone()), b);
        let r = (2.0 * b).sqrt();
        prop_assert!(p.norm() <= r * (1.0 + 1e-12));
        let again = project_ball(&p, b);
        for (x, y) in p.as_slice().iter().zip(again.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-12 * r);
        }
        let inside = ParamVector::from_vec(v);
        if inside.norm() <= r {
            prop_assert_eq!(project_ball(&inside, b), inside);
        }
    }

    #[test]
    fn adagrad_accumulator_never_decreases(grads in prop::collection::vec(vec_strategy(3..4), 1..20)) {
        let mut s = OptimizerState::new(OptimizerKind::Adagrad, 0.01, f64::INFINITY, 3);
        let mut theta = ParamVector::zeros(3);
        let mut prev = s.first.clone();
        for g in grads {
            theta = s.step(&theta, &ParamVector::from_vec(g)).unwrap();
            prop_assert!(s.first.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = s.first.clone();
        }
    }

    #[test]
    fn mapping_is_gradient_without_projection(v in vec_strategy(1..20), tau in 1e-3..1.0f64) {
        let theta = ParamVector::from_vec(v.iter().map(|x| x * 0.5).collect());
        let g = ParamVector::from_vec(v);
        let m = gradient_mapping(&theta, &g, tau, f64::INFINITY);
        for (a, b) in m.iter().zip(g.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn mapping_never_exceeds_gradient(v in vec_strategy(2..20), w in vec_strategy(2..20), b in 0.1..50.0f64) {
        let n = v.len().min(w.len());
        let theta = project_ball(&ParamVector::from_vec(v[..n].to_vec()), b);
        let g = ParamVector::from_vec(w[..n].to_vec());
        let m = gradient_mapping(&theta, &g, 0.1, b);
        let mn = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(mn <= g.norm() * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn moving_average_stays_within_range(t in vec_strategy(1..60), w in 1usize..12) {
        let s = moving_average(&t, w).unwrap();
        let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(s.len(), t.len());
        prop_assert!(s.iter().all(|v| *v >= lo - 1e-9 && *v <= hi + 1e-9));
        prop_assert_eq!(s[0], t[0]);
    }

    #[test]
    fn relative_error_is_scale_invariant(c in prop_oneof![-10.0..-0.1f64, 0.1..10.0f64], k in 0.0..3.0f64) {
        let p = make_problem(ProblemId::Test2, 2, 0.0).unwrap();
        let grid = TestGrid::new(&p, 1);
        let truth = |x: &[f64]| p.gamma_star(x);
        let cand = |x: &[f64]| p.gamma_star(x) + k * x[0];
        let base = relative_l2(cand, truth, &grid).unwrap();
        let scaled = relative_l2(|x: &[f64]| c * cand(x), |x: &[f64]| c * truth(x), &grid).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn noise_stays_within_truncation(v in -10.0..10.0f64, sigma in 0.0..0.5f64, seed in 0u64..1000) {
        let mut rng = stream_rng(seed, 0, 3);
        let n = apply_noise(v, sigma, &mut rng);
        prop_assert!((n - v).abs() <= 100.0 * sigma * v.abs() + 1e-12);
    }

    #[test]
    fn samples_respect_their_region(d in 1usize..6, n in 1usize..200, seed in 0u64..1000) {
        let dom = BoxDomain::cube(d, -1.0, 1.0).unwrap();
        let mut rng = stream_rng(seed, 1, 0);
        let inner = sample_interior(&dom, n, &Density::Uniform, &mut rng).unwrap();
        prop_assert_eq!(inner.len(), n);
        prop_assert!(inner.points.iter().all(|x| x.abs() < 1.0));
        let ones = vec![1.0; n];
        prop_assert!((mc_integral(&inner, &ones).unwrap() - dom.volume()).abs() < 1e-9);
        let nb = 2 * d * n;
        let bd = sample_boundary(&dom, nb, &mut rng);
        prop_assert_eq!(bd.len(), nb);
        for i in 0..nb {
            let x = bd.point(i);
            prop_assert!(x.iter().any(|c| (c.abs() - 1.0).abs() < 1e-12));
            prop_assert!(bd.weights[i] > 0.0);
        }
        let ones = vec![1.0; nb];
        prop_assert!((mc_integral(&bd, &ones).unwrap() - dom.boundary_area()).abs() < 1e-9);
    }

    #[test]
    fn gaussian_samples_stay_inside(n in 1usize..100, seed in 0u64..1000) {
        let dom = BoxDomain::cube(3, -1.0, 1.0).unwrap();
        let dens = Density::GaussianRestricted { mean: [-0.2, 0.2], inverse_covariance_diag: [1.0, 25.0] };
        let b = sample_interior(&dom, n, &dens, &mut stream_rng(seed, 0, 0)).unwrap();
        prop_assert!(b.points.iter().all(|x| x.abs() < 1.0));
        prop_assert!(b.weights.iter().all(|w| *w > 0.0 && w.is_finite()));
    }

    #[test]
    fn network_value_matches_forward(seed in 0u64..500, width in 1usize..8, x in prop::collection::vec(-1.0..1.0f64, 3)) {
        let spec = MlpSpec::new(3, vec![width, width], vec![Activation::Tanh, Activation::Sinc], Activation::Elu).unwrap();
        let net = Mlp::new(spec.clone()).unwrap();
        let p = net.init(&mut stream_rng(seed, 0, 0xf0));
        prop_assert_eq!(p.len(), spec.param_count());
        let f = net.forward(&p, &x).unwrap();
        prop_assert_eq!(f.value, net.value(&p, &x).unwrap());
        prop_assert_eq!(f.input_grad.len(), 3);
    }
}
