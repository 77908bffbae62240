//! Property tests for the structural invariants.

use bridgesim_core::diffusion::{builtin_model, BuiltinSpec};
use bridgesim_core::integrator::{exact_brownian_bridge, Refinement, TimeGrid};
use bridgesim_core::special::log_normal_mass;
use bridgesim_core::{DiffusionSpec, DomainBox, ScaleFunction};
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a_matrix_symmetric_and_psd(
        e in proptest::array::uniform4(-3.0f64..3.0),
        x in -5.0f64..5.0,
        t in 0.0f64..2.0,
    ) {
        let sigma = DMatrix::from_row_slice(2, 2, &e);
        let spec = DiffusionSpec::new(
            2,
            |_t, _x| vec![0.0, 0.0],
            move |_t, _x| sigma.clone(),
            DomainBox::unbounded(2),
        );
        let a = spec.a_matrix(t, &[x, -x]).unwrap();
        prop_assert!((a[(0, 1)] - a[(1, 0)]).abs() <= 1e-12);
        let eig = a.symmetric_eigenvalues();
        prop_assert!(eig.min() >= -1e-10, "min eigenvalue {}", eig.min());
    }

    #[test]
    fn brownian_bridge_pins_both_ends(
        x in -3.0f64..3.0,
        z in -3.0f64..3.0,
        t_star in 0.2f64..4.0,
        seed in any::<u64>(),
    ) {
        let grid = TimeGrid::new(0.0, t_star, 16, Refinement::Uniform, 1e-3 * t_star).unwrap();
        let p = exact_brownian_bridge(&[x], &[z], 1.0, &grid, seed, 0).unwrap();
        prop_assert_eq!(p.states[0][0], x);
        prop_assert_eq!(p.terminal.unwrap()[0], z);
    }

    #[test]
    fn time_grids_are_strictly_increasing(
        n in 2usize..200,
        gamma in 1.0f64..4.0,
        delta_exp in 1.0f64..5.0,
    ) {
        let delta = 10f64.powf(-delta_exp);
        let grid = TimeGrid::new(0.0, 1.0, n, Refinement::Geometric(gamma), delta).unwrap();
        prop_assert_eq!(grid.nodes.len(), n + 1);
        prop_assert!(grid.nodes.windows(2).all(|w| w[0] < w[1]));
        prop_assert!((grid.nodes[n] - (1.0 - delta)).abs() < 1e-12);
    }

    #[test]
    fn normal_mass_is_a_log_probability(
        a in -30.0f64..30.0,
        width in 0.01f64..10.0,
    ) {
        let lm = log_normal_mass(a, a + width);
        prop_assert!(lm <= 1e-12, "mass above one: {lm}");
        // widening the interval cannot lose mass
        let wider = log_normal_mass(a - 1.0, a + width + 1.0);
        prop_assert!(wider >= lm);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scale_functions_increase(
        theta in 0.1f64..2.0,
        sigma in 0.5f64..2.0,
        x in -1.5f64..1.5,
    ) {
        let spec = DiffusionSpec::scalar(move |y| -theta * y, move |_| sigma, f64::NEG_INFINITY);
        let sf = ScaleFunction::new(spec, 0.0).unwrap();
        let lo = sf.scale(x).unwrap();
        let hi = sf.scale(x + 0.25).unwrap();
        prop_assert!(lo < hi, "s({x}) = {lo} !< s({}) = {hi}", x + 0.25);
        // anchored at the reference point
        prop_assert!(sf.scale(0.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fd_gradient_matches_analytic_for_ou(
        theta in 0.2f64..2.0,
        x in -2.0f64..2.0,
        y in -2.0f64..2.0,
        t in 0.05f64..1.5,
    ) {
        let m = builtin_model(&BuiltinSpec::Ou { theta, mean: 0.0, sigma: 1.0 }).unwrap();
        let analytic = m.grad_log(t, &[x], &[y]).unwrap()[0];
        let h = 1e-5 * x.abs().max(1.0);
        let fd = (m.log_density(t, &[x + h], &[y]).unwrap()
            - m.log_density(t, &[x - h], &[y]).unwrap())
            / (2.0 * h);
        let scale = analytic.abs().max(1.0);
        prop_assert!((analytic - fd).abs() / scale < 1e-5, "{analytic} vs {fd}");
    }
}
