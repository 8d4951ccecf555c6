use proptest::prelude::*;
use tvreg::{
    bregman, divergence, gradient, Field, ForwardOperator, Grid, Measurement, SmoothFunctional, SmoothedTvPenalty, VectorField,
};

fn grid_and_values() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>)> {
    prop_oneof![
        (2usize..20).prop_map(|n| vec![n]),
        (2usize..8, 2usize..8).prop_map(|(a, b)| vec![a, b]),
    ]
    .prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        (
            Just(dims),
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    })
}

fn field(dims: &[usize], v: Vec<f64>) -> Field<f64> {
    let grid = Grid::new(dims.to_vec(), dims.iter().map(|&n| 1.0 / n as f64).collect()).unwrap();
    Field::new(grid, v).unwrap()
}

proptest! {
    #[test]
    fn divergence_is_negative_adjoint_of_gradient((dims, u, w) in grid_and_values()) {
        let u = field(&dims, u);
        let comps = (0..dims.len()).map(|k| w.iter().map(|x| x * (k + 1) as f64).collect()).collect();
        let v = VectorField::new(u.grid().clone(), comps).unwrap();
        let lhs = gradient(&u).inner(&v).unwrap() + u.inner(&divergence(&v)).unwrap();
        prop_assert!(lhs.abs() <= 1e-12 * (1.0 + u.norm_l2() * v.norm_l2()));
    }

    #[test]
    fn blur_adjoint_matches_apply((dims, u, w) in grid_and_values()) {
        let u = field(&dims, u);
        let w = Measurement::new(w).unwrap();
        let op = ForwardOperator::blur(u.grid(), vec![0.2, 0.5, 0.3]).unwrap();
        let a = op.range_inner(&op.apply(&u).unwrap(), &w).unwrap();
        let b = u.inner(&op.adjoint(&w).unwrap()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + u.norm_l2() * op.range_norm(&w).unwrap()));
    }

    #[test]
    fn tv_bregman_distance_is_nonnegative((dims, u, v) in grid_and_values(), log_beta in -6.0..-0.01f64) {
        let p = SmoothedTvPenalty::new(10f64.powf(log_beta)).unwrap();
        let (u, v) = (field(&dims, u), field(&dims, v));
        let d = bregman(&p, &u, &v).unwrap();
        prop_assert!(d >= -1e-10 * (1.0 + p.value(&u).abs() + p.value(&v).abs()));
    }

    #[test]
    fn tv_line_restriction_matches_value_difference((dims, u, v) in grid_and_values(), t in -2.0..2.0f64) {
        let p = SmoothedTvPenalty::new(1e-3).unwrap();
        let (u, dir) = (field(&dims, u), field(&dims, v));
        let change = p.line_restriction(&u, &dir).unwrap();
        let direct = p.value(&u.add_scaled(t, &dir).unwrap()) - p.value(&u);
        prop_assert!((change(t) - direct).abs() <= 1e-10 * (1.0 + p.value(&u).abs()));
    }
}
