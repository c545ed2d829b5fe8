use etlp_core::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(lp: &StandardLp) -> DMatrix<f64> {
    let rows = lp.to_dense();
    DMatrix::from_fn(lp.m(), lp.n(), |l, i| rows[l][i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_oracle_certifies_and_repeats(seed in any::<u64>()) {
        let lp = random_desk_lp(seed);
        let a = oracle_solve_lp(&lp).unwrap();
        prop_assert!(kkt_check_lp(&lp, &a, ORACLE_TOL).unwrap());
        prop_assert_eq!(oracle_solve_lp(&lp).unwrap(), a);
    }

    #[test]
    fn qp_oracle_certifies(seed in any::<u64>(), k in 0u32..=10) {
        let lp = random_desk_lp(seed);
        let qp = RegularizedQp::new(lp, f64::from(1u32 << k)).unwrap();
        let sol = oracle_solve_qp(&qp).unwrap();
        prop_assert!(kkt_check_qp(&qp, &sol, ORACLE_TOL).unwrap());
    }

    #[test]
    fn relabeling_variables_relabels_the_solution(seed in any::<u64>()) {
        let lp = random_desk_lp(seed);
        let mut perm: Vec<usize> = (0..lp.n()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let permuted = lp.permute_columns(&perm).unwrap();

        let p = lp.objective(&oracle_solve_lp(&lp).unwrap().x_star);
        let q = permuted.objective(&oracle_solve_lp(&permuted).unwrap().x_star);
        prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));

        // The regularized minimizer is unique, so it must move with the labels.
        let x = oracle_solve_qp(&RegularizedQp::new(lp, 1.0).unwrap()).unwrap().x_star;
        let y = oracle_solve_qp(&RegularizedQp::new(permuted, 1.0).unwrap()).unwrap().x_star;
        for (new, &old) in perm.iter().enumerate() {
            prop_assert!((y[new] - x[old]).abs() <= 1e-8);
        }
    }

    #[test]
    fn row_scaling_keeps_the_primal_solution(seed in any::<u64>()) {
        let lp = random_desk_lp(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let d: Vec<f64> = (0..lp.m()).map(|_| rng.random_range(0.5..8.0)).collect();
        let scaled = lp.with_scaled_rows(&d).unwrap();
        let x = oracle_solve_lp(&lp).unwrap().x_star;
        let y = oracle_solve_lp(&scaled).unwrap().x_star;
        prop_assert!(lp.objective(&y) - lp.objective(&x) <= 1e-8 * (1.0 + lp.objective(&x).abs()));
        prop_assert!(lp.residual(&y).iter().all(|r| r.abs() <= 1e-8));
    }

    #[test]
    fn selector_is_an_orthogonal_projection(mask in proptest::collection::vec(any::<bool>(), 1..12)) {
        let s = ActiveSet::from_mask(mask.clone());
        let rows = s.selector_matrix();
        let n = mask.len();
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        prop_assert_eq!(&m, &m.transpose());
        prop_assert_eq!(&(&m * &m), &m);
        let eig = m.symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        prop_assert_eq!(s.len(), mask.iter().filter(|&&b| b).count());
    }

    #[test]
    fn flow_difference_is_linear(seed in any::<u64>()) {
        let lp = random_desk_lp(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let pt = PrimalDualPoint::new(draw(lp.n()), draw(lp.m()));
        let delta = draw(lp.n());
        let moved = PrimalDualPoint::new(pt.x.iter().zip(&delta).map(|(a, b)| a + b).collect(), pt.z.clone());
        let f0 = flow_f(&lp, &pt).unwrap();
        let f1 = flow_f(&lp, &moved).unwrap();
        let ata = lp.at_mul(&lp.a_mul(&delta));
        for i in 0..lp.n() {
            prop_assert!((f1[i] - f0[i] + delta[i] + ata[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn saddle_inequalities(seed in any::<u64>()) {
        let lp = random_desk_lp(seed);
        let saddle = SaddleReference::from_oracle(&lp).unwrap();
        let bar = saddle.point();
        let k = LagrangianParams::default_k(&lp, [&bar]);
        let params = LagrangianParams::new(k, saddle.clone());
        let mid = lagrangian(&lp, &params, &bar).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x: Vec<f64> = saddle.x_bar.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
            let z: Vec<f64> = saddle.z_bar.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
            let low = lagrangian(&lp, &params, &PrimalDualPoint::new(saddle.x_bar.clone(), z)).unwrap();
            let high = lagrangian(&lp, &params, &PrimalDualPoint::new(x, saddle.z_bar.clone())).unwrap();
            let tol = 1e-9 * (1.0 + mid.abs());
            prop_assert!(low <= mid + tol && mid <= high + tol);
        }
    }

    #[test]
    fn scaling_bounds_the_spectrum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=25);
        let m = rng.random_range(1..=n);
        let density = rng.random_range(0.05..0.7);
        let lp = random_feasible_lp(&mut rng, n, m, density);
        let scaled = max_consensus_scale(&lp, &build_graph(&lp)).unwrap().scaled;
        let a = dense(&scaled);
        let exact = (a.transpose() * &a).symmetric_eigen().eigenvalues.max();
        prop_assert!(exact <= 1.0 + 1e-9);
        prop_assert!((spectral_radius_ata(&scaled) - exact).abs() <= 1e-6 * (1.0 + exact));
    }
}

#[test]
fn assignment_vertices_are_not_optimal_off_the_solution() {
    let lp = generate_assignment(&AssignmentSpec::two_agent()).unwrap();
    let dual = oracle_solve_lp(&lp).unwrap().z_star;
    let off = KktPoint { x_star: vec![1.0, 0.0, 0.0, 1.0], z_star: dual };
    assert!(!kkt_check_lp(&lp, &off, ORACLE_TOL).unwrap());
}

#[test]
fn random_assignments_have_permutation_solutions() {
    for seed in 0..5 {
        let lp = generate_assignment(&AssignmentSpec::random(3, seed)).unwrap();
        let x = oracle_solve_lp(&lp).unwrap().x_star;
        assert!(x.iter().all(|&v| v.abs() < 1e-9 || (v - 1.0).abs() < 1e-9), "seed {seed}: {x:?}");
        for i in 0..3 {
            assert!((x[3 * i..3 * i + 3].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
