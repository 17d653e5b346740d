use disentangler::generate::{random_orthogonal, Rng};
use disentangler::geometry::{proj_tangent, transport};
use disentangler::linalg::{expm_skew, orthogonality_residual, qr_retraction, skew_matrix, vector_from_skew, SkewParam};
use disentangler::objective::spectrum;
use disentangler::rank::{binary_search_from, dof_rank_estimate};
use disentangler::tensor::{apply_a, apply_a_inv, flatten_m, unflatten_m_inv};
use disentangler::{Dims, Disentangler, Flattened, Matrix, Tensor4};
use proptest::prelude::*;

fn dims_strategy(max: usize) -> impl Strategy<Value = Dims> {
    (1..=max, 1..=max, 1..=max, 1..=max).prop_map(|(l, r, b, c)| Dims::new(l, r, b, c).unwrap())
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    Rng::new(seed).gaussian_matrix(rows, cols)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a_round_trip_is_exact(d in dims_strategy(4), seed in any::<u64>()) {
        let (n, bc) = d.flat_shape();
        let x = gaussian(n, bc, seed);
        let y = apply_a(&x, d).unwrap();
        prop_assert_eq!(y.shape(), d.unfolded_shape());
        prop_assert_eq!(apply_a_inv(&y, d).unwrap(), x);
    }

    #[test]
    fn m_round_trip_is_exact(d in dims_strategy(4), seed in any::<u64>()) {
        let data: Vec<f64> = gaussian(1, d.len(), seed).iter().copied().collect();
        let t = Tensor4::new(d, data).unwrap();
        prop_assert_eq!(unflatten_m_inv(&flatten_m(&t), d).unwrap(), t);
    }

    #[test]
    fn singular_values_conserve_norm(d in dims_strategy(4), seed in any::<u64>()) {
        let (n, bc) = d.flat_shape();
        let x = Flattened::from_matrix(gaussian(n, bc, seed), d).unwrap();
        let q = random_orthogonal(n, &mut Rng::new(seed ^ 1));
        let total = spectrum(&q, &x).unwrap().sum_of_squares();
        let norm2 = x.norm().powi(2);
        prop_assert!((total - norm2).abs() <= 1e-12 * norm2);
    }

    #[test]
    fn projection_is_idempotent_and_tangent(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let q = random_orthogonal(n, &mut rng);
        let z = rng.gaussian_matrix(n, n);
        let p = proj_tangent(&q, &z);
        prop_assert!(p.skewness_residual(&q) <= 1e-12 * (1.0 + z.norm()));
        let pp = proj_tangent(&q, p.matrix());
        prop_assert!((pp.matrix() - p.matrix()).norm() <= 1e-13 * (1.0 + z.norm()));
        // Orthogonal projection: never lengthens.
        prop_assert!(p.norm() <= z.norm() * (1.0 + 1e-14));
        let to = random_orthogonal(n, &mut rng);
        prop_assert!(transport(&q, &to, &p).is_tangent_at(&to));
    }

    #[test]
    fn skew_parameters_round_trip(n in 1usize..8, seed in any::<u64>()) {
        let len = n * (n - 1) / 2;
        let s: Vec<f64> = gaussian(1, len.max(1), seed).iter().take(len).copied().collect();
        let p = SkewParam::new(n, s).unwrap();
        let b = skew_matrix(&p);
        prop_assert_eq!(&b, &(-b.transpose()));
        prop_assert_eq!(vector_from_skew(&b).unwrap(), p.clone());
        prop_assert!(orthogonality_residual(&expm_skew(&p)) <= 1e-12 * (1.0 + b.norm()));
    }

    #[test]
    fn qr_retraction_stays_on_group(n in 1usize..8, scale in 0.0f64..3.0, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let q = random_orthogonal(n, &mut rng);
        let e = proj_tangent(&q, &(rng.gaussian_matrix(n, n) * scale));
        let r = qr_retraction(&q, e.matrix()).unwrap();
        prop_assert!(orthogonality_residual(&r) <= 1e-12);
    }

    #[test]
    fn dof_estimate_is_minimal_and_bounded(d in dims_strategy(6)) {
        prop_assume!(d.l * d.r <= d.b * d.c);
        let est = dof_rank_estimate(d).unwrap();
        prop_assert!(est.k <= d.m());
        let count = |k: usize| {
            let (lc, rb, n) = ((d.l * d.c) as i64, (d.r * d.b) as i64, (d.l * d.r) as i64);
            let k = k as i64;
            k * (lc + rb) - k * k + n * (n - 1) / 2 - (d.l * (d.l - 1) / 2) as i64
                - (d.r * (d.r - 1) / 2) as i64
        };
        let target = (d.l * d.r * d.b * d.c) as i64;
        if !est.saturated {
            prop_assert!(count(est.k) >= target);
        }
        if est.k > 0 {
            prop_assert!(count(est.k - 1) < target);
        }
    }

    #[test]
    fn bisection_invariants(k_r in 0usize..300, threshold in 0usize..300) {
        let mut probe = |k: usize, q: &Disentangler| {
            Ok((if k >= threshold { 0.0 } else { 1.0 }, q.clone()))
        };
        let out = binary_search_from(k_r, Disentangler::identity(1), 0.5, 64, &mut probe).unwrap();
        let h = &out.state.history;
        prop_assert_eq!(out.k_opt, threshold.min(k_r));
        let bound = (usize::BITS - k_r.leading_zeros()) as usize + 1;
        prop_assert!(h.len() <= bound);
        for rec in h {
            prop_assert!(rec.k_l <= rec.k && rec.k <= rec.k_r);
            prop_assert!(rec.k_opt_after <= rec.k_opt);
            let before = rec.k_r + 1 - rec.k_l;
            let after = (rec.k_r_after + 1).saturating_sub(rec.k_l_after);
            prop_assert!(after < before || (rec.k == 0 && rec.success));
        }
    }
}
