use disentangler::generate::{gen_planted, gen_random, random_orthogonal, PlantedSpec, Rng};
use disentangler::linalg::orthogonality_residual;
use disentangler::objective::{objective_f, spectrum, trunc_error_ck};
use disentangler::rank::{binary_search_rank, DEFAULT_MAX_PROBES};
use disentangler::solvers::{
    alternating, hybrid, rcg, rtrn, Method, SolveTrace, SolverOptions, Stage, Termination,
};
use disentangler::{Dims, Disentangler, Flattened, ObjectivePhi};

fn dims4() -> Dims {
    Dims::new(4, 4, 4, 4).unwrap()
}

fn random_flat(dims: Dims, seed: u64) -> Flattened {
    Flattened::from_tensor(&gen_random(dims, seed))
}

fn planted(seed: u64) -> (Flattened, Disentangler) {
    let (t, q) = gen_planted(&PlantedSpec {
        dims: dims4(),
        k: 6,
        seed,
    })
    .unwrap();
    (Flattened::from_tensor(&t), q)
}

fn opts(method: Method, max_iter: usize) -> SolverOptions {
    let mut o = SolverOptions::for_method(method);
    o.max_iter = max_iter;
    o
}

fn without_wall(trace: &SolveTrace) -> SolveTrace {
    let mut t = trace.clone();
    for r in &mut t.records {
        r.wall_ms = 0.0;
    }
    t
}

#[test]
fn rcg_objective_never_increases() {
    let x = random_flat(dims4(), 21);
    let res = rcg(&x, &Disentangler::identity(16), &ObjectivePhi::VonNeumann, &opts(Method::Rcg, 200)).unwrap();
    let obj = res.trace.objectives();
    assert!(obj.len() > 10);
    for w in obj.windows(2) {
        assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
    }
}

#[test]
fn rcg_stops_immediately_at_planted_minimizer() {
    let (x, q) = planted(3);
    let res = rcg(&x, &q, &ObjectivePhi::TruncationRank(6), &opts(Method::Rcg, 4000)).unwrap();
    assert!(res.trace.iterations() <= 2);
    assert_eq!(res.trace.termination, Termination::GradientTolerance);
    assert!(res.trace.records.last().unwrap().grad_norm.unwrap() <= 1e-8);
}

#[test]
fn rtrn_from_stationary_point_takes_no_steps() {
    let (x, q) = planted(4);
    let res = rtrn(&x, &q, &ObjectivePhi::TruncationRank(6), &opts(Method::Rtrn, 1000)).unwrap();
    assert_eq!(res.trace.records.len(), 1);
    assert_eq!(res.q_star.matrix(), q.matrix());
}

#[test]
fn rtrn_accepted_steps_decrease_and_rejected_steps_hold() {
    let x = random_flat(dims4(), 22);
    let res = rtrn(&x, &Disentangler::identity(16), &ObjectivePhi::TruncationRank(6), &opts(Method::Rtrn, 300)).unwrap();
    let recs = &res.trace.records;
    for w in recs.windows(2) {
        let dq = w[1].delta_q.unwrap();
        if dq == 0.0 {
            assert_eq!(w[1].objective, w[0].objective);
        } else {
            assert!(w[1].objective <= w[0].objective);
            assert!(w[1].ratio.unwrap() > 0.1);
        }
    }
}

#[test]
fn rtrn_regularized_still_recovers_planted() {
    let (x, _) = planted(0);
    let mut o = opts(Method::Rtrn, 1000);
    o.eta_reg = 1e-12;
    let res = rtrn(&x, &Disentangler::identity(16), &ObjectivePhi::TruncationRank(6), &o).unwrap();
    assert!(res.final_objective <= 1e-8, "{:e}", res.final_objective);
}

#[test]
fn alternating_planted_fixed_point() {
    let (x, q) = planted(5);
    let res = alternating(&x, &q, 6, &opts(Method::Alternating, 10)).unwrap();
    let first = &res.trace.records[1];
    assert!(first.delta_q.unwrap() <= 1e-12);
    assert!(first.objective <= 1e-20);
    assert_eq!(res.trace.termination, Termination::DeltaQ);
}

#[test]
fn alternating_rejects_bad_rank() {
    let x = random_flat(dims4(), 1);
    let q = Disentangler::identity(16);
    assert!(alternating(&x, &q, 0, &opts(Method::Alternating, 5)).is_err());
    assert!(alternating(&x, &q, 17, &opts(Method::Alternating, 5)).is_err());
}

#[test]
fn hybrid_with_empty_first_stage_equals_plain_rcg() {
    let x = random_flat(dims4(), 23);
    let q0 = Disentangler::identity(16);
    let phi = ObjectivePhi::TruncationRank(6);
    let o = opts(Method::Rcg, 150);
    let plain = rcg(&x, &q0, &phi, &o).unwrap();
    let chained = hybrid(
        &x,
        &q0,
        &phi,
        &[Stage::new(Method::Alternating, 0), Stage::new(Method::Rcg, 150)],
        &o,
    )
    .unwrap();
    assert_eq!(without_wall(&plain.trace), without_wall(&chained.trace));
    assert_eq!(plain.q_star, chained.q_star);
}

#[test]
fn hybrid_stages_join_cleanly() {
    let x = random_flat(dims4(), 24);
    let phi = ObjectivePhi::TruncationRank(6);
    let mut o = SolverOptions::for_method(Method::Rcg);
    o.obj_change_tol = 1e-300;
    o.dq_tol = 1e-300;
    let res = hybrid(
        &x,
        &Disentangler::identity(16),
        &phi,
        &[
            Stage::new(Method::Alternating, 20),
            Stage::new(Method::Rcg, 30),
            Stage::new(Method::Rtrn, 10),
        ],
        &o,
    )
    .unwrap();
    let iters: Vec<usize> = res.trace.records.iter().map(|r| r.iter).collect();
    assert_eq!(iters, (0..=60).collect::<Vec<_>>());
    let starts: Vec<(Method, usize)> = res.trace.stages.iter().map(|s| (s.method, s.first_iter)).collect();
    assert_eq!(
        starts,
        vec![(Method::Alternating, 0), (Method::Rcg, 21), (Method::Rtrn, 51)]
    );
    assert!(orthogonality_residual(res.q_star.matrix()) <= 1e-12);
    // The gradient stages start where alternating stopped and do not go up.
    let obj = res.trace.objectives();
    assert!(obj[21..].windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn hybrid_alternating_needs_rank() {
    let x = random_flat(dims4(), 1);
    let err = hybrid(
        &x,
        &Disentangler::identity(16),
        &ObjectivePhi::VonNeumann,
        &[Stage::new(Method::Alternating, 3)],
        &opts(Method::Rcg, 3),
    );
    assert!(err.is_err());
    assert!(hybrid(&x, &Disentangler::identity(16), &ObjectivePhi::VonNeumann, &[], &opts(Method::Rcg, 3)).is_err());
}

#[test]
fn final_objective_matches_recomputation_and_norm_is_conserved() {
    let x = random_flat(Dims::new(3, 4, 3, 5).unwrap(), 25);
    let xn = x.normalized();
    let q0 = Disentangler::identity(12);
    for (method, phi) in [
        (Method::Rcg, ObjectivePhi::Renyi(0.5)),
        (Method::Rtrn, ObjectivePhi::VonNeumann),
        (Method::Alternating, ObjectivePhi::TruncationRank(5)),
    ] {
        let o = opts(method, 60);
        let res = match method {
            Method::Rcg => rcg(&x, &q0, &phi, &o),
            Method::Rtrn => rtrn(&x, &q0, &phi, &o),
            Method::Alternating => alternating(&x, &q0, 5, &o),
        }
        .unwrap();
        let again = objective_f(res.q_star.matrix(), &xn, &phi).unwrap();
        assert!((again - res.final_objective).abs() <= 1e-12, "{method}");
        let total = spectrum(res.q_star.matrix(), &xn).unwrap().sum_of_squares();
        assert!((total - 1.0).abs() <= 1e-10);
        assert!(orthogonality_residual(res.q_star.matrix()) <= 1e-10);
        assert!(res.trace.records.iter().all(|r| r.objective.is_finite()));
    }
}

#[test]
fn result_is_scale_independent() {
    let t = gen_random(dims4(), 26);
    let scaled: Vec<f64> = t.data().iter().map(|v| v * 8.0).collect();
    let x = Flattened::from_tensor(&t);
    let xs = Flattened::from_tensor(&disentangler::Tensor4::new(t.dims(), scaled).unwrap());
    let phi = ObjectivePhi::TruncationRank(6);
    let o = opts(Method::Rcg, 50);
    let a = rcg(&x, &Disentangler::identity(16), &phi, &o).unwrap();
    let b = rcg(&xs, &Disentangler::identity(16), &phi, &o).unwrap();
    assert_eq!(a.q_star, b.q_star);
    assert_eq!(a.trace.objectives(), b.trace.objectives());
}

#[test]
fn repeated_runs_are_identical() {
    let x = random_flat(dims4(), 27);
    let mut rng = Rng::new(3);
    let q0 = Disentangler::new(random_orthogonal(16, &mut rng)).unwrap();
    let phi = ObjectivePhi::VonNeumann;
    let a = rtrn(&x, &q0, &phi, &opts(Method::Rtrn, 20)).unwrap();
    let b = rtrn(&x, &q0, &phi, &opts(Method::Rtrn, 20)).unwrap();
    assert_eq!(without_wall(&a.trace), without_wall(&b.trace));
}

#[test]
fn renyi_descent_lowers_nuclear_norm() {
    let x = random_flat(Dims::new(3, 3, 3, 3).unwrap(), 28);
    let xn = x.normalized();
    let q0 = Disentangler::identity(9);
    let res = rcg(&x, &q0, &ObjectivePhi::Renyi(0.5), &opts(Method::Rcg, 100)).unwrap();
    let before: f64 = spectrum(q0.matrix(), &xn).unwrap().values.iter().sum();
    let after: f64 = spectrum(res.q_star.matrix(), &xn).unwrap().values.iter().sum();
    assert!(after < before);
}

#[test]
fn rank_search_finds_planted_rank() {
    let (x, _) = planted(1);
    let out = binary_search_rank(
        &x,
        &Disentangler::identity(16),
        1e-8,
        Method::Rcg,
        &SolverOptions::for_method(Method::Rcg),
        DEFAULT_MAX_PROBES,
    )
    .unwrap();
    assert_eq!(out.k_opt, 6);
    assert!(trunc_error_ck(out.q.matrix(), &x.normalized(), 6).unwrap() <= 1e-8);
    let opts_hist: Vec<usize> = out.state.history.iter().map(|h| h.k_opt_after).collect();
    assert!(opts_hist.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn rank_search_with_loose_tolerance_gives_zero() {
    let x = random_flat(Dims::new(2, 2, 3, 3).unwrap(), 2);
    let out = binary_search_rank(
        &x,
        &Disentangler::identity(4),
        2.0,
        Method::Alternating,
        &SolverOptions::for_method(Method::Alternating),
        DEFAULT_MAX_PROBES,
    )
    .unwrap();
    assert_eq!(out.k_opt, 0);
    assert!(out.state.history.is_empty() || out.state.history.iter().all(|h| h.success));
}
