use proptest::prelude::*;

use infeas_core::linalg::{project_psd, sym_eig, ConeSign, DenseVector, SymMatrix, DEFAULT_EIG_TOL};
use infeas_core::operators::{
    make_worst_case, random_affine_with_solution, random_orthonormal, rotate_operator, FixedPointMap,
};
use infeas_core::pep::{build_pep, export_sdpa, gram_from_trajectory, read_sdpa};
use infeas_core::pgextra::{
    make_infeasible_chain, metropolis_weights, pg_extra_operator, ring_with_chords, AgentData, ObjectiveKind,
    SdpInstance,
};
use infeas_core::rng::SplitMix64;
use infeas_core::schedules::{
    halpern_theta, km_factor, mann_alpha, run, LambdaRule, MannRule, Schedule,
};

fn sym_from(order: usize, seed: u64) -> SymMatrix {
    let mut rng = SplitMix64::new(seed);
    let raw = rng.normal_vec(order * order);
    SymMatrix::from_fn(order, |i, j| 0.5 * (raw[i * order + j] + raw[j * order + i]))
}

fn max_abs_diff(a: &SymMatrix, b: &SymMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn affine_case(seed: u64) -> (infeas_core::operators::OperatorSpec, DenseVector) {
    let mut rng = SplitMix64::new(seed);
    let dim = 2 + rng.below(6);
    let fixed = rng.below(dim);
    let op = random_affine_with_solution(dim, fixed, &mut rng);
    let x0 = DenseVector::new(rng.normal_vec(dim)).unwrap();
    (op, x0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigen_reconstruction(order in 1usize..9, seed in any::<u64>()) {
        let s = sym_from(order, seed);
        let eig = sym_eig(&s, DEFAULT_EIG_TOL).unwrap();
        let scale = 1.0 + s.frob_norm();
        prop_assert!(max_abs_diff(&eig.reconstruct(), &s) <= 1e-10 * scale);
        let v = eig.values.as_slice();
        prop_assert!(v.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(eig.vectors.orthonormality_defect() <= 1e-10);
    }

    #[test]
    fn psd_projection_is_idempotent_and_orthogonal(order in 1usize..8, seed in any::<u64>()) {
        let s = sym_from(order, seed);
        let p = project_psd(&s, ConeSign::Plus).unwrap();
        let scale = 1.0 + s.frob_norm();
        let again = project_psd(&p, ConeSign::Plus).unwrap();
        prop_assert!(max_abs_diff(&again, &p) <= 1e-10 * scale);
        let min = sym_eig(&p, DEFAULT_EIG_TOL).unwrap().values.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-10 * scale);
        // Moreau: s = P_+(s) + P_-(s) with the two parts orthogonal
        let n = project_psd(&s, ConeSign::Minus).unwrap();
        let mut sum = p.clone();
        sum.add_scaled(1.0, &n);
        prop_assert!(max_abs_diff(&sum, &s) <= 1e-10 * scale);
        prop_assert!(p.frob_dot(&n).abs() <= 1e-10 * scale * scale);
    }

    #[test]
    fn km_residual_norm_is_nonincreasing(seed in any::<u64>(), lambda in 0.05f64..0.95) {
        let (op, x0) = affine_case(seed);
        let t = run(&op, Schedule::km_constant(lambda), x0, 150).unwrap();
        let norms: Vec<f64> = t.records.iter().map(|r| r.residual.norm()).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-14);
        }
    }

    #[test]
    fn halpern_iterates_stay_bounded(seed in any::<u64>()) {
        let (op, x0) = affine_case(seed);
        let xs = op.x_star().unwrap().clone();
        let v = op.idv().unwrap().clone();
        let r0 = x0.dist_sq(&xs).sqrt();
        let t = run(&op, Schedule::Ohm, x0, 300).unwrap();
        // the drift along −v grows at most like k/2 ‖v‖
        for r in &t.records {
            let drift = r.k as f64 / 2.0 * v.norm();
            prop_assert!(r.x.dist_sq(&xs).sqrt() <= 2.0 * r0 + drift + 1e-9);
        }
    }

    #[test]
    fn normalization_factor_closed_forms(k in 1usize..400, lambda in 0.0f64..0.99) {
        let kf = k as f64;
        let km = km_factor(&Schedule::km_constant(lambda), k).unwrap();
        prop_assert!((km - (1.0 - lambda) * kf).abs() <= 1e-12 * kf);
        let theta = halpern_theta(&Schedule::Ohm, k).unwrap();
        prop_assert!((theta - kf / 2.0).abs() <= 1e-12 * kf);
        let alpha = mann_alpha(&Schedule::Mann(Schedule::Ohm.to_mann()), k).unwrap();
        prop_assert!((alpha - kf / 2.0).abs() <= 1e-10 * kf);
        let theta_const = halpern_theta(&Schedule::halpern_constant(lambda), k).unwrap();
        let geometric = (1.0 - lambda) * (1.0 - (1.0 - lambda).powi(k as i32)) / lambda.max(f64::MIN_POSITIVE);
        let want = if lambda == 0.0 { kf } else { geometric };
        prop_assert!((theta_const - want).abs() <= 1e-9 * want.max(1.0));
    }

    #[test]
    fn mann_rows_of_standard_schedules_are_in_the_simplex(k in 1usize..200, lambda in 0.0f64..1.0) {
        let schedules = [
            Schedule::Picard,
            Schedule::Ohm,
            Schedule::Km(LambdaRule::Constant(lambda)),
            Schedule::halpern_constant(lambda),
        ];
        for s in &schedules {
            let row = s.to_mann().row(k);
            prop_assert_eq!(row.len(), k + 1);
            prop_assert!(row.iter().all(|&w| w >= -1e-15));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn mann_form_reproduces_direct_iterates(seed in any::<u64>(), lambda in 0.05f64..0.95) {
        let (op, x0) = affine_case(seed);
        for s in [Schedule::km_constant(lambda), Schedule::Ohm, Schedule::halpern_constant(lambda)] {
            let direct = run(&op, s.clone(), x0.clone(), 40).unwrap();
            let mann = run(&op, Schedule::Mann(s.to_mann()), x0.clone(), 40).unwrap();
            for (a, b) in direct.records.iter().zip(&mann.records) {
                prop_assert!(a.x.dist_sq(&b.x).sqrt() <= 1e-10 * (1.0 + a.x.norm()));
            }
        }
    }

    #[test]
    fn worst_case_picard_coordinates(k in 1usize..40, v_norm in 0.1f64..3.0) {
        let op = make_worst_case(k, v_norm, (k as f64).sqrt() * v_norm).unwrap();
        let t = run(&op, Schedule::Picard, DenseVector::zeros(k + 1), k).unwrap();
        let r0 = t.x0.dist_sq(op.x_star().unwrap());
        let got = t.record(k).norm_iter_dist_v_sq.unwrap();
        let want = 4.0 / (k * k) as f64 * r0;
        prop_assert!((got - want).abs() <= 1e-8 * want);
        // Picard from zero fills one new leading coordinate per step
        for r in t.records.iter().take(k) {
            let support = r.x.as_slice()[..k].iter().rposition(|x| x.abs() > 1e-12).map_or(0, |i| i + 1);
            prop_assert!(support <= r.k);
        }
    }

    #[test]
    fn rotation_carries_ground_truth(seed in any::<u64>(), extra in 0usize..4) {
        let (op, _) = affine_case(seed);
        let n = op.dimension;
        let d = n + extra;
        let mut rng = SplitMix64::new(seed ^ 0x5eed);
        let u = random_orthonormal(d, n, &mut rng);
        let x0 = DenseVector::new(rng.normal_vec(d)).unwrap();
        let rotated = rotate_operator(op, u, x0).unwrap();
        let xs = rotated.x_star().unwrap().clone();
        let v = rotated.idv().unwrap().clone();
        let r = rotated.residual(&xs).unwrap();
        prop_assert!(r.dist_sq(&v).sqrt() <= 1e-10 * (1.0 + v.norm()));
    }

    #[test]
    fn gram_matrix_satisfies_every_pep_row(seed in any::<u64>(), k in 1usize..10) {
        let (op, x0) = affine_case(seed);
        let t = run(&op, Schedule::Ohm, x0, k).unwrap();
        let r0 = t.x0.dist_sq(op.x_star().unwrap());
        prop_assume!(r0 > 1e-6);
        let z = gram_from_trajectory(&t, k).unwrap().scaled(1.0 / r0);
        let p = build_pep(k).unwrap();
        prop_assert!(p.max_violation(&z) <= 1e-8);
        let want = t.record(k).fpr_dist_v_sq.unwrap() / r0;
        prop_assert!((p.objective.frob_dot(&z) - want).abs() <= 1e-10 * want.max(1.0));
    }

    #[test]
    fn sdpa_round_trip(k in 1usize..12) {
        let p = build_pep(k).unwrap();
        let mut buf = Vec::new();
        export_sdpa(&p, &mut buf).unwrap();
        let back = read_sdpa(std::io::Cursor::new(&buf)).unwrap();
        prop_assert_eq!(&back, &p);
        let mut again = Vec::new();
        export_sdpa(&back, &mut again).unwrap();
        prop_assert_eq!(buf, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn pg_extra_w_invariant(seed in any::<u64>(), steps in 1usize..60) {
        let inst = make_infeasible_chain(5, 4, 5, 0.5, seed, ObjectiveKind::Random).unwrap();
        let mix = metropolis_weights(5, &ring_with_chords(5)).unwrap();
        let pg = pg_extra_operator(inst, mix, 0.01, 0.01).unwrap();
        let l = pg.layout;
        let mut rng = SplitMix64::new(seed);
        // any x, u with w = 0 is a valid start
        let mut s = pg.zero_state().into_vec();
        for e in s[..l.p * l.m].iter_mut() {
            *e = rng.normal();
        }
        let mut next = vec![0.0; s.len()];
        let mut x_sum = vec![0.0; l.p * l.m];
        for _ in 0..steps {
            for (acc, x) in x_sum.iter_mut().zip(l.x(&s)) {
                *acc += x;
            }
            pg.apply(&s, &mut next);
            std::mem::swap(&mut s, &mut next);
        }
        let w = l.w(&s);
        for i in 0..l.p {
            for j in 0..l.m {
                let mix: f64 = (0..l.p).map(|q| pg.mixing.w.get(i, q) * x_sum[q * l.m + j]).sum();
                let want = 0.5 * (x_sum[i * l.m + j] - mix);
                prop_assert!((w[i * l.m + j] - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn m_norm_dominates_scaled_euclidean(seed in any::<u64>()) {
        let inst = make_infeasible_chain(5, 4, 5, 0.5, seed, ObjectiveKind::Random).unwrap();
        let mix = metropolis_weights(5, &ring_with_chords(5)).unwrap();
        let pg = pg_extra_operator(inst, mix, 0.01, 0.01).unwrap();
        let lambda_min = pg.metric_min_eigenvalue();
        prop_assert!(lambda_min > 0.0);
        let mut rng = SplitMix64::new(seed);
        let a = pg.random_state(&mut rng, 1.0);
        let b = pg.random_state(&mut rng, 1.0);
        let m = pg.m_norm_sq(a.as_slice(), b.as_slice()).unwrap();
        // only the (x, u, y) coordinates carry the metric; w enters through y
        let coords_a = pg.metric_coordinates(a.as_slice()).unwrap();
        let coords_b = pg.metric_coordinates(b.as_slice()).unwrap();
        let e: f64 = coords_a.iter().zip(&coords_b).map(|(x, y)| (x - y) * (x - y)).sum();
        prop_assert!(m >= lambda_min * e * (1.0 - 1e-9) - 1e-12);
    }
}

#[test]
fn feasible_two_agent_instance_converges() {
    // agent 0: minimize x subject to -x <= -1; agent 1 carries nothing
    let agent0 = AgentData {
        a: vec![SymMatrix::diag(&[-1.0])],
        b: SymMatrix::diag(&[-1.0]),
        c: vec![1.0],
        blocks: 1,
    };
    let agent1 = AgentData { a: vec![SymMatrix::zeros(1)], b: SymMatrix::zeros(1), c: vec![0.0], blocks: 0 };
    let inst = SdpInstance { p: 2, m: 1, n: 1, agents: vec![agent0, agent1], trivial_agents: vec![1] };
    let mix = metropolis_weights(2, &[(0, 1)]).unwrap();
    let pg = pg_extra_operator(inst, mix, 0.5, 0.5).unwrap();
    let mut s = pg.zero_state().into_vec();
    let mut next = vec![0.0; s.len()];
    let mut last_residual = f64::INFINITY;
    for _ in 0..2000 {
        pg.apply(&s, &mut next);
        last_residual = pg.m_norm_sq(&s, &next).unwrap();
        std::mem::swap(&mut s, &mut next);
    }
    assert!(last_residual < 1e-12, "residual {last_residual:e}");
    let x = pg.layout.x(&s);
    for xi in x {
        assert!((xi - 1.0).abs() < 1e-9, "agent estimate {xi}");
    }
}

#[test]
fn custom_mann_rule_matches_picard() {
    let rule = MannRule::new("last", |k| {
        let mut r = vec![0.0; k + 1];
        r[k] = 1.0;
        r
    });
    for k in 1..50 {
        let a = mann_alpha(&Schedule::Mann(rule.clone()), k).unwrap();
        assert!((a - k as f64).abs() < 1e-12);
    }
}
