use ddsc_core::analysis::{build_timers, check_adt_aat, compute_lambda_u, compute_mu, phase_timeline};
use ddsc_core::controller::Phase;
use ddsc_core::data_model::{build_consistent_set, sphere_approx, NoiseModel};
use ddsc_core::io::{read_matrix, write_matrix};
use ddsc_core::sim::scenario::{run_scenario, ModeSpec, PlantSpec, ScenarioConfig, ScheduleSpec, Seeds, StepRecord};
use ddsc_core::sim::{generate_init_data, sample_noise, Mode};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn matrix(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-2.0..2.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (matrix(n, n), 0.05..1.0f64).prop_map(move |(g, eps)| &g * g.transpose() + DMatrix::identity(n, n) * eps)
}

fn record(t: usize, phase: Phase, start: bool, last: bool) -> StepRecord {
    StepRecord {
        t,
        phase,
        sigma: 1,
        sigma_d: None,
        x_norm: 1.0,
        v: None,
        eliminated_modes: Vec::new(),
        x: vec![1.0],
        u: (!last).then(|| vec![0.0]),
        w: (!last).then(|| vec![0.0]),
        notes: if start { vec!["detection_start".into()] } else { Vec::new() },
    }
}

fn scalar_config(seed: u64, horizon: usize, known: bool, q: f64, split: usize) -> ScenarioConfig {
    ScenarioConfig {
        plant: PlantSpec::Custom {
            modes: vec![
                ModeSpec { a: vec![vec![1.5]], b: vec![vec![1.0]] },
                ModeSpec { a: vec![vec![-1.2]], b: vec![vec![0.5]] },
            ],
        },
        lambda: 0.8,
        c: 0.1,
        q,
        horizon,
        x0: vec![1.0],
        known_switches: known,
        init_length: 3,
        excitation: 1.0,
        schedule: ScheduleSpec::Explicit { segments: vec![(0, 1), (split.min(horizon), 2)] },
        seeds: Seeds { init: seed, noise: seed + 1, controller: seed + 2, schedule: seed + 3 },
        max_seed_attempts: 50,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn growth_bound_covers_admissible_inputs(a in matrix(2, 2), b in matrix(2, 1), p in spd(2), c in 0.1..2.0f64, seed in any::<u64>()) {
        let g = compute_lambda_u(&[(a.clone(), b.clone())], std::slice::from_ref(&p), c).unwrap();
        prop_assert!(g.lambda_u >= 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let x = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dir: f64 = rng.sample(StandardNormal);
            let u = DVector::from_element(1, dir.signum() * c * x.norm() * rng.random::<f64>());
            let y = &a * &x + &b * &u;
            let lhs = (y.transpose() * &p * &y)[(0, 0)];
            let rhs = g.lambda_u * (x.transpose() * &p * &x)[(0, 0)];
            prop_assert!((rhs - lhs) / rhs.max(1.0) >= -1e-8, "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn mu_is_at_least_one_and_scale_free(ps in proptest::collection::vec(spd(3), 1..4), s in 0.01..100.0f64) {
        let mu = compute_mu(&ps);
        prop_assert!(mu >= 1.0);
        let scaled: Vec<_> = ps.iter().map(|p| p * s).collect();
        prop_assert!((compute_mu(&scaled) - mu).abs() <= 1e-6 * mu);
        let mut rev = ps.clone();
        rev.reverse();
        prop_assert!((compute_mu(&rev) - mu).abs() <= 1e-9 * mu);
    }

    #[test]
    fn single_lyapunov_matrix_has_unit_mu(p in spd(3)) {
        prop_assert!((compute_mu(&[p.clone(), p]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn timers_stay_in_range(flags in proptest::collection::vec((any::<bool>(), 0u8..10), 1..120)) {
        let l = flags.len();
        let mut records: Vec<StepRecord> = flags
            .iter()
            .enumerate()
            .map(|(t, &(det, s))| record(t, if det { Phase::ModeDetection } else { Phase::Stabilization }, s == 0, false))
            .collect();
        records.push(record(l, Phase::Stabilization, false, true));
        let timeline = phase_timeline(&records).unwrap();
        let reg = check_adt_aat(&timeline);
        prop_assert!(reg.n0 >= 1.0 && reg.t0 >= 0.0);
        let timers = build_timers(&timeline, &reg).unwrap();
        prop_assert_eq!(timers.tau_d.len(), l + 1);
        prop_assert!(timers.rule_violations(&timeline, &reg).is_empty());
    }

    #[test]
    fn noise_stays_in_ball(q in 0.0..5.0f64, n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            prop_assert!(sample_noise(&mut rng, q, n).norm() <= q * (1.0 + 1e-12));
        }
    }

    #[test]
    fn matrices_survive_csv(m in (1usize..5, 1usize..5).prop_flat_map(|(r, c)| proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), r * c).prop_map(move |v| DMatrix::from_vec(r, c, v)))) {
        let path = std::env::temp_dir().join(format!("ddsc-prop-{}-{:x}.csv", std::process::id(), m.iter().fold(0u64, |h, v| h.rotate_left(7) ^ v.to_bits())));
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        std::fs::remove_file(&path).ok();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn consistent_set_members_lie_in_sphere(a in matrix(2, 2), b in matrix(2, 1), q in 0.01..0.2f64, seed in any::<u64>()) {
        let mode = Mode::new(a, b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = generate_init_data(&mut rng, &mode, 6, 1.0, q).unwrap();
        let noise = NoiseModel::energy_bound(q, 2, 6).unwrap();
        let set = build_consistent_set(&data, &noise).unwrap();
        let ball = sphere_approx(&data, q).unwrap();
        let rep = set.rejection_sample(&mut rng, 100, 5000, ddsc_core::data_model::MEMBERSHIP_TOL);
        for theta in &rep.members {
            prop_assert!(ball.contains(theta, 1e-9));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scenarios_are_deterministic_and_replayable(seed in 0u64..1000, horizon in 1usize..40, known in any::<bool>(), noisy in any::<bool>(), split in 1usize..40) {
        let q = if noisy { 0.01 } else { 0.0 };
        let cfg = scalar_config(seed, horizon, known, q, split);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        prop_assert_eq!(&a.records, &b.records);
        prop_assert_eq!(a.records.len(), horizon + 1);
        for w in a.records.windows(2) {
            let x = DVector::from_column_slice(&w[0].x);
            let u = DVector::from_column_slice(w[0].u.as_ref().unwrap());
            let e = DVector::from_column_slice(w[0].w.as_ref().unwrap());
            let next = a.plant.step(w[0].t, &x, &u, &e);
            prop_assert_eq!(next.as_slice(), w[1].x.as_slice());
            prop_assert!(e.norm() <= q * (1.0 + 1e-12));
            if w[0].phase == Phase::ModeDetection {
                prop_assert!(u.norm() <= cfg.c * x.norm() * (1.0 + 1e-9));
            }
        }
    }
}
