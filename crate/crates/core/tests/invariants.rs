use proptest::prelude::*;
use spn_core::covariates::{compute_basis, synthetic_covariates, BasisDaily, SyntheticClimate};
use spn_core::dataset::{split_dataset, Split};
use spn_core::model::{build_two_patch_net, make_rate_schedule, sample_coefficients, ModelConfig};
use spn_core::nn::{Mode, ResNet, ResNetConfig};
use spn_core::petri::{simulate_horizon, PetriNet};
use spn_core::seed;
use spn_core::uq::compute_metrics;

fn basis(horizon: usize) -> Vec<BasisDaily> {
    synthetic_covariates(42, horizon, 2, &SyntheticClimate::default())
        .iter()
        .map(|s| compute_basis(s, &Default::default()))
        .collect()
}

fn setup(horizon: usize, theta_seed: u64) -> (PetriNet, Vec<spn_core::petri::DayRates>) {
    let cfg = ModelConfig::default();
    let net = build_two_patch_net(&cfg.fixed, cfg.incidence).unwrap();
    let theta = sample_coefficients(&cfg.bounds, &mut seed::rng(theta_seed));
    let schedule = make_rate_schedule(&theta, &basis(horizon), &cfg, horizon).unwrap();
    (net, schedule)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Replaying the event log from the arcs alone reproduces every row, and
    /// each event was enabled when it fired.
    #[test]
    fn firing_equation_and_non_negativity(theta_seed in any::<u64>(), run_seed in any::<u64>()) {
        let (net, schedule) = setup(12, theta_seed);
        let tr = simulate_horizon(&net, &schedule, &mut seed::rng(run_seed), true).unwrap();
        let index = |p: &str| net.place(p).unwrap();
        let mut m: Vec<i64> = net.initial().counts().iter().map(|&c| c as i64).collect();
        let events = tr.events.as_ref().unwrap();
        let mut e = 0;
        for day in 0..12 {
            while e < events.len() && events[e].time < (day + 1) as f64 {
                let t = &net.transitions()[events[e].transition];
                for (p, n) in &t.inputs {
                    prop_assert!(m[index(p)] >= i64::from(*n), "{} fired while disabled", t.id);
                }
                for (p, n) in &t.inputs {
                    m[index(p)] -= i64::from(*n);
                }
                for (p, n) in &t.outputs {
                    m[index(p)] += i64::from(*n);
                }
                prop_assert!(m.iter().all(|&v| v >= 0));
                e += 1;
            }
            let row: Vec<i64> = tr.row(day).iter().map(|&c| c as i64).collect();
            prop_assert_eq!(&row, &m, "day {}", day);
        }
        prop_assert_eq!(e, events.len());
    }

    #[test]
    fn species_totals_conserved(theta_seed in any::<u64>(), run_seed in any::<u64>()) {
        let (net, schedule) = setup(30, theta_seed);
        let tr = simulate_horizon(&net, &schedule, &mut seed::rng(run_seed), false).unwrap();
        let human: Vec<bool> = net.places().iter().map(|p| p.contains("_H_")).collect();
        let total = |row: &[u64], h: bool| -> u64 {
            row.iter().zip(&human).filter(|(_, &x)| x == h).map(|(v, _)| v).sum()
        };
        let init = net.initial().counts();
        for row in tr.rows() {
            prop_assert_eq!(total(row, true), total(init, true));
            prop_assert_eq!(total(row, false), total(init, false));
        }
    }

    #[test]
    fn simulation_is_seed_deterministic(theta_seed in any::<u64>(), run_seed in any::<u64>()) {
        let (net, schedule) = setup(8, theta_seed);
        let a = simulate_horizon(&net, &schedule, &mut seed::rng(run_seed), true).unwrap();
        let b = simulate_horizon(&net, &schedule, &mut seed::rng(run_seed), true).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn split_partitions_samples(n in 0usize..400, seed_value in any::<u64>()) {
        let s = split_dataset(n, [0.8, 0.1, 0.1], seed_value).unwrap();
        prop_assert_eq!(s.len(), n);
        let count = |k: Split| s.iter().filter(|&&x| x == k).count();
        prop_assert_eq!(count(Split::Val), n / 10);
        prop_assert_eq!(count(Split::Test), n / 10);
        prop_assert_eq!(count(Split::Train), n - 2 * (n / 10));
    }

    /// Residual blocks keep the shape and the sigmoid head keeps outputs in (0, 1),
    /// however large the input.
    #[test]
    fn network_output_in_unit_interval(
        seed_value in any::<u64>(),
        scale in prop_oneof![Just(1.0f32), Just(1e3f32)],
        batch in 1usize..4,
    ) {
        let cfg = ResNetConfig { filters: 6, kernel: 3, blocks: 2, horizon: 9, ..Default::default() };
        let mut rng = seed::rng(seed_value);
        let net = ResNet::<f32>::init(cfg, &mut rng).unwrap();
        let x: Vec<f32> = (0..batch * 9 * 14).map(|i| scale * ((i * 7919 % 97) as f32 / 97.0 - 0.5)).collect();
        for mode in [Mode::Eval, Mode::McDropout] {
            let y = net.predict(&x, batch, mode, &mut rng).unwrap();
            prop_assert_eq!(y.len(), batch * 13);
            prop_assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
        }
    }

    /// Coverage depends only on the |error| ≤ std outcome, so permuting
    /// parameters permutes the per-parameter coverages.
    #[test]
    fn coverage_follows_parameter_order(seed_value in any::<u64>()) {
        use rand::Rng;
        let mut rng = seed::rng(seed_value);
        let d = 4;
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
        };
        let (means, stds, truths) = (draw(30), draw(30), draw(30));
        let names: Vec<String> = (0..d).map(|k| format!("p{k}")).collect();
        let perm = [2usize, 0, 3, 1];
        let shuffle = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            v.iter().map(|r| perm.iter().map(|&k| r[k]).collect()).collect()
        };
        let a = compute_metrics(&names, &means, &stds, &truths).unwrap();
        let b = compute_metrics(&names, &shuffle(&means), &shuffle(&stds), &shuffle(&truths)).unwrap();
        for (j, &k) in perm.iter().enumerate() {
            prop_assert_eq!(b.params[j].coverage_1sigma, a.params[k].coverage_1sigma);
            prop_assert_eq!(b.params[j].rmse, a.params[k].rmse);
        }
    }
}
