use conformance::decision::{conditional_errors, cost, CostSpec, DecisionRule};
use conformance::distributions::{ProcessPair, TransmittanceDistribution};
use conformance::monte_carlo::{sample_counts, sample_process};
use conformance::photon::{DetectionModel, ProbeModel};
use conformance::reweighting::{grid_taus, optimize_weights, resample, EmpiricalDataset};
use conformance::strategies::{classical_bound, classical_pc_error, quantum_pc_error, ClassicalMode, QuantumMode};
use proptest::prelude::*;

fn delta(t: f64) -> TransmittanceDistribution {
    TransmittanceDistribution::delta(t).unwrap()
}

fn smooth() -> impl Strategy<Value = TransmittanceDistribution> {
    (0.2f64..0.9, 0.005f64..0.05, any::<bool>()).prop_map(|(m, w, gauss)| {
        if gauss {
            TransmittanceDistribution::gaussian(m, w).unwrap()
        } else {
            TransmittanceDistribution::uniform(m, w).unwrap()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bound_is_a_probability_and_falls_with_photons(
        t0 in 0.1f64..0.95,
        g1 in smooth(),
        n in 1.0f64..500.0,
    ) {
        let pair = ProcessPair::new(delta(t0), g1);
        let lo = classical_bound(&pair, n).unwrap().value;
        let hi = classical_bound(&pair, 2.0 * n).unwrap().value;
        prop_assert!((0.0..=0.5).contains(&lo));
        prop_assert!(hi <= lo + 1e-9);
    }

    #[test]
    fn quantum_beats_classical_counting(
        t0 in 0.3f64..0.95,
        g1 in smooth(),
        n in 5.0f64..80.0,
    ) {
        let pair = ProcessPair::new(delta(t0), g1);
        let det = DetectionModel::ideal();
        let q = quantum_pc_error(&pair, &ProbeModel::tmsv(n).unwrap(), &det, QuantumMode::ExactLattice)
            .unwrap()
            .value;
        let c = classical_pc_error(&pair, n, &det, ClassicalMode::ExactLattice).unwrap().value;
        prop_assert!((0.0..=0.5).contains(&q));
        prop_assert!((0.0..=0.5 + 1e-12).contains(&c));
        prop_assert!(q <= c + 1e-9, "Q = {q}, Cpc = {c}");
    }

    #[test]
    fn error_report_consistent(
        t0 in 0.3f64..0.95,
        t1 in 0.3f64..0.95,
        n in 1.0f64..50.0,
        b in -1.0f64..1.0,
        s in 0.001f64..0.999,
    ) {
        let p = |t: f64| {
            conformance::photon::process_count_distribution(
                &ProbeModel::classical(n).unwrap(),
                &delta(t),
                &DetectionModel::ideal(),
                None,
            )
            .unwrap()
        };
        let r = conditional_errors(&p(t0), &p(t1), &DecisionRule::new(b).unwrap()).unwrap();
        // Lattice masses sum to one only up to rounding.
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r.p01) && (0.0..=1.0 + 1e-12).contains(&r.p10), "{r:?}");
        prop_assert!((r.p_err - 0.5 * (r.p01 + r.p10)).abs() < 1e-15);
        let c = cost(&r, &CostSpec::new(s).unwrap());
        prop_assert!(c >= r.p01.min(r.p10) - 1e-15 && c <= r.p01.max(r.p10) + 1e-15);
    }

    #[test]
    fn reweighting_respects_budget_and_caps(
        per_tau in 20usize..80,
        mean in 0.4f64..0.9,
        sigma in 0.05f64..0.2,
        frac in 0.1f64..0.9,
        seed in any::<u64>(),
    ) {
        let taus = grid_taus(0.3, 1.0, 20);
        let ds = EmpiricalDataset::simulate(&taus, per_tau, &ProbeModel::tmsv(3.0).unwrap(), &DetectionModel::ideal(), seed)
            .unwrap();
        let target = TransmittanceDistribution::gaussian(mean, sigma).unwrap();
        let size = ((ds.len() as f64) * frac) as usize;
        let r = optimize_weights(&ds, &target, size, 0.95, None).unwrap();
        prop_assert!(r.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        let kept: f64 = r.weights.iter().zip(&r.populations).map(|(w, &p)| w * p as f64).sum();
        prop_assert!((kept - size as f64).abs() < 1e-6 * size as f64);
        prop_assert!(r.final_size <= size && r.final_size + r.weights.len() >= size);
        prop_assert!(r.t_star >= r.t_baseline - 1e-12 && r.t_star <= 1.0);
        let out = resample(&ds, &r, seed).unwrap();
        prop_assert_eq!(out.len(), r.final_size);
        prop_assert_eq!(out, resample(&ds, &r, seed).unwrap());
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let probe = ProbeModel::tmsv(20.0).unwrap();
    let det = DetectionModel::new(0.9, 0.8, 0.5).unwrap();
    let g = TransmittanceDistribution::uniform(0.7, 0.1).unwrap();
    let a = sample_process(&probe, &det, &g, 2000, 42).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| sample_process(&probe, &det, &g, 2000, 42).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, sample_process(&probe, &det, &g, 2000, 43).unwrap());
    assert_eq!(
        sample_counts(&probe, &det, 0.7, 500, 9).unwrap(),
        sample_counts(&probe, &det, 0.7, 500, 9).unwrap()
    );
}

#[test]
fn equal_processes_are_indistinguishable() {
    let g = TransmittanceDistribution::gaussian(0.6, 0.02).unwrap();
    let pair = ProcessPair::new(g.clone(), g);
    let det = DetectionModel::ideal();
    assert_eq!(classical_pc_error(&pair, 100.0, &det, ClassicalMode::ClosedForm).unwrap().value, 0.5);
    let q = quantum_pc_error(&pair, &ProbeModel::tmsv(30.0).unwrap(), &det, QuantumMode::ExactLattice)
        .unwrap()
        .value;
    assert!((q - 0.5).abs() < 1e-9);
}
