use mixhmm_core::hmm::map_classify;
use mixhmm_core::{
    benchmark_design, correct_rate, fit, mse, nested_squares_design, simulate, CovStructure, Criteria, FitConfig, SelectionCriterion,
};
use proptest::prelude::*;

#[test]
fn benchmark_sequence_end_to_end() {
    let sim = simulate(&benchmark_design(0.9, 3.0).unwrap().with_seed(17)).unwrap();
    let cfg = FitConfig {
        k_init: 6,
        ..FitConfig::default().with_structure(CovStructure::Spherical)
    };
    let result = fit(&sim.data, &cfg).unwrap();
    assert_eq!(result.selected, 4);
    assert_eq!(result.model.total_components(), 6);
    assert!(correct_rate(&map_classify(&result.posterior.chain.tau), &sim.states).unwrap() > 0.9);
    assert!(mse(&result.posterior.chain.tau, &sim.true_tau).unwrap() < 0.2);

    let levels: Vec<usize> = result.report.records.iter().map(|r| r.clusters).collect();
    assert_eq!(levels, vec![6, 5, 4, 3, 2, 1]);
    let best = result.report.select(SelectionCriterion::IclS).unwrap();
    assert_eq!(best, result.selected);
}

#[test]
fn criteria_of_the_true_model_are_ordered() {
    let spec = benchmark_design(0.5, 1.0).unwrap().with_n(400).with_seed(3);
    let model = spec.true_model().unwrap();
    let data = simulate(&spec).unwrap().data;
    let c = Criteria::evaluate(&model, &data).unwrap();
    assert!(c.bic >= c.icl_s && c.icl_s >= c.icl);
}

#[test]
fn nested_design_has_no_gaussian_truth() {
    let spec = nested_squares_design(0.1).unwrap().with_n(400).with_seed(3);
    assert!(spec.true_model().is_none());
    let sim = simulate(&spec).unwrap();
    assert_eq!(sim.true_tau.cols(), 2);
    assert!(sim.states.iter().all(|&s| s < 2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), a in 0.1f64..0.95, b in 0.5f64..6.0) {
        let spec = benchmark_design(a, b).unwrap().with_n(50).with_seed(seed);
        let (x, y) = (simulate(&spec).unwrap(), simulate(&spec).unwrap());
        prop_assert_eq!(&x, &y);
        for row in x.true_tau.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
