use kolmo_core::erm_train::{empirical_risk, train, HypothesisClass, OptimizerConfig, TrainConfig};
use kolmo_core::neural::Architecture;
use kolmo_core::oracle::{estimation_error_l2, ReferenceKind, ReferenceSolution};
use kolmo_core::pde_model::{DynamicsSpec, HypercubeDomain, InitialFunction, PdeProblem};
use kolmo_core::sde_sim::{make_dataset, RngStream};

#[test]
fn zero_volatility_basket_is_fit_noiselessly() {
    let p = PdeProblem {
        domain: HypercubeDomain::new(1.0, 2.0, 1),
        dynamics: DynamicsSpec::black_scholes_uncorrelated(vec![0.0], vec![0.0]),
        initial: InitialFunction::basket_call(vec![1.0], 1.5),
        horizon: 1.0,
    };
    let data = make_dataset(&p, 8192, &RngStream::new(1, 0)).unwrap();
    for (x, l) in data.inputs.iter().zip(&data.labels) {
        assert_eq!(*l, (x - 1.5f64).max(0.0));
    }
    let hclass = HypothesisClass {
        arch: Architecture::new(vec![1, 16, 16, 1]).unwrap(),
        param_bound_r: 10.0,
        clip_d: 10.0,
    };
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 32,
        optimizer: OptimizerConfig {
            learning_rate: 3e-3,
            ..OptimizerConfig::default()
        },
        seed: 7,
        ..TrainConfig::default()
    };
    let (net, report) = train(&p, &data, &hclass, &cfg).unwrap();
    assert_eq!(report.final_empirical_risk, empirical_risk(&net, &data).unwrap());
    assert!(report.final_empirical_risk <= 1e-3, "{}", report.final_empirical_risk);
    assert!(net.params.sup_norm() <= 10.0);
}

#[test]
fn heat_two_dimensional_reaches_five_percent() {
    let p = PdeProblem::heat_polynomial(0.0, 1.0, 0.5, vec![1.0, 1.0], 2);
    let data = make_dataset(&p, 50_000, &RngStream::new(2, 0)).unwrap();
    let hclass = HypothesisClass {
        arch: Architecture::new(vec![2, 32, 32, 1]).unwrap(),
        param_bound_r: 10.0,
        clip_d: 10.0,
    };
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 256,
        optimizer: OptimizerConfig {
            learning_rate: 2e-3,
            ..OptimizerConfig::default()
        },
        seed: 3,
        ..TrainConfig::default()
    };
    let (net, _) = train(&p, &data, &hclass, &cfg).unwrap();
    let reference = ReferenceSolution::new(ReferenceKind::ClosedFormHeatPoly, p.clone()).unwrap();
    let e = estimation_error_l2(&net, &reference, &p.domain, 100_000, &RngStream::new(9, 0)).unwrap();
    assert!(e.relative_l2_error <= 0.05, "{e:?}");
}
