//! Worked examples for the sensitivity and robust-oracle layers.

use aw_sens::adapted::{aw_distance, AwParams};
use aw_sens::control::{ControlBounds, SolverOptions};
use aw_sens::cost::catalog::build_utility_cost;
use aw_sens::cost::{LossFn, TerminalSpec, UtilityModel};
use aw_sens::robust::{robust_curve, RobustQuery};
use aw_sens::sensitivity::{
    perturbed_model, sensitivity_control, sensitivity_terminal, utility_loss_sensitivity,
    worst_case_direction, ProblemClass,
};
use aw_sens::tree::{gen_binomial, TreeBuilder};

fn p2() -> AwParams {
    AwParams::new(2.0).unwrap()
}

#[test]
fn zero_first_order_gives_second_order_error() {
    // X_1 = 0, X_2 = +-1: d/dx_1 (x_1 x_2) has zero conditional mean and
    // d/dx_2 vanishes on the support
    let mut b = TreeBuilder::new(2);
    let n = b.add_child(b.root(), 0.0, 1.0);
    b.add_child(n, 1.0, 0.5);
    b.add_child(n, -1.0, 0.5);
    let tree = b.build().unwrap();
    let model = TerminalSpec::Product {
        i: 1,
        j: 2,
        scale: 1.0,
    }
    .build(2)
    .unwrap();
    assert_eq!(
        sensitivity_terminal(&tree, &model, p2())
            .unwrap()
            .first_order,
        0.0
    );
    let curve = robust_curve(&RobustQuery::new(
        ProblemClass::Terminal,
        tree,
        model,
        p2(),
        vec![1e-3],
    ))
    .unwrap();
    assert!(curve.rows[0].lower_bound < 1e-4, "{:?}", curve.rows[0]);
}

#[test]
fn single_period_utility_formula() {
    let mut b = TreeBuilder::new(1);
    b.add_child(b.root(), 1.0, 0.3);
    b.add_child(b.root(), -0.5, 0.7);
    let tree = b.build().unwrap();
    let u = UtilityModel {
        loss: LossFn::Exponential { gamma: 1.0 },
        payoff: TerminalSpec::Constant { value: 0.0 },
        x0: 0.0,
    };
    let opts = SolverOptions::default();
    let rep = utility_loss_sensitivity(&tree, &u, ControlBounds::default(), p2(), &opts).unwrap();
    let model = build_utility_cost(&u, 1).unwrap();
    let direct = sensitivity_control(&tree, &model, ControlBounds::default(), p2(), &opts).unwrap();
    assert!((rep.first_order - direct.first_order).abs() <= 1e-10);
    // with a_2 = 0 the only term is -a_1 l'(a_1 X_1)
    let a1 = aw_sens::control::solve_value(&tree, &model, ControlBounds::default(), &opts)
        .unwrap()
        .policy
        .values[0];
    let expected: f64 = tree
        .leaves()
        .iter()
        .map(|&l| tree.path_prob(l) * (a1 * (a1 * tree.value(l)).exp()).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!((rep.first_order - expected).abs() <= 1e-10);
}

#[test]
fn symmetric_quadratic_utility_has_zero_sensitivity() {
    let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
    let u = UtilityModel {
        loss: LossFn::Quadratic,
        payoff: TerminalSpec::Constant { value: 0.0 },
        x0: 0.0,
    };
    let rep = utility_loss_sensitivity(
        &tree,
        &u,
        ControlBounds::default(),
        p2(),
        &SolverOptions::default(),
    )
    .unwrap();
    assert!(rep.first_order < 1e-8);
}

#[test]
fn linear_perturbation_is_exact() {
    let tree = gen_binomial(2, 0.0, 1.0, -1.0, 0.5, 0.0).unwrap();
    let model = TerminalSpec::Linear { c: vec![0.0, 1.0] }.build(2).unwrap();
    let dir =
        worst_case_direction(&tree, &sensitivity_terminal(&tree, &model, p2()).unwrap()).unwrap();
    for r in [0.05, 0.3, 1.0] {
        let q = perturbed_model(&tree, &dir, r, r / 100.0).unwrap();
        let mean = |t: &aw_sens::tree::ScenarioTree| -> f64 {
            t.leaves()
                .iter()
                .map(|&l| t.path_prob(l) * t.value(l))
                .sum()
        };
        assert!((mean(&q.tree) - mean(&tree) - r).abs() < 1e-12);
        assert!(aw_distance(&tree, &q.tree, p2()).unwrap().distance <= r + 1e-9);
    }
}

#[test]
fn single_stage_constant_gradient_direction() {
    let mut b = TreeBuilder::new(1);
    b.add_child(b.root(), 0.3, 0.4);
    b.add_child(b.root(), 1.1, 0.6);
    let tree = b.build().unwrap();
    let model = TerminalSpec::Linear { c: vec![-2.5] }.build(1).unwrap();
    let rep = sensitivity_terminal(&tree, &model, AwParams::new(3.0).unwrap()).unwrap();
    let dir = worst_case_direction(&tree, &rep).unwrap();
    assert!(dir.z[0].iter().all(|&z| (z + 1.0).abs() < 1e-15));
    assert!((dir.pairing - 2.5).abs() < 1e-12 && (rep.first_order - 2.5).abs() < 1e-12);
}
