use approx_bft::costmodel::{aggregate_minimizer, curvature, subset_minimizer, CostFunction};
use approx_bft::dataset::{generate_synthetic, regression6};
use approx_bft::experiment::{run_experiment, DataSource, ExperimentSpec, REFERENCE_X0};
use approx_bft::redundancy::measure_redundancy;
use approx_bft::simengine::FaultBehavior;
use approx_bft::{AgentSet, FilterKind, QuadraticCost, Vector};
use proptest::prelude::*;

fn honest() -> AgentSet {
    AgentSet::from_labels(&[2, 3, 4, 5, 6]).unwrap()
}

fn aggregate_gradient(costs: &[QuadraticCost], set: &AgentSet, x: &Vector) -> Vector {
    set.members()
        .iter()
        .fold(Vector::zeros(x.dim()), |acc, &i| &acc + &costs[i].gradient(x).unwrap())
}

proptest! {
    #[test]
    fn strong_convexity_of_honest_aggregate(
        a in prop::collection::vec(-50.0..50.0f64, 2),
        b in prop::collection::vec(-50.0..50.0f64, 2),
    ) {
        let costs = regression6();
        let set = honest();
        let gamma = curvature(&costs, &set).unwrap().gamma;
        let (x, y) = (Vector::from_raw(a), Vector::from_raw(b));
        let diff = &x - &y;
        let lhs = (&aggregate_gradient(&costs, &set, &x) - &aggregate_gradient(&costs, &set, &y)).dot(&diff);
        prop_assert!(lhs >= gamma * set.len() as f64 * diff.norm_squared() - 1e-8);
    }

    #[test]
    fn minimizer_zeroes_aggregate_gradient(n in 3usize..10, d in 1usize..4, seed in any::<u64>()) {
        prop_assume!(n > d);
        let data = generate_synthetic(n, d, 1.0, seed).unwrap();
        let x = aggregate_minimizer(&data.costs).unwrap();
        let g = aggregate_gradient(&data.costs, &AgentSet::all(n), &x);
        let scale = data.costs.iter().map(|c| c.row().norm_squared() * (1.0 + c.response().abs())).sum::<f64>();
        prop_assert!(g.norm() <= 1e-10 * scale);
    }

    #[test]
    fn noise_free_instances_have_zero_redundancy(n in 4usize..9, d in 1usize..3, seed in any::<u64>()) {
        prop_assume!(n - 2 >= d);
        let data = generate_synthetic(n, d, 0.0, seed).unwrap();
        let report = measure_redundancy(&data.costs, 1, false).unwrap();
        prop_assert!(report.epsilon < 1e-9);
        let x = subset_minimizer(&data.costs, &AgentSet::all(n)).unwrap();
        prop_assert!(x.approx_eq(&data.ground_truth, 1e-9));
    }
}

fn run(filter: FilterKind, fault: FaultBehavior, seed: u64) -> approx_bft::experiment::ExperimentOutcome {
    let mut spec = ExperimentSpec::new(DataSource::Inline(regression6()));
    spec.filter = filter;
    spec.fault = fault;
    spec.x0 = Some(REFERENCE_X0.to_vec());
    spec.seed = seed;
    run_experiment(&spec).unwrap()
}

#[test]
fn phi_is_positive_away_from_the_limit() {
    for filter in [FilterKind::Cge, FilterKind::Cwtm] {
        for fault in [FaultBehavior::GradientReverse, FaultBehavior::Gaussian { std: 200.0 }] {
            let out = run(filter, fault, 3);
            let limit = out.trajectory.last().distance;
            for r in &out.trajectory.records {
                if r.distance >= limit + 0.05 {
                    assert!(r.phi > 0.0, "{filter}: phi {} at round {}", r.phi, r.t);
                }
            }
        }
    }
}

#[test]
fn summary_distance_matches_final_record() {
    for filter in [FilterKind::Cge, FilterKind::Cwtm, FilterKind::Average] {
        let out = run(filter, FaultBehavior::Gaussian { std: 200.0 }, 9);
        let last = out.trajectory.last();
        assert!((out.summary.dist_to_xh - last.distance).abs() <= 1e-12);
        assert!((out.summary.x_out.distance(&out.summary.x_ref) - last.distance).abs() <= 1e-12);
    }
}

#[test]
fn fault_free_average_converges_and_decreases_loss() {
    let mut spec = ExperimentSpec::new(DataSource::Inline(regression6()[1..].to_vec()));
    spec.f = 0;
    spec.faulty.clear();
    spec.filter = FilterKind::Average;
    let out = run_experiment(&spec).unwrap();
    let first = &out.trajectory.records[0];
    let last = out.trajectory.last();
    assert!(last.loss < first.loss);
    assert!(last.distance < 1e-2);
}
