use orthograd::convergence::{
    aligned_gradients, boundary_stationarity_check_with_grads, check_descent_inequality, plain_perp_trajectory,
    run_plain_perp, run_renorm_perp, AnalyticLoss, RenormOutcome,
};
use orthograd::net::random_inputs;
use orthograd::rng::{stream, Stream};
use orthograd::Network;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn identity(p: usize) -> Vec<f64> {
    let mut a = vec![0.0; p * p];
    for i in 0..p {
        a[i * p + i] = 1.0;
    }
    a
}

#[test]
fn unit_quadratic_example_matches_scalar_simulation() {
    let loss = AnalyticLoss::shifted_quadratic(vec![1.0, 0.0], identity(2)).unwrap();
    let (report, traj) = run_plain_perp(&loss, &[0.0, 1.0], 0.5, 200_000).unwrap();
    assert!(report.converged);
    assert!(report.final_alignment >= 1.0 - 1e-8 || report.final_grad_norm <= 1e-8);
    assert_eq!(report.descent_violations, 0);

    // independent scalar simulation of theta' = theta - eta * g
    let (mut x, mut y) = (0.0f64, 1.0f64);
    for _ in 0..report.steps_taken {
        let (gx, gy) = (x - 1.0, y);
        let c = (gx * x + gy * y) / (x * x + y * y);
        let (ox, oy) = (gx - c * x, gy - c * y);
        let c2 = (ox * x + oy * y) / (x * x + y * y);
        x -= 0.5 * (ox - c2 * x);
        y -= 0.5 * (oy - c2 * y);
    }
    assert!((x - report.final_theta[0]).abs() <= 1e-12);
    assert!((y - report.final_theta[1]).abs() <= 1e-12);
    // loss never increases along the trajectory
    assert!(traj.points.windows(2).all(|w| w[1].loss <= w[0].loss + 1e-15));
}

#[test]
fn random_spd_quadratics_reach_parallel_stationarity() {
    let mut rng = stream(2024, Stream::Probe);
    for i in 0..20 {
        let dim = 2 + (i * 48) / 19;
        let loss = AnalyticLoss::random_quadratic(dim, (0.1, 10.0), &mut rng).unwrap();
        let theta0: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let eta = 0.9 / loss.lipschitz_k();
        let (report, traj) = run_plain_perp(&loss, &theta0, eta, 200_000).unwrap();
        assert!(report.stationarity_gap <= 1e-6, "instance {i}: gap {}", report.stationarity_gap);
        assert_eq!(report.descent_violations, 0, "instance {i}");
        assert!(report.summability_bound_satisfied, "instance {i}");
        let check = check_descent_inequality(&loss, &traj, eta, loss.lipschitz_k());
        assert!(check.grad_sq_sum <= check.summability_bound * (1.0 + 1e-8));
    }
}

#[test]
fn oversized_step_violates_descent_bound() {
    // With the exact k the bound holds for every eta on a quadratic, since
    // <grad, g> = ||g||^2. The control therefore claims k = 1 against a
    // stiff eigenvalue of 10 and steps with eta = 2.5 / k.
    let loss = AnalyticLoss::shifted_quadratic(vec![1.0, 1.0], vec![1.0, 0.0, 0.0, 10.0]).unwrap();
    let claimed_k = 1.0;
    let eta = 2.5 / claimed_k;
    let (_, traj, _) = plain_perp_trajectory(&loss, &[2.0, -1.0], eta, 50);
    let check = check_descent_inequality(&loss, &traj, eta, claimed_k);
    assert!(check.violations > 0);
    assert!(!check.summability_bound_satisfied);

    let exact = check_descent_inequality(&loss, &traj, eta, loss.lipschitz_k());
    assert_eq!(exact.violations, 0);
    assert!(run_plain_perp(&loss, &[2.0, -1.0], eta, 50).is_err());
}

#[test]
fn logistic_trajectory_respects_descent_bound() {
    let mut rng = stream(5, Stream::Data);
    let loss = AnalyticLoss::random_logistic_2d(200, 1e-2, &mut rng).unwrap();
    let eta = 0.9 / loss.lipschitz_k();
    let (report, _) = run_plain_perp(&loss, &[0.3, -0.2], eta, 200_000).unwrap();
    assert_eq!(report.descent_violations, 0);
    assert!(report.summability_bound_satisfied);
}

#[test]
fn parallel_start_stabilizes_immediately() {
    let mut rng = stream(6, Stream::Probe);
    let p = 5;
    let c: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let a: Vec<f64> = identity(p).iter().map(|v| 2.0 * v).collect();
    let loss = AnalyticLoss::shifted_quadratic(c.clone(), a).unwrap();
    // grad L(t c) = 2 (t - 1) c is parallel to t c for every t != 1
    let theta0: Vec<f64> = c.iter().map(|v| 2.0 * v).collect();
    let report = run_renorm_perp(&loss, &theta0, 0.1, 1e-30, 1e-12, 10_000).unwrap();
    assert_eq!(report.outcome, RenormOutcome::Stabilized);
    assert!(report.skip_fired);
    assert_eq!(report.steps_taken, 0);
}

#[test]
fn generic_renorm_runs_are_classified() {
    let mut rng = stream(7, Stream::Probe);
    for _ in 0..5 {
        let loss = AnalyticLoss::random_quadratic(6, (0.5, 5.0), &mut rng).unwrap();
        let theta0: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let report = run_renorm_perp(&loss, &theta0, 0.01, 1e-30, 1e-12, 20_000).unwrap();
        eprintln!("renorm outcome {:?} after {} steps", report.outcome, report.steps_taken);
        if report.outcome == RenormOutcome::Stabilized {
            assert!(report.skip_fired);
        }
        if report.outcome == RenormOutcome::NonConvergent {
            assert!(report.oscillation.is_some());
        }
    }
}

#[test]
fn constructed_parallel_point_keeps_every_prediction() {
    let mut rng = stream(9, Stream::Init);
    let net = Network::mlp(&[2, 32, 32, 3], false, &mut rng).unwrap();
    let inputs = random_inputs(1000, 2, &mut rng);
    let lambdas = [0.7, -1.3, 2.1];
    let grads = aligned_gradients(&net, &lambdas).unwrap();
    let report = boundary_stationarity_check_with_grads(&net, &inputs, &grads, 0.3).unwrap();
    assert!(report.applicable, "{:?}", report.reason);
    assert!(report.homogeneous);
    assert_eq!(report.match_rate, 1.0);
}

#[test]
fn biased_network_is_a_negative_control() {
    let mut rng = stream(10, Stream::Init);
    let mut net = Network::mlp(&[2, 16, 3], true, &mut rng).unwrap();
    let mut groups = net.param_groups();
    for g in groups.iter_mut().filter(|g| g.ndim == 1) {
        for (i, t) in g.theta.iter_mut().enumerate() {
            *t = if i % 2 == 0 { 1.5 } else { -1.0 };
        }
    }
    net.load_groups(&groups).unwrap();
    let inputs = random_inputs(1000, 2, &mut rng);
    // shrink the biases hard while leaving the weights alone
    let lambdas: Vec<f64> = net.param_groups().iter().map(|g| if g.ndim == 1 { 9.5 } else { 0.0 }).collect();
    let grads = aligned_gradients(&net, &lambdas).unwrap();
    let report = boundary_stationarity_check_with_grads(&net, &inputs, &grads, 0.1).unwrap();
    assert!(!report.homogeneous);
    eprintln!("biased control match rate {}", report.match_rate);
    assert!(report.match_rate < 1.0);
}
