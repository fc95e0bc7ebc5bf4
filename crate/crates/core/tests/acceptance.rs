//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use lieddp::bench::BenchmarkConfig;
use lieddp::cost::{total_cost, CostSpec};
use lieddp::ddp::{
    backward_pass, control_distance, forward_pass, gradient_oracle, predicted_decrease, regularized_backward_pass,
    Expansion, Scheme, SolverConfig,
};
use lieddp::model::{linearize_step, perturbation_between, retract, rollout, step, BodyState, SatelliteModel, TangentPerturbation};
use lieddp::so3::{bch_quadratic, dexp, dexpinv, exp_so3, log_so3};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    name: &'static str,
    checks: Vec<(String, bool)>,
    elapsed: Duration,
    budget: Duration,
}

impl Outcome {
    fn new(name: &'static str, budget_secs: u64) -> Self {
        Outcome {
            name,
            checks: Vec::new(),
            elapsed: Duration::ZERO,
            budget: Duration::from_secs(budget_secs),
        }
    }

    fn check(&mut self, ok: bool, detail: String) {
        self.checks.push((detail, ok));
    }

    fn passed(&self) -> bool {
        self.elapsed < self.budget && self.checks.iter().all(|(_, ok)| *ok)
    }

    fn report(&self) {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {} ({:.2} s, budget {} s)",
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        );
        for (detail, ok) in &self.checks {
            println!("    [{}] {detail}", if *ok { "ok" } else { "!!" });
        }
    }
}

fn timed(name: &'static str, budget_secs: u64, body: impl FnOnce(&mut Outcome)) -> Outcome {
    let mut outcome = Outcome::new(name, budget_secs);
    let start = Instant::now();
    body(&mut outcome);
    outcome.elapsed = start.elapsed();
    outcome
}

const EPSILONS: [f64; 3] = [1e-1, 5e-2, 2.5e-2];

/// Least-squares slope of `log err` against `log ε`.
fn fitted_order(eps: &[f64], err: &[f64]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn satellite(horizon: usize) -> SatelliteModel {
    SatelliteModel::new(
        0.01,
        Matrix3::from_diagonal(&Vector3::new(10.0, 11.1, 13.0)),
        Matrix3xX::from_column_slice(Matrix3::<f64>::identity().as_slice()),
        horizon,
    )
    .unwrap()
}

fn random_spec(rng: &mut ChaCha8Rng) -> CostSpec {
    let rd = exp_so3(&(random_unit(rng) * rng.gen_range(0.3..1.5)));
    CostSpec::new(
        DMatrix::identity(3, 3) * 0.1,
        Matrix3::identity() * rng.gen_range(5.0..50.0),
        Matrix3::identity() * rng.gen_range(5.0..50.0),
        rd,
        random_unit(rng) * rng.gen_range(0.0..0.5),
    )
    .unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, omega_scale: f64) -> BodyState {
    BodyState::new(
        exp_so3(&(random_unit(rng) * rng.gen_range(0.0..2.5))),
        random_unit(rng) * rng.gen_range(0.0..omega_scale),
    )
}

fn random_controls(rng: &mut ChaCha8Rng, horizon: usize, scale: f64) -> Vec<DVector<f64>> {
    (0..horizon)
        .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-scale..scale)))
        .collect()
}

fn kernel_suite(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let limit = std::f64::consts::PI - 1e-3;
    let mut worst_roundtrip = 0.0f64;
    let mut worst_dexp = 0.0f64;
    for _ in 0..1000 {
        let v = random_unit(&mut rng) * rng.gen_range(0.0..limit);
        worst_roundtrip = worst_roundtrip.max((log_so3(&exp_so3(&v)) - v).norm());
        let w = random_unit(&mut rng) * rng.gen_range(0.0..2.0);
        worst_dexp = worst_dexp.max((dexp(&v, &dexpinv(&v, &w)) - w).norm());
    }
    out.check(worst_roundtrip <= 1e-9, format!("exp/log roundtrip max error {worst_roundtrip:.2e} <= 1e-9"));
    out.check(worst_dexp <= 1e-10, format!("dexp(dexpinv(w)) max error {worst_dexp:.2e} <= 1e-10"));

    let mut worst_order = f64::INFINITY;
    for _ in 0..20 {
        let x0 = random_unit(&mut rng) * rng.gen_range(0.5..1.0);
        let y0 = random_unit(&mut rng) * rng.gen_range(0.5..1.0);
        let err: Vec<f64> = EPSILONS
            .iter()
            .map(|&e| {
                let (x, y) = (x0 * e, y0 * e);
                let exact = log_so3(&(exp_so3(&x) * exp_so3(&y)));
                (bch_quadratic(&x, &y).unwrap() - exact).norm()
            })
            .collect();
        worst_order = worst_order.min(fitted_order(&EPSILONS, &err));
    }
    out.check(worst_order >= 2.7, format!("BCH truncation order (worst of 20) {worst_order:.3} >= 2.7"));
}

fn linearization_order(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let model = satellite(1);
    let (mut worst_second, mut first_lo, mut first_hi) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..20 {
        let g = random_state(&mut rng, 1.0);
        let u = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
        let zeta = Vector6::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let du = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let lin = linearize_step(&model, &g, &u);
        let nominal_next = step(&model, &g, &u);
        let (mut e2, mut e1) = (Vec::new(), Vec::new());
        for &eps in &EPSILONS {
            let z = zeta * eps;
            let d = &du * eps;
            let perturbed = retract(&g, &TangentPerturbation::from_vector(&z));
            let next = step(&model, &perturbed, &(&u + &d));
            let exact = perturbation_between(&nominal_next, &next).unwrap().to_vector();
            e2.push((lin.predict(&z, &d) - exact).norm());
            e1.push((lin.predict_first_order(&z, &d) - exact).norm());
        }
        let (o2, o1) = (fitted_order(&EPSILONS, &e2), fitted_order(&EPSILONS, &e1));
        worst_second = worst_second.min(o2);
        first_lo = first_lo.min(o1);
        first_hi = first_hi.max(o1);
    }
    out.check(worst_second >= 2.7, format!("second-order prediction order (worst of 20) {worst_second:.3} >= 2.7"));
    out.check(
        first_lo >= 1.7 && first_hi <= 2.3,
        format!("first-order prediction order range [{first_lo:.3}, {first_hi:.3}] within [1.7, 2.3]"),
    );
}

fn gradient_exactness(out: &mut Outcome) {
    let horizon = 10;
    let model = satellite(horizon);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let spec = random_spec(&mut rng);
        let g0 = random_state(&mut rng, 1.0);
        let controls = random_controls(&mut rng, horizon, 3.0);
        let states = rollout(&model, &g0, &controls);
        let (grad, _) = gradient_oracle(&model, &spec, &states, &controls);
        let cost_of = |u: &[DVector<f64>]| total_cost(&spec, &rollout(&model, &g0, u), u);
        let mut fd = DMatrix::zeros(horizon, 3);
        for k in 0..horizon {
            for j in 0..3 {
                let (mut up, mut dn) = (controls.clone(), controls.clone());
                up[k][j] += h;
                dn[k][j] -= h;
                fd[(k, j)] = (cost_of(&up) - cost_of(&dn)) / (2.0 * h);
            }
        }
        // Entries far below the gradient's scale are compared against that scale.
        let floor = 1e-2 * fd.amax();
        for (a, b) in grad.iter().zip(fd.iter()) {
            worst = worst.max((a - b).abs() / b.abs().max(floor));
        }
    }
    out.check(worst <= 1e-5, format!("max relative gradient error over 20 instances {worst:.2e} <= 1e-5"));
}

fn decrease_ratio(out: &mut Outcome) {
    let horizon = 30;
    let model = satellite(horizon);
    let config = SolverConfig::default();
    let gammas = [1e-2, 1e-3, 1e-4];
    let mut worst_mid = 0.0f64;
    let mut all_shrink = true;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let spec = random_spec(&mut rng);
        let g0 = random_state(&mut rng, 0.5);
        let controls = random_controls(&mut rng, horizon, 3.0);
        let states = rollout(&model, &g0, &controls);
        let nominal = total_cost(&spec, &states, &controls);
        let pass = regularized_backward_pass(&model, &spec, &states, &controls, Expansion::Second, &config).unwrap();
        let deviations: Vec<f64> = gammas
            .iter()
            .map(|&gamma| {
                let trial = forward_pass(&model, &spec, &states, &controls, &pass.gains, gamma).unwrap();
                let ratio = (trial.cost - nominal) / predicted_decrease(&pass.q, gamma);
                (ratio - 1.0).abs()
            })
            .collect();
        worst_mid = worst_mid.max(deviations[1]);
        all_shrink &= deviations.windows(2).all(|w| w[1] < w[0]);
    }
    out.check(
        worst_mid <= 0.1,
        format!("max |actual/predicted - 1| at gamma=1e-3 over 10 nominals {worst_mid:.2e} <= 0.1"),
    );
    out.check(all_shrink, "deviation shrinks through gamma = 1e-2, 1e-3, 1e-4 on every nominal".into());
}

fn table1_benchmark(out: &mut Outcome) {
    let problem = BenchmarkConfig::table1().build().unwrap();
    let solution = problem.solve().unwrap();
    let last = solution.states.last().unwrap();
    let attitude = log_so3(&(problem.spec.target_rotation().inverse() * last.rotation)).norm();
    let omega = last.omega.norm();
    let monotone = solution.records.windows(2).all(|w| w[1].cost <= w[0].cost);
    out.check(
        solution.converged() && solution.iterations() <= 100,
        format!(
            "converged={} in {} iterations (<= 100), final J = {:.10e}",
            solution.converged(),
            solution.iterations(),
            solution.cost()
        ),
    );
    out.check(monotone, "J nonincreasing over accepted iterations".into());
    let qu = solution.final_max_qu_norm();
    out.check(qu <= 1e-5, format!("terminal max_k |Qu^k| {qu:.2e} <= 1e-5"));
    out.check(attitude <= 0.05, format!("terminal attitude error {attitude:.4} rad <= 0.05"));
    out.check(omega <= 0.05, format!("terminal |Omega^H| {omega:.4} rad/s <= 0.05"));
}

/// Successive ratios `d_{i+1}/d_i` of distances to the run's own final
/// iterate, excluding the final (zero) distance.
fn distance_ratios(distances: &[f64]) -> Vec<f64> {
    let d = &distances[..distances.len() - 1];
    d.windows(2).map(|w| w[1] / w[0]).collect()
}

fn scheme_contrast(out: &mut Outcome) {
    let base = BenchmarkConfig::table1().build().unwrap();
    let run = |scheme| {
        let mut problem = base.clone();
        problem.solver = SolverConfig::with_scheme(scheme);
        problem.solve().unwrap()
    };
    let (first, second, switch) = (run(Scheme::First), run(Scheme::Second), run(Scheme::Switch));

    let r2 = distance_ratios(&second.distances_to_final());
    let tail2 = &r2[r2.len().saturating_sub(3)..];
    let tail2_text: Vec<String> = tail2.iter().map(|r| format!("{r:.2e}")).collect();
    out.check(
        tail2.len() == 3 && tail2.windows(2).all(|w| w[1] < w[0]),
        format!("second-order last-3 error ratios {tail2_text:?} strictly decreasing"),
    );
    let r1 = distance_ratios(&first.distances_to_final());
    let tail1 = &r1[r1.len().saturating_sub(3)..];
    let min1 = tail1.iter().cloned().fold(f64::INFINITY, f64::min);
    out.check(min1 >= 0.1, format!("first-order last-3 error ratios {tail1:.3?}, min {min1:.3} >= 0.1"));
    out.check(
        switch.switch_iteration == Some(1),
        format!("switch logged after iteration {:?} (expected 1)", switch.switch_iteration),
    );
    let u_norm = control_distance(&second.controls, &vec![DVector::zeros(3); second.controls.len()]);
    let gap = control_distance(&first.controls, &second.controls) / u_norm;
    out.check(gap <= 1e-4, format!("first vs second final controls |dU|/|U| {gap:.2e} <= 1e-4"));
}

fn newton_oracle(out: &mut Outcome) {
    let model = satellite(1);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let spec = random_spec(&mut rng);
        let g0 = BodyState::at_rest(exp_so3(&(random_unit(&mut rng) * rng.gen_range(0.0..1.0))));
        let u0 = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
        let controls = vec![u0.clone()];
        let states = rollout(&model, &g0, &controls);
        let pass = backward_pass(&model, &spec, &states, &controls, 0.0, Expansion::Second).unwrap();
        let trial = forward_pass(&model, &spec, &states, &controls, &pass.gains, 1.0).unwrap();
        let ddp_step = &trial.controls[0] - &u0;

        let reduced = |u: &DVector<f64>| total_cost(&spec, &[g0, step(&model, &g0, u)], std::slice::from_ref(u));
        let (hg, hh) = (1e-6, 1e-3);
        let e = |i: usize| DVector::from_fn(3, |r, _| if r == i { 1.0 } else { 0.0 });
        let grad = DVector::from_fn(3, |i, _| (reduced(&(&u0 + e(i) * hg)) - reduced(&(&u0 - e(i) * hg))) / (2.0 * hg));
        let hess = DMatrix::from_fn(3, 3, |i, j| {
            let f = |si: f64, sj: f64| reduced(&(&u0 + e(i) * (si * hh) + e(j) * (sj * hh)));
            (f(1.0, 1.0) - f(1.0, -1.0) - f(-1.0, 1.0) + f(-1.0, -1.0)) / (4.0 * hh * hh)
        });
        let newton = -hess.cholesky().unwrap().solve(&grad);
        worst = worst.max((&ddp_step - &newton).norm() / newton.norm());
    }
    out.check(worst <= 1e-4, format!("H=1 DDP step vs finite-difference Newton step, max rel. error {worst:.2e} <= 1e-4"));
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let outcomes = [
        timed("kernel suite", 5, kernel_suite),
        timed("linearization order", 5, linearization_order),
        timed("gradient exactness", 30, gradient_exactness),
        timed("predicted decrease ratio", 30, decrease_ratio),
        timed("rest-to-rest benchmark (H = 300)", 60, table1_benchmark),
        timed("scheme contrast", 60, scheme_contrast),
        timed("one-step Newton oracle", 30, newton_oracle),
    ];
    for outcome in &outcomes {
        outcome.report();
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
