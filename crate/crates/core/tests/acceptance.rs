//! Acceptance suite: eight criteria at their stated tolerances. Each test
//! writes one `[k] PASS|FAIL` line straight to stderr, so the lines show up
//! even when the harness captures output.

mod common;

use std::io::Write;
use std::time::Instant;

use markov_sa::bounds::{
    calibrate_d, chebyshev_n0_power, envelope_curve, envelope_domination, stitch, BoundInputs,
    BoundReport, Campaign, StitchRequest,
};
use markov_sa::engine::{par_map, simulate_stream, trajectory_rng, EnvelopeMonitor, SaProblem};
use markov_sa::markov::poisson_solve;
use markov_sa::rl::{
    pair_stationary, q_as_sa_problem, q_value_iteration, td_as_sa_problem, td_contraction_factor,
    td_fixed_point, BehaviorPolicy, Mdp, QLearningInstance, TdInstance,
};
use markov_sa::synthetic::SyntheticSpec;
use markov_sa::{FiniteChain, Norm, StepSchedule, Tagged};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MDP_2X2: &str = "2 2 0.5\n0 0 1.0 0.7 0.3\n0 1 0.5 0.2 0.8\n1 0 0.0 0.6 0.4\n1 1 2.0 0.1 0.9\n";
const MDP_1X2: &str = "1 2 0.5\n0 0 1.0 1.0\n0 1 0.0 1.0\n";

fn line(k: u8, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let msg = format!("[{k}] {status}  {name}: {detail}\n");
    // Bypass output capture.
    let _ = std::io::stderr().write_all(msg.as_bytes());
}

/// Two states, uniform transitions, costs 1, one feature 0.5, discount 0.5.
fn worked_td() -> TdInstance {
    let chain = FiniteChain::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let phi = DMatrix::from_row_slice(2, 1, &[0.5, 0.5]);
    TdInstance::new(chain, vec![1.0, 1.0], 0.5, phi).unwrap()
}

/// A faster-mixing admissible instance: discount 0.2, distinct features.
fn fast_td() -> TdInstance {
    let chain = FiniteChain::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    let phi = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
    TdInstance::new_rescaled(chain, vec![1.0, 0.0], 0.2, phi).unwrap()
}

fn softmax_q(text: &str, tau: f64) -> QLearningInstance {
    QLearningInstance::new(Mdp::from_text(text).unwrap(), BehaviorPolicy::Softmax { tau }, 2000, 17).unwrap()
}

#[test]
fn c1_poisson_solver() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut pinned_exact) = (0.0f64, true);
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let rows = common::random_chain_rows(n, &mut rng);
        let chain = FiniteChain::from_rows(&rows).unwrap();
        let d = rng.random_range(1..=3);
        let f: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let pinned = rng.random_range(0..n);
        let sol = poisson_solve(&chain, &DMatrix::from_fn(n, d, |i, l| f[i][l]), pinned).unwrap();
        let v: Vec<Vec<f64>> = (0..n).map(|i| sol.row(i)).collect();
        // Residual against an independently computed stationary law.
        let pi = common::stationary_oracle(&rows);
        worst = worst.max(common::poisson_residual_oracle(&rows, &f, &v, &pi));
        pinned_exact &= v[pinned].iter().all(|&x| x == 0.0);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && pinned_exact && secs < 10.0;
    line(1, "Poisson solutions on 200 random chains", pass, &format!("max residual {worst:.2e}, V(i0)=0 exact: {pinned_exact}, {secs:.2}s"));
    assert!(pass);
}

fn envelope_violations(problem: &SaProblem, schedule: &StepSchedule, x0: &[f64], runs: usize, horizon: usize) -> (usize, f64) {
    let big_n = schedule.certify_n().unwrap();
    let per: Vec<(usize, f64)> = par_map(runs, |idx| {
        let mut mon = EnvelopeMonitor::new(problem, big_n);
        let mut rng = trajectory_rng(4242, idx as u64);
        simulate_stream(problem, schedule, x0, 0, horizon, &mut rng, |n, x, _| mon.observe(n, x)).unwrap();
        (mon.result.violations, mon.result.worst_margin)
    });
    per.iter().fold((0, f64::NEG_INFINITY), |(v, w), &(a, b)| (v + a, w.max(b)))
}

#[test]
fn c2_pathwise_envelope() {
    let start = Instant::now();
    let sch = StepSchedule::harmonic(1.0).unwrap();
    let synthetic = SyntheticSpec::default().build().unwrap();
    let q = softmax_q(MDP_2X2, 20.0);
    let qp = q_as_sa_problem(&q).unwrap();
    let td = td_as_sa_problem(&worked_td()).unwrap();
    let families: [(&str, &SaProblem, Vec<f64>); 3] = [
        ("synthetic", &synthetic, vec![3.0, -2.0]),
        ("qlearning", &qp, vec![0.0; 4]),
        ("td0", &td, vec![0.0]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, p, x0) in families {
        let (v, w) = envelope_violations(p, &sch, &x0, 1000, 2000);
        pass &= v == 0;
        parts.push(format!("{name} {v} violations (worst margin {w:.3e})"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    line(2, "pathwise envelope, 1000 runs x 3 families", pass, &format!("{}, {secs:.1}s", parts.join("; ")));
    assert!(pass);
}

#[test]
fn c3_contraction_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Q-learning: the averaged map moves coordinate l to (1-pi_l) x_l + pi_l g(x)_l.
    let q = softmax_q(MDP_2X2, 20.0);
    let mdp = &q.mdp;
    let box_side = mdp.k_sup() / (1.0 - mdp.gamma());
    let (mut q_ratio, mut q_bad) = (0.0f64, 0usize);
    for _ in 0..10_000 {
        let w: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..=box_side)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-box_side..box_side)).collect();
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-box_side..box_side)).collect();
        let pi = pair_stationary(mdp, &q.policy, &w).unwrap();
        let (gx, gz) = (mdp.bellman(&x), mdp.bellman(&z));
        let diff: Vec<f64> = (0..4).map(|l| (1.0 - pi[l]) * (x[l] - z[l]) + pi[l] * (gx[l] - gz[l])).collect();
        let ratio = Norm::Sup.of(&diff) / Norm::Sup.dist(&x, &z);
        q_ratio = q_ratio.max(ratio);
        q_bad += (ratio > q.alpha.value + 1e-12) as usize;
    }
    // The closed form with the sampled pi_min, recomputed here.
    let q_alpha = 1.0 - (1.0 - mdp.gamma()) * q.pi_min.value;
    let q_formula_ok = (q_alpha - q.alpha.value).abs() < 1e-15;

    // TD(0): the averaged map is r -> r - A r + b, A = Phi^T D (I - gamma P) Phi.
    let mut td_ok = true;
    let mut td_parts = Vec::new();
    for inst in [worked_td(), fast_td()] {
        let (phi, d) = (&inst.phi, &inst.d);
        let dm = DMatrix::from_diagonal(&DVector::from_column_slice(d));
        let gram = phi.transpose() * &dm * phi;
        let lam_min = gram.clone().symmetric_eigen().eigenvalues.min();
        let psi = phi.transpose() * dm.map(f64::sqrt);
        let lam_m = psi.singular_values().max();
        let g = inst.gamma;
        let alpha = (1.0 - lam_min * (2.0 * (1.0 - g) - lam_m * lam_m * (1.0 + g) * (1.0 + g))).sqrt();
        let a = &gram - g * phi.transpose() * &dm * inst.chain.matrix() * phi;
        let m = DMatrix::identity(phi.ncols(), phi.ncols()) - a;
        let (mut worst, mut bad) = (0.0f64, 0usize);
        for _ in 0..10_000 {
            let delta = DVector::from_fn(phi.ncols(), |_, _| rng.random_range(-10.0..10.0));
            let ratio = (&m * &delta).norm() / delta.norm();
            worst = worst.max(ratio);
            bad += (ratio > alpha + 1e-12) as usize;
        }
        let formula_ok = (alpha - td_contraction_factor(&inst)).abs() < 1e-12;
        td_ok &= bad == 0 && formula_ok;
        td_parts.push(format!("td gamma={g}: ratio {worst:.6} <= alpha {alpha:.6}, {bad} counterexamples"));
    }
    let pass = q_bad == 0 && q_formula_ok && td_ok;
    line(
        3,
        "contraction oracles, 1e4 pairs",
        pass,
        &format!(
            "q ratio {q_ratio:.6} <= alpha {:.6} (pi_min {:.4e} sampled), {q_bad} counterexamples; {}",
            q.alpha.value,
            q.pi_min.value,
            td_parts.join("; ")
        ),
    );
    assert!(pass);
}

// Hand evaluation on the worked instance: Phi^T D Phi = 0.25 = lambda_min,
// lambda_M = 0.5, so alpha^2 = 1 - 0.25 (1 - 0.25 * 2.25) = 0.890625.
// A = 0.25 - 0.5 * 0.25 = 0.125 and b = Phi^T D k = 0.5 give r* = 4.
const WORKED_ALPHA_SQ: f64 = 0.890625;
const WORKED_R_STAR: f64 = 4.0;
const STATED_ALPHA: f64 = 0.9436557;

#[test]
fn c4_fixed_point_oracles() {
    let mdp = Mdp::from_text(MDP_2X2).unwrap();
    let q_star = q_value_iteration(&mdp, 1e-13, 1_000_000).unwrap();
    // Residual recomputed from the transition table.
    let mut q_res = 0.0f64;
    for i in 0..2 {
        for u in 0..2 {
            let next: f64 = (0..2)
                .map(|j| mdp.p(j, i, u) * q_star[2 * j].min(q_star[2 * j + 1]))
                .sum();
            q_res = q_res.max((mdp.k(i, u) + 0.5 * next - q_star[2 * i + u]).abs());
        }
    }
    let inst = worked_td();
    let r = td_fixed_point(&inst).unwrap();
    let td_res = inst.fixed_point_residual(&r).unwrap();
    let alpha = td_contraction_factor(&inst);
    let oracle_alpha = WORKED_ALPHA_SQ.sqrt();
    let core = q_res <= 1e-10 && td_res <= 1e-9 && (r[0] - WORKED_R_STAR).abs() <= 1e-9 && (alpha - oracle_alpha).abs() <= 1e-12;
    let stated_ok = (alpha - STATED_ALPHA).abs() <= 1e-6;
    line(
        4,
        "fixed-point oracles",
        core && stated_ok,
        &format!(
            "Q* residual {q_res:.2e}, TD residual {td_res:.2e}, r* = {:.12}, alpha = {alpha:.10} \
             (= sqrt(0.890625)); stated alpha {STATED_ALPHA} is off by {:.2e} > 1e-6",
            r[0],
            (alpha - STATED_ALPHA).abs()
        ),
    );
    assert!(core);
}

/// The stated alpha is not sqrt(0.890625); kept verbatim so the discrepancy stays visible.
#[test]
#[ignore = "stated value 0.9436557 is not sqrt(0.890625) = 0.9437293"]
fn c4_stated_alpha_literal() {
    let alpha = td_contraction_factor(&worked_td());
    assert!((alpha - STATED_ALPHA).abs() <= 1e-6, "alpha = {alpha}");
}

fn converged_fraction(p: &SaProblem, tol: f64, horizon: usize) -> usize {
    let sch = StepSchedule::harmonic(1.0).unwrap();
    let x_star = p.x_star.clone().unwrap();
    let ok: Vec<bool> = par_map(100, |seed| {
        let mut rng = trajectory_rng(seed as u64, 0);
        let mut last = Vec::new();
        simulate_stream(p, &sch, &vec![0.0; p.dim()], 0, horizon, &mut rng, |n, x, _| {
            if n == horizon {
                last = x.to_vec();
            }
        })
        .unwrap();
        p.norm.dist(&last, &x_star) < tol
    });
    ok.into_iter().filter(|&b| b).count()
}

#[test]
fn c5_convergence() {
    let start = Instant::now();
    let horizon = 100_000;
    let q = softmax_q(MDP_1X2, 20.0);
    let qp = q_as_sa_problem(&q).unwrap();
    let q_hits = converged_fraction(&qp, 0.05 * q.mdp.k_sup() / (1.0 - q.mdp.gamma()), horizon);
    let td = fast_td();
    let tp = td_as_sa_problem(&td).unwrap();
    let td_hits = converged_fraction(&tp, 0.05 * Norm::Euclidean.of(&td.r_star), horizon);
    // Slower instances for context only.
    let q22 = softmax_q(MDP_2X2, 20.0);
    let q22_hits = converged_fraction(&q_as_sa_problem(&q22).unwrap(), 0.05 * q22.mdp.k_sup() / 0.5, horizon);
    let w = worked_td();
    let w_hits = converged_fraction(&td_as_sa_problem(&w).unwrap(), 0.05 * Norm::Euclidean.of(&w.r_star), horizon);
    let secs = start.elapsed().as_secs_f64();
    let pass = q_hits >= 95 && td_hits >= 95 && secs < 300.0;
    line(
        5,
        "convergence at T = 1e5, harmonic b = 1",
        pass,
        &format!(
            "one-state Q-learning {q_hits}/100, TD (gamma 0.2) {td_hits}/100; \
             for reference 2x2 Q-learning {q22_hits}/100, worked TD {w_hits}/100; {secs:.1}s"
        ),
    );
    assert!(pass);
}

#[test]
fn c6_tail_domination() {
    let p = SyntheticSpec::default().build().unwrap();
    let sch = StepSchedule::harmonic(2.0).unwrap();
    let x0 = vec![2.0, 2.0];
    let mut inputs = BoundInputs::new(x0.clone());
    inputs.n_samples = 2000;
    let report = BoundReport::build(&p, &sch, &inputs).unwrap();
    let deltas = vec![0.02, 0.05, 0.1, 0.2];
    let calib = Campaign { deltas: deltas.clone(), n_trajectories: 400, horizon: 1500, seed: 6001, x0: x0.clone(), y0: 0 };
    let cal = calibrate_d(&report, &p, &calib).unwrap();
    let report = report.with_d(cal.d);
    // A different master seed gives a disjoint set of streams.
    let eval = Campaign { n_trajectories: 1000, seed: 6002, ..calib };
    let dom = envelope_domination(&report, &p, &eval).unwrap();
    let detail: Vec<String> = dom
        .deltas
        .iter()
        .zip(&dom.violations)
        .zip(&dom.worst_excess)
        .map(|((d, v), e)| format!("delta {d}: {v} violations, worst excess {e:.3e}"))
        .collect();
    line(
        6,
        "failure bound dominates on 1000 fresh runs",
        dom.passed,
        &format!("D = {:.4e} calibrated on 400 runs; {}", cal.d.value, detail.join("; ")),
    );
    assert!(dom.passed);
}

#[test]
fn c7_schedule_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random_schedule = |rng: &mut ChaCha8Rng| {
        if rng.random::<bool>() {
            StepSchedule::harmonic(rng.random_range(0.5..5.0)).unwrap()
        } else {
            StepSchedule::power(rng.random_range(0.5..3.0), rng.random_range(0.55..1.0)).unwrap()
        }
    };
    let mut tele = 0.0f64;
    for _ in 0..200 {
        let sch = random_schedule(&mut rng);
        let n0 = sch.certify_n().unwrap() + rng.random_range(0..100);
        let m = n0 + rng.random_range(0..3000);
        let table = sch.precompute(m + 2);
        let mut total = table.chi(m, n0);
        for k in n0..=m {
            total += table.chi(m, k + 1) * sch.a(k);
        }
        tele = tele.max((total - 1.0).abs());
    }
    let (mut violations, mut worst) = (0usize, 0.0f64);
    let schedules: Vec<StepSchedule> = (0..20).map(|_| random_schedule(&mut rng)).collect();
    for t in 0..10_000 {
        let sch = &schedules[t % schedules.len()];
        let n0 = sch.certify_n().unwrap().max(1) + rng.random_range(0..500);
        let n = n0 + rng.random_range(0..5000);
        let m = rng.random_range(n0..=n);
        let lhs = sch.a(m) * sch.chi(n, m + 1);
        let rhs = sch.d3 * 2f64.powf(sch.d1) * sch.beta(n0, n).unwrap();
        worst = worst.max(lhs / rhs);
        violations += (lhs > rhs) as usize;
    }
    let pass = tele <= 1e-12 && violations == 0;
    line(
        7,
        "schedule algebra",
        pass,
        &format!("telescoping error {tele:.2e} over 200 schedules; discount bound {violations} violations in 1e4 triples (max ratio {worst:.4})"),
    );
    assert!(pass);
}

#[test]
fn c8_stitching() {
    let p = SyntheticSpec::default().build().unwrap();
    let sch = StepSchedule::harmonic(2.0).unwrap();
    let mut inputs = BoundInputs::new(vec![2.0, 2.0]);
    inputs.n_samples = 1000;
    inputs.d = Some(Tagged::declared(5.0));
    let report = BoundReport::build(&p, &sch, &inputs).unwrap();
    let delta = 0.01;
    let mut pass = true;
    let mut parts = Vec::new();
    for &(c, g, nu, k_breve, eps_mult) in &[
        (1.0, 0.5, 0.02, 1.0, 2.0),
        (10.0, 1.0, 0.05, 0.5, 5.0),
        (0.3, 2.0, 0.1, 2.0, 1.5),
        (50.0, 0.8, 0.01, 1.0, 3.0),
    ] {
        let eps = eps_mult * delta / (1.0 - report.alpha.value);
        let ups = move |n: usize| c / (n as f64).powf(g);
        let st = stitch(&report, &ups, &StitchRequest { k_breve, nu, eps, delta, max_n0: 1 << 40 }).unwrap();
        let moment_ok = ups(st.n0) / (k_breve * k_breve) <= nu / 2.0;
        let tail_ok = st.tail_value < nu / 2.0;
        let env = envelope_curve(&report.schedule, report.alpha.value, report.c1.value, st.n0, delta, st.n1, k_breve).unwrap();
        let before = |n: usize| envelope_curve(&report.schedule, report.alpha.value, report.c1.value, st.n0, delta, n, k_breve).unwrap();
        let env_ok = env <= eps && st.n1 >= st.n0 && (st.n1 == st.n0 || before(st.n1 - 1) > eps);
        let closed = chebyshev_n0_power(c, g, nu, k_breve);
        let closed_ok = st.n0 as f64 >= closed;
        pass &= moment_ok && tail_ok && env_ok && closed_ok;
        parts.push(format!("(c={c}, Gamma={g}) n0={} >= {closed:.1}, n1={}", st.n0, st.n1));
    }
    line(8, "stitching re-evaluation", pass, &parts.join("; "));
    assert!(pass);
}
