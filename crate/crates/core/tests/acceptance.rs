//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use dged::analysis::{
    audit_sigma_inequality, detailed_balance_residual, equilibrium_from_mass, lyapunov_v, scan_superadditivity, truncation_convergence,
    SweepSetup,
};
use dged::fluxes::{flux_breakdown, rhs, rhs_enumeration_oracle, weighted_moment_rate};
use dged::integrate::{conservation_drift, integrate};
use dged::kernels::{builtin_kernels, certify_bound, make_coagfrag_kernel, make_edg_kernel};
use dged::state::build_initial;
use dged::{BalanceProfile, BoundCertificate, ConcentrationState, InitialShape, InitialSpec, IntegratorConfig, QWeights, RateKernel, SigmaFunction, Variant, WeightSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 0x5eed_d6ed;
const STATES_PER_CONFIG: usize = 100;
const SIZES: [usize; 4] = [2, 4, 8, 16];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, variant: Variant) -> ConcentrationState {
    let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
    let values = (0..=n)
        .map(|_| if rng.gen_bool(0.15) { 0.0 } else { scale * rng.gen::<f64>() })
        .collect();
    ConcentrationState::new(values, 0.0, variant).unwrap()
}

/// Per-index sum of the magnitudes of every reaction contribution, enumerated directly.
fn gross_scale(kernel: &RateKernel, c: &[f64]) -> Vec<f64> {
    let n = c.len() - 1;
    let mut g = vec![0.0; n + 1];
    for k in 1..=n {
        for i in k..=n {
            for j in 0..=n - k {
                let r = (kernel.rate(i, j, k) * c[i] * c[j]).abs();
                g[i] += r;
                g[j] += r;
                g[i - k] += r;
                g[j + k] += r;
            }
        }
    }
    g
}

fn for_each_fixture(mut f: impl FnMut(&RateKernel, &ConcentrationState, &mut ChaCha8Rng)) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for kernel in builtin_kernels() {
        for variant in [Variant::Isolated, Variant::NonIsolated] {
            for n in SIZES {
                for _ in 0..STATES_PER_CONFIG {
                    let s = random_state(&mut rng, n, variant);
                    f(&kernel, &s, &mut rng);
                }
            }
        }
    }
}

fn oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut failure = None;
    for_each_fixture(|kernel, s, _| {
        let fast = rhs(kernel, s);
        let slow = rhs_enumeration_oracle(kernel, s);
        let gross = gross_scale(kernel, s.values());
        for i in 0..fast.len() {
            let diff = (fast[i] - slow[i]).abs();
            let rel = if gross[i] == 0.0 {
                if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                diff / gross[i]
            };
            worst = worst.max(rel);
            if rel > 1e-12 && failure.is_none() {
                failure = Some(format!("{} {:?} N={} i={i}: {} vs {}", kernel.name(), s.variant(), s.n(), fast[i], slow[i]));
            }
        }
        cases += 1;
    });
    match failure {
        None => outcome(true, format!("{cases} states, max relative deviation {worst:.2e}")),
        Some(f) => outcome(false, f),
    }
}

fn weighted_moment_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut failure = None;
    for_each_fixture(|kernel, s, rng| {
        let n = s.n();
        let g = WeightSequence::new((0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let d = rhs(kernel, s);
        let projected: f64 = g.values().iter().zip(&d).map(|(gi, di)| gi * di).sum();
        let direct = weighted_moment_rate(kernel, s, &g).unwrap();
        let gross = gross_scale(kernel, s.values());
        let scale: f64 = g.values().iter().map(|x| x.abs()).sum::<f64>() * gross.iter().sum::<f64>();
        let diff = (projected - direct).abs();
        let rel = if scale == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / scale
        };
        worst = worst.max(rel);
        if rel > 1e-11 && failure.is_none() {
            failure = Some(format!("{} {:?} N={n}: {projected} vs {direct}", kernel.name(), s.variant()));
        }
        cases += 1;
    });
    match failure {
        None => outcome(true, format!("{cases} states, max relative deviation {worst:.2e}")),
        Some(f) => outcome(false, f),
    }
}

fn conservation() -> Outcome {
    let kernel = RateKernel::constant(1.0);
    let times: Vec<f64> = (0..=20).map(|k| 0.5 * k as f64).collect();
    let config = IntegratorConfig::with_samples(times);
    let spec = InitialSpec::new(InitialShape::Monodisperse { size: 1, amount: 1.0 }, 64);

    let s0 = build_initial(&spec, Variant::Isolated, None).unwrap();
    let traj = integrate(&kernel, &s0, &config).unwrap();
    let (d0, d1) = conservation_drift(&traj);

    let s0 = build_initial(&spec, Variant::NonIsolated, Some(1.0)).unwrap();
    let traj = integrate(&kernel, &s0, &config).unwrap();
    let (_, nd1) = conservation_drift(&traj);
    let at_one = traj.samples.iter().find(|s| s.state.time() == 1.0).unwrap();
    let number_change = (at_one.moments.p0 - traj.samples[0].moments.p0).abs();

    let passed = d0 <= 1e-8 && d1 <= 1e-8 && nd1 <= 1e-8 && number_change > 1e-3;
    outcome(
        passed,
        format!("isolated drift P0 {d0:.2e} P1 {d1:.2e}; non-isolated drift P1 {nd1:.2e}, |ΔP0(1)| {number_change:.3e}"),
    )
}

fn coagulation_reduction() -> Outcome {
    let kernel = make_coagfrag_kernel(|_, _| 2.0, |_, _| 0.0, 1.0).unwrap();
    let spec = InitialSpec::new(InitialShape::Monodisperse { size: 1, amount: 1.0 }, 128);
    let s0 = build_initial(&spec, Variant::NonIsolated, Some(1.0)).unwrap();
    let traj = integrate(&kernel, &s0, &IntegratorConfig::with_samples(vec![1.0])).unwrap();
    let c = traj.final_state().values();
    let t: f64 = 1.0;
    let worst = (1..=20)
        .map(|k| (c[k] - t.powi(k as i32 - 1) / (1.0 + t).powi(k as i32 + 1)).abs())
        .fold(0.0_f64, f64::max);
    outcome(worst <= 1e-4, format!("max |c_k(1) - 2^-(k+1)| over k <= 20: {worst:.2e}"))
}

fn certificates() -> Outcome {
    let cap = 30;
    let coag_additive = make_coagfrag_kernel(|i, j| (i + j) as f64, |_, _| 0.5, 2.0).unwrap();
    let cases = [
        (
            "constant",
            RateKernel::constant(1.0),
            BoundCertificate::new(2.0, 1.0, QWeights::InverseProduct, None).unwrap(),
        ),
        (
            "edg K=ij",
            make_edg_kernel(|i, j| (i * j) as f64),
            BoundCertificate::new(1.0, 1.0, QWeights::SingleExchange, None).unwrap(),
        ),
        (
            "coag-frag a=i+j",
            coag_additive,
            BoundCertificate::new(1.0, 1.0, QWeights::WholeCluster, None).unwrap(),
        ),
    ];
    let mut parts = Vec::new();
    let mut passed = true;
    for (label, kernel, cert) in cases {
        let report = certify_bound(&kernel, &cert, cap);
        passed &= report.passed();
        parts.push(format!("{label}: {} checks, {} violations", report.checks, report.violations.len()));
    }
    outcome(passed, parts.join("; "))
}

fn sigma_audits() -> Outcome {
    let mut parts = Vec::new();
    let mut passed = true;
    for p in [1.5, 2.0] {
        let report = audit_sigma_inequality(&SigmaFunction::power(p).unwrap(), 40);
        passed &= report.passed();
        parts.push(format!("x^{p}: {} checks, {} violations", report.checked, report.violations.len()));
    }
    let scan = scan_superadditivity(&SigmaFunction::power(1.5).unwrap(), 0.5, 256);
    passed &= scan.m0 <= 64;
    parts.push(format!("eta = {} valid from M0 = {} up to p = {}", scan.eta, scan.m0, scan.p_max));
    outcome(passed, parts.join("; "))
}

fn equilibrium_and_lyapunov() -> Outcome {
    let kernel = RateKernel::constant(1.0);
    let profile = BalanceProfile::ones(10);
    let residual = detailed_balance_residual(&kernel, &profile);
    let mut passed = residual.max == 0.0;

    let mut worst_stationarity: f64 = 0.0;
    for rho in [0.1, 1.0, 3.0, 20.0] {
        let eq = equilibrium_from_mass(&profile, rho).unwrap();
        let state = eq.induced_state(Variant::Isolated);
        let d = rhs(&kernel, &state);
        let scale = flux_breakdown(&kernel, &state).max_magnitude();
        let norm = d.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        worst_stationarity = worst_stationarity.max(norm / scale);
    }
    passed &= worst_stationarity <= 1e-12;

    let n = 16;
    let o = BalanceProfile::ones(n);
    let s0 = build_initial(
        &InitialSpec::new(
            InitialShape::Explicit {
                values: (0..=n).map(|i| 1.0 / ((1 + i) * (1 + i)) as f64).collect(),
            },
            n,
        ),
        Variant::Isolated,
        None,
    )
    .unwrap();
    let times: Vec<f64> = (0..=50).map(|k| 0.1 * k as f64).collect();
    let traj = integrate(&kernel, &s0, &IntegratorConfig::with_samples(times)).unwrap();
    let v: Vec<f64> = traj.samples.iter().map(|s| lyapunov_v(&s.state, &o).unwrap()).collect();
    let tol = 1e-8 * v[0].abs();
    let worst_increase = v.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let positive = traj.samples.iter().all(|s| s.state.values().iter().all(|&x| x > 0.0));
    passed &= worst_increase <= tol && positive && v[v.len() - 1] < v[0];

    outcome(
        passed,
        format!(
            "residual {:e}; rhs/scale at equilibria {worst_stationarity:.2e}; V {:.6} -> {:.6}, largest increment {worst_increase:.2e}",
            residual.max,
            v[0],
            v[v.len() - 1]
        ),
    )
}

fn truncation_sweep() -> Outcome {
    let setup = SweepSetup {
        shape: InitialShape::Monodisperse { size: 1, amount: 1.0 },
        variant: Variant::Isolated,
        bath: None,
    };
    let n_list = [16, 32, 64];
    let table = truncation_convergence(&RateKernel::constant(1.0), &setup, &n_list, &IntegratorConfig::with_samples(vec![1.0])).unwrap();
    if !table.failures.is_empty() {
        return outcome(false, format!("failed truncations: {:?}", table.failures));
    }
    let mut passed = true;
    let mut worst_ratio: f64 = 0.0;
    for i in 0..=8 {
        let d32 = table.value(i, 1.0, 32).and_then(|r| r.delta_prev).unwrap();
        let d64 = table.value(i, 1.0, 64).and_then(|r| r.delta_prev).unwrap();
        passed &= d64 < d32;
        worst_ratio = worst_ratio.max(d64 / d32);
    }
    outcome(passed, format!("max over i <= 8 of delta(64)/delta(32): {worst_ratio:.3e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("oracle equivalence", oracle_equivalence, Duration::from_secs(30)),
        ("weighted-moment identity", weighted_moment_identity, Duration::from_secs(30)),
        ("conservation", conservation, Duration::from_secs(60)),
        ("coagulation reduction", coagulation_reduction, Duration::from_secs(60)),
        ("kernel certificates", certificates, Duration::from_secs(5)),
        ("sigma inequality audits", sigma_audits, Duration::from_secs(5)),
        ("equilibrium and Lyapunov decrease", equilibrium_and_lyapunov, Duration::from_secs(60)),
        ("truncation convergence", truncation_sweep, Duration::from_secs(120)),
    ];
    let mut failed = 0;
    for (index, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let ok = result.passed && in_time;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {} {}: {} ({}; {:.2}s of {}s){}",
            index + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { " [over time budget]" }
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
