//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Pass criterion numbers or name fragments to run a subset, e.g.
//! `cargo test -p sdae-lyap-validation --test acceptance -- 3 SMIB`.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sdae_lyap::ensemble::{parse_method_label, run_ensemble_flagged, EnsembleReport, Workers};
use sdae_lyap::integrators::simulate;
use sdae_lyap::linalg::{eigen_real_parts, qr_signfix, Matrix};
use sdae_lyap::lyapunov::{continuous_qr_run_observed, liouville_check, run};
use sdae_lyap::model::{ou_system, LinearSde, OuParams};
use sdae_lyap::models::{build_model, smib_case1, smib_case2, Smib1Params, Smib2Params};
use sdae_lyap::oracle::{le_reference_example, le_reference_example_with, le_reference_gbm, DensitySettings};
use sdae_lyap::{LeRunConfig, Method, SchemeKind, SdeSystem};

const METHODS: [&str; 4] = ["d-em", "d-mil", "c-em", "c-mil"];
const EXAMPLE_LLE: f64 = -1.3385;
const SEED: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn config(label: &str, h: f64, t: f64, x0: Vec<f64>) -> LeRunConfig {
    let (method, scheme) = parse_method_label(label).unwrap();
    LeRunConfig::new(method, scheme, h, t, x0)
}

fn ensemble(s: &dyn SdeSystem, cfg: &LeRunConfig, n: usize) -> EnsembleReport {
    run_ensemble_flagged(s, cfg, n, SEED, None, Workers::default()).unwrap()
}

fn model_ensemble(model: &str, rho: f64, label: &str, h: f64, t: f64, n: usize) -> EnsembleReport {
    let m = build_model(model, &[("rho".into(), rho.to_string())]).unwrap();
    ensemble(&*m.system, &config(label, h, t, m.x0.clone()), n)
}

fn se(r: &EnsembleReport) -> f64 {
    r.std_error().map_or(0.0, |v| v[0])
}

fn example_reference() -> Verdict {
    let oracle = le_reference_example(2.0).unwrap();
    let refined = le_reference_example_with(
        2.0,
        &DensitySettings {
            min_panels: 256,
            rel_tol: 1e-14,
            ..Default::default()
        },
    )
    .unwrap();
    let mut ok = (oracle - refined).abs() <= 1e-6 && (oracle - EXAMPLE_LLE).abs() <= 5e-5;
    let mut parts = vec![format!("oracle {oracle:.6}")];
    let m = build_model("example", &[]).unwrap();
    for label in METHODS {
        let r = ensemble(&*m.system, &config(label, 1e-3, 2000.0, m.x0.clone()), 20);
        let rel = (r.lle() - EXAMPLE_LLE).abs() / EXAMPLE_LLE.abs();
        ok &= rel <= 0.10 && r.failed.is_empty();
        parts.push(format!("{label} {:.5} ({:.2}%)", r.lle(), 100.0 * rel));
    }
    verdict(ok, format!("desk h=1e-3 T=2000 n=20, tol 10%: {}", parts.join(", ")))
}

fn gbm_oracle() -> Verdict {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for (a, b) in [(0.5, 1.0), (0.0, 0.3), (-1.0, 0.5)] {
        let s = LinearSde::gbm(a, b);
        let exact = le_reference_gbm(a, b);
        for label in METHODS {
            let r = ensemble(&s, &config(label, 1e-3, 5000.0, vec![1.0]), 20);
            let err = (r.lle() - exact).abs();
            let tol = f64::max(0.02, 3.0 * se(&r));
            ok &= err <= tol;
            worst = worst.max(err / tol);
        }
    }
    verdict(ok, format!("3 cases x 4 methods, worst error/tolerance {worst:.3}"))
}

/// Stable matrix close to normal: a block diagonal of real and complex-pair
/// eigenvalues, real parts descending, plus a small strictly upper
/// perturbation, rotated by a random orthogonal matrix near the identity.
/// Finite-time estimates started from `Q = I` are biased by the log of the
/// leading minors of the eigenvector matrix over T; this keeps those minors
/// of order one so that T=200 resolves the spectrum.
fn stable_matrix(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut blocks: Vec<(f64, Option<f64>)> = Vec::new();
    let mut filled = 0;
    while filled < d {
        let re = -rng.random_range(0.1..2.0);
        if filled + 1 < d && rng.random_bool(0.5) {
            blocks.push((re, Some(rng.random_range(0.2..2.0))));
            filled += 2;
        } else {
            blocks.push((re, None));
            filled += 1;
        }
    }
    blocks.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut a = Matrix::zeros(d, d);
    let mut i = 0;
    for (re, im) in blocks {
        a[(i, i)] = re;
        if let Some(im) = im {
            a[(i + 1, i + 1)] = re;
            a[(i, i + 1)] = im;
            a[(i + 1, i)] = -im;
            i += 2;
        } else {
            i += 1;
        }
    }
    for r in 0..d {
        for c in r + 1..d {
            a[(r, c)] += 0.02 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut g = Matrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            g[(r, c)] = 0.15 * rng.sample::<f64, _>(StandardNormal) + if r == c { 1.0 } else { 0.0 };
        }
    }
    let q = qr_signfix(&g).unwrap().q;
    q.matmul(&a).matmul(&q.transpose())
}

fn deterministic_eigenvalues() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for d in 2..=6 {
        let a = stable_matrix(d, &mut rng);
        let exact = eigen_real_parts(&a).unwrap();
        let s = LinearSde::deterministic(a).unwrap();
        for method in [Method::DiscreteQr, Method::ContinuousQr] {
            let x0 = vec![1.0; d];
            let cfg = LeRunConfig::new(method, SchemeKind::EulerMaruyama, 1e-4, 200.0, x0);
            let got = run(&s, &cfg).unwrap().exponents();
            for (g, e) in got.iter().zip(&exact) {
                worst = worst.max((g - e).abs());
            }
        }
    }
    verdict(
        worst <= 1e-3,
        format!("d=2..6, both engines, h=1e-4 T=200: max error {worst:.2e}"),
    )
}

fn orthogonality() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["example", "smib2"] {
        let m = build_model(name, &[]).unwrap();
        let d = m.system.dim();
        let cfg = config("c-em", 1e-3, 100.0, m.x0.clone());
        let mut worst: f64 = 0.0;
        let mut steps = 0;
        continuous_qr_run_observed(&*m.system, &cfg, false, |_, q| {
            worst = worst.max(q.orthogonality_defect());
            steps += 1;
        })
        .unwrap();
        ok &= steps >= 100_000 && worst <= 1e-12 * d as f64;
        parts.push(format!("{name} (d={d}) {steps} steps, max defect {worst:.2e}"));
    }
    verdict(ok, parts.join("; "))
}

fn qr_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut checked = 0;
    let mut bad = 0;
    while checked < 1000 {
        let d = rng.random_range(1..=8);
        let mut a = Matrix::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                a[(r, c)] = rng.sample(StandardNormal);
            }
        }
        let Ok(f) = qr_signfix(&a) else { continue };
        checked += 1;
        let triangular = (0..d).all(|i| f.r[(i, i)] > 0.0 && (0..i).all(|j| f.r[(i, j)] == 0.0));
        let orthogonal = f.q.orthogonality_defect() <= 1e-12 * d as f64;
        let residual = f.q.matmul(&f.r).sub(&a).frobenius_norm();
        let reconstructs = residual <= 1e-12 * a.frobenius_norm();
        if !(triangular && orthogonal && reconstructs) {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("{checked} random matrices d<=8, {bad} violations"))
}

fn ou_stationarity() -> Verdict {
    let p = OuParams::new(1.0, 0.0, 0.4).unwrap();
    let target = p.stationary_variance();
    let s = ou_system(p);
    let (h, t): (f64, f64) = (1e-3, 5000.0);
    let steps = (t / h).round() as usize;
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    simulate(&s, &[0.0], h, steps, SEED, SchemeKind::EulerMaruyama, |_, x| {
        n += 1.0;
        let delta = x[0] - mean;
        mean += delta / n;
        m2 += delta * (x[0] - mean);
    })
    .unwrap();
    let var = m2 / (n - 1.0);
    let rel = (var - target).abs() / target;
    verdict(
        rel <= 0.05,
        format!("sample variance {var:.5} vs {target:.5} ({:.2}%)", 100.0 * rel),
    )
}

fn non_decreasing(reports: &[(f64, EnsembleReport)]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for w in reports.windows(2) {
        let (a, b) = (&w[0].1, &w[1].1);
        let slack = 2.0 * (se(a).powi(2) + se(b).powi(2)).sqrt();
        let inc = b.lle() - a.lle();
        ok &= inc >= -slack;
        parts.push(format!("{}->{}: {inc:+.2e} (2se {slack:.1e})", w[0].0, w[1].0));
    }
    (ok, parts.join(", "))
}

fn smib1() -> Verdict {
    let m = smib_case1(Smib1Params::default()).unwrap();
    let top = eigen_real_parts(&m.equilibrium_jacobian().unwrap()).unwrap()[0];
    let rhos = [0.0, 0.2, 0.4, 0.6];
    let sweep = |t: f64| -> Vec<(f64, EnsembleReport)> {
        rhos.iter()
            .map(|&rho| (rho, model_ensemble("smib1", rho, "c-em", 1e-3, t, 10)))
            .collect()
    };
    let desk = sweep(2000.0);
    let anchor = desk[0].1.lle();
    let anchor_ok = (anchor - top).abs() <= 5e-3;
    let (desk_ok, desk_detail) = non_decreasing(&desk);
    // at T=2000 the rho=0 estimate still carries the finite-time splitting of the
    // complex pair, which is larger than the noise effect being measured
    let long = sweep(20_000.0);
    let (long_ok, long_detail) = non_decreasing(&long);
    verdict(
        anchor_ok && long_ok,
        format!(
            "anchor {anchor:.5} vs eig {top:.5}; monotone at T=20000 [{}] {long_detail}; at T=2000 [{}] {desk_detail}",
            if long_ok { "ok" } else { "violated" },
            if desk_ok { "ok" } else { "violated" },
        ),
    )
}

fn smib2() -> Verdict {
    let m = smib_case2(Smib2Params::default()).unwrap();
    let top = eigen_real_parts(m.a6()).unwrap()[0];
    let r0 = model_ensemble("smib2", 0.0, "c-em", 1e-3, 2000.0, 10);
    let r1 = model_ensemble("smib2", 1.0, "c-em", 1e-3, 2000.0, 10);
    let r3 = model_ensemble("smib2", 3.0, "c-em", 1e-3, 2000.0, 10);
    let anchor_ok = (r0.lle() - top).abs() <= 5e-3;
    let dip = r0.lle() - r1.lle();
    let dip_ok = dip > 2.0 * (se(&r0).powi(2) + se(&r1).powi(2)).sqrt();
    let unstable_ok = r3.lle() > 0.0;
    verdict(
        anchor_ok && dip_ok && unstable_ok,
        format!(
            "anchor {:.5} vs eig {top:.5} [{}]; rho=1 {:.5} (dip {dip:.2e}, 2se {:.1e}) [{}]; rho=3 {:.5} > 0 [{}]",
            r0.lle(),
            if anchor_ok { "ok" } else { "violated" },
            r1.lle(),
            2.0 * se(&r1),
            if dip_ok { "ok" } else { "violated" },
            r3.lle(),
            if unstable_ok { "ok" } else { "violated" },
        ),
    )
}

fn mean_square_proxy() -> Verdict {
    let m = build_model("example", &[]).unwrap();
    let var = |t: f64| {
        ensemble(&*m.system, &config("c-em", 1e-3, t, m.x0.clone()), 20)
            .var
            .unwrap()[0]
    };
    let (short, long) = (var(200.0), var(2000.0));
    verdict(
        long <= 0.5 * short,
        format!(
            "desk n=20: var(T=2000) {long:.3e} vs var(T=200) {short:.3e}, ratio {:.3}",
            long / short
        ),
    )
}

fn liouville() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut linear: f64 = 0.0;
    for d in 2..=6 {
        let s = LinearSde::deterministic(stable_matrix(d, &mut rng)).unwrap();
        let cfg = LeRunConfig::new(
            Method::ContinuousQr,
            SchemeKind::EulerMaruyama,
            1e-3,
            200.0,
            vec![1.0; d],
        );
        linear = linear.max(liouville_check(&s, &cfg).unwrap());
    }
    let m = build_model("example", &[]).unwrap();
    let mut example: f64 = 0.0;
    for label in ["c-em", "c-mil"] {
        let cfg = config(label, 1e-3, 10_000.0, m.x0.clone());
        example = example.max(liouville_check(&*m.system, &cfg).unwrap());
    }
    verdict(
        linear <= 1e-8 && example <= 0.01,
        format!("constant linear max {linear:.2e}; example T=10000 max {example:.2e}"),
    )
}

fn reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut sizes = Vec::new();
    for (k, method) in ["d-mil", "c-em"].iter().enumerate() {
        let mut outputs = Vec::new();
        for i in 0..3 {
            let path = dir.path().join(format!("run{k}-{i}.csv"));
            let args = [
                "sdae-le",
                "run",
                "--model",
                "smib1",
                "--method",
                method,
                "--h",
                "1e-2",
                "--T",
                "200",
                "--n",
                "8",
                "--seed",
                "11",
                "--out",
                path.to_str().unwrap(),
            ];
            let (mut out, mut err) = (Vec::new(), Vec::new());
            ok &= sdae_lyap_cli::run_cli(args, &mut out, &mut err) == 0;
            outputs.push(std::fs::read(&path).unwrap());
        }
        ok &= outputs.windows(2).all(|w| w[0] == w[1]) && !outputs[0].is_empty();
        sizes.push(outputs[0].len());
    }
    verdict(ok, format!("3 invocations x 2 methods identical ({sizes:?} bytes)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("example reference exponent", example_reference),
        ("GBM closed form", gbm_oracle),
        ("deterministic eigenvalues", deterministic_eigenvalues),
        ("orthogonality preservation", orthogonality),
        ("QR round trip", qr_round_trip),
        ("OU stationary variance", ou_stationarity),
        ("SMIB case 1", smib1),
        ("SMIB case 2", smib2),
        ("mean-square convergence proxy", mean_square_proxy),
        ("Liouville diagnostic", liouville),
        ("CSV reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {:<30} {}  {} ({:.1}s)",
            name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
