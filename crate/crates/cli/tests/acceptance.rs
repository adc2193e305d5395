//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The Monte-Carlo criteria run full study cells (N = 20,000, 500
//! replications, fixed seed) and share them through a cache, so each cell
//! is simulated once.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use npsurvey::estimators::{aipw_combine, hajek_ipw, weighted_mean};
use npsurvey::fitting::{el_solve, fit_outcome_mle, fit_theta_pml, pseudo_loglik, pseudo_score, ElOptions};
use npsurvey::model::{
    conditional_density, conditional_mean, conditional_mean_grads, cumulant, outcome_density, outcome_loglik,
    outcome_score, participation_prob, pi_marginal,
};
use npsurvey::simulation::{
    draw_poisson_sample, draw_srswor, generate_population, run_study, substream, MetricRow, MetricsTable,
    PopulationSpec, StreamRole, StudyConfig,
};
use npsurvey::variance::{pairwise_variance, srswor_variance};
use npsurvey::{Covariates, EstimatorKind, Family, FitOptions, Theta, Xi};
use npsurvey_cli::parse_json_report;
use rand::Rng;

const REPS: usize = 500;
const SEED: u64 = 1;

struct Verdict {
    pass: bool,
    detail: String,
}

struct Cells {
    tables: BTreeMap<(usize, usize, i32), MetricsTable>,
}

impl Cells {
    /// The cell `(E(n_A), n_B, γ)`; calibration runs only where NMR is checked.
    fn get(&mut self, e_na: usize, n_b: usize, gamma: f64) -> &MetricsTable {
        let key = (e_na, n_b, (gamma * 10.0).round() as i32);
        self.tables.entry(key).or_insert_with(|| {
            let start = Instant::now();
            let config = StudyConfig {
                spec: PopulationSpec::table1(e_na, gamma).expect("standard setting"),
                reps: REPS,
                n_b,
                estimators: EstimatorKind::ALL
                    .into_iter()
                    .filter(|k| *k != EstimatorKind::El)
                    .collect(),
                threads: 0,
                seed: SEED,
                calibration: (e_na, n_b, gamma) == (500, 1000, 0.8),
                ..StudyConfig::default()
            };
            let table = run_study(&config).expect("study runs");
            eprintln!(
                "  [cell ({e_na}, {n_b}, {gamma}) done in {:.1} s]",
                start.elapsed().as_secs_f64()
            );
            table
        })
    }
}

fn metrics(table: &MetricsTable, kind: EstimatorKind) -> &MetricRow {
    table
        .estimator(kind)
        .and_then(|e| e.metrics.as_ref())
        .unwrap_or_else(|| panic!("no metrics for {kind}"))
}

fn criterion1() -> Verdict {
    let targets = [((500, 0.8), 0.58), ((2000, 0.8), 0.57), ((500, -0.8), 0.34), ((2000, -0.8), 0.35)];
    let mut pass = true;
    let mut parts = Vec::new();
    for ((e_na, gamma), target) in targets {
        let pop = generate_population(&PopulationSpec::table1(e_na, gamma).unwrap()).unwrap();
        let ok = (pop.mu0 - target).abs() <= 0.02;
        pass &= ok;
        parts.push(format!("α={} mean(y)={:.4} (target {target} ± 0.02)", pop.spec.alpha, pop.mu0));
    }
    Verdict {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion2(cells: &mut Cells) -> Verdict {
    let table = cells.get(2000, 2000, 0.8);
    let pl = table.theta_method("pl").expect("pl metrics");
    let rrmse_ref = [0.09, 0.15, 0.09, 0.51];
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, p) in pl.params.iter().enumerate() {
        let m = p.metrics.as_ref().expect("pl parameter metrics");
        let rb_limit = if k == 3 { 8.0 } else { 5.0 };
        let ok = m.pct_rb.abs() <= rb_limit && (m.rrmse - rrmse_ref[k]).abs() <= 0.05;
        pass &= ok;
        parts.push(format!(
            "{} %RB={:.2} (|·|≤{rb_limit}) RRMSE={:.3} (ref {})",
            p.name, m.pct_rb, m.rrmse, rrmse_ref[k]
        ));
    }
    let nmr = cells
        .get(500, 1000, 0.8)
        .theta_method("cal")
        .expect("calibration metrics")
        .nmr;
    let nmr_ok = (420..=480).contains(&nmr);
    pass &= nmr_ok;
    parts.push(format!("CAL NMR at (500,1000,0.8) = {nmr}/{REPS} (range 420..=480)"));
    Verdict {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion3(cells: &mut Cells) -> Verdict {
    let biased = [EstimatorKind::Naive, EstimatorKind::Reg2, EstimatorKind::Ipw2, EstimatorKind::Dr2];
    let pos: Vec<f64> = {
        let t = cells.get(500, 1000, 0.8);
        EstimatorKind::ALL
            .iter()
            .filter(|k| **k != EstimatorKind::El)
            .map(|k| metrics(t, *k).pct_rb)
            .collect()
    };
    let neg: Vec<f64> = {
        let t = cells.get(500, 1000, -0.8);
        EstimatorKind::ALL
            .iter()
            .filter(|k| **k != EstimatorKind::El)
            .map(|k| metrics(t, *k).pct_rb)
            .collect()
    };
    let idx = |k: EstimatorKind| EstimatorKind::ALL.iter().position(|x| *x == k).unwrap();
    let naive = pos[idx(EstimatorKind::Naive)];
    let ipw2 = pos[idx(EstimatorKind::Ipw2)];
    let mut pass = (-55.0..=-46.0).contains(&naive) && (-27.0..=-17.0).contains(&ipw2);
    let mut parts = vec![
        format!("naive %RB={naive:.2} [−55,−46]"),
        format!("ipw2 %RB={ipw2:.2} [−27,−17]"),
    ];
    for kind in EstimatorKind::PROPOSED {
        let (p, n) = (pos[idx(kind)], neg[idx(kind)]);
        pass &= p.abs() <= 4.0 && n.abs() <= 4.0;
        parts.push(format!("{kind} %RB γ=0.8: {p:.2}, γ=−0.8: {n:.2} (|·|≤4)"));
    }
    let flips: Vec<String> = biased
        .iter()
        .map(|k| {
            let (p, n) = (pos[idx(*k)], neg[idx(*k)]);
            pass &= p * n < 0.0;
            format!("{k} {p:+.1}/{n:+.1}")
        })
        .collect();
    parts.push(format!("sign flip {}", flips.join(", ")));
    Verdict {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion4(cells: &mut Cells) -> Verdict {
    let se_ref = [0.054, 0.066, 0.057];
    let mut pass = true;
    let mut parts = Vec::new();
    for gamma in [0.8, -0.8] {
        let table = cells.get(2000, 2000, gamma);
        for (k, kind) in EstimatorKind::PROPOSED.into_iter().enumerate() {
            let m = metrics(table, kind);
            let (se, sd) = (m.se.unwrap(), m.sd.unwrap());
            let ratio = se / sd;
            let mut ok = (ratio - 1.0).abs() <= 0.15;
            let mut text = format!("γ={gamma} {kind} SE/SD={ratio:.3}");
            if gamma > 0.0 {
                ok &= (se - se_ref[k]).abs() <= 0.01;
                text.push_str(&format!(" SE={se:.4} (ref {} ± 0.01)", se_ref[k]));
            }
            pass &= ok;
            parts.push(text);
        }
    }
    Verdict {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion5(cells: &mut Cells) -> Verdict {
    let reference = [
        ((2000, 1000, 0.8), [94.2, 94.0, 94.4]),
        ((2000, 1000, -0.8), [95.0, 95.4, 94.6]),
        ((2000, 2000, 0.8), [92.8, 94.4, 94.2]),
        ((2000, 2000, -0.8), [94.4, 94.0, 94.4]),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for ((e_na, n_b, gamma), paper) in reference {
        let table = cells.get(e_na, n_b, gamma);
        let cps: Vec<String> = EstimatorKind::PROPOSED
            .iter()
            .zip(paper)
            .map(|(kind, p)| {
                let cp = 100.0 * metrics(table, *kind).cp.unwrap();
                let ok = (cp - p).abs() <= 2.5;
                pass &= ok;
                format!("{kind} {cp:.1}{}", if ok { "" } else { "✗" })
            })
            .collect();
        parts.push(format!("({e_na},{n_b},{gamma}) {} vs ref {paper:?} ± 2.5", cps.join(" ")));
    }
    for (n_b, gamma) in [(1000, 0.8), (1000, -0.8), (2000, 0.8), (2000, -0.8)] {
        let table = cells.get(500, n_b, gamma);
        let cps: Vec<String> = EstimatorKind::PROPOSED
            .iter()
            .map(|kind| {
                let cp = 100.0 * metrics(table, *kind).cp.unwrap();
                let ok = (88.0..=95.0).contains(&cp);
                pass &= ok;
                format!("{kind} {cp:.1}{}", if ok { "" } else { "✗" })
            })
            .collect();
        parts.push(format!("(500,{n_b},{gamma}) {} in [88,95]", cps.join(" ")));
    }
    Verdict {
        pass,
        detail: parts.join("; "),
    }
}

/// Central differences with step `h·max(1, |v_k|)`.
fn fd(f: impl Fn(&[f64]) -> f64, v: &[f64], h: f64) -> Vec<f64> {
    (0..v.len())
        .map(|k| {
            let step = h * v[k].abs().max(1.0);
            let (mut up, mut dn) = (v.to_vec(), v.to_vec());
            up[k] += step;
            dn[k] -= step;
            (f(&up) - f(&dn)) / (2.0 * step)
        })
        .collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

struct Check {
    name: &'static str,
    worst: f64,
    limit: f64,
}

fn criterion6() -> Verdict {
    let start = Instant::now();
    let mut rng = substream(2024, 0, StreamRole::Fixture);
    let schema = PopulationSpec::schema();
    let mut checks = Vec::new();

    // model identities and derivative checks at random points
    let (mut ident, mut grads, mut convex) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..300 {
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..3.0)];
        let cx = Covariates::new(&x, &schema).unwrap();
        let t = Theta::new(
            rng.random_range(-3.0..3.0),
            vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            rng.random_range(-2.0..2.0),
        );
        let coef: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let xi = if i % 2 == 0 {
            Xi::bernoulli(coef)
        } else {
            Xi::gaussian(coef, rng.random_range(0.2..2.0)).unwrap()
        };
        let c = cumulant(cx, t.gamma, &xi);
        ident = ident.max(cumulant(cx, 0.0, &xi).value.abs());
        convex = convex.max(-c.d2_gamma);
        if xi.family() == Family::BernoulliLogistic {
            let (p0, p1) = (conditional_density(0.0, cx, &t, &xi), conditional_density(1.0, cx, &t, &xi));
            let pi = pi_marginal(cx, &t, &xi);
            let mix = p0 * participation_prob(cx, 0.0, &t) + p1 * participation_prob(cx, 1.0, &t);
            ident = ident.max((p0 + p1 - 1.0).abs()).max((pi - mix).abs() / pi);
            for (y, py) in [(0.0, p0), (1.0, p1)] {
                let f = outcome_density(y, cx, &xi);
                ident = ident.max((f - py * participation_prob(cx, y, &t) / pi).abs() / f);
            }
        }
        let d1 = fd(|g| cumulant(cx, g[0], &xi).value, &[t.gamma], 1e-5);
        grads = grads.max(rel(&[c.d_gamma], &d1));
        let (g_theta, g_xi) = conditional_mean_grads(cx, &t, &xi);
        let fam = xi.family();
        let fd_t = fd(|v| conditional_mean(cx, &Theta::from_slice(v), &xi), t.to_vector().as_slice(), 1e-6);
        let fd_x = fd(
            |v| conditional_mean(cx, &t, &Xi::from_slice(fam, v).unwrap()),
            xi.to_vector().as_slice(),
            1e-6,
        );
        grads = grads.max(rel(g_theta.as_slice(), &fd_t)).max(rel(g_xi.as_slice(), &fd_x));
        let y = if fam == Family::BernoulliLogistic { f64::from(i % 4 == 1) } else { rng.random_range(-1.0..2.0) };
        let score = outcome_score(cx, y, &xi);
        let fd_s = fd(|v| outcome_loglik(cx, y, &Xi::from_slice(fam, v).unwrap()), xi.to_vector().as_slice(), 1e-6);
        grads = grads.max(rel(score.as_slice(), &fd_s));
    }
    checks.push(Check {
        name: "model identities",
        worst: ident,
        limit: 1e-10,
    });
    checks.push(Check {
        name: "cumulant convexity (−c'')",
        worst: convex,
        limit: 0.0,
    });

    // pseudo-likelihood score and stationarity on study samples
    let mut stationarity = 0.0f64;
    for (e_na, gamma) in [(500, 0.8), (2000, 0.8), (500, -0.8), (2000, -0.8)] {
        let pop = generate_population(&PopulationSpec::table1(e_na, gamma).unwrap()).unwrap();
        for rep in 0..3 {
            let (a, _) = draw_poisson_sample(&pop, &pop.theta_true, &mut substream(77, rep, StreamRole::SampleA)).unwrap();
            let b = draw_srswor(&pop, 1000, &mut substream(77, rep, StreamRole::SampleB)).unwrap();
            let xi = fit_outcome_mle(&a, Family::BernoulliLogistic).unwrap().params;
            if rep == 0 {
                let t = &pop.theta_true;
                let s = pseudo_score(t, &xi, &a, &b).unwrap();
                let f = fd(|v| pseudo_loglik(&Theta::from_slice(v), &xi, &a, &b).unwrap(), t.to_vector().as_slice(), 1e-6);
                let scale = s.amax().max(1.0);
                let err = s.iter().zip(&f).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
                grads = grads.max(err);
            }
            let fit = fit_theta_pml(&xi, &a, &b, None, &FitOptions::default()).unwrap();
            if fit.converged {
                stationarity = stationarity.max(pseudo_score(&fit.params, &xi, &a, &b).unwrap().amax());
            }
        }
    }
    checks.push(Check {
        name: "FD gradients (rel)",
        worst: grads,
        limit: 1e-5,
    });
    checks.push(Check {
        name: "pseudo-score stationarity",
        worst: stationarity,
        limit: 1e-6,
    });

    // estimator identities
    let (mut aipw_dev, mut hajek_dev) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.random_range(1..30);
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0u8..2))).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let nb = rng.random_range(1..30);
        let d: Vec<f64> = (0..nb).map(|_| rng.random_range(0.5..50.0)).collect();
        let mb: Vec<f64> = (0..nb).map(|_| rng.random_range(0.0..1.0)).collect();
        aipw_dev = aipw_dev
            .max((aipw_combine(&y, &pi, &vec![0.0; n], &d, &vec![0.0; nb]) - hajek_ipw(&y, &pi).0).abs())
            .max((aipw_combine(&y, &pi, &y, &d, &mb) - weighted_mean(&d, &mb)).abs());
        let c = rng.random_range(0.01..1.0);
        let mean = y.iter().sum::<f64>() / n as f64;
        hajek_dev = hajek_dev.max((hajek_ipw(&y, &vec![c; n]).0 - mean).abs());
    }
    checks.push(Check {
        name: "AIPW degeneracy",
        worst: aipw_dev,
        limit: 0.0,
    });
    checks.push(Check {
        name: "Hájek constant propensity",
        worst: hajek_dev,
        limit: 1e-13,
    });

    // design variance: closed form against the double sum, and enumeration
    let mut dv = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..40);
        let big_n = n + rng.random_range(0..500);
        let g = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-10.0..10.0));
        let fast = srswor_variance(&g, n, big_n, big_n as f64).unwrap();
        let f = n as f64 / big_n as f64;
        let joint = (n * (n - 1)) as f64 / (big_n * (big_n - 1)) as f64;
        let slow = pairwise_variance(&g, |_| f, |_, _| joint, big_n as f64, 1);
        dv = dv.max((&fast - &slow).amax() / fast.amax().max(slow.amax()).max(f64::MIN_POSITIVE));
    }
    let population = [1.0, 2.0, 3.0, 4.0];
    let mut total = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            let g = DMatrix::from_column_slice(2, 1, &[population[i], population[j]]);
            total += srswor_variance(&g, 2, 4, 4.0).unwrap()[(0, 0)];
        }
    }
    dv = dv.max((total / 6.0 - 5.0 / 3.0).abs());
    checks.push(Check {
        name: "design variance O(n)=O(n²), N=4 enumeration",
        worst: dv,
        limit: 1e-12,
    });

    // EL feasibility at interior targets
    let mut el = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(3..40);
        let k = rng.random_range(1..4);
        let values = DMatrix::from_fn(n, k, |_, _| rng.random_range(-2.0..2.0));
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let target = DVector::from_fn(k, |j, _| (0..n).map(|i| w[i] * values[(i, j)]).sum::<f64>() / total);
        let out = el_solve(&values, &target, &ElOptions::default()).unwrap();
        let mut worst = (out.p.iter().sum::<f64>() - 1.0).abs();
        if out.p.iter().any(|p| *p <= 0.0) {
            worst = f64::INFINITY;
        }
        for j in 0..k {
            worst = worst.max(((0..n).map(|i| out.p[i] * values[(i, j)]).sum::<f64>() - target[j]).abs());
        }
        el = el.max(worst);
    }
    checks.push(Check {
        name: "EL feasibility",
        worst: el,
        limit: 1e-8,
    });

    // determinism of run_study across worker counts
    let study = |threads| StudyConfig {
        spec: PopulationSpec::table1(500, 0.8).unwrap(),
        reps: 4,
        n_b: 1000,
        threads,
        seed: 5,
        ..StudyConfig::default()
    };
    let base = serde_json::to_vec(&run_study(&study(1)).unwrap()).unwrap();
    let same = [0, 2, 3]
        .into_iter()
        .all(|t| serde_json::to_vec(&run_study(&study(t)).unwrap()).unwrap() == base);
    checks.push(Check {
        name: "run_study determinism (threads 1/0/2/3)",
        worst: if same { 0.0 } else { 1.0 },
        limit: 0.0,
    });

    let elapsed = start.elapsed().as_secs_f64();
    let pass = checks.iter().all(|c| c.worst <= c.limit) && elapsed < 60.0;
    let mut parts: Vec<String> = checks
        .iter()
        .map(|c| format!("{} {:.1e} (≤ {:.0e})", c.name, c.worst, c.limit))
        .collect();
    parts.push(format!("{elapsed:.1} s (< 60 s)"));
    Verdict {
        pass,
        detail: parts.join("; "),
    }
}

fn criterion7() -> Verdict {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let dir = tempfile::TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_npsurvey");
    let sim_out = dir.path().join("sim");
    let sim = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(fixtures.join("simulate_smoke.toml"))
        .arg("--out")
        .arg(&sim_out)
        .output()
        .unwrap();
    let mut sim_ok = sim.status.code() == Some(0);
    for cell in ["ena500_nb1000_gamma0.8", "ena2000_nb2000_gamma-0.8"] {
        sim_ok &= std::fs::read(sim_out.join(format!("{cell}.json")))
            .ok()
            .and_then(|b| serde_json::from_slice::<MetricsTable>(&b).ok())
            .is_some_and(|t| t.reps == 2);
    }
    let report = dir.path().join("report.json");
    let synthetic = fixtures.join("synthetic");
    let analyze = Command::new(bin)
        .arg("analyze")
        .arg("--sample-a")
        .arg(synthetic.join("sample_a.csv"))
        .arg("--sample-b")
        .arg(synthetic.join("sample_b.csv"))
        .arg("--config")
        .arg(synthetic.join("analysis.toml"))
        .arg("--out")
        .arg(&report)
        .arg("--quiet")
        .output()
        .unwrap();
    let parsed = std::fs::read(&report).ok().and_then(|b| parse_json_report(&b).ok());
    let analyze_ok = analyze.status.code() == Some(0)
        && parsed.as_ref().is_some_and(|r| r.estimates.len() == EstimatorKind::ALL.len());
    Verdict {
        pass: sim_ok && analyze_ok,
        detail: format!(
            "simulate exit {:?}, cell files valid {sim_ok}; analyze exit {:?}, report rows {}",
            sim.status.code(),
            analyze.status.code(),
            parsed.map_or(0, |r| r.estimates.len())
        ),
    }
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; listing is the
    // only one that changes behavior.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut cells = Cells {
        tables: BTreeMap::new(),
    };
    let mut failed = 0;
    let mut report = |n: u8, title: &str, v: Verdict| {
        println!("criterion {n} [{}] {title}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    report(1, "population means", criterion1());
    report(6, "property suites", criterion6());
    report(7, "end-to-end CLI", criterion7());
    report(2, "PL parameter recovery and NMR", criterion2(&mut cells));
    report(3, "bias structure", criterion3(&mut cells));
    report(4, "variance calibration", criterion4(&mut cells));
    report(5, "coverage", criterion5(&mut cells));
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
