//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//! Tolerances are pinned here and not read from presets.

use escape_cli::commands::{self, Artifacts, Outcome};
use escape_cli::config::RunConfig;
use escape_cli::presets::preset;
use escape_core::experiments::{variational_oracle, MarkovInstance};
use escape_core::linalg::EigenOptions;
use escape_core::maps::IntervalMap;
use escape_core::openmap::{Hole, HoleInterval};
use escape_core::potentials::{normalize, Potential};
use escape_core::ulam::escape_rate_spectral;
use serde_json::Value;
use std::time::{Duration, Instant};

type Command = fn(&RunConfig, &Artifacts) -> anyhow::Result<Outcome>;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn run(cmd: Command, name: &str) -> (Value, Duration) {
    let cfg = preset(name).expect("preset exists");
    let art = Artifacts::new(None, &cfg, rayon::current_num_threads()).expect("no output dir");
    let t = Instant::now();
    let out = cmd(&cfg, &art).unwrap_or_else(|e| panic!("{name}: {e:#}"));
    (out.summary["result"].clone(), t.elapsed())
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn counterexample() -> (bool, String, Duration) {
    let (r, dt) = run(commands::cmd_counterexample, "counterexample");
    let limit = f(&r["logistic_limit"]);
    let lo = f(&r["logistic_interval"][0]);
    let hi = f(&r["logistic_interval"][1]);
    let naive = f(&r["naive"]);
    let pass = (limit - 0.5).abs() <= 0.05 && !(lo..=hi).contains(&naive) && dt <= Duration::from_secs(300);
    (pass, format!("logistic limit {limit:.4} in [{lo:.4}, {hi:.4}], naive {naive} outside: {}", !(lo..=hi).contains(&naive)), dt)
}

fn periodic_limits() -> (bool, String, Duration) {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut total = Duration::ZERO;
    for (name, target, tol) in [("tent-z23", 0.5, 0.05), ("tent-z25", 0.75, 0.05), ("logistic-z34", 0.5, 0.08)] {
        let (r, dt) = run(commands::cmd_scaling, name);
        let limit = f(&r["extrapolated"]["limit"]);
        let ok = (limit - target).abs() <= tol && dt <= Duration::from_secs(300);
        pass &= ok;
        total += dt;
        parts.push(format!("{name} {limit:.4} (want {target} ± {tol}, {:.1} s)", dt.as_secs_f64()));
    }
    (pass, parts.join("; "), total)
}

fn aperiodic_limit() -> (bool, String, Duration) {
    let (r, dt) = run(commands::cmd_scaling, "aperiodic");
    let limit = f(&r["extrapolated"]["limit"]);
    let predicted = f(&r["predicted_limit"]);
    ((limit - 1.0).abs() <= 0.07 && predicted == 1.0, format!("limit {limit:.4} (want 1 ± 0.07), predicted {predicted}"), dt)
}

/// log ρ of the tent transfer matrix on surviving k-cylinders, by repeated
/// squaring with rescaling: log ρ = lim log‖M^(2^m)‖ / 2^m.
fn gelfand_log_radius(k: usize, hole: &[usize]) -> f64 {
    let n = 1usize << k;
    let mut m = vec![vec![0.0f64; n]; n];
    for j in (0..n).filter(|j| !hole.contains(j)) {
        let first = if j < n / 2 { 2 * j } else { 2 * (n - 1 - j) };
        for i in [first, first + 1].into_iter().filter(|i| !hole.contains(i)) {
            m[i][j] = 0.5;
        }
    }
    let mut log_scale = 0.0;
    let squarings = 48;
    for _ in 0..squarings {
        let mut sq = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for l in 0..n {
                if m[i][l] != 0.0 {
                    for j in 0..n {
                        sq[i][j] += m[i][l] * m[l][j];
                    }
                }
            }
        }
        let c = sq.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        if c == 0.0 {
            return f64::NEG_INFINITY;
        }
        sq.iter_mut().flatten().for_each(|v| *v /= c);
        log_scale = 2.0 * log_scale + c.ln();
        m = sq;
    }
    let norm = m.iter().map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max);
    (log_scale + norm.ln()) / 2f64.powi(squarings)
}

fn subsets(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for i in 0..n {
        let grown: Vec<Vec<usize>> =
            out.iter().filter(|s| s.len() < max).map(|s| s.iter().copied().chain([i]).collect()).collect();
        out.extend(grown);
    }
    out.retain(|s| !s.is_empty());
    out
}

fn markov_oracle() -> (bool, String, Duration) {
    let t0 = Instant::now();
    let map = IntervalMap::tent2();
    let pot = normalize(&Potential::geometric(1.0).unwrap(), &map, 1024).unwrap();
    let opts = EigenOptions { tol: 1e-12, max_iter: 200_000 };
    let (mut count, mut worst_rate, mut worst_var) = (0usize, 0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for k in 1..=4usize {
        let n = 1usize << k;
        for cyl in subsets(n, 3) {
            count += 1;
            let ivs = cyl.iter().map(|&c| HoleInterval::open(c as f64 / n as f64, (c + 1) as f64 / n as f64)).collect();
            let hole = Hole::from_intervals(ivs).unwrap();
            let exact = -gelfand_log_radius(k, &cyl);
            let dr = match escape_rate_spectral(&map, &pot, &hole, 1 << (k + 2), &opts) {
                Ok(est) if est.rate.is_infinite() && exact.is_infinite() => 0.0,
                Ok(est) => (est.rate - exact).abs(),
                Err(e) => {
                    failures.push(format!("k={k} {cyl:?}: spectral {e}"));
                    continue;
                }
            };
            let var = match variational_oracle(&MarkovInstance { map: map.clone(), t: 1.0, k, cylinders: cyl.clone() }) {
                Ok(r) => r.difference,
                Err(e) => {
                    failures.push(format!("k={k} {cyl:?}: variational {e}"));
                    continue;
                }
            };
            worst_rate = worst_rate.max(dr);
            worst_var = worst_var.max(var);
            if !(dr < 1e-6 && var < 1e-8) {
                failures.push(format!("k={k} {cyl:?}: rate diff {dr:e}, variational {var:e}"));
            }
        }
    }
    let dt = t0.elapsed();
    let mut detail = format!("{count} holes, max |rate diff| {worst_rate:.2e} (< 1e-6), max variational {worst_var:.2e} (< 1e-8)");
    if let Some(first) = failures.first() {
        detail.push_str(&format!("; {} failing, first {first}", failures.len()));
    }
    (failures.is_empty() && dt <= Duration::from_secs(120), detail, dt)
}

fn accim() -> (bool, String, Duration) {
    let (r, dt) = run(commands::cmd_accim, "accim-markov");
    let residual = f(&r["spectral"]["residual"]);
    let positive = r["positive_off_hole"].as_bool() == Some(true);
    let dist = f(&r["final_distance"]);
    let theta = f(&r["theta_hat"]);
    let pass = residual < 1e-9 && positive && dist < 1e-8 && theta < 1.0;
    (pass, format!("residual {residual:.1e}, positive {positive}, distance after 60 steps {dist:.1e}, theta {theta:.3}"), dt)
}

fn staircase() -> (bool, String, Duration) {
    let cfg = preset("staircase").unwrap();
    let (r, dt) = run(commands::cmd_staircase, "staircase");
    let max_dec = f(&r["max_decrease"]);
    let frac = f(&r["plateau_fraction"]);
    let monotone = max_dec <= 10.0 * cfg.solver.tol;
    let plateaus = r["plateaus"].as_u64().unwrap_or(0);
    let pass = monotone && plateaus > 0 && frac > 0.5;
    (pass, format!("max decrease {max_dec:.1e}, {plateaus} plateaus covering {frac:.4} of the grid (need > 0.5)"), dt)
}

fn hofbauer() -> (bool, String, Duration) {
    let (r, dt) = run(commands::cmd_hofbauer, "hofbauer-tent");
    let samples = r["semiconjugacy"]["samples"].as_u64().unwrap_or(0);
    let failures = r["semiconjugacy"]["failures"].as_u64().unwrap_or(u64::MAX);
    let markov = f(&r["markov_fraction"]);
    let alpha = -f(&r["tail_fit"]["slope"]);
    let r2 = f(&r["tail_fit"]["r2"]);
    let pass = samples >= 10_000 && failures == 0 && markov == 1.0 && alpha > 0.0 && r2 > 0.95 && dt <= Duration::from_secs(60);
    (pass, format!("semiconjugacy {failures}/{samples} failures, markov fraction {markov}, alpha {alpha:.3}, r2 {r2:.4}"), dt)
}

fn cross_method() -> (bool, String, Duration) {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut total = Duration::ZERO;
    for name in ["mc-logistic-left", "mc-tent-z23", "mc-tent-z25", "mc-logistic-z34"] {
        let (r, dt) = run(commands::cmd_escape, name);
        let z = f(&r["difference"]) / f(&r["mc_std_err"]);
        pass &= z <= 3.0 && r["monte_carlo"]["n_samples"].as_u64() == Some(1_000_000);
        total += dt;
        parts.push(format!("{name} {z:.2} SE"));
    }
    (pass, parts.join(", "), total)
}

fn main() {
    let only = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let criteria: [(&'static str, fn() -> (bool, String, Duration)); 8] = [
        ("counterexample logistic limit", counterexample),
        ("periodic scaling limits", periodic_limits),
        ("aperiodic scaling limit", aperiodic_limit),
        ("Markov cylinder oracle", markov_oracle),
        ("accim properties", accim),
        ("staircase plateaus", staircase),
        ("Hofbauer structure", hofbauer),
        ("Monte Carlo vs spectral", cross_method),
    ];
    let verdicts: Vec<Verdict> = criteria
        .iter()
        .filter(|(name, _)| only.as_deref().is_none_or(|o| name.contains(o)))
        .map(|(name, check)| {
            let (pass, detail, elapsed) = check();
            let v = Verdict { name, pass, detail, elapsed };
            println!(
                "{} {:32} {:7.1} s  {}",
                if v.pass { "PASS" } else { "FAIL" },
                v.name,
                v.elapsed.as_secs_f64(),
                v.detail
            );
            v
        })
        .collect();
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
