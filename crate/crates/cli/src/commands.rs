use crate::config::{ConfigError, RunConfig};
use anyhow::{anyhow, Context};
use escape_core::experiments::{
    counterexample_ex, devil_staircase, dn_growth_check, linear_grid, scaling_limit, slow_approach_check,
    ConjugacyMcOptions, ScalingOptions,
};
use escape_core::hofbauer::{
    build_extension, check_semiconjugacy, expansion_diagnostic, first_return_scheme, make_cutset, markov_violations,
    transitive_component, trim, windows_avoid, CutSet, ReturnRule,
};
use escape_core::linalg::EigenOptions;
use escape_core::maps::{IntervalMap, MapKind};
use escape_core::openmap::{monte_carlo_escape, InitialMeasure};
use escape_core::potentials::{normalize, Potential};
use escape_core::ulam::{accim_density, conditional_evolve, snap_hole, UlamOperator};
use escape_core::VERSION;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// Result of one subcommand: the JSON summary and whether every gate held.
pub struct Outcome {
    pub summary: Value,
    pub pass: bool,
}

/// Writes artifacts stamped with the resolved config, version and thread count.
pub struct Artifacts {
    dir: Option<PathBuf>,
    config: Value,
    threads: usize,
}

impl Artifacts {
    pub fn new(dir: Option<&Path>, config: &RunConfig, threads: usize) -> anyhow::Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Artifacts { dir: dir.map(Path::to_path_buf), config: config.to_json(), threads })
    }

    fn header(&self) -> String {
        format!("# escape {VERSION}\n# threads: {}\n# config: {}\n", self.threads, self.config)
    }

    pub fn csv(&self, name: &str, body: &str) -> anyhow::Result<()> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            std::fs::write(&path, format!("{}{body}", self.header())).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }

    /// Plain-text export (graph files) with the same comment header.
    pub fn text(&self, name: &str, body: &str) -> anyhow::Result<()> {
        self.csv(name, body)
    }

    pub fn wrap(&self, command: &str, result: Value) -> Value {
        json!({
            "command": command,
            "version": VERSION,
            "threads": self.threads,
            "config": self.config,
            "result": result,
        })
    }

    pub fn json(&self, name: &str, value: &Value) -> anyhow::Result<()> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            let text = serde_json::to_string_pretty(value)?;
            std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn map_of(cfg: &RunConfig) -> anyhow::Result<IntervalMap> {
    Ok(IntervalMap::from_spec(&cfg.map)?)
}

fn potential_of(cfg: &RunConfig, map: &IntervalMap) -> anyhow::Result<Potential> {
    let raw = Potential::from_spec(&cfg.potential)?;
    Ok(normalize(&raw, map, cfg.solver.pressure_bins)?)
}

fn eigen_opts(cfg: &RunConfig) -> EigenOptions<f64> {
    EigenOptions { tol: cfg.solver.tol, max_iter: cfg.solver.max_iter }
}

fn default_measure(map: &IntervalMap) -> InitialMeasure {
    match map.kind() {
        MapKind::Logistic4 => InitialMeasure::AcipLogistic4,
        _ => InitialMeasure::Lebesgue,
    }
}

fn finish(art: &Artifacts, command: &str, result: Value, pass: bool) -> anyhow::Result<Outcome> {
    let mut result = result;
    result["pass"] = json!(pass);
    let summary = art.wrap(command, result);
    art.json("summary.json", &summary)?;
    Ok(Outcome { summary, pass })
}

pub fn cmd_escape(cfg: &RunConfig, art: &Artifacts) -> anyhow::Result<Outcome> {
    let map = map_of(cfg)?;
    let pot = potential_of(cfg, &map)?;
    let hole = cfg.hole.build()?;
    let est = escape_core::ulam::escape_rate_spectral(&map, &pot, &hole, cfg.solver.n, &eigen_opts(cfg))?;
    let measure = cfg.experiment.measure.unwrap_or_else(|| default_measure(&map));
    let e = &cfg.experiment;
    let mc = monte_carlo_escape(&map, &est.snapped, measure, e.n_samples, e.n_steps, e.seed)?;
    let diff = (mc.fit.rate - est.rate).abs();
    let agree = diff <= e.agreement_sigmas * mc.fit.std_err;
    art.csv("density.csv", &est.spectral.density_csv())?;
    art.csv("survivors.csv", &mc.csv())?;
    finish(
        art,
        "escape",
        json!({
            "snapped_hole": est.snapped,
            "n": est.n,
            "spectral": est.spectral.summary_json(),
            "spectral_rate": est.rate,
            "monte_carlo": mc.sidecar(),
            "mc_rate": mc.fit.rate,
            "mc_std_err": mc.fit.std_err,
            "difference": diff,
            "agree": agree,
        }),
        agree,
    )
}

pub fn cmd_scaling(cfg: &RunConfig, art: &Artifacts) -> anyhow::Result<Outcome> {
    let e = &cfg.experiment;
    let eps = e.eps_list.as_ref().ok_or_else(|| ConfigError::Invalid("scaling needs experiment.eps_list".into()))?;
    let map = map_of(cfg)?;
    let pot = potential_of(cfg, &map)?;
    let family = cfg.hole.family()?;
    let opts = ScalingOptions { mu_source: e.mu_source, tol: cfg.solver.tol, max_iter: cfg.solver.max_iter };
    let series = scaling_limit(&map, &pot, family, eps, cfg.solver.n, &opts)?;
    let slow = slow_approach_check(&map, family.center(), e.theta, e.r, e.n_max)?;
    let dn = dn_growth_check(&map, e.q_min, e.n_max)?;
    let limit_ok = series.extrapolated_limit().is_some_and(|l| (l - series.predicted_limit).abs() <= e.limit_tol);
    let rows_ok = series.rows.iter().all(|r| r.failed.is_none());
    art.csv("scaling.csv", &series.csv())?;
    finish(
        art,
        "scaling",
        json!({
            "predicted_limit": series.predicted_limit,
            "prediction": series.prediction,
            "extrapolated": series.extrapolated,
            "mu_source": series.mu_source,
            "notes": series.notes,
            "slow_approach": slow,
            "dn_growth": { "pass": dn.pass, "q_min": dn.q_min, "series": dn.series.iter().map(|s| json!({
                "critical_point": s.critical_point, "capped_at": s.capped_at, "overflow": s.overflow,
                "hits_critical": s.hits_critical, "q_hat": s.q_hat, "gamma_hat": s.gamma_hat,
            })).collect::<Vec<_>>() },
            "gates": { "limit": limit_ok, "rows": rows_ok },
        }),
        limit_ok && rows_ok,
    )
}

pub fn cmd_staircase(cfg: &RunConfig, art: &Artifacts) -> anyhow::Result<Outcome> {
    let e = &cfg.experiment;
    let g = e.grid.as_ref().ok_or_else(|| ConfigError::Invalid("staircase needs experiment.grid".into()))?;
    if g.points < 2 {
        return Err(ConfigError::Invalid("experiment.grid.points must be at least 2".into()).into());
    }
    let z = cfg.hole.z.ok_or_else(|| ConfigError::Invalid("staircase needs hole.z".into()))?;
    let map = map_of(cfg)?;
    let pot = potential_of(cfg, &map)?;
    let tol = e.plateau_tol.unwrap_or(5.0 * cfg.solver.tol);
    let grid = linear_grid(g.lo, g.hi, g.points);
    let s = devil_staircase(&map, &pot, z, &grid, cfg.solver.n, tol, &eigen_opts(cfg))?;
    art.csv("staircase.csv", &s.csv())?;
    let grows = match (s.grid.first(), s.grid.last()) {
        (Some(a), Some(b)) => b.rate > a.rate,
        _ => false,
    };
    let plateau_ok = s.plateau_fraction > e.plateau_threshold;
    finish(
        art,
        "staircase",
        json!({
            "plateau_fraction": s.plateau_fraction,
            "genuine_plateau_fraction": s.genuine_plateau_fraction,
            "plateau_threshold": e.plateau_threshold,
            "plateaus": s.plateaus.len(),
            "distinct_holes": s.distinct_holes,
            "monotone": s.monotone,
            "max_decrease": s.max_decrease,
            "boundary_capture_fraction": s.boundary_capture_fraction,
            "gates": { "monotone": s.monotone, "grows": grows, "plateau_fraction": plateau_ok },
        }),
        s.monotone && grows && plateau_ok,
    )
}

pub fn cmd_hofbauer(cfg: &RunConfig, art: &Artifacts) -> anyhow::Result<Outcome> {
    let e = &cfg.experiment;
    let map = map_of(cfg)?;
    let cuts = match cfg.hole.z {
        Some(z) => make_cutset(&map, z, e.eps0, cfg.hole.eps.filter(|_| e.eps0.is_some()), e.l)?,
        None => CutSet::critical(&map),
    };
    let ext = build_extension(&map, &cuts, e.l_max, e.domain_cap)?;
    let tc = transitive_component(&ext)?;
    let windows = trim(&map, &ext, e.l)?;
    if windows.is_empty() {
        return Err(anyhow!(ConfigError::Invalid(format!("trimming at L = {} leaves no window", e.l))));
    }
    let scheme = first_return_scheme(&map, &ext, &windows, e.t_max, ReturnRule::FullWindow)?;
    let violations = markov_violations(&map, &ext, &scheme).len();
    let semi = check_semiconjugacy(&map, &ext, e.semiconjugacy_samples, e.seed);
    let expansion = expansion_diagnostic(&map, &scheme, 16, 0.01);
    let tail = scheme.tail_fit(5.min(e.t_max), e.t_max);
    let avoid = match (cfg.hole.z, e.eps0) {
        (Some(z), Some(e0)) => Some(windows_avoid(&windows, z - e0, z + e0)),
        _ => None,
    };
    let levels = ext.recompute_levels();
    let levels_ok = ext.domains().iter().all(|d| levels.get(&d.id) == Some(&d.level));
    art.text("extension.graph", &ext.graph_text())?;
    art.csv("scheme.csv", &scheme.csv())?;
    let markov_ok = violations == 0 && scheme.markov_fraction() == 1.0;
    let pass = semi.failures == 0 && markov_ok && levels_ok && avoid != Some(false);
    finish(
        art,
        "hofbauer",
        json!({
            "cuts": cuts.points(),
            "warnings": cuts.warnings,
            "domains": ext.domains().len(),
            "edges": ext.edges().len(),
            "transitive_domains": tc.domains().len(),
            "levels_consistent": levels_ok,
            "max_witness_defect": ext.max_witness_defect(&map),
            "windows": windows,
            "cylinders": scheme.cylinders.len(),
            "covered_mass": scheme.covered_mass(),
            "uncovered_mass": scheme.uncovered_mass,
            "total_mass": scheme.total_mass,
            "partial_landings": scheme.partial_landings,
            "markov_fraction": scheme.markov_fraction(),
            "markov_violations": violations,
            "mean_return_time_bound": scheme.mean_return_time_lower(),
            "tail": scheme.tail,
            "tail_fit": tail,
            "semiconjugacy": semi,
            "expansion": expansion,
            "windows_avoid_hole": avoid,
        }),
        pass,
    )
}

pub fn cmd_counterexample(cfg: &RunConfig, art: &Artifacts) -> anyhow::Result<Outcome> {
    let e = &cfg.experiment;
    let eps = e.eps_list.as_ref().ok_or_else(|| ConfigError::Invalid("counterexample needs experiment.eps_list".into()))?;
    let mc = e.mc_check.then(|| ConjugacyMcOptions {
        eps: eps[0],
        n_samples: e.n_samples,
        n_steps: e.n_steps,
        seed: e.seed,
        stride: 5,
    });
    let r = counterexample_ex(cfg.solver.n, eps, mc.as_ref())?;
    art.csv("tent.csv", &r.tent.csv())?;
    art.csv("logistic.csv", &r.logistic.csv())?;
    let near = |v: Option<f64>, tol: f64| v.is_some_and(|v| (v - 0.5).abs() <= tol);
    let tent_ok = near(r.tent_limit, 0.05);
    let logistic_ok = near(r.logistic_limit, 0.05);
    let mc_ok = r.conjugacy.as_ref().is_none_or(|c| c.pass);
    finish(
        art,
        "counterexample",
        json!({
            "tent_limit": r.tent_limit,
            "logistic_limit": r.logistic_limit,
            "tent_interval": r.tent.extrapolated.as_ref().map(|x| [x.lo, x.hi]),
            "logistic_interval": r.logistic.extrapolated.as_ref().map(|x| [x.lo, x.hi]),
            "naive": r.naive,
            "alternate": r.alternate,
            "naive_outside_interval": r.naive_outside_interval,
            "conjugacy": r.conjugacy,
            "gates": { "tent": tent_ok, "logistic": logistic_ok, "naive_excluded": r.naive_outside_interval, "conjugacy": mc_ok },
        }),
        tent_ok && logistic_ok && r.naive_outside_interval && mc_ok,
    )
}

pub fn cmd_accim(cfg: &RunConfig, art: &Artifacts) -> anyhow::Result<Outcome> {
    let map = map_of(cfg)?;
    let pot = potential_of(cfg, &map)?;
    let hole = cfg.hole.build()?;
    let opts = eigen_opts(cfg);
    let (snapped, n) = snap_hole(&hole, cfg.solver.n);
    let base = UlamOperator::build(&map, &pot, n)?;
    let reference = base.leading_eigen(&opts)?;
    let op = base.puncture(&snapped)?;
    let res = op.leading_eigen(&opts)?;
    let g = accim_density(&res, &reference.left)?;
    let psi = vec![1.0; n];
    let ev = conditional_evolve(&op, &psi, cfg.experiment.steps, &g, &reference.left)?;
    let positive = g.iter().zip(op.hole_mask()).all(|(&v, &h)| h || v > 0.0);
    let mut body = String::from("step,l1_distance\n");
    for (k, d) in ev.distances.iter().enumerate() {
        body.push_str(&format!("{k},{d:e}\n"));
    }
    art.csv("evolution.csv", &body)?;
    let mut dens = String::from("bin,g\n");
    for (j, v) in g.iter().enumerate() {
        dens.push_str(&format!("{j},{v:e}\n"));
    }
    art.csv("accim.csv", &dens)?;
    let residual_ok = res.residual < 1e-9;
    let converged = ev.distances.iter().any(|&d| d < 1e-8);
    let geometric = ev.theta_hat.is_some_and(|t| t < 1.0);
    finish(
        art,
        "accim",
        json!({
            "spectral": res.summary_json(),
            "positive_off_hole": positive,
            "final_distance": ev.distances.last(),
            "theta_hat": ev.theta_hat,
            "theta_fit": ev.theta_fit,
            "gates": { "residual": residual_ok, "positive": positive, "converged": converged, "geometric": geometric },
        }),
        residual_ok && positive && converged && geometric,
    )
}
