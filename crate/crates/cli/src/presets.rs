use crate::config::{ConfigError, GridConfig, HoleShape, RunConfig};
use escape_core::experiments::MuSource;
use escape_core::maps::MapSpec;
use escape_core::openmap::InitialMeasure;
use escape_core::potentials::PotentialSpec;

pub const PRESETS: &[(&str, &str)] = &[
    ("counterexample", "logistic [0, eps) against tent [0, g^-1 eps), N = 2^14, eps = 2^-6..2^-12"),
    ("tent-z23", "tent, t = 1, z = 2/3, N = 2^14, eps = 2^-4..2^-10"),
    ("tent-z25", "tent, t = 1, z = 2/5, N = 2^14, eps = 2^-4..2^-10"),
    ("logistic-z34", "logistic, t = 1, z = 3/4, N = 2^14, eps = 2^-4..2^-10"),
    ("aperiodic", "tent, constant potential, z = 1/sqrt 2, N = 2^16, eps = 2^-8..2^-14"),
    ("staircase", "tent, t = 1, z = 2/3, 400-point linear grid in [2^-10, 2^-4], N = 2^16"),
    ("hofbauer-tent", "tent single-domain extension, L = 2, T_max = 20"),
    ("hofbauer-logistic", "logistic extension with cuts from z = 3/4, L = 2, L_max = 6"),
    ("markov-hole", "tent, t = 1, hole (1/4, 1/2), N = 1024"),
    ("empty-hole", "tent, t = 1, no hole"),
    ("accim-markov", "tent, t = 1, hole (3/8, 1/2), N = 1024, 60 steps"),
    ("mc-logistic-left", "logistic [0, 2^-6), 10^6 samples against the spectral rate, N = 2^14"),
    ("mc-tent-z23", "tent z = 2/3, eps = 2^-6, 10^6 samples, N = 2^14"),
    ("mc-tent-z25", "tent z = 2/5, eps = 2^-6, 10^6 samples, N = 2^14"),
    ("mc-logistic-z34", "logistic z = 3/4, eps = 2^-6, 10^6 samples, N = 2^14"),
];

fn dyadics(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|k| 2f64.powi(-k)).collect()
}

fn scaling(map: MapSpec, z: f64, limit_tol: f64) -> RunConfig {
    let mut c = RunConfig { map, ..RunConfig::default() };
    c.hole.z = Some(z);
    c.solver.n = 1 << 14;
    c.experiment.eps_list = Some(dyadics(4, 10));
    c.experiment.limit_tol = limit_tol;
    c
}

fn mc(map: MapSpec, shape: HoleShape, z: Option<f64>, steps: usize, measure: InitialMeasure) -> RunConfig {
    let mut c = RunConfig { map, ..RunConfig::default() };
    c.hole.shape = shape;
    c.hole.z = z;
    c.hole.eps = Some(2f64.powi(-6));
    c.solver.n = 1 << 14;
    c.experiment.n_samples = 1_000_000;
    c.experiment.n_steps = steps;
    c.experiment.measure = Some(measure);
    c
}

pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let mut c = RunConfig::default();
    match name {
        "counterexample" => {
            c.map = MapSpec::Logistic4;
            c.hole.shape = HoleShape::LeftEnd;
            c.solver.n = 1 << 14;
            c.experiment.eps_list = Some(dyadics(6, 12));
            c.experiment.mu_source = MuSource::ClosedFormLogistic;
            c.experiment.mc_check = true;
            c.experiment.n_samples = 200_000;
            c.experiment.n_steps = 100;
        }
        "tent-z23" => c = scaling(MapSpec::Tent2, 2.0 / 3.0, 0.05),
        "tent-z25" => c = scaling(MapSpec::Tent2, 0.4, 0.05),
        "logistic-z34" => c = scaling(MapSpec::Logistic4, 0.75, 0.08),
        "aperiodic" => {
            c = scaling(MapSpec::Tent2, std::f64::consts::FRAC_1_SQRT_2, 0.07);
            c.potential = PotentialSpec::Holder { name: "constant".into(), c: Some(0.0) };
            c.solver.n = 1 << 16;
            c.experiment.eps_list = Some(dyadics(8, 14));
        }
        "staircase" => {
            c.hole.z = Some(2.0 / 3.0);
            c.solver.n = 1 << 16;
            c.experiment.grid = Some(GridConfig { lo: 2f64.powi(-10), hi: 2f64.powi(-4), points: 400 });
        }
        "hofbauer-tent" => {}
        "hofbauer-logistic" => {
            c.map = MapSpec::Logistic4;
            c.hole.z = Some(0.75);
            c.experiment.l_max = 6;
            c.experiment.t_max = 12;
        }
        "markov-hole" => {
            c.hole.intervals = Some(vec![[0.25, 0.5]]);
            c.solver.n = 1024;
            c.experiment.n_samples = 100_000;
            c.experiment.n_steps = 20;
        }
        "empty-hole" => {
            c.solver.n = 1024;
            c.experiment.n_samples = 10_000;
            c.experiment.n_steps = 50;
        }
        "accim-markov" => {
            c.hole.intervals = Some(vec![[0.375, 0.5]]);
            c.solver.n = 1024;
            c.solver.tol = 1e-13;
            c.experiment.steps = 60;
        }
        "mc-logistic-left" => c = mc(MapSpec::Logistic4, HoleShape::LeftEnd, None, 200, InitialMeasure::AcipLogistic4),
        "mc-tent-z23" => c = mc(MapSpec::Tent2, HoleShape::Symmetric, Some(2.0 / 3.0), 800, InitialMeasure::Lebesgue),
        "mc-tent-z25" => c = mc(MapSpec::Tent2, HoleShape::Symmetric, Some(0.4), 600, InitialMeasure::Lebesgue),
        "mc-logistic-z34" => {
            c = mc(MapSpec::Logistic4, HoleShape::Symmetric, Some(0.75), 800, InitialMeasure::AcipLogistic4)
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    }
    Ok(c)
}
