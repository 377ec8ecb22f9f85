//! Monte-Carlo sweeps, pattern export and the small-N oracle suite.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{run_scheme, DesignOptions, DesignOutcome, Scheme};
use crate::channels::{assemble_scenario, complex_normal, ChannelSet};
use crate::config::{ScenarioConfig, ScenarioFile, Setting};
use crate::error::{Error, Result};
use crate::linalg::{linear_to_db, outer, quad_form, CMat, CVec, C64};
use crate::metrics::{diagnostic_patterns, illumination, sinr, write_trace_csv, BeamformerSet, PatternTraces};
use crate::subsolvers::{
    build_fractional_system, build_radar_system, homogenize_comm, homogenize_radar, solve_radar_ris, update_comm_ris,
    DinkelbachOptions, RadarRisSystem,
};

/// Stand-in for `10·log₁₀(0)` in emitted tables.
pub const DB_FLOOR: f64 = -300.0;

pub fn db_or_floor(x: f64) -> f64 {
    if x > 0.0 {
        linear_to_db(x).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// A sweep file. `base` holds scenario keys, anything missing takes the
/// desk-scale default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    #[serde(default)]
    pub base: Option<toml::Table>,
    pub setting: Setting,
    pub param: String,
    pub values: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_trials() -> usize {
    10
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ScenarioFile,
    pub setting: Setting,
    pub param: String,
    pub values: Vec<f64>,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    pub out_dir: Option<PathBuf>,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_over(text, &ScenarioFile::default())
    }

    /// As [`SweepSpec::from_toml_str`] with `[base]` laid over `defaults`.
    pub fn from_toml_str_over(text: &str, defaults: &ScenarioFile) -> Result<Self> {
        let f: SweepFile = toml::from_str(text)?;
        let spec = SweepSpec {
            base: defaults.overlay(f.base.unwrap_or_default())?,
            setting: f.setting,
            param: f.param,
            values: f.values,
            trials: f.trials,
            schemes: f.schemes,
            out_dir: f.out_dir,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, defaults: &ScenarioFile) -> Result<Self> {
        Self::from_toml_str_over(&std::fs::read_to_string(path)?, defaults)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.values.is_empty() || self.schemes.is_empty() {
            return Err(Error::Config("a sweep needs at least one value and one scheme".into()));
        }
        if let Some(s) = self.schemes.iter().find(|s| !s.available_in(self.setting)) {
            return Err(Error::Config(format!("scheme {s} is not defined for {:?}", self.setting)));
        }
        for &v in &self.values {
            self.cell_config(v, 0)?;
        }
        Ok(())
    }

    /// Scenario for one sweep value and trial. Trial `t` uses `seed ⊕ t`.
    pub fn cell_config(&self, value: f64, trial: usize) -> Result<ScenarioConfig> {
        let mut file = self.base.clone();
        file.set_param(&self.param, value)?;
        let mut cfg = file.into_config()?;
        cfg.seed ^= trial as u64;
        Ok(cfg)
    }
}

/// One successful (scheme, value, trial) design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub scheme: Scheme,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    pub termination: String,
    pub fairness_sinr: f64,
    pub fairness_sinr_db: f64,
    pub min_rate: f64,
    pub illumination: f64,
    pub illumination_db: f64,
    pub radar_cost: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub scheme: Scheme,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

/// Per (scheme, value) means over successful trials. dB columns are the dB
/// of the linear mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub value: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_fairness_sinr: f64,
    pub mean_fairness_sinr_db: f64,
    pub mean_min_rate: f64,
    pub mean_illumination: f64,
    pub mean_illumination_db: f64,
    pub mean_radar_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub summary: Vec<SummaryRow>,
    pub trials: Vec<TrialRow>,
    pub failures: Vec<FailureRow>,
}

pub fn trial_row(outcome: &DesignOutcome, value: f64, trial: usize, seed: u64) -> TrialRow {
    let termination = serde_json::to_value(outcome.termination)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    TrialRow {
        scheme: outcome.scheme,
        value,
        trial,
        seed,
        termination,
        fairness_sinr: outcome.fairness_sinr,
        fairness_sinr_db: db_or_floor(outcome.fairness_sinr),
        min_rate: outcome.min_rate,
        illumination: outcome.illumination,
        illumination_db: db_or_floor(outcome.illumination),
        radar_cost: outcome.radar_cost.map(|c| c.l),
        iterations: outcome.iterations,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    for x in xs {
        sum += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Means over the rows of one cell, in row order.
pub fn summarize(scheme: Scheme, value: f64, rows: &[&TrialRow], failures: usize) -> SummaryRow {
    let sinr = mean(rows.iter().map(|r| r.fairness_sinr));
    let q = mean(rows.iter().map(|r| r.illumination));
    let costs: Vec<f64> = rows.iter().filter_map(|r| r.radar_cost).collect();
    SummaryRow {
        scheme,
        value,
        trials: rows.len(),
        failures,
        mean_fairness_sinr: sinr,
        mean_fairness_sinr_db: db_or_floor(sinr),
        mean_min_rate: mean(rows.iter().map(|r| r.min_rate)),
        mean_illumination: q,
        mean_illumination_db: db_or_floor(q),
        mean_radar_cost: (!costs.is_empty()).then(|| mean(costs.iter().copied())),
    }
}

enum TrialResult {
    Ok(TrialRow),
    Failed(FailureRow),
}

fn run_trial(spec: &SweepSpec, value: f64, trial: usize, opts: &DesignOptions) -> Vec<TrialResult> {
    let fail_all = |seed: u64, e: &Error| {
        spec.schemes
            .iter()
            .map(|&scheme| TrialResult::Failed(FailureRow { scheme, value, trial, seed, error: e.to_string() }))
            .collect()
    };
    let cfg = match spec.cell_config(value, trial) {
        Ok(c) => c,
        Err(e) => return fail_all(spec.base.seed ^ trial as u64, &e),
    };
    let ch = match assemble_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)) {
        Ok(c) => c,
        Err(e) => return fail_all(cfg.seed, &e),
    };
    spec.schemes
        .iter()
        .map(|&scheme| match run_scheme(scheme, spec.setting, &cfg, &ch, opts) {
            Ok(out) => TrialResult::Ok(trial_row(&out, value, trial, cfg.seed)),
            Err(e) => {
                log::info!("{scheme} failed at {}={value} trial {trial}: {e}", spec.param);
                TrialResult::Failed(FailureRow { scheme, value, trial, seed: cfg.seed, error: e.to_string() })
            }
        })
        .collect()
}

/// Runs every (value, trial) on up to `workers` threads (0 = all cores).
/// Output order is (value, trial, scheme) whatever the completion order.
pub fn run_sweep(spec: &SweepSpec, workers: usize, opts: &DesignOptions) -> Result<SweepResult> {
    spec.validate()?;
    let jobs: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Vec<TrialResult>> =
        pool.install(|| jobs.par_iter().map(|&(v, t)| run_trial(spec, v, t, opts)).collect());

    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for r in results.into_iter().flatten() {
        match r {
            TrialResult::Ok(row) => trials.push(row),
            TrialResult::Failed(row) => failures.push(row),
        }
    }

    let mut summary = Vec::new();
    for &value in &spec.values {
        for &scheme in &spec.schemes {
            let rows: Vec<&TrialRow> = trials.iter().filter(|r| r.scheme == scheme && r.value == value).collect();
            let failed = failures.iter().filter(|r| r.scheme == scheme && r.value == value).count();
            if rows.is_empty() {
                let reason = failures
                    .iter()
                    .find(|r| r.scheme == scheme && r.value == value)
                    .map(|r| r.error.clone())
                    .unwrap_or_default();
                return Err(Error::Infeasible(format!(
                    "every trial of {scheme} at {}={value} failed ({reason})",
                    spec.param
                )));
            }
            summary.push(summarize(scheme, value, &rows, failed));
        }
    }
    Ok(SweepResult { summary, trials, failures })
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepResult {
    /// Writes `summary.csv`, `trials.csv` and `failures.csv` into `dir`.
    pub fn write(&self, dir: &Path, param: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let summary = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&summary)?;
        w.write_record([
            "scheme",
            param,
            "trials",
            "failures",
            "mean_fairness_sinr",
            "mean_fairness_sinr_db",
            "mean_min_rate",
            "mean_illumination",
            "mean_illumination_db",
            "mean_radar_cost",
        ])?;
        for r in &self.summary {
            w.write_record([
                r.scheme.to_string(),
                r.value.to_string(),
                r.trials.to_string(),
                r.failures.to_string(),
                r.mean_fairness_sinr.to_string(),
                r.mean_fairness_sinr_db.to_string(),
                r.mean_min_rate.to_string(),
                r.mean_illumination.to_string(),
                r.mean_illumination_db.to_string(),
                opt_cell(r.mean_radar_cost),
            ])?;
        }
        w.flush()?;

        let trials = dir.join("trials.csv");
        let mut w = csv::Writer::from_path(&trials)?;
        w.write_record([
            "scheme",
            param,
            "trial",
            "seed",
            "termination",
            "fairness_sinr",
            "fairness_sinr_db",
            "min_rate",
            "illumination",
            "illumination_db",
            "radar_cost",
            "iterations",
        ])?;
        for r in &self.trials {
            w.write_record([
                r.scheme.to_string(),
                r.value.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.termination.clone(),
                r.fairness_sinr.to_string(),
                r.fairness_sinr_db.to_string(),
                r.min_rate.to_string(),
                r.illumination.to_string(),
                r.illumination_db.to_string(),
                opt_cell(r.radar_cost),
                r.iterations.to_string(),
            ])?;
        }
        w.flush()?;

        let failures = dir.join("failures.csv");
        let mut w = csv::Writer::from_path(&failures)?;
        w.write_record(["scheme", param, "trial", "seed", "error"])?;
        for r in &self.failures {
            w.write_record([r.scheme.to_string(), r.value.to_string(), r.trial.to_string(), r.seed.to_string(), r.error.clone()])?;
        }
        w.flush()?;
        Ok(vec![summary, trials, failures])
    }
}

/// Reads `trials.csv` back (used to cross-check the summary).
pub fn read_trials(path: &Path) -> Result<Vec<TrialRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("trials.csv column {i}: {e}")))
        };
        let int = |i: usize| -> Result<u64> {
            rec.get(i)
                .unwrap_or("")
                .parse::<u64>()
                .map_err(|e| Error::Config(format!("trials.csv column {i}: {e}")))
        };
        out.push(TrialRow {
            scheme: rec.get(0).unwrap_or("").parse()?,
            value: num(1)?,
            trial: int(2)? as usize,
            seed: int(3)?,
            termination: rec.get(4).unwrap_or("").to_owned(),
            fairness_sinr: num(5)?,
            fairness_sinr_db: num(6)?,
            min_rate: num(7)?,
            illumination: num(8)?,
            illumination_db: num(9)?,
            radar_cost: match rec.get(10) {
                Some("") | None => None,
                Some(_) => Some(num(10)?),
            },
            iterations: int(11)? as usize,
        });
    }
    Ok(out)
}

/// Writes `pattern_total.csv`, `pattern_radar.csv`, `pattern_comm_<k>.csv`
/// over the angle grid and `ris_comm.csv` / `ris_radar.csv` (columns
/// `u_y,u_z,value`) for each RIS that is present.
pub fn export_patterns(
    outcome: &DesignOutcome,
    config: &ScenarioConfig,
    ch: &ChannelSet,
    dir: &Path,
    ris_points_per_axis: usize,
) -> Result<PatternTraces> {
    std::fs::create_dir_all(dir)?;
    let bf = &outcome.beamformers;
    let comm_ris = if outcome.omega_c.is_absent() { CVec::zeros(0) } else { outcome.omega_c.phases().clone() };
    let traces = diagnostic_patterns(bf, &comm_ris, ch.geometry.comm_ris_incident, &config.grid, ris_points_per_axis)?;
    write_trace_csv(&dir.join("pattern_total.csv"), &traces.angles, &traces.total)?;
    write_trace_csv(&dir.join("pattern_radar.csv"), &traces.angles, &traces.radar)?;
    for (k, v) in traces.comm.iter().enumerate() {
        write_trace_csv(&dir.join(format!("pattern_comm_{k}.csv")), &traces.angles, v)?;
    }
    if !traces.ris.is_empty() {
        write_ris_csv(&dir.join("ris_comm.csv"), &traces.ris)?;
    }
    if !outcome.omega_r.is_absent() {
        let radar = diagnostic_patterns(
            bf,
            outcome.omega_r.phases(),
            ch.geometry.radar_ris_incident,
            &[],
            ris_points_per_axis,
        )?;
        write_ris_csv(&dir.join("ris_radar.csv"), &radar.ris)?;
    }
    Ok(traces)
}

fn write_ris_csv(path: &Path, points: &[([f64; 2], f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["u_y", "u_z", "value"])?;
    for (p, v) in points {
        w.write_record([p[0].to_string(), p[1].to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Result of one oracle check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> OracleCheck {
    OracleCheck { name: name.into(), passed, detail }
}

fn small_config(m: usize, n: usize, k: usize, t: usize, seed: u64) -> Result<ScenarioConfig> {
    let mut f = ScenarioFile { m, n, k, t, k_d: Some(k), t_d: Some(t), seed, ..ScenarioFile::default() };
    f.target_angles = Some([-50.0, -10.0, 30.0][..t].to_vec());
    f.into_config()
}

fn random_beamformers(rng: &mut ChaCha8Rng, m: usize, k: usize) -> BeamformerSet {
    BeamformerSet::new(
        CMat::from_fn(m, k, |_, _| complex_normal(rng)).scale(0.3),
        CMat::from_fn(m, m, |_, _| complex_normal(rng)).scale(0.1),
    )
}

fn random_phases(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
}

fn phase_grid() -> impl Iterator<Item = CVec> {
    (0..3600).map(|i| CVec::from_element(1, C64::from_polar(1.0, (i as f64 * 0.1).to_radians())))
}

/// Brute-force checks on single-element surfaces plus closed-form and
/// identity checks. `instances` controls the number of random draws.
pub fn run_oracle_suite(seed: u64, instances: usize, n_rand: usize) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // Comm-RIS: Dinkelbach bound against a 0.1° phase sweep.
    let cfg = small_config(4, 1, 2, 2, seed)?;
    let (mut worst_gap, mut sandwich, mut monotone) = (f64::INFINITY, true, true);
    for i in 0..instances {
        let ch = assemble_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)))?;
        let bf = random_beamformers(&mut rng, cfg.m, cfg.k);
        let start = CVec::from_element(1, C64::new(1.0, 0.0));
        let upd = update_comm_ris(&ch, &bf, &start, cfg.sigma2, n_rand, true, &DinkelbachOptions::default(), &mut rng)?;
        let sys = build_fractional_system(&ch, &bf, cfg.sigma2);
        let brute = phase_grid()
            .map(|o| {
                let w = homogenize_comm(&o);
                (0..sys.a.len()).map(|k| sys.ratio(k, &w)).fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        sandwich &= brute <= upd.gamma2 * (1.0 + 1e-6) && upd.gamma3 <= upd.gamma2 * (1.0 + 1e-6);
        monotone &= upd.trace.lambdas.windows(2).all(|w| w[1] >= w[0]);
        worst_gap = worst_gap.min(upd.gamma3 / brute);
    }
    out.push(check("dinkelbach-sandwich", sandwich, format!("{instances} single-element instances")));
    out.push(check("dinkelbach-monotone", monotone, "λ non-decreasing".into()));
    out.push(check(
        "randomization-near-optimum",
        worst_gap >= 0.98,
        format!("worst achieved/brute ratio {worst_gap:.4}"),
    ));

    // Radar-RIS: relaxed optimum against exhaustive phase search.
    let cfg = small_config(4, 1, 1, 2, seed)?;
    let mut bound_ok = true;
    for i in 0..instances {
        let ch = assemble_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000 + i as u64)))?;
        let r = random_beamformers(&mut rng, cfg.m, 1).r;
        let sys = build_radar_system(&ch, &r);
        let (_, relaxed) = solve_radar_ris(&sys)?;
        let brute = phase_grid()
            .map(|o| sys.illumination(&homogenize_radar(&o)))
            .fold(f64::NEG_INFINITY, f64::max);
        bound_ok &= relaxed >= brute * (1.0 - 1e-7);
    }
    out.push(check("radar-sdp-bound", bound_ok, format!("{instances} single-element instances")));

    let n = 4;
    let a = random_phases(&mut rng, n + 1);
    let (_, v) = solve_radar_ris(&RadarRisSystem { q: vec![outer(&a)] })?;
    let want = ((n + 1) * (n + 1)) as f64;
    out.push(check(
        "radar-rank-one-closed-form",
        (v - want).abs() <= 1e-4 * want,
        format!("{v} vs {want}"),
    ));

    // Identities on 100 random phase vectors.
    let cfg = small_config(4, 4, 2, 2, seed)?;
    let ch = assemble_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let bf = random_beamformers(&mut rng, cfg.m, cfg.k);
    let sys = build_fractional_system(&ch, &bf, cfg.sigma2);
    let radar = build_radar_system(&ch, &bf.r);
    let (mut ratio_err, mut illum_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let omega = random_phases(&mut rng, cfg.n);
        let w = homogenize_comm(&omega);
        for k in 0..cfg.k {
            let direct = sinr(&ch, &omega, &bf, k, cfg.sigma2)?;
            ratio_err = ratio_err.max((sys.ratio(k, &w) - direct).abs() / direct);
        }
        let u = homogenize_radar(&omega);
        let (per, _) = illumination(&ch, &omega, &bf.r);
        for (q, p) in radar.q.iter().zip(&per) {
            illum_err = illum_err.max((quad_form(q, &u) - p).abs() / p);
        }
    }
    out.push(check("fractional-ratio-identity", ratio_err <= 1e-9, format!("max rel err {ratio_err:e}")));
    out.push(check("illumination-identity", illum_err <= 1e-9, format!("max rel err {illum_err:e}")));
    Ok(out)
}
