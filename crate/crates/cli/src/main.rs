//! `ris-isac` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ris_isac::algorithms::{manual_comm_phases, manual_radar_phases, run_scheme, Scheme};
use ris_isac::channels::assemble_scenario;
use ris_isac::config::ScenarioFile;
use ris_isac::harness::{export_patterns, run_oracle_suite, run_sweep, SweepSpec};
use ris_isac::subsolvers::beamformer_problem;
use ris_isac::{DesignOptions, Error, RisProfile, RisRole, Setting};

#[derive(Debug, Parser)]
#[command(name = "ris-isac", version, about = "Beamforming and RIS phase design for RIS-assisted ISAC")]
struct Cli {
    /// Scenario TOML (`design`) or sweep TOML (`sweep`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Start from the full-size defaults (M=16, N=100, K=4) instead of
    /// the desk-scale ones.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design one scenario and write the outcome and its traces.
    Design {
        #[arg(long, value_parser = parse_setting, default_value = "comm-ris")]
        setting: Setting,
        /// Defaults to the proposed designer of the setting.
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
        /// Also write the first beamformer program as `problem.cbf`.
        #[arg(long)]
        dump_cbf: bool,
        /// Points per axis of the RIS reflection-pattern grid.
        #[arg(long, default_value_t = 41)]
        ris_grid: usize,
    },
    /// Monte-Carlo sweep described by a sweep file.
    Sweep,
    /// Brute-force checks on single-element surfaces.
    Oracle {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 10_000)]
        n_rand: usize,
    },
}

fn parse_setting(s: &str) -> Result<Setting, String> {
    match s {
        "comm-ris" => Ok(Setting::CommRis),
        "dual-ris" => Ok(Setting::DualRis),
        _ => Err(format!("expected comm-ris or dual-ris, got {s:?}")),
    }
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn base_file(paper_scale: bool) -> ScenarioFile {
    if paper_scale {
        ScenarioFile::paper_scale()
    } else {
        ScenarioFile::default()
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::DegenerateUser(_) => 2,
        _ => 1,
    }
}

/// OpenBLAS picks its kernel when the library loads, so pinning the core type
/// needs a fresh process. Some 0.3.x releases pick a faulty kernel on recent
/// AVX-512 parts; any AVX2 machine runs the Haswell one correctly.
#[cfg(all(unix, target_arch = "x86_64"))]
fn pin_blas_kernel() {
    use std::os::unix::process::CommandExt;
    if std::env::var_os("OPENBLAS_CORETYPE").is_some() || !std::arch::is_x86_feature_detected!("avx2") {
        return;
    }
    let Ok(exe) = std::env::current_exe() else { return };
    let err = std::process::Command::new(exe)
        .args(std::env::args_os().skip(1))
        .env("OPENBLAS_CORETYPE", "Haswell")
        .exec();
    eprintln!("warning: could not re-exec with OPENBLAS_CORETYPE set: {err}");
}

#[cfg(not(all(unix, target_arch = "x86_64")))]
fn pin_blas_kernel() {}

fn main() -> ExitCode {
    pin_blas_kernel();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Design { setting, scheme, dump_cbf, ris_grid } => {
            design(cli, *setting, *scheme, *dump_cbf, *ris_grid).map(|()| 0)
        }
        Command::Sweep => sweep(cli).map(|()| 0),
        Command::Oracle { instances, n_rand } => oracle(cli, *instances, *n_rand),
    }
}

fn out_dir(cli: &Cli, fallback: &str) -> Result<PathBuf, Error> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(fallback));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn design(cli: &Cli, setting: Setting, scheme: Option<Scheme>, dump_cbf: bool, ris_grid: usize) -> Result<(), Error> {
    let base = base_file(cli.paper_scale);
    let mut file = match &cli.config {
        Some(p) => base.overlay_toml_str(&std::fs::read_to_string(p)?)?,
        None => base,
    };
    if let Some(s) = cli.seed {
        file.seed = s;
    }
    let config = file.clone().into_config()?;
    let scheme = scheme.unwrap_or(match setting {
        Setting::CommRis => Scheme::ProposedP1,
        Setting::DualRis => Scheme::ProposedP2,
    });
    let dir = out_dir(cli, "design-out")?;
    std::fs::write(dir.join("scenario.toml"), file.to_toml_string())?;

    let ch = assemble_scenario(&config, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    if dump_cbf {
        let omega_c = manual_comm_phases(&ch)?;
        let omega_r = match setting {
            Setting::CommRis => RisProfile::absent(RisRole::Radar, ch.n()),
            Setting::DualRis => manual_radar_phases(&ch)?,
        };
        let problem =
            beamformer_problem(setting, &ch, omega_c.phases(), omega_r.phases(), config.gamma, &config, true)?;
        problem.write_cbf(&dir.join("problem.cbf"))?;
    }

    let outcome = run_scheme(scheme, setting, &config, &ch, &DesignOptions::default())?;
    outcome.write_json(&dir.join("outcome.json"))?;
    outcome.write_iteration_csv(&dir.join("iterations.csv"))?;
    for (i, t) in outcome.dinkelbach.iter().enumerate() {
        t.write_csv(&dir.join(format!("dinkelbach_{}.csv", i + 1)))?;
    }
    if let Some(cost) = &outcome.radar_cost {
        cost.write_csv(&dir.join("radar_cost.csv"))?;
    }
    export_patterns(&outcome, &config, &ch, &dir, ris_grid)?;

    println!("scheme           {}", outcome.scheme);
    println!("termination      {:?}", outcome.termination);
    println!("iterations       {}", outcome.iterations);
    println!("fairness SINR    {:.3} dB (target {:.3} dB)", db(outcome.fairness_sinr), db(outcome.gamma_target));
    println!("min rate         {:.4} bps/Hz", outcome.min_rate);
    println!("worst-case Q     {:.3} dB", db(outcome.illumination));
    if let Some(c) = &outcome.radar_cost {
        println!("radar cost L     {:.6e} (L1 {:.4e}, L2 {:.4e})", c.l, c.l1, c.l2);
    }
    println!("written to       {}", dir.display());
    Ok(())
}

fn db(x: f64) -> f64 {
    ris_isac::harness::db_or_floor(x)
}

fn sweep(cli: &Cli) -> Result<(), Error> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("sweep needs --config <sweep.toml>".into()))?;
    let mut spec = SweepSpec::load(path, &base_file(cli.paper_scale))?;
    if let Some(s) = cli.seed {
        spec.base.seed = s;
    }
    let dir = match (&cli.out, &spec.out_dir) {
        (Some(d), _) | (None, Some(d)) => d.clone(),
        (None, None) => PathBuf::from("sweep-out"),
    };
    let result = run_sweep(&spec, cli.workers, &DesignOptions::default())?;
    result.write(&dir, &spec.param)?;
    print_summary(&result, &spec.param, &dir);
    Ok(())
}

fn print_summary(result: &ris_isac::harness::SweepResult, param: &str, dir: &Path) {
    println!("{:<14} {:>8} {:>6} {:>12} {:>10} {:>10}", "scheme", param, "fail", "SINR [dB]", "rate", "Q [dB]");
    for r in &result.summary {
        println!(
            "{:<14} {:>8} {:>6} {:>12.3} {:>10.4} {:>10.3}",
            r.scheme.name(),
            r.value,
            r.failures,
            r.mean_fairness_sinr_db,
            r.mean_min_rate,
            r.mean_illumination_db
        );
    }
    println!("tables written to {}", dir.display());
}

fn oracle(cli: &Cli, instances: usize, n_rand: usize) -> Result<u8, Error> {
    let checks = run_oracle_suite(cli.seed.unwrap_or(0), instances, n_rand)?;
    for c in &checks {
        println!("{} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("oracle.json"), serde_json::to_string_pretty(&checks)?)?;
    }
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { 1 })
}
