//! Acceptance criteria. Runs as a plain binary so that every criterion
//! prints its PASS/FAIL line; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use ris_isac::algorithms::{no_ris_design, run_algorithm1, run_algorithm2, DesignOptions, Scheme, Termination};
use ris_isac::channels::{assemble_scenario, complex_normal, ChannelSet};
use ris_isac::config::{ScenarioConfig, ScenarioFile, Setting};
use ris_isac::harness::{run_sweep, SweepResult, SweepSpec};
use ris_isac::linalg::{min_eigenvalue, outer, quad_form, CMat, CVec, C64};
use ris_isac::metrics::{fairness_sinr, illumination, sinr, BeamformerSet};
use ris_isac::subsolvers::{
    build_fractional_system, build_radar_system, construct_beamformers, homogenize_comm, homogenize_radar,
    solve_beamformer_p1, solve_radar_ris, update_comm_ris, DinkelbachOptions, RadarRisSystem,
};

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn desk() -> ScenarioFile {
    ScenarioFile { m: 8, n: 16, k: 2, t: 2, ..ScenarioFile::default() }
}

fn config(f: ScenarioFile) -> ScenarioConfig {
    f.into_config().expect("valid scenario")
}

fn draw(cfg: &ScenarioConfig, seed: u64) -> ChannelSet {
    assemble_scenario(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).expect("scenario")
}

fn random_phases(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
}

fn random_beamformers(rng: &mut ChaCha8Rng, m: usize, k: usize) -> BeamformerSet {
    BeamformerSet::new(
        CMat::from_fn(m, k, |_, _| complex_normal(rng)).scale(0.3),
        CMat::from_fn(m, m, |_, _| complex_normal(rng)).scale(0.1),
    )
}

fn single_phase(deg_tenths: usize) -> CVec {
    CVec::from_element(1, C64::from_polar(1.0, (deg_tenths as f64 * 0.1).to_radians()))
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Rank-one pipeline on 50 desk-scale instances.
fn feasibility_preservation() -> Verdict {
    let start = Instant::now();
    let cfg = config(desk());
    let unit = cfg.p_t / cfg.m as f64;
    let rows: Vec<(f64, f64, f64)> = (0..50u64)
        .into_par_iter()
        .map(|i| {
            let ch = draw(&cfg, 1000 + i);
            let omega = random_phases(&mut ChaCha8Rng::seed_from_u64(5000 + i), cfg.n);
            let relaxed = solve_beamformer_p1(&ch, &omega, cfg.gamma, &cfg, true).expect("feasible");
            let bf = construct_beamformers(&relaxed).expect("factorizable");
            let diag = (0..cfg.m).map(|j| (bf.r[(j, j)].re - unit).abs() / unit).fold(0.0, f64::max);
            let mut resid = relaxed.r.clone();
            for k in 0..bf.k() {
                resid -= outer(&bf.comm_beam(k));
            }
            let trace: f64 = (0..cfg.m).map(|j| relaxed.r[(j, j)].re).sum();
            let eig = min_eigenvalue(&resid) / trace;
            let worst = (0..cfg.k)
                .map(|k| sinr(&ch, &omega, &bf, k, cfg.sigma2).unwrap() / cfg.gamma - 1.0)
                .fold(f64::INFINITY, f64::min);
            (diag, eig, worst)
        })
        .collect();
    let diag = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let eig = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let sinr_gap = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let took = start.elapsed();
    verdict(
        diag <= 1e-6 && eig >= -1e-7 && sinr_gap >= -1e-6 && took < Duration::from_secs(120),
        format!("diag err {diag:.1e}, min eig/trace {eig:.1e}, worst SINR/Γ-1 {sinr_gap:.1e}, {took:.1?}"),
    )
}

/// Dinkelbach monotonicity, stopping rule and the single-element sandwich.
fn dinkelbach_suite() -> Verdict {
    let start = Instant::now();
    let opts = DinkelbachOptions::default();
    let stop_ok = |t: &ris_isac::subsolvers::DinkelbachTrace| {
        let inner = t.inner_values.last().copied().unwrap_or(0.0);
        let change = t.w_changes.last().copied().unwrap_or(0.0);
        inner.abs() <= 1e-5 || change <= opts.tol
    };

    let one = config(ScenarioFile { m: 4, n: 1, k: 2, t: 2, ..ScenarioFile::default() });
    let single: Vec<(bool, bool, bool, f64, bool)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let ch = draw(&one, 200 + i);
            let mut rng = ChaCha8Rng::seed_from_u64(300 + i);
            let bf = random_beamformers(&mut rng, one.m, one.k);
            let start = CVec::from_element(1, C64::new(1.0, 0.0));
            let upd = update_comm_ris(&ch, &bf, &start, one.sigma2, 10_000, true, &opts, &mut rng).unwrap();
            let brute = (0..3600)
                .map(|d| {
                    let w = single_phase(d);
                    (0..one.k).map(|k| sinr(&ch, &w, &bf, k, one.sigma2).unwrap()).fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let monotone = upd.trace.lambdas.windows(2).all(|w| w[1] >= w[0]);
            let sandwich = brute <= upd.gamma2 * (1.0 + 1e-6) && upd.gamma3 <= upd.gamma2 * (1.0 + 1e-6);
            (monotone, stop_ok(&upd.trace), sandwich, upd.gamma3 / brute, upd.failure.is_none())
        })
        .collect();

    let cfg = config(desk());
    let larger: Vec<(bool, bool, bool)> = (0..10u64)
        .into_par_iter()
        .map(|i| {
            let ch = draw(&cfg, 400 + i);
            let mut rng = ChaCha8Rng::seed_from_u64(500 + i);
            let bf = random_beamformers(&mut rng, cfg.m, cfg.k);
            let omega = random_phases(&mut rng, cfg.n);
            let upd = update_comm_ris(&ch, &bf, &omega, cfg.sigma2, 200, true, &opts, &mut rng).unwrap();
            (upd.trace.lambdas.windows(2).all(|w| w[1] >= w[0]), stop_ok(&upd.trace), upd.failure.is_none())
        })
        .collect();

    let monotone = single.iter().all(|r| r.0) && larger.iter().all(|r| r.0);
    let stopped = single.iter().all(|r| r.1) && larger.iter().all(|r| r.1);
    let sandwich = single.iter().all(|r| r.2);
    let ratio = single.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
    let clean = single.iter().all(|r| r.4) && larger.iter().all(|r| r.2);
    let took = start.elapsed();
    verdict(
        monotone && stopped && sandwich && clean && ratio >= 0.98 && took < Duration::from_secs(300),
        format!(
            "monotone {monotone}, stop rule {stopped}, sandwich {sandwich}, solves clean {clean}, worst Γ₃/brute {ratio:.4}, {took:.1?}"
        ),
    )
}

/// Closed-form rank-one case and the single-element exhaustive bound.
fn radar_sdp_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut closed = 0.0f64;
    for n in [1usize, 4, 9, 16] {
        let a = random_phases(&mut rng, n + 1);
        let (_, v) = solve_radar_ris(&RadarRisSystem { q: vec![outer(&a)] }).unwrap();
        let want = ((n + 1) * (n + 1)) as f64;
        closed = closed.max((v - want).abs() / want);
    }
    let cfg = config(ScenarioFile { m: 4, n: 1, k: 1, t: 2, ..ScenarioFile::default() });
    let bounds: Vec<bool> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let ch = draw(&cfg, 600 + i);
            let mut rng = ChaCha8Rng::seed_from_u64(700 + i);
            let r = random_beamformers(&mut rng, cfg.m, 1).r;
            let (_, relaxed) = solve_radar_ris(&build_radar_system(&ch, &r)).unwrap();
            let brute = (0..3600)
                .map(|d| illumination(&ch, &single_phase(d), &r).1)
                .fold(f64::NEG_INFINITY, f64::max);
            relaxed >= brute * (1.0 - 1e-7)
        })
        .collect();
    let bound = bounds.iter().all(|&b| b);
    verdict(
        closed <= 1e-4 && bound,
        format!("closed-form rel err {closed:.1e}, relaxed ≥ exhaustive on {}/20", bounds.iter().filter(|&&b| b).count()),
    )
}

/// Ratio and illumination identities, and SINR against Monte-Carlo.
fn oracle_identities() -> Verdict {
    let cfg = config(ScenarioFile { m: 6, n: 9, k: 3, t: 3, target_angles: Some(vec![-50.0, -10.0, 30.0]), ..desk() });
    let ch = draw(&cfg, 900);
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    let bf = random_beamformers(&mut rng, cfg.m, cfg.k);
    let sys = build_fractional_system(&ch, &bf, cfg.sigma2);
    let radar = build_radar_system(&ch, &bf.r);
    let (mut ratio_err, mut illum_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let omega = random_phases(&mut rng, cfg.n);
        let w = homogenize_comm(&omega);
        for k in 0..cfg.k {
            let direct = sinr(&ch, &omega, &bf, k, cfg.sigma2).unwrap();
            ratio_err = ratio_err.max((sys.ratio(k, &w) - direct).abs() / direct);
        }
        let omega = random_phases(&mut rng, cfg.n);
        let u = homogenize_radar(&omega);
        let (per, _) = illumination(&ch, &omega, &bf.r);
        for (q, p) in radar.q.iter().zip(&per) {
            illum_err = illum_err.max((quad_form(q, &u) - p).abs() / p);
        }
    }

    // Empirical SINR of user 0 from transmitted symbols and receiver noise.
    let omega = random_phases(&mut rng, cfg.n);
    let h = ris_isac::channels::effective_user_channel(&ch, &omega, 0).unwrap();
    let hc: Vec<C64> = (0..bf.k()).map(|k| h.dotc(&bf.comm_beam(k))).collect();
    let hs: Vec<C64> = (0..cfg.m).map(|j| h.dotc(&bf.s.column(j).into_owned())).collect();
    let noise_scale = cfg.sigma2.sqrt();
    let draws = 1_000_000;
    let (mut sig, mut intf) = (0.0, 0.0);
    let cn = |rng: &mut ChaCha8Rng| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    };
    for _ in 0..draws {
        let desired = hc[0] * cn(&mut rng);
        let mut rest = cn(&mut rng) * noise_scale;
        for x in &hc[1..] {
            rest += x * cn(&mut rng);
        }
        for x in &hs {
            rest += x * cn(&mut rng);
        }
        sig += desired.norm_sqr();
        intf += rest.norm_sqr();
    }
    let empirical = sig / intf;
    let exact = sinr(&ch, &omega, &bf, 0, cfg.sigma2).unwrap();
    let mc_err = (empirical - exact).abs() / exact;
    verdict(
        ratio_err <= 1e-9 && illum_err <= 1e-9 && mc_err <= 0.01,
        format!("ratio err {ratio_err:.1e}, illumination err {illum_err:.1e}, Monte-Carlo SINR err {:.3}%", 100.0 * mc_err),
    )
}

fn sweep(setting: Setting, base: ScenarioFile, param: &str, values: Vec<f64>, schemes: Vec<Scheme>) -> SweepResult {
    let spec = SweepSpec { base, setting, param: param.into(), values, trials: 10, schemes, out_dir: None };
    run_sweep(&spec, 0, &DesignOptions::default()).expect("sweep")
}

/// Comm-RIS system against no RIS and sensing-only across Γ.
fn comm_ris_sweep_direction() -> Verdict {
    let start = Instant::now();
    let res = sweep(
        Setting::CommRis,
        desk(),
        "Gamma",
        vec![2.0, 5.0, 8.0],
        vec![Scheme::ProposedP1, Scheme::NoRis, Scheme::SensingOnly],
    );
    let row = |s: Scheme, v: f64| res.summary.iter().find(|r| r.scheme == s && r.value == v).expect("row");
    let mut pass = true;
    let mut parts = Vec::new();
    for v in [2.0, 5.0, 8.0] {
        let (p1, nr, so) = (row(Scheme::ProposedP1, v), row(Scheme::NoRis, v), row(Scheme::SensingOnly, v));
        let gap = p1.mean_illumination_db - so.mean_illumination_db;
        pass &= p1.mean_fairness_sinr > nr.mean_fairness_sinr && gap.abs() <= 4.0;
        parts.push(format!(
            "Γ={v}dB: SINR {:.2} vs {:.2} dB, Q gap {gap:+.2} dB",
            p1.mean_fairness_sinr_db, nr.mean_fairness_sinr_db
        ));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(600);
    verdict(pass, format!("{}; {took:.1?}", parts.join("; ")))
}

/// Dual-RIS system with and without blocked direct target links.
fn dual_ris_sweep_direction() -> Verdict {
    let blocked = sweep(Setting::DualRis, desk(), "T_d", vec![0.0], vec![Scheme::ProposedP2, Scheme::NoRis]);
    let per_trial = |s: Scheme| -> Vec<(usize, f64)> {
        blocked.trials.iter().filter(|r| r.scheme == s).map(|r| (r.trial, r.illumination)).collect()
    };
    let (p2, nr) = (per_trial(Scheme::ProposedP2), per_trial(Scheme::NoRis));
    let wins = p2
        .iter()
        .filter(|(t, q)| nr.iter().find(|(u, _)| u == t).is_some_and(|(_, qn)| q > qn))
        .count();

    let all = [Scheme::ProposedP2, Scheme::NoRis, Scheme::ManualComm, Scheme::ManualRadar, Scheme::ManualBoth];
    let direct = sweep(Setting::DualRis, desk(), "T_d", vec![2.0], all.to_vec());
    let levels: Vec<f64> = all
        .iter()
        .map(|&s| direct.summary.iter().find(|r| r.scheme == s).unwrap().mean_illumination_db)
        .collect();
    let spread = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - levels.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        wins >= 9 && spread <= 3.0,
        format!("blocked: proposed beats no-RIS in {wins}/10 trials; direct: Q spread {spread:.2} dB over {} schemes", all.len()),
    )
}

/// Contract of the Γ loop on both designers.
fn gamma_loop_contract() -> Verdict {
    let cfg = config(ScenarioFile { n_rand: 200, ..desk() });
    let rows: Vec<(bool, bool, bool)> = (0..10u64)
        .into_par_iter()
        .flat_map(|i| {
            let mut c = cfg.clone();
            c.seed = 40 + i;
            let ch = draw(&c, c.seed);
            [Setting::CommRis, Setting::DualRis]
                .into_iter()
                .map(|setting| {
                    let run = || match setting {
                        Setting::CommRis => run_algorithm1(&c, &ch, &DesignOptions::default()).unwrap(),
                        Setting::DualRis => run_algorithm2(&c, &ch, &DesignOptions::default()).unwrap(),
                    };
                    let (a, b) = (run(), run());
                    let (f, _) = fairness_sinr(&ch, a.omega_c.phases(), &a.beamformers, c.sigma2).unwrap();
                    let met = a.termination != Termination::MetTarget || f >= c.gamma * (1.0 - 1e-6);
                    let monotone = a.trace.windows(2).all(|w| w[1].gamma_target >= w[0].gamma_target);
                    let same = a.to_json().unwrap() == b.to_json().unwrap();
                    (met, monotone, same)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let count = |f: fn(&(bool, bool, bool)) -> bool| rows.iter().filter(|r| f(r)).count();
    let (met, mono, same) = (count(|r| r.0), count(|r| r.1), count(|r| r.2));
    let n = rows.len();
    verdict(
        met == n && mono == n && same == n,
        format!("{n} runs: target contract {met}/{n}, Γ trace monotone {mono}/{n}, bit-identical {same}/{n}"),
    )
}

/// Min-rate of a design whose SINR sits exactly at Γ = 5 dB.
fn min_rate_spot() -> Verdict {
    let cfg = config(ScenarioFile { gamma_db: 5.0, ..desk() });
    let ch = draw(&cfg, 11);
    let out = no_ris_design(Setting::CommRis, &cfg, &ch).unwrap();
    let frozen = DesignOptions { freeze_comm_ris: true, ..DesignOptions::default() };
    let alg = run_algorithm1(&cfg, &ch, &frozen).unwrap();
    let want = (1.0 + 10f64.powf(0.5)).log2();
    let at_target = |f: f64| (f - cfg.gamma).abs() <= 1e-4 * cfg.gamma;
    let ok = |r: f64| (r - want).abs() <= 1e-3;
    verdict(
        at_target(out.fairness_sinr) && at_target(alg.fairness_sinr) && ok(out.min_rate) && ok(alg.min_rate),
        format!(
            "no-RIS {:.4} and frozen-RIS {:.4} bps/Hz vs {want:.4} (SINR {:.4} / {:.4} dB)",
            out.min_rate,
            alg.min_rate,
            db(out.fairness_sinr),
            db(alg.fairness_sinr)
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("feasibility preservation", feasibility_preservation),
        ("Dinkelbach suite", dinkelbach_suite),
        ("radar-RIS SDP suite", radar_sdp_suite),
        ("oracle identities", oracle_identities),
        ("comm-RIS sweep direction", comm_ris_sweep_direction),
        ("dual-RIS illumination direction", dual_ris_sweep_direction),
        ("Γ-loop contract", gamma_loop_contract),
        ("min-rate spot value", min_rate_spot),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty() && !filter.iter().any(|s| s == &id.to_string()) {
            continue;
        }
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!("{} criterion {id} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
