//! Inner solvers of the alternating designers: the relaxed beamformer
//! programs, rank-one reconstruction, the Dinkelbach comm-RIS loop, the
//! radar-RIS program and Gaussian randomization.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{complex_normal, effective_user_channels, ula_response, ChannelSet};
use crate::config::{ScenarioConfig, Setting};
use crate::conic::{AffineForm, BlockId, ConicProblem, ConicSolution, Relation, ScalarId, SolveStatus};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, outer, psd_sqrt, quad_form, trace_re, unit_modulus, CMat, CVec, C64};
use crate::metrics::{all_sinrs, BeamformerSet, RadarObjective};

/// Tolerance passed to the conic engine.
pub const SOLVE_TOL: f64 = 1e-7;

/// Relaxed solution of a beamformer program: `R̂`, the relaxed
/// per-user covariances `C̃_k`, the autoscale and the objective value
/// (radar cost `L` or worst-case illumination).
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedBeamformers {
    pub r: CMat,
    pub c_tilde: Vec<CMat>,
    pub tau: f64,
    pub objective: f64,
    /// Effective user channels the SINR rows were built from.
    pub channels: Vec<CVec>,
}

fn element(n: usize, i: usize, j: usize) -> CMat {
    let mut e = CMat::zeros(n, n);
    e[(j, i)] = C64::new(1.0, 0.0);
    e
}

fn check_status(sol: &ConicSolution, what: &str) -> Result<()> {
    match sol.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(Error::Infeasible(format!("{what}: {}", sol.detail))),
        SolveStatus::NumericalFailure => Err(Error::Numerical(format!(
            "{what}: {} (primal residual {:e})",
            sol.detail, sol.primal_residual
        ))),
    }
}

fn user_channels(ch: &ChannelSet, omega_c: &CVec) -> Result<Vec<CVec>> {
    let hs = effective_user_channels(ch, omega_c);
    for (k, h) in hs.iter().enumerate() {
        if h.norm() == 0.0 {
            return Err(Error::DegenerateUser(k));
        }
    }
    Ok(hs)
}

/// Shared part of both beamformer programs, in units where `P_t/M = 1`.
struct BeamformerModel {
    problem: ConicProblem,
    r: BlockId,
    cs: Vec<BlockId>,
    unit: f64,
    gamma: f64,
    sigma2: f64,
}

fn beamformer_model(hs: &[CVec], m: usize, gamma: f64, p_t: f64, sigma2: f64) -> Result<BeamformerModel> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("SINR target must be positive, got {gamma}")));
    }
    let unit = p_t / m as f64;
    let mut p = ConicProblem::new();
    let r = p.add_psd_block("R", m);
    let cs: Vec<_> = (0..hs.len()).map(|k| p.add_psd_block(&format!("C{k}"), m)).collect();
    if !cs.is_empty() {
        let mut terms = vec![(r, 1.0)];
        terms.extend(cs.iter().map(|&c| (c, -1.0)));
        p.add_psd(terms, CMat::zeros(m, m));
    }
    for i in 0..m {
        p.add_linear(AffineForm::trace(r, &element(m, i, i)).add_constant(-1.0), Relation::Eq);
    }
    for (k, h) in hs.iter().enumerate() {
        let gain = h.norm_squared();
        let hh = outer(&h.unscale(gain.sqrt()));
        let row = AffineForm::trace(cs[k], &hh.scale(1.0 + 1.0 / gamma))
            .add_trace(r, &(-hh))
            .add_constant(-sigma2 / (unit * gain));
        p.add_linear(row, Relation::Ge);
    }
    Ok(BeamformerModel { problem: p, r, cs, unit, gamma, sigma2 })
}

/// The objective only sees `R`, so the solver may return any `C̃_k` that
/// clears its SINR row. Each one is shrunk onto its active constraint,
/// which keeps `R` and `R − Σ C̃_k ⪰ 0` and makes every SINR equal `Γ`.
fn unpack_relaxed(model: &BeamformerModel, sol: &ConicSolution, hs: Vec<CVec>) -> RelaxedBeamformers {
    let r = sol.block(model.r).scale(model.unit);
    let share = model.gamma / (1.0 + model.gamma);
    let c_tilde = model
        .cs
        .iter()
        .zip(&hs)
        .map(|(&c, h)| {
            let ck = sol.block(c).scale(model.unit);
            let have = quad_form(&ck, h);
            let need = share * (quad_form(&r, h) + model.sigma2);
            if have > need && need > 0.0 {
                ck.scale(need / have)
            } else {
                ck
            }
        })
        .collect();
    RelaxedBeamformers { r, c_tilde, tau: 0.0, objective: 0.0, channels: hs }
}

/// Relaxed beampattern-matching program: minimize `L(R, τ)` subject to the
/// per-antenna power, SINR and covariance-split constraints.
pub fn solve_beamformer_p1(
    ch: &ChannelSet,
    omega_c: &CVec,
    gamma: f64,
    config: &ScenarioConfig,
    include_ris_beam: bool,
) -> Result<RelaxedBeamformers> {
    let hs = user_channels(ch, omega_c)?;
    let objective = RadarObjective::from_config(config, include_ris_beam);
    solve_matching_program(&hs, ch.m(), gamma, config.p_t, config.sigma2, &objective)
}

/// [`solve_beamformer_p1`] on precomputed effective channels.
pub fn solve_matching_program(
    hs: &[CVec],
    m: usize,
    gamma: f64,
    p_t: f64,
    sigma2: f64,
    objective: &RadarObjective,
) -> Result<RelaxedBeamformers> {
    let (model, tau) = matching_model(hs, m, gamma, p_t, sigma2, objective)?;
    let sol = model.problem.solve(SOLVE_TOL)?;
    check_status(&sol, "beampattern matching program")?;
    let tau_value = sol.scalar(tau) * model.unit;
    let mut out = unpack_relaxed(&model, &sol, hs.to_vec());
    out.tau = tau_value;
    out.objective = objective.cost(&out.r, tau_value).l;
    Ok(out)
}

fn matching_model(
    hs: &[CVec],
    m: usize,
    gamma: f64,
    p_t: f64,
    sigma2: f64,
    objective: &RadarObjective,
) -> Result<(BeamformerModel, ScalarId)> {
    let mut model = beamformer_model(hs, m, gamma, p_t, sigma2)?;
    let p = &mut model.problem;
    let tau = p.add_scalar("tau");
    let t = p.add_scalar("t");
    p.add_linear(AffineForm::scalar(tau, 1.0), Relation::Ge);

    let mut tail = Vec::new();
    let lw = (objective.w_b / objective.grid.len() as f64).sqrt();
    if lw > 0.0 {
        for (&th, &d) in objective.grid.iter().zip(&objective.mask) {
            let a = ula_response(th, m);
            tail.push(AffineForm::trace(model.r, &outer(&a)).add_scalar(tau, -d).scale(lw));
        }
    }
    let nt = objective.correlation_angles.len();
    if nt >= 2 && objective.w_c > 0.0 {
        let cw = (2.0 * objective.w_c / (nt * nt - nt) as f64).sqrt();
        let steer: Vec<CVec> = objective.correlation_angles.iter().map(|&a| ula_response(a, m)).collect();
        for i in 0..nt {
            for j in i + 1..nt {
                let g = &steer[j] * steer[i].adjoint();
                tail.push(AffineForm::trace(model.r, &g).scale(cw));
                tail.push(AffineForm::new().add_trace_imag(model.r, &g).scale(cw));
            }
        }
    }
    if tail.is_empty() {
        tail.push(AffineForm::constant(0.0));
    }
    p.add_soc(AffineForm::scalar(t, 1.0), tail);
    p.minimize(AffineForm::scalar(t, 1.0));
    Ok((model, tau))
}

/// Relaxed max-min illumination program over the target channels `gs`
/// (obtained with the current radar-RIS phases).
pub fn solve_beamformer_p2(
    ch: &ChannelSet,
    omega_c: &CVec,
    omega_r: &CVec,
    gamma: f64,
    config: &ScenarioConfig,
) -> Result<RelaxedBeamformers> {
    let hs = user_channels(ch, omega_c)?;
    let gs = crate::channels::effective_target_channels(ch, omega_r);
    solve_illumination_program(&hs, &gs, ch.m(), gamma, config.p_t, config.sigma2)
}

pub fn solve_illumination_program(
    hs: &[CVec],
    gs: &[CVec],
    m: usize,
    gamma: f64,
    p_t: f64,
    sigma2: f64,
) -> Result<RelaxedBeamformers> {
    let model = illumination_model(hs, gs, m, gamma, p_t, sigma2)?;
    let sol = model.problem.solve(SOLVE_TOL)?;
    check_status(&sol, "illumination program")?;
    let mut out = unpack_relaxed(&model, &sol, hs.to_vec());
    out.objective = gs
        .iter()
        .map(|g| quad_form(&out.r, g))
        .fold(f64::INFINITY, f64::min);
    if gs.is_empty() {
        out.objective = 0.0;
    }
    Ok(out)
}

fn illumination_model(hs: &[CVec], gs: &[CVec], m: usize, gamma: f64, p_t: f64, sigma2: f64) -> Result<BeamformerModel> {
    let mut model = beamformer_model(hs, m, gamma, p_t, sigma2)?;
    let peak = gs.iter().map(|g| g.norm_squared()).fold(0.0, f64::max);
    if peak > 0.0 {
        let terms = gs
            .iter()
            .map(|g| AffineForm::trace(model.r, &outer(g).unscale(peak)))
            .collect();
        let t = model.problem.add_maximin_epigraph(terms)?;
        model.problem.maximize(AffineForm::scalar(t, 1.0));
    }
    Ok(model)
}

/// The unsolved beamformer program of `setting` (scaled so `P_t/M = 1`),
/// e.g. for a CBF dump.
pub fn beamformer_problem(
    setting: Setting,
    ch: &ChannelSet,
    omega_c: &CVec,
    omega_r: &CVec,
    gamma: f64,
    config: &ScenarioConfig,
    include_ris_beam: bool,
) -> Result<ConicProblem> {
    let hs = user_channels(ch, omega_c)?;
    let model = match setting {
        Setting::CommRis => {
            let objective = RadarObjective::from_config(config, include_ris_beam);
            matching_model(&hs, ch.m(), gamma, config.p_t, config.sigma2, &objective)?.0
        }
        Setting::DualRis => {
            let gs = crate::channels::effective_target_channels(ch, omega_r);
            illumination_model(&hs, &gs, ch.m(), gamma, config.p_t, config.sigma2)?
        }
    };
    Ok(model.problem)
}

/// `ĉ = C̃ h / √(h^H C̃ h)`.
pub fn extract_rank1_comm(c_tilde: &CMat, h: &CVec, user: usize) -> Result<CVec> {
    let ch = c_tilde * h;
    let q = h.dotc(&ch).re;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::DegenerateUser(user));
    }
    Ok(ch.unscale(q.sqrt()))
}

/// `Ŝ` with `Ŝ Ŝ^H = R̂ − Σ ĉ_k ĉ_k^H`, via an eigen square root.
pub fn factor_sensing(r: &CMat, comm: &[CVec]) -> Result<CMat> {
    let mut residual = r.clone();
    for c in comm {
        residual -= outer(c);
    }
    let (s, most_negative) = psd_sqrt(&residual);
    let floor = -1e-7 * trace_re(r).abs().max(f64::MIN_POSITIVE);
    if most_negative < floor {
        return Err(Error::Numerical(format!(
            "sensing residual is indefinite (eigenvalue {most_negative:e})"
        )));
    }
    Ok(s)
}

/// Rank-one communication beams and the sensing factor from a relaxed
/// solution.
pub fn construct_beamformers(relaxed: &RelaxedBeamformers) -> Result<BeamformerSet> {
    let m = relaxed.r.nrows();
    let beams = relaxed
        .c_tilde
        .iter()
        .zip(&relaxed.channels)
        .enumerate()
        .map(|(k, (c, h))| extract_rank1_comm(c, h, k))
        .collect::<Result<Vec<_>>>()?;
    let s = factor_sensing(&relaxed.r, &beams)?;
    let c = if beams.is_empty() { CMat::zeros(m, 0) } else { CMat::from_columns(&beams) };
    Ok(BeamformerSet::new(c, s))
}

/// `w = [ω*; 1]`.
pub fn homogenize_comm(omega_c: &CVec) -> CVec {
    let n = omega_c.len();
    CVec::from_fn(n + 1, |i, _| if i < n { omega_c[i].conj() } else { C64::new(1.0, 0.0) })
}

pub fn comm_phases(w: &CVec) -> CVec {
    let n = w.len() - 1;
    CVec::from_fn(n, |i, _| w[i].conj())
}

/// `u = [1; ω*]`.
pub fn homogenize_radar(omega_r: &CVec) -> CVec {
    let n = omega_r.len();
    CVec::from_fn(n + 1, |i, _| if i == 0 { C64::new(1.0, 0.0) } else { omega_r[i - 1].conj() })
}

pub fn radar_phases(u: &CVec) -> CVec {
    CVec::from_fn(u.len() - 1, |i, _| u[i + 1].conj())
}

/// Per-user matrices of the homogenized SINR ratio
/// `w^H A_k w / (w^H B_k w + σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalSystem {
    pub a: Vec<CMat>,
    pub b: Vec<CMat>,
    pub sigma2: f64,
}

impl FractionalSystem {
    pub fn dim(&self) -> usize {
        self.a.first().map_or(0, |a| a.nrows())
    }

    pub fn ratio(&self, k: usize, w: &CVec) -> f64 {
        quad_form(&self.a[k], w) / (quad_form(&self.b[k], w) + self.sigma2)
    }

    /// `min_k Tr(A_k W) / (Tr(B_k W) + σ²)`.
    pub fn min_ratio(&self, w: &CMat) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| crate::linalg::trace_prod_re(a, w) / (crate::linalg::trace_prod_re(b, w) + self.sigma2))
            .fold(f64::INFINITY, f64::min)
    }

    /// `min_k Tr(A_k W) − λ (Tr(B_k W) + σ²)`.
    pub fn parametric_value(&self, w: &CMat, lambda: f64) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| {
                crate::linalg::trace_prod_re(a, w) - lambda * (crate::linalg::trace_prod_re(b, w) + self.sigma2)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// `[diag(h_ru,k^H) H_br x; h_bu,k^H x]`.
fn cascade_coefficients(ch: &ChannelSet, k: usize, x: &CVec) -> CVec {
    let n = ch.n();
    let via = &ch.h_br * x;
    CVec::from_fn(n + 1, |i, _| {
        if i < n {
            ch.h_ru[k][i].conj() * via[i]
        } else {
            ch.h_bu[k].dotc(x)
        }
    })
}

pub fn build_fractional_system(ch: &ChannelSet, bf: &BeamformerSet, sigma2: f64) -> FractionalSystem {
    let dim = ch.n() + 1;
    let k_users = bf.k();
    let mut a = Vec::with_capacity(k_users);
    let mut b = Vec::with_capacity(k_users);
    for k in 0..k_users {
        let mut bk = CMat::zeros(dim, dim);
        let mut ak = CMat::zeros(dim, dim);
        for j in 0..k_users {
            let v = cascade_coefficients(ch, k, &bf.comm_beam(j));
            if j == k {
                ak = outer(&v);
            } else {
                bk += outer(&v);
            }
        }
        for col in bf.s.column_iter() {
            let v = cascade_coefficients(ch, k, &col.into_owned());
            bk += outer(&v);
        }
        a.push(ak);
        b.push(bk);
    }
    FractionalSystem { a, b, sigma2 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DinkelbachOptions {
    /// Stop once `‖W^(t) − W^(t−1)‖_F` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Stop once the inner optimum falls below this multiple of `σ²`.
    pub inner_tol: f64,
}

impl Default for DinkelbachOptions {
    fn default() -> Self {
        DinkelbachOptions { tol: 1e-4, max_iter: 30, inner_tol: 1e-5 }
    }
}

/// Per-step record of the Dinkelbach loop. `lambdas[0]` belongs to the
/// initial point; the other fields start at step 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachTrace {
    pub lambdas: Vec<f64>,
    /// Inner optimum `min_k Tr(A_k W) − λ(Tr(B_k W) + σ²)`.
    pub inner_values: Vec<f64>,
    pub w_changes: Vec<f64>,
}

impl DinkelbachTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "lambda", "inner_value", "w_change"])?;
        for (i, lambda) in self.lambdas.iter().enumerate() {
            let step = |v: &[f64]| match i.checked_sub(1).and_then(|j| v.get(j)) {
                Some(x) => format!("{x:e}"),
                None => String::new(),
            };
            w.write_record([
                i.to_string(),
                format!("{lambda:e}"),
                step(&self.inner_values),
                step(&self.w_changes),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DinkelbachResult {
    pub w: CMat,
    /// Final λ, the relaxed max-min SINR.
    pub gamma2: f64,
    pub trace: DinkelbachTrace,
    /// Set when an inner solve failed; `w` and `gamma2` are then the last
    /// accepted iterate.
    pub failure: Option<String>,
}

/// Relaxed generalized-fractional max-min over `W ⪰ 0, diag(W) = 1`,
/// started from the homogenized incumbent `w0`.
pub fn dinkelbach_maximin(system: &FractionalSystem, w0: &CVec, opts: &DinkelbachOptions) -> Result<DinkelbachResult> {
    if system.a.is_empty() {
        return Err(Error::Domain("Dinkelbach loop needs at least one user".into()));
    }
    let dim = system.dim();
    if w0.len() != dim {
        return Err(Error::Domain(format!("initial vector has length {}, expected {dim}", w0.len())));
    }
    let s2 = system.sigma2;
    let scaled = FractionalSystem {
        a: system.a.iter().map(|a| a.unscale(s2)).collect(),
        b: system.b.iter().map(|b| b.unscale(s2)).collect(),
        sigma2: 1.0,
    };
    let load = 1e-6;
    let mut w = (outer(w0) + CMat::identity(dim, dim).scale(load)).unscale(1.0 + load);
    let mut lambda = scaled.min_ratio(&w);
    let mut trace = DinkelbachTrace { lambdas: vec![lambda], ..Default::default() };
    let mut failure = None;

    for _ in 0..opts.max_iter {
        let (w_next, inner) = match dinkelbach_step(&scaled, lambda) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let next_lambda = scaled.min_ratio(&w_next);
        let change = crate::linalg::frobenius(&(&w_next - &w));
        if next_lambda < lambda {
            // Keep the monotone sequence; the step did not improve.
            trace.lambdas.push(lambda);
            trace.inner_values.push(inner * s2);
            trace.w_changes.push(0.0);
            break;
        }
        w = w_next;
        lambda = next_lambda;
        trace.lambdas.push(lambda);
        trace.inner_values.push(inner * s2);
        trace.w_changes.push(change);
        if inner.abs() <= opts.inner_tol || change <= opts.tol {
            break;
        }
    }
    Ok(DinkelbachResult { w, gamma2: lambda, trace, failure })
}

/// One inner program; returns the maximizer and its value at `lambda`
/// (in the scaled system).
fn dinkelbach_step(system: &FractionalSystem, lambda: f64) -> Result<(CMat, f64)> {
    let dim = system.dim();
    let mut p = ConicProblem::new();
    let wb = p.add_psd_block("W", dim);
    for i in 0..dim {
        p.add_linear(AffineForm::trace(wb, &element(dim, i, i)).add_constant(-1.0), Relation::Eq);
    }
    let mats: Vec<CMat> = system.a.iter().zip(&system.b).map(|(a, b)| a - b.scale(lambda)).collect();
    let peak = mats
        .iter()
        .flat_map(|m| m.iter().map(|z| z.norm()))
        .fold(lambda * system.sigma2, f64::max)
        .max(f64::MIN_POSITIVE);
    let terms = mats
        .iter()
        .map(|m| AffineForm::trace(wb, &m.unscale(peak)).add_constant(-lambda * system.sigma2 / peak))
        .collect();
    let t = p.add_maximin_epigraph(terms)?;
    p.maximize(AffineForm::scalar(t, 1.0));
    let sol = p.solve(SOLVE_TOL)?;
    check_status(&sol, "Dinkelbach inner program")?;
    let w = sol.block(wb).clone();
    Ok((w.clone(), system.parametric_value(&w, lambda)))
}

/// Gaussian randomization: draws `ξ ~ CN(0, V)`, rotates so that entry
/// `pivot` is real and positive, projects to unit modulus and keeps the
/// first best-scoring candidate. `incumbent`, if given, is candidate 0.
pub fn randomize_phase<R, F>(
    v: &CMat,
    n_rand: usize,
    pivot: usize,
    incumbent: Option<&CVec>,
    rng: &mut R,
    mut score: F,
) -> (CVec, f64)
where
    R: Rng + ?Sized,
    F: FnMut(&CVec) -> f64,
{
    let dim = v.nrows();
    let (factor, _) = psd_sqrt(v);
    let normalize = |x: &CVec| -> CVec {
        let p = x[pivot];
        let rot = if p.norm() > 0.0 { p.conj() / p.norm() } else { C64::new(1.0, 0.0) };
        let mut out = unit_modulus(&x.map(|z| z * rot));
        out[pivot] = C64::new(1.0, 0.0);
        out
    };
    let mut best: Option<(CVec, f64)> = None;
    if let Some(inc) = incumbent {
        let cand = normalize(inc);
        let s = score(&cand);
        best = Some((cand, s));
    }
    for _ in 0..n_rand.max(1) {
        let z = CVec::from_fn(dim, |_, _| complex_normal(rng));
        let cand = normalize(&(&factor * z));
        let s = score(&cand);
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((cand, s));
        }
    }
    best.expect("at least one candidate")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommRisUpdate {
    pub omega: CVec,
    pub gamma2: f64,
    pub gamma3: f64,
    pub trace: DinkelbachTrace,
    /// Copied from [`DinkelbachResult::failure`].
    pub failure: Option<String>,
}

/// Dinkelbach plus randomization for the comm-RIS with beamformers fixed.
/// The score is the fairness SINR of the actual system.
#[allow(clippy::too_many_arguments)]
pub fn update_comm_ris<R: Rng + ?Sized>(
    ch: &ChannelSet,
    bf: &BeamformerSet,
    omega_c: &CVec,
    sigma2: f64,
    n_rand: usize,
    keep_incumbent: bool,
    opts: &DinkelbachOptions,
    rng: &mut R,
) -> Result<CommRisUpdate> {
    let system = build_fractional_system(ch, bf, sigma2);
    let w0 = homogenize_comm(omega_c);
    let dk = dinkelbach_maximin(&system, &w0, opts)?;
    if let Some(f) = &dk.failure {
        log::warn!("Dinkelbach stopped early: {f}");
    }
    let pivot = ch.n();
    let score = |w: &CVec| {
        all_sinrs(ch, &comm_phases(w), bf, sigma2)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    };
    let (w, gamma3) = randomize_phase(&dk.w, n_rand, pivot, keep_incumbent.then_some(&w0), rng, score);
    if gamma3 > dk.gamma2 * (1.0 + 1e-6) + 1e-12 {
        log::warn!("randomized SINR {gamma3:e} exceeds relaxed bound {:e}", dk.gamma2);
    }
    Ok(CommRisUpdate { omega: comm_phases(&w), gamma2: dk.gamma2, gamma3, trace: dk.trace, failure: dk.failure })
}

/// `Q_m` such that `u^H Q_m u` is the illumination of target `m` for
/// `u = [1; ω_r*]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarRisSystem {
    pub q: Vec<CMat>,
}

impl RadarRisSystem {
    pub fn illumination(&self, u: &CVec) -> f64 {
        self.q.iter().map(|q| quad_form(q, u)).fold(f64::INFINITY, f64::min)
    }
}

pub fn build_radar_system(ch: &ChannelSet, r: &CMat) -> RadarRisSystem {
    let (n, m) = (ch.n(), ch.m());
    let q = (0..ch.t())
        .map(|t| {
            // Rows: g_bt^H, then diag(g_rt^*) G_br.
            let f = CMat::from_fn(n + 1, m, |i, j| {
                if i == 0 {
                    ch.g_bt[t][j].conj()
                } else {
                    ch.g_rt[t][i - 1].conj() * ch.g_br[(i - 1, j)]
                }
            });
            &f * r * f.adjoint()
        })
        .collect();
    RadarRisSystem { q }
}

/// `max min_m Tr(Q_m U)` over `U ⪰ 0, diag(U) = 1`; returns the relaxed
/// maximizer and optimum.
pub fn solve_radar_ris(system: &RadarRisSystem) -> Result<(CMat, f64)> {
    let dim = system
        .q
        .first()
        .map(|q| q.nrows())
        .ok_or_else(|| Error::Domain("radar-RIS program needs at least one target".into()))?;
    let mut p = ConicProblem::new();
    let ub = p.add_psd_block("U", dim);
    for i in 0..dim {
        p.add_linear(AffineForm::trace(ub, &element(dim, i, i)).add_constant(-1.0), Relation::Eq);
    }
    let peak = system
        .q
        .iter()
        .flat_map(|q| q.iter().map(|z| z.norm()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let terms = system.q.iter().map(|q| AffineForm::trace(ub, &q.unscale(peak))).collect();
    let t = p.add_maximin_epigraph(terms)?;
    p.maximize(AffineForm::scalar(t, 1.0));
    let sol = p.solve(SOLVE_TOL)?;
    check_status(&sol, "radar-RIS program")?;
    let u = sol.block(ub).clone();
    let value = system
        .q
        .iter()
        .map(|q| crate::linalg::trace_prod_re(q, &u))
        .fold(f64::INFINITY, f64::min);
    Ok((u, value))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarRisUpdate {
    pub omega: CVec,
    pub relaxed_bound: f64,
    pub illumination: f64,
}

pub fn update_radar_ris<R: Rng + ?Sized>(
    ch: &ChannelSet,
    r: &CMat,
    omega_r: &CVec,
    n_rand: usize,
    keep_incumbent: bool,
    rng: &mut R,
) -> Result<RadarRisUpdate> {
    let system = build_radar_system(ch, r);
    let (u, bound) = solve_radar_ris(&system)?;
    let u0 = homogenize_radar(omega_r);
    let (best, value) = randomize_phase(&u, n_rand, 0, keep_incumbent.then_some(&u0), rng, |u| {
        system.illumination(u)
    });
    Ok(RadarRisUpdate { omega: radar_phases(&best), relaxed_bound: bound, illumination: value })
}

/// Share of the trace carried by the dominant eigenvalue.
pub fn rank_one_ratio(x: &CMat) -> f64 {
    let (vals, _) = hermitian_eigen(x);
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    if total > 0.0 {
        vals.last().copied().unwrap_or(0.0) / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{assemble_scenario, effective_target_channels};
    use crate::config::ScenarioFile;
    use crate::linalg::{c, frobenius, min_eigenvalue};
    use crate::metrics::{fairness_sinr, illumination, sinr};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn config(m: usize, n: usize, k: usize, t: usize) -> ScenarioConfig {
        let angles = [-50.0, -10.0, 30.0, 60.0];
        let f = ScenarioFile {
            m,
            n,
            k,
            t,
            k_d: Some(k),
            t_d: Some(t),
            target_angles: Some(angles[..t].to_vec()),
            ..ScenarioFile::default()
        };
        f.into_config().unwrap()
    }

    fn scenario(cfg: &ScenarioConfig, seed: u64) -> ChannelSet {
        assemble_scenario(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
    }

    fn rand_psd(rng: &mut ChaCha8Rng, n: usize) -> CMat {
        let f = CMat::from_fn(n, n, |_, _| complex_normal(rng));
        &f * f.adjoint()
    }

    #[test]
    fn p1_single_antenna_tau_closed_form() {
        let mut cfg = config(1, 4, 0, 2);
        cfg.p_t = 2.0;
        let ch = scenario(&cfg, 1);
        let out = solve_beamformer_p1(&ch, &CVec::from_element(4, c(1.0, 0.0)), cfg.gamma, &cfg, true).unwrap();
        let obj = RadarObjective::from_config(&cfg, true);
        let want = cfg.p_t * obj.mask.iter().sum::<f64>() / obj.mask.iter().map(|d| d * d).sum::<f64>();
        assert!((out.tau - want).abs() < 1e-6 * want, "{} vs {want}", out.tau);
        assert!((out.r[(0, 0)].re - 2.0).abs() < 1e-6);
    }

    #[test]
    fn p1_vanishing_sinr_target_matches_no_user_optimum() {
        let cfg1 = config(4, 4, 1, 2);
        let ch1 = scenario(&cfg1, 2);
        let ones = CVec::from_element(4, c(1.0, 0.0));
        let with_user = solve_beamformer_p1(&ch1, &ones, 1e-9, &cfg1, true).unwrap();
        let cfg0 = config(4, 4, 0, 2);
        let ch0 = scenario(&cfg0, 2);
        let alone = solve_beamformer_p1(&ch0, &ones, 1e-9, &cfg0, true).unwrap();
        assert!(
            (with_user.objective - alone.objective).abs() <= 1e-6 * alone.objective.max(1e-12),
            "{} vs {}",
            with_user.objective,
            alone.objective
        );
    }

    #[test]
    fn p1_constraints_hold() {
        let cfg = config(6, 4, 2, 2);
        let ch = scenario(&cfg, 3);
        let omega = CVec::from_element(4, c(1.0, 0.0));
        let out = solve_beamformer_p1(&ch, &omega, cfg.gamma, &cfg, true).unwrap();
        let unit = cfg.p_t / cfg.m as f64;
        for i in 0..cfg.m {
            assert!((out.r[(i, i)].re - unit).abs() < 1e-6 * unit);
        }
        let mut split = out.r.clone();
        for c in &out.c_tilde {
            split -= c;
            assert!(min_eigenvalue(c) >= -1e-7 * cfg.p_t);
        }
        assert!(min_eigenvalue(&split) >= -1e-7 * cfg.p_t);
        for (k, h) in out.channels.iter().enumerate() {
            let sig = quad_form(&out.c_tilde[k], h);
            let total = quad_form(&out.r, h);
            let lhs = (1.0 + 1.0 / cfg.gamma) * sig;
            assert!(lhs >= (total + cfg.sigma2) * (1.0 - 1e-6));
        }
    }

    #[test]
    fn degenerate_user_is_named() {
        let mut cfg = config(4, 4, 2, 2);
        cfg.k_d = 1;
        let ch = scenario(&cfg, 4).without_ris();
        let err = solve_beamformer_p1(&ch, &CVec::from_element(4, c(1.0, 0.0)), cfg.gamma, &cfg, true).unwrap_err();
        assert!(matches!(err, Error::DegenerateUser(1)), "{err:?}");
    }

    #[test]
    fn p2_dominates_steering_heuristic() {
        let cfg = config(4, 4, 0, 1);
        let ch = scenario(&cfg, 5);
        let omega = CVec::from_element(4, c(1.0, 0.0));
        let out = solve_beamformer_p2(&ch, &omega, &omega, cfg.gamma, &cfg).unwrap();
        let g = &effective_target_channels(&ch, &omega)[0];
        // a(θ)a(θ)^H already has diagonal 1, so (P_t/M) a a^H is feasible.
        let a = ula_response(cfg.target_angles[0], cfg.m);
        let heuristic = outer(&a).scale(cfg.p_t / cfg.m as f64);
        assert!(out.objective >= quad_form(&heuristic, g) * (1.0 - 1e-6));
    }

    #[test]
    fn p2_symmetric_targets_equal_power() {
        let cfg = config(4, 4, 1, 2);
        let mut ch = scenario(&cfg, 6);
        ch.g_bt[1] = ch.g_bt[0].clone();
        ch.g_rt[1] = ch.g_rt[0].clone();
        let omega = CVec::from_element(4, c(1.0, 0.0));
        let out = solve_beamformer_p2(&ch, &omega, &omega, cfg.gamma, &cfg).unwrap();
        let (per, _) = illumination(&ch, &omega, &out.r);
        assert!((per[0] - per[1]).abs() < 1e-6 * per[0]);
    }

    #[test]
    fn p2_infeasible_target() {
        let mut cfg = config(4, 4, 2, 2);
        cfg.p_t = 1e-9;
        let ch = scenario(&cfg, 7);
        let omega = CVec::from_element(4, c(1.0, 0.0));
        let err = solve_beamformer_p2(&ch, &omega, &omega, 1e6, &cfg).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err:?}");
    }

    #[test]
    fn rank1_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = CVec::from_fn(3, |_, _| complex_normal(&mut rng));
        let h = CVec::from_fn(3, |_, _| complex_normal(&mut rng));
        let got = extract_rank1_comm(&outer(&v), &h, 0).unwrap();
        assert!(frobenius(&(outer(&got) - outer(&v))) < 1e-10);

        let hn = h.unscale(h.norm());
        let got = extract_rank1_comm(&CMat::identity(3, 3), &hn, 0).unwrap();
        assert!((got - &hn).norm() < 1e-12);

        for _ in 0..20 {
            let ct = rand_psd(&mut rng, 4);
            let h = CVec::from_fn(4, |_, _| complex_normal(&mut rng));
            let cb = extract_rank1_comm(&ct, &h, 0).unwrap();
            let want = quad_form(&ct, &h);
            assert!((quad_form(&outer(&cb), &h) - want).abs() < 1e-10 * want);
            assert!(min_eigenvalue(&(&ct - outer(&cb))) >= -1e-8 * crate::linalg::trace_re(&ct));
        }
        assert!(matches!(
            extract_rank1_comm(&CMat::identity(3, 3), &CVec::zeros(3), 2),
            Err(Error::DegenerateUser(2))
        ));
    }

    #[test]
    fn factor_examples() {
        let r = CMat::identity(3, 3);
        let beam = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let s = factor_sensing(&outer(&beam), std::slice::from_ref(&beam)).unwrap();
        assert!(frobenius(&s) < 1e-12);
        let s = factor_sensing(&r, &[]).unwrap();
        assert!(frobenius(&(&s * s.adjoint() - &r)) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = CMat::from_fn(4, 2, |_, _| complex_normal(&mut rng));
        let resid = &f * f.adjoint();
        let s = factor_sensing(&resid, &[]).unwrap();
        assert!(frobenius(&(&s * s.adjoint() - &resid)) < 1e-10 * frobenius(&resid));

        let bad = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(-0.5, 0.0)]));
        assert!(matches!(factor_sensing(&bad, &[]), Err(Error::Numerical(_))));
    }

    #[test]
    fn fractional_ratio_identity() {
        let cfg = config(4, 4, 3, 2);
        let ch = scenario(&cfg, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cm = CMat::from_fn(4, 3, |_, _| complex_normal(&mut rng)).scale(0.3);
        let s = CMat::from_fn(4, 4, |_, _| complex_normal(&mut rng)).scale(0.2);
        let bf = BeamformerSet::new(cm, s);
        let sys = build_fractional_system(&ch, &bf, cfg.sigma2);
        for a in &sys.a {
            let (vals, _) = hermitian_eigen(a);
            assert!(vals[..vals.len() - 1].iter().all(|v| v.abs() <= 1e-9 * vals[vals.len() - 1]));
        }
        for _ in 0..100 {
            let omega = random_unit(&mut rng, 4);
            let w = homogenize_comm(&omega);
            for k in 0..3 {
                let direct = sinr(&ch, &omega, &bf, k, cfg.sigma2).unwrap();
                assert!((sys.ratio(k, &w) - direct).abs() <= 1e-9 * direct);
            }
        }
    }

    #[test]
    fn fractional_single_user_no_sensing_has_zero_interference() {
        let cfg = config(4, 4, 1, 2);
        let ch = scenario(&cfg, 12);
        let bf = BeamformerSet::new(CMat::from_element(4, 1, c(0.5, 0.0)), CMat::zeros(4, 4));
        let sys = build_fractional_system(&ch, &bf, cfg.sigma2);
        assert_eq!(sys.b[0], CMat::zeros(5, 5));
    }

    #[test]
    fn dinkelbach_constant_ratio() {
        let n1 = 5;
        let sigma2 = 0.25;
        let sys = FractionalSystem {
            a: vec![CMat::identity(n1, n1), CMat::identity(n1, n1)],
            b: vec![CMat::zeros(n1, n1), CMat::zeros(n1, n1)],
            sigma2,
        };
        let w0 = homogenize_comm(&CVec::from_element(n1 - 1, c(1.0, 0.0)));
        let res = dinkelbach_maximin(&sys, &w0, &DinkelbachOptions::default()).unwrap();
        let want = n1 as f64 / sigma2;
        assert!((res.gamma2 - want).abs() < 1e-6 * want);
        assert_eq!(res.trace.lambdas.len(), 2);
    }

    fn one_element_brute_force(sys: &FractionalSystem) -> f64 {
        (0..3600)
            .map(|i| {
                let omega = CVec::from_element(1, C64::from_polar(1.0, (i as f64 * 0.1).to_radians()));
                let w = homogenize_comm(&omega);
                (0..sys.a.len()).map(|k| sys.ratio(k, &w)).fold(f64::INFINITY, f64::min)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn dinkelbach_sandwich_single_element() {
        let cfg = config(4, 1, 1, 2);
        for seed in 0..5 {
            let ch = scenario(&cfg, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bf = BeamformerSet::new(
                CMat::from_fn(4, 1, |_, _| complex_normal(&mut rng)).scale(0.3),
                CMat::from_fn(4, 4, |_, _| complex_normal(&mut rng)).scale(0.1),
            );
            let omega = CVec::from_element(1, c(1.0, 0.0));
            let upd = update_comm_ris(&ch, &bf, &omega, cfg.sigma2, 2000, true, &DinkelbachOptions::default(), &mut rng)
                .unwrap();
            let sys = build_fractional_system(&ch, &bf, cfg.sigma2);
            let brute = one_element_brute_force(&sys);
            assert!(brute <= upd.gamma2 * (1.0 + 1e-6), "{brute} > {}", upd.gamma2);
            assert!(upd.gamma3 <= upd.gamma2 * (1.0 + 1e-6));
            assert!(upd.gamma3 >= brute * 0.98);
            assert!(upd.trace.lambdas.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        }
    }

    #[test]
    fn dinkelbach_monotone_four_users() {
        let cfg = config(6, 9, 4, 2);
        let ch = scenario(&cfg, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let bf = BeamformerSet::new(
            CMat::from_fn(6, 4, |_, _| complex_normal(&mut rng)).scale(0.2),
            CMat::from_fn(6, 6, |_, _| complex_normal(&mut rng)).scale(0.05),
        );
        let sys = build_fractional_system(&ch, &bf, cfg.sigma2);
        let w0 = homogenize_comm(&CVec::from_element(9, c(1.0, 0.0)));
        let res = dinkelbach_maximin(&sys, &w0, &DinkelbachOptions::default()).unwrap();
        assert!(res.failure.is_none());
        assert!(res.trace.lambdas.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        assert!(res.trace.lambdas.len() >= 2);
        for i in 0..10 {
            assert!((res.w[(i, i)].re - 1.0).abs() < 1e-6);
        }
        assert!(min_eigenvalue(&res.w) >= -1e-6);
        let last_inner = *res.trace.inner_values.last().unwrap();
        let last_change = *res.trace.w_changes.last().unwrap();
        assert!(last_inner.abs() <= 1e-5 * cfg.sigma2 || last_change <= 1e-4 || res.trace.lambdas.len() > 30);
        let dir = tempfile::tempdir().unwrap();
        res.trace.write_csv(&dir.path().join("dk.csv")).unwrap();
    }

    #[test]
    fn randomization_rank_one_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let v = random_unit(&mut rng, 5);
        let vv = outer(&v);
        let target = v.map(|z| z * v[4].conj());
        let (best, score) = randomize_phase(&vv, 50, 4, None, &mut rng, |x| {
            -(x - &target).norm()
        });
        assert!((best - &target).norm() < 1e-6);
        assert!(score > -1e-6);
    }

    #[test]
    fn randomization_unit_modulus_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let v = rand_psd(&mut rng, 4);
        let d = v.diagonal().map(|z| 1.0 / z.re.sqrt());
        let v = CMat::from_fn(4, 4, |i, j| v[(i, j)] * d[i] * d[j]);
        let q = rand_psd(&mut rng, 4);
        let score = |x: &CVec| quad_form(&q, x);
        let mut prev = f64::NEG_INFINITY;
        for n in [1, 10, 100, 1000] {
            let mut r = ChaCha8Rng::seed_from_u64(17);
            let (best, s) = randomize_phase(&v, n, 0, None, &mut r, score);
            assert!(best.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            assert_eq!(best[0], c(1.0, 0.0));
            assert!((s - score(&best)).abs() < 1e-12);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn randomization_single_phase_near_grid_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let q = rand_psd(&mut rng, 2);
        let sys = RadarRisSystem { q: vec![q.clone()] };
        let (u, _) = solve_radar_ris(&sys).unwrap();
        let (_, s) = randomize_phase(&u, 10_000, 0, None, &mut rng, |x| quad_form(&q, x));
        let grid = (0..3600)
            .map(|i| {
                let u = homogenize_radar(&CVec::from_element(1, C64::from_polar(1.0, (i as f64 * 0.1).to_radians())));
                quad_form(&q, &u)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(s >= 0.99 * grid);
    }

    #[test]
    fn radar_system_identity() {
        let cfg = config(4, 9, 1, 3);
        let ch = scenario(&cfg, 19);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let r = rand_psd(&mut rng, 4);
        let sys = build_radar_system(&ch, &r);
        for _ in 0..100 {
            let omega = random_unit(&mut rng, 9);
            let u = homogenize_radar(&omega);
            let (per, _) = illumination(&ch, &omega, &r);
            for (q, p) in sys.q.iter().zip(&per) {
                assert!((quad_form(q, &u) - p).abs() <= 1e-9 * p);
            }
        }
    }

    #[test]
    fn radar_system_edge_cases() {
        let cfg = config(4, 4, 1, 2);
        let mut ch = scenario(&cfg, 21);
        ch.g_rt[0].fill(c(0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let r = rand_psd(&mut rng, 4);
        let sys = build_radar_system(&ch, &r);
        let q0 = &sys.q[0];
        assert!((q0[(0, 0)].re - quad_form(&r, &ch.g_bt[0])).abs() < 1e-12 * q0[(0, 0)].re.max(1e-300));
        let rest: f64 = q0.iter().skip(1).map(|z| z.norm()).sum();
        assert!(rest == 0.0 || rest < 1e-30);
        let zero = build_radar_system(&ch, &CMat::zeros(4, 4));
        assert!(zero.q.iter().all(|q| q.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn radar_ris_closed_form_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let q = random_unit(&mut rng, 6);
        let sys = RadarRisSystem { q: vec![outer(&q)] };
        let (_, v) = solve_radar_ris(&sys).unwrap();
        assert!((v - 36.0).abs() < 1e-4 * 36.0, "{v}");

        let eye = RadarRisSystem { q: vec![CMat::identity(5, 5), CMat::identity(5, 5)] };
        let (_, v) = solve_radar_ris(&eye).unwrap();
        assert!((v - 5.0).abs() < 1e-6);
    }

    #[test]
    fn radar_ris_upper_bounds_phase_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..5 {
            let sys = RadarRisSystem { q: vec![rand_psd(&mut rng, 2), rand_psd(&mut rng, 2)] };
            let (_, v) = solve_radar_ris(&sys).unwrap();
            let grid = (0..3600)
                .map(|i| {
                    let u = homogenize_radar(&CVec::from_element(1, C64::from_polar(1.0, (i as f64 * 0.1).to_radians())));
                    sys.illumination(&u)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(v >= grid * (1.0 - 1e-7));
        }
    }

    #[test]
    fn pipeline_preserves_feasibility_and_objective() {
        let cfg = config(6, 4, 2, 2);
        let omega = CVec::from_element(4, c(1.0, 0.0));
        for seed in 0..3 {
            let ch = scenario(&cfg, 200 + seed);
            let relaxed = solve_beamformer_p1(&ch, &omega, cfg.gamma, &cfg, true).unwrap();
            let bf = construct_beamformers(&relaxed).unwrap();
            assert!(frobenius(&(&bf.r - &relaxed.r)) <= 1e-7 * frobenius(&relaxed.r));
            let (f, _) = fairness_sinr(&ch, &omega, &bf, cfg.sigma2).unwrap();
            assert!(f >= cfg.gamma * (1.0 - 1e-6), "{f} < {}", cfg.gamma);
            let l = RadarObjective::from_config(&cfg, true).cost(&bf.r, relaxed.tau).l;
            assert!((l - relaxed.objective).abs() <= 1e-6 * relaxed.objective);
        }
    }

    #[test]
    fn full_grid_correlation_objective_matches_cost() {
        let mut cfg = config(6, 4, 2, 2);
        cfg.grid = (-9..=9).map(|i| 10.0 * i as f64).collect();
        cfg.crosscorr_full_grid = true;
        let ch = scenario(&cfg, 210);
        let omega = CVec::from_element(4, c(1.0, 0.0));
        let relaxed = solve_beamformer_p1(&ch, &omega, cfg.gamma, &cfg, true).unwrap();
        let cost = RadarObjective::from_config(&cfg, true).cost(&relaxed.r, relaxed.tau);
        assert!((cost.l - relaxed.objective).abs() <= 1e-6 * relaxed.objective);
        assert!(cost.l2 > 0.0);
    }
}
