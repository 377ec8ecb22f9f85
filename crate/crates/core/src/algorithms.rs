//! Alternating designers for the comm-RIS and dual-RIS systems, and the
//! baseline schemes they are compared against.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{ura_response, ChannelSet, RisProfile, RisRole};
use crate::config::{ScenarioConfig, Setting};
use crate::error::{Error, Result};
use crate::linalg::{unit_modulus, CMat, CVec, C64};
use crate::metrics::{all_sinrs, illumination, rate_from_sinr, BeamformerSet, RadarCostBreakdown, RadarObjective};
use crate::subsolvers::{
    construct_beamformers, solve_beamformer_p1, solve_beamformer_p2, solve_matching_program, update_comm_ris,
    update_radar_ris, DinkelbachOptions, DinkelbachTrace, RelaxedBeamformers,
};

/// Relative slack when comparing an achieved SINR against its target.
pub const TARGET_SLACK: f64 = 1e-6;

/// Steps of geometric backtracking after an infeasible raised target.
pub const MAX_BACKTRACKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ProposedP1,
    ProposedP2,
    NoRis,
    ManualComm,
    ManualRadar,
    ManualBoth,
    SensingOnly,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::ProposedP1,
        Scheme::ProposedP2,
        Scheme::NoRis,
        Scheme::ManualComm,
        Scheme::ManualRadar,
        Scheme::ManualBoth,
        Scheme::SensingOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ProposedP1 => "proposed-p1",
            Scheme::ProposedP2 => "proposed-p2",
            Scheme::NoRis => "no-ris",
            Scheme::ManualComm => "manual-comm",
            Scheme::ManualRadar => "manual-radar",
            Scheme::ManualBoth => "manual-both",
            Scheme::SensingOnly => "sensing-only",
        }
    }

    /// Whether the scheme exists in `setting`. Radar-RIS schemes need the
    /// dual-RIS system and each proposed designer belongs to one setting.
    pub fn available_in(self, setting: Setting) -> bool {
        match self {
            Scheme::ProposedP1 => setting == Setting::CommRis,
            Scheme::ProposedP2 | Scheme::ManualRadar | Scheme::ManualBoth => setting == Setting::DualRis,
            Scheme::NoRis | Scheme::ManualComm | Scheme::SensingOnly => true,
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MetTarget,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    /// Offer the current phases as randomization candidate 0.
    pub keep_incumbent: bool,
    pub freeze_comm_ris: bool,
    pub freeze_radar_ris: bool,
    pub max_backtracks: usize,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            keep_incumbent: true,
            freeze_comm_ris: false,
            freeze_radar_ris: false,
            max_backtracks: MAX_BACKTRACKS,
        }
    }
}

/// One outer iteration: SINR target used, relaxed bound `Γ₂`, achieved
/// `Γ₃` and the radar objective (`L` or `Q`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub gamma_target: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub scheme: Scheme,
    pub setting: Setting,
    pub beamformers: BeamformerSet,
    pub omega_c: RisProfile,
    pub omega_r: RisProfile,
    /// Required SINR `Γ`.
    pub gamma_target: f64,
    /// Achieved fairness SINR `Γ₃`, recomputed from the returned design.
    pub fairness_sinr: f64,
    pub per_user_sinr: Vec<f64>,
    /// Relaxed bound `Γ₂` of the last accepted iteration.
    pub relaxed_bound: Option<f64>,
    pub min_rate: f64,
    /// Beampattern-matching cost (comm-RIS setting only).
    pub radar_cost: Option<RadarCostBreakdown>,
    /// Worst-case illumination `Q` in watts.
    pub illumination: f64,
    pub per_target_illumination: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub dinkelbach: Vec<DinkelbachTrace>,
    pub termination: Termination,
}

/// Geometric midpoint of the last feasible and the failed SINR target.
pub fn gamma_backtrack(lo: f64, hi: f64) -> f64 {
    (lo * hi).sqrt()
}

/// Phases that steer a wave incident from `incident` towards every
/// destination with equal weight: the unit-modulus projection of
/// `Σ_d r(ψ_d) ⊙ conj(r(φ))`. No destinations gives all ones.
pub fn manual_ris_phases(role: RisRole, n: usize, incident: [f64; 2], destinations: &[[f64; 2]]) -> Result<RisProfile> {
    if destinations.is_empty() {
        return Ok(RisProfile::ones(role, n));
    }
    let inc = ura_response(incident, n)?;
    let mut acc = CVec::zeros(n);
    for d in destinations {
        let out = ura_response(*d, n)?;
        for i in 0..n {
            acc[i] += out[i] * inc[i].conj();
        }
    }
    RisProfile::new(role, unit_modulus(&acc))
}

pub fn manual_comm_phases(ch: &ChannelSet) -> Result<RisProfile> {
    let g = &ch.geometry;
    manual_ris_phases(RisRole::Comm, ch.n(), g.comm_ris_incident, &g.user_directions)
}

pub fn manual_radar_phases(ch: &ChannelSet) -> Result<RisProfile> {
    let g = &ch.geometry;
    manual_ris_phases(RisRole::Radar, ch.n(), g.radar_ris_incident, &g.target_directions)
}

/// RNG for the randomization steps, on a stream separate from the channel
/// draws that share the same seed.
pub fn design_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn dinkelbach_options(config: &ScenarioConfig) -> DinkelbachOptions {
    DinkelbachOptions { tol: config.tol, max_iter: config.max_iter.max(1), ..DinkelbachOptions::default() }
}

/// Errors after which the Γ loop backs off instead of aborting.
fn is_step_failure(e: &Error) -> bool {
    matches!(e, Error::Infeasible(_) | Error::Numerical(_) | Error::DegenerateUser(_))
}

struct Step {
    relaxed: RelaxedBeamformers,
    bf: BeamformerSet,
}

fn beamformer_step(
    setting: Setting,
    ch: &ChannelSet,
    omega_c: &RisProfile,
    omega_r: &RisProfile,
    gamma: f64,
    config: &ScenarioConfig,
    include_ris_beam: bool,
) -> Result<Step> {
    let relaxed = match setting {
        Setting::CommRis => solve_beamformer_p1(ch, omega_c.phases(), gamma, config, include_ris_beam)?,
        Setting::DualRis => solve_beamformer_p2(ch, omega_c.phases(), omega_r.phases(), gamma, config)?,
    };
    let bf = construct_beamformers(&relaxed)?;
    Ok(Step { relaxed, bf })
}

struct Iterate {
    bf: BeamformerSet,
    omega_c: RisProfile,
    omega_r: RisProfile,
    tau: f64,
    gamma2: f64,
    gamma3: f64,
}

/// Comm-RIS system designer: alternates the beampattern-matching program
/// with the comm-RIS update until the achieved SINR meets `Γ`.
pub fn run_algorithm1(config: &ScenarioConfig, ch: &ChannelSet, opts: &DesignOptions) -> Result<DesignOutcome> {
    run_alternating(Setting::CommRis, config, ch, opts)
}

/// Dual-RIS system designer: as [`run_algorithm1`] with the max-min
/// illumination program and an additional radar-RIS update.
pub fn run_algorithm2(config: &ScenarioConfig, ch: &ChannelSet, opts: &DesignOptions) -> Result<DesignOutcome> {
    run_alternating(Setting::DualRis, config, ch, opts)
}

fn fairness(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

fn run_alternating(setting: Setting, config: &ScenarioConfig, ch: &ChannelSet, opts: &DesignOptions) -> Result<DesignOutcome> {
    let mut rng = design_rng(config.seed);
    let gamma = config.gamma;
    let dk_opts = dinkelbach_options(config);
    let mut omega_c = manual_comm_phases(ch)?;
    let mut omega_r = match setting {
        Setting::CommRis => RisProfile::absent(RisRole::Radar, ch.n()),
        Setting::DualRis => manual_radar_phases(ch)?,
    };
    let scheme = match setting {
        Setting::CommRis => Scheme::ProposedP1,
        Setting::DualRis => Scheme::ProposedP2,
    };

    let mut target = gamma;
    let mut last_ok = gamma;
    let mut prev_gamma2: Option<f64> = None;
    let mut best: Option<Iterate> = None;
    let mut trace = Vec::new();
    let mut dinkelbach = Vec::new();
    let mut termination = Termination::MaxIter;

    for n in 0..config.max_iter.max(1) {
        let step = match beamformer_step(setting, ch, &omega_c, &omega_r, target, config, true) {
            Ok(s) => s,
            Err(e) if n > 0 && is_step_failure(&e) => {
                log::info!("beamformer step failed at target {target:e}: {e}; backtracking");
                let mut hi = target;
                let mut recovered = None;
                for _ in 0..opts.max_backtracks {
                    let next = gamma_backtrack(last_ok, hi);
                    match beamformer_step(setting, ch, &omega_c, &omega_r, next, config, true) {
                        Ok(s) => {
                            recovered = Some((next, s));
                            break;
                        }
                        Err(e) if is_step_failure(&e) => hi = next,
                        Err(e) => return Err(e),
                    }
                }
                match recovered {
                    Some((g, s)) => {
                        target = g;
                        s
                    }
                    None => {
                        termination = Termination::Infeasible;
                        break;
                    }
                }
            }
            Err(e) => return Err(e),
        };
        let bf = step.bf;

        let sinrs_now = all_sinrs(ch, omega_c.phases(), &bf, config.sigma2);
        let (gamma2, gamma3) = if opts.freeze_comm_ris || ch.k() == 0 {
            let g = fairness(&sinrs_now);
            (g, g)
        } else {
            let upd = update_comm_ris(
                ch,
                &bf,
                omega_c.phases(),
                config.sigma2,
                config.n_rand,
                opts.keep_incumbent,
                &dk_opts,
                &mut rng,
            )?;
            omega_c = RisProfile::new(RisRole::Comm, upd.omega)?;
            dinkelbach.push(upd.trace);
            (upd.gamma2, upd.gamma3)
        };

        if setting == Setting::DualRis && !opts.freeze_radar_ris && ch.t() > 0 {
            let upd = update_radar_ris(ch, &bf.r, omega_r.phases(), config.n_rand, opts.keep_incumbent, &mut rng)?;
            omega_r = RisProfile::new(RisRole::Radar, upd.omega)?;
        }

        let objective = match setting {
            Setting::CommRis => RadarObjective::from_config(config, true).cost(&bf.r, step.relaxed.tau).l,
            Setting::DualRis => illumination(ch, omega_r.phases(), &bf.r).1,
        };
        trace.push(IterationRecord { gamma_target: target, gamma2, gamma3, objective });

        let current = Iterate {
            bf,
            omega_c: omega_c.clone(),
            omega_r: omega_r.clone(),
            tau: step.relaxed.tau,
            gamma2,
            gamma3,
        };
        let met = gamma3 >= gamma * (1.0 - TARGET_SLACK);
        if met || best.as_ref().is_none_or(|b| gamma3 > b.gamma3) {
            best = Some(current);
        }
        if met {
            termination = Termination::MetTarget;
            break;
        }
        if let Some(p) = prev_gamma2 {
            if (gamma2 - p).abs() <= config.tol * gamma2.abs() {
                log::info!("relaxed bound stalled at {gamma2:e}");
                break;
            }
        }
        prev_gamma2 = Some(gamma2);
        last_ok = target;
        target = target.max(gamma2);
    }

    let best = best.ok_or_else(|| Error::Infeasible("no feasible iterate".into()))?;
    let iterations = trace.len();
    let mut out = evaluate_design(
        scheme,
        setting,
        config,
        ch,
        best.bf,
        best.omega_c,
        best.omega_r,
        Some(best.tau),
        true,
    )?;
    out.relaxed_bound = Some(best.gamma2);
    out.iterations = iterations;
    out.trace = trace;
    out.dinkelbach = dinkelbach;
    out.termination = termination;
    Ok(out)
}

/// Metrics of a finished design. `tau` is the jointly optimized autoscale
/// when known, otherwise the least-squares one is used.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_design(
    scheme: Scheme,
    setting: Setting,
    config: &ScenarioConfig,
    ch: &ChannelSet,
    bf: BeamformerSet,
    omega_c: RisProfile,
    omega_r: RisProfile,
    tau: Option<f64>,
    include_ris_beam: bool,
) -> Result<DesignOutcome> {
    let per_user_sinr = all_sinrs(ch, omega_c.phases(), &bf, config.sigma2);
    let fairness_sinr = fairness(&per_user_sinr);
    let (per_target, q) = illumination(ch, omega_r.phases(), &bf.r);
    let radar_cost = match setting {
        Setting::CommRis => {
            let obj = RadarObjective::from_config(config, include_ris_beam);
            let tau = tau.unwrap_or_else(|| obj.optimal_tau(&bf.r));
            Some(obj.cost(&bf.r, tau))
        }
        Setting::DualRis => None,
    };
    let termination = if fairness_sinr >= config.gamma * (1.0 - TARGET_SLACK) {
        Termination::MetTarget
    } else {
        Termination::MaxIter
    };
    Ok(DesignOutcome {
        scheme,
        setting,
        beamformers: bf,
        omega_c,
        omega_r,
        gamma_target: config.gamma,
        fairness_sinr,
        per_user_sinr,
        relaxed_bound: None,
        min_rate: rate_from_sinr(fairness_sinr),
        radar_cost,
        illumination: q,
        per_target_illumination: per_target,
        iterations: 1,
        trace: Vec::new(),
        dinkelbach: Vec::new(),
        termination,
    })
}

/// Single beamformer solve at `Γ` with fixed RIS phases.
pub fn fixed_phase_design(
    scheme: Scheme,
    setting: Setting,
    config: &ScenarioConfig,
    ch: &ChannelSet,
    omega_c: RisProfile,
    omega_r: RisProfile,
) -> Result<DesignOutcome> {
    let include_ris_beam = !omega_c.is_absent();
    let step = beamformer_step(setting, ch, &omega_c, &omega_r, config.gamma, config, include_ris_beam)?;
    let tau = (setting == Setting::CommRis).then_some(step.relaxed.tau);
    let objective = step.relaxed.objective;
    let mut out = evaluate_design(scheme, setting, config, ch, step.bf, omega_c, omega_r, tau, include_ris_beam)?;
    out.trace = vec![IterationRecord {
        gamma_target: config.gamma,
        gamma2: out.fairness_sinr,
        gamma3: out.fairness_sinr,
        objective,
    }];
    Ok(out)
}

/// Radar-only beampattern matching: no users, no RIS and no comm-RIS beam.
/// `C` is returned as an `M×K` zero matrix.
pub fn sensing_only_design(config: &ScenarioConfig, ch: &ChannelSet) -> Result<BeamformerSet> {
    let objective = RadarObjective::from_config(config, false);
    let relaxed = solve_matching_program(&[], ch.m(), config.gamma, config.p_t, config.sigma2, &objective)?;
    let bf = construct_beamformers(&relaxed)?;
    Ok(BeamformerSet::new(CMat::zeros(ch.m(), ch.k()), bf.s))
}

/// No RIS at all: both profiles absent, one solve at `Γ`.
pub fn no_ris_design(setting: Setting, config: &ScenarioConfig, ch: &ChannelSet) -> Result<DesignOutcome> {
    fixed_phase_design(
        Scheme::NoRis,
        setting,
        config,
        ch,
        RisProfile::absent(RisRole::Comm, ch.n()),
        RisProfile::absent(RisRole::Radar, ch.n()),
    )
}

pub fn run_scheme(
    scheme: Scheme,
    setting: Setting,
    config: &ScenarioConfig,
    ch: &ChannelSet,
    opts: &DesignOptions,
) -> Result<DesignOutcome> {
    if !scheme.available_in(setting) {
        return Err(Error::Config(format!("scheme {scheme} is not defined for {setting:?}")));
    }
    let n = ch.n();
    let absent_c = || RisProfile::absent(RisRole::Comm, n);
    let absent_r = || RisProfile::absent(RisRole::Radar, n);
    match scheme {
        Scheme::ProposedP1 => run_algorithm1(config, ch, opts),
        Scheme::ProposedP2 => run_algorithm2(config, ch, opts),
        Scheme::NoRis => no_ris_design(setting, config, ch),
        Scheme::ManualComm => fixed_phase_design(scheme, setting, config, ch, manual_comm_phases(ch)?, absent_r()),
        Scheme::ManualRadar => fixed_phase_design(scheme, setting, config, ch, absent_c(), manual_radar_phases(ch)?),
        Scheme::ManualBoth => {
            fixed_phase_design(scheme, setting, config, ch, manual_comm_phases(ch)?, manual_radar_phases(ch)?)
        }
        Scheme::SensingOnly => {
            let bf = sensing_only_design(config, ch)?;
            evaluate_design(scheme, setting, config, ch, bf, absent_c(), absent_r(), None, false)
        }
    }
}

/// Complex matrix stored row-major with interleaved real and imaginary
/// parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FlatMatrix {
    pub fn from_matrix(m: &CMat) -> Self {
        let mut data = Vec::with_capacity(2 * m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)].re);
                data.push(m[(i, j)].im);
            }
        }
        FlatMatrix { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn from_vector(v: &CVec) -> Self {
        let m = CMat::from_column_slice(v.len(), 1, v.as_slice());
        Self::from_matrix(&m)
    }

    pub fn to_matrix(&self) -> Result<CMat> {
        if self.data.len() != 2 * self.rows * self.cols {
            return Err(Error::Config(format!(
                "matrix {}x{} needs {} numbers, found {}",
                self.rows,
                self.cols,
                2 * self.rows * self.cols,
                self.data.len()
            )));
        }
        Ok(CMat::from_fn(self.rows, self.cols, |i, j| {
            let at = 2 * (i * self.cols + j);
            C64::new(self.data[at], self.data[at + 1])
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisRecord {
    pub role: RisRole,
    pub absent: bool,
    pub phases: FlatMatrix,
}

/// On-disk form of [`DesignOutcome`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub scheme: Scheme,
    pub setting: Setting,
    pub termination: Termination,
    pub gamma_target: f64,
    pub fairness_sinr: f64,
    pub per_user_sinr: Vec<f64>,
    pub relaxed_bound: Option<f64>,
    pub min_rate: f64,
    pub radar_cost: Option<RadarCostBreakdown>,
    pub illumination: f64,
    pub per_target_illumination: Vec<f64>,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub dinkelbach: Vec<DinkelbachTrace>,
    pub c: FlatMatrix,
    pub s: FlatMatrix,
    pub r: FlatMatrix,
    pub omega_c: RisRecord,
    pub omega_r: RisRecord,
}

fn ris_record(p: &RisProfile) -> RisRecord {
    RisRecord { role: p.role, absent: p.is_absent(), phases: FlatMatrix::from_vector(p.phases()) }
}

fn ris_from_record(r: &RisRecord) -> Result<RisProfile> {
    let m = r.phases.to_matrix()?;
    let v = CVec::from_column_slice(m.as_slice());
    if r.absent {
        Ok(RisProfile::absent(r.role, v.len()))
    } else {
        RisProfile::new(r.role, v)
    }
}

impl DesignOutcome {
    pub fn to_record(&self) -> OutcomeRecord {
        OutcomeRecord {
            scheme: self.scheme,
            setting: self.setting,
            termination: self.termination,
            gamma_target: self.gamma_target,
            fairness_sinr: self.fairness_sinr,
            per_user_sinr: self.per_user_sinr.clone(),
            relaxed_bound: self.relaxed_bound,
            min_rate: self.min_rate,
            radar_cost: self.radar_cost,
            illumination: self.illumination,
            per_target_illumination: self.per_target_illumination.clone(),
            iterations: self.iterations,
            trace: self.trace.clone(),
            dinkelbach: self.dinkelbach.clone(),
            c: FlatMatrix::from_matrix(&self.beamformers.c),
            s: FlatMatrix::from_matrix(&self.beamformers.s),
            r: FlatMatrix::from_matrix(&self.beamformers.r),
            omega_c: ris_record(&self.omega_c),
            omega_r: ris_record(&self.omega_r),
        }
    }

    pub fn from_record(rec: &OutcomeRecord) -> Result<Self> {
        let c = rec.c.to_matrix()?;
        let s = rec.s.to_matrix()?;
        let mut beamformers = BeamformerSet::new(c, s);
        beamformers.r = rec.r.to_matrix()?;
        Ok(DesignOutcome {
            scheme: rec.scheme,
            setting: rec.setting,
            beamformers,
            omega_c: ris_from_record(&rec.omega_c)?,
            omega_r: ris_from_record(&rec.omega_r)?,
            gamma_target: rec.gamma_target,
            fairness_sinr: rec.fairness_sinr,
            per_user_sinr: rec.per_user_sinr.clone(),
            relaxed_bound: rec.relaxed_bound,
            min_rate: rec.min_rate,
            radar_cost: rec.radar_cost,
            illumination: rec.illumination,
            per_target_illumination: rec.per_target_illumination.clone(),
            iterations: rec.iterations,
            trace: rec.trace.clone(),
            dinkelbach: rec.dinkelbach.clone(),
            termination: rec.termination,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_record(&serde_json::from_str(text)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Outer-loop trace as `iteration,gamma_target,gamma2,gamma3,objective`.
    pub fn write_iteration_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iteration", "gamma_target", "gamma2", "gamma3", "objective"])?;
        for (i, rec) in self.trace.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                format!("{:e}", rec.gamma_target),
                format!("{:e}", rec.gamma2),
                format!("{:e}", rec.gamma3),
                format!("{:e}", rec.objective),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
