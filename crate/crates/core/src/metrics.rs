//! Closed-form communication and sensing metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channels::{
    effective_target_channels, effective_user_channel, effective_user_channels, ula_response,
    ura_response, ChannelSet,
};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::linalg::{bilinear, quad_form, CMat, CVec, C64};

/// Slack used when deciding whether an angle lies inside a desired beam.
const BEAM_EDGE_SLACK: f64 = 1e-9;

/// Communication beamformers `C` (M×K), sensing beamformer `S` (M×M) and the
/// transmit covariance `R = C C^H + S S^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub c: CMat,
    pub s: CMat,
    pub r: CMat,
}

impl BeamformerSet {
    pub fn new(c: CMat, s: CMat) -> Self {
        let r = &c * c.adjoint() + &s * s.adjoint();
        BeamformerSet { c, s, r }
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    pub fn k(&self) -> usize {
        self.c.ncols()
    }

    pub fn comm_beam(&self, k: usize) -> CVec {
        self.c.column(k).into_owned()
    }
}

/// SINR of user `k` given its effective channel `h`.
pub fn sinr_for_channel(h: &CVec, bf: &BeamformerSet, k: usize, sigma2: f64) -> f64 {
    let signal = h.dotc(&bf.c.column(k)).norm_sqr();
    let total = quad_form(&bf.r, h);
    let mut denom = total - signal + sigma2;
    if denom < sigma2 {
        log::warn!("negative interference {:.3e} for user {k}; clamped", total - signal);
        denom = sigma2;
    }
    signal / denom
}

/// SINR of user `k` with comm-RIS phases `omega_c`.
pub fn sinr(ch: &ChannelSet, omega_c: &CVec, bf: &BeamformerSet, k: usize, sigma2: f64) -> Result<f64> {
    if k >= bf.k() {
        return Err(Error::IndexOutOfRange { index: k, len: bf.k() });
    }
    let h = effective_user_channel(ch, omega_c, k)?;
    Ok(sinr_for_channel(&h, bf, k, sigma2))
}

pub fn all_sinrs(ch: &ChannelSet, omega_c: &CVec, bf: &BeamformerSet, sigma2: f64) -> Vec<f64> {
    effective_user_channels(ch, omega_c)
        .iter()
        .enumerate()
        .map(|(k, h)| sinr_for_channel(h, bf, k, sigma2))
        .collect()
}

/// Worst-case SINR and the (lowest) index of the user attaining it.
pub fn fairness_sinr(
    ch: &ChannelSet,
    omega_c: &CVec,
    bf: &BeamformerSet,
    sigma2: f64,
) -> Result<(f64, usize)> {
    min_with_index(&all_sinrs(ch, omega_c, bf, sigma2))
        .ok_or_else(|| Error::Domain("fairness SINR needs at least one user".into()))
}

pub(crate) fn min_with_index(values: &[f64]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(b, _)| v < b) {
            best = Some((v, i));
        }
    }
    best
}

/// `log2(1 + γ)` in bps/Hz.
pub fn rate_from_sinr(gamma: f64) -> f64 {
    (1.0 + gamma).log2()
}

pub fn min_rate(ch: &ChannelSet, omega_c: &CVec, bf: &BeamformerSet, sigma2: f64) -> Result<f64> {
    Ok(rate_from_sinr(fairness_sinr(ch, omega_c, bf, sigma2)?.0))
}

/// Rectangular desired beampattern: 1 within `±ε` of a target bearing (or
/// of the comm-RIS bearing when `include_ris_beam`), else 0.
pub fn desired_pattern(config: &ScenarioConfig, theta: f64, include_ris_beam: bool) -> f64 {
    let inside = |center: f64| (theta - center).abs() <= config.epsilon + BEAM_EDGE_SLACK;
    let hit = config.target_angles.iter().any(|&c| inside(c))
        || (include_ris_beam && inside(config.zeta_r));
    if hit {
        1.0
    } else {
        0.0
    }
}

/// Radiated power `a^H(θ) R a(θ)`.
pub fn beampattern(r: &CMat, theta: f64) -> f64 {
    quad_form(r, &ula_response(theta, r.nrows()))
}

/// Everything needed to evaluate the beampattern-matching radar cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarObjective {
    pub grid: Vec<f64>,
    pub mask: Vec<f64>,
    /// Directions whose pairwise cross-correlation enters `L2`.
    pub correlation_angles: Vec<f64>,
    pub w_b: f64,
    pub w_c: f64,
}

impl RadarObjective {
    pub fn from_config(config: &ScenarioConfig, include_ris_beam: bool) -> Self {
        RadarObjective {
            grid: config.grid.clone(),
            mask: config
                .grid
                .iter()
                .map(|&th| desired_pattern(config, th, include_ris_beam))
                .collect(),
            correlation_angles: if config.crosscorr_full_grid {
                config.grid.clone()
            } else {
                config.target_angles.clone()
            },
            w_b: config.w_b,
            w_c: config.w_c,
        }
    }

    /// Least-squares autoscale `Σ J d / Σ d²` for a fixed `R` (0 for an
    /// all-zero mask).
    pub fn optimal_tau(&self, r: &CMat) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (&th, &d) in self.grid.iter().zip(&self.mask) {
            num += beampattern(r, th) * d;
            den += d * d;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    pub fn cost(&self, r: &CMat, tau: f64) -> RadarCostBreakdown {
        let l1 = mismatch_l1(r, tau, &self.grid, &self.mask);
        let l2 = crosscorr_l2(r, &self.correlation_angles);
        RadarCostBreakdown { l1, l2, l: self.w_b * l1 + self.w_c * l2, tau }
    }
}

/// `(1/L) Σ |J(θ_ℓ) − τ d(θ_ℓ)|²` over the grid.
pub fn mismatch_l1(r: &CMat, tau: f64, grid: &[f64], mask: &[f64]) -> f64 {
    assert_eq!(grid.len(), mask.len());
    if grid.is_empty() {
        return 0.0;
    }
    let sum: f64 = grid
        .iter()
        .zip(mask)
        .map(|(&th, &d)| (beampattern(r, th) - tau * d).powi(2))
        .sum();
    sum / grid.len() as f64
}

/// Mean squared cross-correlation between the given directions; 0 for
/// fewer than two.
pub fn crosscorr_l2(r: &CMat, angles: &[f64]) -> f64 {
    let t = angles.len();
    if t < 2 {
        return 0.0;
    }
    let m = r.nrows();
    let steer: Vec<CVec> = angles.iter().map(|&a| ula_response(a, m)).collect();
    let mut sum = 0.0;
    for i in 0..t {
        for j in i + 1..t {
            sum += bilinear(&steer[i], r, &steer[j]).norm_sqr();
        }
    }
    2.0 * sum / (t * t - t) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarCostBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l: f64,
    pub tau: f64,
}

impl RadarCostBreakdown {
    pub const CSV_HEADER: &'static str = "L1,L2,L,tau";

    pub fn csv_row(&self) -> String {
        format!("{:e},{:e},{:e},{:e}", self.l1, self.l2, self.l, self.tau)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}", Self::CSV_HEADER)?;
        writeln!(f, "{}", self.csv_row())?;
        Ok(())
    }
}

pub fn radar_cost(r: &CMat, tau: f64, config: &ScenarioConfig, include_ris_beam: bool) -> RadarCostBreakdown {
    RadarObjective::from_config(config, include_ris_beam).cost(r, tau)
}

/// Per-target illumination `g_m^H R g_m` and its minimum `Q` (0 with no
/// targets).
pub fn illumination(ch: &ChannelSet, omega_r: &CVec, r: &CMat) -> (Vec<f64>, f64) {
    let per: Vec<f64> = effective_target_channels(ch, omega_r)
        .iter()
        .map(|g| quad_form(r, g))
        .collect();
    let q = per.iter().copied().fold(f64::INFINITY, f64::min);
    let q = if per.is_empty() { 0.0 } else { q };
    (per, q)
}

/// `a^H S S^H a`.
pub fn radar_pattern(s: &CMat, theta: f64) -> f64 {
    let a = ula_response(theta, s.nrows());
    (s.adjoint() * a).norm_squared()
}

/// `|a^H c_k|²`.
pub fn comm_pattern(c_k: &CVec, theta: f64) -> f64 {
    ula_response(theta, c_k.len()).dotc(c_k).norm_sqr()
}

/// `|r^H(ψ) diag(ω) r(φ)|` for a wave incident from `phi`.
pub fn ris_pattern(omega: &CVec, psi: [f64; 2], phi: [f64; 2]) -> Result<f64> {
    let n = omega.len();
    let out = ura_response(psi, n)?;
    let inc = ura_response(phi, n)?;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        acc += out[i].conj() * omega[i] * inc[i];
    }
    Ok(acc.norm())
}

/// Beampattern traces over the angle grid and a RIS reflection pattern
/// over a square grid of direction cosines (points outside the unit disk
/// are skipped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTraces {
    pub angles: Vec<f64>,
    pub total: Vec<f64>,
    pub radar: Vec<f64>,
    pub comm: Vec<Vec<f64>>,
    pub ris: Vec<([f64; 2], f64)>,
}

pub fn diagnostic_patterns(
    bf: &BeamformerSet,
    omega: &CVec,
    incident: [f64; 2],
    angles: &[f64],
    ris_points_per_axis: usize,
) -> Result<PatternTraces> {
    let total = angles.iter().map(|&t| beampattern(&bf.r, t)).collect();
    let radar = angles.iter().map(|&t| radar_pattern(&bf.s, t)).collect();
    let comm = (0..bf.k())
        .map(|k| {
            let ck = bf.comm_beam(k);
            angles.iter().map(|&t| comm_pattern(&ck, t)).collect()
        })
        .collect();
    let mut ris = Vec::new();
    if !omega.is_empty() && ris_points_per_axis > 1 {
        let step = 2.0 / (ris_points_per_axis - 1) as f64;
        for i in 0..ris_points_per_axis {
            for j in 0..ris_points_per_axis {
                let psi = [-1.0 + i as f64 * step, -1.0 + j as f64 * step];
                if psi[0].hypot(psi[1]) <= 1.0 + 1e-12 {
                    ris.push((psi, ris_pattern(omega, psi, incident)?));
                }
            }
        }
    }
    Ok(PatternTraces { angles: angles.to_vec(), total, radar, comm, ris })
}

/// Two-column `angle_deg,value` CSV.
pub fn write_trace_csv(path: &Path, angles: &[f64], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["angle_deg", "value"])?;
    for (a, v) in angles.iter().zip(values) {
        w.write_record([a.to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}
