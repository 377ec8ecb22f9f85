//! Array responses, pathloss, fading draws and the assembly of one channel
//! realization.
//!
//! Geometry conventions: the DFBS ULA lies along the x axis (broadside +y)
//! with half-wavelength spacing, so a bearing `θ` enters only through
//! `sin θ = u_x`. Both RISs are square URAs in a y-z plane with
//! quarter-wavelength spacing; a direction is described by its direction
//! cosines `ψ = (u_y, u_z)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{norm, sub, ScenarioConfig};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};

/// Tolerance on `|ω_i| = 1` for RIS profiles.
pub const UNIT_MODULUS_TOL: f64 = 1e-9;

/// ULA steering vector, entry `m` is `exp(jπ m sin θ)`.
pub fn ula_response(theta_deg: f64, m: usize) -> CVec {
    let phase = PI * theta_deg.to_radians().sin();
    CVec::from_fn(m, |i, _| C64::from_polar(1.0, phase * i as f64))
}

/// URA steering vector for direction cosines `psi`. Element `(p, q)` sits at
/// index `q·√N + p` and has phase `(π/2)(p ψ₁ + q ψ₂)`.
pub fn ura_response(psi: [f64; 2], n: usize) -> Result<CVec> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::Config(format!("N = {n} is not a perfect square")));
    }
    Ok(CVec::from_fn(n, |i, _| {
        let (p, q) = (i % side, i / side);
        C64::from_polar(1.0, 0.5 * PI * (p as f64 * psi[0] + q as f64 * psi[1]))
    }))
}

/// Pathloss classes of the reference geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkClass {
    /// Radar-RIS to target: 30 + 25 log10 d dB.
    RadarRisTarget,
    /// DFBS to user: 30 + 36 log10 d dB.
    DfbsUser,
    /// Everything else: 30 + 22 log10 d dB.
    Other,
}

impl LinkClass {
    fn exponent(self) -> f64 {
        match self {
            LinkClass::RadarRisTarget => 25.0,
            LinkClass::DfbsUser => 36.0,
            LinkClass::Other => 22.0,
        }
    }
}

pub fn pathloss_db(class: LinkClass, d: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("link distance must be positive, got {d}")));
    }
    Ok(30.0 + class.exponent() * d.log10())
}

/// Amplitude gain `10^(-PL/20)` of a link.
pub fn pathloss_amplitude(class: LinkClass, d: f64) -> Result<f64> {
    Ok(10f64.powf(-pathloss_db(class, d)? / 20.0))
}

/// Unit-variance circularly-symmetric complex normal draw.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn sample_rayleigh<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// `√(ρ/(1+ρ))·los + √(1/(1+ρ))·W` with `W` i.i.d. CN(0, 1). An infinite
/// `ρ` returns the LOS matrix unchanged.
pub fn sample_rician<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rho: f64,
    los: &CMat,
    rng: &mut R,
) -> CMat {
    assert_eq!(los.shape(), (rows, cols), "LOS matrix shape mismatch");
    if rho.is_infinite() {
        return los.clone();
    }
    let w_los = (rho / (1.0 + rho)).sqrt();
    let w_nlos = (1.0 / (1.0 + rho)).sqrt();
    CMat::from_fn(rows, cols, |i, j| w_los * los[(i, j)] + w_nlos * complex_normal(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RisRole {
    Comm,
    Radar,
}

/// Phase profile of one RIS.
#[derive(Debug, Clone, PartialEq)]
pub struct RisProfile {
    pub role: RisRole,
    phases: CVec,
    absent: bool,
}

impl RisProfile {
    pub fn new(role: RisRole, phases: CVec) -> Result<Self> {
        if let Some(bad) = phases.iter().find(|z| (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL) {
            return Err(Error::Domain(format!("RIS phase {bad} is not unit modulus")));
        }
        Ok(RisProfile { role, phases, absent: false })
    }

    /// The zero profile standing for "no RIS".
    pub fn absent(role: RisRole, n: usize) -> Self {
        RisProfile { role, phases: CVec::zeros(n), absent: true }
    }

    pub fn ones(role: RisRole, n: usize) -> Self {
        RisProfile { role, phases: CVec::from_element(n, C64::new(1.0, 0.0)), absent: false }
    }

    pub fn phases(&self) -> &CVec {
        &self.phases
    }

    pub fn is_absent(&self) -> bool {
        self.absent
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

/// Where things are, as seen from the arrays. Needed by the manual RIS
/// designs and the RIS reflection pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub user_positions: Vec<[f64; 3]>,
    /// Bearing of each user from the DFBS, degrees.
    pub user_bearings: Vec<f64>,
    /// Direction cosines at the comm-RIS towards the DFBS.
    pub comm_ris_incident: [f64; 2],
    /// Direction cosines at the comm-RIS towards each user.
    pub user_directions: Vec<[f64; 2]>,
    /// Direction cosines at the radar-RIS towards the DFBS.
    pub radar_ris_incident: [f64; 2],
    /// Direction cosines at the radar-RIS towards each target.
    pub target_directions: Vec<[f64; 2]>,
}

/// One realization of all channels. Row channels are stored as column
/// vectors `h` with the link acting as `h^H x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// DFBS to comm-RIS, N×M.
    pub h_br: CMat,
    /// DFBS to radar-RIS, N×M.
    pub g_br: CMat,
    /// DFBS to user k (zero when blocked).
    pub h_bu: Vec<CVec>,
    /// Comm-RIS to user k.
    pub h_ru: Vec<CVec>,
    /// DFBS to target m (zero when blocked).
    pub g_bt: Vec<CVec>,
    /// Radar-RIS to target m.
    pub g_rt: Vec<CVec>,
    /// Complex path gain of each direct target link.
    pub alpha_bt: Vec<C64>,
    pub geometry: Geometry,
}

impl ChannelSet {
    pub fn m(&self) -> usize {
        self.h_br.ncols()
    }

    pub fn n(&self) -> usize {
        self.h_br.nrows()
    }

    pub fn k(&self) -> usize {
        self.h_bu.len()
    }

    pub fn t(&self) -> usize {
        self.g_bt.len()
    }

    /// Drops every RIS link, leaving only direct paths.
    pub fn without_ris(&self) -> Self {
        let mut out = self.clone();
        out.h_br.fill(C64::new(0.0, 0.0));
        out.g_br.fill(C64::new(0.0, 0.0));
        out.h_ru.iter_mut().for_each(|h| h.fill(C64::new(0.0, 0.0)));
        out.g_rt.iter_mut().for_each(|g| g.fill(C64::new(0.0, 0.0)));
        out
    }
}

/// Direction cosines `(u_y, u_z)` of `to` seen from a RIS at `from`.
pub fn ris_direction(from: [f64; 3], to: [f64; 3]) -> Result<[f64; 2]> {
    let d = sub(to, from);
    let r = norm(d);
    if r <= 0.0 {
        return Err(Error::Domain("coincident endpoints".into()));
    }
    Ok([d[1] / r, d[2] / r])
}

fn distance(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let d = norm(sub(a, b));
    if d <= 0.0 {
        return Err(Error::Domain("coincident endpoints".into()));
    }
    Ok(d)
}

/// Draws one channel realization for `config`.
///
/// Draw order is fixed (user drops, `H_br`, `G_br`, `h_ru`, `h_bu`, `α_bt`)
/// and blocked links are drawn before being zeroed, so sweeping `K_d` or
/// `T_d` leaves the remaining channels untouched.
pub fn assemble_scenario<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<ChannelSet> {
    let (m, n) = (config.m, config.n);
    let pos = &config.positions;

    let user_positions: Vec<[f64; 3]> = (0..config.k)
        .map(|_| {
            let mut p = [0.0; 3];
            for (ax, v) in p.iter_mut().enumerate() {
                let (lo, hi) = (pos.user_box_min[ax], pos.user_box_max[ax]);
                *v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            }
            p
        })
        .collect();
    let targets = config.target_positions();

    let comm_bearing = crate::config::ula_bearing(pos.dfbs, pos.comm_ris)?;
    let radar_bearing = crate::config::ula_bearing(pos.dfbs, pos.radar_ris)?;
    let comm_incident = ris_direction(pos.comm_ris, pos.dfbs)?;
    let radar_incident = ris_direction(pos.radar_ris, pos.dfbs)?;

    let los_br = ura_response(comm_incident, n)? * ula_response(comm_bearing, m).adjoint();
    let pl_br = pathloss_amplitude(LinkClass::Other, distance(pos.comm_ris, pos.dfbs)?)?;
    let h_br = sample_rician(n, m, config.rho, &los_br, rng) * C64::from(pl_br);

    let los_gr = ura_response(radar_incident, n)? * ula_response(radar_bearing, m).adjoint();
    let pl_gr = pathloss_amplitude(LinkClass::Other, distance(pos.radar_ris, pos.dfbs)?)?;
    let g_br = sample_rician(n, m, config.rho, &los_gr, rng) * C64::from(pl_gr);

    let mut user_directions = Vec::with_capacity(config.k);
    let mut h_ru = Vec::with_capacity(config.k);
    for up in &user_positions {
        let dir = ris_direction(pos.comm_ris, *up)?;
        let los = CMat::from_column_slice(n, 1, ura_response(dir, n)?.as_slice());
        let pl = pathloss_amplitude(LinkClass::Other, distance(pos.comm_ris, *up)?)?;
        let draw = sample_rician(n, 1, config.rho, &los, rng) * C64::from(pl);
        h_ru.push(draw.column(0).into_owned());
        user_directions.push(dir);
    }

    let mut h_bu = Vec::with_capacity(config.k);
    let mut user_bearings = Vec::with_capacity(config.k);
    for (k, up) in user_positions.iter().enumerate() {
        let pl = pathloss_amplitude(LinkClass::DfbsUser, distance(pos.dfbs, *up)?)?;
        let draw = sample_rayleigh(m, 1, rng).column(0).into_owned() * C64::from(pl);
        h_bu.push(if k < config.k_d { draw } else { CVec::zeros(m) });
        user_bearings.push(crate::config::ula_bearing(pos.dfbs, *up)?);
    }

    let pl_bt = pathloss_amplitude(LinkClass::Other, config.target_distance)?;
    let mut alpha_bt = Vec::with_capacity(config.t);
    let mut g_bt = Vec::with_capacity(config.t);
    let mut g_rt = Vec::with_capacity(config.t);
    let mut target_directions = Vec::with_capacity(config.t);
    for (j, (&theta, tp)) in config.target_angles.iter().zip(&targets).enumerate() {
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let alpha = C64::from_polar(pl_bt, phase);
        alpha_bt.push(alpha);
        // g_bt^H = α a^H(θ)
        let g = ula_response(theta, m) * alpha.conj();
        g_bt.push(if j < config.t_d { g } else { CVec::zeros(m) });

        let dir = ris_direction(pos.radar_ris, *tp)?;
        let pl = pathloss_amplitude(LinkClass::RadarRisTarget, distance(pos.radar_ris, *tp)?)?;
        g_rt.push(ura_response(dir, n)? * C64::from(pl));
        target_directions.push(dir);
    }

    Ok(ChannelSet {
        h_br,
        g_br,
        h_bu,
        h_ru,
        g_bt,
        g_rt,
        alpha_bt,
        geometry: Geometry {
            user_positions,
            user_bearings,
            comm_ris_incident: comm_incident,
            user_directions,
            radar_ris_incident: radar_incident,
            target_directions,
        },
    })
}

/// `h + B^H diag(ω)^* r`, i.e. the column form of `h^H + r^H diag(ω) B`.
fn cascade(direct: &CVec, ris_to_dest: &CVec, omega: &CVec, bs_to_ris: &CMat) -> CVec {
    let weighted = CVec::from_fn(ris_to_dest.len(), |i, _| ris_to_dest[i] * omega[i].conj());
    direct + bs_to_ris.adjoint() * weighted
}

/// Effective DFBS→user channel `h_k` for comm-RIS phases `omega_c` (zero
/// vector for an absent RIS).
pub fn effective_user_channel(ch: &ChannelSet, omega_c: &CVec, k: usize) -> Result<CVec> {
    if k >= ch.k() {
        return Err(Error::IndexOutOfRange { index: k, len: ch.k() });
    }
    Ok(cascade(&ch.h_bu[k], &ch.h_ru[k], omega_c, &ch.h_br))
}

/// Effective DFBS→target channel `g_m` for radar-RIS phases `omega_r`.
pub fn effective_target_channel(ch: &ChannelSet, omega_r: &CVec, m: usize) -> Result<CVec> {
    if m >= ch.t() {
        return Err(Error::IndexOutOfRange { index: m, len: ch.t() });
    }
    Ok(cascade(&ch.g_bt[m], &ch.g_rt[m], omega_r, &ch.g_br))
}

pub fn effective_user_channels(ch: &ChannelSet, omega_c: &CVec) -> Vec<CVec> {
    (0..ch.k())
        .map(|k| cascade(&ch.h_bu[k], &ch.h_ru[k], omega_c, &ch.h_br))
        .collect()
}

pub fn effective_target_channels(ch: &ChannelSet, omega_r: &CVec) -> Vec<CVec> {
    (0..ch.t())
        .map(|m| cascade(&ch.g_bt[m], &ch.g_rt[m], omega_r, &ch.g_br))
        .collect()
}
