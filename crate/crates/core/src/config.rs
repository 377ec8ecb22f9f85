//! Scenario parameters.
//!
//! [`ScenarioConfig`] holds every quantity in linear units and is what the
//! rest of the crate consumes. [`ScenarioFile`] is the on-disk TOML form:
//! powers are given in dB (`P_t` in dBW, `sigma2` in dBm, `Gamma` in dB)
//! and converted once in [`ScenarioFile::into_config`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{db_to_linear, dbm_to_watts, linear_to_db};

/// Target bearings of the reference geometry, degrees.
pub const REFERENCE_TARGET_ANGLES: [f64; 5] = [-70.0, -50.0, -30.0, -20.0, -10.0];

/// Which RIS-assisted system is being designed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    /// A single comm-RIS; radar metric is beampattern matching.
    CommRis,
    /// Comm-RIS plus radar-RIS; radar metric is worst-case illumination.
    DualRis,
}

/// 3-D coordinates in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Positions {
    pub dfbs: [f64; 3],
    pub comm_ris: [f64; 3],
    pub radar_ris: [f64; 3],
    /// Opposite corners of the box users are dropped in.
    pub user_box_min: [f64; 3],
    pub user_box_max: [f64; 3],
}

impl Default for Positions {
    fn default() -> Self {
        Positions {
            dfbs: [0.0, 0.0, 0.0],
            comm_ris: [20.0, 13.0, 3.0],
            radar_ris: [-6.0, 6.0, 3.0],
            user_box_min: [15.0, 8.0, 0.0],
            user_box_max: [18.0, 18.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// DFBS antennas.
    pub m: usize,
    /// Elements per RIS (perfect square).
    pub n: usize,
    /// Users.
    pub k: usize,
    /// Targets.
    pub t: usize,
    /// Users `0..k_d` have a direct DFBS link.
    pub k_d: usize,
    /// Targets `0..t_d` have a direct DFBS link.
    pub t_d: usize,
    /// Total transmit power, watts.
    pub p_t: f64,
    /// SINR requirement, linear.
    pub gamma: f64,
    /// Receiver noise power, watts.
    pub sigma2: f64,
    /// Target bearings from the DFBS, degrees (on the grid).
    pub target_angles: Vec<f64>,
    pub target_distance: f64,
    /// Bearing of the comm-RIS from the DFBS, degrees (on the grid).
    pub zeta_r: f64,
    /// Half-width of each desired beam, degrees.
    pub epsilon: f64,
    pub w_b: f64,
    pub w_c: f64,
    /// Cross-correlation over every grid pair instead of the target pairs.
    pub crosscorr_full_grid: bool,
    /// Beampattern evaluation angles, degrees, ascending.
    pub grid: Vec<f64>,
    /// Rician factor, linear.
    pub rho: f64,
    pub positions: Positions,
    pub n_rand: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

pub fn default_grid() -> Vec<f64> {
    (0..181).map(|i| -90.0 + i as f64).collect()
}

/// Bearing (degrees) of `to` as seen from `from` by the DFBS array. The ULA
/// lies along the x axis with broadside +y, so only the x direction cosine
/// matters.
pub fn ula_bearing(from: [f64; 3], to: [f64; 3]) -> Result<f64> {
    let d = sub(to, from);
    let r = norm(d);
    if r <= 0.0 {
        return Err(Error::Domain("coincident endpoints".into()));
    }
    Ok((d[0] / r).clamp(-1.0, 1.0).asin().to_degrees())
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl ScenarioConfig {
    /// Small defaults that keep a full sweep to minutes on a laptop.
    pub fn desk_scale() -> Self {
        ScenarioFile::default()
            .into_config()
            .expect("default scenario is valid")
    }

    /// Parameters of the reference study (M=16, N=100, K=4).
    pub fn paper_scale() -> Self {
        ScenarioFile::paper_scale()
            .into_config()
            .expect("paper-scale scenario is valid")
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    /// Side of the square RIS.
    pub fn ris_side(&self) -> usize {
        (self.n as f64).sqrt().round() as usize
    }

    /// Positions of the targets from their bearing and range, at the DFBS
    /// height.
    pub fn target_positions(&self) -> Vec<[f64; 3]> {
        let o = self.positions.dfbs;
        self.target_angles
            .iter()
            .map(|&th| {
                let th = th.to_radians();
                [
                    o[0] + self.target_distance * th.sin(),
                    o[1] + self.target_distance * th.cos(),
                    o[2],
                ]
            })
            .collect()
    }

    /// Checks invariants and snaps the angles onto the grid.
    pub fn validate(mut self) -> Result<Self> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m == 0 {
            return fail("M must be at least 1".into());
        }
        if self.n == 0 {
            return fail("N must be at least 1".into());
        }
        let side = self.ris_side();
        if side * side != self.n {
            return fail(format!("N = {} is not a perfect square", self.n));
        }
        if self.k_d > self.k {
            return fail(format!("K_d = {} exceeds K = {}", self.k_d, self.k));
        }
        if self.t_d > self.t {
            return fail(format!("T_d = {} exceeds T = {}", self.t_d, self.t));
        }
        if self.target_angles.len() != self.t {
            return fail(format!(
                "{} target angles given for T = {}",
                self.target_angles.len(),
                self.t
            ));
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive".into());
        }
        if !(self.w_b >= 0.0 && self.w_c >= 0.0) {
            return fail("weights must be non-negative".into());
        }
        if !(self.p_t > 0.0 && self.sigma2 > 0.0 && self.gamma > 0.0) {
            return fail("P_t, sigma2 and Gamma must be positive".into());
        }
        if !(self.rho >= 0.0) {
            return fail("rho must be non-negative".into());
        }
        if !(self.target_distance > 0.0) {
            return fail("target distance must be positive".into());
        }
        if self.n_rand == 0 {
            return fail("N_rand must be at least 1".into());
        }
        if self.grid.is_empty() || self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return fail("grid must be non-empty and strictly ascending".into());
        }
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if lo > -90.0 + 1e-9 || hi < 90.0 - 1e-9 {
            return fail("grid must cover [-90, 90] degrees".into());
        }
        for &a in self.target_angles.iter().chain(std::iter::once(&self.zeta_r)) {
            if !(a > -90.0 && a < 90.0) {
                return fail(format!("angle {a} outside (-90, 90)"));
            }
        }
        self.target_angles = self.target_angles.iter().map(|&a| self.snap(a)).collect();
        self.zeta_r = self.snap(self.zeta_r);
        Ok(self)
    }

    /// Nearest grid angle.
    pub fn snap(&self, angle: f64) -> f64 {
        self.grid
            .iter()
            .copied()
            .min_by(|a, b| (a - angle).abs().total_cmp(&(b - angle).abs()))
            .unwrap_or(angle)
    }
}

/// On-disk scenario description. Every key is optional and falls back to
/// the desk-scale default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// Defaults to `K`.
    #[serde(rename = "K_d", skip_serializing_if = "Option::is_none")]
    pub k_d: Option<usize>,
    /// Defaults to `T`.
    #[serde(rename = "T_d", skip_serializing_if = "Option::is_none")]
    pub t_d: Option<usize>,
    /// dBW.
    #[serde(rename = "P_t")]
    pub p_t_dbw: f64,
    /// dB.
    #[serde(rename = "Gamma")]
    pub gamma_db: f64,
    /// dBm.
    #[serde(rename = "sigma2")]
    pub sigma2_dbm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_angles: Option<Vec<f64>>,
    pub target_distance: f64,
    /// Defaults to the bearing of the comm-RIS from the DFBS.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta_r: Option<f64>,
    pub epsilon: f64,
    pub w_b: f64,
    pub w_c: f64,
    #[serde(default)]
    pub crosscorr_full_grid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub rho: f64,
    pub positions: Positions,
    #[serde(rename = "N_rand")]
    pub n_rand: usize,
    #[serde(rename = "Tol")]
    pub tol: f64,
    #[serde(rename = "MaxIter")]
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile {
            m: 8,
            n: 16,
            k: 2,
            t: 2,
            k_d: None,
            t_d: None,
            p_t_dbw: 0.0,
            gamma_db: 5.0,
            sigma2_dbm: -94.0,
            target_angles: None,
            target_distance: 5.0,
            zeta_r: None,
            epsilon: 10.0,
            w_b: 1.0,
            w_c: 1.0,
            crosscorr_full_grid: false,
            grid: None,
            rho: 10.0,
            positions: Positions::default(),
            n_rand: 500,
            tol: 1e-4,
            max_iter: 20,
            seed: 0,
        }
    }
}

// Lets a TOML file name only the keys it changes.
impl<'de> Deserialize<'de> for ScenarioFileDefaulted {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let table = toml::Table::deserialize(d)?;
        ScenarioFile::default()
            .overlay(table)
            .map(ScenarioFileDefaulted)
            .map_err(serde::de::Error::custom)
    }
}

/// A [`ScenarioFile`] whose missing keys were filled from the defaults.
#[derive(Debug, Clone)]
pub struct ScenarioFileDefaulted(pub ScenarioFile);

impl ScenarioFile {
    pub fn paper_scale() -> Self {
        ScenarioFile {
            m: 16,
            n: 100,
            k: 4,
            n_rand: 1000,
            ..ScenarioFile::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let parsed: ScenarioFileDefaulted = toml::from_str(text)?;
        Ok(parsed.0)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// `self` with every key present in `table` replaced.
    pub fn overlay(&self, table: toml::Table) -> Result<Self> {
        let mut base = match toml::Value::try_from(self) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config("scenario did not serialize".into())),
        };
        base.extend(table);
        Ok(toml::Value::Table(base).try_into::<ScenarioFile>()?)
    }

    /// Parses `text` on top of `self` rather than the desk-scale defaults.
    pub fn overlay_toml_str(&self, text: &str) -> Result<Self> {
        self.overlay(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario file serializes")
    }

    /// Sets one scalar parameter by its file key, in file units.
    pub fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{key} must be a non-negative integer, got {v}")))
            }
        };
        match key {
            "M" => self.m = as_count(value)?,
            "N" => self.n = as_count(value)?,
            "K" => self.k = as_count(value)?,
            "K_d" => self.k_d = Some(as_count(value)?),
            "T_d" => self.t_d = Some(as_count(value)?),
            "P_t" => self.p_t_dbw = value,
            "Gamma" => self.gamma_db = value,
            "sigma2" => self.sigma2_dbm = value,
            "epsilon" => self.epsilon = value,
            "w_b" => self.w_b = value,
            "w_c" => self.w_c = value,
            "rho" => self.rho = value,
            "N_rand" => self.n_rand = as_count(value)?,
            "MaxIter" => self.max_iter = as_count(value)?,
            "Tol" => self.tol = value,
            "target_distance" => self.target_distance = value,
            _ => return Err(Error::Config(format!("unknown sweep parameter '{key}'"))),
        }
        Ok(())
    }

    pub fn into_config(self) -> Result<ScenarioConfig> {
        let target_angles = match self.target_angles {
            Some(a) => a,
            None if self.t == 2 => vec![-50.0, -10.0],
            None if self.t <= REFERENCE_TARGET_ANGLES.len() => {
                REFERENCE_TARGET_ANGLES[..self.t].to_vec()
            }
            None => {
                return Err(Error::Config(format!(
                    "T = {} needs explicit target_angles",
                    self.t
                )))
            }
        };
        let zeta_r = match self.zeta_r {
            Some(z) => z,
            None => ula_bearing(self.positions.dfbs, self.positions.comm_ris)?,
        };
        ScenarioConfig {
            m: self.m,
            n: self.n,
            k: self.k,
            t: self.t,
            k_d: self.k_d.unwrap_or(self.k),
            t_d: self.t_d.unwrap_or(self.t),
            p_t: db_to_linear(self.p_t_dbw),
            gamma: db_to_linear(self.gamma_db),
            sigma2: dbm_to_watts(self.sigma2_dbm),
            target_angles,
            target_distance: self.target_distance,
            zeta_r,
            epsilon: self.epsilon,
            w_b: self.w_b,
            w_c: self.w_c,
            crosscorr_full_grid: self.crosscorr_full_grid,
            grid: self.grid.unwrap_or_else(default_grid),
            rho: self.rho,
            positions: self.positions,
            n_rand: self.n_rand,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
        }
        .validate()
    }
}

impl From<&ScenarioConfig> for ScenarioFile {
    fn from(c: &ScenarioConfig) -> Self {
        ScenarioFile {
            m: c.m,
            n: c.n,
            k: c.k,
            t: c.t,
            k_d: Some(c.k_d),
            t_d: Some(c.t_d),
            p_t_dbw: linear_to_db(c.p_t),
            gamma_db: linear_to_db(c.gamma),
            sigma2_dbm: linear_to_db(c.sigma2) + 30.0,
            target_angles: Some(c.target_angles.clone()),
            target_distance: c.target_distance,
            zeta_r: Some(c.zeta_r),
            epsilon: c.epsilon,
            w_b: c.w_b,
            w_c: c.w_c,
            crosscorr_full_grid: c.crosscorr_full_grid,
            grid: Some(c.grid.clone()),
            rho: c.rho,
            positions: c.positions.clone(),
            n_rand: c.n_rand,
            tol: c.tol,
            max_iter: c.max_iter,
            seed: c.seed,
        }
    }
}
