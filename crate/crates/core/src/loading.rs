//! Homogeneous test modes (uniaxial tension, equibiaxial tension, pure shear),
//! the incompressible pressure elimination and the compressible solve for the
//! free transverse stretch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::LoadingError;
use crate::kinematics::DefGrad;
use crate::linalg::Vec3;
use crate::models::EnergyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    UT,
    ET,
    PS,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::UT, Mode::ET, Mode::PS];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::UT => "UT",
            Mode::ET => "ET",
            Mode::PS => "PS",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UT" => Ok(Mode::UT),
            "ET" => Ok(Mode::ET),
            "PS" => Ok(Mode::PS),
            other => Err(format!("unknown deformation mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub mode: Mode,
    pub lambda: f64,
}

impl ModeSpec {
    pub fn new(mode: Mode, lambda: f64) -> Result<Self, LoadingError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(LoadingError::InvalidStretch(lambda));
        }
        Ok(Self { mode, lambda })
    }

    /// Principal stretches of the isochoric mode.
    pub fn stretches(&self) -> Vec3 {
        let l = self.lambda;
        match self.mode {
            Mode::UT => {
                let t = 1.0 / l.sqrt();
                [l, t, t]
            }
            Mode::ET => [l, l, 1.0 / (l * l)],
            Mode::PS => [l, 1.0, 1.0 / l],
        }
    }

    /// Seed for the transverse solve: the incompressible value.
    fn transverse_guess(&self) -> f64 {
        let s = self.stretches();
        match self.mode {
            Mode::UT => s[1],
            Mode::ET | Mode::PS => s[2],
        }
    }

    /// Stretches with the free transverse stretch set to `t`.
    fn with_transverse(&self, t: f64) -> Vec3 {
        let l = self.lambda;
        match self.mode {
            Mode::UT => [l, t, t],
            Mode::ET => [l, l, t],
            Mode::PS => [l, 1.0, t],
        }
    }

    /// Index of the principal stress that must vanish.
    fn transverse_index(&self) -> usize {
        match self.mode {
            Mode::UT => 1,
            Mode::ET | Mode::PS => 2,
        }
    }
}

pub fn mode_defgrad(m: &ModeSpec) -> DefGrad {
    DefGrad::diagonal(m.stretches())
}

/// Principal stresses with the pressure eliminated through the traction-free
/// transverse direction. `dpsi` is `∂ψ/∂λₐ` at `m.stretches()`.
pub fn eliminate_pressure(m: &ModeSpec, dpsi: &Vec3) -> Vec3 {
    let s = m.stretches();
    let t = [0, 1, 2].map(|a| s[a] * dpsi[a]);
    match m.mode {
        Mode::UT => [t[0] - t[1], 0.0, 0.0],
        Mode::ET => {
            let s1 = t[0] - t[2];
            [s1, s1, 0.0]
        }
        Mode::PS => [t[0] - t[2], t[1] - t[2], 0.0],
    }
}

/// Mode stresses of an incompressible material (for compressible models the
/// same elimination is applied to the isochoric state).
pub fn incompressible_mode_stress(model: &EnergyModel, m: &ModeSpec) -> Result<Vec3, LoadingError> {
    let d = model.dpsi_dstretch_at(m.stretches())?;
    Ok(eliminate_pressure(m, &d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeResponse {
    pub stresses: Vec3,
    pub stretches: Vec3,
    pub iterations: usize,
}

pub const BRACKET: (f64, f64) = (0.05, 20.0);
pub const MAX_ITERATIONS: usize = 100;

/// Solves the zero transverse stress condition with the incompressible seed.
pub fn compressible_mode_stress(model: &EnergyModel, m: &ModeSpec) -> Result<ModeResponse, LoadingError> {
    solve_transverse_from(model, m, m.transverse_guess())
}

/// Safeguarded Newton (finite-difference slope, bisection fallback) for the
/// transverse stretch, started from `guess`.
pub fn solve_transverse_from(model: &EnergyModel, m: &ModeSpec, guess: f64) -> Result<ModeResponse, LoadingError> {
    let k = m.transverse_index();
    let eval = |t: f64| -> Result<Vec3, LoadingError> { Ok(model.principal_stress(m.with_transverse(t))?) };
    let residual = |t: f64| -> Result<f64, LoadingError> { Ok(eval(t)?[k]) };

    let (blo, bhi) = BRACKET;
    let guess = guess.clamp(blo, bhi);
    let r0 = residual(guess)?;
    if r0 == 0.0 {
        return Ok(ModeResponse { stresses: eval(guess)?, stretches: m.with_transverse(guess), iterations: 0 });
    }
    // the transverse stress grows with the transverse stretch: grow the
    // bracket away from the seed until the sign changes
    let (mut lo, mut hi) = (guess, guess);
    if r0 > 0.0 {
        while residual(lo)? > 0.0 {
            if lo <= blo {
                return Err(LoadingError::NonPositiveBracket { lo: blo, hi: bhi });
            }
            hi = lo;
            lo = (lo / 1.5).max(blo);
        }
    } else {
        while residual(hi)? < 0.0 {
            if hi >= bhi {
                return Err(LoadingError::NonPositiveBracket { lo: blo, hi: bhi });
            }
            lo = hi;
            hi = (hi * 1.5).min(bhi);
        }
    }

    let mut t = guess.clamp(lo, hi);
    let mut last = f64::NAN;
    for it in 1..=MAX_ITERATIONS {
        let s = eval(t)?;
        let r = s[k];
        last = r;
        if r.abs() < 1e-10 * (1.0 + s[0].abs()) {
            return Ok(ModeResponse { stresses: s, stretches: m.with_transverse(t), iterations: it });
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if hi - lo <= 4.0 * f64::EPSILON * t {
            // bracket exhausted at machine precision
            return Ok(ModeResponse { stresses: s, stretches: m.with_transverse(t), iterations: it });
        }
        let h = 1e-7 * t.max(1.0);
        let slope = (residual(t + h)? - residual(t - h)?) / (2.0 * h);
        let newton = t - r / slope;
        t = if slope.is_finite() && slope != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(LoadingError::NoConvergence { iterations: MAX_ITERATIONS, residual: last })
}

/// Mode response through whichever path the model supports.
pub fn mode_stress(model: &EnergyModel, m: &ModeSpec) -> Result<ModeResponse, LoadingError> {
    if model.is_incompressible() {
        Ok(ModeResponse { stresses: incompressible_mode_stress(model, m)?, stretches: m.stretches(), iterations: 0 })
    } else {
        compressible_mode_stress(model, m)
    }
}
