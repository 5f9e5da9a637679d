//! Macrospin stochastic LLGS dynamics.
//!
//! The free layer is a single unit vector `m`. It evolves under
//!
//! ```text
//! dm/dt = -γ m×H + α m×dm/dt + (1/(q·Ns)) m×(Is×m)
//! ```
//!
//! with `H = H_eff + H_thermal`. The implicit Gilbert term is solved
//! algebraically: writing `A = -γ m×H + (1/(q·Ns)) m×(Is×m)`, the equation is
//! equivalent to `(1+α²) dm/dt = A + α m×A`. That explicit form is integrated
//! with the stochastic Heun scheme; the thermal field is drawn once per step
//! and held fixed for both the predictor and the corrector.
//!
//! Units are SI throughout, with fields in A/m. The gyromagnetic ratio is
//! `γ = 2·μB·μ0/ħ` (m·A⁻¹·s⁻¹), which makes both the precession term and the
//! thermal-field variance dimensionally consistent with fields in A/m.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, StreamRng};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(a: f64, x: Vec3, y: Vec3) -> Vec3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

#[inline]
fn scale(a: f64, x: Vec3) -> Vec3 {
    [a * x[0], a * x[1], a * x[2]]
}

fn is_finite3(v: Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Unit magnetization of the free layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetizationVector {
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl MagnetizationVector {
    pub const PLUS_Z: Self = Self { mx: 0.0, my: 0.0, mz: 1.0 };
    pub const MINUS_Z: Self = Self { mx: 0.0, my: 0.0, mz: -1.0 };

    /// Normalizes `(mx, my, mz)`; fails on a zero or non-finite vector.
    pub fn new(mx: f64, my: f64, mz: f64) -> Result<Self> {
        Self::from_array([mx, my, mz])
    }

    pub fn from_array(v: Vec3) -> Result<Self> {
        let n = norm(v);
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidParams(format!("magnetization {v:?} cannot be normalized")));
        }
        Ok(Self::from_unchecked(scale(1.0 / n, v)))
    }

    /// Unit vector at polar angle `theta` from +z, in the x–z plane.
    pub fn tilted_from_z(theta: f64) -> Self {
        Self { mx: theta.sin(), my: 0.0, mz: theta.cos() }
    }

    pub fn as_array(&self) -> Vec3 {
        [self.mx, self.my, self.mz]
    }

    pub fn norm(&self) -> f64 {
        norm(self.as_array())
    }

    fn from_unchecked(v: Vec3) -> Self {
        Self { mx: v[0], my: v[1], mz: v[2] }
    }
}

/// CODATA values in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub k_b: f64,
    pub mu0: f64,
    pub mu_b: f64,
    pub hbar: f64,
    pub q_e: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            k_b: 1.380_649e-23,
            mu0: 1.256_637_062_12e-6,
            mu_b: 9.274_010_078_3e-24,
            hbar: 1.054_571_817e-34,
            q_e: 1.602_176_634e-19,
        }
    }
}

impl PhysicalConstants {
    /// `γ = 2·μB·μ0/ħ` in m·A⁻¹·s⁻¹.
    pub fn gyromagnetic_ratio(&self) -> f64 {
        2.0 * self.mu_b * self.mu0 / self.hbar
    }
}

/// Physical description of the free layer and the integration step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Gilbert damping.
    pub alpha: f64,
    /// Gyromagnetic ratio, m·A⁻¹·s⁻¹.
    pub gamma: f64,
    /// Saturation magnetization, A/m.
    pub ms: f64,
    /// Free-layer volume, m³.
    pub volume: f64,
    /// Temperature, K.
    pub temperature: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Uniaxial anisotropy field along the easy axis z, A/m.
    pub hk: f64,
    /// Demagnetizing field coefficient along the hard axis y, A/m.
    pub hd: f64,
    /// Constant external field, A/m.
    pub applied: Vec3,
    pub constants: PhysicalConstants,
}

impl Default for DeviceParams {
    /// 40×40×2 nm³ free layer, α = 0.0122, Ms = 1e6 A/m, Hk sized for a
    /// thermal stability factor of 30 at 300 K, dt = 0.1 ps. The default
    /// layer is uniaxial (Hd = 0, shape anisotropy folded into Hk), so the
    /// zero-temperature energy is `−Hk·mz²/2` alone. These are illustrative
    /// values, not measured device data.
    fn default() -> Self {
        let constants = PhysicalConstants::default();
        let ms = 1.0e6;
        let volume = 40e-9 * 40e-9 * 2e-9;
        let temperature = 300.0;
        let hk = Self::anisotropy_for_stability(30.0, ms, volume, temperature, &constants);
        Self {
            alpha: 0.0122,
            gamma: constants.gyromagnetic_ratio(),
            ms,
            volume,
            temperature,
            dt: 1e-13,
            hk,
            hd: 0.0,
            applied: [0.0; 3],
            constants,
        }
    }
}

impl DeviceParams {
    /// Anisotropy field giving `Δ = μ0·Ms·Hk·V / (2·kB·T)` at the given temperature.
    pub fn anisotropy_for_stability(
        delta: f64,
        ms: f64,
        volume: f64,
        temperature: f64,
        c: &PhysicalConstants,
    ) -> f64 {
        2.0 * delta * c.k_b * temperature / (c.mu0 * ms * volume)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.alpha > 0.0, "alpha must be > 0"),
            (self.gamma > 0.0, "gamma must be > 0"),
            (self.ms > 0.0, "Ms must be > 0"),
            (self.volume > 0.0, "V must be > 0"),
            (self.temperature >= 0.0, "T must be >= 0"),
            (self.dt > 0.0, "dt must be > 0"),
            (self.hk >= 0.0 && self.hd >= 0.0, "Hk and Hd must be >= 0"),
            (is_finite3(self.applied), "applied field must be finite"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidParams(msg.into()));
            }
        }
        Ok(())
    }

    /// `Ns = Ms·V/μB`, the number of spins in the free layer.
    pub fn spin_count(&self) -> f64 {
        self.ms * self.volume / self.constants.mu_b
    }

    /// Thermal stability factor `μ0·Ms·Hk·V / (2·kB·T)`.
    pub fn stability_factor(&self) -> f64 {
        let c = &self.constants;
        c.mu0 * self.ms * self.hk * self.volume / (2.0 * c.k_b * self.temperature)
    }

    /// Standard deviation of each thermal-field component:
    /// `sqrt( α/(1+α²) · 2·kB·T / (γ·μ0·Ms·V·Δt) )`.
    pub fn thermal_field_std(&self) -> f64 {
        let c = &self.constants;
        let damping = self.alpha / (1.0 + self.alpha * self.alpha);
        (damping * 2.0 * c.k_b * self.temperature / (self.gamma * c.mu0 * self.ms * self.volume * self.dt))
            .sqrt()
    }

    /// Zero-temperature spin current above which a spin-polarized current
    /// destabilizes the easy-axis state, `α·γ·(Hk + Hd/2)·q·Ns`.
    pub fn critical_spin_current(&self) -> f64 {
        self.alpha * self.gamma * (self.hk + 0.5 * self.hd) * self.constants.q_e * self.spin_count()
    }
}

/// A rectangular spin-current pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinCurrentPulse {
    /// Spin current, A.
    pub magnitude: f64,
    /// Pulse width, s.
    pub duration: f64,
    pub polarization_axis: Vec3,
}

impl SpinCurrentPulse {
    pub fn new(magnitude: f64, duration: f64, polarization_axis: Vec3) -> Result<Self> {
        let pulse = Self { magnitude, duration, polarization_axis };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.magnitude.is_finite() {
            return Err(Error::InvalidParams(format!(
                "pulse needs a finite magnitude and positive duration, got {self:?}"
            )));
        }
        if (norm(self.polarization_axis) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "polarization axis {:?} is not a unit vector",
                self.polarization_axis
            )));
        }
        Ok(())
    }

    /// Spin-current vector `Is` (magnitude times polarization).
    pub fn spin_current(&self) -> Vec3 {
        scale(self.magnitude, self.polarization_axis)
    }
}

/// Draws one thermal-field sample. Consumes exactly three normal deviates.
pub fn sample_thermal_field(params: &DeviceParams, rng: &mut StreamRng) -> Vec3 {
    let s = params.thermal_field_std();
    let g: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
    scale(s, g)
}

/// `Hk·mz·ẑ − Hd·my·ŷ + applied`.
pub fn effective_field(m: &MagnetizationVector, params: &DeviceParams, applied: Vec3) -> Vec3 {
    effective_field_raw(m.as_array(), params, applied)
}

#[inline]
fn effective_field_raw(m: Vec3, params: &DeviceParams, applied: Vec3) -> Vec3 {
    [applied[0], applied[1] - params.hd * m[1], applied[2] + params.hk * m[2]]
}

/// Explicit right-hand side `(A + α m×A)/(1+α²)`.
#[inline]
fn llgs_rhs(m: Vec3, h_total: Vec3, spin_term: Vec3, params: &DeviceParams) -> Vec3 {
    let precession = cross(m, h_total);
    let torque = cross(m, cross(spin_term, m));
    let a = axpy(-params.gamma, precession, torque);
    let damped = axpy(params.alpha, cross(m, a), a);
    scale(1.0 / (1.0 + params.alpha * params.alpha), damped)
}

/// Diagnostics for one Heun step, used by the norm-drift checks.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// `| ‖m‖ − 1 |` before renormalization.
    pub drift: f64,
}

/// One Heun step with a given (frozen) thermal field and spin current.
pub fn heun_step(
    m: &MagnetizationVector,
    params: &DeviceParams,
    spin_current: Vec3,
    thermal: Vec3,
) -> Result<(MagnetizationVector, StepInfo)> {
    let fault = |reason: &str| Error::StepFault { step: 0, reason: reason.into() };
    let m0 = m.as_array();
    let spin_term = scale(1.0 / (params.constants.q_e * params.spin_count()), spin_current);
    let bias =
        [params.applied[0] + thermal[0], params.applied[1] + thermal[1], params.applied[2] + thermal[2]];

    let k1 = llgs_rhs(m0, effective_field_raw(m0, params, bias), spin_term, params);
    let predictor = axpy(params.dt, k1, m0);
    if !is_finite3(predictor) {
        return Err(fault("predictor"));
    }
    let k2 = llgs_rhs(predictor, effective_field_raw(predictor, params, bias), spin_term, params);
    let next = [
        m0[0] + 0.5 * params.dt * (k1[0] + k2[0]),
        m0[1] + 0.5 * params.dt * (k1[1] + k2[1]),
        m0[2] + 0.5 * params.dt * (k1[2] + k2[2]),
    ];
    let n = norm(next);
    if !n.is_finite() || n == 0.0 {
        return Err(fault("corrector"));
    }
    Ok((MagnetizationVector::from_unchecked(scale(1.0 / n, next)), StepInfo { drift: (n - 1.0).abs() }))
}

/// Advances `m` by one step `dt` under `pulse` plus a fresh thermal field.
pub fn llgs_step(
    m: &MagnetizationVector,
    params: &DeviceParams,
    pulse: &SpinCurrentPulse,
    rng: &mut StreamRng,
) -> Result<MagnetizationVector> {
    let thermal = sample_thermal_field(params, rng);
    heun_step(m, params, pulse.spin_current(), thermal).map(|(m, _)| m)
}

/// Runs `steps` Heun steps at constant spin current, calling `observe` after
/// each one with the 1-based step count. Faults carry `first_step + k`.
pub fn evolve(
    m: MagnetizationVector,
    params: &DeviceParams,
    spin_current: Vec3,
    steps: usize,
    first_step: usize,
    rng: &mut StreamRng,
    mut observe: impl FnMut(usize, &MagnetizationVector),
) -> Result<MagnetizationVector> {
    let zero_temperature = params.temperature == 0.0;
    let mut m = m;
    for k in 0..steps {
        let thermal = if zero_temperature { [0.0; 3] } else { sample_thermal_field(params, rng) };
        m = match heun_step(&m, params, spin_current, thermal) {
            Ok((next, _)) => next,
            Err(Error::StepFault { reason, .. }) => {
                return Err(Error::StepFault { step: first_step + k, reason })
            }
            Err(e) => return Err(e),
        };
        observe(first_step + k + 1, &m);
    }
    Ok(m)
}

/// Sampled trajectory of a pulse experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, MagnetizationVector)>,
    pub switched: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> MagnetizationVector {
        self.samples.last().map(|s| s.1).unwrap_or(MagnetizationVector::PLUS_Z)
    }

    /// CSV with header `time_s,mx,my,mz`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_s,mx,my,mz")?;
        for (t, m) in &self.samples {
            writeln!(w, "{},{},{},{}", t, m.mx, m.my, m.mz)?;
        }
        Ok(())
    }
}

pub(crate) fn step_count(duration: f64, dt: f64) -> usize {
    (duration / dt).round().max(0.0) as usize
}

/// `sign(mz)` with zero counted as positive.
pub(crate) fn hemisphere(m: &MagnetizationVector) -> bool {
    m.mz >= 0.0
}

/// Applies `pulse` for its duration, then relaxes field-only for `relax_time`.
pub fn simulate_pulse(
    m0: MagnetizationVector,
    pulse: &SpinCurrentPulse,
    params: &DeviceParams,
    relax_time: f64,
    seed: u64,
) -> Result<Trajectory> {
    params.validate()?;
    pulse.validate()?;
    if !(relax_time >= 0.0) {
        return Err(Error::InvalidParams(format!("relax_time {relax_time} must be >= 0")));
    }
    let pulse_steps = step_count(pulse.duration, params.dt).max(1);
    let relax_steps = step_count(relax_time, params.dt);
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(pulse_steps + relax_steps + 1);
    samples.push((0.0, m0));
    let dt = params.dt;
    let mut record = |k: usize, m: &MagnetizationVector| samples.push((k as f64 * dt, *m));
    let m = evolve(m0, params, pulse.spin_current(), pulse_steps, 0, &mut rng, &mut record)?;
    let m = evolve(m, params, [0.0; 3], relax_steps, pulse_steps, &mut rng, &mut record)?;
    Ok(Trajectory { switched: hemisphere(&m) != hemisphere(&m0), samples })
}
