//! MTJ device abstraction on top of the macrospin dynamics: two-state
//! resistance, Monte Carlo switching probability, and the logistic fit of the
//! switching curve (the "stochastic sigmoid" used as a neuron activation).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llgs::{evolve, hemisphere, step_count, DeviceParams, MagnetizationVector};
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MtjState {
    Parallel,
    AntiParallel,
}

/// How a single switching trial is run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingProtocol {
    /// Field-only dynamics after the pulse, s. The switch is judged at its end.
    pub relax_time: f64,
    /// Thermal equilibration steps before the pulse.
    pub equilibration_steps: usize,
    /// Deterministic tilt of the starting state away from −z, rad. Without it
    /// the −z state is an exact fixed point of the torque at T = 0.
    pub initial_tilt: f64,
}

impl Default for SwitchingProtocol {
    fn default() -> Self {
        Self { relax_time: 0.5e-9, equilibration_steps: 100, initial_tilt: 0.02 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtjParams {
    pub device: DeviceParams,
    /// Parallel-state resistance, Ω.
    pub r_p: f64,
    /// Antiparallel-state resistance, Ω.
    pub r_ap: f64,
    /// Charge-to-spin current conversion in the heavy-metal layer.
    pub theta_sh: f64,
    pub protocol: SwitchingProtocol,
}

impl Default for MtjParams {
    fn default() -> Self {
        Self {
            device: DeviceParams::default(),
            r_p: 5e3,
            r_ap: 10e3,
            theta_sh: 0.3,
            protocol: SwitchingProtocol::default(),
        }
    }
}

impl MtjParams {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        if !(self.r_ap > self.r_p && self.r_p > 0.0) {
            return Err(Error::InvalidParams(format!(
                "need R_ap > R_p > 0, got R_p = {}, R_ap = {}",
                self.r_p, self.r_ap
            )));
        }
        if !(self.theta_sh > 0.0 && self.theta_sh <= 1.0) {
            return Err(Error::InvalidParams(format!("theta_sh must lie in (0, 1], got {}", self.theta_sh)));
        }
        if !(self.protocol.relax_time >= 0.0) || !self.protocol.initial_tilt.is_finite() {
            return Err(Error::InvalidParams("bad switching protocol".into()));
        }
        Ok(())
    }

    /// Tunnel magnetoresistance ratio `(R_ap − R_p)/R_p`.
    pub fn tmr(&self) -> f64 {
        (self.r_ap - self.r_p) / self.r_p
    }

    /// Charge current through the heavy metal at the zero-temperature
    /// instability threshold of the free layer.
    pub fn critical_charge_current(&self) -> f64 {
        self.device.critical_spin_current() / self.theta_sh
    }
}

pub fn resistance(state: MtjState, params: &MtjParams) -> f64 {
    match state {
        MtjState::Parallel => params.r_p,
        MtjState::AntiParallel => params.r_ap,
    }
}

/// 95% normal-approximation halfwidth `1.96·sqrt(p(1−p)/n)`.
pub fn ci_halfwidth(p_hat: f64, trials: u64) -> f64 {
    1.96 * (p_hat * (1.0 - p_hat) / trials as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingEstimate {
    pub probability: f64,
    pub ci_halfwidth: f64,
    pub trials: u64,
}

/// Runs one switching trial from the AP-equivalent state (−z) and reports
/// whether the free layer ended in the opposite hemisphere.
fn switching_trial(
    spin_current: f64,
    pulse_steps: usize,
    relax_steps: usize,
    params: &MtjParams,
    seed: u64,
    trial: u64,
) -> Result<bool> {
    let device = &params.device;
    let mut rng = substream(seed, "switching-trial", trial);
    let tilt = params.protocol.initial_tilt;
    let m0 = MagnetizationVector { mx: tilt.sin(), my: 0.0, mz: -tilt.cos() };
    let eq = params.protocol.equilibration_steps;
    let mut run = || -> Result<MagnetizationVector> {
        let m = evolve(m0, device, [0.0; 3], eq, 0, &mut rng, |_, _| {})?;
        let m = evolve(m, device, [0.0, 0.0, spin_current], pulse_steps, eq, &mut rng, |_, _| {})?;
        let m = evolve(m, device, [0.0; 3], relax_steps, eq + pulse_steps, &mut rng, |_, _| {})?;
        Ok(m)
    };
    let m = run().map_err(|e| Error::TrialFault { trial, source: Box::new(e) })?;
    Ok(hemisphere(&m) != hemisphere(&m0))
}

/// Fraction of `trials` pulses that switch the device, with its 95% CI.
///
/// The charge current is converted to a +z-polarized spin current through
/// `theta_sh`. Trial `t` draws from substream `t` of `seed`, so the estimate
/// does not depend on how trials are scheduled across threads.
pub fn estimate_switching_probability(
    charge_current: f64,
    pulse_width: f64,
    trials: u64,
    params: &MtjParams,
    seed: u64,
) -> Result<SwitchingEstimate> {
    params.validate()?;
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    if !(pulse_width >= params.device.dt) || !charge_current.is_finite() {
        return Err(Error::Domain(format!(
            "pulse width {pulse_width} s must be >= dt = {} s and the current finite",
            params.device.dt
        )));
    }
    let spin_current = params.theta_sh * charge_current;
    let pulse_steps = step_count(pulse_width, params.device.dt).max(1);
    let relax_steps = step_count(params.protocol.relax_time, params.device.dt);
    let outcomes: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| switching_trial(spin_current, pulse_steps, relax_steps, params, seed, t))
        .collect();
    let mut switched = 0u64;
    for outcome in outcomes {
        if outcome? {
            switched += 1;
        }
    }
    let probability = switched as f64 / trials as f64;
    Ok(SwitchingEstimate { probability, ci_halfwidth: ci_halfwidth(probability, trials), trials })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Charge current, A.
    pub current: f64,
    pub probability: f64,
    pub trials: u64,
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SwitchingCurve {
    pub points: Vec<CurvePoint>,
}

impl SwitchingCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "current_A,p_hat,trials,ci_halfwidth")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{}", p.current, p.probability, p.trials, p.ci_halfwidth)?;
        }
        Ok(())
    }

    /// Largest violation of `p(I₁) ≤ p(I₂) + ci₁ + ci₂` over all `I₁ < I₂`;
    /// zero or negative means the curve is monotone within CI slack.
    pub fn worst_monotonicity_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, lo) in self.points.iter().enumerate() {
            for hi in &self.points[i + 1..] {
                let v = lo.probability - hi.probability - lo.ci_halfwidth - hi.ci_halfwidth;
                worst = worst.max(v);
            }
        }
        worst
    }
}

/// One switching estimate per current, each from its own seed substream.
pub fn sweep_switching_curve(
    currents: &[f64],
    pulse_width: f64,
    trials_per_point: u64,
    params: &MtjParams,
    seed: u64,
) -> Result<SwitchingCurve> {
    if currents.len() < 5 {
        return Err(Error::Domain(format!("a sweep needs at least 5 currents, got {}", currents.len())));
    }
    if !currents.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::Domain("sweep currents must be strictly increasing".into()));
    }
    let points = currents
        .iter()
        .enumerate()
        .map(|(i, &current)| {
            let point_seed = derive_seed(seed, "sweep-point", i as u64);
            let est =
                estimate_switching_probability(current, pulse_width, trials_per_point, params, point_seed)?;
            Ok(CurvePoint {
                current,
                probability: est.probability,
                trials: est.trials,
                ci_halfwidth: est.ci_halfwidth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SwitchingCurve { points })
}

/// `p(I) = 1/(1+exp(−a·(I−b)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    /// Slope, A⁻¹.
    pub a: f64,
    /// Offset (50% current), A.
    pub b: f64,
    pub r_squared: f64,
}

impl SigmoidFit {
    pub fn probability(&self, current: f64) -> f64 {
        logistic(self.a * (current - self.b))
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const FIT_MAX_ITER: usize = 200;

/// Linear interpolation of the first crossing of `level`, in normalized units.
fn crossing(xs: &[f64], ps: &[f64], level: f64) -> Option<f64> {
    xs.windows(2).zip(ps.windows(2)).find_map(|(x, p)| {
        if (p[0] - level) * (p[1] - level) <= 0.0 && p[0] != p[1] {
            Some(x[0] + (level - p[0]) * (x[1] - x[0]) / (p[1] - p[0]))
        } else {
            None
        }
    })
}

fn sse(xs: &[f64], ps: &[f64], slope: f64, offset: f64) -> f64 {
    xs.iter().zip(ps).map(|(&x, &p)| (p - logistic(slope * (x - offset))).powi(2)).sum()
}

/// Least-squares logistic fit by damped Gauss–Newton (Levenberg–Marquardt).
///
/// Currents are centered and scaled before fitting, so the iteration is
/// well conditioned whatever the current units.
pub fn fit_stochastic_sigmoid(curve: &SwitchingCurve) -> Result<SigmoidFit> {
    let pts = &curve.points;
    if pts.len() < 5 {
        return Err(Error::FitDomain(format!("need >= 5 points, got {}", pts.len())));
    }
    let lo = pts.iter().map(|p| p.probability).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.probability).fold(f64::NEG_INFINITY, f64::max);
    if !(lo < 0.2 && hi > 0.8) {
        return Err(Error::FitDomain(format!("curve must span p < 0.2 and p > 0.8, spans [{lo}, {hi}]")));
    }
    if !pts.iter().any(|p| p.probability > 0.0 && p.probability < 1.0) {
        return Err(Error::FitDomain(
            "curve is a step function with no mid-range points; the slope is unbounded".into(),
        ));
    }

    let n = pts.len() as f64;
    let center = pts.iter().map(|p| p.current).sum::<f64>() / n;
    let spread = (pts.last().unwrap().current - pts[0].current) / 2.0;
    if !(spread > 0.0) {
        return Err(Error::FitDomain("currents must be increasing".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| (p.current - center) / spread).collect();
    let ps: Vec<f64> = pts.iter().map(|p| p.probability).collect();

    let mut offset = crossing(&xs, &ps, 0.5).unwrap_or(0.0);
    let mut slope = match (crossing(&xs, &ps, 0.2), crossing(&xs, &ps, 0.8)) {
        (Some(x20), Some(x80)) if x80 > x20 => 2.0 * 4.0f64.ln() / (x80 - x20),
        _ => 4.0,
    };
    let mut cost = sse(&xs, &ps, slope, offset);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..FIT_MAX_ITER {
        // Normal equations for residuals r = p − σ(s(x − o)).
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&x, &p) in xs.iter().zip(&ps) {
            let q = logistic(slope * (x - offset));
            let d = q * (1.0 - q);
            let j = [d * (x - offset), -d * slope];
            let r = p - q;
            for a in 0..2 {
                jtr[a] += j[a] * r;
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let m = [[jtj[0][0] * (1.0 + lambda), jtj[0][1]], [jtj[1][0], jtj[1][1] * (1.0 + lambda)]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let ds = (m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det;
            let dof = (m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det;
            let (s_new, o_new) = (slope + ds, offset + dof);
            let c_new = sse(&xs, &ps, s_new, o_new);
            if c_new <= cost {
                let small =
                    ds.abs() <= 1e-13 * slope.abs().max(1.0) && dof.abs() <= 1e-13 * offset.abs().max(1.0);
                slope = s_new;
                offset = o_new;
                cost = c_new;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = small || cost < 1e-28;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(FIT_MAX_ITER));
    }
    if !(slope > 0.0) || !slope.is_finite() {
        return Err(Error::FitDomain(format!("fitted slope {slope} is not positive")));
    }

    let mean = ps.iter().sum::<f64>() / n;
    let ss_tot: f64 = ps.iter().map(|p| (p - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { (1.0 - cost / ss_tot).clamp(0.0, 1.0) } else { 0.0 };
    Ok(SigmoidFit { a: slope / spread, b: center + offset * spread, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn curve_from(points: impl IntoIterator<Item = (f64, f64)>, trials: u64) -> SwitchingCurve {
        SwitchingCurve {
            points: points
                .into_iter()
                .map(|(current, p)| CurvePoint {
                    current,
                    probability: p,
                    trials,
                    ci_halfwidth: ci_halfwidth(p, trials),
                })
                .collect(),
        }
    }

    #[test]
    fn resistance_states() {
        let p = MtjParams::default();
        assert_eq!(resistance(MtjState::Parallel, &p), 5e3);
        assert_eq!(resistance(MtjState::AntiParallel, &p), 10e3);
        assert_eq!(p.tmr(), 1.0);
    }

    #[test]
    fn invalid_resistances_rejected() {
        let p = MtjParams { r_p: 10e3, r_ap: 5e3, ..MtjParams::default() };
        assert!(p.validate().is_err());
        let p = MtjParams { theta_sh: 1.5, ..MtjParams::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn no_current_no_noise_never_switches() {
        let mut p = MtjParams::default();
        p.device.temperature = 0.0;
        let est = estimate_switching_probability(0.0, 1e-10, 100, &p, 1).unwrap();
        assert_eq!(est.probability, 0.0);
        assert_eq!(est.ci_halfwidth, 0.0);
    }

    #[test]
    fn large_current_at_zero_temperature_always_switches() {
        let mut p = MtjParams::default();
        p.device.temperature = 0.0;
        let current = 5.0 * p.critical_charge_current();
        let est = estimate_switching_probability(current, 10e-9, 100, &p, 1).unwrap();
        assert_eq!(est.probability, 1.0);
    }

    #[test]
    fn sweep_rejects_non_increasing_currents() {
        let p = MtjParams::default();
        let err = sweep_switching_curve(&[0.0; 5], 1e-10, 1, &p, 0);
        assert!(matches!(err, Err(Error::Domain(_))));
        let err = sweep_switching_curve(&[1.0, 2.0, 3.0, 4.0], 1e-10, 1, &p, 0);
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn pulse_shorter_than_dt_rejected() {
        let p = MtjParams::default();
        assert!(estimate_switching_probability(1e-3, 1e-14, 1, &p, 0).is_err());
        assert!(estimate_switching_probability(1e-3, 1e-9, 0, &p, 0).is_err());
    }

    #[test]
    fn fit_recovers_exact_logistic() {
        let (a0, b0) = (2.5e4, 3.0e-4);
        let curve = curve_from(
            (0..15).map(|i| {
                let current = 1.5e-4 + i as f64 * 2.2e-5;
                (current, logistic(a0 * (current - b0)))
            }),
            2000,
        );
        let fit = fit_stochastic_sigmoid(&curve).unwrap();
        assert!(((fit.a - a0) / a0).abs() < 1e-6, "{fit:?}");
        assert!(((fit.b - b0) / b0).abs() < 1e-6, "{fit:?}");
        assert!(fit.r_squared >= 1.0 - 1e-9);
    }

    #[test]
    fn fit_on_binomial_noise_stays_near_offset() {
        let (a0, b0, trials) = (2.5e4, 3.0e-4, 2000u64);
        let mut rng = rng_from_seed(2024);
        let curve = curve_from(
            (0..15).map(|i| {
                let current = 1.5e-4 + i as f64 * 2.2e-5;
                let p = logistic(a0 * (current - b0));
                let hits = (0..trials).filter(|_| rng.random::<f64>() < p).count();
                (current, hits as f64 / trials as f64)
            }),
            trials,
        );
        let fit = fit_stochastic_sigmoid(&curve).unwrap();
        // CI halfwidth of p at the midpoint, mapped to current via the slope a0/4.
        let ci_current = ci_halfwidth(0.5, trials) / (a0 / 4.0);
        assert!((fit.b - b0).abs() <= 3.0 * ci_current, "{fit:?}");
    }

    #[test]
    fn fit_rejects_flat_and_step_curves() {
        let flat = curve_from((0..6).map(|i| (i as f64, 0.0)), 100);
        assert!(matches!(fit_stochastic_sigmoid(&flat), Err(Error::FitDomain(_))));
        let step = curve_from((0..6).map(|i| (i as f64, if i < 3 { 0.0 } else { 1.0 })), 100);
        assert!(matches!(fit_stochastic_sigmoid(&step), Err(Error::FitDomain(_))));
    }

    #[test]
    fn curve_csv_header() {
        let curve = curve_from([(1e-4, 0.25)], 10);
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("current_A,p_hat,trials,ci_halfwidth\n0.0001,0.25,10,"));
    }
}
