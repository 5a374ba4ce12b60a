//! Levy measure specifications on the mark space `Z = R`, compound-Poisson
//! jump sampling, and moment integrals against the measure.
//!
//! Two families are supported: finitely many atoms, and a symmetric
//! stable-like density `c / |z|^{1+alpha}` truncated to
//! `r_min <= |z| <= r_max`. Both have finite total mass, so jumps form a
//! homogeneous compound Poisson process.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One atom of a purely atomic Levy measure: mass `rate` at mark `mark`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mark: f64,
    pub rate: f64,
}

/// Levy measure on `R` with no atom at zero and finite total mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevyMeasureSpec {
    FiniteAtoms { atoms: Vec<Atom> },
    TruncatedStable {
        c: f64,
        alpha_stab: f64,
        r_min: f64,
        r_max: f64,
    },
}

/// A single Poisson jump: event time and mark drawn from the normalized
/// Levy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: f64,
}

impl LevyMeasureSpec {
    /// Measure with no jumps at all.
    pub fn none() -> Self {
        LevyMeasureSpec::FiniteAtoms { atoms: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LevyMeasureSpec::FiniteAtoms { atoms } => {
                for (i, a) in atoms.iter().enumerate() {
                    if a.mark == 0.0 || !a.mark.is_finite() {
                        return Err(Error::InvalidLevyMeasure(format!(
                            "atom {i}: mark must be finite and nonzero (no atom at zero), got {}",
                            a.mark
                        )));
                    }
                    if !(a.rate > 0.0 && a.rate.is_finite()) {
                        return Err(Error::InvalidLevyMeasure(format!(
                            "atom {i}: rate must be positive and finite, got {}",
                            a.rate
                        )));
                    }
                }
                Ok(())
            }
            LevyMeasureSpec::TruncatedStable {
                c,
                alpha_stab,
                r_min,
                r_max,
            } => {
                if !(*c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidLevyMeasure(format!(
                        "truncated stable: c must be positive, got {c}"
                    )));
                }
                if !(*alpha_stab > 0.0 && *alpha_stab < 2.0) {
                    return Err(Error::InvalidLevyMeasure(format!(
                        "truncated stable: alpha must lie in (0,2), got {alpha_stab}"
                    )));
                }
                if !(*r_min > 0.0 && *r_max > *r_min && r_max.is_finite()) {
                    return Err(Error::InvalidLevyMeasure(format!(
                        "truncated stable: need 0 < r_min < r_max < inf, got [{r_min}, {r_max}]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Total mass `lambda(Z)`.
    ///
    /// Truncated stable closed form: `2c (r_min^{-a} - r_max^{-a}) / a`.
    pub fn total_rate(&self) -> f64 {
        match self {
            LevyMeasureSpec::FiniteAtoms { atoms } => atoms.iter().map(|a| a.rate).sum(),
            LevyMeasureSpec::TruncatedStable {
                c,
                alpha_stab,
                r_min,
                r_max,
            } => 2.0 * c * (r_min.powf(-alpha_stab) - r_max.powf(-alpha_stab)) / alpha_stab,
        }
    }

    /// `integral g(z) lambda(dz)` over the support.
    ///
    /// Atoms: exact weighted sum. Truncated stable: adaptive Simpson on each
    /// half-line to relative tolerance 1e-10. Non-finite integrand values on
    /// the support are rejected.
    pub fn integral(&self, g: impl Fn(f64) -> f64) -> Result<f64> {
        match self {
            LevyMeasureSpec::FiniteAtoms { atoms } => {
                let mut sum = 0.0;
                for a in atoms {
                    let v = g(a.mark);
                    if !v.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "integrand non-finite at mark {}",
                            a.mark
                        )));
                    }
                    sum += v * a.rate;
                }
                Ok(sum)
            }
            LevyMeasureSpec::TruncatedStable {
                c,
                alpha_stab,
                r_min,
                r_max,
            } => {
                let density = |z: f64| c * z.abs().powf(-1.0 - alpha_stab);
                let pos = adaptive_simpson(&|z: f64| g(z) * density(z), *r_min, *r_max, 1e-10)?;
                let neg = adaptive_simpson(&|z: f64| g(-z) * density(z), *r_min, *r_max, 1e-10)?;
                Ok(pos + neg)
            }
        }
    }

    /// Draws one mark from the normalized measure `lambda / lambda(Z)`.
    pub fn sample_mark(&self, rng: &mut impl Rng) -> f64 {
        match self {
            LevyMeasureSpec::FiniteAtoms { atoms } => {
                let total = self.total_rate();
                let mut u = rng.random::<f64>() * total;
                for a in atoms {
                    if u < a.rate {
                        return a.mark;
                    }
                    u -= a.rate;
                }
                atoms.last().map(|a| a.mark).unwrap_or(0.0)
            }
            LevyMeasureSpec::TruncatedStable {
                alpha_stab,
                r_min,
                r_max,
                ..
            } => {
                // Inverse CDF on one half-line; sign symmetric.
                let a = *alpha_stab;
                let lo = r_min.powf(-a);
                let hi = r_max.powf(-a);
                let u = rng.random::<f64>();
                let r = (lo - u * (lo - hi)).powf(-1.0 / a);
                if rng.random::<bool>() {
                    r
                } else {
                    -r
                }
            }
        }
    }

    /// Jump events of a homogeneous Poisson process with rate `lambda(Z)` on
    /// `[0, horizon]`, marks i.i.d. from the normalized measure, sorted by
    /// time.
    pub fn sample_jumps(&self, horizon: f64, rng: &mut impl Rng) -> Result<Vec<JumpEvent>> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        let rate = self.total_rate();
        let mut events = Vec::new();
        if rate == 0.0 {
            return Ok(events);
        }
        let mut t = 0.0;
        loop {
            // exponential inter-arrival time
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / rate;
            if t > horizon {
                break;
            }
            let mark = self.sample_mark(rng);
            events.push(JumpEvent { time: t, mark });
        }
        Ok(events)
    }

    /// CDF mass of `{|z| <= r}` relative to the total, for distribution tests.
    pub fn mass_abs_below(&self, r: f64) -> f64 {
        match self {
            LevyMeasureSpec::FiniteAtoms { atoms } => {
                atoms
                    .iter()
                    .filter(|a| a.mark.abs() <= r)
                    .map(|a| a.rate)
                    .sum()
            }
            LevyMeasureSpec::TruncatedStable {
                c,
                alpha_stab,
                r_min,
                r_max,
            } => {
                let r = r.clamp(*r_min, *r_max);
                2.0 * c * (r_min.powf(-alpha_stab) - r.powf(-alpha_stab)) / alpha_stab
            }
        }
    }
}

/// Adaptive Simpson quadrature with absolute/relative tolerance mix.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "integrand non-finite at {x}"
            )));
        }
        Ok(v)
    };
    let fa = eval(a)?;
    let fb = eval(b)?;
    let m = 0.5 * (a + b);
    let fm = eval(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let scale = whole.abs().max(1e-300);
    simpson_recurse(f, a, b, fa, fm, fb, whole, rel_tol * scale, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    if !flm.is_finite() || !frm.is_finite() {
        return Err(Error::InvalidArgument(
            "integrand non-finite inside quadrature interval".into(),
        ));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 {
        return Err(Error::QuadratureDiverged(format!(
            "adaptive Simpson recursion limit on [{a}, {b}]"
        )));
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    let l = simpson_recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?;
    let r = simpson_recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?;
    Ok(l + r)
}
