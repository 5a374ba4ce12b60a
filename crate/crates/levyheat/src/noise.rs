//! The two noise-coefficient families: additive `sigma(x,t)`, `eta(x,t,z)`
//! and linear multiplicative `sigma * u`, `eta(z) * u`, together with the
//! derived energy quantities entering the blow-up criteria.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, IntervalGrid};
use crate::levy::LevyMeasureSpec;

type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type SpaceTimeMarkFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Additive noise coefficients: deterministic-in-`u` forcing `sigma(x, t)`
/// and jump amplitude field `eta(x, t, z)`, treated as zero beyond
/// `decay_horizon`.
#[derive(Clone)]
pub struct AdditiveNoise {
    sigma: SpaceTimeFn,
    eta: SpaceTimeMarkFn,
    decay_horizon: f64,
}

impl std::fmt::Debug for AdditiveNoise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdditiveNoise")
            .field("decay_horizon", &self.decay_horizon)
            .finish_non_exhaustive()
    }
}

impl AdditiveNoise {
    pub fn new(
        sigma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        eta: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        decay_horizon: f64,
    ) -> Result<Self> {
        if !(decay_horizon > 0.0 && decay_horizon.is_finite()) {
            return Err(Error::InvalidNoise(format!(
                "decay horizon must be positive and finite, got {decay_horizon}"
            )));
        }
        Ok(Self {
            sigma: Arc::new(sigma),
            eta: Arc::new(eta),
            decay_horizon,
        })
    }

    pub fn zero() -> Self {
        Self {
            sigma: Arc::new(|_, _| 0.0),
            eta: Arc::new(|_, _, _| 0.0),
            decay_horizon: 1.0,
        }
    }

    /// `sigma(x, t) = amplitude * exp(-decay t) * sin(mode pi x / length)`.
    pub fn decaying_sine(
        amplitude: f64,
        decay: f64,
        mode: u32,
        length: f64,
        decay_horizon: f64,
    ) -> Result<Self> {
        let k = mode as f64 * std::f64::consts::PI / length;
        Self::new(
            move |x, t| amplitude * (-decay * t).exp() * (k * x).sin(),
            |_, _, _| 0.0,
            decay_horizon,
        )
    }

    /// `eta(x, t, z) = z * amplitude * exp(-decay t) * sin(mode pi x / length)`,
    /// with `sigma == 0`.
    pub fn decaying_sine_marks(
        amplitude: f64,
        decay: f64,
        mode: u32,
        length: f64,
        decay_horizon: f64,
    ) -> Result<Self> {
        let k = mode as f64 * std::f64::consts::PI / length;
        Self::new(
            |_, _| 0.0,
            move |x, t, z| z * amplitude * (-decay * t).exp() * (k * x).sin(),
            decay_horizon,
        )
    }

    /// Combines a sigma-only and an eta-only specification.
    pub fn combine(sigma_part: &AdditiveNoise, eta_part: &AdditiveNoise) -> Self {
        let s = sigma_part.sigma.clone();
        let e = eta_part.eta.clone();
        Self {
            sigma: s,
            eta: e,
            decay_horizon: sigma_part.decay_horizon.max(eta_part.decay_horizon),
        }
    }

    pub fn decay_horizon(&self) -> f64 {
        self.decay_horizon
    }

    pub fn sigma_at(&self, x: f64, t: f64) -> f64 {
        if t > self.decay_horizon {
            0.0
        } else {
            (self.sigma)(x, t)
        }
    }

    pub fn eta_at(&self, x: f64, t: f64, z: f64) -> f64 {
        if t > self.decay_horizon {
            0.0
        } else {
            (self.eta)(x, t, z)
        }
    }

    pub fn sigma_field(&self, grid: IntervalGrid, t: f64) -> Field {
        Field::from_fn(grid, |x| self.sigma_at(x, t))
    }

    pub fn eta_field(&self, grid: IntervalGrid, t: f64, z: f64) -> Field {
        Field::from_fn(grid, |x| self.eta_at(x, t, z))
    }

    /// `integral eta(., t, z) lambda(dz)` as a field (the jump compensator).
    pub fn eta_compensator_field(
        &self,
        grid: IntervalGrid,
        t: f64,
        levy: &LevyMeasureSpec,
    ) -> Result<Field> {
        integral_field(levy, grid, |z| self.eta_field(grid, t, z))
    }

    /// Pointwise noise-energy integrand
    /// `||grad sigma(., t)||^2 + integral ||grad eta(., t, z)||^2 lambda(dz)`.
    pub fn grad_energy_integrand(
        &self,
        grid: IntervalGrid,
        t: f64,
        levy: &LevyMeasureSpec,
    ) -> Result<f64> {
        let s = self.sigma_field(grid, t).seminorm_h1_sq();
        let e = levy.integral(|z| self.eta_field(grid, t, z).seminorm_h1_sq())?;
        Ok(s + e)
    }

    /// `integral_0^{T_inf} [ ||grad sigma||^2 + integral ||grad eta||^2 dlambda ] dt`,
    /// by trapezoid quadrature refined until the relative change drops below
    /// 1e-8. The `alpha/2` prefactor of the criterion is the caller's.
    pub fn grad_energy(&self, grid: IntervalGrid, levy: &LevyMeasureSpec) -> Result<f64> {
        self.time_quadrature(|t| self.grad_energy_integrand(grid, t, levy))
    }

    /// Pointwise flat-energy integrand
    /// `||sigma(., t)||^2 + integral ||eta(., t, z)||^2 dlambda`.
    pub fn flat_energy_integrand(
        &self,
        grid: IntervalGrid,
        t: f64,
        levy: &LevyMeasureSpec,
    ) -> Result<f64> {
        let s = self.sigma_field(grid, t).norm_l2_sq();
        let e = levy.integral(|z| self.eta_field(grid, t, z).norm_l2_sq())?;
        Ok(s + e)
    }

    /// `integral_0^t [ ||sigma||^2 + integral ||eta||^2 dlambda ] ds`.
    pub fn flat_energy(
        &self,
        grid: IntervalGrid,
        levy: &LevyMeasureSpec,
        t: f64,
    ) -> Result<f64> {
        let cap = t.min(self.decay_horizon);
        if cap <= 0.0 {
            return Ok(0.0);
        }
        refine_trapezoid(|s| self.flat_energy_integrand(grid, s, levy), 0.0, cap)
    }

    /// Flat energy accumulated over the whole (truncated) time axis,
    /// the `S_inf` of the minimal-K formula.
    pub fn flat_energy_limit(&self, grid: IntervalGrid, levy: &LevyMeasureSpec) -> Result<f64> {
        self.flat_energy(grid, levy, self.decay_horizon)
    }

    fn time_quadrature(&self, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        refine_trapezoid(f, 0.0, self.decay_horizon)
    }
}

/// Composite trapezoid over `[a, b]`, doubling the panel count until the
/// result changes by less than 1e-8 relative.
fn refine_trapezoid(f: impl Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    let mut n = 32usize;
    let mut prev = trapezoid(&f, a, b, n)?;
    for _ in 0..16 {
        n *= 2;
        let next = trapezoid(&f, a, b, n)?;
        let scale = next.abs().max(1e-300);
        if (next - prev).abs() <= 1e-8 * scale {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureDiverged(format!(
        "time quadrature on [{a}, {b}] did not settle after {n} panels"
    )))
}

fn trapezoid(f: &impl Fn(f64) -> Result<f64>, a: f64, b: f64, n: usize) -> Result<f64> {
    let h = (b - a) / n as f64;
    let mut sum = 0.5 * (f(a)? + f(b)?);
    for i in 1..n {
        sum += f(a + i as f64 * h)?;
    }
    Ok(sum * h)
}

/// Field-valued integral against the Levy measure: exact sum for atoms,
/// fixed composite Simpson per half-line for the truncated stable density.
pub fn integral_field(
    levy: &LevyMeasureSpec,
    grid: IntervalGrid,
    g: impl Fn(f64) -> Field,
) -> Result<Field> {
    match levy {
        LevyMeasureSpec::FiniteAtoms { atoms } => {
            let mut out = Field::zeros(grid);
            for a in atoms {
                out.axpy(a.rate, &g(a.mark));
            }
            Ok(out)
        }
        LevyMeasureSpec::TruncatedStable {
            c,
            alpha_stab,
            r_min,
            r_max,
        } => {
            // 512-panel Simpson on each half-line; the density is smooth and
            // bounded on the truncated support.
            let panels = 512usize;
            let mut out = Field::zeros(grid);
            for sign in [1.0, -1.0] {
                let h = (r_max - r_min) / panels as f64;
                for i in 0..panels {
                    let z0 = r_min + i as f64 * h;
                    let z1 = z0 + h;
                    let zm = 0.5 * (z0 + z1);
                    let w = |z: f64| c * z.powf(-1.0 - alpha_stab);
                    out.axpy(h / 6.0 * w(z0), &g(sign * z0));
                    out.axpy(4.0 * h / 6.0 * w(zm), &g(sign * zm));
                    out.axpy(h / 6.0 * w(z1), &g(sign * z1));
                }
            }
            Ok(out)
        }
    }
}

/// Jump amplitude profile `eta(z)` of the linear multiplicative noise.
/// Must be nonnegative on the support of the Levy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaProfile {
    Zero,
    /// `eta(z) = z`
    Identity,
    /// `eta(z) = scale * z`
    Linear { scale: f64 },
    /// `eta(z) = scale * |z|`
    AbsLinear { scale: f64 },
    /// `eta(z) = value`
    Constant { value: f64 },
}

impl EtaProfile {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            EtaProfile::Zero => 0.0,
            EtaProfile::Identity => z,
            EtaProfile::Linear { scale } => scale * z,
            EtaProfile::AbsLinear { scale } => scale * z.abs(),
            EtaProfile::Constant { value } => *value,
        }
    }
}

/// Linear multiplicative noise: `sigma(u, t) = sigma_const * u` and
/// `eta(u, t, z) = eta(z) * u` with `eta >= 0` on the support of the paired
/// Levy measure (enforced at construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicativeNoise {
    pub sigma_const: f64,
    pub eta_profile: EtaProfile,
}

impl MultiplicativeNoise {
    pub fn new(sigma_const: f64, eta_profile: EtaProfile, levy: &LevyMeasureSpec) -> Result<Self> {
        if !sigma_const.is_finite() {
            return Err(Error::InvalidNoise("sigma must be finite".into()));
        }
        for z in support_probe(levy) {
            let v = eta_profile.eval(z);
            if !(v >= 0.0) {
                return Err(Error::InvalidNoise(format!(
                    "eta({z}) = {v} < 0 on the Levy support; the multiplicative \
                     criterion requires eta >= 0"
                )));
            }
        }
        Ok(Self {
            sigma_const,
            eta_profile,
        })
    }

    pub fn eta(&self, z: f64) -> f64 {
        self.eta_profile.eval(z)
    }

    /// `kappa = (sigma^2 + integral eta^2(z) lambda(dz)) / 2`.
    pub fn kappa(&self, levy: &LevyMeasureSpec) -> Result<f64> {
        let eta_sq = levy.integral(|z| {
            let e = self.eta(z);
            e * e
        })?;
        Ok(0.5 * (self.sigma_const * self.sigma_const + eta_sq))
    }

    /// `integral eta(z) lambda(dz)`, the compensator rate of the jump term.
    pub fn eta_mean(&self, levy: &LevyMeasureSpec) -> Result<f64> {
        levy.integral(|z| self.eta(z))
    }
}

/// Sample points of the Levy support at which eta-nonnegativity is checked:
/// every atom, or a scan of both half-lines of the truncated support.
fn support_probe(levy: &LevyMeasureSpec) -> Vec<f64> {
    match levy {
        LevyMeasureSpec::FiniteAtoms { atoms } => atoms.iter().map(|a| a.mark).collect(),
        LevyMeasureSpec::TruncatedStable { r_min, r_max, .. } => {
            let mut pts = Vec::with_capacity(202);
            for i in 0..=100 {
                let z = r_min + (r_max - r_min) * i as f64 / 100.0;
                pts.push(z);
                pts.push(-z);
            }
            pts
        }
    }
}

/// Result of the kappa-window check `0 <= kappa <= alpha * lambda_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaWindow {
    pub ok: bool,
    pub margin: f64,
}

pub fn check_kappa_window(kappa: f64, alpha: f64, lambda1: f64) -> KappaWindow {
    let margin = alpha * lambda1 - kappa;
    KappaWindow {
        ok: kappa >= 0.0 && margin >= 0.0,
        margin,
    }
}
