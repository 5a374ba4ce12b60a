//! Concavity-method functionals and the finite-time blow-up criteria:
//! the additive and multiplicative criteria, the (epsilon, delta) constants,
//! the minimal admissible K, the derived blow-up-time bound `K / (delta v0)`,
//! and diagnostics series computed from ensemble estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, IntervalGrid};
use crate::integrator::ModelParams;
use crate::levy::LevyMeasureSpec;
use crate::noise::{check_kappa_window, AdditiveNoise, KappaWindow, MultiplicativeNoise};

/// The concavity constants `epsilon = (m-1)/4`, `delta = (m-1)/(2(m+3))` and
/// the positive constant `K` of `I(t) = int_0^t v + K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityParams {
    pub epsilon: f64,
    pub delta: f64,
}

/// `2(m+1) - 4 (1 + epsilon)(1 + delta)` for the canonical constants;
/// equals `(m-1)/2` identically.
pub fn concavity_gap(m: f64) -> f64 {
    let eps = (m - 1.0) / 4.0;
    let delta = (m - 1.0) / (2.0 * (m + 3.0));
    2.0 * (m + 1.0) - 4.0 * (1.0 + eps) * (1.0 + delta)
}

/// Canonical concavity constants for exponent `m`. `m = 1` is allowed only
/// as the boundary identity case (both constants vanish).
pub fn concavity_constants(m: f64) -> Result<ConcavityParams> {
    if !(m >= 1.0 && m.is_finite()) {
        return Err(Error::InvalidModel(format!(
            "concavity constants require m >= 1, got {m}"
        )));
    }
    let epsilon = (m - 1.0) / 4.0;
    let delta = (m - 1.0) / (2.0 * (m + 3.0));
    let gap = concavity_gap(m);
    debug_assert!(
        (gap - (m - 1.0) / 2.0).abs() <= 1e-12 * (1.0 + gap.abs()),
        "identity violated: gap({m}) = {gap}"
    );
    Ok(ConcavityParams { epsilon, delta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionMode {
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    BlowupPredicted,
    NotPredicted,
}

/// Named components and verdict of a blow-up criterion evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionReport {
    pub mode: CriterionMode,
    /// `-(alpha/2) E||grad u0||^2`
    pub gradient_term: f64,
    /// `(beta/(m+1)) E||u0||^{m+1}`
    pub nonlinear_term: f64,
    /// additive: `-(alpha/2) * noise gradient energy`; multiplicative: 0
    pub noise_term: f64,
    /// multiplicative: `(kappa/(m+1)) E||u0||^2`; additive: 0
    pub kappa_term: f64,
    pub lhs: f64,
    pub verdict: Verdict,
    pub kappa: Option<f64>,
    pub kappa_window: Option<KappaWindow>,
    /// `v(0) = E||u0||^2`
    pub v0: f64,
    /// total flat noise energy `S_inf` (additive only)
    pub flat_energy_limit: f64,
    pub concavity: ConcavityParams,
    /// minimal K making the concavity argument constants nonnegative
    /// (present when the criterion holds)
    pub k_min: Option<f64>,
    /// blow-up time bound `K_min / (delta v0)` (present when the criterion holds)
    pub tstar_bound: Option<f64>,
}

impl CriterionReport {
    pub fn predicted(&self) -> bool {
        self.verdict == Verdict::BlowupPredicted
    }
}

/// Additive criterion:
/// `-(alpha/2)||grad u0||^2 + (beta/(m+1))||u0||^{m+1} - (alpha/2) * E_grad > 0`
/// with `E_grad` the accumulated noise gradient energy. Deterministic `u0`,
/// so expectations are plain quadrature norms.
pub fn criterion_additive(
    u0: &Field,
    params: &ModelParams,
    noise: &AdditiveNoise,
    levy: &LevyMeasureSpec,
) -> Result<CriterionReport> {
    let grid = u0.grid();
    let gradient_term = -0.5 * params.alpha * u0.seminorm_h1_sq();
    let nonlinear_term = params.beta / (params.m + 1.0) * u0.norm_lp_pow(params.m + 1.0)?;
    let grad_energy = noise
        .grad_energy(grid, levy)
        .map_err(|e| Error::NotEvaluable(format!("noise gradient energy: {e}")))?;
    let noise_term = -0.5 * params.alpha * grad_energy;
    let lhs = gradient_term + nonlinear_term + noise_term;
    let v0 = u0.norm_l2_sq();
    let s_inf = noise.flat_energy_limit(grid, levy)?;
    let concavity = concavity_constants(params.m)?;
    let j0 = gradient_term + nonlinear_term;

    let (k_min, tstar) = if lhs > 0.0 {
        let k = minimal_k_additive(params.m, v0, s_inf, j0, noise_term)?;
        let t = tstar_bound(k, v0, concavity.delta)?;
        (Some(k), Some(t))
    } else {
        (None, None)
    };

    Ok(CriterionReport {
        mode: CriterionMode::Additive,
        gradient_term,
        nonlinear_term,
        noise_term,
        kappa_term: 0.0,
        lhs,
        verdict: if lhs > 0.0 {
            Verdict::BlowupPredicted
        } else {
            Verdict::NotPredicted
        },
        kappa: None,
        kappa_window: None,
        v0,
        flat_energy_limit: s_inf,
        concavity,
        k_min,
        tstar_bound: tstar,
    })
}

/// Multiplicative criterion:
/// `-(alpha/2)||grad u0||^2 + (beta/(m+1))||u0||^{m+1} + (kappa/(m+1))||u0||^2 > 0`
/// together with the window `0 <= kappa <= alpha lambda_1`. The continuum
/// `lambda_1 = pi^2/L^2` is used unless `use_discrete_lambda1` is set.
pub fn criterion_multiplicative(
    u0: &Field,
    params: &ModelParams,
    noise: &MultiplicativeNoise,
    levy: &LevyMeasureSpec,
    use_discrete_lambda1: bool,
) -> Result<CriterionReport> {
    let grid: IntervalGrid = u0.grid();
    let kappa = noise.kappa(levy)?;
    let lambda1 = if use_discrete_lambda1 {
        grid.first_eigenvalue_discrete()
    } else {
        grid.first_eigenvalue_continuum()
    };
    let window = check_kappa_window(kappa, params.alpha, lambda1);

    let gradient_term = -0.5 * params.alpha * u0.seminorm_h1_sq();
    let nonlinear_term = params.beta / (params.m + 1.0) * u0.norm_lp_pow(params.m + 1.0)?;
    let v0 = u0.norm_l2_sq();
    let kappa_term = kappa / (params.m + 1.0) * v0;
    let lhs = gradient_term + nonlinear_term + kappa_term;
    let concavity = concavity_constants(params.m)?;
    let predicted = lhs > 0.0 && window.ok;

    let (k_min, tstar) = if predicted {
        let k = minimal_k_multiplicative(params.m, v0, lhs)?;
        let t = tstar_bound(k, v0, concavity.delta)?;
        (Some(k), Some(t))
    } else {
        (None, None)
    };

    Ok(CriterionReport {
        mode: CriterionMode::Multiplicative,
        gradient_term,
        nonlinear_term,
        noise_term: 0.0,
        kappa_term,
        lhs,
        verdict: if predicted {
            Verdict::BlowupPredicted
        } else {
            Verdict::NotPredicted
        },
        kappa: Some(kappa),
        kappa_window: Some(window),
        v0,
        flat_energy_limit: 0.0,
        concavity,
        k_min,
        tstar_bound: tstar,
    })
}

/// Minimal K for the additive chain:
/// `K_min = (1 + 1/eps)(1 + delta)(v0 + S_inf)^2 / (2(m+1)(J0 - (alpha/2) E_grad))`.
///
/// `noise_term` carries `-(alpha/2) E_grad`, so the denominator factor is
/// `j0 + noise_term`.
pub fn minimal_k_additive(
    m: f64,
    v0: f64,
    s_inf: f64,
    j0: f64,
    noise_term: f64,
) -> Result<f64> {
    let c = concavity_constants(m)?;
    let denom_core = j0 + noise_term;
    if !(denom_core > 0.0) {
        return Err(Error::NotEvaluable(format!(
            "minimal K undefined: J(0) - (alpha/2) grad energy = {denom_core} <= 0"
        )));
    }
    let num = (1.0 + 1.0 / c.epsilon) * (1.0 + c.delta) * (v0 + s_inf) * (v0 + s_inf);
    Ok(num / (2.0 * (m + 1.0) * denom_core))
}

/// Minimal K for the multiplicative chain:
/// `K_min = (1 + 1/eps)(1 + delta) v0^2 / (2(m+1) J~(0))`.
pub fn minimal_k_multiplicative(m: f64, v0: f64, j_tilde0: f64) -> Result<f64> {
    let c = concavity_constants(m)?;
    if !(j_tilde0 > 0.0) {
        return Err(Error::NotEvaluable(format!(
            "minimal K undefined: J~(0) = {j_tilde0} <= 0"
        )));
    }
    let num = (1.0 + 1.0 / c.epsilon) * (1.0 + c.delta) * v0 * v0;
    Ok(num / (2.0 * (m + 1.0) * j_tilde0))
}

/// Blow-up time bound from the integrated concavity inequality:
/// integrating `I'/I^{1+delta} > I'(0)/I^{1+delta}(0)` with `I(0) = K`,
/// `I'(0) = v0` gives `T* <= K / (delta v0)`.
pub fn tstar_bound(k: f64, v0: f64, delta: f64) -> Result<f64> {
    if !(k > 0.0 && delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tstar bound requires K > 0 and delta > 0, got K={k}, delta={delta}"
        )));
    }
    if v0 == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(k / (delta * v0))
}

/// Diagnostics series of the concavity objects along an estimated `v(t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsSeries {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    /// `I(t) = int_0^t v + K` by trapezoid cumulation
    pub i: Vec<f64>,
    /// `I'' = v'` by central differences (one-sided at the ends)
    pub i_second: Vec<f64>,
    /// `I' / I^{1+delta}`
    pub ratio: Vec<f64>,
    /// index of the first violation of ratio monotonicity beyond tolerance
    pub first_ratio_violation: Option<usize>,
}

/// Builds the diagnostics from `v` estimates on a uniform time grid
/// (pre-blow-up). `rel_tol` is the statistical tolerance on ratio
/// monotonicity violations.
pub fn diagnostics_from_ensemble(
    times: &[f64],
    v: &[f64],
    m: f64,
    k: f64,
    rel_tol: f64,
) -> Result<DiagnosticsSeries> {
    if times.len() < 3 || times.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "diagnostics need >= 3 aligned time points, got {} / {}",
            times.len(),
            v.len()
        )));
    }
    let c = concavity_constants(m)?;
    let n = times.len();
    let mut i_series = Vec::with_capacity(n);
    let mut acc = k;
    i_series.push(acc);
    for w in 1..n {
        let dt = times[w] - times[w - 1];
        if dt <= 0.0 {
            return Err(Error::InvalidArgument(
                "diagnostics times must be strictly increasing".into(),
            ));
        }
        acc += 0.5 * dt * (v[w] + v[w - 1]);
        i_series.push(acc);
    }
    let mut i_second = vec![0.0; n];
    for w in 1..n - 1 {
        let dtp = times[w + 1] - times[w];
        let dtm = times[w] - times[w - 1];
        i_second[w] = (v[w + 1] - v[w - 1]) / (dtp + dtm);
    }
    i_second[0] = (v[1] - v[0]) / (times[1] - times[0]);
    i_second[n - 1] = (v[n - 1] - v[n - 2]) / (times[n - 1] - times[n - 2]);

    let ratio: Vec<f64> = v
        .iter()
        .zip(&i_series)
        .map(|(vv, ii)| vv / ii.powf(1.0 + c.delta))
        .collect();

    let mut first_violation = None;
    for w in 1..n {
        let drop = ratio[w - 1] - ratio[w];
        if drop > rel_tol * ratio[w - 1].abs().max(1e-300) {
            first_violation = Some(w);
            break;
        }
    }

    Ok(DiagnosticsSeries {
        times: times.to_vec(),
        v: v.to_vec(),
        i: i_series,
        i_second,
        ratio,
        first_ratio_violation: first_violation,
    })
}
