//! Ensemble orchestration: runs independent paths on reproducible per-path
//! RNG streams, estimates `E||u(t)||^2` and companion norms with standard
//! errors, censors blown-up paths, and aggregates blow-up statistics.
//!
//! Aggregation is a deterministic ordered reduction with compensated
//! summation: results are bitwise identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::integrator::{
    simulate_path, JumpMode, ModelParams, NoiseModel, SampleKind, StepScheme, TrajectoryRecord,
};
use crate::levy::LevyMeasureSpec;

/// Ensemble settings: path count, master seed and per-run numerics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub master_seed: u64,
    pub scheme: StepScheme,
    pub horizon: f64,
    pub record_stride: usize,
    pub blowup_threshold: f64,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidArgument("ensemble needs >= 1 path".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidArgument("record stride must be >= 1".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.blowup_threshold > 0.0) {
            return Err(Error::InvalidArgument(
                "blow-up threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// RNG stream for one path: the master seed selects the key, the path index
/// selects the counter stream, so ensembles are reproducible regardless of
/// scheduling.
pub fn rng_for_path(master_seed: u64, path_index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index.wrapping_add(1));
    rng
}

/// Censored ensemble estimates on the shared record-time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleEstimate {
    pub times: Vec<f64>,
    /// mean of `||u||_{L2}^2` over paths alive at each time
    pub v_mean: Vec<f64>,
    pub v_se: Vec<f64>,
    /// mean of `||grad u||_{L2}^2`
    pub g_mean: Vec<f64>,
    pub g_se: Vec<f64>,
    /// mean of `||u||_{m+1}^{m+1}`
    pub p_mean: Vec<f64>,
    pub p_se: Vec<f64>,
    /// number of non-censored paths contributing at each time
    pub alive: Vec<usize>,
    pub blowup_fraction: Vec<f64>,
    /// per-path blow-up time; `None` when the path survived to the horizon
    pub tau_samples: Vec<Option<f64>>,
}

impl EnsembleEstimate {
    pub fn censored_count(&self) -> usize {
        self.tau_samples.iter().filter(|t| t.is_some()).count()
    }
}

/// Per-path norm series sampled at the shared record times; `None` past the
/// path's blow-up time.
struct PathSeries {
    values: Vec<Option<(f64, f64, f64)>>,
    tau: Option<f64>,
}

fn extract_series(rec: &TrajectoryRecord, times: &[f64]) -> PathSeries {
    let steps: Vec<_> = rec
        .samples
        .iter()
        .filter(|s| s.kind == SampleKind::Step)
        .collect();
    let mut values = Vec::with_capacity(times.len());
    let mut cursor = 0usize;
    for &t in times {
        // advance to the recorded step sample closest to t
        while cursor + 1 < steps.len() && steps[cursor + 1].time <= t + 1e-12 {
            cursor += 1;
        }
        let s = steps.get(cursor);
        match s {
            Some(s) if (s.time - t).abs() <= 1e-9 * t.max(1.0) && s.l2_sq.is_finite() => {
                values.push(Some((s.l2_sq, s.h1_sq, s.lmp1)));
            }
            _ => values.push(None),
        }
    }
    PathSeries {
        values,
        tau: rec.blowup.map(|b| b.tau),
    }
}

/// Runs the full path set in deterministic path order and returns the raw
/// trajectory records (parallel execution, ordered collection).
pub fn run_paths(
    config: &EnsembleConfig,
    params: &ModelParams,
    noise: &NoiseModel,
    levy: &LevyMeasureSpec,
    u0: &Field,
) -> Result<Vec<TrajectoryRecord>> {
    config.validate()?;
    (0..config.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for_path(config.master_seed, i as u64);
            simulate_path(
                params,
                noise,
                levy,
                u0,
                &config.scheme,
                config.horizon,
                config.blowup_threshold,
                &mut rng,
            )
        })
        .collect()
}

/// Record-time grid implied by the config: every `record_stride`-th step
/// boundary.
pub fn record_times(config: &EnsembleConfig) -> Vec<f64> {
    let n_steps = (config.horizon / config.scheme.dt).ceil() as usize;
    let mut times = Vec::new();
    let mut k = 0usize;
    loop {
        let idx = k * config.record_stride;
        if idx > n_steps {
            break;
        }
        times.push(((idx as f64) * config.scheme.dt).min(config.horizon));
        if idx == n_steps {
            break;
        }
        k += 1;
    }
    times
}

/// Runs `paths` independent paths and aggregates censored means with
/// standard errors. Estimation runs use the fixed-grid record times; blown
/// paths contribute until their tau.
pub fn run_ensemble(
    config: &EnsembleConfig,
    params: &ModelParams,
    noise: &NoiseModel,
    levy: &LevyMeasureSpec,
    u0: &Field,
) -> Result<EnsembleEstimate> {
    config.validate()?;
    let times = record_times(config);
    let series: Vec<PathSeries> = (0..config.paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for_path(config.master_seed, i as u64);
            simulate_path(
                params,
                noise,
                levy,
                u0,
                &config.scheme,
                config.horizon,
                config.blowup_threshold,
                &mut rng,
            )
            .map(|rec| extract_series(&rec, &times))
        })
        .collect::<Result<_>>()?;

    aggregate(&times, &series, config.paths)
}

fn aggregate(times: &[f64], series: &[PathSeries], paths: usize) -> Result<EnsembleEstimate> {
    let nt = times.len();
    let mut est = EnsembleEstimate {
        times: times.to_vec(),
        v_mean: vec![0.0; nt],
        v_se: vec![0.0; nt],
        g_mean: vec![0.0; nt],
        g_se: vec![0.0; nt],
        p_mean: vec![0.0; nt],
        p_se: vec![0.0; nt],
        alive: vec![0; nt],
        blowup_fraction: vec![0.0; nt],
        tau_samples: series.iter().map(|s| s.tau).collect(),
    };
    for k in 0..nt {
        let mut v = KahanMoments::new();
        let mut g = KahanMoments::new();
        let mut p = KahanMoments::new();
        let mut blown = 0usize;
        for s in series {
            match s.values[k] {
                Some((l2, h1, lp)) => {
                    v.push(l2);
                    g.push(h1);
                    p.push(lp);
                }
                None => blown += 1,
            }
        }
        est.alive[k] = v.count;
        est.blowup_fraction[k] = blown as f64 / paths as f64;
        let (vm, vs) = v.mean_se();
        let (gm, gs) = g.mean_se();
        let (pm, ps) = p.mean_se();
        est.v_mean[k] = vm;
        est.v_se[k] = vs;
        est.g_mean[k] = gm;
        est.g_se[k] = gs;
        est.p_mean[k] = pm;
        est.p_se[k] = ps;
    }
    Ok(est)
}

/// Compensated accumulation of sum and sum of squares in a fixed order.
struct KahanMoments {
    sum: Kahan,
    sum_sq: Kahan,
    count: usize,
}

impl KahanMoments {
    fn new() -> Self {
        Self {
            sum: Kahan::new(),
            sum_sq: Kahan::new(),
            count: 0,
        }
    }

    fn push(&mut self, x: f64) {
        self.sum.add(x);
        self.sum_sq.add(x * x);
        self.count += 1;
    }

    fn mean_se(&self) -> (f64, f64) {
        if self.count == 0 {
            return (f64::NAN, f64::NAN);
        }
        let n = self.count as f64;
        let mean = self.sum.value() / n;
        if self.count < 2 {
            return (mean, 0.0);
        }
        let var = ((self.sum_sq.value() - self.sum.value() * self.sum.value() / n) / (n - 1.0))
            .max(0.0);
        (mean, (var / n).sqrt())
    }
}

#[derive(Clone, Copy)]
struct Kahan {
    s: f64,
    c: f64,
}

impl Kahan {
    fn new() -> Self {
        Self { s: 0.0, c: 0.0 }
    }

    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.s + y;
        self.c = (t - self.s) - y;
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s
    }
}

/// Which detector fired for a mean-square blow-up report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupTrigger {
    /// lower confidence bound of `v` crossed the threshold
    CiThreshold,
    /// at least half the paths blew up
    Fraction,
}

/// First recorded time at which the lower confidence bound of `v` exceeds
/// `theta_ms`, or the blow-up fraction reaches 1/2, whichever is earlier.
pub fn detect_mean_square_blowup(
    estimate: &EnsembleEstimate,
    theta_ms: f64,
) -> Option<(f64, BlowupTrigger)> {
    for k in 0..estimate.times.len() {
        let frac_hit = estimate.blowup_fraction[k] >= 0.5;
        let ci_hit = estimate.alive[k] > 0
            && estimate.v_mean[k].is_finite()
            && estimate.v_mean[k] - 3.0 * estimate.v_se[k] > theta_ms;
        if frac_hit && ci_hit {
            // both fired at this record time; report the fraction trigger
            return Some((estimate.times[k], BlowupTrigger::Fraction));
        }
        if frac_hit {
            return Some((estimate.times[k], BlowupTrigger::Fraction));
        }
        if ci_hit {
            return Some((estimate.times[k], BlowupTrigger::CiThreshold));
        }
    }
    None
}

/// One row of a refinement study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    pub h: f64,
    pub paths: usize,
    pub v_at_check: f64,
    pub v_se_at_check: f64,
    pub tau_ms: Option<f64>,
}

/// Runs the same experiment across (dt, n, M) refinements and tabulates
/// `v(T_check)` and the detected mean-square blow-up time.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    base: &EnsembleConfig,
    params: &ModelParams,
    noise: &NoiseModel,
    levy: &LevyMeasureSpec,
    u0_fn: impl Fn(crate::grid::IntervalGrid) -> Field,
    length: f64,
    refinements: &[(f64, usize, usize)],
    t_check: f64,
    theta_ms: f64,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::new();
    for &(dt, n, paths) in refinements {
        let grid = crate::grid::IntervalGrid::new(length, n)?;
        let u0 = u0_fn(grid);
        let mut config = *base;
        config.paths = paths;
        config.scheme = StepScheme {
            dt,
            jump_mode: JumpMode::FixedGrid,
            record_fields: false,
        };
        let est = run_ensemble(&config, params, noise, levy, &u0)?;
        let k = est
            .times
            .iter()
            .position(|&t| t >= t_check - 1e-12)
            .unwrap_or(est.times.len() - 1);
        rows.push(ConvergenceRow {
            dt,
            h: grid.h(),
            paths,
            v_at_check: est.v_mean[k],
            v_se_at_check: est.v_se[k],
            tau_ms: detect_mean_square_blowup(&est, theta_ms).map(|(t, _)| t),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::IntervalGrid;
    use crate::noise::AdditiveNoise;
    use std::f64::consts::PI;

    fn base_config(paths: usize, dt: f64, horizon: f64) -> EnsembleConfig {
        EnsembleConfig {
            paths,
            master_seed: 42,
            scheme: StepScheme::new(dt, JumpMode::FixedGrid).unwrap(),
            horizon,
            record_stride: 10,
            blowup_threshold: 1e8,
        }
    }

    #[test]
    fn single_path_matches_simulate_path() {
        let g = IntervalGrid::new(1.0, 40).unwrap();
        let params = ModelParams::new(1.0, 0.0, 3.0).unwrap();
        let noise = NoiseModel::Additive(
            AdditiveNoise::decaying_sine(0.5, 1.0, 1, 1.0, 10.0).unwrap(),
        );
        let levy = LevyMeasureSpec::none();
        let u0 = g.first_eigenvector();
        let config = base_config(1, 1e-2, 1.0);
        let est = run_ensemble(&config, &params, &noise, &levy, &u0).unwrap();
        let mut rng = rng_for_path(config.master_seed, 0);
        let rec = simulate_path(
            &params, &noise, &levy, &u0, &config.scheme, 1.0, 1e8, &mut rng,
        )
        .unwrap();
        let times = record_times(&config);
        let direct = extract_series(&rec, &times);
        for (k, v) in est.v_mean.iter().enumerate() {
            assert_eq!(*v, direct.values[k].unwrap().0);
        }
    }

    #[test]
    fn zero_noise_standard_errors_vanish() {
        let g = IntervalGrid::new(1.0, 30).unwrap();
        let params = ModelParams::new(1.0, 0.0, 3.0).unwrap();
        let u0 = g.first_eigenvector();
        let config = base_config(8, 1e-2, 0.5);
        let est = run_ensemble(&config, &params, &NoiseModel::none(), &LevyMeasureSpec::none(), &u0)
            .unwrap();
        for se in &est.v_se {
            assert_eq!(*se, 0.0);
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let g = IntervalGrid::new(1.0, 30).unwrap();
        let params = ModelParams::new(1.0, 0.0, 3.0).unwrap();
        let noise = NoiseModel::Additive(
            AdditiveNoise::decaying_sine(1.0, 1.0, 1, 1.0, 10.0).unwrap(),
        );
        let levy = LevyMeasureSpec::none();
        let u0 = g.first_eigenvector();
        let config = base_config(64, 1e-2, 0.5);

        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_ensemble(&config, &params, &noise, &levy, &u0).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.v_mean, b.v_mean);
        assert_eq!(a.v_se, b.v_se);
        assert_eq!(a.g_mean, b.g_mean);
    }

    #[test]
    fn linear_additive_matches_closed_form_mean() {
        // beta = 0, u0 = 0, sigma = e^{-t} sin(pi x):
        // v(t) = int_0^t e^{-2 alpha pi^2 (t-s)} ||sigma(s)||^2 ds (single mode)
        let g = IntervalGrid::new(1.0, 60).unwrap();
        let params = ModelParams::new(1.0, 0.0, 3.0).unwrap();
        let noise = NoiseModel::Additive(
            AdditiveNoise::decaying_sine(1.0, 1.0, 1, 1.0, 10.0).unwrap(),
        );
        let levy = LevyMeasureSpec::none();
        let u0 = Field::zeros(g);
        let mut config = base_config(2000, 1e-3, 0.5);
        config.record_stride = 100;
        let est = run_ensemble(&config, &params, &noise, &levy, &u0).unwrap();
        // closed form with the discrete eigenvalue of the implicit scheme:
        // sigma projects on the first eigenvector, ||sigma(s)||^2 = e^{-2s}/2,
        // and E||u(t)||^2 = int_0^t e^{-2 lam (t-s)} e^{-2s} ds / 2 with
        // lam = pi^2 (continuum reference; O(dt)+O(h^2) tolerance).
        let lam = PI * PI;
        let t = 0.5;
        let exact = ((-2.0 * t as f64).exp() - (-2.0 * lam * t).exp()) / (2.0 * lam - 2.0) / 2.0;
        let k = est.times.len() - 1;
        let err = (est.v_mean[k] - exact).abs();
        assert!(
            err < 3.0 * est.v_se[k] + 0.05 * exact,
            "v {} vs {} (se {})",
            est.v_mean[k],
            exact,
            est.v_se[k]
        );
    }

    #[test]
    fn blowup_fraction_nondecreasing() {
        let g = IntervalGrid::new(1.0, 50).unwrap();
        let params = ModelParams::new(1.0, 1.0, 3.0).unwrap();
        let u0 = Field::from_fn(g, |x| 6.0 * (PI * x).sin());
        let mut config = base_config(4, 1e-4, 0.2);
        config.record_stride = 50;
        let est = run_ensemble(&config, &params, &NoiseModel::none(), &LevyMeasureSpec::none(), &u0)
            .unwrap();
        let mut prev = 0.0;
        for f in &est.blowup_fraction {
            assert!(*f >= prev);
            prev = *f;
        }
        assert!(prev > 0.0, "focusing run should blow up");
    }

    #[test]
    fn detect_blowup_degenerate_single_path() {
        let g = IntervalGrid::new(1.0, 50).unwrap();
        let params = ModelParams::new(1.0, 1.0, 3.0).unwrap();
        let u0 = Field::from_fn(g, |x| 6.0 * (PI * x).sin());
        let mut config = base_config(1, 1e-4, 0.2);
        config.record_stride = 10;
        let est = run_ensemble(&config, &params, &NoiseModel::none(), &LevyMeasureSpec::none(), &u0)
            .unwrap();
        let tau_path = est.tau_samples[0].expect("path blew up");
        let (tau_ms, _) = detect_mean_square_blowup(&est, 1e7).expect("detector fired");
        // detector reports the first record time past the path tau
        assert!(tau_ms >= tau_path - 1e-12);
        assert!(tau_ms - tau_path <= config.scheme.dt * config.record_stride as f64 + 1e-9);
    }

    #[test]
    fn bounded_run_reports_no_blowup() {
        let g = IntervalGrid::new(1.0, 30).unwrap();
        let params = ModelParams::new(1.0, 1.0, 3.0).unwrap();
        let u0 = Field::from_fn(g, |x| 0.5 * (PI * x).sin());
        let config = base_config(2, 1e-3, 1.0);
        let est = run_ensemble(&config, &params, &NoiseModel::none(), &LevyMeasureSpec::none(), &u0)
            .unwrap();
        assert!(detect_mean_square_blowup(&est, 1e6).is_none());
    }

    #[test]
    fn monte_carlo_error_scaling() {
        // quadrupling M roughly halves the standard error
        let g = IntervalGrid::new(1.0, 30).unwrap();
        let params = ModelParams::new(1.0, 0.0, 3.0).unwrap();
        let noise = NoiseModel::Additive(
            AdditiveNoise::decaying_sine(1.0, 1.0, 1, 1.0, 10.0).unwrap(),
        );
        let levy = LevyMeasureSpec::none();
        let u0 = Field::zeros(g);
        let mut small = base_config(250, 5e-3, 0.5);
        small.record_stride = 20;
        let mut big = small;
        big.paths = 1000;
        let es = run_ensemble(&small, &params, &noise, &levy, &u0).unwrap();
        let eb = run_ensemble(&big, &params, &noise, &levy, &u0).unwrap();
        let k = es.times.len() - 1;
        let ratio = es.v_se[k] / eb.v_se[k];
        assert!(ratio > 1.5 && ratio < 2.7, "se ratio {ratio}");
    }
}
