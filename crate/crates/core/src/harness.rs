//! Simulated tomography experiments.
//!
//! A run draws a true state, then repeatedly chooses a measurement, simulates a
//! block of outcomes on the (possibly noise-perturbed) realized POVM, and feeds
//! the outcomes one by one to the particle filter, which only ever sees the
//! ideal POVM. Metrics are recorded at log-spaced checkpoints.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{self, block_size, DesignClass, OptimizerParams};
use crate::error::{check_dim, Result, TomographyError};
use crate::measurements::{apply_noise, compile_factorized, MeasurementConfig, NoiseModel};
use crate::priors::{sample_bures, PriorKind};
use crate::quantum::{
    matrix_from_features, CMatrix, DensityMatrix, FidelityReference, Povm, PureState, C64,
};
use crate::smc::{resample, LikelihoodTerms, MeasurementRecord, ParticleEnsemble, ResampleParams};
use crate::stats;

/// How the true state of a run is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TruthSpec {
    /// Haar-random pure state.
    PureHaar,
    /// Bures-random mixed state.
    BuresRandom,
    /// Bures-random state with purity within `tolerance` of `purity` (rejection
    /// sampled); `purity = 1` gives Haar pure states.
    BuresPurity { purity: f64, tolerance: f64 },
    Diagonal { eigenvalues: Vec<f64> },
    Explicit { state: DensityMatrix },
}

/// Bures draws tried before a purity layer is declared unreachable.
const MAX_PURITY_REJECTIONS: usize = 10_000_000;

impl TruthSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TruthSpec::BuresPurity { purity, tolerance } => {
                if !(*purity > 0.25 && *purity <= 1.0) || !(*tolerance > 0.0) {
                    return Err(TomographyError::InvalidConfig(
                        "purity must lie in (1/4, 1] and tolerance must be positive".into(),
                    ));
                }
                Ok(())
            }
            TruthSpec::Diagonal { eigenvalues } => {
                check_dim(4, eigenvalues.len()).map_err(|e| TomographyError::InvalidConfig(e.to_string()))?;
                DensityMatrix::from_diagonal(eigenvalues).map(|_| ())
            }
            TruthSpec::Explicit { state } => check_dim(4, state.dim()),
            _ => Ok(()),
        }
    }

    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DensityMatrix> {
        match self {
            TruthSpec::PureHaar => Ok(DensityMatrix::from_pure(&PureState::haar(4, rng))),
            TruthSpec::BuresRandom => Ok(sample_bures(4, rng)),
            TruthSpec::BuresPurity { purity, tolerance } => {
                if *purity >= 1.0 {
                    return Ok(DensityMatrix::from_pure(&PureState::haar(4, rng)));
                }
                for _ in 0..MAX_PURITY_REJECTIONS {
                    let rho = sample_bures(4, rng);
                    if (rho.purity() - purity).abs() <= *tolerance {
                        return Ok(rho);
                    }
                }
                Err(TomographyError::InvalidConfig(format!("no Bures state found with purity {purity} +- {tolerance}")))
            }
            TruthSpec::Diagonal { eigenvalues } => DensityMatrix::from_diagonal(eigenvalues),
            TruthSpec::Explicit { state } => Ok(state.clone()),
        }
    }
}

/// Particle filter settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleParams {
    pub size: usize,
    pub s_thrs_fraction: f64,
    pub mh_iterations: usize,
    pub step_scale: f64,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        let r = ResampleParams::default();
        Self { size: 1000, s_thrs_fraction: r.s_thrs_fraction, mh_iterations: r.mh_iterations, step_scale: r.step_scale }
    }
}

impl EnsembleParams {
    pub fn resample_params(&self) -> ResampleParams {
        ResampleParams {
            s_thrs_fraction: self.s_thrs_fraction,
            mh_iterations: self.mh_iterations,
            step_scale: self.step_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(TomographyError::InvalidConfig("ensemble size must be at least 2".into()));
        }
        self.resample_params().validate()
    }
}

/// Everything that determines one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub class: DesignClass,
    pub prior: PriorKind,
    pub truth: TruthSpec,
    pub n_total: u64,
    #[serde(default = "default_per_decade")]
    pub checkpoints_per_decade: u32,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub ensemble: EnsembleParams,
    #[serde(default)]
    pub optimizer: OptimizerParams,
    /// Master seed; runs of one batch differ by `run_index`.
    pub seed: u64,
    #[serde(default)]
    pub run_index: u64,
    /// Also compute the maximum-likelihood estimate at every checkpoint.
    #[serde(default)]
    pub track_mle: bool,
}

fn default_per_decade() -> u32 {
    20
}

impl RunSpec {
    pub fn new(class: DesignClass, prior: PriorKind, truth: TruthSpec, n_total: u64, seed: u64) -> Self {
        Self {
            class,
            prior,
            truth,
            n_total,
            checkpoints_per_decade: default_per_decade(),
            noise: NoiseModel::none(),
            ensemble: EnsembleParams::default(),
            optimizer: OptimizerParams::default(),
            seed,
            run_index: 0,
            track_mle: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_total < 1 {
            return Err(TomographyError::InvalidConfig("n_total must be at least 1".into()));
        }
        if self.checkpoints_per_decade < 1 {
            return Err(TomographyError::InvalidConfig("checkpoints_per_decade must be at least 1".into()));
        }
        self.noise.validate()?;
        if self.noise.is_active() && !self.class.is_factorized() {
            return Err(TomographyError::InvalidConfig(format!(
                "angle noise applies to wave plates only; class {} is not factorized",
                self.class
            )));
        }
        self.ensemble.validate()?;
        self.optimizer.validate()?;
        self.truth.validate()
    }

    pub fn checkpoints(&self) -> Vec<u64> {
        checkpoints(self.n_total, self.checkpoints_per_decade)
    }
}

/// Log-spaced event counts `round(10^(k / per_decade))` up to `n_total`, plus `n_total`.
pub fn checkpoints(n_total: u64, per_decade: u32) -> Vec<u64> {
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let n = 10f64.powf(k as f64 / per_decade as f64).round() as u64;
        if n >= n_total {
            break;
        }
        if out.last() != Some(&n) {
            out.push(n);
        }
        k += 1;
    }
    out.push(n_total);
    out
}

const TRUTH_STREAM: u64 = 0;
const PRIOR_STREAM: u64 = 1;
const ENGINE_STREAM: u64 = 2;

/// Independent generator for one purpose of one run. Truth and prior streams do
/// not depend on the design class, so protocols compared on the same seed see
/// the same true states and initial ensembles.
pub fn stream(seed: u64, run_index: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(run_index.wrapping_mul(4).wrapping_add(purpose));
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub n: u64,
    /// Posterior-averaged squared Bures distance to the estimate.
    pub dist_size: f64,
    /// Squared Bures distance from the estimate to the true state.
    pub dist_true: f64,
    pub rdd: f64,
    /// Smallest effective sample size seen since the previous checkpoint.
    pub ess_min: f64,
    /// Resamples so far.
    pub resamples: u64,
    /// Mean MH acceptance fraction over all resamples so far (0 before the first).
    pub accept_frac: f64,
    pub mle_dist_true: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfigLogEntry {
    pub n_start: u64,
    pub events: u64,
    pub gain: f64,
    pub config: MeasurementConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub class: DesignClass,
    pub prior: PriorKind,
    pub seed: u64,
    pub run_index: u64,
    pub truth: DensityMatrix,
    pub records: Vec<CheckpointRecord>,
    /// Bayesian mean estimate at each checkpoint.
    pub estimates: Vec<DensityMatrix>,
    /// Event counts at which a resample fired.
    pub resample_events: Vec<u64>,
    pub configs: Vec<ConfigLogEntry>,
}

impl Trajectory {
    pub fn final_record(&self) -> &CheckpointRecord {
        self.records.last().expect("a trajectory has at least one checkpoint")
    }
}

/// Multinomial outcome counts of `n_events` on the realized POVM.
pub fn simulate_block<R: Rng + ?Sized>(
    true_state: &DensityMatrix,
    ideal_povm: &Povm,
    realized_povm: &Povm,
    n_events: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    check_dim(ideal_povm.outcome_count(), realized_povm.outcome_count())?;
    if n_events < 1 {
        return Err(TomographyError::InvalidArgument("a block needs at least one event".into()));
    }
    let p = realized_povm.born_probabilities(true_state)?;
    Ok(multinomial(n_events, &p, rng))
}

fn multinomial<R: Rng + ?Sized>(n: u64, p: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; p.len()];
    let mut left = n;
    let mut mass: f64 = p.iter().sum();
    for (k, &pk) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == p.len() {
            counts[k] = left;
            break;
        }
        let q = if mass > 0.0 { (pk / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        counts[k] = c;
        left -= c;
        mass -= pk;
    }
    counts
}

/// Runs one simulated tomography experiment.
pub fn run_tomography(spec: &RunSpec) -> Result<Trajectory> {
    spec.validate()?;
    let truth = spec.truth.resolve(&mut stream(spec.seed, spec.run_index, TRUTH_STREAM))?;
    let params = spec.ensemble.resample_params();
    let mut ensemble = ParticleEnsemble::from_prior(
        spec.prior,
        4,
        spec.ensemble.size,
        &params,
        &mut stream(spec.seed, spec.run_index, PRIOR_STREAM),
    )?;
    let mut rng = stream(spec.seed, spec.run_index, ENGINE_STREAM);
    let truth_ref = FidelityReference::new(&truth);
    let threshold = params.s_thrs_fraction * spec.ensemble.size as f64;
    let checkpoints = spec.checkpoints();
    let fail = |event: u64, e: TomographyError| TomographyError::RunFailed {
        seed: spec.seed,
        event,
        source: Box::new(e),
    };

    let mut record = MeasurementRecord::new();
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut estimates = Vec::with_capacity(checkpoints.len());
    let mut resample_events = Vec::new();
    let mut configs = Vec::new();
    let mut accept_sum = 0.0;
    let mut ess_min = ensemble.effective_sample_size();
    let mut mle_state: Option<DensityMatrix> = None;
    let mut next_cp = 0;
    let mut n = 0u64;

    while n < spec.n_total {
        let events = block_size(n).min(spec.n_total - n);
        let choice = design::choose(&ensemble, spec.class, &spec.optimizer, &mut rng).map_err(|e| fail(n, e))?;
        let realized = match (&choice.config, spec.noise.is_active()) {
            (MeasurementConfig::Factorized(c), true) => compile_factorized(&apply_noise(c, &spec.noise, &mut rng)),
            _ => choice.povm.clone(),
        };
        let counts = simulate_block(&truth, &choice.povm, &realized, events, &mut rng).map_err(|e| fail(n, e))?;
        let mut outcomes: Vec<usize> = counts.iter().enumerate().flat_map(|(g, &c)| std::iter::repeat_n(g, c as usize)).collect();
        outcomes.shuffle(&mut rng);
        configs.push(ConfigLogEntry { n_start: n, events, gain: choice.gain, config: choice.config });

        record.push(choice.povm.clone(), vec![0; choice.povm.outcome_count()]).map_err(|e| fail(n, e))?;
        let mut table = ensemble.outcome_table(&choice.povm).map_err(|e| fail(n, e))?;
        for g in outcomes {
            ensemble.update_weights_from_table(&table, g).map_err(|e| fail(n, e))?;
            record.record_outcome(g).map_err(|e| fail(n, e))?;
            n += 1;
            let ess = ensemble.effective_sample_size();
            ess_min = ess_min.min(ess);
            if ess < threshold {
                let report = resample(&mut ensemble, &record, &params, &mut rng).map_err(|e| fail(n, e))?;
                accept_sum += report.acceptance_fraction;
                resample_events.push(n);
                table = ensemble.outcome_table(&choice.povm).map_err(|e| fail(n, e))?;
            }
            if next_cp < checkpoints.len() && n == checkpoints[next_cp] {
                let mean = ensemble.bayesian_mean();
                let dist_size = ensemble.distribution_size_around(&mean);
                let dist_true = truth_ref.bures_sq(&mean);
                let mle_dist_true = if spec.track_mle {
                    let start = mle_state.take().unwrap_or_else(|| DensityMatrix::maximally_mixed(4));
                    let mle = mle_estimate_from(&record, &start).map_err(|e| fail(n, e))?;
                    let d = truth_ref.bures_sq(&mle.state);
                    mle_state = Some(mle.state);
                    Some(d)
                } else {
                    None
                };
                let resamples = resample_events.len() as u64;
                records.push(CheckpointRecord {
                    n,
                    dist_size,
                    dist_true,
                    rdd: rdd(dist_true, dist_size),
                    ess_min,
                    resamples,
                    accept_frac: if resamples > 0 { accept_sum / resamples as f64 } else { 0.0 },
                    mle_dist_true,
                });
                estimates.push(mean);
                ess_min = ensemble.effective_sample_size();
                next_cp += 1;
            }
        }
    }
    log::debug!(
        "run {} ({} / {}): {} events, {} resamples",
        spec.run_index,
        spec.class,
        spec.prior,
        n,
        resample_events.len()
    );
    Ok(Trajectory {
        class: spec.class,
        prior: spec.prior,
        seed: spec.seed,
        run_index: spec.run_index,
        truth,
        records,
        estimates,
        resample_events,
        configs,
    })
}

fn rdd(dist_true: f64, dist_size: f64) -> f64 {
    if dist_size > 0.0 {
        dist_true / dist_size
    } else if dist_true > 0.0 {
        f64::MAX
    } else {
        1.0
    }
}

/// Runs `specs` on a pool of `jobs` threads; results keep the input order.
pub fn run_batch(specs: &[RunSpec], jobs: usize) -> Result<Vec<Trajectory>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TomographyError::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| specs.par_iter().map(run_tomography).collect())
}

/// `R_dd(N) = d_true^2 / dbar^2` per checkpoint.
pub fn rdd_curve(trajectory: &Trajectory) -> Vec<(u64, f64)> {
    trajectory.records.iter().map(|r| (r.n, r.rdd)).collect()
}

/// Mean and population standard deviation of one metric across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricCurve {
    pub name: &'static str,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub n: Vec<u64>,
    pub n_runs: usize,
    pub metrics: Vec<MetricCurve>,
}

impl Aggregate {
    pub fn metric(&self, name: &str) -> Option<&MetricCurve> {
        self.metrics.iter().find(|m| m.name == name)
    }

    /// `(N, mean)` pairs of a metric.
    pub fn curve(&self, name: &str) -> Option<Vec<(f64, f64)>> {
        self.metric(name).map(|m| self.n.iter().map(|&n| n as f64).zip(m.mean.iter().copied()).collect())
    }
}

pub const METRICS: [&str; 6] = ["dist_size_bures", "dist_true_bures", "rdd", "ess_min", "resamples", "accept_frac"];

fn metric_value(r: &CheckpointRecord, name: &str) -> f64 {
    match name {
        "dist_size_bures" => r.dist_size,
        "dist_true_bures" => r.dist_true,
        "rdd" => r.rdd,
        "ess_min" => r.ess_min,
        "resamples" => r.resamples as f64,
        "accept_frac" => r.accept_frac,
        "mle_dist_true_bures" => r.mle_dist_true.unwrap_or(f64::NAN),
        _ => unreachable!("unknown metric {name}"),
    }
}

/// Per-checkpoint means and standard deviations across runs.
pub fn aggregate_runs(trajectories: &[Trajectory]) -> Result<Aggregate> {
    let first = trajectories.first().ok_or_else(|| TomographyError::InvalidArgument("no trajectories".into()))?;
    let n: Vec<u64> = first.records.iter().map(|r| r.n).collect();
    for t in trajectories {
        if t.records.len() != n.len() || t.records.iter().zip(&n).any(|(r, &m)| r.n != m) {
            return Err(TomographyError::InvalidArgument("trajectories have different checkpoints".into()));
        }
    }
    let mut names: Vec<&'static str> = METRICS.to_vec();
    if trajectories.iter().all(|t| t.records.iter().all(|r| r.mle_dist_true.is_some())) {
        names.push("mle_dist_true_bures");
    }
    let metrics = names
        .into_iter()
        .map(|name| {
            let (mean, std) = (0..n.len())
                .map(|k| {
                    let xs: Vec<f64> = trajectories.iter().map(|t| metric_value(&t.records[k], name)).collect();
                    (stats::mean(&xs), stats::std_dev(&xs))
                })
                .unzip();
            MetricCurve { name, mean, std }
        })
        .collect();
    Ok(Aggregate { n, n_runs: trajectories.len(), metrics })
}

/// Spread over runs: `d_spr^2(N) = (1/K) sum_k d_B^2(rho_k(N), sigma(N))`, with
/// `sigma(N)` the mean of the `K` estimates. `run_estimates[k][i]` is run `k` at
/// checkpoint `i`.
pub fn spread(run_estimates: &[Vec<DensityMatrix>]) -> Result<Vec<f64>> {
    if run_estimates.len() < 2 {
        return Err(TomographyError::InvalidArgument("spread needs at least two runs".into()));
    }
    let len = run_estimates[0].len();
    if run_estimates.iter().any(|r| r.len() != len) {
        return Err(TomographyError::InvalidArgument("runs have different checkpoints".into()));
    }
    let k = run_estimates.len();
    let w = vec![1.0 / k as f64; k];
    (0..len)
        .map(|i| {
            let states: Vec<DensityMatrix> = run_estimates.iter().map(|r| r[i].clone()).collect();
            let sigma = DensityMatrix::convex_combination(&w, &states)?;
            let reference = FidelityReference::new(&sigma);
            Ok(states.iter().map(|s| reference.bures_sq(s)).sum::<f64>() / k as f64)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub c: f64,
    pub a: f64,
    pub stderr_a: f64,
}

/// Least-squares fit of `value = c N^a` in log-log coordinates.
pub fn fit_power_law(curve: &[(f64, f64)]) -> Result<PowerLawFit> {
    if curve.len() < 5 {
        return Err(TomographyError::InvalidArgument(format!("need at least 5 points, got {}", curve.len())));
    }
    if curve.iter().any(|&(n, v)| !(n > 0.0 && v > 0.0) || !n.is_finite() || !v.is_finite()) {
        return Err(TomographyError::InvalidArgument("power-law data must be positive and finite".into()));
    }
    let xs: Vec<f64> = curve.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (stats::mean(&xs), stats::mean(&ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return Err(TomographyError::InvalidArgument("power-law fit needs distinct N values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - b - a * x).powi(2)).sum();
    let stderr_a = (rss / (curve.len() - 2) as f64 / sxx).sqrt();
    Ok(PowerLawFit { c: b.exp(), a, stderr_a })
}

/// Fit restricted to `lo <= N <= hi`.
pub fn fit_power_law_range(curve: &[(f64, f64)], lo: f64, hi: f64) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> = curve.iter().copied().filter(|&(n, _)| n >= lo && n <= hi).collect();
    fit_power_law(&pts)
}

#[derive(Clone, Debug)]
pub struct MleResult {
    pub state: DensityMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// The recorded POVM elements do not span the operator space, so the
    /// maximizer is not unique.
    pub degenerate: bool,
}

const MLE_MAX_ITERATIONS: usize = 10_000;
// 1e-10 stops about 1e-6 short of the maximizer on exactly matched frequencies.
const MLE_REL_TOL: f64 = 1e-12;

/// Maximum-likelihood estimate by diluted `R rho R` iteration from `I / D`.
pub fn mle_estimate(record: &MeasurementRecord) -> Result<MleResult> {
    let dim = record
        .entries()
        .first()
        .map(|e| e.povm.dim())
        .ok_or_else(|| TomographyError::InvalidArgument("empty record".into()))?;
    mle_estimate_from(record, &DensityMatrix::maximally_mixed(dim))
}

/// As [`mle_estimate`], warm-started at `start`.
pub fn mle_estimate_from(record: &MeasurementRecord, start: &DensityMatrix) -> Result<MleResult> {
    let terms = LikelihoodTerms::from_record(record);
    if terms.is_empty() {
        return Err(TomographyError::InvalidArgument("the record has no events".into()));
    }
    let dim = start.dim();
    check_dim(dim, record.entries()[0].povm.dim())?;
    let total: f64 = terms.iter().map(|(_, n)| n).sum();
    let mut rho = start.clone();
    let mut ll = terms.log_likelihood(rho.features());
    if !ll.is_finite() {
        let mix = DensityMatrix::maximally_mixed(dim);
        rho = DensityMatrix::convex_combination(&[0.999, 0.001], &[rho, mix])?;
        ll = terms.log_likelihood(rho.features());
    }
    let id = CMatrix::identity(dim, dim);
    let mut eps = 0.5;
    let mut iterations = 0;
    while iterations < MLE_MAX_ITERATIONS {
        iterations += 1;
        let mut rf = vec![0.0; dim * dim];
        for (f, n) in terms.iter() {
            let p = crate::quantum::dot(f, rho.features()).max(1e-300);
            let c = n / (total * p);
            for (acc, x) in rf.iter_mut().zip(f) {
                *acc += c * x;
            }
        }
        let a = &id + matrix_from_features(&rf) * C64::new(eps, 0.0);
        let next = DensityMatrix::from_matrix_unchecked(&a * rho.matrix() * &a);
        let next_ll = terms.log_likelihood(next.features());
        if !(next_ll >= ll) {
            eps *= 0.5;
            if eps < 1e-12 {
                break;
            }
            continue;
        }
        let change = (next_ll - ll).abs();
        rho = next;
        ll = next_ll;
        if change <= MLE_REL_TOL * ll.abs().max(1.0) {
            break;
        }
    }
    Ok(MleResult { state: rho, log_likelihood: ll, iterations, degenerate: !spans_operator_space(record, dim) })
}

fn spans_operator_space(record: &MeasurementRecord, dim: usize) -> bool {
    let n = dim * dim;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for e in record.entries() {
        for g in 0..e.povm.outcome_count() {
            let f = e.povm.element_features(g);
            for i in 0..n {
                for j in 0..n {
                    gram[(i, j)] += f[i] * f[j];
                }
            }
        }
    }
    let eig = gram.symmetric_eigen().eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    max > 0.0 && eig.iter().filter(|&&l| l > 1e-10 * max).count() == n
}

/// First checkpoint at which the distribution size is at or below `d_err_sq`
/// (`None` if it never is: censored).
pub fn threshold_crossing(trajectory: &Trajectory, d_err_sq: f64) -> Option<u64> {
    trajectory.records.iter().find(|r| r.dist_size <= d_err_sq).map(|r| r.n)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerClassResult {
    pub class: DesignClass,
    /// Per-run first crossing; `None` when censored.
    pub crossings: Vec<Option<u64>>,
    /// Mean over uncensored runs, `None` if all were censored.
    pub mean_n: Option<f64>,
    pub std_n: Option<f64>,
    pub censored: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PurityLayerResult {
    pub purity: f64,
    pub classes: Vec<LayerClassResult>,
}

/// For every purity layer, runs all `classes` on `runs_per_layer` Bures states
/// of that purity and reports the events needed to reach `d_err_sq`.
pub fn purity_sweep(
    template: &RunSpec,
    layers: &[f64],
    tolerance: f64,
    runs_per_layer: usize,
    d_err_sq: f64,
    classes: &[DesignClass],
    jobs: usize,
) -> Result<Vec<PurityLayerResult>> {
    layers
        .iter()
        .enumerate()
        .map(|(li, &purity)| {
            let classes = classes
                .iter()
                .map(|&class| {
                    let specs: Vec<RunSpec> = (0..runs_per_layer)
                        .map(|k| RunSpec {
                            class,
                            truth: TruthSpec::BuresPurity { purity, tolerance },
                            run_index: (li * runs_per_layer + k) as u64,
                            ..template.clone()
                        })
                        .collect();
                    let runs = run_batch(&specs, jobs)?;
                    Ok(layer_result(class, &runs, d_err_sq))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PurityLayerResult { purity, classes })
        })
        .collect()
}

pub fn layer_result(class: DesignClass, runs: &[Trajectory], d_err_sq: f64) -> LayerClassResult {
    let crossings: Vec<Option<u64>> = runs.iter().map(|t| threshold_crossing(t, d_err_sq)).collect();
    let hits: Vec<f64> = crossings.iter().flatten().map(|&n| n as f64).collect();
    LayerClassResult {
        class,
        censored: crossings.len() - hits.len(),
        mean_n: (!hits.is_empty()).then(|| stats::mean(&hits)),
        std_n: (!hits.is_empty()).then(|| stats::std_dev(&hits)),
        crossings,
    }
}

/// Mean of `curve` over the checkpoints in the last half decade: the
/// saturated level of a spread curve.
pub fn saturated_level(n: &[u64], curve: &[f64]) -> f64 {
    let last = *n.last().unwrap_or(&1) as f64;
    let tail: Vec<f64> = n.iter().zip(curve).filter(|(&m, _)| m as f64 >= last / 10f64.sqrt()).map(|(_, &v)| v).collect();
    stats::mean(&tail)
}

/// Finds a window of at least `decades` decades over which the curve improves
/// by less than `max_improvement` (relative); returns its end points.
pub fn find_plateau(curve: &[(f64, f64)], decades: f64, max_improvement: f64) -> Option<(f64, f64)> {
    let ratio = 10f64.powf(decades);
    for (i, &(n1, v1)) in curve.iter().enumerate() {
        for &(n2, v2) in &curve[i + 1..] {
            if n2 >= ratio * n1 && v2 >= (1.0 - max_improvement) * v1 {
                return Some((n1, n2));
            }
        }
    }
    None
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn comment_block(out: &mut String, header: &str) {
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
}

/// One row per checkpoint: `N,dist_size_bures,dist_true_bures,rdd,ess_min,resamples,accept_frac`
/// (plus `mle_dist_true_bures` when tracked), after `#` comment lines carrying `header`.
pub fn trajectory_csv(trajectory: &Trajectory, header: &str) -> String {
    let mut out = String::new();
    comment_block(&mut out, header);
    let mle = trajectory.records.iter().all(|r| r.mle_dist_true.is_some());
    out.push_str("N,dist_size_bures,dist_true_bures,rdd,ess_min,resamples,accept_frac");
    out.push_str(if mle { ",mle_dist_true_bures\n" } else { "\n" });
    for r in &trajectory.records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.n,
            fmt_f64(r.dist_size),
            fmt_f64(r.dist_true),
            fmt_f64(r.rdd),
            fmt_f64(r.ess_min),
            r.resamples,
            fmt_f64(r.accept_frac)
        );
        if let (true, Some(m)) = (mle, r.mle_dist_true) {
            let _ = write!(out, ",{}", fmt_f64(m));
        }
        out.push('\n');
    }
    out
}

/// `N` followed by `<metric>_mean,<metric>_std` for each metric.
pub fn aggregate_csv(aggregate: &Aggregate, header: &str) -> String {
    let mut out = String::new();
    comment_block(&mut out, header);
    out.push('N');
    for m in &aggregate.metrics {
        let _ = write!(out, ",{0}_mean,{0}_std", m.name);
    }
    out.push('\n');
    for (i, n) in aggregate.n.iter().enumerate() {
        let _ = write!(out, "{n}");
        for m in &aggregate.metrics {
            let _ = write!(out, ",{},{}", fmt_f64(m.mean[i]), fmt_f64(m.std[i]));
        }
        out.push('\n');
    }
    out
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| TomographyError::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}
