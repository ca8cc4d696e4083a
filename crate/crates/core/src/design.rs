//! Adaptive choice of the next measurement by expected information gain.
//!
//! The utility of a POVM is the mutual information between the next outcome
//! and the state, `H[P(g|D)] - E_rho H[P(g|rho)]`. Adaptive classes search it
//! by random multistart plus coordinate-wise golden-section refinement, over
//! wave-plate angles (factorized) or Givens rotations of the basis (general).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, TomographyError};
use crate::measurements::{compile_factorized, compile_general, FactorizedConfig, GeneralConfig, MeasurementConfig};
use crate::quantum::{dot, haar_random_unitary, hermitian_eigen, CMatrix, CVector, Povm, PureState, C64};
use crate::smc::ParticleEnsemble;

/// Gains closer than this are ties (first found wins).
const GAIN_TIE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DesignClass {
    #[serde(rename = "fr")]
    FactorizedRandom,
    #[serde(rename = "fa")]
    FactorizedAdaptive,
    #[serde(rename = "gr")]
    GeneralRandom,
    #[serde(rename = "ga")]
    GeneralAdaptive,
}

impl DesignClass {
    pub const ALL: [DesignClass; 4] = [
        DesignClass::FactorizedRandom,
        DesignClass::FactorizedAdaptive,
        DesignClass::GeneralRandom,
        DesignClass::GeneralAdaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignClass::FactorizedRandom => "fr",
            DesignClass::FactorizedAdaptive => "fa",
            DesignClass::GeneralRandom => "gr",
            DesignClass::GeneralAdaptive => "ga",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, DesignClass::FactorizedAdaptive | DesignClass::GeneralAdaptive)
    }

    pub fn is_factorized(self) -> bool {
        matches!(self, DesignClass::FactorizedRandom | DesignClass::FactorizedAdaptive)
    }
}

impl fmt::Display for DesignClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignClass {
    type Err = TomographyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fr" => Ok(DesignClass::FactorizedRandom),
            "fa" => Ok(DesignClass::FactorizedAdaptive),
            "gr" => Ok(DesignClass::GeneralRandom),
            "ga" => Ok(DesignClass::GeneralAdaptive),
            other => Err(TomographyError::InvalidConfig(format!(
                "unknown design class '{other}' (expected fr, fa, gr or ga)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerParams {
    /// Random candidates evaluated before refinement.
    pub candidate_pool: usize,
    /// Coordinate-wise refinement passes.
    pub refine_iterations: usize,
    /// Golden-section evaluations per coordinate.
    pub line_evaluations: usize,
    /// Also try the eigenbasis of the current estimate as a candidate.
    pub eigenbasis_seed: bool,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self { candidate_pool: 30, refine_iterations: 2, line_evaluations: 10, eigenbasis_seed: true }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_pool < 1 {
            return Err(TomographyError::InvalidConfig("candidate_pool must be at least 1".into()));
        }
        if self.line_evaluations < 2 {
            return Err(TomographyError::InvalidConfig("line_evaluations must be at least 2".into()));
        }
        Ok(())
    }
}

/// Result of a design step.
#[derive(Clone, Debug)]
pub struct DesignChoice {
    pub config: MeasurementConfig,
    pub povm: Povm,
    /// Information gain of `povm` (zero for random classes, which do not evaluate it).
    pub gain: f64,
    /// Best gain among the unrefined candidates.
    pub pool_gain: f64,
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// `P(g | D) = Tr(M_g rho_hat)`.
pub fn expected_outcome_probs(ensemble: &ParticleEnsemble, povm: &Povm) -> Result<Vec<f64>> {
    povm.born_probabilities(&ensemble.bayesian_mean())
}

/// Expected information gain in nats.
pub fn information_gain(ensemble: &ParticleEnsemble, povm: &Povm) -> Result<f64> {
    check_dim(ensemble.dim(), povm.dim())?;
    Ok(GainEvaluator::new(ensemble).gain(povm))
}

/// Second-order surrogate `sum_g E[(P(g|rho) - P(g|rho_hat))^2] / P(g|rho_hat)`.
pub fn entropy_expansion_bound(ensemble: &ParticleEnsemble, povm: &Povm) -> Result<f64> {
    let mean = expected_outcome_probs(ensemble, povm)?;
    let mut total = 0.0;
    for (g, &pm) in mean.iter().enumerate() {
        if pm <= 0.0 {
            continue;
        }
        let var: f64 = ensemble
            .particles()
            .iter()
            .zip(ensemble.weights())
            .map(|(p, w)| {
                let d = povm.probability(g, p) - pm;
                w * d * d
            })
            .sum();
        total += var / pm;
    }
    Ok(total)
}

/// Per-event block length `max(1, ceil(N / 50))`.
pub fn block_size(n_observed: u64) -> u64 {
    n_observed.div_ceil(50).max(1)
}

/// Flattened weighted particle features for repeated gain evaluations.
pub struct GainEvaluator {
    width: usize,
    weights: Vec<f64>,
    features: Vec<f64>,
}

impl GainEvaluator {
    pub fn new(ensemble: &ParticleEnsemble) -> Self {
        let width = ensemble.dim() * ensemble.dim();
        let mut weights = Vec::with_capacity(ensemble.len());
        let mut features = Vec::with_capacity(ensemble.len() * width);
        for (p, &w) in ensemble.particles().iter().zip(ensemble.weights()) {
            if w > 0.0 {
                weights.push(w);
                features.extend_from_slice(p.features());
            }
        }
        Self { width, weights, features }
    }

    pub fn gain(&self, povm: &Povm) -> f64 {
        let outcomes = povm.outcome_count();
        let table = povm.feature_table();
        let mut mean = vec![0.0; outcomes];
        let mut cond = 0.0;
        let mut p = vec![0.0; outcomes];
        for (f, &w) in self.features.chunks_exact(self.width).zip(&self.weights) {
            for (g, pg) in p.iter_mut().enumerate() {
                *pg = dot(&table[g * self.width..(g + 1) * self.width], f).clamp(0.0, 1.0);
            }
            cond += w * entropy(&p);
            for (m, pg) in mean.iter_mut().zip(&p) {
                *m += w * pg;
            }
        }
        (entropy(&mean) - cond).max(0.0)
    }
}

fn random_factorized<R: Rng + ?Sized>(rng: &mut R) -> FactorizedConfig {
    FactorizedConfig::for_states(&PureState::haar(2, rng), &PureState::haar(2, rng))
        .expect("qubit states always have angles")
}

/// Reduced state of one qubit of a two-qubit density matrix.
fn qubit_marginal(m: &CMatrix, first: bool) -> CMatrix {
    CMatrix::from_fn(2, 2, |i, k| {
        (0..2)
            .map(|j| if first { m[(2 * i + j, 2 * k + j)] } else { m[(2 * j + i, 2 * j + k)] })
            .sum::<C64>()
    })
}

fn top_eigenvector(m: &CMatrix) -> PureState {
    let (_, v) = hermitian_eigen(m);
    let last = v.ncols() - 1;
    PureState::normalized(CVector::from_iterator(v.nrows(), v.column(last).iter().copied()))
        .expect("eigenvectors are normalized")
}

/// Maximizes `f` over `[x - h, x + h]` with `evals` golden-section evaluations.
/// Returns the best point seen and its value, or `None` if nothing beat `fx`.
fn golden_section(x: f64, fx: f64, h: f64, evals: usize, mut f: impl FnMut(f64) -> f64) -> Option<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (x - h, x + h);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = (x, fx);
    let mut improved = false;
    let mut consider = |t: f64, v: f64, best: &mut (f64, f64)| {
        if v > best.1 + GAIN_TIE {
            *best = (t, v);
            improved = true;
        }
    };
    consider(c, fc, &mut best);
    consider(d, fd, &mut best);
    for _ in 2..evals {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            consider(c, fc, &mut best);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            consider(d, fd, &mut best);
        }
    }
    improved.then_some(best)
}

/// Initial refinement half-width, tied to the posterior width.
fn refine_window(ensemble: &ParticleEnsemble) -> f64 {
    (2.0 * ensemble.hs_spread().sqrt()).clamp(1e-4, std::f64::consts::FRAC_PI_4)
}

fn choose_factorized<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    params: &OptimizerParams,
    rng: &mut R,
) -> Result<DesignChoice> {
    let eval = GainEvaluator::new(ensemble);
    let score = |c: &FactorizedConfig| eval.gain(&compile_factorized(c));
    let mut candidates: Vec<FactorizedConfig> = (0..params.candidate_pool).map(|_| random_factorized(rng)).collect();
    if params.eigenbasis_seed {
        let mean = ensemble.bayesian_mean();
        let a = top_eigenvector(&qubit_marginal(mean.matrix(), true));
        let b = top_eigenvector(&qubit_marginal(mean.matrix(), false));
        candidates.push(FactorizedConfig::for_states(&a, &b)?);
    }
    let (mut best, mut best_gain) = pick_best(&candidates, score);
    let pool_gain = best_gain;
    let mut h = refine_window(ensemble);
    for _ in 0..params.refine_iterations {
        for k in 0..4 {
            let angles = best.angles();
            let with = |t: f64| {
                let mut a = angles;
                a[k] = t;
                FactorizedConfig::new(a[0], a[1], a[2], a[3]).expect("finite angles")
            };
            if let Some((t, g)) = golden_section(angles[k], best_gain, h, params.line_evaluations, |t| score(&with(t))) {
                best = with(t);
                best_gain = g;
            }
        }
        h *= 0.5;
    }
    let povm = compile_factorized(&best);
    Ok(DesignChoice { config: MeasurementConfig::Factorized(best), povm, gain: best_gain, pool_gain })
}

/// `U G(i, j, t)`: mixes columns `i` and `j` by a real (`imaginary = false`) or
/// complex Givens rotation. These are the one-generator Cayley/exponential
/// coordinates around `U`; diagonal generators only rephase columns and leave
/// the POVM unchanged, so they are skipped.
fn rotate_columns(u: &CMatrix, i: usize, j: usize, t: f64, imaginary: bool) -> CMatrix {
    let (s, c) = t.sin_cos();
    let mut out = u.clone();
    for r in 0..u.nrows() {
        let (a, b) = (u[(r, i)], u[(r, j)]);
        if imaginary {
            let is = C64::new(0.0, s);
            out[(r, i)] = a * c + b * is;
            out[(r, j)] = a * is + b * c;
        } else {
            out[(r, i)] = a * c + b * s;
            out[(r, j)] = -a * s + b * c;
        }
    }
    out
}

fn choose_general<R: Rng + ?Sized>(ensemble: &ParticleEnsemble, params: &OptimizerParams, rng: &mut R) -> Result<DesignChoice> {
    let dim = ensemble.dim();
    let eval = GainEvaluator::new(ensemble);
    let score = |u: &CMatrix| eval.gain(&Povm::from_basis_unchecked(u));
    let mut candidates: Vec<CMatrix> = (0..params.candidate_pool).map(|_| haar_random_unitary(dim, rng)).collect();
    if params.eigenbasis_seed {
        candidates.push(ensemble.bayesian_mean().eigen().1);
    }
    let (mut best, mut best_gain) = pick_best(&candidates, score);
    let pool_gain = best_gain;
    let mut h = refine_window(ensemble);
    for _ in 0..params.refine_iterations {
        for i in 0..dim {
            for j in (i + 1)..dim {
                for imaginary in [false, true] {
                    let base = best.clone();
                    let found = golden_section(0.0, best_gain, h, params.line_evaluations, |t| {
                        score(&rotate_columns(&base, i, j, t, imaginary))
                    });
                    if let Some((t, g)) = found {
                        best = rotate_columns(&base, i, j, t, imaginary);
                        best_gain = g;
                    }
                }
            }
        }
        h *= 0.5;
    }
    let config = GeneralConfig::new(best)?;
    let povm = compile_general(&config);
    Ok(DesignChoice { config: MeasurementConfig::General(config), povm, gain: best_gain, pool_gain })
}

fn pick_best<T: Clone>(candidates: &[T], score: impl Fn(&T) -> f64) -> (T, f64) {
    let mut best = 0;
    let mut best_gain = f64::NEG_INFINITY;
    for (k, c) in candidates.iter().enumerate() {
        let g = score(c);
        if g > best_gain + GAIN_TIE {
            best = k;
            best_gain = g;
        }
    }
    (candidates[best].clone(), best_gain)
}

/// Picks the next measurement for `class`, returning the POVM and its gain.
pub fn choose<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    class: DesignClass,
    params: &OptimizerParams,
    rng: &mut R,
) -> Result<DesignChoice> {
    params.validate()?;
    if ensemble.dim() != 4 {
        return Err(TomographyError::DimensionMismatch { expected: 4, found: ensemble.dim() });
    }
    match class {
        DesignClass::FactorizedRandom => {
            let c = random_factorized(rng);
            let povm = compile_factorized(&c);
            Ok(DesignChoice { config: MeasurementConfig::Factorized(c), povm, gain: 0.0, pool_gain: 0.0 })
        }
        DesignClass::GeneralRandom => {
            let c = GeneralConfig::new(haar_random_unitary(4, rng))?;
            let povm = compile_general(&c);
            Ok(DesignChoice { config: MeasurementConfig::General(c), povm, gain: 0.0, pool_gain: 0.0 })
        }
        DesignClass::FactorizedAdaptive => choose_factorized(ensemble, params, rng),
        DesignClass::GeneralAdaptive => choose_general(ensemble, params, rng),
    }
}

pub fn choose_config<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    class: DesignClass,
    params: &OptimizerParams,
    rng: &mut R,
) -> Result<MeasurementConfig> {
    Ok(choose(ensemble, class, params, rng)?.config)
}
