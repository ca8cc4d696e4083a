//! Sequential importance sampling over density matrices.
//!
//! A [`ParticleEnsemble`] approximates the posterior by weighted samples. Each
//! observed outcome multiplies the weights by the particle's Born probability.
//! When the effective sample size collapses the ensemble is resampled and every
//! particle is rejuvenated by a Metropolis-Hastings chain that walks on
//! purifications (`rho = Tr_2 |psi><psi|`) and targets the full posterior.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, TomographyError};
use crate::priors::{self, log_density_state, PriorKind};
use crate::quantum::{
    complex_normal, dot, hermitian_eigenvalues, matrix_from_features, purify, DensityMatrix, FidelityReference,
    Povm, PureState, C64, CVector,
};

/// Weight sums below this are treated as an impossible observation.
const DEGENERATE_WEIGHT: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleParams {
    /// Resample when `S_eff < s_thrs_fraction * S`.
    pub s_thrs_fraction: f64,
    /// Metropolis-Hastings accept/reject steps per particle.
    pub mh_iterations: usize,
    /// Walk step `sigma = step_scale * sqrt(distribution size)`.
    pub step_scale: f64,
}

impl Default for ResampleParams {
    fn default() -> Self {
        Self { s_thrs_fraction: 0.1, mh_iterations: 50, step_scale: 1.0 }
    }
}

impl ResampleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_thrs_fraction > 0.0 && self.s_thrs_fraction < 1.0) {
            return Err(TomographyError::InvalidConfig("s_thrs_fraction must lie in (0, 1)".into()));
        }
        if self.mh_iterations < 1 {
            return Err(TomographyError::InvalidConfig("mh_iterations must be at least 1".into()));
        }
        if !(self.step_scale > 0.0) || !self.step_scale.is_finite() {
            return Err(TomographyError::InvalidConfig("step_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-particle outcome probabilities for one POVM, `S x outcomes`.
#[derive(Clone, Debug)]
pub struct OutcomeTable {
    outcomes: usize,
    probs: Vec<f64>,
}

impl OutcomeTable {
    pub fn outcomes(&self) -> usize {
        self.outcomes
    }

    pub fn probability(&self, particle: usize, outcome: usize) -> f64 {
        self.probs[particle * self.outcomes + outcome]
    }

    pub fn particle_row(&self, particle: usize) -> &[f64] {
        &self.probs[particle * self.outcomes..(particle + 1) * self.outcomes]
    }
}

/// Weighted samples approximating the posterior.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    prior: PriorKind,
    weights: Vec<f64>,
    particles: Vec<DensityMatrix>,
}

impl ParticleEnsemble {
    pub fn new(prior: PriorKind, particles: Vec<DensityMatrix>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(TomographyError::InvalidArgument("need one weight per particle".into()));
        }
        let dim = particles[0].dim();
        for p in &particles {
            check_dim(dim, p.dim())?;
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(TomographyError::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(TomographyError::InvalidArgument(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { prior, weights, particles })
    }

    /// Equal weights `1/S`.
    pub fn uniform(prior: PriorKind, particles: Vec<DensityMatrix>) -> Result<Self> {
        let w = 1.0 / particles.len().max(1) as f64;
        let n = particles.len();
        Self::new(prior, particles, vec![w; n])
    }

    /// Draws `size` particles from the prior. The simplex prior starts from a
    /// Hilbert-Schmidt ensemble whose particles are each moved by the
    /// prior-only Metropolis-Hastings chain used by the single-draw sampler.
    pub fn from_prior<R: Rng + ?Sized>(
        prior: PriorKind,
        dim: usize,
        size: usize,
        params: &ResampleParams,
        rng: &mut R,
    ) -> Result<Self> {
        params.validate()?;
        if size < 2 {
            return Err(TomographyError::InvalidArgument("an ensemble needs at least two particles".into()));
        }
        let particles = match prior {
            PriorKind::Bures => (0..size).map(|_| priors::sample_bures(dim, rng)).collect(),
            PriorKind::HilbertSchmidt | PriorKind::SimplexUniform => (0..size).map(|_| priors::sample_hs(dim, rng)).collect(),
        };
        let mut ensemble = Self::uniform(prior, particles)?;
        if prior == PriorKind::SimplexUniform {
            let target = MhTarget::prior_only(prior, dim);
            ensemble.move_particles(&target, priors::SIMPLEX_SEED_SIGMA, priors::SIMPLEX_MOVE_STEPS, rng);
        }
        Ok(ensemble)
    }

    pub fn prior(&self) -> PriorKind {
        self.prior
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].dim()
    }

    pub fn particles(&self) -> &[DensityMatrix] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn outcome_table(&self, povm: &Povm) -> Result<OutcomeTable> {
        check_dim(self.dim(), povm.dim())?;
        let outcomes = povm.outcome_count();
        let mut probs = Vec::with_capacity(self.len() * outcomes);
        for p in &self.particles {
            for g in 0..outcomes {
                probs.push(povm.probability(g, p));
            }
        }
        Ok(OutcomeTable { outcomes, probs })
    }

    /// `w_s <- w_s P(outcome | rho_s)`, renormalized. On a degenerate update the
    /// weights are left untouched.
    pub fn update_weights(&mut self, povm: &Povm, outcome: usize) -> Result<()> {
        check_dim(self.dim(), povm.dim())?;
        if outcome >= povm.outcome_count() {
            return Err(TomographyError::InvalidArgument(format!("outcome {outcome} out of range")));
        }
        let lik: Vec<f64> = self.particles.iter().map(|p| povm.probability(outcome, p)).collect();
        self.apply_likelihood(&lik, outcome)
    }

    /// Same as [`update_weights`](Self::update_weights) with precomputed probabilities.
    pub fn update_weights_from_table(&mut self, table: &OutcomeTable, outcome: usize) -> Result<()> {
        if outcome >= table.outcomes || table.probs.len() != self.len() * table.outcomes {
            return Err(TomographyError::InvalidArgument("outcome table does not match ensemble".into()));
        }
        let mut sum = 0.0;
        for (s, w) in self.weights.iter().enumerate() {
            sum += w * table.probs[s * table.outcomes + outcome];
        }
        if !(sum > DEGENERATE_WEIGHT) {
            return Err(TomographyError::DegenerateUpdate { outcome });
        }
        let inv = 1.0 / sum;
        for (s, w) in self.weights.iter_mut().enumerate() {
            *w *= table.probs[s * table.outcomes + outcome] * inv;
        }
        Ok(())
    }

    fn apply_likelihood(&mut self, lik: &[f64], outcome: usize) -> Result<()> {
        let sum: f64 = self.weights.iter().zip(lik).map(|(w, l)| w * l).sum();
        if !(sum > DEGENERATE_WEIGHT) {
            return Err(TomographyError::DegenerateUpdate { outcome });
        }
        for (w, l) in self.weights.iter_mut().zip(lik) {
            *w *= l / sum;
        }
        Ok(())
    }

    /// Batch update with aggregated counts, computed in log space.
    pub fn update_weights_counts(&mut self, povm: &Povm, counts: &[u64]) -> Result<()> {
        check_dim(self.dim(), povm.dim())?;
        if counts.len() != povm.outcome_count() {
            return Err(TomographyError::InvalidArgument("one count per outcome required".into()));
        }
        let log_w: Vec<f64> = self
            .particles
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| {
                let mut lw = w.ln();
                for (g, &n) in counts.iter().enumerate() {
                    if n > 0 {
                        lw += n as f64 * povm.probability(g, p).ln();
                    }
                }
                lw
            })
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            let outcome = counts.iter().position(|&n| n > 0).unwrap_or(0);
            return Err(TomographyError::DegenerateUpdate { outcome });
        }
        let unnorm: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
        let sum: f64 = unnorm.iter().sum();
        for (w, u) in self.weights.iter_mut().zip(unnorm) {
            *w = u / sum;
        }
        Ok(())
    }

    /// `(sum_s w_s^2)^-1`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Posterior mean `sum_s w_s rho_s`.
    pub fn bayesian_mean(&self) -> DensityMatrix {
        let n = self.dim() * self.dim();
        let mut f = vec![0.0; n];
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for (acc, x) in f.iter_mut().zip(p.features()) {
                *acc += w * x;
            }
        }
        DensityMatrix::from_features_unchecked(&f)
    }

    /// Posterior-averaged squared Bures distance to the Bayesian mean.
    pub fn distribution_size(&self) -> f64 {
        let mean = self.bayesian_mean();
        self.distribution_size_around(&mean)
    }

    pub(crate) fn distribution_size_around(&self, mean: &DensityMatrix) -> f64 {
        let reference = FidelityReference::new(mean);
        self.particles
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(p, &w)| w * reference.bures_sq(p))
            .sum()
    }

    /// Posterior-averaged squared Hilbert-Schmidt distance to the mean.
    pub fn hs_spread(&self) -> f64 {
        let mean = self.bayesian_mean();
        self.particles
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| w * p.features().iter().zip(mean.features()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum()
    }

    /// Moves every particle with an independent, seed-derived chain.
    fn move_particles<R: Rng + ?Sized>(&mut self, target: &MhTarget, sigma: f64, steps: usize, rng: &mut R) -> (usize, usize) {
        let seeds: Vec<u64> = (0..self.len()).map(|_| rng.random()).collect();
        let moved: Vec<MoveOutcome> = self
            .particles
            .par_iter()
            .zip(seeds.par_iter())
            .map(|(p, &seed)| {
                let mut prng = ChaCha8Rng::seed_from_u64(seed);
                mh_move_with_target(target, p, sigma, steps, &mut prng)
            })
            .collect();
        let mut accepted = 0;
        let mut proposed = 0;
        self.particles = moved
            .into_iter()
            .map(|m| {
                accepted += m.accepted;
                proposed += m.proposed;
                m.state
            })
            .collect();
        (accepted, proposed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ParticleEnsemble = serde_json::from_str(s)?;
        Self::new(raw.prior, raw.particles, raw.weights)
    }
}

/// One block of observations: the POVM as configured and the outcome counts.
#[derive(Clone, Debug)]
pub struct RecordEntry {
    pub povm: Povm,
    pub counts: Vec<u64>,
}

/// All observations so far, in order.
#[derive(Clone, Debug, Default)]
pub struct MeasurementRecord {
    entries: Vec<RecordEntry>,
    total: u64,
}

impl MeasurementRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, povm: Povm, counts: Vec<u64>) -> Result<()> {
        if counts.len() != povm.outcome_count() {
            return Err(TomographyError::InvalidArgument("one count per outcome required".into()));
        }
        if let Some(first) = self.entries.first() {
            check_dim(first.povm.dim(), povm.dim())?;
        }
        self.total += counts.iter().sum::<u64>();
        self.entries.push(RecordEntry { povm, counts });
        Ok(())
    }

    /// Adds one event to the most recent entry.
    pub fn record_outcome(&mut self, outcome: usize) -> Result<()> {
        let last = self
            .entries
            .last_mut()
            .ok_or_else(|| TomographyError::InvalidArgument("record has no entries".into()))?;
        if outcome >= last.counts.len() {
            return Err(TomographyError::InvalidArgument(format!("outcome {outcome} out of range")));
        }
        last.counts[outcome] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn entries(&self) -> &[RecordEntry] {
        &self.entries
    }

    pub fn total_events(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `ln L(D; rho) = sum n ln Tr(M rho)`.
    pub fn log_likelihood(&self, rho: &DensityMatrix) -> f64 {
        LikelihoodTerms::from_record(self).log_likelihood(rho.features())
    }
}

/// Flattened `(element features, count)` pairs with nonzero counts.
#[derive(Clone, Debug, Default)]
pub struct LikelihoodTerms {
    width: usize,
    features: Vec<f64>,
    counts: Vec<f64>,
}

impl LikelihoodTerms {
    pub fn from_record(record: &MeasurementRecord) -> Self {
        let mut terms = Self::default();
        for e in &record.entries {
            terms.width = e.povm.dim() * e.povm.dim();
            for (g, &n) in e.counts.iter().enumerate() {
                if n > 0 {
                    terms.features.extend_from_slice(e.povm.element_features(g));
                    terms.counts.push(n as f64);
                }
            }
        }
        terms
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `(element features, count)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features.chunks_exact(self.width.max(1)).zip(self.counts.iter().copied())
    }

    pub fn log_likelihood(&self, rho_features: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (f, &n) in self.features.chunks_exact(self.width.max(1)).zip(&self.counts) {
            let p = dot(f, rho_features);
            if !(p > 0.0) {
                return f64::NEG_INFINITY;
            }
            ll += n * p.ln();
        }
        ll
    }
}

/// Unnormalized log posterior over density matrices, relative to the
/// Hilbert-Schmidt measure (the stationary law of the purified walk).
#[derive(Clone, Debug)]
pub struct MhTarget {
    prior: PriorKind,
    dim: usize,
    terms: LikelihoodTerms,
}

impl MhTarget {
    pub fn new(record: &MeasurementRecord, prior: PriorKind, dim: usize) -> Self {
        Self { prior, dim, terms: LikelihoodTerms::from_record(record) }
    }

    pub fn prior_only(prior: PriorKind, dim: usize) -> Self {
        Self { prior, dim, terms: LikelihoodTerms::default() }
    }

    pub fn log_density(&self, rho_features: &[f64]) -> f64 {
        let ll = if self.terms.is_empty() { 0.0 } else { self.terms.log_likelihood(rho_features) };
        if ll == f64::NEG_INFINITY {
            return ll;
        }
        match self.prior {
            PriorKind::HilbertSchmidt => ll,
            kind if self.dim == 2 => {
                // Closed form: l = 1/2 +- sqrt(((r00 - r11)/2)^2 + |r01|^2).
                let f = rho_features;
                let r = (0.25 * (f[0] - f[1]).powi(2) + 0.5 * (f[2] * f[2] + f[3] * f[3])).sqrt();
                let c = 0.5 * (f[0] + f[1]);
                ll + log_density_state(kind, &[(c - r).max(0.0), c + r])
            }
            kind => {
                let lambdas = hermitian_eigenvalues(&matrix_from_features(rho_features));
                let clamped: Vec<f64> = lambdas.iter().map(|l| l.max(0.0)).collect();
                ll + log_density_state(kind, &clamped)
            }
        }
    }
}

/// Features of `Tr_2 |psi><psi|` for `psi` of length `d^2`.
fn reduced_features(psi: &[C64], d: usize, out: &mut [f64]) {
    let mut k = d;
    for i in 0..d {
        let ri = &psi[i * d..(i + 1) * d];
        out[i] = ri.iter().map(|z| z.norm_sqr()).sum();
        for j in (i + 1)..d {
            let rj = &psi[j * d..(j + 1) * d];
            let mut z = C64::new(0.0, 0.0);
            for (a, b) in ri.iter().zip(rj) {
                z += a * b.conj();
            }
            out[k] = std::f64::consts::SQRT_2 * z.re;
            out[k + 1] = std::f64::consts::SQRT_2 * z.im;
            k += 2;
        }
    }
}

/// Draws the step length `d ~ N(0, sigma)`, redrawn until `|1 - d^2/2| <= 1`.
fn draw_step<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    loop {
        let d: f64 = normal.sample(rng);
        if d * d <= 4.0 {
            return d;
        }
    }
}

/// In-place walk step on raw amplitudes; returns `false` if `g` is parallel to `psi0`.
fn step_in_place(psi0: &[C64], d: f64, g: &mut [C64], out: &mut [C64]) -> bool {
    let a = 1.0 - 0.5 * d * d;
    let b = (1.0 - a * a).max(0.0).sqrt();
    let overlap: C64 = psi0.iter().zip(g.iter()).map(|(p, x)| p.conj() * x).sum();
    for (x, p) in g.iter_mut().zip(psi0) {
        *x -= p * overlap;
    }
    let norm = g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(norm > 1e-300) {
        return false;
    }
    let scale = b / norm;
    for ((o, p), x) in out.iter_mut().zip(psi0).zip(g.iter()) {
        *o = p * a + x * scale;
    }
    // Keep the chain on the unit sphere despite round-off.
    let n = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for o in out.iter_mut() {
        *o /= n;
    }
    true
}

/// Deterministic form of the walk step for a given length `d` and Gaussian
/// direction `g`: `a |psi0> + b (g - |psi0><psi0|g>) / ||.||`, `a = 1 - d^2/2`.
pub fn random_step_with(psi0: &PureState, d: f64, g: &CVector) -> Result<PureState> {
    check_dim(psi0.dim(), g.len())?;
    if d * d > 4.0 {
        return Err(TomographyError::InvalidArgument("step length must satisfy d^2 <= 4".into()));
    }
    let mut gv: Vec<C64> = g.iter().copied().collect();
    let mut out = vec![C64::new(0.0, 0.0); psi0.dim()];
    if d == 0.0 {
        return Ok(psi0.clone());
    }
    if !step_in_place(psi0.amplitudes().as_slice(), d, &mut gv, &mut out) {
        return Err(TomographyError::InvalidArgument("direction is parallel to the current state".into()));
    }
    PureState::normalized(CVector::from_vec(out))
}

/// Gaussian random step of the purified walk.
pub fn random_step<R: Rng + ?Sized>(psi0: &PureState, sigma: f64, rng: &mut R) -> Result<PureState> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(TomographyError::InvalidArgument("sigma must be positive".into()));
    }
    loop {
        let d = draw_step(sigma, rng);
        let g = CVector::from_fn(psi0.dim(), |_, _| complex_normal(rng));
        if let Ok(s) = random_step_with(psi0, d, &g) {
            return Ok(s);
        }
    }
}

#[derive(Clone, Debug)]
pub struct MoveOutcome {
    pub state: DensityMatrix,
    pub accepted: usize,
    pub proposed: usize,
}

/// Metropolis-Hastings rejuvenation of one particle against the full record.
pub fn mh_move<R: Rng + ?Sized>(
    particle: &DensityMatrix,
    record: &MeasurementRecord,
    prior: PriorKind,
    sigma: f64,
    iterations: usize,
    rng: &mut R,
) -> MoveOutcome {
    let target = MhTarget::new(record, prior, particle.dim());
    mh_move_with_target(&target, particle, sigma, iterations, rng)
}

/// Runs `iterations` accept/reject steps of the purified walk. The chain state
/// is the purification itself, so the walk is symmetric and the acceptance
/// ratio is the ratio of target densities.
pub fn mh_move_with_target<R: Rng + ?Sized>(
    target: &MhTarget,
    particle: &DensityMatrix,
    sigma: f64,
    iterations: usize,
    rng: &mut R,
) -> MoveOutcome {
    let d = target.dim;
    let n = d * d;
    let mut psi: Vec<C64> = purify(particle).amplitudes().iter().copied().collect();
    let mut features = particle.features().to_vec();
    let mut log_p = target.log_density(&features);
    let mut cand = vec![C64::new(0.0, 0.0); n];
    let mut cand_features = vec![0.0; n];
    let mut g = vec![C64::new(0.0, 0.0); n];
    let mut accepted = 0;
    if !(sigma > 0.0) || !sigma.is_finite() || iterations == 0 {
        return MoveOutcome { state: particle.clone(), accepted: 0, proposed: 0 };
    }
    for _ in 0..iterations {
        let step = draw_step(sigma, rng);
        for x in g.iter_mut() {
            *x = complex_normal(rng);
        }
        if !step_in_place(&psi, step, &mut g, &mut cand) {
            continue;
        }
        reduced_features(&cand, d, &mut cand_features);
        let cand_log_p = target.log_density(&cand_features);
        let u: f64 = rng.random();
        let accept = if cand_log_p == f64::NEG_INFINITY || cand_log_p.is_nan() {
            false
        } else if log_p == f64::NEG_INFINITY {
            true
        } else {
            let diff = cand_log_p - log_p;
            !diff.is_nan() && u.ln() < diff
        };
        if accept {
            std::mem::swap(&mut psi, &mut cand);
            std::mem::swap(&mut features, &mut cand_features);
            log_p = cand_log_p;
            accepted += 1;
        }
    }
    let state = if accepted > 0 { DensityMatrix::from_features_unchecked(&features) } else { particle.clone() };
    MoveOutcome { state, accepted, proposed: iterations }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResampleReport {
    pub sigma: f64,
    pub acceptance_fraction: f64,
}

/// Multinomial selection, weight equalization and MH moves against the full record.
pub fn resample<R: Rng + ?Sized>(
    ensemble: &mut ParticleEnsemble,
    record: &MeasurementRecord,
    params: &ResampleParams,
    rng: &mut R,
) -> Result<ResampleReport> {
    params.validate()?;
    let sigma = params.step_scale * ensemble.distribution_size().sqrt();
    select(ensemble, rng)?;
    let target = MhTarget::new(record, ensemble.prior, ensemble.dim());
    let (accepted, proposed) = if sigma > 0.0 {
        ensemble.move_particles(&target, sigma, params.mh_iterations, rng)
    } else {
        (0, 0)
    };
    let acceptance_fraction = if proposed > 0 { accepted as f64 / proposed as f64 } else { 0.0 };
    log::debug!("resampled {} particles: sigma {sigma:.3e}, acceptance {acceptance_fraction:.3}", ensemble.len());
    Ok(ResampleReport { sigma, acceptance_fraction })
}

/// Multinomial selection step only: `S` draws with probabilities `w_s`, then
/// weights reset to `1/S`.
pub fn select<R: Rng + ?Sized>(ensemble: &mut ParticleEnsemble, rng: &mut R) -> Result<()> {
    let dist = WeightedIndex::new(&ensemble.weights)
        .map_err(|e| TomographyError::InvalidArgument(format!("cannot select from weights: {e}")))?;
    let s = ensemble.len();
    ensemble.particles = (0..s).map(|_| ensemble.particles[dist.sample(rng)].clone()).collect();
    ensemble.weights = vec![1.0 / s as f64; s];
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{bures_sq, haar_random_unitary, CMatrix};
    use crate::stats;
    use approx::assert_abs_diff_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn hv_pair() -> ParticleEnsemble {
        let h = DensityMatrix::from_pure(&PureState::basis(2, 0));
        let v = DensityMatrix::from_pure(&PureState::basis(2, 1));
        ParticleEnsemble::uniform(PriorKind::HilbertSchmidt, vec![h, v]).unwrap()
    }

    fn hv_povm() -> Povm {
        Povm::from_basis(&CMatrix::identity(2, 2)).unwrap()
    }

    fn random_ensemble(n: usize, seed: u64) -> ParticleEnsemble {
        let mut r = rng(seed);
        let particles = (0..n).map(|_| priors::sample_hs(4, &mut r)).collect();
        let raw: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        ParticleEnsemble::new(PriorKind::HilbertSchmidt, particles, raw.iter().map(|w| w / s).collect()).unwrap()
    }

    #[test]
    fn uninformative_outcome_leaves_weights() {
        let mut e = random_ensemble(10, 1);
        let before = e.weights().to_vec();
        let trivial = Povm::new(vec![CMatrix::identity(4, 4)]).unwrap();
        e.update_weights(&trivial, 0).unwrap();
        for (a, b) in before.iter().zip(e.weights()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn decisive_outcome_kills_other_particle() {
        let mut e = hv_pair();
        e.update_weights(&hv_povm(), 0).unwrap();
        assert_eq!(e.weights(), &[1.0, 0.0]);
        // Now V is impossible under the only surviving particle.
        let err = e.update_weights(&hv_povm(), 1).unwrap_err();
        assert!(matches!(err, TomographyError::DegenerateUpdate { outcome: 1 }));
        assert_eq!(e.weights(), &[1.0, 0.0]);
    }

    #[test]
    fn sequential_updates_match_batch_likelihood() {
        let mut r = rng(2);
        let mut seq = random_ensemble(50, 3);
        let mut batch = seq.clone();
        let mut record = MeasurementRecord::new();
        for _ in 0..20 {
            let povm = Povm::from_basis(&haar_random_unitary(4, &mut r)).unwrap();
            let mut counts = vec![0u64; 4];
            for _ in 0..(1 + r.random_range(0..30)) {
                let g = r.random_range(0..4);
                seq.update_weights(&povm, g).unwrap();
                counts[g] += 1;
            }
            batch.update_weights_counts(&povm, &counts).unwrap();
            record.push(povm, counts).unwrap();
        }
        // Full-likelihood oracle.
        let base = random_ensemble(50, 3);
        let log_post: Vec<f64> =
            base.particles().iter().zip(base.weights()).map(|(p, w)| w.ln() + record.log_likelihood(p)).collect();
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = log_post.iter().map(|l| (l - max).exp()).sum();
        for s in 0..50 {
            let oracle = (log_post[s] - max).exp() / z;
            let tol = 1e-9 * oracle.max(1e-300);
            assert!((seq.weights()[s] - oracle).abs() <= tol.max(1e-15), "{s}");
            assert!((batch.weights()[s] - oracle).abs() <= tol.max(1e-15), "{s}");
        }
        assert_abs_diff_eq!(seq.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ess_examples() {
        let e = random_ensemble(8, 4);
        let u = ParticleEnsemble::uniform(PriorKind::Bures, e.particles().to_vec()).unwrap();
        assert_abs_diff_eq!(u.effective_sample_size(), 8.0, epsilon = 1e-12);
        let mut onehot = vec![0.0; 8];
        onehot[3] = 1.0;
        let o = ParticleEnsemble::new(PriorKind::Bures, e.particles().to_vec(), onehot).unwrap();
        assert_abs_diff_eq!(o.effective_sample_size(), 1.0, epsilon = 1e-15);
        let two = ParticleEnsemble::new(PriorKind::Bures, e.particles()[..2].to_vec(), vec![0.75, 0.25]).unwrap();
        assert_abs_diff_eq!(two.effective_sample_size(), 1.6, epsilon = 1e-12);
    }

    #[test]
    fn bayesian_mean_examples() {
        let e = random_ensemble(5, 5);
        let single = ParticleEnsemble::uniform(PriorKind::Bures, vec![e.particles()[0].clone()]).unwrap();
        assert!(single.bayesian_mean().max_abs_diff(&e.particles()[0]) < 1e-15);
        let m = hv_pair().bayesian_mean();
        assert!(m.max_abs_diff(&DensityMatrix::maximally_mixed(2)) < 1e-15);
        let mean = e.bayesian_mean();
        assert!(DensityMatrix::new(mean.matrix().clone()).is_ok());
    }

    #[test]
    fn distribution_size_examples() {
        let e = random_ensemble(5, 6);
        let single = ParticleEnsemble::uniform(PriorKind::Bures, vec![e.particles()[1].clone()]).unwrap();
        assert_abs_diff_eq!(single.distribution_size(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(hv_pair().distribution_size(), 2.0 - 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn random_step_contracts() {
        let mut r = rng(7);
        let psi0 = PureState::haar(16, &mut r);
        let g = CVector::from_fn(16, |_, _| complex_normal(&mut r));
        assert_eq!(random_step_with(&psi0, 0.0, &g).unwrap(), psi0);
        for _ in 0..10_000 {
            let psi = random_step(&psi0, 0.3, &mut r).unwrap();
            assert_abs_diff_eq!(psi.amplitudes().norm(), 1.0, epsilon = 1e-12);
        }
        for d in [0.1, 0.5, 1.0, 1.5, 1.9] {
            let g = CVector::from_fn(16, |_, _| complex_normal(&mut r));
            let psi = random_step_with(&psi0, d, &g).unwrap();
            let overlap = psi0.inner(&psi);
            assert_abs_diff_eq!(overlap.re, 1.0 - d * d / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(overlap.im, 0.0, epsilon = 1e-12);
        }
        assert!(random_step(&psi0, 0.0, &mut r).is_err());
    }

    #[test]
    fn random_step_is_isotropic_around_its_center() {
        // U fixes psi0 = |0>; compare |<phi|psi>| with |<U phi|psi>|.
        let mut r = rng(8);
        let psi0 = PureState::basis(16, 0);
        let mut u = CMatrix::identity(16, 16);
        let block = haar_random_unitary(15, &mut r);
        u.view_mut((1, 1), (15, 15)).copy_from(&block);
        let phi = PureState::haar(16, &mut r);
        let uphi = PureState::normalized(&u * phi.amplitudes()).unwrap();
        let a: Vec<f64> = (0..5000).map(|_| phi.inner(&random_step(&psi0, 0.8, &mut r).unwrap()).norm()).collect();
        let b: Vec<f64> = (0..5000).map(|_| uphi.inner(&random_step(&psi0, 0.8, &mut r).unwrap()).norm()).collect();
        assert!(stats::ks_two_sample_pvalue(&a, &b) > 0.01);
    }

    #[test]
    fn reduced_features_match_partial_trace() {
        let mut r = rng(9);
        let psi = PureState::haar(16, &mut r);
        let mut f = vec![0.0; 16];
        reduced_features(psi.amplitudes().as_slice(), 4, &mut f);
        let rho = crate::quantum::partial_trace(&psi, true).unwrap();
        for (a, b) in f.iter().zip(rho.features()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn empty_record_hs_chain_is_stationary_at_hs() {
        let mut r = rng(10);
        let target = MhTarget::prior_only(PriorKind::HilbertSchmidt, 4);
        let n = 3000;
        let chain: Vec<f64> = (0..n)
            .map(|_| {
                let start = priors::sample_hs(4, &mut r);
                mh_move_with_target(&target, &start, 0.5, 20, &mut r).state.purity()
            })
            .collect();
        let direct: Vec<f64> = (0..n).map(|_| priors::sample_hs(4, &mut r).purity()).collect();
        assert!(stats::ks_two_sample_pvalue(&chain, &direct) > 0.01);
    }

    #[test]
    fn rejecting_chain_returns_input() {
        // A record impossible for every candidate near the start is never accepted
        // when the start itself has -inf density only if... use zero iterations.
        let mut r = rng(11);
        let start = priors::sample_hs(4, &mut r);
        let out = mh_move(&start, &MeasurementRecord::new(), PriorKind::Bures, 0.3, 0, &mut r);
        assert_eq!(out.state, start);
        assert_eq!(out.accepted, 0);
    }

    #[test]
    fn selection_duplicates_heavy_particle() {
        let mut r = rng(12);
        let n = 1000;
        let base = random_ensemble(n, 13);
        let heavy = base.particles()[0].clone();
        let mut w = vec![0.001 / (n - 1) as f64; n];
        w[0] = 0.999;
        let s: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / s).collect();
        let mut e = ParticleEnsemble::new(PriorKind::HilbertSchmidt, base.particles().to_vec(), w).unwrap();
        select(&mut e, &mut r).unwrap();
        let copies = e.particles().iter().filter(|p| **p == heavy).count() as f64;
        let expected = 0.999 * n as f64;
        let sd = (n as f64 * 0.999 * 0.001).sqrt();
        assert!((copies - expected).abs() <= 4.0 * sd, "{copies}");
        assert!(e.weights().iter().all(|&x| (x - 1.0 / n as f64).abs() < 1e-15));
    }

    #[test]
    fn resample_equalizes_weights_and_keeps_states_valid() {
        let mut r = rng(14);
        let truth = priors::sample_hs(4, &mut r);
        let mut e = ParticleEnsemble::from_prior(PriorKind::HilbertSchmidt, 4, 200, &ResampleParams::default(), &mut r).unwrap();
        let mut record = MeasurementRecord::new();
        for _ in 0..30 {
            let povm = Povm::from_basis(&haar_random_unitary(4, &mut r)).unwrap();
            let p = povm.born_probabilities(&truth).unwrap();
            let mut counts = vec![0u64; 4];
            for _ in 0..10 {
                let u: f64 = r.random();
                let mut acc = 0.0;
                let g = p.iter().position(|&x| { acc += x; u < acc }).unwrap_or(3);
                counts[g] += 1;
            }
            e.update_weights_counts(&povm, &counts).unwrap();
            record.push(povm, counts).unwrap();
        }
        let report = resample(&mut e, &record, &ResampleParams::default(), &mut r).unwrap();
        assert!(report.sigma > 0.0 && report.acceptance_fraction > 0.0);
        assert!(e.weights().iter().all(|&w| (w - 1.0 / 200.0).abs() < 1e-15));
        for p in e.particles() {
            assert!(DensityMatrix::new(p.matrix().clone()).is_ok());
        }
        let _ = bures_sq(&e.bayesian_mean(), &truth).unwrap();
    }

    #[test]
    fn snapshot_json_roundtrip() {
        let e = random_ensemble(4, 15);
        let json = e.to_json().unwrap();
        let back = ParticleEnsemble::from_json(&json).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in back.particles().iter().zip(e.particles()) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["prior"], "hilbert-schmidt");
        assert_eq!(v["particles"][0][0][0].as_array().unwrap().len(), 2);
    }
}
