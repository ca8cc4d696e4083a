//! Prior distributions over density matrices.
//!
//! Three priors are supported, all unitarily invariant (Haar eigenvectors) and
//! differing in their eigenvalue law: the Bures-induced measure, the
//! Hilbert-Schmidt measure and the measure uniform on the eigenvalue simplex.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomographyError};
use crate::quantum::{ginibre, haar_random_unitary, CMatrix, DensityMatrix};
use crate::smc::{mh_move_with_target, MhTarget};

/// Fewest Metropolis-Hastings steps accepted when seeding the simplex prior.
pub const MIN_SIMPLEX_MOVE_STEPS: usize = 50;

/// Steps used by default. The walk mixes slowly towards degenerate spectra,
/// where the target density vanishes; shorter chains visibly under-populate
/// the largest-eigenvalue tail for two qubits.
pub const SIMPLEX_MOVE_STEPS: usize = 4000;

/// Step size of the purified random walk when seeding simplex-prior samples.
pub const SIMPLEX_SEED_SIGMA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorKind {
    #[serde(rename = "bures")]
    Bures,
    #[serde(rename = "hilbert-schmidt")]
    HilbertSchmidt,
    #[serde(rename = "simplex")]
    SimplexUniform,
}

impl PriorKind {
    pub const ALL: [PriorKind; 3] = [PriorKind::Bures, PriorKind::HilbertSchmidt, PriorKind::SimplexUniform];

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Bures => "bures",
            PriorKind::HilbertSchmidt => "hilbert-schmidt",
            PriorKind::SimplexUniform => "simplex",
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriorKind {
    type Err = TomographyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bures" => Ok(PriorKind::Bures),
            "hilbert-schmidt" => Ok(PriorKind::HilbertSchmidt),
            "simplex" => Ok(PriorKind::SimplexUniform),
            other => Err(TomographyError::InvalidConfig(format!(
                "unknown prior '{other}' (expected bures, hilbert-schmidt or simplex)"
            ))),
        }
    }
}

/// Hilbert-Schmidt random state `G G^dagger / Tr(G G^dagger)`, `G` square Ginibre.
pub fn sample_hs<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    loop {
        if let Ok(rho) = DensityMatrix::from_gram(&ginibre(dim, dim, rng)) {
            return rho;
        }
    }
}

/// Bures random state `(I + U) G G^dagger (I + U^dagger)`, normalized, with `U`
/// Haar and `G` Ginibre.
pub fn sample_bures<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    loop {
        let u = haar_random_unitary(dim, rng);
        let g = ginibre(dim, dim, rng);
        let a = (CMatrix::identity(dim, dim) + u) * g;
        if let Ok(rho) = DensityMatrix::from_gram(&a) {
            return rho;
        }
    }
}

/// State with eigenvalues uniform on the simplex: a Hilbert-Schmidt seed moved
/// by `move_steps` Metropolis-Hastings steps targeting the simplex prior.
pub fn sample_simplex_uniform<R: Rng + ?Sized>(dim: usize, rng: &mut R, move_steps: usize) -> Result<DensityMatrix> {
    if move_steps < MIN_SIMPLEX_MOVE_STEPS {
        return Err(TomographyError::InvalidArgument(format!(
            "simplex prior needs at least {MIN_SIMPLEX_MOVE_STEPS} move steps, got {move_steps}"
        )));
    }
    let target = MhTarget::prior_only(PriorKind::SimplexUniform, dim);
    let seed = sample_hs(dim, rng);
    Ok(mh_move_with_target(&target, &seed, SIMPLEX_SEED_SIGMA, move_steps, rng).state)
}

/// One draw from `kind`.
pub fn sample<R: Rng + ?Sized>(kind: PriorKind, dim: usize, rng: &mut R) -> DensityMatrix {
    match kind {
        PriorKind::Bures => sample_bures(dim, rng),
        PriorKind::HilbertSchmidt => sample_hs(dim, rng),
        PriorKind::SimplexUniform => {
            sample_simplex_uniform(dim, rng, SIMPLEX_MOVE_STEPS).expect("default move count is valid")
        }
    }
}

/// `sum_{i<j} 2 ln|l_i - l_j|`, `-inf` on degeneracy.
fn log_geometric_factor(lambdas: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..lambdas.len() {
        for j in (i + 1)..lambdas.len() {
            s += 2.0 * (lambdas[i] - lambdas[j]).abs().ln();
        }
    }
    s
}

/// Unnormalized log-density of the prior on the eigenvalue simplex (prior
/// formula times the geometric factor `prod_{i<j} (l_i - l_j)^2`).
pub fn log_density_eigs(kind: PriorKind, lambdas: &[f64]) -> Result<f64> {
    let sum: f64 = lambdas.iter().sum();
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(TomographyError::InvalidArgument(format!("{lambdas:?} is not on the probability simplex")));
    }
    Ok(match kind {
        PriorKind::SimplexUniform => 0.0,
        PriorKind::HilbertSchmidt => log_geometric_factor(lambdas),
        PriorKind::Bures => {
            let geom = log_geometric_factor(lambdas);
            if geom == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                geom + log_density_state(kind, lambdas)
            }
        }
    })
}

/// Log-density of the prior with respect to the Hilbert-Schmidt measure on
/// density matrices, as a function of the eigenvalues. This is what the
/// purified random walk needs in its acceptance ratio.
pub(crate) fn log_density_state(kind: PriorKind, lambdas: &[f64]) -> f64 {
    match kind {
        PriorKind::HilbertSchmidt => 0.0,
        PriorKind::SimplexUniform => -log_geometric_factor(lambdas),
        PriorKind::Bures => {
            let mut s = 0.0;
            for (i, &li) in lambdas.iter().enumerate() {
                s -= 0.5 * li.max(0.0).ln();
                for &lj in &lambdas[i + 1..] {
                    s -= (li + lj).max(0.0).ln();
                }
            }
            s
        }
    }
}
