//! Fidelity, Bures distance and purification of two-qubit states.

use aqst::priors::sample_bures;
use aqst::quantum::{bures_sq, fidelity, partial_trace, purify, trace_distance, DensityMatrix, PureState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aqst::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rho = sample_bures(4, &mut rng);
    let sigma = sample_bures(4, &mut rng);
    let mixed = DensityMatrix::maximally_mixed(4);
    let pure = DensityMatrix::from_pure(&PureState::haar(4, &mut rng));

    println!("purity(rho)          = {:.4}", rho.purity());
    println!("F(rho, sigma)        = {:.4}", fidelity(&rho, &sigma)?);
    println!("d_B^2(rho, sigma)    = {:.4}", bures_sq(&rho, &sigma)?);
    println!("T(rho, sigma)        = {:.4}", trace_distance(&rho, &sigma)?);
    // F(|psi><psi|, I/4) = 1/4 for every pure state.
    println!("F(pure, I/4)         = {:.4}", fidelity(&pure, &mixed)?);

    let psi = purify(&rho);
    let back = partial_trace(&psi, true)?;
    println!("purify roundtrip err = {:.2e}", back.max_abs_diff(&rho));
    Ok(())
}
