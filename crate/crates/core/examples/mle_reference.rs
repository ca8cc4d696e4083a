//! Maximum-likelihood reconstruction next to the Bayesian mean on the same data.

use aqst::harness::{mle_estimate, simulate_block};
use aqst::priors::{sample_bures, PriorKind};
use aqst::quantum::{bures_sq, haar_random_unitary, Povm};
use aqst::smc::{MeasurementRecord, ParticleEnsemble, ResampleParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aqst::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = sample_bures(4, &mut rng);
    let mut record = MeasurementRecord::new();
    let mut ensemble = ParticleEnsemble::from_prior(PriorKind::Bures, 4, 2000, &ResampleParams::default(), &mut rng)?;
    for _ in 0..20 {
        let povm = Povm::from_basis(&haar_random_unitary(4, &mut rng))?;
        let counts = simulate_block(&truth, &povm, &povm, 5, &mut rng)?;
        ensemble.update_weights_counts(&povm, &counts)?;
        record.push(povm, counts)?;
    }
    let mle = mle_estimate(&record)?;
    println!("{} events, {} MLE iterations, degenerate: {}", record.total_events(), mle.iterations, mle.degenerate);
    println!("MLE  d_B^2 to truth: {:.4}", bures_sq(&mle.state, &truth)?);
    println!("BME  d_B^2 to truth: {:.4}  (ESS {:.0})", bures_sq(&ensemble.bayesian_mean(), &truth)?, ensemble.effective_sample_size());
    println!("MLE eigenvalues: {:.4?}", mle.state.eigenvalues());
    Ok(())
}
