//! Chooses the next measurement for each design class from one posterior.

use aqst::design::{choose, information_gain, DesignClass, OptimizerParams};
use aqst::priors::PriorKind;
use aqst::smc::{ParticleEnsemble, ResampleParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aqst::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ensemble = ParticleEnsemble::from_prior(PriorKind::Bures, 4, 300, &ResampleParams::default(), &mut rng)?;
    let params = OptimizerParams::default();
    for class in DesignClass::ALL {
        let choice = choose(&ensemble, class, &params, &mut rng)?;
        let check = information_gain(&ensemble, &choice.povm)?;
        println!("{class}: gain {:.4} nats (best of pool {:.4}, recomputed {:.4})", choice.gain, choice.pool_gain, check);
    }
    Ok(())
}
