//! Sequential importance sampling with resample-move on a fixed measurement.

use aqst::measurements::{compile_factorized, FactorizedConfig};
use aqst::priors::PriorKind;
use aqst::quantum::{bures_sq, DensityMatrix, PureState};
use aqst::smc::{resample, MeasurementRecord, ParticleEnsemble, ResampleParams};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_PI_8;

fn main() -> aqst::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = ResampleParams::default();
    let truth = DensityMatrix::from_pure(&PureState::haar(4, &mut rng));
    let mut ensemble = ParticleEnsemble::from_prior(PriorKind::Bures, 4, 500, &params, &mut rng)?;
    let mut record = MeasurementRecord::new();

    // Cycle through the computational, diagonal and circular product bases.
    let settings = [(0.0, 0.0), (FRAC_PI_8, 0.0), (0.0, FRAC_PI_8)];
    let mut resamples = 0;
    for n in 0..3000 {
        let (a, b) = settings[(n / 100) % 3];
        let povm = compile_factorized(&FactorizedConfig::new(a, b, a, b)?);
        if n % 100 == 0 {
            record.push(povm.clone(), vec![0; 4])?;
        }
        let p = povm.born_probabilities(&truth)?;
        let g = WeightedIndex::new(&p).expect("valid probabilities").sample(&mut rng);
        ensemble.update_weights(&povm, g)?;
        record.record_outcome(g)?;
        if ensemble.effective_sample_size() < params.s_thrs_fraction * ensemble.len() as f64 {
            let report = resample(&mut ensemble, &record, &params, &mut rng)?;
            resamples += 1;
            println!("N = {:>4}: resampled, sigma {:.3}, acceptance {:.2}", n + 1, report.sigma, report.acceptance_fraction);
        }
    }
    let mean = ensemble.bayesian_mean();
    println!("{resamples} resamples");
    println!("distribution size   {:.3e}", ensemble.distribution_size());
    println!("distance to truth   {:.3e}", bures_sq(&mean, &truth)?);
    Ok(())
}
