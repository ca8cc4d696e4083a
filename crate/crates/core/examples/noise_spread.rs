//! Spread of estimates over repeated runs on one state, with and without
//! wave-plate angle noise.

use aqst::design::DesignClass;
use aqst::harness::{run_batch, saturated_level, spread, RunSpec, TruthSpec};
use aqst::measurements::NoiseModel;
use aqst::priors::PriorKind;
use aqst::quantum::{DensityMatrix, PureState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aqst::Result<()> {
    let truth = DensityMatrix::from_pure(&PureState::haar(4, &mut ChaCha8Rng::seed_from_u64(9)));
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    for deg in [0.0, 5.0] {
        for class in [DesignClass::FactorizedRandom, DesignClass::FactorizedAdaptive] {
            let specs: Vec<RunSpec> = (0..4)
                .map(|k| {
                    let mut s = RunSpec::new(class, PriorKind::Bures, TruthSpec::Explicit { state: truth.clone() }, 1000, 9);
                    s.ensemble.size = 200;
                    s.noise = NoiseModel::from_degrees(deg).unwrap();
                    s.run_index = k;
                    s
                })
                .collect();
            let runs = run_batch(&specs, jobs)?;
            let curve = spread(&runs.iter().map(|t| t.estimates.clone()).collect::<Vec<_>>())?;
            let n: Vec<u64> = runs[0].records.iter().map(|r| r.n).collect();
            println!("{deg} deg, {class}: saturated spread {:.3e}", saturated_level(&n, &curve));
        }
    }
    Ok(())
}
