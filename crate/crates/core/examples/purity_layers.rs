//! Events needed to reach a distribution-size target for states of given purity.

use aqst::design::DesignClass;
use aqst::harness::{purity_sweep, RunSpec, TruthSpec};
use aqst::priors::PriorKind;

fn main() -> aqst::Result<()> {
    let mut template = RunSpec::new(DesignClass::FactorizedRandom, PriorKind::Bures, TruthSpec::BuresRandom, 3000, 10);
    template.ensemble.size = 200;
    template.checkpoints_per_decade = 10;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let layers = purity_sweep(&template, &[1.0, 0.6], 0.01, 2, 2e-2, &DesignClass::ALL, jobs)?;
    for layer in &layers {
        for c in &layer.classes {
            match c.mean_n {
                Some(n) => println!("purity {:.1} {}: N = {n:.0} ({} censored)", layer.purity, c.class, c.censored),
                None => println!("purity {:.1} {}: not reached", layer.purity, c.class),
            }
        }
    }
    Ok(())
}
