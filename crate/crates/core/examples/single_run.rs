//! One simulated adaptive tomography run, printed checkpoint by checkpoint.

use aqst::design::DesignClass;
use aqst::harness::{run_tomography, RunSpec, TruthSpec};
use aqst::priors::PriorKind;

fn main() -> aqst::Result<()> {
    let mut spec = RunSpec::new(DesignClass::GeneralAdaptive, PriorKind::Bures, TruthSpec::BuresRandom, 2000, 42);
    spec.ensemble.size = 300;
    spec.checkpoints_per_decade = 5;
    let t = run_tomography(&spec)?;
    println!("truth purity {:.3}", t.truth.purity());
    println!("{:>6} {:>12} {:>12} {:>6} {:>9}", "N", "dist_size", "dist_true", "rdd", "resamples");
    for r in &t.records {
        println!("{:>6} {:>12.3e} {:>12.3e} {:>6.2} {:>9}", r.n, r.dist_size, r.dist_true, r.rdd, r.resamples);
    }
    Ok(())
}
