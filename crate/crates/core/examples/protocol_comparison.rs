//! All four protocols on the same pure states, with power-law exponents of
//! the averaged distribution size.

use aqst::design::DesignClass;
use aqst::harness::{aggregate_runs, fit_power_law_range, run_batch, RunSpec, TruthSpec};
use aqst::priors::PriorKind;

fn main() -> aqst::Result<()> {
    let runs = 4;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    for class in DesignClass::ALL {
        let specs: Vec<RunSpec> = (0..runs)
            .map(|k| {
                let mut s = RunSpec::new(class, PriorKind::Bures, TruthSpec::PureHaar, 2000, 7);
                s.ensemble.size = 200;
                s.run_index = k;
                s
            })
            .collect();
        let agg = aggregate_runs(&run_batch(&specs, jobs)?)?;
        let fit = fit_power_law_range(&agg.curve("dist_size_bures").unwrap(), 1e2, 2e3)?;
        println!("{class}: a = {:.3} +- {:.3}", fit.a, fit.stderr_a);
    }
    Ok(())
}
