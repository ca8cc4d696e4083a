//! A nearly pure state with a triply degenerate spectrum: the Bures prior
//! stalls, the eigenvalue-uniform prior does not.

use aqst::design::DesignClass;
use aqst::harness::{aggregate_runs, find_plateau, run_batch, RunSpec, TruthSpec};
use aqst::priors::PriorKind;

fn main() -> aqst::Result<()> {
    let truth = TruthSpec::Diagonal { eigenvalues: vec![0.9925, 0.0025, 0.0025, 0.0025] };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    for prior in [PriorKind::Bures, PriorKind::SimplexUniform] {
        let specs: Vec<RunSpec> = (0..2)
            .map(|k| {
                let mut s = RunSpec::new(DesignClass::FactorizedAdaptive, prior, truth.clone(), 20_000, 11);
                s.ensemble.size = 200;
                s.checkpoints_per_decade = 5;
                s.run_index = k;
                s
            })
            .collect();
        let agg = aggregate_runs(&run_batch(&specs, jobs)?)?;
        let curve = agg.curve("dist_true_bures").unwrap();
        println!("{prior}:");
        for (n, d) in &curve {
            println!("  N = {n:>6}  d_true^2 = {d:.3e}");
        }
        println!("  flat decade: {:?}", find_plateau(&curve, 1.0, 0.1));
    }
    Ok(())
}
