//! Draws from the three priors and compares their eigenvalue statistics.

use aqst::priors::{sample, PriorKind};
use aqst::stats::mean;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 400;
    println!("{:<16} {:>10} {:>10}", "prior", "<purity>", "<l_max>");
    for kind in PriorKind::ALL {
        let draws: Vec<_> = (0..n).map(|_| sample(kind, 4, &mut rng)).collect();
        let purity: Vec<f64> = draws.iter().map(|r| r.purity()).collect();
        let lmax: Vec<f64> = draws.iter().map(|r| r.eigenvalues()[3]).collect();
        println!("{:<16} {:>10.4} {:>10.4}", kind, mean(&purity), mean(&lmax));
    }
}
