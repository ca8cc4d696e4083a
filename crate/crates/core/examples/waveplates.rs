//! Wave-plate analyzers: angle settings, the product POVM they realize, and
//! angle noise.

use aqst::measurements::{angles_for_state, apply_noise, compile_factorized, waveplate_state, FactorizedConfig, NoiseModel};
use aqst::quantum::{fidelity_pure, DensityMatrix, PureState, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aqst::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let diag = PureState::from_slice(&[C64::new(1.0, 0.0), C64::new(1.0, 0.0)].map(|z| z / 2f64.sqrt()))?;
    let (th, tq) = angles_for_state(&diag)?;
    println!("|D> needs HWP {:.2} deg, QWP {:.2} deg", th.to_degrees(), tq.to_degrees());
    println!("fidelity of the realized state: {:.12}", fidelity_pure(&waveplate_state(th, tq), &diag)?);

    let config = FactorizedConfig::for_states(&diag, &PureState::basis(2, 0))?;
    println!("config: {}", serde_json::to_string(&config)?);
    let povm = compile_factorized(&config);
    let state = DensityMatrix::from_pure(&diag.tensor(&PureState::basis(2, 0)));
    println!("ideal probabilities: {:.4?}", povm.born_probabilities(&state)?);

    let noise = NoiseModel::from_degrees(5.0)?;
    let noisy = compile_factorized(&apply_noise(&config, &noise, &mut rng));
    println!("with 5 deg noise:    {:.4?}", noisy.born_probabilities(&state)?);
    Ok(())
}
