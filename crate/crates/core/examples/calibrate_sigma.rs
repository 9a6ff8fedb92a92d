//! Calibrates the residual SD so the single-layer MC SD of the IPW estimator
//! hits a target at the reference setting.
//!
//! ```text
//! cargo run --release --example calibrate_sigma -- [reps] [seed] [target_sd]
//! ```

use pategen::ps::PsOptions;
use pategen::simulation::{calibrate_sigma, ScenarioParams, ScenarioTargets};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20_000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20_240_101);
    let target: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.141);

    let params = ScenarioParams::from_targets(&ScenarioTargets::default())?;
    let sigma = calibrate_sigma(&params, reps, seed, target, &PsOptions::default())?;
    println!(
        "alpha0 = {:.4}, alpha1 = {}, beta2 = {:.4}, beta3 = {}, n_total = {}",
        params.alpha0, params.alpha1, params.beta2, params.beta3, params.n_total
    );
    println!("reps = {reps}, seed = {seed}, target MC SD = {target}");
    println!("sigma = {sigma:.4}");
    Ok(())
}
