//! Runs the desk preset end to end and prints the epoch log and held-out errors.
//!
//! `cargo run --release -p fringe-core --example desk -- [vnet|unet|resvnet] [seed] [noise]`

use fringe_core::model::Variant;
use fringe_core::pipeline::{run_experiment, Preset};
use fringe_core::synth::NoiseSpec;

fn main() -> fringe_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant = Variant::parse(args.first().map_or("vnet", String::as_str))?;
    let seed = args.get(1).map_or(Ok(1), |s| s.parse()).expect("seed must be an integer");
    let mut preset = Preset::desk();
    if let Some(n) = args.get(2) {
        preset.noise = NoiseSpec::parse(n)?;
    }
    println!("epoch\ttrain_loss\tval_mae\tval_mse\tseconds");
    let r = run_experiment(&preset, variant, seed, |e| println!("{}", e.log_line()))?;
    println!("input MAE {:.4}  reconstruction MAE {:.4}", r.mean_input_mae(), r.mean_output_mae());
    Ok(())
}
