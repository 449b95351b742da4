//! Seeded corridor samples inside the TD and TI envelopes, simulated and
//! checked against the comfort band.
//!
//! ```bash
//! cargo run --release --example soundness_sampling
//! ```

use flexenv::model::{discretize, Scheme};
use flexenv::rc::{swiss_house, AmbientSeries};
use flexenv::td::compute_td_envelope;
use flexenv::ti_scalar::compute_ti_scalar_envelope;
use flexenv::verify::{check_envelope_soundness, worst_discomfort, SOUNDNESS_TOL};

fn main() -> flexenv::Result<()> {
    let (dt, steps) = (900.0, 96);
    let (sys, d) = swiss_house().compile(&AmbientSeries::constant(10.0, dt, steps), steps)?;
    let dsys = discretize(&sys, dt, steps, Scheme::ExactZoh)?;
    let td = compute_td_envelope(&dsys, &d)?.envelope;
    let ti = compute_ti_scalar_envelope(&dsys, &d)?.envelope;
    let seeds: Vec<u64> = (0..1000).collect();

    for env in [&td, &ti] {
        let r = check_envelope_soundness(&dsys, &d, env, &seeds, SOUNDNESS_TOL)?;
        println!(
            "{:<10} {} samples, {} violations, worst below band {:.3} °C",
            env.kind.to_string(),
            r.samples,
            r.violations.len(),
            r.worst_below
        );
        if let Some(v) = r.violations.first() {
            println!("           e.g. seed {} at step {}: {:.3} °C {}", v.seed, v.step, v.excess, if v.above { "too warm" } else { "too cold" });
        }
    }
    let worst = worst_discomfort(&dsys, &d, &td)?;
    println!("worst TD discomfort: {:.3} °C above, {:.3} °C below", worst.worst_above, worst.worst_below);
    Ok(())
}
