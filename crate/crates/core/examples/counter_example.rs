//! Two trajectories that both stay inside the TD envelope: one keeps the room
//! comfortable, the other lets it fall below 22 °C. Inside the TI envelope the
//! same construction stays comfortable.
//!
//! ```bash
//! cargo run --release --example counter_example
//! ```

use flexenv::model::{check_state_feasibility, discretize, simulate, Scheme, DEFAULT_STATE_TOL};
use flexenv::rc::{swiss_house, AmbientSeries};
use flexenv::td::compute_td_envelope;
use flexenv::ti_scalar::compute_ti_scalar_envelope;
use flexenv::verify::{extreme_trajectory, ExtremeMode};

fn main() -> flexenv::Result<()> {
    let (dt, steps) = (900.0, 96);
    let (sys, d) = swiss_house().compile(&AmbientSeries::constant(10.0, dt, steps), steps)?;
    let dsys = discretize(&sys, dt, steps, Scheme::ExactZoh)?;
    let td = compute_td_envelope(&dsys, &d)?.envelope;
    let ti = compute_ti_scalar_envelope(&dsys, &d)?.envelope;

    for (name, env) in [("TD", &td), ("TI", &ti)] {
        for (scenario, mode) in [("A (heat late)", ExtremeMode::LatestMin), ("B (heat early, then coast)", ExtremeMode::EarliestThenMin)] {
            let p = extreme_trajectory(env, &sys, mode)?;
            let xs = simulate(&dsys, &p, &d)?;
            let v = check_state_feasibility(&xs, &sys, DEFAULT_STATE_TOL)?;
            let t_min = xs.values.column(0).min();
            println!(
                "{name} scenario {scenario:<27} energy {:>6.2} MJ  lowest {:.3} °C  {}",
                p.cumulative_total()[steps] / 1e6,
                t_min,
                if v.feasible { "comfortable" } else { "violates comfort" }
            );
        }
    }
    Ok(())
}
