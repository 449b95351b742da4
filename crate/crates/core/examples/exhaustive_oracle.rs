//! Enumerates every power trajectory on a coarse grid and compares with the
//! envelopes: TD must enclose all feasible energies, TI must admit no
//! trajectory that leaves the comfort band.
//!
//! ```bash
//! cargo run --release --example exhaustive_oracle
//! ```

use flexenv::model::{discretize, Scheme};
use flexenv::rc::{swiss_house, AmbientSeries};
use flexenv::td::compute_td_envelope;
use flexenv::ti_scalar::compute_ti_scalar_envelope;
use flexenv::verify::{compare_td_with_oracle, BruteForceOracle, CorridorTest, SOUNDNESS_TOL};

fn main() -> flexenv::Result<()> {
    // four two-hour steps, five power levels each
    let (dt, steps) = (7200.0, 4);
    let (sys, d) = swiss_house().compile(&AmbientSeries::constant(10.0, dt, steps), steps)?;
    let dsys = discretize(&sys, dt, steps, Scheme::ExactZoh)?;
    let oracle = BruteForceOracle::new(&dsys, &d, 5, steps)?;
    let table = oracle.td_table();
    let td = compute_td_envelope(&dsys, &d)?.envelope;
    let ti = compute_ti_scalar_envelope(&dsys, &d)?.envelope;

    println!("{} gridded prefixes enumerated, grid increment {:.2} MJ", table.enumerated, table.grid_increment / 1e6);
    for k in 0..=steps {
        println!(
            "k={k}  TD [{:>6.2}, {:>6.2}] MJ  feasible grid [{:>6.2}, {:>6.2}] MJ",
            td.e_down[k] / 1e6,
            td.e_up[k] / 1e6,
            table.min_feasible[k].unwrap_or(f64::NAN) / 1e6,
            table.max_feasible[k].unwrap_or(f64::NAN) / 1e6
        );
    }
    let enclosure = compare_td_with_oracle(&td, &table);
    println!("TD encloses the grid: {}, within one increment: {}", enclosure.encloses, enclosure.within_increment);

    for (name, env) in [("TD", &td), ("TI", &ti)] {
        let r = oracle.check_corridor(CorridorTest::Total(env), SOUNDNESS_TOL)?;
        println!("{name}: {} trajectories inside the corridor, {} leave the comfort band", r.inside, r.violations.len());
    }
    Ok(())
}
