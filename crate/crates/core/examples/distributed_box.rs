//! Distributed per-load envelopes of two coupled rooms, and what happens
//! when every load moves independently inside its own corridor.
//!
//! ```bash
//! cargo run --release --example distributed_box
//! ```

use flexenv::model::{discretize, Scheme};
use flexenv::rc::{AmbientSeries, Edge, RcNetwork, Room};
use flexenv::ti_multi::compute_distributed_box;
use flexenv::verify::{check_distributed_soundness, SOUNDNESS_TOL};

fn main() -> flexenv::Result<()> {
    let (dt, steps) = (900.0, 48);
    let rc = RcNetwork {
        rooms: vec![
            Room { label: "east".into(), capacitance: 8e6, r_amb: Some(1.0 / 40.0), heated: true, p_max: 1000.0 },
            Room { label: "west".into(), capacitance: 6e6, r_amb: Some(1.0 / 25.0), heated: true, p_max: 1000.0 },
        ],
        edges: vec![Edge { i: 0, j: 1, r: 1.0 / 60.0 }],
        comfort: Default::default(),
        t0: 23.0,
    };
    let (sys, d) = rc.compile(&AmbientSeries::constant(10.0, dt, steps), steps)?;
    let dsys = discretize(&sys, dt, steps, Scheme::ExactZoh)?;
    let boxes = compute_distributed_box(&dsys, &d)?;
    println!("box defined for {} of {steps} steps, polytope residual {:.1e}", boxes.horizon, boxes.polytope_residual);
    for env in &boxes.loads {
        let h = env.defined_up_to;
        println!("{:<5} after {:>4.1} h: [{:.2}, {:.2}] MJ", env.label, h as f64 * dt / 3600.0, env.e_down[h] / 1e6, env.e_up[h] / 1e6);
    }
    let seeds: Vec<u64> = (0..500).collect();
    let r = check_distributed_soundness(&dsys, &d, &boxes.loads, &seeds, SOUNDNESS_TOL)?;
    println!("{} independent samples, {} comfort violations", r.samples, r.violations.len());
    Ok(())
}
