//! TD and scalar TI envelopes of the one-zone house over one day.
//!
//! ```bash
//! cargo run --release --example swiss_house_envelopes
//! ```

use flexenv::model::{discretize, Scheme};
use flexenv::rc::{swiss_house, AmbientSeries};
use flexenv::td::compute_td_envelope;
use flexenv::ti_scalar::compute_ti_scalar_envelope;
use flexenv::verify::{area_reduction, mfph};

fn main() -> flexenv::Result<()> {
    let (dt, steps) = (900.0, 96);
    let (sys, d) = swiss_house().compile(&AmbientSeries::constant(10.0, dt, steps), steps)?;
    let dsys = discretize(&sys, dt, steps, Scheme::ExactZoh)?;

    let td = compute_td_envelope(&dsys, &d)?;
    let ti = compute_ti_scalar_envelope(&dsys, &d)?;

    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "hour", "TD down MJ", "TD up MJ", "TI down MJ", "TI up MJ");
    for k in (0..=steps).step_by(8) {
        println!(
            "{:>6.1} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            k as f64 * dt / 3600.0,
            td.envelope.e_down[k] / 1e6,
            td.envelope.e_up[k] / 1e6,
            ti.envelope.e_down[k] / 1e6,
            ti.envelope.e_up[k] / 1e6
        );
    }
    let reduction = area_reduction(&ti.envelope, &td.envelope, steps).unwrap_or(0.0);
    let m = mfph(&ti.envelope);
    println!("area reduction over 24 h: {:.1} %", 100.0 * reduction);
    println!("max flexibility prediction horizon: {:.1} h{}", m.seconds / 3600.0, if m.full_horizon { " (whole horizon)" } else { "" });
    println!("solve time: TD {:.2} s, TI {:.2} s", td.solve_time_s, ti.solve_time_s);
    Ok(())
}
