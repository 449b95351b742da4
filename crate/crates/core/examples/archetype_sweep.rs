//! Metrics of the twelve one-zone archetypes and the orderings between them.
//!
//! ```bash
//! cargo run --release --example archetype_sweep
//! ```

use flexenv::model::Scheme;
use flexenv::rc::{AmbientSeries, DEFAULT_ARCHETYPE_AREA, DEFAULT_POWER_DENSITY};
use flexenv::study::{archetype_sweep, check_orderings, SWEEP_AMBIENT_C, SWEEP_HORIZONS_S};

fn main() -> flexenv::Result<()> {
    let ambient = AmbientSeries::constant(SWEEP_AMBIENT_C, 900.0, 96);
    let results = archetype_sweep(DEFAULT_ARCHETYPE_AREA, DEFAULT_POWER_DENSITY, &ambient, 900.0, &SWEEP_HORIZONS_S, Scheme::ExactZoh)?;
    println!("{:<16} {:>8} {:>8} {:>8} {:>8}   MFPH at 24 h", "archetype", "1 h", "4 h", "12 h", "24 h");
    for r in &results {
        let red: Vec<String> = r.rows.iter().map(|row| row.reduction.map_or("-".into(), |v| format!("{v:.3}"))).collect();
        let last = r.rows.last().expect("one row per horizon");
        println!("{:<16} {:>8} {:>8} {:>8} {:>8}   {:.1} h", r.spec.name(), red[0], red[1], red[2], red[3], last.mfph_s / 3600.0);
    }
    for h in SWEEP_HORIZONS_S {
        let v = check_orderings(&results, h)?;
        println!("orderings at {:>2} h: {}", h / 3600.0, if v.holds() { "hold".to_string() } else { format!("{} breaches", v.breaches.len()) });
    }
    Ok(())
}
