//! Per-room envelopes of the three-storey building: adiabatic rooms, the
//! distributed box and the centralized pool, with and without insulated
//! partitions.
//!
//! ```bash
//! cargo run --release --example nine_room_coupling
//! ```

use flexenv::rc::{nine_room_index, NineRoomParams};
use flexenv::study::nine_room_study;

fn main() -> flexenv::Result<()> {
    // areas in MJ·h
    let unit = 3.6e9;
    for insulated in [false, true] {
        let params = NineRoomParams { with_indoor_insulation: insulated, ..NineRoomParams::default() };
        let r = nine_room_study(&params, 900.0, 96)?;
        println!("indoor insulation: {insulated}");
        println!("  sum of adiabatic rooms  {:>8.1}", r.area_sum_adiabatic / unit);
        println!("  sum of distributed box  {:>8.1}  (box defined for {} steps)", r.area_sum_distributed / unit, r.box_horizon);
        println!("  centralized pool        {:>8.1}  (defined for {} steps)", r.area_centralized / unit, r.centralized_defined_up_to);
        println!("  spread                  {:>8.1} %", 100.0 * r.spread);
        println!(
            "  top corner room {}: adiabatic {:.1}, distributed {:.1}",
            nine_room_index(2, 2),
            r.room_area_adiabatic / unit,
            r.room_area_distributed / unit
        );
    }
    Ok(())
}
