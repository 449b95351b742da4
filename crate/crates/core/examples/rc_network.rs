//! Builds a small RC network, round-trips it through JSON and compiles it to
//! a state-space model.
//!
//! ```bash
//! cargo run --example rc_network
//! ```

use flexenv::rc::{synth_ambient, Edge, RcNetwork, Room};

fn main() -> flexenv::Result<()> {
    let rc = RcNetwork {
        rooms: vec![
            Room { label: "kitchen".into(), capacitance: 5e6, r_amb: Some(1.0 / 30.0), heated: true, p_max: 1500.0 },
            Room { label: "hall".into(), capacitance: 3e6, r_amb: None, heated: false, p_max: 0.0 },
            Room { label: "bedroom".into(), capacitance: 4e6, r_amb: Some(1.0 / 20.0), heated: true, p_max: 1000.0 },
        ],
        edges: vec![Edge { i: 0, j: 1, r: 1.0 / 40.0 }, Edge { i: 1, j: 2, r: 1.0 / 25.0 }],
        comfort: Default::default(),
        t0: 23.0,
    };
    rc.validate()?;
    let text = serde_json::to_string_pretty(&rc)?;
    println!("{text}");
    let back: RcNetwork = serde_json::from_str(&text)?;
    assert_eq!(back, rc);

    let ambient = synth_ambient(5.0, 8.0, 86400.0, 3600.0, 24)?;
    let (sys, d) = rc.compile(&ambient, 24)?;
    println!("A =\n{}B_p =\n{}B_d =\n{}", sys.a, sys.b_p, sys.b_d);
    println!("validation: {}", sys.validate());
    println!("ambient over the day: {:?}", d.values.column(0).iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>());
    Ok(())
}
