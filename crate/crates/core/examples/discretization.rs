//! Matrix exponential, zero-order-hold discretization and the forward Euler
//! alternative on a two-room exchange.
//!
//! ```bash
//! cargo run --example discretization
//! ```

use nalgebra::DMatrix;

use flexenv::expm::matrix_exponential;
use flexenv::model::{discretize, simulate, LinearLossySystem, Scheme, Trajectory};

fn main() -> flexenv::Result<()> {
    let exchange = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
    println!("exp([[-1, 1], [1, -1]]) = {}", matrix_exponential(&exchange, 1.0)?);
    println!("exp(-2.5e-6 * 3600) = {:.6}", matrix_exponential(&DMatrix::from_element(1, 1, -2.5e-6), 3600.0)?[(0, 0)]);

    let sys = LinearLossySystem::scalar(-2.5e-6, 5e-8, 2.5e-6, 0.0, 1000.0, 22.0, 24.0, 23.0)?;
    println!("{:>8} {:>14} {:>14}", "dt [s]", "Euler T(24h)", "ZOH T(24h)");
    for dt in [7200.0, 3600.0, 900.0, 60.0] {
        let steps = (86400.0 / dt) as usize;
        let d = Trajectory::constant(dt, steps, &[10.0]);
        let p = Trajectory::constant(dt, steps, &[500.0]);
        let end = |scheme| -> flexenv::Result<f64> {
            let xs = simulate(&discretize(&sys, dt, steps, scheme)?, &p, &d)?;
            Ok(xs.final_state()[0])
        };
        println!("{dt:>8} {:>14.6} {:>14.6}", end(Scheme::ForwardEuler)?, end(Scheme::ExactZoh)?);
    }
    Ok(())
}
