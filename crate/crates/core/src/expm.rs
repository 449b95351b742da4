//! Matrix exponential and the zero-order-hold input integral.
//!
//! `expm` is the scaling-and-squaring method with Padé approximants of
//! degree 3 to 13 (Higham, "The Scaling and Squaring Method for the Matrix
//! Exponential Revisited", 2005).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068;
const THETA_13: f64 = 5.371920351148152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn is_metzler(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] >= 0.0))
}

/// `exp(a * t)`.
///
/// For a Metzler `a` (nonnegative off-diagonal) and `t >= 0` the exact result
/// is entrywise nonnegative; rounding-level negatives are clipped to zero.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let at = a * t;
    let mut e = expm(&at);
    if is_metzler(a) {
        let scale = e.amax().max(1.0);
        for v in e.iter_mut() {
            if *v < 0.0 && *v > -1e-12 * scale {
                *v = 0.0;
            }
        }
    }
    Ok(e)
}

fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let norm = one_norm(a);
    let ident = DMatrix::<f64>::identity(n, n);
    let (u, v, squarings) = if norm < THETA_3 {
        let (u, v) = pade_low(a, &PADE_3);
        (u, v, 0)
    } else if norm < THETA_5 {
        let (u, v) = pade_low(a, &PADE_5);
        (u, v, 0)
    } else if norm < THETA_7 {
        let (u, v) = pade_low(a, &PADE_7);
        (u, v, 0)
    } else if norm < THETA_9 {
        let (u, v) = pade_low(a, &PADE_9);
        (u, v, 0)
    } else {
        let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
        let scaled = a * 2f64.powi(-s);
        let (u, v) = pade_13(&scaled, &ident);
        (u, v, s as u32)
    };
    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular for the selected degree");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Odd/even split for degrees 3..9: `U = A * sum odd`, `V = sum even`.
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut pow = ident.clone();
    let mut odd = DMatrix::zeros(n, n);
    let mut even = DMatrix::zeros(n, n);
    for k in 0..b.len() / 2 {
        odd += &pow * b[2 * k + 1];
        even += &pow * b[2 * k];
        pow = &pow * &a2;
    }
    (a * odd, even)
}

fn pade_13(a: &DMatrix<f64>, ident: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &PADE_13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + ident * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + ident * b[0];
    (u, v)
}

/// `(exp(a*dt), ∫_0^dt exp(a*s) ds)`.
///
/// The integral is the series `dt * Σ_{m≥0} (a dt)^m / (m+1)!`, evaluated on
/// `dt / 2^s` so that the scaled argument has norm at most 1/2, then doubled
/// back with `∫_0^{2h} = (I + e^{ah}) ∫_0^h`. Singular `a` needs no special
/// case.
pub fn zoh_integral(a: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let ad = matrix_exponential(a, dt)?;
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let norm = one_norm(a) * dt;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let h = dt * 2f64.powi(-s);
    let y = a * h;

    let mut e = ident.clone();
    let mut f = ident.clone();
    let mut term = ident.clone();
    for m in 1..40 {
        term = &term * &y / m as f64;
        e += &term;
        f += &term / (m + 1) as f64;
        if term.amax() < 1e-18 {
            break;
        }
    }
    let mut f = f * h;
    for _ in 0..s {
        f = (&ident + &e) * &f;
        e = &e * &e;
    }
    Ok((ad, f))
}
