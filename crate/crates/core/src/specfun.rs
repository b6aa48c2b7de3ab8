//! Integer-order Bessel functions of real argument.
//!
//! `J_n` comes from Miller's downward recurrence normalized with
//! `J_0 + 2 Σ J_2k = 1`. `Y_0` and `Y_1` are built from Neumann series over
//! the same `J` sequence and carried to higher orders by upward recurrence,
//! which is stable for the second kind.

use std::f64::consts::{FRAC_2_PI, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Largest supported order.
pub const MAX_ORDER: u32 = 60;

const RESCALE_LIMIT: f64 = 1e250;

fn miller_start(nmax: u32, x: f64) -> usize {
    let top = (nmax as f64).max(x.ceil());
    let start = top + 20.0 + (40.0 * top.max(1.0)).sqrt();
    // even start keeps the normalization sum aligned
    2 * ((start as usize + 1) / 2)
}

/// `J_0(x), ..., J_len-1(x)` for `x > 0` computed by downward recurrence from
/// an order chosen well above both `nmax` and `x`. The returned vector is at
/// least `nmax + 1` long and extends to the recurrence start.
fn j_sequence_full(nmax: u32, x: f64) -> Vec<f64> {
    let start = miller_start(nmax, x);
    let mut vals = vec![0.0; start + 2];
    let mut next = 0.0; // J_{k+1}
    let mut cur = 1e-300_f64; // J_k, arbitrary seed
    let mut norm = 0.0;
    for k in (0..=start).rev() {
        vals[k] = cur;
        if k % 2 == 0 {
            norm += if k == 0 { cur } else { 2.0 * cur };
        }
        if k == 0 {
            break;
        }
        let prev = (2.0 * k as f64 / x) * cur - next;
        next = cur;
        cur = prev;
        if cur.abs() > RESCALE_LIMIT {
            let s = 1.0 / RESCALE_LIMIT;
            cur *= s;
            next *= s;
            norm *= s;
            for v in vals[k..].iter_mut() {
                *v *= s;
            }
        }
    }
    let inv = 1.0 / norm;
    for v in vals.iter_mut() {
        *v *= inv;
    }
    vals
}

/// `J_0(x), ..., J_nmax(x)`.
pub fn bessel_j_seq(nmax: u32, x: f64) -> Vec<f64> {
    let x = x.abs();
    if x == 0.0 {
        let mut v = vec![0.0; nmax as usize + 1];
        v[0] = 1.0;
        return v;
    }
    let mut v = j_sequence_full(nmax, x);
    v.truncate(nmax as usize + 1);
    v
}

/// Bessel function of the first kind `J_n(x)` for `x >= 0`.
pub fn bessel_j(n: u32, x: f64) -> f64 {
    bessel_j_seq(n, x)[n as usize]
}

/// `(J_0..=J_nmax, Y_0..=Y_nmax)` at one argument.
pub fn bessel_jy_seq(nmax: u32, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("Y_n requires x > 0, got {x}")));
    }
    let j = j_sequence_full(nmax.max(1), x);
    let log_term = (0.5 * x).ln() + EULER_GAMMA;

    let mut y0_sum = 0.0;
    let mut y1_sum = 0.0;
    let mut k = 1;
    while 2 * k + 1 < j.len() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let kf = k as f64;
        y0_sum += sign * j[2 * k] / kf;
        y1_sum += sign * (j[2 * k - 1] - j[2 * k + 1]) / kf;
        k += 1;
    }
    let y0 = FRAC_2_PI * log_term * j[0] - 2.0 * FRAC_2_PI * y0_sum;
    let y1 = -FRAC_2_PI * j[0] / x + FRAC_2_PI * log_term * j[1] + FRAC_2_PI * y1_sum;

    let len = nmax as usize + 1;
    let mut y = Vec::with_capacity(len.max(2));
    y.push(y0);
    y.push(y1);
    for n in 1..nmax as usize {
        let v = (2.0 * n as f64 / x) * y[n] - y[n - 1];
        y.push(v);
    }
    y.truncate(len);
    let mut jv = j;
    jv.truncate(len);
    Ok((jv, y))
}

/// Bessel function of the second kind `Y_n(x)`; logarithmically singular at 0.
pub fn bessel_y(n: u32, x: f64) -> Result<f64> {
    Ok(bessel_jy_seq(n, x)?.1[n as usize])
}

/// Hankel function of the first kind `H_n^(1)(x) = J_n(x) + i Y_n(x)`.
pub fn hankel1(n: u32, x: f64) -> Result<Complex64> {
    let (j, y) = bessel_jy_seq(n, x)?;
    Ok(Complex64::new(j[n as usize], y[n as usize]))
}

/// `H_0^(1)(x)` and `H_1^(1)(x)` from a single recurrence pass.
pub fn hankel1_01(x: f64) -> Result<(Complex64, Complex64)> {
    let (j, y) = bessel_jy_seq(1, x)?;
    Ok((Complex64::new(j[0], y[0]), Complex64::new(j[1], y[1])))
}

/// `H_0^(1)(x), ..., H_nmax^(1)(x)`.
pub fn hankel1_seq(nmax: u32, x: f64) -> Result<Vec<Complex64>> {
    let (j, y) = bessel_jy_seq(nmax, x)?;
    Ok(j.into_iter().zip(y).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// Large-argument leading term `sqrt(2/(pi x)) e^{i(x - n pi/2 - pi/4)}`.
pub fn hankel1_asymptotic(n: u32, x: f64) -> Complex64 {
    let phase = x - 0.5 * PI * n as f64 - 0.25 * PI;
    Complex64::from_polar((2.0 / (PI * x)).sqrt(), phase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j_at_origin() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(1, 0.0), 0.0);
        assert_eq!(bessel_j(7, 0.0), 0.0);
    }

    #[test]
    fn y_rejects_nonpositive() {
        assert!(matches!(bessel_y(0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_y(2, -1.0), Err(Error::Domain(_))));
        assert!(hankel1(0, 0.0).is_err());
    }

    #[test]
    fn y0_log_asymptotic_near_zero() {
        let x: f64 = 1e-6;
        let lead = FRAC_2_PI * ((0.5 * x).ln() + EULER_GAMMA);
        assert!((bessel_y(0, x).unwrap() - lead).abs() < 1e-10);
        assert!(bessel_y(0, 1e-5).unwrap() > bessel_y(0, 1e-6).unwrap());
    }

    #[test]
    fn high_order_small_argument() {
        // scipy.special reference values
        assert!((bessel_j(30, 3.0) / 6.722339938146384e-28 - 1.0).abs() < 1e-10);
        assert!((bessel_y(30, 3.0).unwrap() / -1.5863291359145216e25 - 1.0).abs() < 1e-10);
        assert!((bessel_j(60, 50.0) - 0.001048519599531401).abs() < 1e-13);
    }

    #[test]
    fn hankel_modulus_is_definitional() {
        for &x in &[0.2, 1.0, 4.5, 19.0] {
            let h = hankel1(0, x).unwrap();
            let j = bessel_j(0, x);
            let y = bessel_y(0, x).unwrap();
            assert!((h.norm_sqr() - (j * j + y * y)).abs() < 1e-14);
        }
    }
}
