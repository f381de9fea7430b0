//! Integer-order Bessel functions of the first kind `J_n` and modified
//! Bessel functions of the second kind `K_n` for real positive arguments.
//!
//! `J_n` uses Miller's backward recurrence normalized with the Neumann
//! identity `J_0 + 2 Σ J_2k = 1`, which is accurate to rounding in the
//! absolute sense for every order at once. `K_0` and `K_1` come from the
//! ascending series for `x <= 2` and Steed's continued fraction otherwise,
//! and higher orders follow from the (stable) upward recurrence.

use std::f64::consts::PI;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const EPS: f64 = 1e-17;
const MAX_ITER: usize = 10_000;
const RESCALE_ABOVE: f64 = 1e250;

/// Returns `[J_0(x), J_1(x), ..., J_max_order(x)]`.
pub fn bessel_j_orders(max_order: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; max_order + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let ax = x.abs();

    let m0 = max_order.max(ax.ceil() as usize);
    let mut start = m0 + 20 + (40.0 * m0 as f64).sqrt().ceil() as usize;
    start += start % 2;

    // Backward sweep: j_next = J_{k+1}, j_cur = J_k (unnormalized).
    let mut j_next = 0.0_f64;
    let mut j_cur = 1e-30_f64;
    let mut norm = 0.0_f64;
    for k in (1..=start).rev() {
        if k <= max_order {
            out[k] = j_cur;
        }
        if k % 2 == 0 {
            norm += 2.0 * j_cur;
        }
        let j_prev = (2.0 * k as f64 / ax) * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        if j_cur.abs() > RESCALE_ABOVE {
            let s = 1.0 / RESCALE_ABOVE;
            j_cur *= s;
            j_next *= s;
            norm *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    out[0] = j_cur;
    norm += j_cur;

    for (order, v) in out.iter_mut().enumerate() {
        *v /= norm;
        // J_n(-x) = (-1)^n J_n(x)
        if sign < 0.0 && order % 2 == 1 {
            *v = -*v;
        }
    }
    out
}

/// `J_n(x)` for a single order.
pub fn bessel_j(order: usize, x: f64) -> f64 {
    bessel_j_orders(order, x)[order]
}

/// Returns `[K_0(x), ..., K_max_order(x)]` for `x > 0`. Non-positive
/// arguments yield `NaN`.
pub fn bessel_k_orders(max_order: usize, x: f64) -> Vec<f64> {
    if !(x > 0.0) {
        return vec![f64::NAN; max_order + 1];
    }
    let (k0, k1) = if x <= 2.0 { k01_series(x) } else { k01_continued_fraction(x) };
    let mut out = Vec::with_capacity(max_order + 1);
    out.push(k0);
    if max_order >= 1 {
        out.push(k1);
    }
    for n in 1..max_order {
        let next = out[n - 1] + (2.0 * n as f64 / x) * out[n];
        out.push(next);
    }
    out
}

/// `K_n(x)` for a single order.
pub fn bessel_k(order: usize, x: f64) -> f64 {
    bessel_k_orders(order, x)[order]
}

fn k01_series(x: f64) -> (f64, f64) {
    let q = 0.25 * x * x;
    let log_half = (0.5 * x).ln();

    // I_0, Σ H_k t_k, with t_k = q^k / (k!)^2
    let mut t = 1.0;
    let mut harmonic = 0.0;
    let mut i0 = 1.0;
    let mut k0_tail = 0.0;
    // I_1 / (x/2) and the digamma sum, with s_k = q^k / (k! (k+1)!)
    let mut s = 1.0;
    let mut i1_core = 1.0;
    let mut psi_sum = -2.0 * EULER_GAMMA + 1.0; // ψ(1) + ψ(2)
    let mut k1_tail = psi_sum;

    for k in 1..MAX_ITER {
        let kf = k as f64;
        t *= q / (kf * kf);
        harmonic += 1.0 / kf;
        i0 += t;
        k0_tail += t * harmonic;

        s *= q / (kf * (kf + 1.0));
        // ψ(k+1) + ψ(k+2) = 2(H_k - γ) + 1/(k+1)
        psi_sum = 2.0 * (harmonic - EULER_GAMMA) + 1.0 / (kf + 1.0);
        i1_core += s;
        k1_tail += s * psi_sum;

        if t < EPS * i0 && s < EPS * i1_core {
            break;
        }
    }
    let i1 = 0.5 * x * i1_core;
    let k0 = -(log_half + EULER_GAMMA) * i0 + k0_tail;
    let k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_tail;
    (k0, k1)
}

/// Steed's continued fraction (CF2) for order zero, which yields `K_0` and
/// `K_1` together.
fn k01_continued_fraction(x: f64) -> (f64, f64) {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < EPS {
            break;
        }
    }
    h *= a1;
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}
