//! Wigner 3j symbols for integer angular momenta.
//!
//! The Racah sum is regrouped into binomial coefficients,
//!
//! ```text
//! (j1 j2 j3; m1 m2 m3) = (-1)^(j1-j2-m3) · S · sqrt[ Π(j±m)! / (a! b! c! (J+1)!) ]
//! S = Σ_k (-1)^k C(a, k) C(b, j1-m1-k) C(c, j2+m2-k)
//! ```
//!
//! with `a = j1+j2-j3`, `b = j1-j2+j3`, `c = -j1+j2+j3`, `J = j1+j2+j3`.
//! `S` is an integer and is accumulated exactly in `i128` whenever it fits,
//! so the only rounding left is in the square-root prefactor.

fn binomial_i128(n: i64, k: i64) -> Option<i128> {
    if k < 0 || k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: i128 = 1;
    for i in 0..k {
        // exact at every step: acc = C(n, i+1) after the division
        acc = acc.checked_mul((n - i) as i128)? / (i + 1) as i128;
    }
    Some(acc)
}

fn binomial_f64(n: i64, k: i64) -> f64 {
    if k < 0 || k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// ln(n!) by direct summation; arguments here stay small.
fn ln_factorial(n: i64) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

fn triangle(j1: i32, j2: i32, j3: i32) -> bool {
    j3 >= (j1 - j2).abs() && j3 <= j1 + j2
}

/// Wigner 3j symbol `(j1 j2 j3; m1 m2 m3)` for integer arguments.
///
/// Selection-rule failures (triangle, `m1+m2+m3 != 0`, `|m| > j`, negative
/// `j`) return `0.0`.
pub fn wigner3j(j1: i32, j2: i32, j3: i32, m1: i32, m2: i32, m3: i32) -> f64 {
    if j1 < 0 || j2 < 0 || j3 < 0 {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    if m1 + m2 + m3 != 0 || !triangle(j1, j2, j3) {
        return 0.0;
    }
    let total = j1 + j2 + j3;
    if m1 == 0 && m2 == 0 && m3 == 0 && total % 2 == 1 {
        return 0.0;
    }

    let (j1, j2, j3, m1, m2, m3) = (
        j1 as i64, j2 as i64, j3 as i64, m1 as i64, m2 as i64, m3 as i64,
    );
    let a = j1 + j2 - j3;
    let b = j1 - j2 + j3;
    let c = -j1 + j2 + j3;

    let k_min = 0.max(j2 - j3 - m1).max(j1 - j3 + m2);
    let k_max = a.min(j1 - m1).min(j2 + m2);

    let sum = racah_sum_exact(a, b, c, j1 - m1, j2 + m2, k_min, k_max)
        .map(|s| s as f64)
        .unwrap_or_else(|| racah_sum_f64(a, b, c, j1 - m1, j2 + m2, k_min, k_max));
    if sum == 0.0 {
        return 0.0;
    }

    let ln_num = ln_factorial(j1 + m1)
        + ln_factorial(j1 - m1)
        + ln_factorial(j2 + m2)
        + ln_factorial(j2 - m2)
        + ln_factorial(j3 + m3)
        + ln_factorial(j3 - m3);
    let ln_den = ln_factorial(a) + ln_factorial(b) + ln_factorial(c) + ln_factorial(j1 + j2 + j3 + 1);
    let prefactor = (0.5 * (ln_num - ln_den)).exp();

    let sign = if (j1 - j2 - m3).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    sign * sum * prefactor
}

fn racah_sum_exact(a: i64, b: i64, c: i64, p: i64, q: i64, k_min: i64, k_max: i64) -> Option<i128> {
    let mut acc: i128 = 0;
    for k in k_min..=k_max {
        let term = binomial_i128(a, k)?
            .checked_mul(binomial_i128(b, p - k)?)?
            .checked_mul(binomial_i128(c, q - k)?)?;
        acc = if k % 2 == 0 { acc.checked_add(term)? } else { acc.checked_sub(term)? };
    }
    Some(acc)
}

fn racah_sum_f64(a: i64, b: i64, c: i64, p: i64, q: i64, k_min: i64, k_max: i64) -> f64 {
    (k_min..=k_max)
        .map(|k| {
            let t = binomial_f64(a, k) * binomial_f64(b, p - k) * binomial_f64(c, q - k);
            if k % 2 == 0 { t } else { -t }
        })
        .sum()
}
