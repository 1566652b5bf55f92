//! Zernike disk polynomials and their Radon transforms.
//!
//! `Z_n^m(r, θ) = R_n^{|m|}(r) e^{imθ}` with `n - |m|` even. The Radon
//! transform of a Zernike polynomial has the closed form
//! `(2 / (n + 1)) sqrt(1 - s²) U_n(s) e^{imφ}`, where `U_n` is the Chebyshev
//! polynomial of the second kind.

/// Radial polynomials `R_n^m(r)` for all `0 <= m <= n <= n_max`.
///
/// Entry `[n][m]` is zero when `n - m` is odd.
pub fn radial_table(n_max: usize, r: f64) -> Vec<Vec<f64>> {
    let mut table: Vec<Vec<f64>> = (0..=n_max).map(|n| vec![0.0; n + 1]).collect();
    table[0][0] = 1.0;
    for n in 1..=n_max {
        for m in (n % 2..=n).step_by(2) {
            // Kintner's three-term recurrence.
            let prev = &table[n - 1];
            let left = prev.get(m.abs_diff(1)).copied().unwrap_or(0.0);
            let right = prev.get(m + 1).copied().unwrap_or(0.0);
            let back = if n >= 2 { table[n - 2].get(m).copied().unwrap_or(0.0) } else { 0.0 };
            table[n][m] = r * (left + right) - back;
        }
    }
    table
}

/// [`radial_table`] into a reused row-major buffer: `R_n^m(r)` lands at
/// `out[n * (n_max + 1) + m]`.
pub fn radial_table_into(n_max: usize, r: f64, out: &mut Vec<f64>) {
    let w = n_max + 1;
    out.clear();
    out.resize(w * w, 0.0);
    out[0] = 1.0;
    for n in 1..=n_max {
        for m in (n % 2..=n).step_by(2) {
            let left = out[(n - 1) * w + m.abs_diff(1)];
            let right = if m + 1 < n { out[(n - 1) * w + m + 1] } else { 0.0 };
            let back = if n >= 2 && m + 2 <= n { out[(n - 2) * w + m] } else { 0.0 };
            out[n * w + m] = r * (left + right) - back;
        }
    }
}

/// A single radial polynomial `R_n^m(r)`.
pub fn radial(n: usize, m: usize, r: f64) -> f64 {
    if m > n || (n - m) % 2 == 1 {
        return 0.0;
    }
    radial_table(n, r)[n][m]
}

/// Chebyshev polynomials of the second kind `U_0(s) ..= U_{n_max}(s)`.
pub fn chebyshev_u_table(n_max: usize, s: f64) -> Vec<f64> {
    let mut u = vec![0.0; n_max + 1];
    u[0] = 1.0;
    if n_max >= 1 {
        u[1] = 2.0 * s;
    }
    for n in 2..=n_max {
        u[n] = 2.0 * s * u[n - 1] - u[n - 2];
    }
    u
}

/// Radial factor of the Radon transform of `R_n^{|m|} e^{imθ}`:
/// `(2 / (n + 1)) sqrt(1 - s²) U_n(s)`, zero for `|s| >= 1`.
pub fn radon_radial(n: usize, s: f64) -> f64 {
    if s.abs() >= 1.0 {
        return 0.0;
    }
    2.0 / (n as f64 + 1.0) * (1.0 - s * s).sqrt() * chebyshev_u_table(n, s)[n]
}

/// Factor making `R_n^m cos(mθ)` (or `sin`) unit-norm in `L²(disk)`.
pub fn normalization(n: usize, m: usize) -> f64 {
    let eps = if m == 0 { 2.0 } else { 1.0 };
    (2.0 * (n as f64 + 1.0) / (std::f64::consts::PI * eps)).sqrt()
}

/// Admissible `(n, m)` pairs, `|m| <= min(n, k_max)`, `n <= n_max`, `n - |m|` even.
pub fn admissible(n_max: usize, k_max: usize) -> Vec<(usize, i64)> {
    let mut out = Vec::new();
    for n in 0..=n_max {
        for m in -(n.min(k_max) as i64)..=(n.min(k_max) as i64) {
            if (n as i64 - m.abs()) % 2 == 0 {
                out.push((n, m));
            }
        }
    }
    out
}
