//! Real spherical harmonics from associated Legendre functions.

use std::f64::consts::PI;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `P_l^m(x)` for `m ≥ 0`, including the Condon-Shortley phase `(-1)^m`.
fn legendre(l: usize, m: usize, x: f64) -> f64 {
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..m {
        pmm *= -fact * somx2;
        fact += 2.0;
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in m + 2..=l {
        pll = (x * (2 * ll - 1) as f64 * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// Real SH basis value of degree `l`, order `m ∈ [-l, l]` for a unit direction.
///
/// Built as `√2·N·P_l^|m|(cos θ)·{cos(mφ), sin(|m|φ)}` from the phased
/// Legendre function, the sign convention of splatting renderers.
pub fn real_sh(l: usize, m: i64, dir: [f64; 3]) -> f64 {
    let [x, y, z] = dir;
    let am = m.unsigned_abs() as usize;
    let norm = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
    let p = legendre(l, am, z.clamp(-1.0, 1.0));
    let phi = y.atan2(x);
    match m {
        0 => norm * p,
        m if m > 0 => 2f64.sqrt() * norm * p * (m as f64 * phi).cos(),
        _ => 2f64.sqrt() * norm * p * (am as f64 * phi).sin(),
    }
}

/// Colour of a coefficient row (`row[k*3 + c]`), before clamping.
pub(crate) fn sh_color(row: &[f64], degree: usize, dir: [f64; 3]) -> [f64; 3] {
    let mut rgb = [0.5; 3];
    let mut k = 0;
    for l in 0..=degree {
        for m in -(l as i64)..=(l as i64) {
            let y = real_sh(l, m, dir);
            for (c, v) in rgb.iter_mut().enumerate() {
                *v += row[k * 3 + c] * y;
            }
            k += 1;
        }
    }
    rgb
}
