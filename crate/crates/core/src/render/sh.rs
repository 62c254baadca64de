//! Real spherical harmonics up to degree 3 in the polynomial form used by
//! Gaussian-splatting renderers (Condon-Shortley phase).

pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the SH expansion before clamping colour at zero.
pub const COLOR_OFFSET: f64 = 0.5;

/// Basis values `Y_k(dir)` for `k < (degree + 1)^2`.
pub fn basis(dir: [f64; 3], degree: usize, out: &mut [f64; 16]) {
    let [x, y, z] = dir;
    out[0] = C0;
    if degree < 1 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = C2[0] * x * y;
    out[5] = C2[1] * y * z;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * x * z;
    out[8] = C2[4] * (xx - yy);
    if degree < 3 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * x * y * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Gradients of the basis polynomials with respect to the (unnormalized) direction components.
pub fn basis_grad(dir: [f64; 3], degree: usize, out: &mut [[f64; 3]; 16]) {
    let [x, y, z] = dir;
    out[0] = [0.0; 3];
    if degree < 1 {
        return;
    }
    out[1] = [0.0, -C1, 0.0];
    out[2] = [0.0, 0.0, C1];
    out[3] = [-C1, 0.0, 0.0];
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = [C2[0] * y, C2[0] * x, 0.0];
    out[5] = [0.0, C2[1] * z, C2[1] * y];
    out[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
    out[7] = [C2[3] * z, 0.0, C2[3] * x];
    out[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    if degree < 3 {
        return;
    }
    out[9] = [6.0 * C3[0] * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
    out[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
    out[11] = [
        -2.0 * C3[2] * x * y,
        C3[2] * (4.0 * zz - xx - 3.0 * yy),
        8.0 * C3[2] * y * z,
    ];
    out[12] = [
        -6.0 * C3[3] * x * z,
        -6.0 * C3[3] * y * z,
        C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    out[13] = [
        C3[4] * (4.0 * zz - 3.0 * xx - yy),
        -2.0 * C3[4] * x * y,
        8.0 * C3[4] * x * z,
    ];
    out[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
    out[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
}

/// Evaluates an SH row (coefficient-major, `row[k * 3 + channel]`) in direction
/// `view_dir`, adds the 0.5 offset and clamps each channel at zero.
pub fn eval_sh(sh_row: &[f32], view_dir: [f64; 3], degree: usize) -> [f64; 3] {
    debug_assert!(
        ((view_dir[0].powi(2) + view_dir[1].powi(2) + view_dir[2].powi(2)).sqrt() - 1.0).abs()
            < 1e-6,
        "view direction must be unit length"
    );
    eval_unclamped(sh_row, view_dir, degree).map(|c| c.max(0.0))
}

pub(crate) fn eval_unclamped(sh_row: &[f32], dir: [f64; 3], degree: usize) -> [f64; 3] {
    let mut b = [0.0; 16];
    basis(dir, degree, &mut b);
    let mut rgb = [COLOR_OFFSET; 3];
    for (k, bk) in b.iter().enumerate().take(crate::model::sh_coeff_count(degree)) {
        for (c, out) in rgb.iter_mut().enumerate() {
            *out += bk * sh_row[k * 3 + c] as f64;
        }
    }
    rgb
}
