//! Covariance construction and perspective projection of a single Gaussian,
//! plus the adjoints used by the backward pass.
//!
//! Forward chain for one Gaussian:
//!   (log-scales, q) -> Σ = R(q̂) diag(exp(ls))² R(q̂)ᵀ
//!   p -> t = W p + w,  mean2d = (fx tx/tz + cx, fy ty/tz + cy)
//!   Σ₂ = J W Σ Wᵀ Jᵀ + λ_blur I,  conic = Σ₂⁻¹

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};

/// Low-pass dilation added to every projected covariance, in px².
pub const BLUR_PX2: f64 = 0.3;

/// Camera-space depth below which Gaussians are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Rotation and squared scales decoded from an SR row.
#[derive(Clone, Debug)]
pub struct CovarianceParts {
    pub rotation: Matrix3<f64>,
    pub scales_sq: Vector3<f64>,
    /// Normalized quaternion `(w, x, y, z)`.
    pub quat: [f64; 4],
    pub quat_norm: f64,
    pub cov: Matrix3<f64>,
}

pub fn quat_to_rotation(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn covariance_parts(sr_row: &[f32]) -> Result<CovarianceParts> {
    let raw: [f64; 4] = std::array::from_fn(|k| sr_row[3 + k] as f64);
    let quat_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(quat_norm > 0.0) || !quat_norm.is_finite() {
        return Err(Error::invalid("SR row quaternion has zero or non-finite norm"));
    }
    let quat = raw.map(|v| v / quat_norm);
    let rotation = quat_to_rotation(quat);
    let scales_sq = Vector3::from_fn(|i, _| (2.0 * sr_row[i] as f64).exp());
    let cov = rotation * Matrix3::from_diagonal(&scales_sq) * rotation.transpose();
    Ok(CovarianceParts {
        rotation,
        scales_sq,
        quat,
        quat_norm,
        cov,
    })
}

/// World-space covariance `R(q̂) diag(exp(ls))² R(q̂)ᵀ` of an SR row.
pub fn build_covariance(sr_row: &[f32]) -> Result<Matrix3<f64>> {
    if sr_row.len() != crate::model::SR_DIM {
        return Err(Error::invalid("SR row must have 7 components"));
    }
    Ok(covariance_parts(sr_row)?.cov)
}

/// Screen-space footprint of a Gaussian plus the intermediates its adjoint needs.
#[derive(Clone, Debug)]
pub struct Projection {
    pub cam_point: Vector3<f64>,
    pub mean2d: Vector2<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
}

/// Projects a Gaussian with mean `mu` and world covariance `cov`. Returns
/// `None` when the mean lies on or behind the near plane or the footprint
/// is degenerate.
pub fn project_gaussian(mu: &Vector3<f64>, cov: &Matrix3<f64>, cam: &Camera) -> Option<Projection> {
    let t = cam.to_camera(mu);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let inv_z = 1.0 / t.z;
    let mean2d = Vector2::new(cam.fx * t.x * inv_z + cam.cx, cam.fy * t.y * inv_z + cam.cy);
    let jacobian = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * t.x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * t.y * inv_z * inv_z,
    );
    let w = &cam.rotation;
    let cov_cam = w * cov * w.transpose();
    let cov2d = jacobian * cov_cam * jacobian.transpose() + Matrix2::identity() * BLUR_PX2;
    let det = cov2d.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    Some(Projection {
        cam_point: t,
        mean2d,
        jacobian,
        cov_cam,
        cov2d,
        conic,
    })
}

/// Pulls `dL/dconic` and `dL/dmean2d` back to the camera-space point and the
/// world covariance. `d_conic` is the full symmetric-matrix gradient.
pub fn projection_backward(
    proj: &Projection,
    cam: &Camera,
    d_mean2d: Vector2<f64>,
    d_conic: Matrix2<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let conic = &proj.conic;
    let d_cov2d = -(conic.transpose() * d_conic * conic.transpose());
    let j = &proj.jacobian;
    let w = &cam.rotation;
    let d_cov_cam = j.transpose() * d_cov2d * j;
    let d_cov = w.transpose() * d_cov_cam * w;
    // Σ₂ = J Σc Jᵀ with symmetric Σc and dL/dΣ₂.
    let d_j = (d_cov2d + d_cov2d.transpose()) * j * proj.cov_cam;

    let t = &proj.cam_point;
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_t = Vector3::new(
        d_mean2d.x * fx * inv_z,
        d_mean2d.y * fy * inv_z,
        -d_mean2d.x * fx * t.x * inv_z2 - d_mean2d.y * fy * t.y * inv_z2,
    );
    // J00 = fx/z, J02 = -fx x/z², J11 = fy/z, J12 = -fy y/z².
    d_t.x += d_j[(0, 2)] * (-fx * inv_z2);
    d_t.y += d_j[(1, 2)] * (-fy * inv_z2);
    d_t.z += d_j[(0, 0)] * (-fx * inv_z2)
        + d_j[(0, 2)] * (2.0 * fx * t.x * inv_z3)
        + d_j[(1, 1)] * (-fy * inv_z2)
        + d_j[(1, 2)] * (2.0 * fy * t.y * inv_z3);
    (d_t, d_cov)
}

/// Pulls `dL/dΣ` (full symmetric gradient) back to the 7 raw SR-row parameters.
pub fn covariance_backward(parts: &CovarianceParts, d_cov: &Matrix3<f64>) -> [f64; 7] {
    let r = &parts.rotation;
    let g = 0.5 * (d_cov + d_cov.transpose());
    let mut out = [0.0; 7];
    for i in 0..3 {
        let col = r.column(i);
        // dΣ/d(s_i²) = r_i r_iᵀ and d(s_i²)/d(ls_i) = 2 s_i².
        out[i] = 2.0 * parts.scales_sq[i] * (col.transpose() * g * col)[(0, 0)];
    }
    let d_r = 2.0 * g * r * Matrix3::from_diagonal(&parts.scales_sq);
    let [w, x, y, z] = parts.quat;
    let dr_dw = Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0);
    let dr_dx = Matrix3::new(
        0.0,
        2.0 * y,
        2.0 * z,
        2.0 * y,
        -4.0 * x,
        -2.0 * w,
        2.0 * z,
        2.0 * w,
        -4.0 * x,
    );
    let dr_dy = Matrix3::new(
        -4.0 * y,
        2.0 * x,
        2.0 * w,
        2.0 * x,
        0.0,
        2.0 * z,
        -2.0 * w,
        2.0 * z,
        -4.0 * y,
    );
    let dr_dz = Matrix3::new(
        -4.0 * z,
        -2.0 * w,
        2.0 * x,
        2.0 * w,
        -4.0 * z,
        2.0 * y,
        2.0 * x,
        2.0 * y,
        0.0,
    );
    let d_qhat = [
        d_r.component_mul(&dr_dw).sum(),
        d_r.component_mul(&dr_dx).sum(),
        d_r.component_mul(&dr_dy).sum(),
        d_r.component_mul(&dr_dz).sum(),
    ];
    // q̂ = q/|q|: dL/dq = (I - q̂ q̂ᵀ) dL/dq̂ / |q|.
    let radial: f64 = (0..4).map(|k| d_qhat[k] * parts.quat[k]).sum();
    for k in 0..4 {
        out[3 + k] = (d_qhat[k] - radial * parts.quat[k]) / parts.quat_norm;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_cov(q: [f64; 4], scales: [f64; 3]) -> Matrix3<f64> {
        // Independent route: rotation from nalgebra's unit quaternion.
        let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[0], q[1], q[2], q[3],
        ));
        let r = uq.to_rotation_matrix().into_inner();
        let s = Matrix3::from_diagonal(&Vector3::from(scales));
        r * s * s.transpose() * r.transpose()
    }

    #[test]
    fn identity_rotation_gives_diagonal() {
        let row = [0.0, 2f32.ln(), 3f32.ln(), 1.0, 0.0, 0.0, 0.0];
        let cov = build_covariance(&row).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0));
        assert!((cov - expected).norm() < 1e-5);
    }

    #[test]
    fn quarter_turn_about_z_swaps_axes() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let row = [2f32.ln(), 0.0, 0.0, h as f32, 0.0, 0.0, h as f32];
        let cov = build_covariance(&row).unwrap();
        let oracle = dense_cov([h, 0.0, 0.0, h], [2.0, 1.0, 1.0]);
        assert!((cov - oracle).norm() < 1e-6);
        assert!((cov - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).norm() < 1e-6);
    }

    #[test]
    fn quaternion_scale_invariance() {
        let row = [0.1f32, -0.3, 0.2, 0.4, -0.2, 0.7, 0.1];
        let mut scaled = row;
        for v in &mut scaled[3..] {
            *v *= 8.0;
        }
        let a = build_covariance(&row).unwrap();
        let b = build_covariance(&scaled).unwrap();
        assert!((a - b).norm() < 1e-12);
        let q = [0.4, -0.2, 0.7, 0.1];
        let n = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let oracle = dense_cov(
            q.map(|v| v / n),
            [0.1f64.exp(), (-0.3f64).exp(), 0.2f64.exp()],
        );
        assert!((a - oracle).norm() < 1e-6);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(build_covariance(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    fn axis_camera(focal: f64) -> Camera {
        Camera::new(Matrix3::identity(), Vector3::zeros(), focal, focal, 32.0, 32.0, 64, 64).unwrap()
    }

    #[test]
    fn on_axis_projection() {
        let p = project_gaussian(&Vector3::new(0.0, 0.0, 2.0), &Matrix3::identity(), &axis_camera(100.0))
            .unwrap();
        // J = diag(f/z, f/z) in the first two columns.
        let expected = Matrix2::identity() * (2500.0 + 0.3);
        assert!((p.cov2d - expected).norm() < 1e-9);
        assert_eq!(p.mean2d, Vector2::new(32.0, 32.0));
    }

    #[test]
    fn near_plane_culls() {
        let cam = axis_camera(100.0);
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, 0.01), &Matrix3::identity(), &cam).is_none());
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, -1.0), &Matrix3::identity(), &cam).is_none());
    }

    #[test]
    fn focal_scales_offset_linearly() {
        let mu = Vector3::new(0.3, -0.1, 2.0);
        let a = project_gaussian(&mu, &Matrix3::identity(), &axis_camera(50.0)).unwrap();
        let b = project_gaussian(&mu, &Matrix3::identity(), &axis_camera(100.0)).unwrap();
        assert!(((b.mean2d.x - 32.0) - 2.0 * (a.mean2d.x - 32.0)).abs() < 1e-12);
    }

    #[test]
    fn covariance_backward_matches_differences() {
        let row = [0.1f32, -0.3, 0.2, 0.4, -0.2, 0.7, 0.1];
        let parts = covariance_parts(&row).unwrap();
        let g = Matrix3::new(0.3, -0.2, 0.5, -0.2, 1.1, 0.05, 0.5, 0.05, -0.7);
        let analytic = covariance_backward(&parts, &g);
        let f = |r: &[f64; 7]| {
            let raw: [f64; 4] = [r[3], r[4], r[5], r[6]];
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rot = quat_to_rotation(raw.map(|v| v / n));
            let s = Matrix3::from_diagonal(&Vector3::new(
                (2.0 * r[0]).exp(),
                (2.0 * r[1]).exp(),
                (2.0 * r[2]).exp(),
            ));
            (rot * s * rot.transpose()).component_mul(&g).sum()
        };
        let base: [f64; 7] = std::array::from_fn(|k| row[k] as f64);
        let h = 1e-6;
        for k in 0..7 {
            let mut p = base;
            let mut m = base;
            p[k] += h;
            m[k] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-6, "k={k}: {fd} vs {}", analytic[k]);
        }
    }
}
