use codesplat_core::{Camera, Image, ModelState};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::scene::OracleScene;
use crate::sh::sh_color;

struct Splat {
    index: usize,
    depth: f64,
    mean: [f64; 2],
    inv: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
}

fn splat(scene: &OracleScene, i: usize, cam: &Camera) -> Option<Splat> {
    let opacity = 1.0 / (1.0 + (-scene.opacity_logits[i]).exp());
    if opacity < 1.0 / 255.0 {
        return None;
    }
    let sr = &scene.sr_rows[scene.g2sr[i]];
    let q = UnitQuaternion::try_new(Quaternion::new(sr[3], sr[4], sr[5], sr[6]), 0.0)?;
    let r: Matrix3<f64> = q.to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&Vector3::new(sr[0].exp(), sr[1].exp(), sr[2].exp()));
    let cov = r * s * s * r.transpose();
    let mu = Vector3::from(scene.positions[i]);
    let t = cam.rotation * mu + cam.translation;
    if t.z <= 0.01 {
        return None;
    }
    let j = Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * t.x / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * t.y / (t.z * t.z),
    );
    let cov2 = j * cam.rotation * cov * cam.rotation.transpose() * j.transpose() + Matrix2::identity() * 0.3;
    if cov2.determinant() <= 0.0 {
        return None;
    }
    let inv = cov2.try_inverse()?;
    let eye = -cam.rotation.transpose() * cam.translation;
    let dir = (mu - eye).normalize();
    let color = sh_color(&scene.sh_rows[scene.g2sh[i]], scene.sh_degree, [dir.x, dir.y, dir.z]).map(|c| c.max(0.0));
    Some(Splat {
        index: i,
        depth: t.z,
        mean: [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy],
        inv,
        opacity,
        color,
    })
}

/// Per-pixel front-to-back compositing over every Gaussian, no tiling.
pub fn naive_render_scene(scene: &OracleScene, cam: &Camera) -> Image {
    let mut splats: Vec<Splat> = (0..scene.len()).filter_map(|i| splat(scene, i, cam)).collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let mut img = Image::new(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            for s in &splats {
                let d = nalgebra::Vector2::new(p[0] - s.mean[0], p[1] - s.mean[1]);
                let alpha = (s.opacity * (-0.5 * d.dot(&(s.inv * d))).exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                if t * (1.0 - alpha) < 1e-4 {
                    break;
                }
                for c in 0..3 {
                    rgb[c] += t * alpha * s.color[c];
                }
                t *= 1.0 - alpha;
            }
            img.set_pixel(x, y, rgb);
        }
    }
    img
}

pub fn naive_render(state: &ModelState, cam: &Camera) -> Image {
    naive_render_scene(&OracleScene::from_state(state), cam)
}
