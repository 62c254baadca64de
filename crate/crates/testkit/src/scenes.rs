//! Random scene generators for oracle comparisons.

use codesplat_core::{Camera, CodebookRows, Image, ModelState};
use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;

const C0: f64 = 0.282_094_791_773_878_14;

fn unit_quaternion(rng: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| (v / n) as f32);
        }
    }
}

/// Every row index in `0..rows` at least once, then uniform, shuffled.
fn assignment(n: usize, rows: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..n).map(|i| if i < rows { i as u32 } else { rng.random_range(0..rows as u32) }).collect();
    idx.shuffle(rng);
    idx
}

/// A general scene with `n` Gaussians in `[-1, 1]³` and a camera on a sphere
/// of radius 3–5 around the origin.
pub fn random_scene(rng: &mut impl Rng, n: usize, size: usize) -> (ModelState, Camera) {
    let degree = rng.random_range(0..=3usize);
    let dim = 3 * (degree + 1) * (degree + 1);
    let sh_count = rng.random_range(1..=n.max(1));
    let sr_count = rng.random_range(1..=n.max(1));
    let mut sh = CodebookRows::default();
    for _ in 0..sh_count {
        for k in 0..dim {
            let v = if k < 3 { rng.random_range(-1.5..1.5) } else { rng.random_range(-0.4..0.4) };
            sh.values.push(v);
        }
    }
    sh.parents = vec![None; sh_count];
    let mut sr = CodebookRows::default();
    for _ in 0..sr_count {
        for _ in 0..3 {
            sr.values.push(rng.random_range(0.02f64.ln()..0.3f64.ln()) as f32);
        }
        sr.values.extend(unit_quaternion(rng));
    }
    sr.parents = vec![None; sr_count];
    let positions = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let logits = (0..n)
        .map(|_| {
            let o: f64 = rng.random_range(0.05..0.995);
            (o / (1.0 - o)).ln() as f32
        })
        .collect();
    let state = ModelState::from_parts(
        degree,
        positions,
        logits,
        assignment(n, sh_count.min(n), rng),
        assignment(n, sr_count.min(n), rng),
        sh,
        sr,
    )
    .expect("valid random scene");
    let dir = loop {
        let v: Vector3<f64> = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let len: f64 = v.norm();
        if len > 0.2 && len <= 1.0 && v.z.abs() < 0.9 * len {
            break v / len;
        }
    };
    let eye = dir * rng.random_range(3.0..5.0);
    let focal = size as f64 * rng.random_range(0.7..1.5);
    let cam = Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0), focal, size, size).unwrap();
    (state, cam)
}

/// A scene on which the reconstruction loss is smooth in every parameter:
/// large splats covering the whole image with opacity 0.2–0.5, well separated
/// depths, positive colours at most about 0.5, and a ground truth in
/// `[0.7, 1]` so the L1 term never changes sign. `n` Gaussians share
/// `shared_rows` rows in each codebook.
pub fn smooth_scene(rng: &mut impl Rng, n: usize, size: usize, shared_rows: usize) -> (ModelState, Camera, Image) {
    let degree = rng.random_range(0..=3usize);
    let dim = 3 * (degree + 1) * (degree + 1);
    let mut sh = CodebookRows::default();
    for _ in 0..shared_rows {
        for k in 0..dim {
            let v = if k < 3 {
                (rng.random_range(0.15..0.4) - 0.5) / C0
            } else {
                rng.random_range(-0.05..0.05)
            };
            sh.values.push(v as f32);
        }
    }
    sh.parents = vec![None; shared_rows];
    let mut sr = CodebookRows::default();
    for _ in 0..shared_rows {
        for _ in 0..3 {
            sr.values.push(rng.random_range(4.0f64.ln()..7.0f64.ln()) as f32);
        }
        sr.values.extend(unit_quaternion(rng));
    }
    sr.parents = vec![None; shared_rows];
    let mut depths: Vec<f64> = (0..n).map(|k| 3.0 + 0.3 * k as f64 + rng.random_range(0.0..0.1)).collect();
    depths.shuffle(rng);
    let positions = depths
        .iter()
        .map(|&z| [rng.random_range(-0.3..0.3) as f32, rng.random_range(-0.3..0.3) as f32, z as f32])
        .collect();
    let logits = (0..n)
        .map(|_| {
            let o: f64 = rng.random_range(0.2..0.5);
            (o / (1.0 - o)).ln() as f32
        })
        .collect();
    let state = ModelState::from_parts(
        degree,
        positions,
        logits,
        assignment(n, shared_rows, rng),
        assignment(n, shared_rows, rng),
        sh,
        sr,
    )
    .expect("valid smooth scene");
    let f = size as f64;
    let cam = Camera::new(Matrix3::identity(), Vector3::zeros(), f, f, f / 2.0, f / 2.0, size, size).unwrap();
    let mut gt = Image::new(size, size);
    for v in gt.data_mut() {
        *v = rng.random_range(0.7..1.0);
    }
    (state, cam, gt)
}
