//! Synthetic ground-truth scenes.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::model::{sh_dim, Aabb, CodebookRows, ModelState};
use crate::render::{self, sh::C0};
use crate::ChainRng;

use super::manifest::{ManifestView, SceneManifest, Split};
use super::png::write_png;

/// Half extent of the cube holding synthetic Gaussian centres.
pub const SYNTH_HALF_EXTENT: f64 = 1.0;
const RING_RADIUS: f64 = 3.5;
const RING_HEIGHT: f64 = 1.0;
/// Focal length as a multiple of the image size.
const FOCAL_SCALE: f64 = 0.9;

pub fn synth_bounds() -> Aabb {
    Aabb::cube(SYNTH_HALF_EXTENT)
}

/// A generated scene: manifest plus float ground-truth images in view order.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub manifest: SceneManifest,
    pub images: Vec<Image>,
}

/// `num_views` cameras evenly spaced on a ring above the box, all looking at its centre.
pub fn ring_cameras(num_views: usize, image_size: usize) -> Result<Vec<Camera>> {
    (0..num_views)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / num_views as f64;
            let eye = Vector3::new(RING_RADIUS * theta.cos(), RING_RADIUS * theta.sin(), RING_HEIGHT);
            Camera::look_at(
                eye,
                Vector3::zeros(),
                Vector3::new(0.0, 0.0, 1.0),
                FOCAL_SCALE * image_size as f64,
                image_size,
                image_size,
            )
        })
        .collect()
}

/// Ground-truth state whose Gaussians share exactly `shared_rows` rows in each
/// codebook (Gaussian `i` uses row `i mod shared_rows`), rendered from a ring of
/// `num_views` cameras. All views are marked `train`.
pub fn synth_scene(
    num_gaussians: usize,
    num_views: usize,
    image_size: usize,
    sh_degree: usize,
    shared_rows: usize,
    seed: u64,
) -> Result<(ModelState, SynthScene)> {
    if shared_rows == 0 || shared_rows > num_gaussians {
        return Err(Error::invalid(format!(
            "shared_rows must lie in 1..={num_gaussians}, got {shared_rows}"
        )));
    }
    if num_views == 0 || image_size == 0 {
        return Err(Error::invalid("synthetic scene needs at least one view and pixel"));
    }
    let mut rng = ChainRng::seed_from_u64(seed);
    let dim = sh_dim(sh_degree);
    let mut sh = CodebookRows::default();
    let mut sr = CodebookRows::default();
    for _ in 0..shared_rows {
        for c in 0..dim {
            let v = if c < 3 {
                (rng.random_range(0.15..0.85) - 0.5) / C0
            } else {
                rng.random_range(-0.05..0.05)
            };
            sh.values.push(v as f32);
        }
        for _ in 0..3 {
            sr.values.push(rng.random_range(0.1f64.ln()..0.25f64.ln()) as f32);
        }
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        sr.values.extend(q.map(|v| (v / norm) as f32));
    }
    sh.parents = vec![None; shared_rows];
    sr.parents = vec![None; shared_rows];
    let mut positions = Vec::with_capacity(num_gaussians);
    let mut logits = Vec::with_capacity(num_gaussians);
    for _ in 0..num_gaussians {
        positions.push(std::array::from_fn(|_| {
            rng.random_range(-SYNTH_HALF_EXTENT..SYNTH_HALF_EXTENT) as f32
        }));
        let o: f64 = rng.random_range(0.6..0.95);
        logits.push((o / (1.0 - o)).ln() as f32);
    }
    let index: Vec<u32> = (0..num_gaussians).map(|i| (i % shared_rows) as u32).collect();
    let mut state = ModelState::from_parts(sh_degree, positions, logits, index.clone(), index, sh, sr)?;
    state.rng_seed = seed;
    let cameras = ring_cameras(num_views, image_size)?;
    let images: Vec<Image> = cameras.iter().map(|c| render::render(&state, c)).collect();
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(k, camera)| ManifestView {
            name: format!("view{k:03}"),
            image: PathBuf::from(format!("view{k:03}.png")),
            camera,
            split: Split::Train,
        })
        .collect();
    Ok((
        state,
        SynthScene {
            manifest: SceneManifest { views },
            images,
        },
    ))
}

/// Writes `manifest.txt` and one PNG per view into `dir`. Returns the manifest path.
pub fn write_scene(scene: &SynthScene, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (view, image) in scene.manifest.views.iter().zip(&scene.images) {
        write_png(image, dir.join(&view.image))?;
    }
    let path = dir.join("manifest.txt");
    scene.manifest.save(&path)?;
    Ok(path)
}
