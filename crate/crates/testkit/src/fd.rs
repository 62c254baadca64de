use codesplat_core::{Camera, Image, ModelState};

use crate::metrics::oracle_recon_loss;
use crate::render::naive_render_scene;
use crate::scene::OracleScene;

/// Central-difference gradients of the reconstruction loss, laid out like the
/// engine's gradients: codebooks are `capacity × dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FdGradients {
    pub positions: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    pub sr: Vec<f64>,
}

fn central(scene: &mut OracleScene, h: f64, f: &dyn Fn(&OracleScene) -> f64, get: impl Fn(&mut OracleScene) -> &mut f64) -> f64 {
    let v0 = *get(scene);
    *get(scene) = v0 + h;
    let up = f(scene);
    *get(scene) = v0 - h;
    let down = f(scene);
    *get(scene) = v0;
    (up - down) / (2.0 * h)
}

/// Perturbs every scalar parameter of a double-precision copy of `state` by
/// `±h` and differences the loss of the naive render against `gt`.
pub fn fd_gradient(state: &ModelState, cam: &Camera, gt: &Image, h: f64, lambda_ssim: f64) -> FdGradients {
    let mut scene = OracleScene::from_state(state);
    let loss = |s: &OracleScene| oracle_recon_loss(&naive_render_scene(s, cam), gt, lambda_ssim);
    let n = scene.len();
    let mut out = FdGradients {
        positions: vec![[0.0; 3]; n],
        opacity_logits: vec![0.0; n],
        sh: Vec::new(),
        sr: Vec::new(),
    };
    for i in 0..n {
        for a in 0..3 {
            out.positions[i][a] = central(&mut scene, h, &loss, |s| &mut s.positions[i][a]);
        }
        out.opacity_logits[i] = central(&mut scene, h, &loss, |s| &mut s.opacity_logits[i]);
    }
    let used = |index: &[usize], r: usize| index.contains(&r);
    for r in 0..scene.sh_rows.len() {
        for k in 0..scene.sh_rows[r].len() {
            let g = if used(&scene.g2sh, r) {
                central(&mut scene, h, &loss, |s| &mut s.sh_rows[r][k])
            } else {
                0.0
            };
            out.sh.push(g);
        }
    }
    for r in 0..scene.sr_rows.len() {
        for k in 0..7 {
            let g = if used(&scene.g2sr, r) {
                central(&mut scene, h, &loss, |s| &mut s.sr_rows[r][k])
            } else {
                0.0
            };
            out.sr.push(g);
        }
    }
    out
}
