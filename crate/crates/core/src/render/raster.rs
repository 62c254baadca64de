//! Tiled front-to-back rasterizer and its adjoint.

use std::hash::{Hash, Hasher};

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use super::geometry::{self, CovarianceParts, Projection};
use super::sh;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::model::{sh_coeff_count, CodebookKind, ModelState, SR_DIM};

pub const TILE_SIZE: usize = 16;
/// Per-splat alpha ceiling.
pub const ALPHA_MAX: f64 = 0.99;
/// Splats whose alpha at a pixel falls below this are skipped there.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops before transmittance would drop below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Half-open tile rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Clone, Debug)]
pub struct ProjectedSplat {
    pub gaussian: u32,
    pub mean2d: [f64; 2],
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub tiles: TileRect,
}

/// Forward image plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct RenderArtifacts {
    pub image: Image,
    pub final_transmittance: Vec<f64>,
    /// Visible splats in Gaussian order.
    pub splats: Vec<ProjectedSplat>,
    /// Per tile, indices into `splats` sorted by ascending depth (ties by Gaussian index).
    pub tile_lists: Vec<Vec<u32>>,
    /// Per pixel, the number of splats composited.
    pub contrib_counts: Vec<u32>,
    /// Per pixel, the prefix of its tile list that was traversed.
    pub list_ends: Vec<u32>,
    tiles_x: usize,
    fingerprint: u64,
}

/// Gradients of a scalar loss. Codebook gradients are laid out like the codebook
/// storage (`capacity × dim`); freed rows stay zero. A shared row receives the
/// sum of contributions from every Gaussian mapped to it.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub positions: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    pub sr: Vec<f64>,
    pub sh_dim: usize,
}

impl GradientSet {
    pub fn zeros(state: &ModelState) -> Self {
        Self {
            positions: vec![[0.0; 3]; state.len()],
            opacity_logits: vec![0.0; state.len()],
            sh: vec![0.0; state.sh().values().len()],
            sr: vec![0.0; state.sr().values().len()],
            sh_dim: state.sh().dim(),
        }
    }

    pub fn codebook(&self, which: CodebookKind) -> &[f64] {
        match which {
            CodebookKind::Sh => &self.sh,
            CodebookKind::Sr => &self.sr,
        }
    }

    pub fn row(&self, which: CodebookKind, row: u32) -> &[f64] {
        let dim = match which {
            CodebookKind::Sh => self.sh_dim,
            CodebookKind::Sr => SR_DIM,
        };
        let r = row as usize;
        &self.codebook(which)[r * dim..(r + 1) * dim]
    }

    pub fn all_finite(&self) -> bool {
        self.positions.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| v.is_finite())
            && self.sh.iter().all(|v| v.is_finite())
            && self.sr.iter().all(|v| v.is_finite())
    }

    /// Accumulates `other` (same layout) into `self`.
    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.positions.iter_mut().zip(&other.positions) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.opacity_logits.iter_mut().zip(&other.opacity_logits) {
            *a += b;
        }
        for (a, b) in self.sh.iter_mut().zip(&other.sh) {
            *a += b;
        }
        for (a, b) in self.sr.iter_mut().zip(&other.sr) {
            *a += b;
        }
    }
}

struct Prepared {
    parts: CovarianceParts,
    proj: Projection,
    view_dir: [f64; 3],
    view_len: f64,
    color_raw: [f64; 3],
    opacity: f64,
}

fn prepare(state: &ModelState, i: usize, cam: &Camera, center: &Vector3<f64>) -> Option<Prepared> {
    let g = state.gaussians();
    let opacity = g.opacity(i);
    if !(opacity >= ALPHA_MIN) {
        return None;
    }
    let (sh_row, sr_row) = state.lookup(i).ok()?;
    let parts = geometry::covariance_parts(sr_row).ok()?;
    let p = g.positions()[i];
    let mu = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
    let proj = geometry::project_gaussian(&mu, &parts.cov, cam)?;
    let v = mu - center;
    let view_len = v.norm();
    if !(view_len > 0.0) {
        return None;
    }
    let view_dir = [v.x / view_len, v.y / view_len, v.z / view_len];
    let color_raw = sh::eval_unclamped(sh_row, view_dir, state.sh_degree());
    Some(Prepared {
        parts,
        proj,
        view_dir,
        view_len,
        color_raw,
        opacity,
    })
}

fn tile_rect(prep: &Prepared, cam: &Camera) -> Option<TileRect> {
    // Outside the ellipse q <= k², alpha = o·exp(-q/2) < 1/255, so nothing beyond
    // the box can contribute. Never narrower than 3σ.
    let k = (2.0 * (prep.opacity / ALPHA_MIN).ln()).max(0.0).sqrt().max(3.0) * 1.0001;
    let rx = k * prep.proj.cov2d[(0, 0)].sqrt() + 1e-3;
    let ry = k * prep.proj.cov2d[(1, 1)].sqrt() + 1e-3;
    let m = prep.proj.mean2d;
    let span = |lo: f64, hi: f64, len: usize| -> Option<(usize, usize)> {
        let a = lo.ceil().max(0.0);
        let b = hi.floor().min(len as f64 - 1.0);
        (a <= b).then(|| (a as usize, b as usize))
    };
    let (px0, px1) = span(m.x - rx - 0.5, m.x + rx - 0.5, cam.width)?;
    let (py0, py1) = span(m.y - ry - 0.5, m.y + ry - 0.5, cam.height)?;
    Some(TileRect {
        x0: px0 / TILE_SIZE,
        y0: py0 / TILE_SIZE,
        x1: px1 / TILE_SIZE + 1,
        y1: py1 / TILE_SIZE + 1,
    })
}

fn fingerprint(state: &ModelState, cam: &Camera) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let g = state.gaussians();
    state.len().hash(&mut h);
    for p in g.positions() {
        p.map(f32::to_bits).hash(&mut h);
    }
    for v in g.opacity_logits() {
        v.to_bits().hash(&mut h);
    }
    g.g2sh().hash(&mut h);
    g.g2sr().hash(&mut h);
    for v in state.sh().values().iter().chain(state.sr().values()) {
        v.to_bits().hash(&mut h);
    }
    for v in cam.rotation.iter().chain(cam.translation.iter()) {
        v.to_bits().hash(&mut h);
    }
    for v in [cam.fx, cam.fy, cam.cx, cam.cy] {
        v.to_bits().hash(&mut h);
    }
    (cam.width, cam.height).hash(&mut h);
    h.finish()
}

/// One composited splat at one pixel.
#[derive(Clone, Copy)]
struct Hit {
    list_pos: usize,
    alpha: f64,
    gauss: f64,
    transmittance: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

/// Front-to-back traversal of one pixel's splat list. Calls `visit` for every
/// contributing splat; returns `(rgb, final transmittance, contributors, list end)`.
#[inline]
fn composite_pixel(
    list: &[u32],
    splats: &[ProjectedSplat],
    px: f64,
    py: f64,
    mut visit: impl FnMut(Hit),
) -> ([f64; 3], f64, u32, u32) {
    let mut rgb = [0.0; 3];
    let mut t = 1.0;
    let mut count = 0;
    let mut end = 0;
    for (pos, &s) in list.iter().enumerate() {
        let sp = &splats[s as usize];
        let dx = px - sp.mean2d[0];
        let dy = py - sp.mean2d[1];
        let [a, b, c] = sp.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        let gauss = power.exp();
        let raw = sp.opacity * gauss;
        let clamped = raw > ALPHA_MAX;
        let alpha = if clamped { ALPHA_MAX } else { raw };
        if alpha < ALPHA_MIN {
            continue;
        }
        let next_t = t * (1.0 - alpha);
        if next_t < TRANSMITTANCE_MIN {
            end = pos as u32 + 1;
            break;
        }
        let w = alpha * t;
        for k in 0..3 {
            rgb[k] += w * sp.color[k];
        }
        visit(Hit {
            list_pos: pos,
            alpha,
            gauss,
            transmittance: t,
            clamped,
            dx,
            dy,
        });
        t = next_t;
        count += 1;
        end = pos as u32 + 1;
    }
    (rgb, t, count, end)
}

fn tile_pixels(tile: usize, tiles_x: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let xs = tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(cam.width);
    let ys = ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(cam.height);
    ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
}

/// Projects every Gaussian and builds depth-sorted per-tile lists.
fn project_all(state: &ModelState, cam: &Camera) -> (Vec<ProjectedSplat>, Vec<Vec<u32>>, usize) {
    let center = cam.center();
    let splats: Vec<ProjectedSplat> = (0..state.len())
        .into_par_iter()
        .filter_map(|i| {
            let prep = prepare(state, i, cam, &center)?;
            let tiles = tile_rect(&prep, cam)?;
            let conic = prep.proj.conic;
            Some(ProjectedSplat {
                gaussian: i as u32,
                mean2d: [prep.proj.mean2d.x, prep.proj.mean2d.y],
                conic: [conic[(0, 0)], conic[(0, 1)], conic[(1, 1)]],
                depth: prep.proj.cam_point.z,
                color: prep.color_raw.map(|c| c.max(0.0)),
                opacity: prep.opacity,
                tiles,
            })
        })
        .collect();
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
        sa.depth.total_cmp(&sb.depth).then(sa.gaussian.cmp(&sb.gaussian))
    });
    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    for &s in &order {
        let r = splats[s as usize].tiles;
        for ty in r.y0..r.y1 {
            for tx in r.x0..r.x1 {
                tile_lists[ty * tiles_x + tx].push(s);
            }
        }
    }
    (splats, tile_lists, tiles_x)
}

/// Renders `state` through `cam`. Pixels are composited front-to-back over
/// depth-sorted splats on a black background.
pub fn rasterize_forward(state: &ModelState, cam: &Camera) -> RenderArtifacts {
    let (splats, tile_lists, tiles_x) = project_all(state, cam);
    let per_tile: Vec<Vec<(usize, [f64; 3], f64, u32, u32)>> = (0..tile_lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &tile_lists[tile];
            tile_pixels(tile, tiles_x, cam)
                .map(|(x, y)| {
                    let (rgb, t, count, end) =
                        composite_pixel(list, &splats, x as f64 + 0.5, y as f64 + 0.5, |_| {});
                    (y * cam.width + x, rgb, t, count, end)
                })
                .collect()
        })
        .collect();
    let npix = cam.width * cam.height;
    let mut image = Image::new(cam.width, cam.height);
    let mut final_transmittance = vec![1.0; npix];
    let mut contrib_counts = vec![0; npix];
    let mut list_ends = vec![0; npix];
    for (pix, rgb, t, count, end) in per_tile.into_iter().flatten() {
        image.data_mut()[pix * 3..pix * 3 + 3].copy_from_slice(&rgb);
        final_transmittance[pix] = t;
        contrib_counts[pix] = count;
        list_ends[pix] = end;
    }
    RenderArtifacts {
        image,
        final_transmittance,
        splats,
        tile_lists,
        contrib_counts,
        list_ends,
        tiles_x,
        fingerprint: fingerprint(state, cam),
    }
}

/// Forward render returning only the image.
pub fn render(state: &ModelState, cam: &Camera) -> Image {
    rasterize_forward(state, cam).image
}

/// Screen-space gradient of one splat.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    /// Full symmetric-matrix gradient entries `(g00, g01, g11)`.
    conic: [f64; 3],
    color: [f64; 3],
    opacity: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

fn tile_backward(
    tile: usize,
    art: &RenderArtifacts,
    cam: &Camera,
    dl_dimage: &[f64],
) -> Vec<SplatGrad> {
    let list = &art.tile_lists[tile];
    let mut grads = vec![SplatGrad::default(); list.len()];
    let mut hits: Vec<Hit> = Vec::new();
    for (x, y) in tile_pixels(tile, art.tiles_x, cam) {
        let pix = y * cam.width + x;
        let end = art.list_ends[pix] as usize;
        let d_pix = &dl_dimage[pix * 3..pix * 3 + 3];
        if end == 0 || d_pix.iter().all(|&v| v == 0.0) {
            continue;
        }
        hits.clear();
        composite_pixel(&list[..end], &art.splats, x as f64 + 0.5, y as f64 + 0.5, |h| {
            hits.push(h)
        });
        // behind[c] = Σ_{j after k} α_j c_j T_j
        let mut behind = [0.0; 3];
        for h in hits.iter().rev() {
            let sp = &art.splats[list[h.list_pos] as usize];
            let g = &mut grads[h.list_pos];
            let w = h.alpha * h.transmittance;
            let mut d_alpha = 0.0;
            for c in 0..3 {
                g.color[c] += d_pix[c] * w;
                d_alpha += d_pix[c] * (sp.color[c] * h.transmittance - behind[c] / (1.0 - h.alpha));
                behind[c] += w * sp.color[c];
            }
            if h.clamped {
                continue;
            }
            g.opacity += d_alpha * h.gauss;
            // alpha = o·exp(power), power = -q/2.
            let d_power = d_alpha * sp.opacity * h.gauss;
            let d_q = -0.5 * d_power;
            g.conic[0] += d_q * h.dx * h.dx;
            g.conic[1] += d_q * h.dx * h.dy;
            g.conic[2] += d_q * h.dy * h.dy;
            let [a, b, c] = sp.conic;
            // d = pixel - mean, dq/dd = 2 M d.
            g.mean[0] -= d_q * 2.0 * (a * h.dx + b * h.dy);
            g.mean[1] -= d_q * 2.0 * (b * h.dx + c * h.dy);
        }
    }
    grads
}

/// Parameter gradients of one Gaussian: position, opacity logit, SH row, SR row.
struct GaussianGrad {
    position: [f64; 3],
    logit: f64,
    sh: Vec<f64>,
    sr: [f64; 7],
}

fn gaussian_backward(
    state: &ModelState,
    i: usize,
    cam: &Camera,
    center: &Vector3<f64>,
    sg: &SplatGrad,
) -> GaussianGrad {
    let prep = prepare(state, i, cam, center).expect("visible splat must re-project");
    let degree = state.sh_degree();
    let ncoef = sh_coeff_count(degree);

    let logit = sg.opacity * prep.opacity * (1.0 - prep.opacity);

    // Colour: clamped channels pass no gradient.
    let d_color: [f64; 3] =
        std::array::from_fn(|c| if prep.color_raw[c] > 0.0 { sg.color[c] } else { 0.0 });
    let mut basis = [0.0; 16];
    sh::basis(prep.view_dir, degree, &mut basis);
    let mut sh_grad = vec![0.0; 3 * ncoef];
    for k in 0..ncoef {
        for c in 0..3 {
            sh_grad[k * 3 + c] = basis[k] * d_color[c];
        }
    }
    let mut d_position = Vector3::zeros();
    if degree > 0 {
        let (sh_row, _) = state.lookup(i).expect("index in range");
        let mut bgrad = [[0.0; 3]; 16];
        sh::basis_grad(prep.view_dir, degree, &mut bgrad);
        let mut d_dir = Vector3::zeros();
        for k in 1..ncoef {
            let s: f64 = (0..3).map(|c| d_color[c] * sh_row[k * 3 + c] as f64).sum();
            d_dir += Vector3::from(bgrad[k]) * s;
        }
        let dir = Vector3::from(prep.view_dir);
        d_position += (d_dir - dir * dir.dot(&d_dir)) / prep.view_len;
    }

    let d_conic = Matrix2::new(sg.conic[0], sg.conic[1], sg.conic[1], sg.conic[2]);
    let (d_t, d_cov) =
        geometry::projection_backward(&prep.proj, cam, Vector2::new(sg.mean[0], sg.mean[1]), d_conic);
    d_position += cam.rotation.transpose() * d_t;
    let sr = geometry::covariance_backward(&prep.parts, &d_cov);
    GaussianGrad {
        position: [d_position.x, d_position.y, d_position.z],
        logit,
        sh: sh_grad,
        sr,
    }
}

/// Gradients of a loss with respect to every continuous parameter, given
/// `dl_dimage` (same layout as the rendered image).
pub fn rasterize_backward(
    state: &ModelState,
    cam: &Camera,
    artifacts: &RenderArtifacts,
    dl_dimage: &[f64],
) -> Result<GradientSet> {
    if artifacts.fingerprint != fingerprint(state, cam) {
        return Err(Error::invalid(
            "render artifacts were produced from a different state or camera",
        ));
    }
    if dl_dimage.len() != cam.width * cam.height * 3 {
        return Err(Error::invalid("image gradient has the wrong length"));
    }
    let per_tile: Vec<Vec<SplatGrad>> = (0..artifacts.tile_lists.len())
        .into_par_iter()
        .map(|tile| tile_backward(tile, artifacts, cam, dl_dimage))
        .collect();
    // Fixed tile order keeps the reduction bit-identical across worker counts.
    let mut splat_grads = vec![SplatGrad::default(); artifacts.splats.len()];
    for (tile, grads) in per_tile.iter().enumerate() {
        for (pos, g) in grads.iter().enumerate() {
            splat_grads[artifacts.tile_lists[tile][pos] as usize].add(g);
        }
    }
    let center = cam.center();
    let per_gaussian: Vec<GaussianGrad> = artifacts
        .splats
        .par_iter()
        .zip(splat_grads.par_iter())
        .map(|(sp, sg)| gaussian_backward(state, sp.gaussian as usize, cam, &center, sg))
        .collect();
    let mut out = GradientSet::zeros(state);
    let sh_dim = out.sh_dim;
    for (sp, gg) in artifacts.splats.iter().zip(&per_gaussian) {
        let i = sp.gaussian as usize;
        out.positions[i] = gg.position;
        out.opacity_logits[i] = gg.logit;
        let r = state.row_of(i, CodebookKind::Sh) as usize;
        for (dst, src) in out.sh[r * sh_dim..(r + 1) * sh_dim].iter_mut().zip(&gg.sh) {
            *dst += src;
        }
        let r = state.row_of(i, CodebookKind::Sr) as usize;
        for (dst, src) in out.sr[r * SR_DIM..(r + 1) * SR_DIM].iter_mut().zip(&gg.sr) {
            *dst += src;
        }
    }
    Ok(out)
}
