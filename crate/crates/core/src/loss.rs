//! Reconstruction loss, codebook-penalized total loss and image metrics.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) that is truncated at the image
//! border and renormalized, so constant images have exactly constant local
//! means and zero local variance everywhere.

use crate::error::Result;
use crate::frame::Image;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
pub const DEFAULT_LAMBDA_SSIM: f64 = 0.2;
pub const DEFAULT_PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconTerms {
    pub l1: f64,
    pub ssim: f64,
    pub recon: f64,
}

/// All loss terms for one evaluation of the posterior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub ssim: f64,
    pub recon: f64,
    pub codebook_penalty: f64,
    pub total: f64,
    pub log_posterior_unnorm: f64,
}

fn window() -> [f64; 2 * SSIM_RADIUS + 1] {
    std::array::from_fn(|k| {
        let d = k as f64 - SSIM_RADIUS as f64;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    })
}

/// Per-position normalizer of the truncated window along one axis.
fn axis_norms(len: usize, taps: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    (0..len as isize)
        .map(|p| {
            (-r..=r)
                .filter(|&o| (0..len as isize).contains(&(p + o)))
                .map(|o| taps[(o + r) as usize])
                .sum()
        })
        .collect()
}

struct Blur {
    width: usize,
    height: usize,
    taps: [f64; 2 * SSIM_RADIUS + 1],
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
}

impl Blur {
    fn new(width: usize, height: usize) -> Self {
        let taps = window();
        Self {
            width,
            height,
            norm_x: axis_norms(width, &taps),
            norm_y: axis_norms(height, &taps),
            taps,
        }
    }

    /// Unnormalized truncated correlation with the (symmetric) window.
    fn correlate(&self, plane: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let r = SSIM_RADIUS as isize;
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for o in -r..=r {
                    let xx = x as isize + o;
                    if xx >= 0 && (xx as usize) < w {
                        acc += self.taps[(o + r) as usize] * plane[y * w + xx as usize];
                    }
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for o in -r..=r {
                    let yy = y as isize + o;
                    if yy >= 0 && (yy as usize) < h {
                        acc += self.taps[(o + r) as usize] * tmp[yy as usize * w + x];
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    fn norm(&self, i: usize) -> f64 {
        self.norm_x[i % self.width] * self.norm_y[i / self.width]
    }

    /// Local weighted mean.
    fn apply(&self, plane: &[f64]) -> Vec<f64> {
        let mut out = self.correlate(plane);
        for (i, v) in out.iter_mut().enumerate() {
            *v /= self.norm(i);
        }
        out
    }

    /// Adjoint of [`Blur::apply`].
    fn apply_adjoint(&self, plane: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = plane.iter().enumerate().map(|(i, v)| v / self.norm(i)).collect();
        self.correlate(&scaled)
    }
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over pixels and channels, optionally with its gradient with
/// respect to `x` (interleaved layout).
fn ssim_impl(x: &Image, y: &Image, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (w, h) = (x.width(), x.height());
    let npix = w * h;
    let count = (npix * 3) as f64;
    let blur = Blur::new(w, h);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; npix * 3]);
    for c in 0..3 {
        let xs = channel(x, c);
        let ys = channel(y, c);
        let mu_x = blur.apply(&xs);
        let mu_y = blur.apply(&ys);
        let sq = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
        let m_xx = blur.apply(&sq(&xs, &xs));
        let m_yy = blur.apply(&sq(&ys, &ys));
        let m_xy = blur.apply(&sq(&xs, &ys));
        let mut d_mu = vec![0.0; npix];
        let mut d_mxx = vec![0.0; npix];
        let mut d_mxy = vec![0.0; npix];
        for i in 0..npix {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = m_xx[i] - mx * mx;
            let syy = m_yy[i] - my * my;
            let sxy = m_xy[i] - mx * my;
            let l_num = 2.0 * mx * my + SSIM_C1;
            let l_den = mx * mx + my * my + SSIM_C1;
            let cs_num = 2.0 * sxy + SSIM_C2;
            let cs_den = sxx + syy + SSIM_C2;
            let l = l_num / l_den;
            let cs = cs_num / cs_den;
            total += l * cs;
            if want_grad {
                // S(μx, σx², σxy) partials, then chain through σx² = E[x²] - μx², σxy = E[xy] - μxμy.
                let a = cs * 2.0 * (my - l * mx) / l_den;
                let b = -l * cs / cs_den;
                let cc = 2.0 * l / cs_den;
                d_mu[i] = a - 2.0 * mx * b - my * cc;
                d_mxx[i] = b;
                d_mxy[i] = cc;
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = blur.apply_adjoint(&d_mu);
            let t_xx = blur.apply_adjoint(&d_mxx);
            let t_xy = blur.apply_adjoint(&d_mxy);
            for i in 0..npix {
                g[i * 3 + c] = (t_mu[i] + 2.0 * xs[i] * t_xx[i] + ys[i] * t_xy[i]) / count;
            }
        }
    }
    (total / count, grad)
}

/// Mean SSIM of `x` against `y`.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    x.check_same_shape(y)?;
    Ok(ssim_impl(x, y, false).0)
}

fn l1_mean(x: &Image, y: &Image) -> f64 {
    let n = x.data().len().max(1) as f64;
    x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
}

/// `(1 - λ) L1 + λ (1 - SSIM)`.
pub fn recon_loss(rendered: &Image, ground_truth: &Image, lambda_ssim: f64) -> Result<ReconTerms> {
    rendered.check_same_shape(ground_truth)?;
    let l1 = l1_mean(rendered, ground_truth);
    let ssim = ssim_impl(rendered, ground_truth, false).0;
    Ok(ReconTerms {
        l1,
        ssim,
        recon: (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim),
    })
}

/// Reconstruction loss and its gradient with respect to the rendered image.
pub fn recon_loss_with_grad(
    rendered: &Image,
    ground_truth: &Image,
    lambda_ssim: f64,
) -> Result<(ReconTerms, Vec<f64>)> {
    rendered.check_same_shape(ground_truth)?;
    let l1 = l1_mean(rendered, ground_truth);
    let n = rendered.data().len().max(1) as f64;
    let (ssim, ssim_grad) = if lambda_ssim != 0.0 {
        let (s, g) = ssim_impl(rendered, ground_truth, true);
        (s, g)
    } else {
        (ssim_impl(rendered, ground_truth, false).0, None)
    };
    let mut grad: Vec<f64> = rendered
        .data()
        .iter()
        .zip(ground_truth.data())
        .map(|(a, b)| (1.0 - lambda_ssim) * sign(a - b) / n)
        .collect();
    if let Some(sg) = ssim_grad {
        for (g, s) in grad.iter_mut().zip(sg) {
            *g -= lambda_ssim * s;
        }
    }
    let terms = ReconTerms {
        l1,
        ssim,
        recon: (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim),
    };
    Ok((terms, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `L = L_recon + λ_sr |SR| + λ_sh |SH|`; the unnormalized log posterior is `-L`.
pub fn total_loss(
    recon: ReconTerms,
    live_sh: usize,
    live_sr: usize,
    lambda_sh: f64,
    lambda_sr: f64,
) -> LossTerms {
    let codebook_penalty = lambda_sr * live_sr as f64 + lambda_sh * live_sh as f64;
    let total = recon.recon + codebook_penalty;
    LossTerms {
        l1: recon.l1,
        ssim: recon.ssim,
        recon: recon.recon,
        codebook_penalty,
        total,
        log_posterior_unnorm: -total,
    }
}

pub fn mse(rendered: &Image, ground_truth: &Image) -> Result<f64> {
    rendered.check_same_shape(ground_truth)?;
    let n = rendered.data().len().max(1) as f64;
    Ok(rendered
        .data()
        .iter()
        .zip(ground_truth.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio for unit peak; a zero error reports `cap`.
pub fn psnr_with_cap(rendered: &Image, ground_truth: &Image, cap: f64) -> Result<f64> {
    let m = mse(rendered, ground_truth)?;
    Ok(if m == 0.0 { cap } else { -10.0 * m.log10() })
}

pub fn psnr(rendered: &Image, ground_truth: &Image) -> Result<f64> {
    psnr_with_cap(rendered, ground_truth, DEFAULT_PSNR_CAP)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = random_image(20, 13, 1);
        let t = recon_loss(&a, &a, 0.2).unwrap();
        assert_eq!(t.l1, 0.0);
        assert!((t.ssim - 1.0).abs() < 1e-12);
        assert!(t.recon.abs() < 1e-12);
    }

    #[test]
    fn constant_images_hit_luminance_closed_form() {
        let a = Image::filled(16, 16, [0.5; 3]);
        let b = Image::filled(16, 16, [0.25; 3]);
        let expected = (2.0 * 0.5 * 0.25 + SSIM_C1) / (0.25 + 0.0625 + SSIM_C1);
        let s = ssim(&a, &b).unwrap();
        assert!((s - expected).abs() < 1e-9, "{s} vs {expected}");
        assert!((s - 0.8001).abs() < 1e-4);
    }

    #[test]
    fn lambda_zero_is_l1() {
        let a = random_image(9, 7, 2);
        let b = random_image(9, 7, 3);
        let t = recon_loss(&a, &b, 0.0).unwrap();
        assert_eq!(t.recon, t.l1);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Image::new(4, 4);
        let b = Image::new(4, 5);
        assert!(recon_loss(&a, &b, 0.2).is_err());
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn recon_gradient_matches_differences() {
        let a = random_image(14, 12, 4);
        let b = random_image(14, 12, 5);
        let (t, g) = recon_loss_with_grad(&a, &b, 0.2).unwrap();
        assert_eq!(t, recon_loss(&a, &b, 0.2).unwrap());
        let h = 1e-6;
        for idx in [0usize, 7, 100, 251, 503] {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data_mut()[idx] += h;
            m.data_mut()[idx] -= h;
            let fd = (recon_loss(&p, &b, 0.2).unwrap().recon - recon_loss(&m, &b, 0.2).unwrap().recon)
                / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-8 * (1.0 + fd.abs()), "{idx}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        let r = ReconTerms { l1: 0.1, ssim: 1.0, recon: 0.1 };
        let t = total_loss(r, 200, 100, 2.3, 3.0);
        assert!((t.total - 760.1).abs() < 1e-9);
        assert_eq!(t.log_posterior_unnorm, -t.total);
        assert_eq!(t.total, t.recon + t.codebook_penalty);
        assert_eq!(total_loss(r, 200, 100, 0.0, 0.0).total, 0.1);
        let fewer = total_loss(r, 199, 100, 2.3, 3.0);
        assert!((t.total - fewer.total - 2.3).abs() < 1e-9);
    }

    #[test]
    fn psnr_values() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), DEFAULT_PSNR_CAP);
        let z = Image::filled(4, 4, [0.0; 3]);
        let o = Image::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
    }
}
