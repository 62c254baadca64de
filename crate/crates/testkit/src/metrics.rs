use codesplat_core::Image;

/// Mean SSIM with an explicit 11×11 window sum per pixel. Window weights are
/// `exp(-(dx² + dy²) / 4.5)` over in-bounds taps, divided by their sum.
pub fn oracle_ssim(x: &Image, y: &Image) -> f64 {
    let (w, h) = (x.width() as i64, x.height() as i64);
    let mut total = 0.0;
    for c in 0..3 {
        let at = |img: &Image, px: i64, py: i64| img.pixel(px as usize, py as usize)[c];
        for py in 0..h {
            for px in 0..w {
                let (mut sw, mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5..=5i64 {
                    for dx in -5..=5i64 {
                        let (qx, qy) = (px + dx, py + dy);
                        if qx < 0 || qy < 0 || qx >= w || qy >= h {
                            continue;
                        }
                        let wt = (-((dx * dx + dy * dy) as f64) / 4.5).exp();
                        let (a, b) = (at(x, qx, qy), at(y, qx, qy));
                        sw += wt;
                        mx += wt * a;
                        my += wt * b;
                        xx += wt * a * a;
                        yy += wt * b * b;
                        xy += wt * a * b;
                    }
                }
                let (mx, my) = (mx / sw, my / sw);
                let vx = xx / sw - mx * mx;
                let vy = yy / sw - my * my;
                let cxy = xy / sw - mx * my;
                let (c1, c2) = (1e-4, 9e-4);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
    }
    total / (3 * w * h) as f64
}

/// `(1 - λ)·mean|x - y| + λ·(1 - SSIM)`.
pub fn oracle_recon_loss(x: &Image, y: &Image, lambda_ssim: f64) -> f64 {
    let l1 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.data().len() as f64;
    let ssim = if lambda_ssim == 0.0 { 1.0 } else { oracle_ssim(x, y) };
    (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim)
}
