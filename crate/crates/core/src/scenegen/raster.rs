//! Screen-space triangle rasterization and procedural backgrounds.

use nalgebra::{Vector2, Vector3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// A projected triangle carrying per-vertex depth and object-frame positions
/// for texturing.
pub struct ScreenTri {
    pub pts: [Vector2<f64>; 3],
    pub depth: [f64; 3],
    pub obj: [Vector3<f64>; 3],
    /// Camera-frame unit normal, flipped toward the camera.
    pub normal: Vector3<f64>,
}

/// Paints a triangle into the target buffers; `shade` maps
/// (object position, normal) to RGB. Pixels outside the image are clipped.
pub fn fill_triangle<F>(
    tri: &ScreenTri,
    label: u8,
    image: &mut Array3<f32>,
    mask: &mut ndarray::Array2<u8>,
    shade: &mut F,
) -> usize
where
    F: FnMut(&Vector3<f64>, &Vector3<f64>, usize, usize) -> [f32; 3],
{
    let h = image.shape()[1];
    let w = image.shape()[2];
    let [a, b, c] = &tri.pts;
    let min_x = a.x.min(b.x).min(c.x).floor().max(0.0) as usize;
    let max_x = (a.x.max(b.x).max(c.x).ceil() as isize).min(w as isize - 1);
    let min_y = a.y.min(b.y).min(c.y).floor().max(0.0) as usize;
    let max_y = (a.y.max(b.y).max(c.y).ceil() as isize).min(h as isize - 1);
    if max_x < 0 || max_y < 0 {
        return 0;
    }
    let (max_x, max_y) = (max_x as usize, max_y as usize);

    let denom = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
    if denom.abs() < 1e-12 {
        return 0;
    }
    let mut painted = 0;
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let w0 = ((b.y - c.y) * (px - c.x) + (c.x - b.x) * (py - c.y)) / denom;
            let w1 = ((c.y - a.y) * (px - c.x) + (a.x - c.x) * (py - c.y)) / denom;
            let w2 = 1.0 - w0 - w1;
            const EDGE_EPS: f64 = -1e-9;
            if w0 < EDGE_EPS || w1 < EDGE_EPS || w2 < EDGE_EPS {
                continue;
            }
            let obj = tri.obj[0] * w0 + tri.obj[1] * w1 + tri.obj[2] * w2;
            let rgb = shade(&obj, &tri.normal, y, x);
            for ch in 0..3 {
                image[[ch, y, x]] = rgb[ch];
            }
            mask[[y, x]] = label;
            painted += 1;
        }
    }
    painted
}

/// Background variants for the two appearance domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    /// Dark gradient with procedural stars.
    Starfield,
    /// Indoor wall: brighter gradient with vignetting.
    Lab,
}

/// Fills the image with the requested procedural background.
pub fn paint_background(kind: BackgroundKind, seed: u64, image: &mut Array3<f32>) {
    let h = image.shape()[1];
    let w = image.shape()[2];
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    match kind {
        BackgroundKind::Starfield => {
            for y in 0..h {
                let grad = 0.012 + 0.02 * y as f32 / h as f32;
                for x in 0..w {
                    image[[0, y, x]] = grad * 0.8;
                    image[[1, y, x]] = grad * 0.9;
                    image[[2, y, x]] = grad * 1.3;
                }
            }
            let stars = (h * w) / 300;
            for _ in 0..stars {
                let sx = rng.gen_range(0.0..w as f64);
                let sy = rng.gen_range(0.0..h as f64);
                let bright = rng.gen_range(0.25..1.0f32);
                let sigma = rng.gen_range(0.5..1.3f64);
                let rad = (3.0 * sigma).ceil() as isize;
                for dy in -rad..=rad {
                    for dx in -rad..=rad {
                        let yy = sy as isize + dy;
                        let xx = sx as isize + dx;
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            continue;
                        }
                        let d2 = (yy as f64 + 0.5 - sy).powi(2) + (xx as f64 + 0.5 - sx).powi(2);
                        let v = bright * (-d2 / (2.0 * sigma * sigma)).exp() as f32;
                        for ch in 0..3 {
                            let cur = image[[ch, yy as usize, xx as usize]];
                            image[[ch, yy as usize, xx as usize]] = (cur + v).min(1.0);
                        }
                    }
                }
            }
        }
        BackgroundKind::Lab => {
            let tint = [
                rng.gen_range(0.9..1.0f32),
                rng.gen_range(0.88..0.98f32),
                rng.gen_range(0.82..0.95f32),
            ];
            for y in 0..h {
                for x in 0..w {
                    let u = x as f32 / w as f32 - 0.5;
                    let v = y as f32 / h as f32 - 0.5;
                    let vignette = 1.0 - 0.55 * (u * u + v * v);
                    let base = 0.16 + 0.07 * (y as f32 / h as f32);
                    for ch in 0..3 {
                        image[[ch, y, x]] = (base * tint[ch] * vignette).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
}

/// Deterministic per-pixel hash noise in `[-0.5, 0.5)`, used for material
/// grain so that texture does not depend on paint order.
pub fn hash_noise(seed: u64, y: usize, x: usize, channel: usize) -> f32 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(1 + y as u64))
        .wrapping_add(0xbf58_476d_1ce4_e5b9u64.wrapping_mul(1 + x as u64))
        .wrapping_add(0x94d0_49bb_1331_11ebu64.wrapping_mul(1 + channel as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32 - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn triangle_fill_is_bounded_and_labels_mask() {
        let mut image = Array3::zeros((3, 16, 16));
        let mut mask = Array2::zeros((16, 16));
        let tri = ScreenTri {
            pts: [
                Vector2::new(2.0, 2.0),
                Vector2::new(13.0, 3.0),
                Vector2::new(4.0, 13.0),
            ],
            depth: [1.0; 3],
            obj: [Vector3::zeros(); 3],
            normal: Vector3::new(0.0, 0.0, -1.0),
        };
        let painted = fill_triangle(&tri, 2, &mut image, &mut mask, &mut |_, _, _, _| {
            [0.5, 0.5, 0.5]
        });
        assert!(painted > 10);
        let labeled = mask.iter().filter(|&&l| l == 2).count();
        assert_eq!(labeled, painted);
    }

    #[test]
    fn backgrounds_are_deterministic_per_seed() {
        let mut a = Array3::zeros((3, 24, 24));
        let mut b = Array3::zeros((3, 24, 24));
        paint_background(BackgroundKind::Starfield, 7, &mut a);
        paint_background(BackgroundKind::Starfield, 7, &mut b);
        assert_eq!(a, b);
        let mut c = Array3::zeros((3, 24, 24));
        paint_background(BackgroundKind::Starfield, 8, &mut c);
        assert_ne!(a, c);
    }

    #[test]
    fn hash_noise_is_stateless() {
        assert_eq!(hash_noise(1, 5, 9, 0), hash_noise(1, 5, 9, 0));
        assert_ne!(hash_noise(1, 5, 9, 0), hash_noise(2, 5, 9, 0));
        for i in 0..50 {
            let v = hash_noise(42, i, i * 3, i % 3);
            assert!((-0.5..0.5).contains(&v));
        }
    }
}
