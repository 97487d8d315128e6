use super::buffer::ImageBuffer;
use super::policy::AugmentParams;

/// Value written where an affine map samples outside the source.
pub const FILL_VALUE: f32 = 0.0;

// Sample coordinates within this distance of the border are clamped onto it,
// so exact quarter turns do not lose edge pixels to rounding.
const EDGE_SLACK: f64 = 1e-6;

/// Bilinear sample at pixel-centre coordinates, or `None` outside the image.
fn bilinear(img: &ImageBuffer, px: f64, py: f64, c: usize) -> Option<f32> {
    let (w, h) = (img.width() as f64 - 1.0, img.height() as f64 - 1.0);
    if px < -EDGE_SLACK || py < -EDGE_SLACK || px > w + EDGE_SLACK || py > h + EDGE_SLACK {
        return None;
    }
    let px = px.clamp(0.0, w);
    let py = py.clamp(0.0, h);
    let x0 = px.floor() as usize;
    let y0 = py.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = (px - x0 as f64) as f32;
    let fy = (py - y0 as f64) as f32;
    let corners = [img.get(x0, y0, c), img.get(x1, y0, c), img.get(x0, y1, c), img.get(x1, y1, c)];
    let top = corners[0] * (1.0 - fx) + corners[1] * fx;
    let bottom = corners[2] * (1.0 - fx) + corners[3] * fx;
    // rounding must not leave the corners' range
    let lo = corners.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = corners.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    Some((top * (1.0 - fy) + bottom * fy).clamp(lo, hi))
}

/// Rotates about the centre (positive = counter-clockwise on screen), then
/// shears x by tan(shear)·y, then scales by `zoom`, then shifts by the given
/// fractions of width and height. Output keeps the input shape; uncovered
/// pixels get [`FILL_VALUE`].
pub fn affine_transform(
    img: &ImageBuffer,
    rotation_deg: f64,
    shift: (f64, f64),
    shear_deg: f64,
    zoom: f64,
) -> ImageBuffer {
    if rotation_deg == 0.0 && shift == (0.0, 0.0) && shear_deg == 0.0 && zoom == 1.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (tx, ty) = (shift.0 * w as f64, shift.1 * h as f64);

    // forward A = zoom · shear · rotation, in y-down coordinates
    let (s, c) = rotation_deg.to_radians().sin_cos();
    let k = shear_deg.to_radians().tan();
    let a = [
        [zoom * (c - k * s), zoom * (s + k * c)],
        [zoom * -s, zoom * c],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ];

    let mut out = ImageBuffer::filled(w, h, img.channels(), FILL_VALUE);
    for y in 0..h {
        for x in 0..w {
            let qx = x as f64 - cx - tx;
            let qy = y as f64 - cy - ty;
            let px = inv[0][0] * qx + inv[0][1] * qy + cx;
            let py = inv[1][0] * qx + inv[1][1] * qy + cy;
            for ch in 0..img.channels() {
                if let Some(v) = bilinear(img, px, py, ch) {
                    out.set(x, y, ch, v);
                }
            }
        }
    }
    out
}

/// Mirrors columns: out[r][c] = in[r][W−1−c].
pub fn horizontal_flip(img: &ImageBuffer) -> ImageBuffer {
    let mut out = img.clone();
    let w = img.width();
    for y in 0..img.height() {
        for x in 0..w {
            for c in 0..img.channels() {
                out.set(x, y, c, img.get(w - 1 - x, y, c));
            }
        }
    }
    out
}

/// Bilinear resize to side×side. Panics if `side < 8`.
pub fn resize_to(img: &ImageBuffer, side: usize) -> ImageBuffer {
    assert!(side >= 8, "resize target must be at least 8 pixels");
    resample(img, side, side)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
fn resample(img: &ImageBuffer, width: usize, height: usize) -> ImageBuffer {
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let mut out = ImageBuffer::filled(width, height, img.channels(), 0.0);
    for y in 0..height {
        let py = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, img.height() as f64 - 1.0);
        for x in 0..width {
            let px = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, img.width() as f64 - 1.0);
            for c in 0..img.channels() {
                let v = bilinear(img, px, py, c).expect("clamped inside");
                out.set(x, y, c, v);
            }
        }
    }
    out
}

/// Affine map followed by the optional flip.
pub fn apply_augmentation(img: &ImageBuffer, p: &AugmentParams) -> ImageBuffer {
    let out = affine_transform(img, p.rotation_deg, p.shift, p.shear_deg, p.zoom);
    if p.flip {
        horizontal_flip(&out)
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grey(w: usize, h: usize, px: Vec<f32>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, px).unwrap()
    }

    #[test]
    fn identity_parameters_return_input() {
        let img = grey(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(affine_transform(&img, 0.0, (0.0, 0.0), 0.0, 1.0), img);
        assert_eq!(apply_augmentation(&img, &AugmentParams::IDENTITY), img);
    }

    #[test]
    fn quarter_turn_on_two_by_two() {
        // a b      b d
        // c d  ->  a c   (counter-clockwise)
        let img = grey(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let out = affine_transform(&img, 90.0, (0.0, 0.0), 0.0, 1.0);
        let rounded: Vec<f32> = out.pixels().iter().map(|v| (v * 1e4).round() / 1e4).collect();
        assert_eq!(rounded, vec![2.0, 4.0, 1.0, 3.0]);
    }

    fn white_square(side: usize, sq: usize) -> ImageBuffer {
        let lo = (side - sq) / 2;
        let mut px = vec![0.0; side * side];
        for y in lo..lo + sq {
            for x in lo..lo + sq {
                px[y * side + x] = 1.0;
            }
        }
        grey(side, side, px)
    }

    #[test]
    fn zoom_scales_square_side() {
        let img = white_square(64, 20);
        let out = affine_transform(&img, 0.0, (0.0, 0.0), 0.0, 1.2);
        let mid = 32;
        let measured = (0..64).filter(|&x| out.get(x, mid, 0) >= 0.5).count() as f64;
        assert!((measured - 24.0).abs() <= 1.0, "side {measured}");
        let rows = (0..64).filter(|&y| out.get(mid, y, 0) >= 0.5).count() as f64;
        assert!((rows - 24.0).abs() <= 1.0);
    }

    #[test]
    fn shift_moves_content_and_fills_black() {
        let img = ImageBuffer::filled(10, 10, 1, 1.0);
        let out = affine_transform(&img, 0.0, (0.3, 0.0), 0.0, 1.0);
        for y in 0..10 {
            assert_eq!(out.get(0, y, 0), FILL_VALUE);
            assert_eq!(out.get(2, y, 0), FILL_VALUE);
            assert_eq!(out.get(3, y, 0), 1.0);
        }
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let px: Vec<f32> = (0..16 * 16 * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        let img = ImageBuffer::new(16, 16, 3, px).unwrap();
        let out = affine_transform(&img, 23.0, (0.1, -0.2), -11.0, 0.85);
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn flip_is_involution_and_index_reversal() {
        let px: Vec<f32> = (0..5 * 3 * 3).map(|i| i as f32).collect();
        let img = ImageBuffer::new(5, 3, 3, px).unwrap();
        let f = horizontal_flip(&img);
        for y in 0..3 {
            for x in 0..5 {
                for c in 0..3 {
                    assert_eq!(f.get(x, y, c), img.get(4 - x, y, c));
                }
            }
        }
        assert_eq!(horizontal_flip(&f), img);
        let mut a = img.pixels().to_vec();
        let mut b = f.pixels().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn left_half_white_becomes_right_half_white() {
        let px: Vec<f32> = (0..8 * 4).map(|i| if i % 8 < 4 { 1.0 } else { 0.0 }).collect();
        let f = horizontal_flip(&grey(8, 4, px));
        for y in 0..4 {
            for x in 0..8 {
                assert_eq!(f.get(x, y, 0), if x >= 4 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ImageBuffer::new(8, 8, 1, (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        assert_eq!(resize_to(&img, 8), img);
        let c = ImageBuffer::filled(13, 29, 3, 0.25);
        assert!(resize_to(&c, 16).pixels().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn checkerboard_two_to_four_matches_hand_grid() {
        let img = grey(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let expected = [
            [1.0, 0.75, 0.25, 0.0],
            [0.75, 0.625, 0.375, 0.25],
            [0.25, 0.375, 0.625, 0.75],
            [0.0, 0.25, 0.75, 1.0],
        ];
        let out = resample(&img, 4, 4);
        for (y, row) in expected.iter().enumerate() {
            for (x, &want) in row.iter().enumerate() {
                assert_eq!(out.get(x, y, 0), want);
            }
        }
    }
}
