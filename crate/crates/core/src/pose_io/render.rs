use std::path::Path;

use image::{Rgb, RgbImage};

use super::{FlowField, MotionFieldStack};
use crate::{Error, Result};

/// Hue in degrees `[0, 360)` for a displacement, measured as `atan2(v, u)`.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    let deg = v.atan2(u).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}

/// HSV (value fixed at 1) to 8-bit RGB.
pub fn hsv_to_rgb(hue: f64, sat: f64) -> [u8; 3] {
    let h = (hue.rem_euclid(360.0)) / 60.0;
    let c = sat.clamp(0.0, 1.0);
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = 1.0 - c;
    let q = |ch: f64| ((ch + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Color-wheel rendering: hue from direction, saturation from magnitude relative
/// to the frame maximum. A field with zero maximum renders all white.
pub fn flow_to_image(field: &FlowField) -> RgbImage {
    let max = field.max_magnitude();
    let mut img = RgbImage::new(field.width() as u32, field.height() as u32);
    for y in 0..field.height() {
        for x in 0..field.width() {
            let (u, v) = field.get(x, y);
            let px = if max > 0.0 {
                hsv_to_rgb(flow_hue(u, v), u.hypot(v) / max)
            } else {
                [255, 255, 255]
            };
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

pub fn render_flow_png(stack: &MotionFieldStack, frame: usize, path: impl AsRef<Path>) -> Result<()> {
    let field = stack.frame(frame)?;
    let path = path.as_ref();
    flow_to_image(field)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hue of an 8-bit RGB triple, standard hexcone inverse.
    fn rgb_hue(p: [u8; 3]) -> f64 {
        let [r, g, b] = p.map(|c| c as f64 / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let d = max - min;
        let h = if max == r {
            60.0 * (((g - b) / d).rem_euclid(6.0))
        } else if max == g {
            60.0 * ((b - r) / d + 2.0)
        } else {
            60.0 * ((r - g) / d + 4.0)
        };
        h.rem_euclid(360.0)
    }

    #[test]
    fn zero_field_is_white() {
        let img = flow_to_image(&FlowField::zeros(4, 3));
        assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
    }

    #[test]
    fn constant_direction_gives_uniform_color() {
        let img = flow_to_image(&FlowField::constant(5, 5, 1.0, 0.0));
        let first = img.get_pixel(0, 0).0;
        assert!(img.pixels().all(|p| p.0 == first));
        assert_eq!(first, [255, 0, 0]);
    }

    #[test]
    fn opposite_halves_are_180_degrees_apart() {
        let f = FlowField::from_fn(8, 4, |x, _| if x < 4 { (1.0, 0.0) } else { (-1.0, 0.0) });
        let img = flow_to_image(&f);
        let left = rgb_hue(img.get_pixel(0, 0).0);
        let right = rgb_hue(img.get_pixel(7, 0).0);
        // hue(0 deg) = red, hue(180 deg) = cyan
        assert_eq!(img.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(7, 0).0, [0, 255, 255]);
        assert!(((right - left).rem_euclid(360.0) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn hue_invariant_under_positive_scaling() {
        let f = FlowField::from_fn(6, 6, |x, y| (x as f64 - 2.5, 1.5 - y as f64));
        for a in [0.25, 2.0, 8.0] {
            let g = f.scaled(a);
            for y in 0..6 {
                for x in 0..6 {
                    let (u, v) = f.get(x, y);
                    let (su, sv) = g.get(x, y);
                    assert_eq!(flow_hue(u, v), flow_hue(su, sv));
                }
            }
            assert_eq!(flow_to_image(&f), flow_to_image(&g));
        }
    }

    #[test]
    fn frame_out_of_range() {
        let stack = MotionFieldStack::zeros(1, 2, 2);
        let dir = tempfile::tempdir().unwrap();
        let err = render_flow_png(&stack, 1, dir.path().join("x.png")).unwrap_err();
        assert!(matches!(err, Error::Index { index: 1, len: 1 }));
    }

    #[test]
    fn writes_rgb8_png() {
        let stack = MotionFieldStack::single(FlowField::constant(3, 2, 0.0, 1.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        render_flow_png(&stack, 0, &path).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.color(), image::ColorType::Rgb8);
        assert_eq!((img.width(), img.height()), (3, 2));
    }
}
