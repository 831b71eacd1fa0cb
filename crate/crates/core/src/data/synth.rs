//! Procedural face-like test images: flat shaded ellipses and bars with hard
//! edges, so bicubic degradation discards recoverable detail.

use rand::Rng;

use super::ImageU8;
use crate::autograd::keyed_rng;

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        dx * dx + dy * dy <= 1.0
    }
}

fn jitter(rng: &mut impl Rng, base: [u8; 3], spread: i32) -> [u8; 3] {
    base.map(|c| (i32::from(c) + rng.random_range(-spread..=spread)).clamp(0, 255) as u8)
}

/// Deterministic `size x size` synthetic face number `index` under `seed`.
pub fn synthetic_face(seed: u64, index: usize, size: usize) -> ImageU8 {
    let mut rng = keyed_rng(seed, &format!("synth.face{index}"));
    let s = size as f64;
    let background = jitter(&mut rng, [70, 110, 150], 60);
    let skin = jitter(&mut rng, [205, 160, 130], 40);
    let hair = jitter(&mut rng, [60, 40, 25], 25);
    let iris = jitter(&mut rng, [40, 70, 90], 30);
    let lips = jitter(&mut rng, [180, 60, 70], 30);

    let face = Ellipse {
        cx: s * rng.random_range(0.46..0.54),
        cy: s * rng.random_range(0.5..0.58),
        rx: s * rng.random_range(0.28..0.36),
        ry: s * rng.random_range(0.36..0.44),
    };
    let hairline = face.cy - face.ry * rng.random_range(0.45..0.65);
    let eye_y = face.cy - face.ry * rng.random_range(0.15..0.3);
    let eye_dx = face.rx * rng.random_range(0.35..0.5);
    let eye_r = s * rng.random_range(0.035..0.055);
    let eyes = [
        Ellipse { cx: face.cx - eye_dx, cy: eye_y, rx: eye_r * 1.6, ry: eye_r },
        Ellipse { cx: face.cx + eye_dx, cy: eye_y, rx: eye_r * 1.6, ry: eye_r },
    ];
    let pupils = eyes.each_ref().map(|e| Ellipse { cx: e.cx, cy: e.cy, rx: eye_r * 0.6, ry: eye_r * 0.6 });
    let mouth = Ellipse {
        cx: face.cx,
        cy: face.cy + face.ry * rng.random_range(0.45..0.6),
        rx: face.rx * rng.random_range(0.3..0.45),
        ry: s * rng.random_range(0.02..0.04),
    };
    let nose_w = (s * 0.02).max(1.0);
    let (nose_top, nose_bottom) = (eye_y + eye_r, mouth.cy - mouth.ry * 3.0);
    let stripes = rng.random_range(3.0..7.0);

    let mut img = ImageU8::filled(size, size, background);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut px = background;
            if ((fx / s * stripes).floor() as i64) % 2 == 0 && fy < s * 0.25 {
                px = background.map(|c| c.saturating_add(35));
            }
            if face.contains(fx, fy) {
                px = if fy < hairline { hair } else { skin };
                if (fx - face.cx).abs() < nose_w && fy > nose_top && fy < nose_bottom {
                    px = skin.map(|c| c / 2 + 40);
                }
                for (e, p) in eyes.iter().zip(&pupils) {
                    if e.contains(fx, fy) {
                        px = if p.contains(fx, fy) { iris } else { [245, 245, 240] };
                    }
                }
                if mouth.contains(fx, fy) {
                    px = lips;
                }
            }
            img.put(x, y, px);
        }
    }
    img
}
