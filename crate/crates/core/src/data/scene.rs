//! Procedural scenes of ellipses and star-shaped polygons.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use super::{byte_to_unit, unit_to_byte};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Outline {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, theta: f64 },
    /// Vertices sorted by angle around their centre, so the polygon is simple.
    Polygon { verts: Vec<(f64, f64)> },
}

impl Outline {
    /// Point-in-shape test in unit canvas coordinates.
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Outline::Ellipse { cx, cy, rx, ry, theta } => {
                let (dx, dy) = (x - cx, y - cy);
                let (s, c) = theta.sin_cos();
                let u = (dx * c + dy * s) / rx;
                let v = (-dx * s + dy * c) / ry;
                u * u + v * v <= 1.0
            }
            Outline::Polygon { verts } => {
                let mut inside = false;
                let mut j = verts.len() - 1;
                for i in 0..verts.len() {
                    let ((xi, yi), (xj, yj)) = (verts[i], verts[j]);
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub outline: Outline,
    /// Position of the shape's hue within its palette, in `[0, 1)`.
    pub tone: f64,
    pub saturation: f64,
    pub value: f64,
}

/// Shapes painted back to front.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scene {
    pub shapes: Vec<Shape>,
}

impl Scene {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let n = rng.random_range(1..=4);
        let shapes = (0..n)
            .map(|_| {
                let (cx, cy) = (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85));
                let outline = if rng.random_bool(0.5) {
                    Outline::Ellipse {
                        cx,
                        cy,
                        rx: rng.random_range(0.1..0.3),
                        ry: rng.random_range(0.1..0.3),
                        theta: rng.random_range(0.0..PI),
                    }
                } else {
                    let k = rng.random_range(3..=6);
                    let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..TAU)).collect();
                    angles.sort_by(f64::total_cmp);
                    let verts = angles
                        .into_iter()
                        .map(|a| {
                            let r = rng.random_range(0.12..0.3);
                            (cx + r * a.cos(), cy + r * a.sin())
                        })
                        .collect();
                    Outline::Polygon { verts }
                };
                Shape {
                    outline,
                    tone: rng.random_range(0.0..1.0),
                    saturation: rng.random_range(0.55..0.95),
                    value: rng.random_range(0.6..0.95),
                }
            })
            .collect();
        Self { shapes }
    }

    /// Topmost shape index + 1 per pixel, 0 for background.
    pub fn labels(&self, res: usize) -> Vec<u8> {
        let mut out = vec![0u8; res * res];
        for (i, px) in out.iter_mut().enumerate() {
            let (x, y) = (((i % res) as f64 + 0.5) / res as f64, ((i / res) as f64 + 0.5) / res as f64);
            if let Some(k) = self.shapes.iter().rposition(|s| s.outline.contains(x, y)) {
                *px = k as u8 + 1;
            }
        }
        out
    }
}

/// Pixels whose 4-neighbourhood crosses a label boundary are 1, the rest
/// -1, replicated over 3 channels.
pub fn edge_map(labels: &[u8], res: usize) -> Tensor {
    let at = |x: usize, y: usize| labels[y * res + x];
    let edge = |p: usize| {
        let (x, y) = (p % res, p / res);
        let l = at(x, y);
        (x > 0 && at(x - 1, y) != l)
            || (x + 1 < res && at(x + 1, y) != l)
            || (y > 0 && at(x, y - 1) != l)
            || (y + 1 < res && at(x, y + 1) != l)
    };
    let hw = res * res;
    Tensor::from_fn(&[3, res, res], |k| if edge(k % hw) { 1.0 } else { -1.0 })
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// `[0, 1]` colour channel to a quantized `[-1, 1]` value.
fn quantize(c: f64) -> f64 {
    byte_to_unit(unit_to_byte(c * 2.0 - 1.0))
}

fn paint(labels: &[u8], res: usize, background: [f64; 3], colors: &[[f64; 3]]) -> Tensor {
    let hw = res * res;
    Tensor::from_fn(&[3, res, res], |k| {
        let (c, p) = (k / hw, k % hw);
        let rgb = match labels[p] {
            0 => background,
            l => colors[l as usize - 1],
        };
        quantize(rgb[c])
    })
}

/// `(edge map, filled scene)` on a light grey canvas with free hues.
pub fn render_paired(scene: &Scene, res: usize) -> (Tensor, Tensor) {
    let labels = scene.labels(res);
    let colors: Vec<_> = scene
        .shapes
        .iter()
        .map(|s| hsv_to_rgb(s.tone * 360.0, s.saturation, s.value))
        .collect();
    (edge_map(&labels, res), paint(&labels, res, [0.92; 3], &colors))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Warm palette around 30 degrees.
    A,
    /// Palette rotated by the configured hue offset.
    B,
}

pub const WARM_HUE: f64 = 30.0;
/// Half-width of each palette's hue band in degrees.
pub const HUE_SPREAD: f64 = 30.0;

pub fn render_unpaired(scene: &Scene, res: usize, domain: Domain, hue_offset: f64) -> Tensor {
    let base = match domain {
        Domain::A => WARM_HUE,
        Domain::B => WARM_HUE + hue_offset,
    };
    let colors: Vec<_> = scene
        .shapes
        .iter()
        .map(|s| hsv_to_rgb(base + (2.0 * s.tone - 1.0) * HUE_SPREAD, s.saturation, s.value))
        .collect();
    paint(&scene.labels(res), res, hsv_to_rgb(base, 0.3, 0.85), &colors)
}

/// Chroma-weighted circular mean hue of a `(3, H, W)` image, in `[0, 360)`.
pub fn mean_hue_degrees(img: &Tensor) -> f64 {
    let hw = img.numel() / 3;
    let d = img.data();
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in 0..hw {
        let (r, g, b) = ((d[p] + 1.0) / 2.0, (d[hw + p] + 1.0) / 2.0, (d[2 * hw + p] + 1.0) / 2.0);
        let max = r.max(g).max(b);
        let chroma = max - r.min(g).min(b);
        if chroma <= 0.0 {
            continue;
        }
        let h = if max == r {
            ((g - b) / chroma).rem_euclid(6.0)
        } else if max == g {
            (b - r) / chroma + 2.0
        } else {
            (r - g) / chroma + 4.0
        } * 60.0;
        let a = h.to_radians();
        sx += chroma * a.cos();
        sy += chroma * a.sin();
    }
    sy.atan2(sx).to_degrees().rem_euclid(360.0)
}
