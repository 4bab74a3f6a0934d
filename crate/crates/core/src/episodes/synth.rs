//! Procedural shape classes for desk-scale experiments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::augment::Image;
use crate::error::{Error, Result};

pub const SHAPE_FAMILIES: [&str; 8] = [
    "circle", "square", "triangle", "bar", "cross", "ring", "gradient", "checker",
];

/// Each family comes in this many variants (orientation and scale).
pub const SHAPE_VARIANTS: usize = 4;

const NOISE_SIGMA: f64 = 0.05;
const BACKGROUND: f64 = 0.1;

fn variant_params(variant: usize) -> (f64, f64) {
    // (orientation, scale)
    const TABLE: [(f64, f64); SHAPE_VARIANTS] =
        [(0.0, 0.75), (PI / 4.0, 0.5), (PI / 8.0, 0.9), (3.0 * PI / 8.0, 0.6)];
    TABLE[variant]
}

/// Shape coverage in `[0, 1]` at local coordinates where the shape spans roughly `[-1, 1]²`.
fn family_mask(family: usize, x: f64, y: f64) -> f64 {
    let r = (x * x + y * y).sqrt();
    let inside = |b: bool| if b { 1.0 } else { 0.0 };
    match family {
        0 => inside(r < 1.0),
        1 => inside(x.abs() < 0.8 && y.abs() < 0.8),
        2 => inside(y > -0.8 && y < 0.8 && x.abs() < 0.5 * (0.8 - y)),
        3 => inside(x.abs() < 1.0 && y.abs() < 0.25),
        4 => inside((x.abs() < 0.25 && y.abs() < 0.95) || (y.abs() < 0.25 && x.abs() < 0.95)),
        5 => inside(r > 0.55 && r < 0.95),
        6 => ((x + 1.5) / 3.0).clamp(0.0, 1.0),
        7 => {
            if x.abs() < 1.0 && y.abs() < 1.0 {
                let cell = ((x + 1.0) * 2.0).floor() as i64 + ((y + 1.0) * 2.0).floor() as i64;
                inside(cell % 2 == 0)
            } else {
                0.0
            }
        }
        _ => unreachable!("family index checked by caller"),
    }
}

fn render(class: usize, hw: usize, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Image {
    let family = class % SHAPE_FAMILIES.len();
    let (angle, scale) = variant_params(class / SHAPE_FAMILIES.len());
    let cx = rng.random_range(-0.15..0.15);
    let cy = rng.random_range(-0.15..0.15);
    let s = scale * rng.random_range(0.85..1.15);
    let theta = angle + rng.random_range(-0.2..0.2);
    let intensity = rng.random_range(0.6..1.0);
    let (sin, cos) = theta.sin_cos();
    let mut data = Vec::with_capacity(hw * hw);
    for py in 0..hw {
        for px in 0..hw {
            let u = (2.0 * px as f64 + 1.0) / hw as f64 - 1.0 - cx;
            let v = (2.0 * py as f64 + 1.0) / hw as f64 - 1.0 - cy;
            let x = (cos * u + sin * v) / s;
            let y = (-sin * u + cos * v) / s;
            let m = family_mask(family, x, y);
            let val = BACKGROUND + (intensity - BACKGROUND) * m + noise.sample(rng);
            data.push(val);
        }
    }
    Image::new(1, hw, hw, data).expect("rendered values are finite")
}

/// Classes `first_class..first_class + n_classes`. Class `i` is shape family
/// `i % 8` in variant `i / 8`; each image jitters position, scale, angle and
/// intensity and adds Gaussian noise. Identical arguments give identical data.
pub fn synth_shapes_range(
    first_class: usize,
    n_classes: usize,
    per_class: usize,
    hw: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    let available = SHAPE_FAMILIES.len() * SHAPE_VARIANTS;
    if n_classes < 2 {
        return Err(Error::invalid("synthetic dataset needs at least 2 classes"));
    }
    if first_class + n_classes > available {
        return Err(Error::invalid(format!(
            "only {available} synthetic classes exist, requested up to {}",
            first_class + n_classes
        )));
    }
    if per_class == 0 || hw < 4 {
        return Err(Error::invalid("need per_class ≥ 1 and image side ≥ 4"));
    }
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let classes = (first_class..first_class + n_classes)
        .map(|class| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class as u64);
            let imgs = (0..per_class).map(|_| render(class, hw, &mut rng, &noise)).collect();
            let family = SHAPE_FAMILIES[class % SHAPE_FAMILIES.len()];
            (format!("{class:02}_{family}"), imgs)
        })
        .collect();
    Dataset::new(split, classes)
}

/// Classes `0..n_classes` as a meta-train split.
pub fn synth_shapes(n_classes: usize, per_class: usize, hw: usize, seed: u64) -> Result<Dataset> {
    synth_shapes_range(0, n_classes, per_class, hw, seed, Split::Train)
}
