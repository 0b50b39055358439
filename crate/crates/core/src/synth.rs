//! Deterministic synthetic digit images.
//!
//! Renders the ten digit glyphs as anti-aliased strokes into 28×28
//! grayscale images, with per-sample affine jitter (shift, scale, shear,
//! rotation), stroke thickness and brightness drawn from a seeded stream.
//! The result is a balanced, MNIST-shaped 10-class dataset that trains to
//! high accuracy — the stand-in used by tests and the acceptance suite
//! when no real IDX files are supplied.

use crate::nn::LabeledDataset;
use crate::rng::substream;
use rand::Rng;

pub const DIGIT_ROWS: usize = 28;
pub const DIGIT_COLS: usize = 28;

type Polyline = Vec<(f64, f64)>;

fn oval(cx: f64, cy: f64, rx: f64, ry: f64) -> Polyline {
    let n = 14;
    (0..=n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke paths per digit, in unit coordinates (y grows downward).
fn glyph(digit: usize) -> Vec<Polyline> {
    match digit {
        0 => vec![oval(0.5, 0.5, 0.17, 0.3)],
        1 => vec![vec![(0.4, 0.3), (0.54, 0.16), (0.54, 0.84)]],
        2 => vec![vec![
            (0.32, 0.32),
            (0.36, 0.2),
            (0.5, 0.15),
            (0.64, 0.2),
            (0.68, 0.33),
            (0.6, 0.47),
            (0.34, 0.68),
            (0.3, 0.84),
            (0.7, 0.84),
        ]],
        3 => vec![vec![
            (0.32, 0.22),
            (0.5, 0.15),
            (0.66, 0.25),
            (0.52, 0.45),
            (0.68, 0.62),
            (0.52, 0.84),
            (0.32, 0.78),
        ]],
        4 => vec![
            vec![(0.6, 0.16), (0.3, 0.58), (0.72, 0.58)],
            vec![(0.62, 0.4), (0.62, 0.85)],
        ],
        5 => vec![vec![
            (0.68, 0.17),
            (0.35, 0.17),
            (0.33, 0.48),
            (0.55, 0.44),
            (0.68, 0.58),
            (0.62, 0.78),
            (0.34, 0.82),
        ]],
        6 => vec![
            vec![(0.6, 0.15), (0.42, 0.35), (0.34, 0.58)],
            oval(0.5, 0.65, 0.16, 0.18),
        ],
        7 => vec![vec![(0.3, 0.17), (0.7, 0.17), (0.44, 0.84)]],
        8 => vec![oval(0.5, 0.32, 0.14, 0.16), oval(0.5, 0.67, 0.17, 0.18)],
        9 => vec![
            oval(0.5, 0.34, 0.15, 0.17),
            vec![(0.65, 0.36), (0.6, 0.84)],
        ],
        _ => unreachable!("digit out of range"),
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

struct Jitter {
    cos_r: f64,
    sin_r: f64,
    sx: f64,
    sy: f64,
    shear: f64,
    dx: f64,
    dy: f64,
    thickness: f64,
    brightness: f64,
}

impl Jitter {
    fn draw(rng: &mut impl Rng) -> Self {
        let rot: f64 = rng.random_range(-0.22..0.22);
        Self {
            cos_r: rot.cos(),
            sin_r: rot.sin(),
            sx: rng.random_range(0.82..1.12),
            sy: rng.random_range(0.82..1.12),
            shear: rng.random_range(-0.18..0.18),
            dx: rng.random_range(-0.08..0.08),
            dy: rng.random_range(-0.08..0.08),
            thickness: rng.random_range(0.05..0.09),
            brightness: rng.random_range(0.85..1.0),
        }
    }

    fn apply(&self, (u, v): (f64, f64)) -> (f64, f64) {
        let (cu, cv) = (u - 0.5, v - 0.5);
        let (cu, cv) = (cu + self.shear * cv, cv);
        let (cu, cv) = (cu * self.sx, cv * self.sy);
        let (ru, rv) = (
            cu * self.cos_r - cv * self.sin_r,
            cu * self.sin_r + cv * self.cos_r,
        );
        (ru + 0.5 + self.dx, rv + 0.5 + self.dy)
    }
}

fn render(digit: usize, jitter: &Jitter) -> Vec<f64> {
    let paths: Vec<Polyline> = glyph(digit)
        .into_iter()
        .map(|path| path.into_iter().map(|p| jitter.apply(p)).collect())
        .collect();
    let mut pixels = vec![0.0; DIGIT_ROWS * DIGIT_COLS];
    for r in 0..DIGIT_ROWS {
        for c in 0..DIGIT_COLS {
            let p = (
                (c as f64 + 0.5) / DIGIT_COLS as f64,
                (r as f64 + 0.5) / DIGIT_ROWS as f64,
            );
            let mut d = f64::INFINITY;
            for path in &paths {
                for seg in path.windows(2) {
                    d = d.min(dist_to_segment(p, seg[0], seg[1]));
                }
            }
            let rel = d / jitter.thickness;
            pixels[r * DIGIT_COLS + c] = (jitter.brightness * (-2.0 * rel * rel).exp()).clamp(0.0, 1.0);
        }
    }
    pixels
}

/// `n` jittered digit images (classes cycle 0..9, so any prefix is
/// near-balanced), reproducible from the seed.
pub fn synthetic_digits(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = substream(seed, "synth-digits");
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        let jitter = Jitter::draw(&mut rng);
        inputs.push(render(digit, &jitter));
        labels.push(digit);
    }
    LabeledDataset::new(inputs, labels).expect("generated data is well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{accuracy, train_sgd, NetworkSpec, SgdConfig};

    #[test]
    fn generation_is_deterministic() {
        let a = synthetic_digits(30, 5);
        let b = synthetic_digits(30, 5);
        assert_eq!(a, b);
        let c = synthetic_digits(30, 6);
        assert_ne!(a, c);
    }

    #[test]
    fn pixels_stay_in_unit_range_and_classes_cycle() {
        let d = synthetic_digits(50, 1);
        assert_eq!(d.dim(), 784);
        for i in 0..d.len() {
            assert_eq!(d.label(i), i % 10);
            assert!(d.input(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
            // Strokes leave visible mass in every image.
            let mass: f64 = d.input(i).iter().sum();
            assert!(mass > 5.0, "image {i} nearly blank (mass {mass})");
        }
    }

    #[test]
    fn a_small_net_learns_the_digits() {
        let train = synthetic_digits(600, 2);
        let test = synthetic_digits(200, 900);
        let spec = NetworkSpec::mlp(784, &[32], 10, true).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.2,
            epochs: 12,
            batch_size: 32,
            seed: 7,
        };
        let w = train_sgd(&spec, &train, &cfg).unwrap();
        let acc = accuracy(&spec, &w, &test).unwrap();
        assert!(acc > 0.9, "test accuracy {acc}");
    }
}
