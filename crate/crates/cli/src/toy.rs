//! Procedural 10-class 16×16 grayscale shapes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use enprune::dataset::Split;
use enprune::{Dataset, Result, Tensor};

pub const SIDE: usize = 16;
pub const CLASSES: usize = 10;
pub const CLASS_NAMES: [&str; CLASSES] = [
    "square", "frame", "disk", "ring", "hbar", "vbar", "diagonal", "antidiagonal", "plus", "cross",
];

fn inside(class: usize, dx: f32, dy: f32, r: f32) -> bool {
    let box_dist = dx.abs().max(dy.abs());
    let d2 = dx * dx + dy * dy;
    let thin = 0.8;
    match class {
        0 => box_dist <= r,
        1 => box_dist <= r && box_dist > r - 1.3,
        2 => d2 <= r * r,
        3 => d2 <= r * r && d2 > (r - 1.4) * (r - 1.4),
        4 => dy.abs() <= 1.0 && dx.abs() <= r,
        5 => dx.abs() <= 1.0 && dy.abs() <= r,
        6 => (dx - dy).abs() <= thin * 1.5 && box_dist <= r,
        7 => (dx + dy).abs() <= thin * 1.5 && box_dist <= r,
        8 => (dx.abs() <= thin || dy.abs() <= thin) && box_dist <= r,
        _ => ((dx - dy).abs() <= thin * 1.5 || (dx + dy).abs() <= thin * 1.5) && box_dist <= r,
    }
}

/// Renders one `SIDE×SIDE` image of `class` with random placement, size, contrast and noise.
pub fn render<R: Rng>(class: usize, rng: &mut R) -> Vec<f32> {
    let r: f32 = rng.random_range(3.0..6.0);
    let lo = r - 0.5;
    let hi = SIDE as f32 - 0.5 - r;
    let cx = rng.random_range(lo..=hi.max(lo));
    let cy = rng.random_range(lo..=hi.max(lo));
    let ink: f32 = rng.random_range(0.6..1.0);
    let background: f32 = rng.random_range(0.0..0.2);
    let noise = Normal::new(0.0f32, 0.12).expect("valid std");
    let mut img = Vec::with_capacity(SIDE * SIDE);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
            let v = if inside(class, dx, dy, r) { ink } else { background };
            img.push(v + noise.sample(rng));
        }
    }
    img
}

/// `per_class` images of each class, shuffled, split 70/15/15 into train/val/calib.
pub fn generate(per_class: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..CLASSES).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(labels.len() * SIDE * SIDE);
    for &l in &labels {
        data.extend(render(l, &mut rng));
    }
    let n = labels.len();
    let images = Tensor::new(vec![n, 1, SIDE, SIDE], data)?;
    let train_end = n * 70 / 100;
    let val_end = n * 85 / 100;
    Dataset::new(
        images,
        labels,
        Split {
            train: [0, train_end],
            val: [train_end, val_end],
            calib: Some([val_end, n]),
        },
    )
}
