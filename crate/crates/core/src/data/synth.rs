use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// Isotropic Gaussian blobs around seeded random class centers, with the
/// default per-coordinate noise of 1.0.
pub fn synth_gaussian(
    class_count: usize,
    per_class: usize,
    input_dim: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    synth_gaussian_with(class_count, per_class, input_dim, 1.0, seed)
}

/// Gaussian blob data with explicit noise scale. Centers are standard
/// normal per coordinate; samples add `noise` times standard normal.
pub fn synth_gaussian_with(
    class_count: usize,
    per_class: usize,
    input_dim: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if class_count == 0 || per_class == 0 || input_dim == 0 {
        return Err(Error::Config("synthetic data needs positive counts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers =
        Array2::from_shape_fn((class_count, input_dim), |_| normal(&mut rng));
    let count = class_count * per_class;
    let mut samples = Array2::zeros((count, input_dim));
    let mut labels = Vec::with_capacity(count);
    for c in 0..class_count {
        for s in 0..per_class {
            let row = c * per_class + s;
            for j in 0..input_dim {
                samples[[row, j]] = centers[[c, j]] + noise * normal(&mut rng);
            }
            labels.push(c);
        }
    }
    shuffle_in_place(&mut samples, &mut labels, &mut rng);
    LabeledDataset::new(samples, labels, class_count)
}

/// Ten-class 28x28 image-like data: each class is a fixed arrangement of
/// soft blobs; samples are cyclically shifted by up to `max_shift` pixels,
/// intensity-scaled, noised, and clipped to [0, 1]. Returns a train/test
/// pair drawn from the same class distributions.
pub fn synth_digits(
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    synth_digits_with(train_per_class, test_per_class, 0.25, 3, seed)
}

pub fn synth_digits_with(
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
    max_shift: i64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if train_per_class == 0 || test_per_class == 0 {
        return Err(Error::Config("synthetic data needs positive counts".into()));
    }
    const SIDE: usize = 28;
    const CLASSES: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut templates: Array3<f64> = Array3::zeros((CLASSES, SIDE, SIDE));
    for c in 0..CLASSES {
        let blobs = 3 + rng.random_range(0..3usize);
        for _ in 0..blobs {
            let cx = rng.random_range(6.0..22.0);
            let cy = rng.random_range(6.0..22.0);
            let sx = rng.random_range(1.5..4.0);
            let sy = rng.random_range(1.5..4.0);
            let amp = rng.random_range(0.6..1.0);
            for x in 0..SIDE {
                for y in 0..SIDE {
                    let dx = (x as f64 - cx) / sx;
                    let dy = (y as f64 - cy) / sy;
                    templates[[c, x, y]] += amp * (-(dx * dx + dy * dy)).exp();
                }
            }
        }
        for x in 0..SIDE {
            for y in 0..SIDE {
                templates[[c, x, y]] = templates[[c, x, y]].clamp(0.0, 1.0);
            }
        }
    }

    let draw = |per_class: usize, rng: &mut ChaCha8Rng| -> Result<LabeledDataset> {
        let count = CLASSES * per_class;
        let mut samples = Array2::zeros((count, SIDE * SIDE));
        let mut labels = Vec::with_capacity(count);
        for c in 0..CLASSES {
            for s in 0..per_class {
                let row = c * per_class + s;
                let dx = rng.random_range(-max_shift..=max_shift);
                let dy = rng.random_range(-max_shift..=max_shift);
                let scale = rng.random_range(0.7..1.3);
                for x in 0..SIDE {
                    for y in 0..SIDE {
                        let sx = (x as i64 - dx).rem_euclid(SIDE as i64) as usize;
                        let sy = (y as i64 - dy).rem_euclid(SIDE as i64) as usize;
                        let v = templates[[c, sx, sy]] * scale + noise * normal(rng);
                        samples[[row, x * SIDE + y]] = v.clamp(0.0, 1.0);
                    }
                }
                labels.push(c);
            }
        }
        shuffle_in_place(&mut samples, &mut labels, rng);
        LabeledDataset::new(samples, labels, CLASSES)
    };

    let train = draw(train_per_class, &mut rng)?;
    let test = draw(test_per_class, &mut rng)?;
    Ok((train, test))
}

/// Box-Muller standard normal; keeps us off distribution-crate version
/// churn and fully deterministic for a given stream.
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn shuffle_in_place(samples: &mut Array2<f64>, labels: &mut [usize], rng: &mut ChaCha8Rng) {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let old_samples = samples.clone();
    let old_labels = labels.to_vec();
    for (new_row, &old_row) in order.iter().enumerate() {
        samples.row_mut(new_row).assign(&old_samples.row(old_row));
        labels[new_row] = old_labels[old_row];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let a = synth_gaussian(3, 5, 8, 99).unwrap();
        let b = synth_gaussian(3, 5, 8, 99).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn balanced_labels() {
        let ds = synth_gaussian(2, 10, 4, 1).unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 0).count(), 10);
        assert_eq!(ds.labels.iter().filter(|&&l| l == 1).count(), 10);
    }

    #[test]
    fn tiny_noise_separable_by_nearest_centroid() {
        let ds = synth_gaussian_with(4, 25, 16, 0.05, 7).unwrap();
        // Fit centroids on the data itself; with this noise the classes
        // are far apart so every sample lands nearest its own centroid.
        let mut centroids = vec![vec![0.0; 16]; 4];
        let mut counts = [0usize; 4];
        for (i, &label) in ds.labels.iter().enumerate() {
            counts[label] += 1;
            for j in 0..16 {
                centroids[label][j] += ds.samples[[i, j]];
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            for v in centroid.iter_mut() {
                *v /= counts[c] as f64;
            }
        }
        let mut correct = 0;
        for (i, &label) in ds.labels.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f64 = (0..16)
                    .map(|j| (ds.samples[[i, j]] - centroid[j]).powi(2))
                    .sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            if best.1 == label {
                correct += 1;
            }
        }
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn digits_are_deterministic_and_in_range() {
        let (tr1, te1) = synth_digits(3, 2, 42).unwrap();
        let (tr2, _) = synth_digits(3, 2, 42).unwrap();
        assert_eq!(tr1.samples, tr2.samples);
        assert_eq!(tr1.len(), 30);
        assert_eq!(te1.len(), 20);
        assert_eq!(tr1.input_dim(), 784);
        assert!(tr1.samples.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
