use std::path::Path;

use ndarray::Array2;

use crate::data::LabeledDataset;
use crate::error::{IdxError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(buf: &[u8], offset: usize, path: &Path) -> std::result::Result<u32, IdxError> {
    let end = offset + 4;
    if buf.len() < end {
        return Err(IdxError::Truncated {
            path: path.display().to_string(),
            needed: end,
            found: buf.len(),
        });
    }
    Ok(u32::from_be_bytes([
        buf[offset],
        buf[offset + 1],
        buf[offset + 2],
        buf[offset + 3],
    ]))
}

/// Load an MNIST-style pair of big-endian IDX files. Pixels are scaled
/// by 1/255 into [0, 1]; labels become class indices with class count 10
/// (or the max label + 1 if larger).
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let img_buf = std::fs::read(images_path).map_err(IdxError::Io)?;
    let magic = read_u32_be(&img_buf, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(IdxError::BadMagic {
            path: images_path.display().to_string(),
            expected: IMAGES_MAGIC,
            found: magic,
        }
        .into());
    }
    let count = read_u32_be(&img_buf, 4, images_path)? as usize;
    let rows = read_u32_be(&img_buf, 8, images_path)? as usize;
    let cols = read_u32_be(&img_buf, 12, images_path)? as usize;
    let pixel_count = count * rows * cols;
    if img_buf.len() < 16 + pixel_count {
        return Err(IdxError::Truncated {
            path: images_path.display().to_string(),
            needed: 16 + pixel_count,
            found: img_buf.len(),
        }
        .into());
    }

    let lab_buf = std::fs::read(labels_path).map_err(IdxError::Io)?;
    let magic = read_u32_be(&lab_buf, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(IdxError::BadMagic {
            path: labels_path.display().to_string(),
            expected: LABELS_MAGIC,
            found: magic,
        }
        .into());
    }
    let label_count = read_u32_be(&lab_buf, 4, labels_path)? as usize;
    if lab_buf.len() < 8 + label_count {
        return Err(IdxError::Truncated {
            path: labels_path.display().to_string(),
            needed: 8 + label_count,
            found: lab_buf.len(),
        }
        .into());
    }
    if label_count != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: label_count,
        }
        .into());
    }

    let input_dim = rows * cols;
    let samples = Array2::from_shape_fn((count, input_dim), |(i, j)| {
        img_buf[16 + i * input_dim + j] as f64 / 255.0
    });
    let labels: Vec<usize> = lab_buf[8..8 + label_count]
        .iter()
        .map(|&b| b as usize)
        .collect();
    let class_count = labels.iter().copied().max().unwrap_or(0).max(9) + 1;
    LabeledDataset::new(samples, labels, class_count)
}

/// Write an image IDX file from byte pixels; fixture/export helper.
pub fn write_idx_images(
    path: &Path,
    count: usize,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> Result<()> {
    assert_eq!(pixels.len(), count * rows * cols, "pixel count mismatch");
    let mut buf = Vec::with_capacity(16 + pixels.len());
    buf.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(count as u32).to_be_bytes());
    buf.extend_from_slice(&(rows as u32).to_be_bytes());
    buf.extend_from_slice(&(cols as u32).to_be_bytes());
    buf.extend_from_slice(pixels);
    std::fs::write(path, buf)?;
    Ok(())
}

/// Write a label IDX file; fixture/export helper.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn hand_built_fixture_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        // Two 2x2 images, written byte by byte.
        let pixels: Vec<u8> = vec![0, 51, 102, 255, 10, 20, 30, 40];
        write_idx_images(&img, 2, 2, 2, &pixels).unwrap();
        write_idx_labels(&lab, &[7, 3]).unwrap();

        let ds = load_mnist_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(ds.labels, vec![7, 3]);
        for (k, &p) in pixels.iter().enumerate() {
            let (i, j) = (k / 4, k % 4);
            assert_eq!(ds.samples[[i, j]], p as f64 / 255.0);
        }
    }

    #[test]
    fn labels_file_with_images_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx_images(&img, 1, 2, 2, &[1, 2, 3, 4]).unwrap();
        // An image header where labels are expected.
        write_idx_images(&lab, 1, 2, 2, &[1, 2, 3, 4]).unwrap();
        match load_mnist_idx(&img, &lab) {
            Err(Error::Idx(IdxError::BadMagic {
                expected, found, ..
            })) => {
                assert_eq!(expected, LABELS_MAGIC);
                assert_eq!(found, IMAGES_MAGIC);
            }
            other => panic!("expected magic mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_mismatched_counts_get_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");

        write_idx_images(&img, 2, 2, 2, &[0; 8]).unwrap();
        write_idx_labels(&lab, &[1]).unwrap();
        assert!(matches!(
            load_mnist_idx(&img, &lab),
            Err(Error::Idx(IdxError::CountMismatch {
                images: 2,
                labels: 1
            }))
        ));

        let mut bytes = std::fs::read(&img).unwrap();
        bytes.truncate(18);
        std::fs::write(&img, bytes).unwrap();
        assert!(matches!(
            load_mnist_idx(&img, &lab),
            Err(Error::Idx(IdxError::Truncated { .. }))
        ));
    }
}
