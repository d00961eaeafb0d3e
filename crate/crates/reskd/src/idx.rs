//! Reader for the big-endian IDX image/label containers.
//!
//! Image files carry magic `0x00000803` (unsigned bytes, 3 dimensions) and
//! label files `0x00000801`. Pixels are scaled to `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn truncated(name: &str) -> Error {
    Error::parse(name, "file truncated")
}

/// Loads an image/label file pair into a dataset with `d = rows × cols`
/// features per sample and `k = max label + 1` classes.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_name = images_path.display().to_string();
    let lbl_name = labels_path.display().to_string();

    let mut img = BufReader::new(File::open(images_path)?);
    let magic = img
        .read_u32::<BigEndian>()
        .map_err(|_| truncated(&img_name))?;
    if magic != IMAGES_MAGIC {
        return Err(Error::parse(
            &img_name,
            format!("wrong magic {magic:#010x}, expected {IMAGES_MAGIC:#010x} (images)"),
        ));
    }
    let count = img.read_u32::<BigEndian>().map_err(|_| truncated(&img_name))? as usize;
    let rows = img.read_u32::<BigEndian>().map_err(|_| truncated(&img_name))? as usize;
    let cols = img.read_u32::<BigEndian>().map_err(|_| truncated(&img_name))? as usize;
    let d = rows * cols;
    let mut pixels = vec![0u8; count * d];
    img.read_exact(&mut pixels).map_err(|_| truncated(&img_name))?;

    let mut lbl = BufReader::new(File::open(labels_path)?);
    let magic = lbl
        .read_u32::<BigEndian>()
        .map_err(|_| truncated(&lbl_name))?;
    if magic != LABELS_MAGIC {
        return Err(Error::parse(
            &lbl_name,
            format!("wrong magic {magic:#010x}, expected {LABELS_MAGIC:#010x} (labels)"),
        ));
    }
    let label_count = lbl.read_u32::<BigEndian>().map_err(|_| truncated(&lbl_name))? as usize;
    if label_count != count {
        return Err(Error::parse(
            &lbl_name,
            format!("{label_count} labels for {count} images"),
        ));
    }
    let mut raw_labels = vec![0u8; label_count];
    lbl.read_exact(&mut raw_labels).map_err(|_| truncated(&lbl_name))?;

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let k = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(Matrix::from_vec(count, d, data)?, labels, k)
}
