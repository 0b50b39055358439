//! IDX container parsing (the published MNIST/Fashion-MNIST format).
//!
//! Big-endian headers: images carry magic 0x00000803 with dims
//! (count, rows, cols); labels carry magic 0x00000801 with dim (count).
//! Pixel bytes are scaled by 1/255 into [0, 1].

use crate::error::{Error, Result};
use crate::nn::LabeledDataset;
use byteorder::{BigEndian, ReadBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    r.read_u32::<BigEndian>()
        .map_err(|_| Error::Format(format!("truncated IDX file while reading {what}")))
}

/// Parse an image/label pair into a dataset of `[0, 1]` pixel vectors.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut img = BufReader::new(File::open(images_path)?);
    let magic = read_u32(&mut img, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32(&mut img, "image count")? as usize;
    let rows = read_u32(&mut img, "row count")? as usize;
    let cols = read_u32(&mut img, "column count")? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|_| Error::Format(format!("truncated IDX image file: expected {} pixel bytes", pixels.len())))?;

    let mut lbl = BufReader::new(File::open(labels_path)?);
    let magic = read_u32(&mut lbl, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let label_count = read_u32(&mut lbl, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "image/label count mismatch: {count} images, {label_count} labels"
        )));
    }
    let mut labels_raw = vec![0u8; label_count];
    lbl.read_exact(&mut labels_raw)
        .map_err(|_| Error::Format(format!("truncated IDX label file: expected {label_count} label bytes")))?;

    let dim = rows * cols;
    let inputs: Vec<Vec<f64>> = pixels
        .chunks_exact(dim)
        .map(|chunk| chunk.iter().map(|&b| b as f64 / 255.0).collect())
        .collect();
    let labels: Vec<usize> = labels_raw.iter().map(|&b| b as usize).collect();
    LabeledDataset::new(inputs, labels)
}

/// Write a dataset of `[0, 1]` images back out as an IDX pair.
pub fn save_idx(images_path: &Path, labels_path: &Path, data: &LabeledDataset, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != data.dim() {
        return Err(Error::Shape(format!(
            "{}x{} does not match input dimension {}",
            rows,
            cols,
            data.dim()
        )));
    }
    let mut img = BufWriter::new(File::create(images_path)?);
    img.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    img.write_all(&(data.len() as u32).to_be_bytes())?;
    img.write_all(&(rows as u32).to_be_bytes())?;
    img.write_all(&(cols as u32).to_be_bytes())?;
    for x in data.inputs() {
        let bytes: Vec<u8> = x.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        img.write_all(&bytes)?;
    }
    img.flush()?;

    let mut lbl = BufWriter::new(File::create(labels_path)?);
    lbl.write_all(&LABEL_MAGIC.to_be_bytes())?;
    lbl.write_all(&(data.len() as u32).to_be_bytes())?;
    let bytes: Vec<u8> = data.labels().iter().map(|&l| l as u8).collect();
    lbl.write_all(&bytes)?;
    lbl.flush()?;
    Ok(())
}
