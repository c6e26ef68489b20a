//! Big-endian IDX container reader/writer.
//!
//! Images: magic 0x00000803, dims [N, H, W], raw u8 pixels scaled by 1/255
//! on read. Labels: magic 0x00000801, dims [N], raw u8 labels. Malformed
//! files report the byte offset of the problem.

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::format(
                at,
                format!(
                    "truncated while reading {what} ({} bytes expected)",
                    buf.len()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }

    fn read_u32_be(&mut self, what: &str) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf, what)?;
        Ok(u32::from_be_bytes(buf))
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::format(
                self.offset,
                "trailing bytes after payload".to_string(),
            )),
        }
    }
}

/// Reads an image/label file pair into a dataset tagged as given.
/// Class names are the label digits found in the file.
pub fn read_idx(path_images: &Path, path_labels: &Path, split: SplitTag) -> Result<Dataset> {
    let mut ir = CountingReader::new(BufReader::new(File::open(path_images)?));
    let magic = ir.read_u32_be("image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            0,
            format!("bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"),
        ));
    }
    let n = ir.read_u32_be("image count")? as usize;
    let h = ir.read_u32_be("image height")? as usize;
    let w = ir.read_u32_be("image width")? as usize;
    if h == 0 || w == 0 {
        return Err(Error::format(8, format!("degenerate image dims {h}x{w}")));
    }
    let mut pixels = vec![0u8; n * h * w];
    ir.read_exact(&mut pixels, "pixel payload")?;
    ir.expect_eof()?;

    let mut lr = CountingReader::new(BufReader::new(File::open(path_labels)?));
    let magic = lr.read_u32_be("label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            0,
            format!("bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"),
        ));
    }
    let ln = lr.read_u32_be("label count")? as usize;
    if ln != n {
        return Err(Error::format(
            4,
            format!("label count {ln} does not match image count {n}"),
        ));
    }
    let mut labels = vec![0u8; ln];
    lr.read_exact(&mut labels, "label payload")?;
    lr.expect_eof()?;

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = Tensor::new(vec![n, 1, h, w], data)?;
    let num_classes = labels
        .iter()
        .copied()
        .max()
        .map(|m| m as usize + 1)
        .unwrap_or(0);
    let class_names = (0..num_classes.max(2)).map(|c| c.to_string()).collect();
    Dataset::new(
        images,
        labels.into_iter().map(|l| l as usize).collect(),
        class_names,
        split,
    )
}

/// Writes a dataset as an IDX image/label pair, quantizing pixels to u8
/// with rounding. Reading a written pair back reproduces pixel values
/// exactly whenever they are already u8-representable.
pub fn write_idx(d: &Dataset, path_images: &Path, path_labels: &Path) -> Result<()> {
    if d.images.shape()[1] != 1 {
        return Err(Error::data(format!(
            "idx stores single-channel images, got {} channels",
            d.images.shape()[1]
        )));
    }
    let (n, h, w) = (
        d.images.shape()[0],
        d.images.shape()[2],
        d.images.shape()[3],
    );
    let mut iw = BufWriter::new(File::create(path_images)?);
    iw.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    iw.write_all(&(n as u32).to_be_bytes())?;
    iw.write_all(&(h as u32).to_be_bytes())?;
    iw.write_all(&(w as u32).to_be_bytes())?;
    let bytes: Vec<u8> = d
        .images
        .data()
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    iw.write_all(&bytes)?;
    iw.flush()?;

    let mut lw = BufWriter::new(File::create(path_labels)?);
    lw.write_all(&LABEL_MAGIC.to_be_bytes())?;
    lw.write_all(&(n as u32).to_be_bytes())?;
    for &l in &d.labels {
        if l > u8::MAX as usize {
            return Err(Error::data(format!("label {l} exceeds idx u8 range")));
        }
        lw.write_all(&[l as u8])?;
    }
    lw.flush()?;
    Ok(())
}
