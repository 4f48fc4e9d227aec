//! Binary PGM (`P5`) and PPM (`P6`) sample grids.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[0, 255]` to `[-1, 1]`.
pub fn byte_to_unit(v: f64) -> f64 {
    v / 127.5 - 1.0
}

/// `[-1, 1]` to the nearest byte, saturating outside the range.
pub fn unit_to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Encode `batch` (`[n, c, h, w]`, `c` 1 or 3) as a row-major tiled image
/// with `cols` tiles per row. Unused tiles stay black.
pub fn grid_bytes(batch: &Tensor, cols: usize) -> Result<Vec<u8>> {
    let s = batch.shape();
    let [n, c, h, w] = s[..] else {
        return Err(Error::dim("export_grid", s, &[0, 1, 0, 0]));
    };
    if c != 1 && c != 3 {
        return Err(Error::Contract(format!("grids need 1 or 3 channels, got {c}")));
    }
    if cols == 0 {
        return Err(Error::Contract("grid needs at least one column".into()));
    }
    let rows = n.div_ceil(cols);
    let (width, height) = (cols * w, rows * h);
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + width * height * c, 0);
    let d = batch.data();
    for item in 0..n {
        let (tr, tc) = (item / cols, item % cols);
        for y in 0..h {
            for x in 0..w {
                let dst = ((tr * h + y) * width + tc * w + x) * c;
                for ch in 0..c {
                    out[header + dst + ch] = unit_to_byte(d[((item * c + ch) * h + y) * w + x]);
                }
            }
        }
    }
    Ok(out)
}

pub fn export_grid(batch: &Tensor, cols: usize, path: &Path) -> Result<()> {
    let bytes = grid_bytes(batch, cols)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
