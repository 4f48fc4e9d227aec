//! Direct-loop 2-D convolution kernels (cross-correlation, no kernel flip).
//!
//! All three kernels share one index map: output pixel `(oh, ow)` reads input
//! pixel `(oh * stride + ki - pad, ow * stride + kj - pad)`. The forward map,
//! its input adjoint and its kernel adjoint are therefore exact transposes of
//! one another, which is what the transposed convolution relies on.

use crate::error::{Error, Result};

/// Output extent of a strided convolution, or a configuration error when the
/// window does not tile the padded input exactly.
pub fn conv2d_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("convolution stride must be positive".into()));
    }
    let padded = input + 2 * pad;
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "conv2d extent ({input} + 2*{pad} - {kernel}) / {stride} + 1 is not a positive integer"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn conv2d_transposed_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("convolution stride must be positive".into()));
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * pad {
        return Err(Error::Config(format!(
            "transposed conv extent ({input} - 1) * {stride} - 2*{pad} + {kernel} is not positive"
        )));
    }
    Ok(full - 2 * pad)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    /// Channels on the wide (image) side of the forward map.
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    #[inline]
    fn valid_range(&self, k: usize, n_out: usize, n_in: usize) -> (usize, usize) {
        // Output positions o with 0 <= o * stride + k - pad < n_in.
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi = if n_in + self.pad > k {
            ((n_in + self.pad - k - 1) / self.stride + 1).min(n_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// `y[b, co, oh, ow] = sum x[b, ci, ih, iw] * k[co, ci, ki, kj]`.
pub(crate) fn forward(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut y = vec![0.0; g.batch * g.c_out * g.oh * g.ow];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let y_base = (b * g.c_out + co) * g.oh * g.ow;
            for ci in 0..g.c_in {
                let x_base = (b * g.c_in + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = g.valid_range(ki, g.oh, g.h);
                    for kj in 0..g.kw {
                        let kv = k[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj];
                        let (ow_lo, ow_hi) = g.valid_range(kj, g.ow, g.w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.pad;
                            let xrow = &x[x_base + ih * g.w..x_base + (ih + 1) * g.w];
                            let yrow = &mut y[y_base + oh * g.ow..y_base + (oh + 1) * g.ow];
                            for ow in ow_lo..ow_hi {
                                yrow[ow] += kv * xrow[ow * g.stride + kj - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Adjoint of [`forward`] with respect to its input: maps an output-shaped
/// buffer back to input shape.
pub(crate) fn input_adjoint(dy: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dx = vec![0.0; g.batch * g.c_in * g.h * g.w];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let y_base = (b * g.c_out + co) * g.oh * g.ow;
            for ci in 0..g.c_in {
                let x_base = (b * g.c_in + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = g.valid_range(ki, g.oh, g.h);
                    for kj in 0..g.kw {
                        let kv = k[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj];
                        let (ow_lo, ow_hi) = g.valid_range(kj, g.ow, g.w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.pad;
                            let yrow = &dy[y_base + oh * g.ow..y_base + (oh + 1) * g.ow];
                            let xrow = &mut dx[x_base + ih * g.w..x_base + (ih + 1) * g.w];
                            for ow in ow_lo..ow_hi {
                                xrow[ow * g.stride + kj - g.pad] += kv * yrow[ow];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Adjoint of [`forward`] with respect to the kernel.
pub(crate) fn kernel_adjoint(x: &[f64], dy: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut dk = vec![0.0; g.c_out * g.c_in * g.kh * g.kw];
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let y_base = (b * g.c_out + co) * g.oh * g.ow;
            for ci in 0..g.c_in {
                let x_base = (b * g.c_in + ci) * g.h * g.w;
                for ki in 0..g.kh {
                    let (oh_lo, oh_hi) = g.valid_range(ki, g.oh, g.h);
                    for kj in 0..g.kw {
                        let (ow_lo, ow_hi) = g.valid_range(kj, g.ow, g.w);
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = oh * g.stride + ki - g.pad;
                            let xrow = &x[x_base + ih * g.w..x_base + (ih + 1) * g.w];
                            let yrow = &dy[y_base + oh * g.ow..y_base + (oh + 1) * g.ow];
                            for ow in ow_lo..ow_hi {
                                acc += yrow[ow] * xrow[ow * g.stride + kj - g.pad];
                            }
                        }
                        dk[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj] += acc;
                    }
                }
            }
        }
    }
    dk
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.batch * g.c_out * g.oh * g.ow];
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for oh in 0..g.oh {
                    for ow in 0..g.ow {
                        let mut s = 0.0;
                        for ci in 0..g.c_in {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                                    let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                                    if ih < 0 || iw < 0 || ih >= g.h as isize || iw >= g.w as isize {
                                        continue;
                                    }
                                    s += x[((b * g.c_in + ci) * g.h + ih as usize) * g.w + iw as usize]
                                        * k[((co * g.c_in + ci) * g.kh + ki) * g.kw + kj];
                                }
                            }
                        }
                        y[((b * g.c_out + co) * g.oh + oh) * g.ow + ow] = s;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn extent_rules() {
        assert_eq!(conv2d_output_extent(8, 4, 2, 1).unwrap(), 4);
        assert_eq!(conv2d_output_extent(4, 2, 2, 0).unwrap(), 2);
        assert!(conv2d_output_extent(5, 2, 2, 0).is_err());
        assert_eq!(conv2d_transposed_output_extent(4, 4, 2, 1).unwrap(), 8);
        assert!(conv2d_transposed_output_extent(1, 1, 1, 1).is_err());
    }

    #[test]
    fn forward_matches_naive_with_padding() {
        let g = ConvGeom {
            batch: 2,
            c_in: 2,
            c_out: 3,
            h: 6,
            w: 6,
            kh: 4,
            kw: 4,
            oh: 3,
            ow: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..2 * 2 * 36).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let k: Vec<f64> = (0..3 * 2 * 16).map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.7).collect();
        assert_eq!(forward(&x, &k, &g), naive(&x, &k, &g));
    }
}
