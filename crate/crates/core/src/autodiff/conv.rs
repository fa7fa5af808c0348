use super::Scalar;

/// Geometry of a square-kernel convolution with "same" padding.
///
/// Output size is `ceil(input / stride)`; the total padding
/// `max((out - 1) * stride + k - in, 0)` is split with the extra row/column
/// at the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn same(channels: usize, height: usize, width: usize, filters: usize, kernel: usize, stride: usize) -> Self {
        let out_h = height.div_ceil(stride);
        let out_w = width.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(height);
        let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(width);
        Self {
            channels,
            height,
            width,
            filters,
            kernel,
            stride,
            out_h,
            out_w,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.filters * self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input index read by patch row `r` at output position `(oh, ow)`.
    #[inline]
    fn source(&self, c: usize, kh: usize, kw: usize, oh: usize, ow: usize) -> Option<usize> {
        let ih = (oh * self.stride + kh).checked_sub(self.pad_top)?;
        let iw = (ow * self.stride + kw).checked_sub(self.pad_left)?;
        (ih < self.height && iw < self.width).then(|| (c * self.height + ih) * self.width + iw)
    }
}

/// Unfolds one sample `[C, H, W]` into `[C*k*k, OH*OW]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let p = g.positions();
    for c in 0..g.channels {
        for kh in 0..g.kernel {
            for kw in 0..g.kernel {
                let row = (c * g.kernel + kh) * g.kernel + kw;
                let dst = &mut col[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        dst[oh * g.out_w + ow] = match g.source(c, kh, kw, oh, ow) {
                            Some(i) => x[i],
                            None => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[C*k*k, OH*OW]` back onto `[C, H, W]`,
/// adding into `x`.
pub(crate) fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeometry, x: &mut [T]) {
    let p = g.positions();
    for c in 0..g.channels {
        for kh in 0..g.kernel {
            for kw in 0..g.kernel {
                let row = (c * g.kernel + kh) * g.kernel + kw;
                let src = &col[row * p..(row + 1) * p];
                for oh in 0..g.out_h {
                    for ow in 0..g.out_w {
                        if let Some(i) = g.source(c, kh, kw, oh, ow) {
                            x[i] = x[i] + src[oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}
