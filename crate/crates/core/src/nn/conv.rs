//! 2D convolution lowered to im2col + GEMM.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

use super::{ParamStore, Scalar, Slot};

/// Convolution over NCHW tensors with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Slot,
    pub bias: Option<Slot>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn weight_mat<'a, T: Scalar>(&self, ps: &'a ParamStore<T>) -> ArrayView2<'a, T> {
        ArrayView2::from_shape(
            (
                self.out_channels,
                self.in_channels * self.kernel * self.kernel,
            ),
            ps.get(self.weight),
        )
        .expect("conv weight slot shape")
    }

    /// Unfold `x` into a [Ci*k*k, N*Ho*Wo] patch matrix.
    pub(crate) fn im2col<T: Scalar>(&self, x: &ArrayView4<T>) -> Array2<T> {
        let (n, ci, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let mut cols = Array2::<T>::zeros((ci * k * k, n * oh * ow));
        let xs = x.as_slice().expect("contiguous input");
        let cs = cols.as_slice_mut().expect("contiguous cols");
        let row_stride = n * oh * ow;
        for c in 0..ci {
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    let base = row * row_stride;
                    for b in 0..n {
                        let x_plane = (b * ci + c) * h * w;
                        for o_h in 0..oh {
                            let ih = (o_h * self.stride + kh) as isize - self.padding as isize;
                            let dst = base + (b * oh + o_h) * ow;
                            if ih < 0 || ih >= h as isize {
                                continue; // stays zero
                            }
                            let x_row = x_plane + ih as usize * w;
                            for o_w in 0..ow {
                                let iw = (o_w * self.stride + kw) as isize - self.padding as isize;
                                if iw >= 0 && iw < w as isize {
                                    cs[dst + o_w] = xs[x_row + iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Fold a [Ci*k*k, N*Ho*Wo] gradient matrix back onto the input grid.
    fn col2im<T: Scalar>(&self, dcols: &Array2<T>, n: usize, h: usize, w: usize) -> Array4<T> {
        let ci = self.in_channels;
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let mut dx = Array4::<T>::zeros((n, ci, h, w));
        let ds = dcols.as_slice().expect("contiguous dcols");
        let xs = dx.as_slice_mut().expect("contiguous dx");
        let row_stride = n * oh * ow;
        for c in 0..ci {
            for kh in 0..k {
                for kw in 0..k {
                    let row = (c * k + kh) * k + kw;
                    let base = row * row_stride;
                    for b in 0..n {
                        let x_plane = (b * ci + c) * h * w;
                        for o_h in 0..oh {
                            let ih = (o_h * self.stride + kh) as isize - self.padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let src = base + (b * oh + o_h) * ow;
                            let x_row = x_plane + ih as usize * w;
                            for o_w in 0..ow {
                                let iw = (o_w * self.stride + kw) as isize - self.padding as isize;
                                if iw >= 0 && iw < w as isize {
                                    let i = x_row + iw as usize;
                                    xs[i] = xs[i] + ds[src + o_w];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &ArrayView4<T>) -> Array4<T> {
        let (y, _) = self.forward_keep_cols(ps, x, false);
        y
    }

    /// Forward pass optionally returning the im2col matrix for reuse by
    /// the backward pass.
    pub fn forward_keep_cols<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        x: &ArrayView4<T>,
        keep: bool,
    ) -> (Array4<T>, Option<Array2<T>>) {
        let (n, ci, h, w) = x.dim();
        assert_eq!(ci, self.in_channels, "conv input channels");
        let (oh, ow) = self.out_hw(h, w);
        let cols = self.im2col(x);
        let y_mat = self.weight_mat(ps).dot(&cols); // [Co, N*Ho*Wo]
        let mut y = Array4::<T>::zeros((n, self.out_channels, oh, ow));
        let ys = y.as_slice_mut().unwrap();
        let ym = y_mat.as_slice().unwrap();
        for co in 0..self.out_channels {
            let bias = self
                .bias
                .map(|b| ps.get(b)[co])
                .unwrap_or_else(|| T::from_f64(0.0));
            let src_base = co * n * oh * ow;
            for b in 0..n {
                let dst_base = (b * self.out_channels + co) * oh * ow;
                let src = src_base + b * oh * ow;
                for i in 0..oh * ow {
                    ys[dst_base + i] = ym[src + i] + bias;
                }
            }
        }
        (y, keep.then_some(cols))
    }

    /// Accumulates weight/bias gradients into `ps` and returns d(input).
    /// `cols` may carry the forward pass's im2col matrix to avoid
    /// recomputing it.
    pub fn backward<T: Scalar>(
        &self,
        ps: &mut ParamStore<T>,
        x: &ArrayView4<T>,
        dy: &ArrayView4<T>,
        cols: Option<&Array2<T>>,
    ) -> Array4<T> {
        let (n, _ci, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        // Gather dy into [Co, N*Ho*Wo] to match the forward GEMM layout.
        let mut dy_mat = Array2::<T>::zeros((self.out_channels, n * oh * ow));
        {
            let dm = dy_mat.as_slice_mut().unwrap();
            let dys = dy.as_slice().expect("contiguous dy");
            for b in 0..n {
                for co in 0..self.out_channels {
                    let src = (b * self.out_channels + co) * oh * ow;
                    let dst = co * n * oh * ow + b * oh * ow;
                    dm[dst..dst + oh * ow].copy_from_slice(&dys[src..src + oh * ow]);
                }
            }
        }
        let cols_owned;
        let cols = match cols {
            Some(c) => c,
            None => {
                cols_owned = self.im2col(x);
                &cols_owned
            }
        };
        let dw = dy_mat.dot(&cols.t()); // [Co, Ci*k*k]
        let w_mat = self.weight_mat(ps).to_owned();
        let dcols = w_mat.t().dot(&dy_mat); // [Ci*k*k, N*Ho*Wo]

        ps.ensure_grads();
        {
            let gw = ps.grad_slice_mut(self.weight);
            let dws = dw.as_slice().unwrap();
            for (g, d) in gw.iter_mut().zip(dws) {
                *g = *g + *d;
            }
        }
        if let Some(bias) = self.bias {
            let dm = dy_mat.as_slice().unwrap();
            let gb = ps.grad_slice_mut(bias);
            for (co, g) in gb.iter_mut().enumerate() {
                let base = co * n * oh * ow;
                let mut acc = T::from_f64(0.0);
                for v in &dm[base..base + n * oh * ow] {
                    acc = acc + *v;
                }
                *g = *g + acc;
            }
        }
        self.col2im(&dcols, n, h, w)
    }
}
