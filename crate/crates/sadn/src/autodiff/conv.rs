//! 2D convolution, its transpose, and the gradient kernels they share.
//!
//! Weights are `[out_channels, in_channels, kh, kw]`, activations
//! `[batch, channels, h, w]`. The inner loops are written so that the
//! width axis is walked contiguously for stride-1 column access, which is
//! the layout of every dilated convolution in the codec.

use crate::autodiff::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so stride-1 output keeps the input size.
    Same,
    /// No padding.
    Valid,
}

/// Full description of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn new(kernel: (usize, usize), in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel,
            in_channels,
            out_channels,
            stride: (1, 1),
            dilation: (1, 1),
            padding: Padding::Valid,
            transposed: false,
        }
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: (usize, usize)) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ConvSpec { kernel, in_channels, out_channels, stride, dilation, .. } = *self;
        if kernel.0 < 1 || kernel.1 < 1 || in_channels < 1 || out_channels < 1 {
            return Err(Error::Config(format!("conv extents must be >= 1: {self:?}")));
        }
        if stride.0 < 1 || stride.1 < 1 || dilation.0 < 1 || dilation.1 < 1 {
            return Err(Error::Config(format!("conv stride/dilation must be >= 1: {self:?}")));
        }
        if self.padding == Padding::Same {
            if stride != (1, 1) {
                return Err(Error::Config("same padding requires stride 1".into()));
            }
            if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
                return Err(Error::Config("same padding requires odd kernel extents".into()));
            }
        }
        Ok(())
    }

    /// Effective kernel extent after dilation.
    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            (self.kernel.0 - 1) * self.dilation.0 + 1,
            (self.kernel.1 - 1) * self.dilation.1 + 1,
        )
    }

    pub fn pad(&self) -> (usize, usize) {
        match self.padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let (ekh, ekw) = self.effective_kernel();
                ((ekh - 1) / 2, (ekw - 1) / 2)
            }
        }
    }

    /// Output spatial size of the forward (non-transposed) convolution.
    pub fn out_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let (ekh, ekw) = self.effective_kernel();
        let (ph, pw) = self.pad();
        if in_h + 2 * ph < ekh || in_w + 2 * pw < ekw {
            return Err(Error::Shape(format!(
                "input {in_h}x{in_w} smaller than effective kernel {ekh}x{ekw}"
            )));
        }
        Ok((
            (in_h + 2 * ph - ekh) / self.stride.0 + 1,
            (in_w + 2 * pw - ekw) / self.stride.1 + 1,
        ))
    }

    /// Output spatial size of the transposed convolution.
    pub fn out_size_transposed(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let (ekh, ekw) = self.effective_kernel();
        let (ph, pw) = self.pad();
        let h = (in_h - 1) * self.stride.0 + ekh;
        let w = (in_w - 1) * self.stride.1 + ekw;
        if h < 2 * ph + 1 || w < 2 * pw + 1 {
            return Err(Error::Shape("transposed output collapses under padding".into()));
        }
        Ok((h - 2 * ph, w - 2 * pw))
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel.0, self.kernel.1]
    }

    fn check_weight(&self, w: &Tensor) -> Result<()> {
        if w.shape() != self.weight_shape() {
            return Err(Error::Shape(format!(
                "weight shape {:?} does not match spec {:?}",
                w.shape(),
                self.weight_shape()
            )));
        }
        Ok(())
    }
}

/// Column range `lo..hi` of output positions whose input column
/// `oj*stride + off` lands in `[0, width)`.
#[inline]
fn col_range(off: i64, stride: usize, width: usize, out_w: usize) -> (usize, usize) {
    let s = stride as i64;
    let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
    let max = width as i64 - 1 - off;
    if max < 0 {
        return (0, 0);
    }
    let hi = ((max / s) as usize + 1).min(out_w);
    (lo.min(hi), hi)
}

/// Direct convolution. `bias`, when present, is `[1, out_channels, 1, 1]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    spec.check_weight(w)?;
    let [n, cin, h, wd] = x.shape();
    if cin != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {cin} channels, spec expects {}",
            spec.in_channels
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [1, spec.out_channels, 1, 1] {
            return Err(Error::Shape(format!("bias shape {:?}", b.shape())));
        }
    }
    let (out_h, out_w) = spec.out_size(h, wd)?;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.pad();
    let (kh, kw) = spec.kernel;

    let mut out = match bias {
        Some(b) => {
            let mut t = Tensor::zeros([n, spec.out_channels, out_h, out_w]);
            for bn in 0..n {
                for o in 0..spec.out_channels {
                    let v = b[[0, o, 0, 0]];
                    for i in 0..out_h {
                        t.row_mut(bn, o, i).fill(v);
                    }
                }
            }
            t
        }
        None => Tensor::zeros([n, spec.out_channels, out_h, out_w]),
    };

    for bn in 0..n {
        for o in 0..spec.out_channels {
            for c in 0..cin {
                for p in 0..kh {
                    let row_off = (p * dh) as i64 - ph as i64;
                    for q in 0..kw {
                        let wv = w[[o, c, p, q]];
                        if wv == 0.0 {
                            continue;
                        }
                        let col_off = (q * dw) as i64 - pw as i64;
                        let (lo, hi) = col_range(col_off, sw, wd, out_w);
                        if lo >= hi {
                            continue;
                        }
                        for oi in 0..out_h {
                            let ii = oi as i64 * sh as i64 + row_off;
                            if ii < 0 || ii >= h as i64 {
                                continue;
                            }
                            let xr = x.row(bn, c, ii as usize);
                            let or = out.row_mut(bn, o, oi);
                            if sw == 1 {
                                let xs = &xr[(lo as i64 + col_off) as usize..];
                                for (ov, xv) in or[lo..hi].iter_mut().zip(xs) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for oj in lo..hi {
                                    or[oj] += wv * xr[(oj as i64 * sw as i64 + col_off) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of the convolution output with respect to its input: scatters
/// `dy` back through the kernel. Also the core of the transposed forward.
pub fn conv2d_backward_input(dy: &Tensor, w: &Tensor, spec: &ConvSpec, input_shape: [usize; 4]) -> Result<Tensor> {
    spec.check_weight(w)?;
    let [n, cout, out_h, out_w] = dy.shape();
    if cout != spec.out_channels {
        return Err(Error::Shape(format!(
            "grad has {cout} channels, spec expects {}",
            spec.out_channels
        )));
    }
    if input_shape[0] != n || input_shape[1] != spec.in_channels {
        return Err(Error::Shape(format!("bad input shape {input_shape:?}")));
    }
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.pad();
    let (kh, kw) = spec.kernel;
    let (h, wd) = (input_shape[2], input_shape[3]);

    let mut dx = Tensor::zeros(input_shape);
    for bn in 0..n {
        for o in 0..cout {
            for c in 0..spec.in_channels {
                for p in 0..kh {
                    let row_off = (p * dh) as i64 - ph as i64;
                    for q in 0..kw {
                        let wv = w[[o, c, p, q]];
                        if wv == 0.0 {
                            continue;
                        }
                        let col_off = (q * dw) as i64 - pw as i64;
                        let (lo, hi) = col_range(col_off, sw, wd, out_w);
                        if lo >= hi {
                            continue;
                        }
                        for oi in 0..out_h {
                            let ii = oi as i64 * sh as i64 + row_off;
                            if ii < 0 || ii >= h as i64 {
                                continue;
                            }
                            let dyr = dy.row(bn, o, oi);
                            let dxr = dx.row_mut(bn, c, ii as usize);
                            if sw == 1 {
                                let start = (lo as i64 + col_off) as usize;
                                for (xv, gv) in dxr[start..].iter_mut().zip(&dyr[lo..hi]) {
                                    *xv += wv * gv;
                                }
                            } else {
                                for oj in lo..hi {
                                    dxr[(oj as i64 * sw as i64 + col_off) as usize] += wv * dyr[oj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Gradient with respect to the kernel weights.
pub fn conv2d_backward_weight(dy: &Tensor, x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let [n, cout, out_h, out_w] = dy.shape();
    let [xn, cin, h, wd] = x.shape();
    if xn != n || cin != spec.in_channels || cout != spec.out_channels {
        return Err(Error::Shape("conv weight-grad shape mismatch".into()));
    }
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.pad();
    let (kh, kw) = spec.kernel;

    let mut dw_out = Tensor::zeros(spec.weight_shape());
    for o in 0..cout {
        for c in 0..cin {
            for p in 0..kh {
                let row_off = (p * dh) as i64 - ph as i64;
                for q in 0..kw {
                    let col_off = (q * dw) as i64 - pw as i64;
                    let (lo, hi) = col_range(col_off, sw, wd, out_w);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for bn in 0..n {
                        for oi in 0..out_h {
                            let ii = oi as i64 * sh as i64 + row_off;
                            if ii < 0 || ii >= h as i64 {
                                continue;
                            }
                            let dyr = dy.row(bn, o, oi);
                            let xr = x.row(bn, c, ii as usize);
                            if sw == 1 {
                                let xs = &xr[(lo as i64 + col_off) as usize..];
                                acc += dyr[lo..hi].iter().zip(xs).map(|(g, v)| g * v).sum::<f64>();
                            } else {
                                for oj in lo..hi {
                                    acc += dyr[oj] * xr[(oj as i64 * sw as i64 + col_off) as usize];
                                }
                            }
                        }
                    }
                    dw_out[[o, c, p, q]] = acc;
                }
            }
        }
    }
    Ok(dw_out)
}

/// Gradient with respect to the bias: per-channel sum of `dy`.
pub fn conv2d_backward_bias(dy: &Tensor) -> Tensor {
    let [n, cout, out_h, _] = dy.shape();
    let mut db = Tensor::zeros([1, cout, 1, 1]);
    for bn in 0..n {
        for o in 0..cout {
            let mut acc = 0.0;
            for i in 0..out_h {
                acc += dy.row(bn, o, i).iter().sum::<f64>();
            }
            db[[0, o, 0, 0]] += acc;
        }
    }
    db
}

/// Transposed convolution: the adjoint of the forward conv described by
/// `spec`, mapping `out_channels` activations back to `in_channels`.
/// `bias`, when present, is `[1, in_channels, 1, 1]`.
pub fn conv2d_transposed_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    spec.validate()?;
    spec.check_weight(w)?;
    let [n, cin, h, wd] = x.shape();
    if cin != spec.out_channels {
        return Err(Error::Shape(format!(
            "transposed input has {cin} channels, spec expects {}",
            spec.out_channels
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [1, spec.in_channels, 1, 1] {
            return Err(Error::Shape(format!("transposed bias shape {:?}", b.shape())));
        }
    }
    let (out_h, out_w) = spec.out_size_transposed(h, wd)?;
    let mut out = conv2d_backward_input(x, w, spec, [n, spec.in_channels, out_h, out_w])?;
    if let Some(b) = bias {
        for bn in 0..n {
            for c in 0..spec.in_channels {
                let v = b[[0, c, 0, 0]];
                for i in 0..out_h {
                    for ov in out.row_mut(bn, c, i) {
                        *ov += v;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(shape: [usize; 4]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn identity_one_by_one() {
        let x = ramp([1, 2, 3, 3]);
        // w[o,c,0,0] = delta(o,c)
        let mut w = Tensor::zeros([2, 2, 1, 1]);
        w[[0, 0, 0, 0]] = 1.0;
        w[[1, 1, 0, 0]] = 1.0;
        let b = Tensor::zeros([1, 2, 1, 1]);
        let spec = ConvSpec::new((1, 1), 2, 2);
        let y = conv2d_forward(&x, &w, Some(&b), &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_three_by_three() {
        let x = Tensor::full([1, 1, 5, 5], 1.0);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let spec = ConvSpec::new((3, 3), 1, 1);
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn dilation_two_hits_corner_taps() {
        let x = ramp([1, 1, 5, 5]);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let spec = ConvSpec::new((3, 3), 1, 1).with_dilation((2, 2));
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        // taps at rows/cols {0, 2, 4} of the 5x5 ramp
        let expect: f64 = [0, 2, 4, 10, 12, 14, 20, 22, 24].iter().map(|&v| v as f64).sum();
        assert_eq!(y[[0, 0, 0, 0]], expect);
    }

    #[test]
    fn same_padding_keeps_size() {
        let x = ramp([2, 3, 8, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::rand_uniform([4, 3, 3, 3], -1.0, 1.0, &mut rng);
        let spec = ConvSpec::new((3, 3), 3, 4).with_dilation((2, 2)).with_padding(Padding::Same);
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), [2, 4, 8, 8]);
    }

    #[test]
    fn strided_output_size() {
        let x = ramp([1, 1, 12, 12]);
        let w = Tensor::full([1, 1, 4, 4], 1.0 / 16.0);
        let spec = ConvSpec::new((4, 4), 1, 1).with_stride((4, 4));
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        // each output is the mean of one 4x4 block
        let block_mean = |bi: usize, bj: usize| {
            let mut s = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    s += x[[0, 0, bi * 4 + i, bj * 4 + j]];
                }
            }
            s / 16.0
        };
        for bi in 0..3 {
            for bj in 0..3 {
                assert!((y[[0, 0, bi, bj]] - block_mean(bi, bj)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_single_pixel_paints_kernel() {
        let x = Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        let w = Tensor::from_vec([1, 1, 2, 2], vec![2.0, 3.0, 5.0, 7.0]).unwrap();
        let spec = ConvSpec::new((2, 2), 1, 1).with_stride((2, 2)).transposed();
        let y = conv2d_transposed_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn adjoint_identity_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let specs = [
            ConvSpec::new((3, 3), 2, 3).with_padding(Padding::Same).with_dilation((2, 2)),
            ConvSpec::new((2, 2), 3, 4).with_stride((2, 2)),
            ConvSpec::new((4, 4), 1, 2).with_stride((4, 4)),
            ConvSpec::new((3, 3), 2, 2).with_stride((2, 2)).with_dilation((2, 2)),
        ];
        for spec in specs {
            let (h, w_in) = (8, 8);
            let x = Tensor::rand_uniform([1, spec.in_channels, h, w_in], -1.0, 1.0, &mut rng);
            let w = Tensor::rand_uniform(spec.weight_shape(), -1.0, 1.0, &mut rng);
            let (oh, ow) = spec.out_size(h, w_in).unwrap();
            let y = Tensor::rand_uniform([1, spec.out_channels, oh, ow], -1.0, 1.0, &mut rng);
            let kx = conv2d_forward(&x, &w, None, &spec).unwrap();
            let kty = conv2d_backward_input(&y, &w, &spec, x.shape()).unwrap();
            let lhs = kx.dot(&y).unwrap();
            let rhs = x.dot(&kty).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "adjoint identity broken for {spec:?}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let spec = ConvSpec::new((2, 2), 1, 1).with_padding(Padding::Same);
        assert!(spec.validate().is_err());
        let spec = ConvSpec::new((3, 3), 1, 1).with_stride((2, 2)).with_padding(Padding::Same);
        assert!(spec.validate().is_err());
        let spec = ConvSpec::new((0, 3), 1, 1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rejects_kernel_larger_than_input() {
        let x = Tensor::zeros([1, 1, 4, 4]);
        let w = Tensor::zeros([1, 1, 3, 3]);
        let spec = ConvSpec::new((3, 3), 1, 1).with_dilation((2, 2));
        assert!(conv2d_forward(&x, &w, None, &spec).is_err());
    }
}
