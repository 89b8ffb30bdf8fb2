//! Plain slice kernels shared by forward and backward rules.

/// `out[m×n] += a[m×k] · b[k×n]`. Zero entries of `a` are skipped, which
/// pays off on binary spike inputs.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += g[m×n] · b[k×n]ᵀ`
pub(crate) fn matmul_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · g[m×n]`
pub(crate) fn matmul_at_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Geometry of a same-padded 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], stride: usize) -> Self {
        let (batch, in_c, h, w) = (x[0], x[1], x[2], x[3]);
        let (out_c, kh, kw) = (k[0], k[2], k[3]);
        let oh = same_extent(h, stride);
        let ow = same_extent(w, stride);
        let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
        let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
        Self {
            batch,
            in_c,
            h,
            w,
            out_c,
            kh,
            kw,
            stride,
            oh,
            ow,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    /// Input coordinate hit by output position `o` and kernel tap `k`, if it
    /// lands inside the unpadded image.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Output extent under "same" padding: `ceil(len / stride)`.
pub fn same_extent(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

pub(crate) fn conv2d_forward(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.out_c * g.oh * g.ow];
    for b in 0..g.batch {
        for o in 0..g.out_c {
            let obase = (b * g.out_c + o) * g.oh * g.ow;
            for c in 0..g.in_c {
                let xbase = (b * g.in_c + c) * g.h * g.w;
                let kbase = (o * g.in_c + c) * g.kh * g.kw;
                for p in 0..g.kh {
                    for q in 0..g.kw {
                        let kv = k[kbase + p * g.kw + q];
                        if kv == 0.0 {
                            continue;
                        }
                        for i in 0..g.oh {
                            let Some(yi) = ConvGeom::src(i, p, g.stride, g.pad_top, g.h) else {
                                continue;
                            };
                            for j in 0..g.ow {
                                if let Some(xj) = ConvGeom::src(j, q, g.stride, g.pad_left, g.w) {
                                    out[obase + i * g.ow + j] += kv * x[xbase + yi * g.w + xj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input and kernel gradients of [`conv2d_forward`].
pub(crate) fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    dx: Option<&mut [f64]>,
    dk: Option<&mut [f64]>,
) {
    let mut dx = dx;
    let mut dk = dk;
    for b in 0..g.batch {
        for o in 0..g.out_c {
            let obase = (b * g.out_c + o) * g.oh * g.ow;
            for c in 0..g.in_c {
                let xbase = (b * g.in_c + c) * g.h * g.w;
                let kbase = (o * g.in_c + c) * g.kh * g.kw;
                for p in 0..g.kh {
                    for q in 0..g.kw {
                        let kidx = kbase + p * g.kw + q;
                        let kv = k[kidx];
                        let mut kacc = 0.0;
                        for i in 0..g.oh {
                            let Some(yi) = ConvGeom::src(i, p, g.stride, g.pad_top, g.h) else {
                                continue;
                            };
                            for j in 0..g.ow {
                                if let Some(xj) = ConvGeom::src(j, q, g.stride, g.pad_left, g.w) {
                                    let go = gout[obase + i * g.ow + j];
                                    let xi = xbase + yi * g.w + xj;
                                    kacc += go * x[xi];
                                    if let Some(dx) = dx.as_deref_mut() {
                                        dx[xi] += go * kv;
                                    }
                                }
                            }
                        }
                        if let Some(dk) = dk.as_deref_mut() {
                            dk[kidx] += kacc;
                        }
                    }
                }
            }
        }
    }
}
