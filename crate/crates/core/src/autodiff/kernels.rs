//! Pure numeric kernels shared by the forward and backward passes.

/// Broadcast two shapes with numpy semantics.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = dim_from_right(a, rank - 1 - i);
        let db = dim_from_right(b, rank - 1 - i);
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], k: usize) -> usize {
    if k < shape.len() {
        shape[shape.len() - 1 - k]
    } else {
        1
    }
}

/// Row-major strides of `shape` aligned to an output of rank `rank`, with
/// zero stride on broadcast dimensions.
pub(crate) fn aligned_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for k in 0..shape.len() {
        let dim = shape[shape.len() - 1 - k];
        let pos = rank - 1 - k;
        strides[pos] = if dim == 1 && out_shape[pos] != 1 { 0 } else { acc };
        acc *= dim;
    }
    strides
}

/// Visit every output position of a broadcast with the matching flat offsets
/// into both operands.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out_shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let last = rank - 1;
    let inner = out_shape[last];
    let (sal, sbl) = (sa[last], sb[last]);
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    while o < n {
        for j in 0..inner {
            f(o + j, ia + j * sal, ib + j * sbl);
        }
        o += inner;
        let mut d = last;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Sum `grad` (laid out as `out_shape`) down onto `in_shape`.
pub(crate) fn reduce_to(grad: &[f64], out_shape: &[usize], in_shape: &[usize], dst: &mut [f64]) {
    if out_shape == in_shape {
        for (d, g) in dst.iter_mut().zip(grad) {
            *d += g;
        }
        return;
    }
    let s = aligned_strides(in_shape, out_shape);
    for_each_broadcast(out_shape, &s, &s, |o, i, _| dst[i] += grad[o]);
}

/// out[m,n] += a[m,k] · b[k,n]
pub(crate) fn mm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,k] += dy[m,n] · b[k,n]ᵀ
pub(crate) fn mm_nt(dy: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let s: f64 = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + p] += s;
        }
    }
}

/// out[k,n] += a[m,k]ᵀ · dy[m,n]
pub(crate) fn mm_tn(a: &[f64], dy: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let drow = &dy[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, d) in orow.iter_mut().zip(drow) {
                *o += av * d;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvDims {
    /// Output positions `t` for which input index `t*stride + k - padding` is in range.
    #[inline]
    fn valid_range(&self, k: usize) -> (usize, usize) {
        // need t*s + k >= p  and  t*s + k - p < len_in
        let lo = if k >= self.padding {
            0
        } else {
            (self.padding - k).div_ceil(self.stride)
        };
        let limit = self.len_in + self.padding; // t*s + k < limit
        let hi = if limit > k {
            ((limit - k - 1) / self.stride + 1).min(self.len_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], out: &mut [f64], d: &ConvDims) {
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let orow = &mut out[(b * d.c_out + co) * d.len_out..][..d.len_out];
            for ci in 0..d.c_in {
                let xrow = &x[(b * d.c_in + ci) * d.len_in..][..d.len_in];
                let wrow = &w[(co * d.c_in + ci) * d.kernel..][..d.kernel];
                for (k, &wv) in wrow.iter().enumerate() {
                    let (lo, hi) = d.valid_range(k);
                    let base = k as isize - d.padding as isize;
                    if d.stride == 1 {
                        let start = (lo as isize + base) as usize;
                        let xs = &xrow[start..start + (hi - lo)];
                        for (o, xv) in orow[lo..hi].iter_mut().zip(xs) {
                            *o += wv * xv;
                        }
                    } else {
                        for t in lo..hi {
                            let xi = (t * d.stride) as isize + base;
                            orow[t] += wv * xrow[xi as usize];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    d: &ConvDims,
) {
    if let Some(dx) = dx {
        for b in 0..d.batch {
            for co in 0..d.c_out {
                let drow = &dy[(b * d.c_out + co) * d.len_out..][..d.len_out];
                for ci in 0..d.c_in {
                    let dxrow = &mut dx[(b * d.c_in + ci) * d.len_in..][..d.len_in];
                    let wrow = &w[(co * d.c_in + ci) * d.kernel..][..d.kernel];
                    for (k, &wv) in wrow.iter().enumerate() {
                        let (lo, hi) = d.valid_range(k);
                        let base = k as isize - d.padding as isize;
                        for t in lo..hi {
                            let xi = ((t * d.stride) as isize + base) as usize;
                            dxrow[xi] += wv * drow[t];
                        }
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..d.batch {
            for co in 0..d.c_out {
                let drow = &dy[(b * d.c_out + co) * d.len_out..][..d.len_out];
                for ci in 0..d.c_in {
                    let xrow = &x[(b * d.c_in + ci) * d.len_in..][..d.len_in];
                    let dwrow = &mut dw[(co * d.c_in + ci) * d.kernel..][..d.kernel];
                    for (k, dwv) in dwrow.iter_mut().enumerate() {
                        let (lo, hi) = d.valid_range(k);
                        let base = k as isize - d.padding as isize;
                        let mut s = 0.0;
                        for t in lo..hi {
                            let xi = ((t * d.stride) as isize + base) as usize;
                            s += xrow[xi] * drow[t];
                        }
                        *dwv += s;
                    }
                }
            }
        }
    }
}

/// Split a shape around `axis` into (outer, axis length, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(x: &[f64], out: &mut [f64], outer: usize, n: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let e = (x[at(j)] - max).exp();
                out[at(j)] = e;
                z += e;
            }
            for j in 0..n {
                out[at(j)] /= z;
            }
        }
    }
}

pub(crate) fn softmax_backward(
    y: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    outer: usize,
    n: usize,
    inner: usize,
) {
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let s: f64 = (0..n).map(|j| dy[at(j)] * y[at(j)]).sum();
            for j in 0..n {
                dx[at(j)] += y[at(j)] * (dy[at(j)] - s);
            }
        }
    }
}
