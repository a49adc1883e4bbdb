//! Raw forward and backward kernels over flat row-major buffers.
//!
//! Shapes are validated by the callers in [`crate::tape`]; everything here
//! assumes consistent extents.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{numel, strides};

// ---------------------------------------------------------------------------
// broadcasting

/// Right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for axis in 0..rank {
        let ea = if axis + a.len() >= rank { a[axis + a.len() - rank] } else { 1 };
        let eb = if axis + b.len() >= rank { b[axis + b.len() - rank] } else { 1 };
        out[axis] = match (ea, eb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::dim(format!(
                    "shapes {a:?} and {b:?} do not broadcast: axis {axis} has extents {x} and {y}"
                )))
            }
        };
    }
    Ok(out)
}

/// Strides of `src` laid against `out`, with zero stride on broadcast axes.
fn aligned_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(src);
    let lead = out.len() - src.len();
    (0..out.len())
        .map(|axis| {
            if axis < lead || src[axis - lead] == 1 {
                0
            } else {
                s[axis - lead]
            }
        })
        .collect()
}

/// Calls `f(out_offset, a_offset, b_offset)` for every output element in order.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let sa = aligned_strides(a, out);
    let sb = aligned_strides(b, out);
    let rank = out.len();
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer = numel(out) / inner;
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    for _ in 0..outer {
        let (mut pa, mut pb) = (oa, ob);
        for _ in 0..inner {
            f(o, pa, pb);
            o += 1;
            pa += ia;
            pb += ib;
        }
        // advance the odometer over all but the last axis
        for axis in (0..rank - 1).rev() {
            idx[axis] += 1;
            oa += sa[axis];
            ob += sb[axis];
            if idx[axis] < out[axis] {
                break;
            }
            oa -= sa[axis] * out[axis];
            ob -= sb[axis] * out[axis];
            idx[axis] = 0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineKind {
    Add,
    Mul,
}

pub(crate) fn combine_forward<T: Real>(
    kind: CombineKind,
    a: &[T],
    sa: &[usize],
    b: &[T],
    sb: &[usize],
    out_shape: &[usize],
) -> Vec<T> {
    if sa == sb {
        return match kind {
            CombineKind::Add => a.iter().zip(b).map(|(&x, &y)| x + y).collect(),
            CombineKind::Mul => a.iter().zip(b).map(|(&x, &y)| x * y).collect(),
        };
    }
    let mut out = vec![T::zero(); numel(out_shape)];
    for_each_broadcast(out_shape, sa, sb, |o, i, j| {
        out[o] = match kind {
            CombineKind::Add => a[i] + b[j],
            CombineKind::Mul => a[i] * b[j],
        };
    });
    out
}

/// Gradients of a broadcast combine, reduced back to each operand's shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn combine_backward<T: Real>(
    kind: CombineKind,
    a: &[T],
    sa: &[usize],
    b: &[T],
    sb: &[usize],
    out_shape: &[usize],
    g: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    for_each_broadcast(out_shape, sa, sb, |o, i, j| match kind {
        CombineKind::Add => {
            ga[i] += g[o];
            gb[j] += g[o];
        }
        CombineKind::Mul => {
            ga[i] += g[o] * b[j];
            gb[j] += g[o] * a[i];
        }
    });
    (ga, gb)
}

// ---------------------------------------------------------------------------
// convolution

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 || weight.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects N×C×H×W input and K×C×kh×kw weight, got {x:?} and {weight:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be positive"));
        }
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        let (k, wc, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if wc != c {
            return Err(Error::dim(format!(
                "conv2d weight {weight:?} expects {wc} input channels, input {x:?} has {c}"
            )));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::dim(format!(
                "conv2d kernel {kh}×{kw} larger than padded input {}×{} (input {x:?}, padding {pad})",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Self { n, c, h, w, k, kh, kw, stride, pad, oh, ow })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let l = g.positions();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * l;
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    let dst = &mut cols[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &img[(c * g.h + y as usize) * g.w..(c * g.h + y as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if x < 0 || x >= g.w as isize { T::zero() } else { src[x as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let l = g.positions();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * l;
                for oy in 0..g.oh {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + y as usize) * g.w;
                    for ox in 0..g.ow {
                        let x = (ox * g.stride + j) as isize - g.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            img[base + x as usize] += cols[row + oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (p, l) = (g.patch(), g.positions());
    let img_len = g.c * g.h * g.w;
    let out_len = g.k * l;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); p * l] };
    for n in 0..g.n {
        let img = &x[n * img_len..(n + 1) * img_len];
        let dst = &mut out[n * out_len..(n + 1) * out_len];
        if let Some(b) = bias {
            for (k, row) in dst.chunks_mut(l).enumerate() {
                row.fill(b[k]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let src: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(img, g, &mut cols);
            &cols
        };
        T::gemm(g.k, p, l, T::one(), w, p, 1, src, l, 1, beta, dst, l, 1);
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub x: Option<Vec<T>>,
    pub w: Option<Vec<T>>,
    pub b: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    w: &[T],
    gout: &[T],
    g: &ConvGeom,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (p, l) = (g.patch(), g.positions());
    let img_len = g.c * g.h * g.w;
    let out_len = g.k * l;
    let mut gx = want.0.then(|| vec![T::zero(); x.len()]);
    let mut gw = want.1.then(|| vec![T::zero(); w.len()]);
    let mut gb = want.2.then(|| vec![T::zero(); g.k]);
    let mut cols = vec![T::zero(); p * l];
    for n in 0..g.n {
        let go = &gout[n * out_len..(n + 1) * out_len];
        if let Some(gb) = gb.as_mut() {
            for (k, row) in go.chunks(l).enumerate() {
                gb[k] += row.iter().copied().sum();
            }
        }
        if let Some(gw) = gw.as_mut() {
            let img = &x[n * img_len..(n + 1) * img_len];
            let src: &[T] = if g.is_pointwise() {
                img
            } else {
                im2col(img, g, &mut cols);
                &cols
            };
            // gw (K×P) += gout (K×L) · colsᵀ (L×P)
            T::gemm(g.k, l, p, T::one(), go, l, 1, src, 1, l, T::one(), gw, p, 1);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[n * img_len..(n + 1) * img_len];
            if g.is_pointwise() {
                T::gemm(p, g.k, l, T::one(), w, 1, p, go, l, 1, T::one(), dst, l, 1);
            } else {
                // gcols (P×L) = wᵀ (P×K) · gout (K×L)
                T::gemm(p, g.k, l, T::one(), w, 1, p, go, l, 1, T::zero(), &mut cols, l, 1);
                col2im(&cols, g, dst);
            }
        }
    }
    ConvGrads { x: gx, w: gw, b: gb }
}

// ---------------------------------------------------------------------------
// pooling

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeom {
    pub fn new(x: &[usize], window: usize, stride: usize, pad: usize) -> Result<Self> {
        if x.len() != 4 {
            return Err(Error::dim(format!("pool2d expects N×C×H×W input, got {x:?}")));
        }
        if window == 0 || stride == 0 {
            return Err(Error::dim("pool2d window and stride must be positive"));
        }
        if 2 * pad > window {
            return Err(Error::dim(format!(
                "pool2d padding {pad} must be at most half the window {window}"
            )));
        }
        let (h, w) = (x[2], x[3]);
        if window > h + 2 * pad || window > w + 2 * pad {
            return Err(Error::dim(format!(
                "pool2d window {window} exceeds input {h}×{w} (padding {pad})"
            )));
        }
        Ok(Self {
            planes: x[0] * x[1],
            h,
            w,
            window,
            stride,
            pad,
            oh: (h + 2 * pad - window) / stride + 1,
            ow: (w + 2 * pad - window) / stride + 1,
        })
    }
}

/// Returns the pooled values and, for max pooling, the flat argmax input
/// offset of each output (first occurrence in row-major scan order).
pub(crate) fn pool2d_forward<T: Real>(kind: PoolKind, x: &[T], g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let plane = g.h * g.w;
    let mut out = Vec::with_capacity(g.planes * g.oh * g.ow);
    let mut arg = Vec::new();
    let area = T::of((g.window * g.window) as f64);
    for pl in 0..g.planes {
        let base = pl * plane;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut best = T::neg_infinity();
                let mut best_at = usize::MAX;
                let mut acc = T::zero();
                for i in 0..g.window {
                    let y = (oy * g.stride + i) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    for j in 0..g.window {
                        let xx = (ox * g.stride + j) as isize - g.pad as isize;
                        if xx < 0 || xx >= g.w as isize {
                            continue;
                        }
                        let at = base + y as usize * g.w + xx as usize;
                        let v = x[at];
                        acc += v;
                        if best_at == usize::MAX || v > best {
                            best = v;
                            best_at = at;
                        }
                    }
                }
                match kind {
                    PoolKind::Max => {
                        out.push(best);
                        arg.push(best_at);
                    }
                    PoolKind::Avg => out.push(acc / area),
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn pool2d_backward<T: Real>(
    kind: PoolKind,
    x_len: usize,
    g: &PoolGeom,
    argmax: &[usize],
    gout: &[T],
) -> Vec<T> {
    let mut gx = vec![T::zero(); x_len];
    match kind {
        PoolKind::Max => {
            for (&at, &go) in argmax.iter().zip(gout) {
                gx[at] += go;
            }
        }
        PoolKind::Avg => {
            let plane = g.h * g.w;
            let area = T::of((g.window * g.window) as f64);
            let mut o = 0;
            for pl in 0..g.planes {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let share = gout[o] / area;
                        o += 1;
                        for i in 0..g.window {
                            let y = (oy * g.stride + i) as isize - g.pad as isize;
                            if y < 0 || y >= g.h as isize {
                                continue;
                            }
                            for j in 0..g.window {
                                let xx = (ox * g.stride + j) as isize - g.pad as isize;
                                if xx >= 0 && xx < g.w as isize {
                                    gx[pl * plane + y as usize * g.w + xx as usize] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ReduceKind {
    Sum,
    Mean,
    Max,
}

impl From<PoolKind> for ReduceKind {
    fn from(kind: PoolKind) -> Self {
        match kind {
            PoolKind::Max => ReduceKind::Max,
            PoolKind::Avg => ReduceKind::Mean,
        }
    }
}

/// Reduction of a `(outer, len, inner)` decomposition over the middle axis.
/// Max returns flat argmax offsets (first occurrence).
pub(crate) fn reduce_axis<T: Real>(
    kind: ReduceKind,
    x: &[T],
    outer: usize,
    len: usize,
    inner: usize,
) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(outer * inner);
    let mut arg = Vec::new();
    let n = T::of(len as f64);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    let mut acc = T::zero();
                    for r in 0..len {
                        acc += x[base + r * inner];
                    }
                    out.push(if kind == ReduceKind::Mean { acc / n } else { acc });
                }
                ReduceKind::Max => {
                    let mut best_at = base;
                    for r in 1..len {
                        if x[base + r * inner] > x[best_at] {
                            best_at = base + r * inner;
                        }
                    }
                    out.push(x[best_at]);
                    arg.push(best_at);
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn reduce_axis_backward<T: Real>(
    kind: ReduceKind,
    x_len: usize,
    outer: usize,
    len: usize,
    inner: usize,
    argmax: &[usize],
    gout: &[T],
) -> Vec<T> {
    let mut gx = vec![T::zero(); x_len];
    match kind {
        ReduceKind::Max => {
            for (&at, &go) in argmax.iter().zip(gout) {
                gx[at] += go;
            }
        }
        ReduceKind::Sum | ReduceKind::Mean => {
            let n = if kind == ReduceKind::Mean { T::of(len as f64) } else { T::one() };
            for o in 0..outer {
                for i in 0..inner {
                    let share = gout[o * inner + i] / n;
                    let base = o * len * inner + i;
                    for r in 0..len {
                        gx[base + r * inner] += share;
                    }
                }
            }
        }
    }
    gx
}

/// `(outer, len, inner)` for reducing `axis` of `shape`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

// ---------------------------------------------------------------------------
// softmax

pub(crate) fn softmax_forward<T: Real>(x: &[T], outer: usize, len: usize, inner: usize, log: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = x[base];
            for r in 1..len {
                max = max.max(x[base + r * inner]);
            }
            let mut z = T::zero();
            for r in 0..len {
                let e = (x[base + r * inner] - max).exp();
                out[base + r * inner] = e;
                z += e;
            }
            if log {
                let lz = z.ln();
                for r in 0..len {
                    let at = base + r * inner;
                    out[at] = x[at] - max - lz;
                }
            } else {
                for r in 0..len {
                    out[base + r * inner] /= z;
                }
            }
        }
    }
    out
}

/// Backward of softmax (`log == false`, `y` = probabilities) or log-softmax
/// (`log == true`, `y` = log-probabilities).
pub(crate) fn softmax_backward<T: Real>(
    y: &[T],
    gout: &[T],
    outer: usize,
    len: usize,
    inner: usize,
    log: bool,
) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            if log {
                let mut s = T::zero();
                for r in 0..len {
                    s += gout[base + r * inner];
                }
                for r in 0..len {
                    let at = base + r * inner;
                    gx[at] = gout[at] - y[at].exp() * s;
                }
            } else {
                let mut dot = T::zero();
                for r in 0..len {
                    let at = base + r * inner;
                    dot += gout[at] * y[at];
                }
                for r in 0..len {
                    let at = base + r * inner;
                    gx[at] = y[at] * (gout[at] - dot);
                }
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// standardization (layer norm and batch norm share this)

/// Normalized values plus the per-group statistics used to produce them.
pub(crate) struct Standardized<T> {
    pub xhat: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Standardizes over every element that shares the same index along the
/// middle axis of an `(outer, groups, inner)` view, when `per_middle` is
/// true (batch norm: channel axis), or over the contiguous trailing `inner`
/// block of every `(outer * groups)` row when false (layer norm).
pub(crate) fn standardize<T: Real>(
    x: &[T],
    outer: usize,
    groups: usize,
    inner: usize,
    per_middle: bool,
    eps: T,
) -> Standardized<T> {
    let ngroups = if per_middle { groups } else { outer * groups };
    let count = x.len() / ngroups;
    let cnt = T::of(count as f64);
    let group_of = |at: usize| -> usize {
        if per_middle {
            (at / inner) % groups
        } else {
            at / inner
        }
    };
    let mut mean = vec![T::zero(); ngroups];
    for (at, &v) in x.iter().enumerate() {
        mean[group_of(at)] += v;
    }
    for m in &mut mean {
        *m /= cnt;
    }
    let mut var = vec![T::zero(); ngroups];
    for (at, &v) in x.iter().enumerate() {
        let gi = group_of(at);
        let d = v - mean[gi];
        var[gi] += d * d;
    }
    for v in &mut var {
        *v /= cnt;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let xhat = x
        .iter()
        .enumerate()
        .map(|(at, &v)| {
            let gi = group_of(at);
            (v - mean[gi]) * inv_std[gi]
        })
        .collect();
    Standardized { xhat, mean, var, inv_std }
}

pub(crate) fn standardize_backward<T: Real>(
    xhat: &[T],
    inv_std: &[T],
    gout: &[T],
    groups: usize,
    inner: usize,
    per_middle: bool,
) -> Vec<T> {
    let ngroups = inv_std.len();
    let count = T::of((xhat.len() / ngroups) as f64);
    let group_of = |at: usize| -> usize {
        if per_middle {
            (at / inner) % groups
        } else {
            at / inner
        }
    };
    let mut sum_g = vec![T::zero(); ngroups];
    let mut sum_gx = vec![T::zero(); ngroups];
    for at in 0..xhat.len() {
        let gi = group_of(at);
        sum_g[gi] += gout[at];
        sum_gx[gi] += gout[at] * xhat[at];
    }
    (0..xhat.len())
        .map(|at| {
            let gi = group_of(at);
            inv_std[gi] / count * (count * gout[at] - sum_g[gi] - xhat[at] * sum_gx[gi])
        })
        .collect()
}
