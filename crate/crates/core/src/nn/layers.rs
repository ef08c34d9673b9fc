//! Layer primitives with explicit forward/backward passes.
//!
//! Spatial activations use a channel-major `[C, B, H, W]` layout so that a
//! 3×3 convolution over a whole batch is a single GEMM against an im2col
//! matrix whose columns run over `(b, y, x)`.

use rand_chacha::ChaCha8Rng;

use super::params::kaiming_uniform;
use super::scalar::{gemm_view, matmul, Mat, View};
use super::{Grads, ParamId, ParamStore, Scalar, Tensor};

/// Batch of feature maps in `[C, B, H, W]` order. Vectors are maps with
/// `H = W = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F> {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> FeatureMap<F> {
    pub fn zeros(c: usize, b: usize, h: usize, w: usize) -> Self {
        FeatureMap {
            c,
            b,
            h,
            w,
            data: vec![F::zero(); c * b * h * w],
        }
    }

    pub fn from_vec(c: usize, b: usize, h: usize, w: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), c * b * h * w, "feature map size mismatch");
        FeatureMap { c, b, h, w, data }
    }

    /// Column batch of vectors: `rows` features × `b` samples.
    pub fn vectors(rows: usize, b: usize, data: Vec<F>) -> Self {
        Self::from_vec(rows, b, 1, 1, data)
    }

    /// Elements per channel (`B·H·W`).
    pub fn plane(&self) -> usize {
        self.b * self.h * self.w
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.c, self.b, self.h, self.w) == (other.c, other.b, other.h, other.w)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).fast_exp())
}

pub fn silu<F: Scalar>(x: &[F]) -> Vec<F> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// `dx = dy · silu'(x)`.
pub fn silu_backward<F: Scalar>(x: &[F], dy: &[F]) -> Vec<F> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * (s + v * s * (F::one() - s))
        })
        .collect()
}

fn add_bias<F: Scalar>(out: &mut [F], bias: &[F], plane: usize) {
    for (row, &b) in out.chunks_mut(plane).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad<F: Scalar>(dy: &[F], plane: usize, db: &mut [F]) {
    for (row, g) in dy.chunks(plane).zip(db.iter_mut()) {
        *g += lane_sum(row);
    }
}

const LANES: usize = 16;

/// Sum with a fixed 16-way split so the compiler can vectorize it; the
/// association order is fixed, so results stay reproducible.
fn lane_sum<F: Scalar>(xs: &[F]) -> F {
    let mut acc = [F::zero(); LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for c in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(c) {
            *a += v;
        }
    }
    let tail: F = chunks.remainder().iter().copied().fold(F::zero(), |a, b| a + b);
    acc.iter().copied().fold(F::zero(), |a, b| a + b) + tail
}

/// `(Σ x·y, Σ y)` with the same fixed lane split as [`lane_sum`].
fn lane_dot_sum<F: Scalar>(xs: &[F], ys: &[F]) -> (F, F) {
    let mut dot = [F::zero(); LANES];
    let mut sum = [F::zero(); LANES];
    let mut xc = xs.chunks_exact(LANES);
    let mut yc = ys.chunks_exact(LANES);
    for (x, y) in (&mut xc).zip(&mut yc) {
        for i in 0..LANES {
            dot[i] += x[i] * y[i];
            sum[i] += y[i];
        }
    }
    let (mut d, mut s) = (F::zero(), F::zero());
    for (&x, &y) in xc.remainder().iter().zip(yc.remainder()) {
        d += x * y;
        s += y;
    }
    let fold = |a: [F; LANES]| a.iter().copied().fold(F::zero(), |a, b| a + b);
    (fold(dot) + d, fold(sum) + s)
}

/// A layer mapping one feature map to another.
pub trait SpatialLayer<F: Scalar> {
    type Cache;

    fn forward(&self, p: &ParamStore<F>, x: &FeatureMap<F>) -> (FeatureMap<F>, Self::Cache);

    /// Accumulates parameter gradients into `g`; returns the input gradient
    /// when `need_dx` is set.
    fn backward(
        &self,
        p: &ParamStore<F>,
        cache: &Self::Cache,
        dy: &FeatureMap<F>,
        g: &mut Grads<F>,
        need_dx: bool,
    ) -> Option<FeatureMap<F>>;
}

/// 3×3 convolution, zero padding 1, stride 1 or 2.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
}

pub enum ConvCache<F> {
    Col {
        col: Vec<F>,
        in_shape: (usize, usize, usize, usize),
    },
    Padded(Padded<F>),
    Input(FeatureMap<F>),
}

/// Zero-bordered copy of a feature map for implicit-GEMM convolution.
///
/// Each `(c, b)` plane is stored as `(h+2) × (w+2)`; every channel row carries
/// an extra `w+3` zero margin on both ends so that all nine 3×3 shifts of the
/// whole row are in-bounds contiguous views. A convolution tap is then one
/// GEMM against a shifted view, computed over the padded grid; border outputs
/// are discarded when unpadding.
pub struct Padded<F> {
    data: Vec<F>,
    c: usize,
    b: usize,
    h: usize,
    w: usize,
}

impl<F: Scalar> Padded<F> {
    fn pw(&self) -> usize {
        self.w + 2
    }

    fn plane(&self) -> usize {
        (self.h + 2) * (self.w + 2)
    }

    /// Padded-grid length per channel.
    fn n(&self) -> usize {
        self.b * self.plane()
    }

    fn margin(&self) -> usize {
        self.w + 3
    }

    fn row(&self) -> usize {
        self.n() + 2 * self.margin()
    }

    fn empty(c: usize, b: usize, h: usize, w: usize) -> Self {
        let mut p = Padded {
            data: Vec::new(),
            c,
            b,
            h,
            w,
        };
        p.data = vec![F::zero(); c * p.row()];
        p
    }

    fn from_map(x: &FeatureMap<F>) -> Self {
        let mut p = Self::empty(x.c, x.b, x.h, x.w);
        let (row, margin, plane, pw) = (p.row(), p.margin(), p.plane(), p.pw());
        for ci in 0..x.c {
            for b in 0..x.b {
                let src = &x.data[(ci * x.b + b) * x.h * x.w..][..x.h * x.w];
                let base = ci * row + margin + b * plane;
                for y in 0..x.h {
                    p.data[base + (y + 1) * pw + 1..][..x.w].copy_from_slice(&src[y * x.w..][..x.w]);
                }
            }
        }
        p
    }

    /// All channels shifted by `(dy, dx)`: a `c × n` view.
    fn shifted(&self, dy: isize, dx: isize) -> View<'_, F> {
        let off = self.margin() as isize + dy * self.pw() as isize + dx;
        View::new(&self.data, off as usize, self.c, self.n(), self.row(), 1)
    }

    /// Offset of the shifted view, for writing gradients into a buffer with
    /// this layout.
    fn shifted_offset(&self, dy: isize, dx: isize) -> usize {
        (self.margin() as isize + dy * self.pw() as isize + dx) as usize
    }

    fn interior(&self) -> FeatureMap<F> {
        unpad(&self.data, self.c, self.row(), self.margin(), self.b, self.h, self.w)
    }
}

/// Extract the interior of `rows` padded-grid rows laid out with stride
/// `row_stride` starting at `base`.
fn unpad<F: Scalar>(buf: &[F], rows: usize, row_stride: usize, base: usize, b: usize, h: usize, w: usize) -> FeatureMap<F> {
    let (pw, plane) = (w + 2, (h + 2) * (w + 2));
    let mut out = FeatureMap::zeros(rows, b, h, w);
    for r in 0..rows {
        for bi in 0..b {
            let dst = &mut out.data[(r * b + bi) * h * w..][..h * w];
            let src = &buf[base + r * row_stride + bi * plane..][..plane];
            for y in 0..h {
                dst[y * w..][..w].copy_from_slice(&src[(y + 1) * pw + 1..][..w]);
            }
        }
    }
    out
}

/// Padded-grid copy (zero borders, no margin) of `x`: `c × b·(h+2)·(w+2)`.
fn pad_plain<F: Scalar>(x: &FeatureMap<F>) -> Vec<F> {
    let (pw, plane) = (x.w + 2, (x.h + 2) * (x.w + 2));
    let n = x.b * plane;
    let mut out = vec![F::zero(); x.c * n];
    for ci in 0..x.c {
        for b in 0..x.b {
            let src = &x.data[(ci * x.b + b) * x.h * x.w..][..x.h * x.w];
            let dst = &mut out[ci * n + b * plane..][..plane];
            for y in 0..x.h {
                dst[(y + 1) * pw + 1..][..x.w].copy_from_slice(&src[y * x.w..][..x.w]);
            }
        }
    }
    out
}

/// Kernel tap `k` of a 3×3 window as a `(dy, dx)` shift.
fn tap_shift(k: usize) -> (isize, isize) {
    (k as isize / 3 - 1, k as isize % 3 - 1)
}

impl Conv2d {
    pub fn new<F: Scalar>(
        p: &mut ParamStore<F>,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = p.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_c, in_c, 3, 3], in_c * 9, rng),
        );
        let bias = p.add(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        Conv2d {
            weight,
            bias,
            in_c,
            out_c,
            stride,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn is_direct(&self) -> bool {
        self.stride == 1 && self.out_c <= DIRECT_MAX_OUT
    }

    fn forward_direct<F: Scalar>(&self, p: &ParamStore<F>, x: &FeatureMap<F>) -> (FeatureMap<F>, ConvCache<F>) {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let wt = p.get(self.weight).data();
        let bias = p.get(self.bias).data();
        let mut out = FeatureMap::zeros(self.out_c, x.b, h, w);
        for o in 0..self.out_c {
            for b in 0..x.b {
                let dst = &mut out.data[(o * x.b + b) * hw..][..hw];
                dst.iter_mut().for_each(|v| *v = bias[o]);
                for ci in 0..self.in_c {
                    let src = &x.data[(ci * x.b + b) * hw..][..hw];
                    for k in 0..9 {
                        let scale = wt[(o * self.in_c + ci) * 9 + k];
                        shifted_axpy(dst, src, h, w, k as isize / 3 - 1, k as isize % 3 - 1, scale);
                    }
                }
            }
        }
        (out, ConvCache::Input(x.clone()))
    }

    fn backward_direct<F: Scalar>(
        &self,
        p: &ParamStore<F>,
        x: &FeatureMap<F>,
        dy: &FeatureMap<F>,
        g: &mut Grads<F>,
        need_dx: bool,
    ) -> Option<FeatureMap<F>> {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        accumulate_bias_grad(&dy.data, dy.plane(), g.get_mut(self.bias).data_mut());
        let dw = g.get_mut(self.weight).data_mut();
        for o in 0..self.out_c {
            for ci in 0..self.in_c {
                for k in 0..9 {
                    let (sy, sx) = (k as isize / 3 - 1, k as isize % 3 - 1);
                    let mut acc = F::zero();
                    for b in 0..x.b {
                        let d = &dy.data[(o * x.b + b) * hw..][..hw];
                        let s = &x.data[(ci * x.b + b) * hw..][..hw];
                        acc += shifted_dot(d, s, h, w, sy, sx);
                    }
                    dw[(o * self.in_c + ci) * 9 + k] += acc;
                }
            }
        }
        if !need_dx {
            return None;
        }
        let wt = p.get(self.weight).data();
        let mut dx = FeatureMap::zeros(x.c, x.b, h, w);
        for ci in 0..self.in_c {
            for b in 0..x.b {
                let dst = &mut dx.data[(ci * x.b + b) * hw..][..hw];
                for o in 0..self.out_c {
                    let src = &dy.data[(o * x.b + b) * hw..][..hw];
                    for k in 0..9 {
                        // out[y] += w·x[y + s]  ⇒  dx[y'] += w·dy[y' − s]
                        let (sy, sx) = (1 - k as isize / 3, 1 - k as isize % 3);
                        shifted_axpy(dst, src, h, w, sy, sx, wt[(o * self.in_c + ci) * 9 + k]);
                    }
                }
            }
        }
        Some(dx)
    }
}

/// Output positions `o` in `0..out` with `0 <= o*stride + off < len`, as a
/// half-open range.
fn valid_range(out: usize, stride: usize, off: isize, len: usize) -> (usize, usize) {
    let lo = if off < 0 {
        ((-off) as usize).div_ceil(stride)
    } else {
        0
    };
    // largest o with o*stride + off <= len - 1
    let hi = if (len as isize - 1 - off) < 0 {
        0
    } else {
        (((len as isize - 1 - off) as usize) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

fn im2col<F: Scalar>(x: &FeatureMap<F>, stride: usize, oh: usize, ow: usize) -> Vec<F> {
    let n = x.b * oh * ow;
    let mut col = vec![F::zero(); x.c * 9 * n];
    for ci in 0..x.c {
        for ky in 0..3 {
            let (y_lo, y_hi) = valid_range(oh, stride, ky as isize - 1, x.h);
            for kx in 0..3 {
                let (x_lo, x_hi) = valid_range(ow, stride, kx as isize - 1, x.w);
                let row = &mut col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for b in 0..x.b {
                    let src = &x.data[(ci * x.b + b) * x.h * x.w..][..x.h * x.w];
                    for oy in y_lo..y_hi {
                        let iy = oy * stride + ky - 1;
                        let dst = &mut row[(b * oh + oy) * ow..][x_lo..x_hi];
                        let first = x_lo * stride + kx - 1;
                        if stride == 1 {
                            dst.copy_from_slice(&src[iy * x.w + first..][..x_hi - x_lo]);
                        } else {
                            let src_row = &src[iy * x.w..][..x.w];
                            for (d, &v) in dst.iter_mut().zip(src_row[first..].iter().step_by(stride)) {
                                *d = v;
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<F: Scalar>(col: &[F], dx: &mut FeatureMap<F>, stride: usize, oh: usize, ow: usize) {
    let n = dx.b * oh * ow;
    let (c, bsz, hh, ww) = (dx.c, dx.b, dx.h, dx.w);
    for ci in 0..c {
        for ky in 0..3 {
            let (y_lo, y_hi) = valid_range(oh, stride, ky as isize - 1, hh);
            for kx in 0..3 {
                let (x_lo, x_hi) = valid_range(ow, stride, kx as isize - 1, ww);
                let row = &col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for b in 0..bsz {
                    let dst = &mut dx.data[(ci * bsz + b) * hh * ww..][..hh * ww];
                    for oy in y_lo..y_hi {
                        let iy = oy * stride + ky - 1;
                        let src = &row[(b * oh + oy) * ow..][x_lo..x_hi];
                        let first = x_lo * stride + kx - 1;
                        let dst_row = &mut dst[iy * ww..][..ww];
                        if stride == 1 {
                            for (d, &s) in dst_row[first..][..src.len()].iter_mut().zip(src) {
                                *d += s;
                            }
                        } else {
                            for (d, &s) in dst_row[first..].iter_mut().step_by(stride).zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `dst[y, x] += scale · src[y + dy, x + dx]` over in-bounds positions of two
/// `h × w` planes.
#[inline]
fn shifted_axpy<F: Scalar>(dst: &mut [F], src: &[F], h: usize, w: usize, dy: isize, dx: isize, scale: F) {
    let (y_lo, y_hi) = valid_range(h, 1, dy, h);
    let (x_lo, x_hi) = valid_range(w, 1, dx, w);
    for y in y_lo..y_hi {
        let sy = (y as isize + dy) as usize;
        let s = &src[sy * w + (x_lo as isize + dx) as usize..][..x_hi - x_lo];
        let d = &mut dst[y * w + x_lo..][..x_hi - x_lo];
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv += scale * sv;
        }
    }
}

/// `Σ a[y, x] · b[y + dy, x + dx]` over in-bounds positions.
#[inline]
fn shifted_dot<F: Scalar>(a: &[F], b: &[F], h: usize, w: usize, dy: isize, dx: isize) -> F {
    let (y_lo, y_hi) = valid_range(h, 1, dy, h);
    let (x_lo, x_hi) = valid_range(w, 1, dx, w);
    let mut acc = F::zero();
    for y in y_lo..y_hi {
        let sy = (y as isize + dy) as usize;
        let bs = &b[sy * w + (x_lo as isize + dx) as usize..][..x_hi - x_lo];
        let as_ = &a[y * w + x_lo..][..x_hi - x_lo];
        acc += as_.iter().zip(bs).map(|(&p, &q)| p * q).sum::<F>();
    }
    acc
}

/// Below this many output channels a stride-1 convolution is evaluated
/// directly with shifted plane updates instead of im2col + GEMM.
const DIRECT_MAX_OUT: usize = 2;

impl<F: Scalar> SpatialLayer<F> for Conv2d {
    type Cache = ConvCache<F>;

    fn forward(&self, p: &ParamStore<F>, x: &FeatureMap<F>) -> (FeatureMap<F>, ConvCache<F>) {
        assert_eq!(x.c, self.in_c, "conv input channels");
        if self.is_direct() {
            return self.forward_direct(p, x);
        }
        // Implicit GEMM needs enough input channels per tap to beat im2col.
        if self.stride == 1 && self.in_c >= 8 {
            return self.forward_padded(p, x);
        }
        let (oh, ow) = self.out_hw(x.h, x.w);
        let col = im2col(x, self.stride, oh, ow);
        let n = x.b * oh * ow;
        let mut out = FeatureMap::zeros(self.out_c, x.b, oh, ow);
        let w = p.get(self.weight).data();
        matmul(
            Mat::new(w, self.out_c, self.in_c * 9),
            Mat::new(&col, self.in_c * 9, n),
            F::zero(),
            &mut out.data,
        );
        add_bias(&mut out.data, p.get(self.bias).data(), n);
        let cache = ConvCache::Col {
            col,
            in_shape: (x.c, x.b, x.h, x.w),
        };
        (out, cache)
    }

    fn backward(
        &self,
        p: &ParamStore<F>,
        cache: &ConvCache<F>,
        dy: &FeatureMap<F>,
        g: &mut Grads<F>,
        need_dx: bool,
    ) -> Option<FeatureMap<F>> {
        let (col, in_shape) = match cache {
            ConvCache::Input(x) => return self.backward_direct(p, x, dy, g, need_dx),
            ConvCache::Padded(xp) => return self.backward_padded(p, xp, dy, g, need_dx),
            ConvCache::Col { col, in_shape } => (col, *in_shape),
        };
        let n = dy.plane();
        let k = self.in_c * 9;
        matmul(
            Mat::new(&dy.data, self.out_c, n),
            Mat::new(col, k, n).t(),
            F::one(),
            g.get_mut(self.weight).data_mut(),
        );
        accumulate_bias_grad(&dy.data, n, g.get_mut(self.bias).data_mut());
        if !need_dx {
            return None;
        }
        let mut dcol = vec![F::zero(); k * n];
        matmul(
            Mat::new(p.get(self.weight).data(), self.out_c, k).t(),
            Mat::new(&dy.data, self.out_c, n),
            F::zero(),
            &mut dcol,
        );
        let (c, b, h, w) = in_shape;
        let mut dx = FeatureMap::zeros(c, b, h, w);
        col2im(&dcol, &mut dx, self.stride, dy.h, dy.w);
        Some(dx)
    }
}

impl Conv2d {
    /// Weight slice for tap `k` as an `out × in` view.
    fn tap_view<'a, F: Scalar>(&self, w: &'a [F], k: usize) -> View<'a, F> {
        View::new(w, k, self.out_c, self.in_c, self.in_c * 9, 9)
    }

    fn forward_padded<F: Scalar>(&self, p: &ParamStore<F>, x: &FeatureMap<F>) -> (FeatureMap<F>, ConvCache<F>) {
        let xp = Padded::from_map(x);
        let n = xp.n();
        let w = p.get(self.weight).data();
        let mut outp = vec![F::zero(); self.out_c * n];
        for k in 0..9 {
            let (dy, dx) = tap_shift(k);
            let beta = if k == 0 { F::zero() } else { F::one() };
            gemm_view(self.tap_view(w, k), xp.shifted(dy, dx), beta, &mut outp, 0, n, 1);
        }
        let mut out = unpad(&outp, self.out_c, n, 0, x.b, x.h, x.w);
        let plane = out.plane();
        add_bias(&mut out.data, p.get(self.bias).data(), plane);
        (out, ConvCache::Padded(xp))
    }

    fn backward_padded<F: Scalar>(
        &self,
        p: &ParamStore<F>,
        xp: &Padded<F>,
        dy: &FeatureMap<F>,
        g: &mut Grads<F>,
        need_dx: bool,
    ) -> Option<FeatureMap<F>> {
        let n = xp.n();
        let dyp = pad_plain(dy);
        let dyv = View::new(&dyp, 0, self.out_c, n, n, 1);
        accumulate_bias_grad(&dy.data, dy.plane(), g.get_mut(self.bias).data_mut());
        let dw = g.get_mut(self.weight).data_mut();
        for k in 0..9 {
            let (sy, sx) = tap_shift(k);
            gemm_view(dyv, xp.shifted(sy, sx).t(), F::one(), dw, k, self.in_c * 9, 9);
        }
        if !need_dx {
            return None;
        }
        let w = p.get(self.weight).data();
        let mut dxp = Padded::empty(xp.c, xp.b, xp.h, xp.w);
        let row = dxp.row();
        for k in 0..9 {
            let (sy, sx) = tap_shift(k);
            let off = xp.shifted_offset(sy, sx);
            gemm_view(self.tap_view(w, k).t(), dyv, F::one(), &mut dxp.data, off, row, 1);
        }
        Some(dxp.interior())
    }
}

/// Nearest-neighbour ×2 upsampling followed by a 3×3 convolution (padding 1).
///
/// Evaluated without materializing the upsampled map: each of the four output
/// phases `(py, px)` is a 2×2 convolution over the low-resolution input whose
/// kernel sums the 3×3 taps that land on the same source pixel. The result is
/// identical to upsample-then-convolve.
#[derive(Debug, Clone)]
pub struct UpConv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_c: usize,
    pub out_c: usize,
}

pub struct UpConvCache<F> {
    input: Padded<F>,
    /// Per phase: folded kernels laid out `[tap][out][in]`.
    weff: [Vec<F>; 4],
}

/// For output phase `p` and 2×2 tap `a`: the source offset and the 3×3 kernel
/// indices folded into that tap.
const PHASE_TAPS: [[(isize, &[usize]); 2]; 2] = [
    [(-1, &[0]), (0, &[1, 2])],
    [(0, &[0, 1]), (1, &[2])],
];

impl UpConv {
    pub fn new<F: Scalar>(
        p: &mut ParamStore<F>,
        name: &str,
        in_c: usize,
        out_c: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = p.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_c, in_c, 3, 3], in_c * 9, rng),
        );
        let bias = p.add(format!("{name}.bias"), Tensor::zeros(&[out_c]));
        UpConv {
            weight,
            bias,
            in_c,
            out_c,
        }
    }

    fn taps(py: usize, px: usize) -> impl Iterator<Item = (usize, isize, isize, &'static [usize], &'static [usize])> {
        (0..4).map(move |tap| {
            let (a, bb) = (tap / 2, tap % 2);
            let (oy, kys) = PHASE_TAPS[py][a];
            let (ox, kxs) = PHASE_TAPS[px][bb];
            (tap, oy, ox, kys, kxs)
        })
    }

    fn effective_kernel<F: Scalar>(&self, w: &[F], py: usize, px: usize) -> Vec<F> {
        let block = self.out_c * self.in_c;
        let mut weff = vec![F::zero(); 4 * block];
        for (tap, _, _, kys, kxs) in Self::taps(py, px) {
            for oc in 0..block {
                let src = &w[oc * 9..][..9];
                let mut s = F::zero();
                for &ky in kys {
                    for &kx in kxs {
                        s += src[ky * 3 + kx];
                    }
                }
                weff[tap * block + oc] = s;
            }
        }
        weff
    }
}

impl<F: Scalar> SpatialLayer<F> for UpConv {
    type Cache = UpConvCache<F>;

    fn forward(&self, p: &ParamStore<F>, x: &FeatureMap<F>) -> (FeatureMap<F>, UpConvCache<F>) {
        assert_eq!(x.c, self.in_c, "up-conv input channels");
        let xp = Padded::from_map(x);
        let (n, plane, pw) = (xp.n(), xp.plane(), xp.pw());
        let (oh, ow) = (x.h * 2, x.w * 2);
        let block = self.out_c * self.in_c;
        let mut out = FeatureMap::zeros(self.out_c, x.b, oh, ow);
        let w = p.get(self.weight).data();
        let bias = p.get(self.bias).data();
        let mut outp = vec![F::zero(); self.out_c * n];
        let mut weffs: [Vec<F>; 4] = Default::default();
        for (phase, slot) in weffs.iter_mut().enumerate() {
            let (py, px) = (phase / 2, phase % 2);
            let weff = self.effective_kernel(w, py, px);
            for (tap, oy, ox, _, _) in Self::taps(py, px) {
                let wv = View::new(&weff, tap * block, self.out_c, self.in_c, self.in_c, 1);
                let beta = if tap == 0 { F::zero() } else { F::one() };
                gemm_view(wv, xp.shifted(oy, ox), beta, &mut outp, 0, n, 1);
            }
            for o in 0..self.out_c {
                for b in 0..x.b {
                    let src = &outp[o * n + b * plane..][..plane];
                    let dst = &mut out.data[(o * x.b + b) * oh * ow..][..oh * ow];
                    for y in 0..x.h {
                        let s = &src[(y + 1) * pw + 1..][..x.w];
                        let d = &mut dst[(2 * y + py) * ow..][..ow];
                        for (xx, &v) in s.iter().enumerate() {
                            d[2 * xx + px] = v + bias[o];
                        }
                    }
                }
            }
            *slot = weff;
        }
        (out, UpConvCache { input: xp, weff: weffs })
    }

    fn backward(
        &self,
        p: &ParamStore<F>,
        cache: &UpConvCache<F>,
        dy: &FeatureMap<F>,
        g: &mut Grads<F>,
        need_dx: bool,
    ) -> Option<FeatureMap<F>> {
        let _ = p;
        let xp = &cache.input;
        let (n, plane, pw) = (xp.n(), xp.plane(), xp.pw());
        let (b, h, w) = (xp.b, xp.h, xp.w);
        let (oh, ow) = (dy.h, dy.w);
        let block = self.out_c * self.in_c;
        accumulate_bias_grad(&dy.data, dy.plane(), g.get_mut(self.bias).data_mut());
        let mut dxp = need_dx.then(|| Padded::<F>::empty(xp.c, b, h, w));
        let mut dyp = vec![F::zero(); self.out_c * n];
        let mut dweff = vec![F::zero(); block];
        for phase in 0..4 {
            let (py, px) = (phase / 2, phase % 2);
            for o in 0..self.out_c {
                for bi in 0..b {
                    let src = &dy.data[(o * b + bi) * oh * ow..][..oh * ow];
                    let dst = &mut dyp[o * n + bi * plane..][..plane];
                    for y in 0..h {
                        let s = &src[(2 * y + py) * ow..][..ow];
                        let d = &mut dst[(y + 1) * pw + 1..][..w];
                        for (xx, v) in d.iter_mut().enumerate() {
                            *v = s[2 * xx + px];
                        }
                    }
                }
            }
            let dyv = View::new(&dyp, 0, self.out_c, n, n, 1);
            for (tap, oy, ox, kys, kxs) in Self::taps(py, px) {
                gemm_view(dyv, xp.shifted(oy, ox).t(), F::zero(), &mut dweff, 0, self.in_c, 1);
                let dw = g.get_mut(self.weight).data_mut();
                for (oc, &v) in dweff.iter().enumerate() {
                    let dst = &mut dw[oc * 9..][..9];
                    for &ky in kys {
                        for &kx in kxs {
                            dst[ky * 3 + kx] += v;
                        }
                    }
                }
                if let Some(dxp) = dxp.as_mut() {
                    let wv = View::new(&cache.weff[phase], tap * block, self.out_c, self.in_c, self.in_c, 1);
                    let (off, row) = (xp.shifted_offset(oy, ox), xp.row());
                    gemm_view(wv.t(), dyv, F::one(), &mut dxp.data, off, row, 1);
                }
            }
        }
        dxp.map(|d| d.interior())
    }
}

/// Nearest-neighbour ×2 upsampling. Used as the reference path for [`UpConv`].
pub fn upsample_nearest<F: Scalar>(x: &FeatureMap<F>) -> FeatureMap<F> {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = FeatureMap::zeros(x.c, x.b, oh, ow);
    for (plane_in, plane_out) in x.data.chunks(x.h * x.w).zip(out.data.chunks_mut(oh * ow)) {
        for y in 0..oh {
            for xx in 0..ow {
                plane_out[y * ow + xx] = plane_in[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

/// Fully connected layer over column vectors: `y = W·x + b`, `W` is
/// `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_f: usize,
    pub out_f: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        p: &mut ParamStore<F>,
        name: &str,
        in_f: usize,
        out_f: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = p.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_f, in_f], in_f, rng),
        );
        let bias = p.add(format!("{name}.bias"), Tensor::zeros(&[out_f]));
        Linear {
            weight,
            bias,
            in_f,
            out_f,
        }
    }

    /// FiLM generator: zero weights, bias 1 on the first `channels` outputs
    /// (scale) and 0 on the rest (shift).
    pub fn new_film<F: Scalar>(p: &mut ParamStore<F>, name: &str, in_f: usize, channels: usize) -> Self {
        let weight = p.add(format!("{name}.weight"), Tensor::zeros(&[2 * channels, in_f]));
        let mut bias = Tensor::zeros(&[2 * channels]);
        bias.data_mut()[..channels].iter_mut().for_each(|v| *v = F::one());
        let bias = p.add(format!("{name}.bias"), bias);
        Linear {
            weight,
            bias,
            in_f,
            out_f: 2 * channels,
        }
    }

    pub fn forward<F: Scalar>(&self, p: &ParamStore<F>, x: &FeatureMap<F>) -> FeatureMap<F> {
        assert_eq!(x.c, self.in_f, "linear input features");
        assert_eq!(x.h * x.w, 1, "linear expects vectors");
        let mut out = FeatureMap::zeros(self.out_f, x.b, 1, 1);
        matmul(
            Mat::new(p.get(self.weight).data(), self.out_f, self.in_f),
            Mat::new(&x.data, self.in_f, x.b),
            F::zero(),
            &mut out.data,
        );
        add_bias(&mut out.data, p.get(self.bias).data(), x.b);
        out
    }

    /// `x` is the forward input; returns `dx` when requested.
    pub fn backward<F: Scalar>(
        &self,
        p: &ParamStore<F>,
        x: &FeatureMap<F>,
        dy: &FeatureMap<F>,
        g: &mut Grads<F>,
        need_dx: bool,
    ) -> Option<FeatureMap<F>> {
        matmul(
            Mat::new(&dy.data, self.out_f, dy.b),
            Mat::new(&x.data, self.in_f, x.b).t(),
            F::one(),
            g.get_mut(self.weight).data_mut(),
        );
        accumulate_bias_grad(&dy.data, dy.b, g.get_mut(self.bias).data_mut());
        need_dx.then(|| {
            let mut dx = FeatureMap::zeros(self.in_f, x.b, 1, 1);
            matmul(
                Mat::new(p.get(self.weight).data(), self.out_f, self.in_f).t(),
                Mat::new(&dy.data, self.out_f, dy.b),
                F::zero(),
                &mut dx.data,
            );
            dx
        })
    }
}

/// Per-channel affine modulation: `y[c,b,:] = x[c,b,:]·gb[c,b] + gb[C+c,b]`.
pub fn film<F: Scalar>(x: &FeatureMap<F>, gb: &FeatureMap<F>) -> FeatureMap<F> {
    assert_eq!(gb.c, 2 * x.c);
    assert_eq!(gb.b, x.b);
    let hw = x.h * x.w;
    let mut out = x.clone();
    for c in 0..x.c {
        for b in 0..x.b {
            let scale = gb.data[c * x.b + b];
            let shift = gb.data[(x.c + c) * x.b + b];
            out.data[(c * x.b + b) * hw..][..hw]
                .iter_mut()
                .for_each(|v| *v = *v * scale + shift);
        }
    }
    out
}

/// Returns `(dx, dgb)`.
pub fn film_backward<F: Scalar>(
    x: &FeatureMap<F>,
    gb: &FeatureMap<F>,
    dy: &FeatureMap<F>,
) -> (FeatureMap<F>, FeatureMap<F>) {
    let hw = x.h * x.w;
    let mut dx = dy.clone();
    let mut dgb = FeatureMap::zeros(gb.c, gb.b, 1, 1);
    for c in 0..x.c {
        for b in 0..x.b {
            let off = (c * x.b + b) * hw;
            let scale = gb.data[c * x.b + b];
            let xs = &x.data[off..][..hw];
            let gs = &dy.data[off..][..hw];
            let (dscale, dshift) = lane_dot_sum(xs, gs);
            dgb.data[c * x.b + b] = dscale;
            dgb.data[(x.c + c) * x.b + b] = dshift;
            dx.data[off..][..hw].iter_mut().for_each(|v| *v *= scale);
        }
    }
    (dx, dgb)
}

/// Convolution → FiLM(cond) → SiLU.
#[derive(Debug, Clone)]
pub struct FilmBlock<L> {
    pub conv: L,
    pub film: Linear,
}

pub struct FilmBlockCache<F, C> {
    conv: C,
    pre_film: FeatureMap<F>,
    gb: FeatureMap<F>,
    pre_act: FeatureMap<F>,
}

impl<L> FilmBlock<L> {
    pub fn forward<F: Scalar>(
        &self,
        p: &ParamStore<F>,
        x: &FeatureMap<F>,
        cond: &FeatureMap<F>,
    ) -> (FeatureMap<F>, FilmBlockCache<F, L::Cache>)
    where
        L: SpatialLayer<F>,
    {
        let (pre_film, conv) = self.conv.forward(p, x);
        let gb = self.film.forward(p, cond);
        let pre_act = film(&pre_film, &gb);
        let out = FeatureMap::from_vec(pre_act.c, pre_act.b, pre_act.h, pre_act.w, silu(&pre_act.data));
        (
            out,
            FilmBlockCache {
                conv,
                pre_film,
                gb,
                pre_act,
            },
        )
    }

    /// Returns `(dx, dcond)`.
    pub fn backward<F: Scalar>(
        &self,
        p: &ParamStore<F>,
        cache: &FilmBlockCache<F, L::Cache>,
        cond: &FeatureMap<F>,
        dy: &FeatureMap<F>,
        g: &mut Grads<F>,
        need_dx: bool,
    ) -> (Option<FeatureMap<F>>, FeatureMap<F>)
    where
        L: SpatialLayer<F>,
    {
        let pa = &cache.pre_act;
        let dpre = FeatureMap::from_vec(pa.c, pa.b, pa.h, pa.w, silu_backward(&pa.data, &dy.data));
        let (dconv_out, dgb) = film_backward(&cache.pre_film, &cache.gb, &dpre);
        let dcond = self
            .film
            .backward(p, cond, &dgb, g, true)
            .expect("requested dx");
        let dx = self.conv.backward(p, &cache.conv, &dconv_out, g, need_dx);
        (dx, dcond)
    }
}
