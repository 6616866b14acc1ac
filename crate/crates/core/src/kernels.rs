//! Raw forward/backward compute kernels used by the autodiff graph.
//!
//! Every kernel is a pure function of its arguments. Parallel loops split the
//! output into disjoint planes, so results do not depend on thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Axis, Scalar, Tensor};

/// Splits the spatial extents around `axis` into `(outer, n, inner)`.
fn axis_layout(spatial: [usize; 3], axis: Axis) -> (usize, usize, usize) {
    let a = axis.spatial_index();
    let outer = spatial[..a].iter().product();
    let inner = spatial[a + 1..].iter().product();
    (outer, spatial[a], inner)
}

/// `dst[a] += w * src[a + shift]` along the axis, for every valid `a`.
#[inline]
fn shift_axpy<T: Scalar>(dst: &mut [T], src: &[T], w: T, layout: (usize, usize, usize), shift: isize) {
    let (outer, n, inner) = layout;
    let n = n as isize;
    let a0 = 0.max(-shift);
    let a1 = n.min(n - shift);
    if a0 >= a1 {
        return;
    }
    let len = ((a1 - a0) as usize) * inner;
    let plane = n as usize * inner;
    for ob in 0..outer {
        let d = ob * plane + a0 as usize * inner;
        let s = ob * plane + (a0 + shift) as usize * inner;
        for (x, &y) in dst[d..d + len].iter_mut().zip(&src[s..s + len]) {
            *x += w * y;
        }
    }
}

/// `Σ_a lhs[a] * rhs[a + shift]` along the axis.
#[inline]
fn shift_dot<T: Scalar>(lhs: &[T], rhs: &[T], layout: (usize, usize, usize), shift: isize) -> T {
    let (outer, n, inner) = layout;
    let n = n as isize;
    let a0 = 0.max(-shift);
    let a1 = n.min(n - shift);
    let mut acc = T::zero();
    if a0 >= a1 {
        return acc;
    }
    let len = ((a1 - a0) as usize) * inner;
    let plane = n as usize * inner;
    for ob in 0..outer {
        let l = ob * plane + a0 as usize * inner;
        let r = ob * plane + (a0 + shift) as usize * inner;
        for (&x, &y) in lhs[l..l + len].iter().zip(&rhs[r..r + len]) {
            acc += x * y;
        }
    }
    acc
}

pub(crate) fn check_axis<T: Scalar>(input: &Tensor<T>, axis: Axis) -> Result<()> {
    if input.rank() < 2 || axis.spatial_index() >= input.spatial_rank() {
        return Err(Error::InvalidAxis {
            axis: axis.to_string(),
            rank: input.rank(),
        });
    }
    Ok(())
}

pub(crate) fn check_conv1d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    axis: Axis,
) -> Result<()> {
    check_axis(input, axis)?;
    if weight.rank() != 3 {
        return Err(Error::shape(
            "conv1d_axis",
            format!("weights must be [Cout, Cin, k], got {:?}", weight.shape()),
        ));
    }
    let k = weight.shape()[2];
    if k.is_multiple_of(2) {
        return Err(Error::EvenKernel { size: k });
    }
    if weight.shape()[1] != input.channels() {
        return Err(Error::shape(
            "conv1d_axis",
            format!(
                "weights expect {} input channels, input has {}",
                weight.shape()[1],
                input.channels()
            ),
        ));
    }
    if bias.len() != weight.shape()[0] {
        return Err(Error::shape(
            "conv1d_axis",
            format!("bias length {} != Cout {}", bias.len(), weight.shape()[0]),
        ));
    }
    Ok(())
}

fn with_channels(shape: &[usize], channels: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[1] = channels;
    s
}

/// Same-padded stride-1 convolution along one spatial axis.
pub fn conv1d_axis<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    axis: Axis,
) -> Result<Tensor<T>> {
    check_conv1d(input, weight, bias, axis)?;
    let (cout, cin, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    let vox = input.voxels();
    let layout = axis_layout(input.spatial(), axis);
    let radius = (k / 2) as isize;
    let mut out = Tensor::zeros(with_channels(input.shape(), cout));
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    out.data_mut()
        .par_chunks_mut(vox)
        .enumerate()
        .for_each(|(plane, dst)| {
            let (bi, co) = (plane / cout, plane % cout);
            dst.fill(b[co]);
            for ci in 0..cin {
                let src = &x[(bi * cin + ci) * vox..(bi * cin + ci + 1) * vox];
                for t in 0..k {
                    let wt = w[(co * cin + ci) * k + t];
                    if wt != T::zero() {
                        shift_axpy(dst, src, wt, layout, t as isize - radius);
                    }
                }
            }
        });
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv1d_axis_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    axis: Axis,
    need_input: bool,
) -> ConvGrads<T> {
    let (cout, cin, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    let batch = input.batch();
    let vox = input.voxels();
    let layout = axis_layout(input.spatial(), axis);
    let radius = (k / 2) as isize;
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();

    let grad_input = need_input.then(|| {
        let mut gi = Tensor::zeros(input.shape().to_vec());
        gi.data_mut()
            .par_chunks_mut(vox)
            .enumerate()
            .for_each(|(plane, dst)| {
                let (bi, ci) = (plane / cin, plane % cin);
                for co in 0..cout {
                    let src = &g[(bi * cout + co) * vox..(bi * cout + co + 1) * vox];
                    for t in 0..k {
                        let wt = w[(co * cin + ci) * k + t];
                        if wt != T::zero() {
                            shift_axpy(dst, src, wt, layout, radius - t as isize);
                        }
                    }
                }
            });
        gi
    });

    let mut gw = Tensor::zeros(weight.shape().to_vec());
    gw.data_mut()
        .par_chunks_mut(cin * k)
        .enumerate()
        .for_each(|(co, dst)| {
            for bi in 0..batch {
                let go = &g[(bi * cout + co) * vox..(bi * cout + co + 1) * vox];
                for ci in 0..cin {
                    let xi = &x[(bi * cin + ci) * vox..(bi * cin + ci + 1) * vox];
                    for t in 0..k {
                        dst[ci * k + t] += shift_dot(go, xi, layout, t as isize - radius);
                    }
                }
            }
        });

    let gb = channel_sums(grad_out);
    ConvGrads {
        input: grad_input,
        weight: gw,
        bias: gb,
    }
}

/// Per-channel sum over batch and voxels.
fn channel_sums<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (c, vox) = (t.channels(), t.voxels());
    let mut out = Tensor::zeros(vec![c]);
    for (plane, chunk) in t.data().chunks(vox).enumerate() {
        out.data_mut()[plane % c] += chunk.iter().copied().sum::<T>();
    }
    out
}

/// 1×1×1 convolution: a per-voxel linear map across channels.
pub fn pointwise_conv<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    if weight.rank() != 2 || weight.shape()[1] != input.channels() || input.rank() < 2 {
        return Err(Error::shape(
            "pointwise_conv",
            format!(
                "weights {:?} incompatible with input {:?}",
                weight.shape(),
                input.shape()
            ),
        ));
    }
    let (cout, cin) = (weight.shape()[0], weight.shape()[1]);
    if bias.len() != cout {
        return Err(Error::shape(
            "pointwise_conv",
            format!("bias length {} != Cout {cout}", bias.len()),
        ));
    }
    let vox = input.voxels();
    let mut out = Tensor::zeros(with_channels(input.shape(), cout));
    let (x, w, b) = (input.data(), weight.data(), bias.data());
    out.data_mut()
        .par_chunks_mut(vox)
        .enumerate()
        .for_each(|(plane, dst)| {
            let (bi, co) = (plane / cout, plane % cout);
            dst.fill(b[co]);
            for ci in 0..cin {
                let wt = w[co * cin + ci];
                if wt == T::zero() {
                    continue;
                }
                let src = &x[(bi * cin + ci) * vox..(bi * cin + ci + 1) * vox];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wt * s;
                }
            }
        });
    Ok(out)
}

pub fn pointwise_conv_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let (cout, cin) = (weight.shape()[0], weight.shape()[1]);
    let batch = input.batch();
    let vox = input.voxels();
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());

    let grad_input = need_input.then(|| {
        let mut gi = Tensor::zeros(input.shape().to_vec());
        gi.data_mut()
            .par_chunks_mut(vox)
            .enumerate()
            .for_each(|(plane, dst)| {
                let (bi, ci) = (plane / cin, plane % cin);
                for co in 0..cout {
                    let wt = w[co * cin + ci];
                    let src = &g[(bi * cout + co) * vox..(bi * cout + co + 1) * vox];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wt * s;
                    }
                }
            });
        gi
    });

    let mut gw = Tensor::zeros(weight.shape().to_vec());
    gw.data_mut()
        .par_chunks_mut(cin)
        .enumerate()
        .for_each(|(co, dst)| {
            for bi in 0..batch {
                let go = &g[(bi * cout + co) * vox..(bi * cout + co + 1) * vox];
                for (ci, slot) in dst.iter_mut().enumerate() {
                    let xi = &x[(bi * cin + ci) * vox..(bi * cin + ci + 1) * vox];
                    *slot += go.iter().zip(xi).map(|(&a, &b)| a * b).sum::<T>();
                }
            }
        });

    ConvGrads {
        input: grad_input,
        weight: gw,
        bias: channel_sums(grad_out),
    }
}

/// Numerically stabilised softmax across the channel axis at every voxel.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() < 2 || input.channels() == 0 {
        return Err(Error::shape(
            "softmax_over_channels",
            format!("need at least one channel, got shape {:?}", input.shape()),
        ));
    }
    let (c, vox) = (input.channels(), input.voxels());
    let mut out = Tensor::zeros(input.shape().to_vec());
    let x = input.data();
    out.data_mut()
        .par_chunks_mut(c * vox)
        .enumerate()
        .for_each(|(bi, dst)| {
            let src = &x[bi * c * vox..(bi + 1) * c * vox];
            for v in 0..vox {
                let mut m = T::neg_infinity();
                for ch in 0..c {
                    m = m.max(src[ch * vox + v]);
                }
                let mut total = T::zero();
                for ch in 0..c {
                    let e = (src[ch * vox + v] - m).exp();
                    dst[ch * vox + v] = e;
                    total += e;
                }
                for ch in 0..c {
                    dst[ch * vox + v] /= total;
                }
            }
        });
    Ok(out)
}

pub fn softmax_channels_backward<T: Scalar>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let (c, vox) = (probs.channels(), probs.voxels());
    let mut gi = Tensor::zeros(probs.shape().to_vec());
    let (p, g) = (probs.data(), grad_out.data());
    gi.data_mut()
        .par_chunks_mut(c * vox)
        .enumerate()
        .for_each(|(bi, dst)| {
            let base = bi * c * vox;
            for v in 0..vox {
                let mut dot = T::zero();
                for ch in 0..c {
                    dot += g[base + ch * vox + v] * p[base + ch * vox + v];
                }
                for ch in 0..c {
                    let i = ch * vox + v;
                    dst[i] = p[base + i] * (g[base + i] - dot);
                }
            }
        });
    gi
}

/// `x[b, c, v] * f[b, 0, v]` with the single factor channel broadcast.
pub fn mul_channel_broadcast<T: Scalar>(x: &Tensor<T>, factor: &Tensor<T>) -> Result<Tensor<T>> {
    if factor.channels() != 1
        || factor.batch() != x.batch()
        || factor.spatial() != x.spatial()
        || factor.rank() != x.rank()
    {
        return Err(Error::shape(
            "mul_channel_broadcast",
            format!("factor {:?} cannot broadcast over {:?}", factor.shape(), x.shape()),
        ));
    }
    let (c, vox) = (x.channels(), x.voxels());
    let f = factor.data();
    let mut out = x.clone();
    for (plane, chunk) in out.data_mut().chunks_mut(vox).enumerate() {
        let fb = &f[(plane / c) * vox..(plane / c + 1) * vox];
        for (d, &s) in chunk.iter_mut().zip(fb) {
            *d *= s;
        }
    }
    Ok(out)
}

pub fn mul_channel_broadcast_backward<T: Scalar>(
    x: &Tensor<T>,
    factor: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (c, vox) = (x.channels(), x.voxels());
    let gx = mul_channel_broadcast(grad_out, factor).expect("shapes checked in forward");
    let mut gf = Tensor::zeros(factor.shape().to_vec());
    let (xd, g) = (x.data(), grad_out.data());
    for (plane, (gc, xc)) in g.chunks(vox).zip(xd.chunks(vox)).enumerate() {
        let dst = &mut gf.data_mut()[(plane / c) * vox..(plane / c + 1) * vox];
        for ((d, &a), &b) in dst.iter_mut().zip(gc).zip(xc) {
            *d += a * b;
        }
    }
    (gx, gf)
}

pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    for t in inputs {
        if t.rank() != first.rank() || t.batch() != first.batch() || t.spatial() != first.spatial() {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} vs {:?}", t.shape(), first.shape()),
            ));
        }
    }
    let total: usize = inputs.iter().map(|t| t.channels()).sum();
    let vox = first.voxels();
    let mut data = Vec::with_capacity(first.batch() * total * vox);
    for bi in 0..first.batch() {
        for t in inputs {
            let c = t.channels();
            data.extend_from_slice(&t.data()[bi * c * vox..(bi + 1) * c * vox]);
        }
    }
    Tensor::new(with_channels(first.shape(), total), data)
}

pub fn slice_channels<T: Scalar>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let c = input.channels();
    if input.rank() < 2 || start + len > c || len == 0 {
        return Err(Error::shape(
            "slice_channels",
            format!("range {start}..{} outside {c} channels", start + len),
        ));
    }
    let vox = input.voxels();
    let mut data = Vec::with_capacity(input.batch() * len * vox);
    for bi in 0..input.batch() {
        let base = (bi * c + start) * vox;
        data.extend_from_slice(&input.data()[base..base + len * vox]);
    }
    Tensor::new(with_channels(input.shape(), len), data)
}

/// Scatters `grad` for a channel slice back into a zero tensor of `full_shape`.
pub(crate) fn unslice_channels<T: Scalar>(
    grad: &Tensor<T>,
    full_shape: &[usize],
    start: usize,
) -> Tensor<T> {
    let mut out = Tensor::zeros(full_shape.to_vec());
    let c = full_shape[1];
    let len = grad.channels();
    let vox = grad.voxels();
    for bi in 0..grad.batch() {
        let dst = (bi * c + start) * vox;
        let src = bi * len * vox;
        out.data_mut()[dst..dst + len * vox].copy_from_slice(&grad.data()[src..src + len * vox]);
    }
    out
}

fn pooled_extents(spatial: [usize; 3], spatial_rank: usize) -> Result<[usize; 3]> {
    let mut out = spatial;
    for (a, slot) in out.iter_mut().enumerate().take(spatial_rank) {
        if !spatial[a].is_multiple_of(2) {
            return Err(Error::shape(
                "max_pool2",
                format!("spatial extents {spatial:?} must be even"),
            ));
        }
        *slot = spatial[a] / 2;
    }
    Ok(out)
}

fn spatial_shape(shape: &[usize], spatial: [usize; 3]) -> Vec<usize> {
    let mut s = shape.to_vec();
    for (slot, &d) in s.iter_mut().skip(2).zip(spatial.iter()) {
        *slot = d;
    }
    s
}

/// 2×2×2 max pooling with stride 2. Returns the output and the flat input index
/// of every selected maximum (first occurrence wins ties).
pub fn max_pool2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let sr = input.spatial_rank();
    let sp = input.spatial();
    let op = pooled_extents(sp, sr)?;
    let planes = input.batch() * input.channels();
    let (ivox, ovox) = (input.voxels(), op.iter().product::<usize>());
    let mut out = Tensor::zeros(spatial_shape(input.shape(), op));
    let mut arg = vec![0usize; planes * ovox];
    let step = |a: usize| if a < sr { 2 } else { 1 };
    let x = input.data();
    out.data_mut()
        .par_chunks_mut(ovox)
        .zip(arg.par_chunks_mut(ovox))
        .enumerate()
        .for_each(|(plane, (dst, am))| {
            let base = plane * ivox;
            for ox in 0..op[0] {
                for oy in 0..op[1] {
                    for oz in 0..op[2] {
                        let mut best = T::neg_infinity();
                        let mut best_i = 0;
                        for dx in 0..step(0) {
                            for dy in 0..step(1) {
                                for dz in 0..step(2) {
                                    let ix = ox * step(0) + dx;
                                    let iy = oy * step(1) + dy;
                                    let iz = oz * step(2) + dz;
                                    let i = base + (ix * sp[1] + iy) * sp[2] + iz;
                                    if x[i] > best {
                                        best = x[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        let o = (ox * op[1] + oy) * op[2] + oz;
                        dst[o] = best;
                        am[o] = best_i;
                    }
                }
            }
        });
    Ok((out, arg))
}

pub fn max_pool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut gi = Tensor::zeros(input_shape.to_vec());
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gi.data_mut()[i] += g;
    }
    gi
}

pub(crate) fn check_conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<()> {
    if input.rank() != 5 || weight.rank() != 5 {
        return Err(Error::shape(
            "conv3d",
            format!("need rank-5 input and weights, got {:?} / {:?}", input.shape(), weight.shape()),
        ));
    }
    let k = weight.shape()[2];
    if k.is_multiple_of(2) {
        return Err(Error::EvenKernel { size: k });
    }
    if weight.shape()[3] != k || weight.shape()[4] != k {
        return Err(Error::shape("conv3d", "kernel must be cubic"));
    }
    if weight.shape()[1] != input.channels() || bias.len() != weight.shape()[0] {
        return Err(Error::shape(
            "conv3d",
            format!("weights {:?} vs input {:?}", weight.shape(), input.shape()),
        ));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    Ok(())
}

fn conv3d_extents(spatial: [usize; 3], k: usize, stride: usize) -> [usize; 3] {
    let pad = k / 2;
    spatial.map(|n| (n + 2 * pad - k) / stride + 1)
}

/// Dense 3D convolution with cubic odd kernel, zero padding `(k-1)/2` and the given stride.
pub fn conv3d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    check_conv3d(input, weight, bias, stride)?;
    let (cout, cin, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    let pad = (k / 2) as isize;
    let sp = input.spatial();
    let op = conv3d_extents(sp, k, stride);
    let (ivox, ovox) = (input.voxels(), op.iter().product::<usize>());
    let mut out = Tensor::zeros(spatial_shape(&with_channels(input.shape(), cout), op));
    let (x, w, b) = (input.data(), weight.data(), bias.data());
    out.data_mut()
        .par_chunks_mut(ovox)
        .enumerate()
        .for_each(|(plane, dst)| {
            let (bi, co) = (plane / cout, plane % cout);
            dst.fill(b[co]);
            for ci in 0..cin {
                let src = &x[(bi * cin + ci) * ivox..(bi * cin + ci + 1) * ivox];
                for tx in 0..k {
                    for ty in 0..k {
                        for tz in 0..k {
                            let wt = w[(((co * cin + ci) * k + tx) * k + ty) * k + tz];
                            if wt == T::zero() {
                                continue;
                            }
                            visit_taps(sp, op, stride, pad, [tx, ty, tz], |o, i| {
                                dst[o] += wt * src[i];
                            });
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Calls `f(out_index, in_index)` for every output voxel whose tap lands inside the input.
#[inline]
fn visit_taps(
    sp: [usize; 3],
    op: [usize; 3],
    stride: usize,
    pad: isize,
    tap: [usize; 3],
    mut f: impl FnMut(usize, usize),
) {
    let coord = |o: usize, t: usize, n: usize| -> Option<usize> {
        let i = (o * stride) as isize + t as isize - pad;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    };
    for ox in 0..op[0] {
        let Some(ix) = coord(ox, tap[0], sp[0]) else { continue };
        for oy in 0..op[1] {
            let Some(iy) = coord(oy, tap[1], sp[1]) else { continue };
            for oz in 0..op[2] {
                let Some(iz) = coord(oz, tap[2], sp[2]) else { continue };
                f((ox * op[1] + oy) * op[2] + oz, (ix * sp[1] + iy) * sp[2] + iz);
            }
        }
    }
}

pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    need_input: bool,
) -> ConvGrads<T> {
    let (cout, cin, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    let pad = (k / 2) as isize;
    let batch = input.batch();
    let sp = input.spatial();
    let op = grad_out.spatial();
    let (ivox, ovox) = (input.voxels(), grad_out.voxels());
    let (x, w, g) = (input.data(), weight.data(), grad_out.data());

    let grad_input = need_input.then(|| {
        let mut gi = Tensor::zeros(input.shape().to_vec());
        gi.data_mut()
            .par_chunks_mut(ivox)
            .enumerate()
            .for_each(|(plane, dst)| {
                let (bi, ci) = (plane / cin, plane % cin);
                for co in 0..cout {
                    let go = &g[(bi * cout + co) * ovox..(bi * cout + co + 1) * ovox];
                    for tx in 0..k {
                        for ty in 0..k {
                            for tz in 0..k {
                                let wt = w[(((co * cin + ci) * k + tx) * k + ty) * k + tz];
                                visit_taps(sp, op, stride, pad, [tx, ty, tz], |o, i| {
                                    dst[i] += wt * go[o];
                                });
                            }
                        }
                    }
                }
            });
        gi
    });

    let k3 = k * k * k;
    let mut gw = Tensor::zeros(weight.shape().to_vec());
    gw.data_mut()
        .par_chunks_mut(cin * k3)
        .enumerate()
        .for_each(|(co, dst)| {
            for bi in 0..batch {
                let go = &g[(bi * cout + co) * ovox..(bi * cout + co + 1) * ovox];
                for ci in 0..cin {
                    let xi = &x[(bi * cin + ci) * ivox..(bi * cin + ci + 1) * ivox];
                    for tx in 0..k {
                        for ty in 0..k {
                            for tz in 0..k {
                                let mut acc = T::zero();
                                visit_taps(sp, op, stride, pad, [tx, ty, tz], |o, i| {
                                    acc += go[o] * xi[i];
                                });
                                dst[ci * k3 + (tx * k + ty) * k + tz] += acc;
                            }
                        }
                    }
                }
            }
        });

    ConvGrads {
        input: grad_input,
        weight: gw,
        bias: channel_sums(grad_out),
    }
}

/// Per-voxel index of the largest channel; ties resolve to the lowest channel.
pub fn argmax_channels<T: Scalar>(input: &Tensor<T>) -> Vec<u32> {
    let (c, vox) = (input.channels(), input.voxels());
    let x = input.data();
    let mut out = Vec::with_capacity(input.batch() * vox);
    for bi in 0..input.batch() {
        for v in 0..vox {
            let mut best = 0;
            for ch in 1..c {
                if x[(bi * c + ch) * vox + v] > x[(bi * c + best) * vox + v] {
                    best = ch;
                }
            }
            out.push(best as u32);
        }
    }
    out
}
