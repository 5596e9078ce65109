//! Direct 3x3x3 convolution with replicate padding.
//!
//! Activations are `voxels x channels` row-major. A layer's weights are a
//! `(27 * c_in) x c_out` row-major matrix whose row `tap * c_in + ci`
//! multiplies input channel `ci` at neighbour `tap`, where
//! `tap = (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)`.
//!
//! The accumulating channel dimension is a const generic so per-voxel sums
//! stay in registers; [`MAX_WIDTH`] bounds the widths that are instantiated.

use crate::grid::Dims;

pub const TAPS: usize = 27;
/// Widest channel dimension the kernels are instantiated for.
pub const MAX_WIDTH: usize = 16;
/// Voxels (or input channels) processed together for independent FMA chains.
const BLOCK: usize = 4;

/// Neighbour tables: the flat voxel index of each of the 27 taps of each
/// voxel, coordinates clamped to the grid. Stored voxel-major and tap-major.
#[derive(Debug, Clone)]
pub struct Neighbours {
    voxels: usize,
    by_voxel: Vec<u32>,
    by_tap: Vec<u32>,
}

impl Neighbours {
    pub fn new(dims: Dims) -> Self {
        let Dims { nz, ny, nx } = dims;
        let voxels = dims.voxels();
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut by_voxel = Vec::with_capacity(voxels * TAPS);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    for dz in -1..=1isize {
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let zz = clamp(z as isize + dz, nz);
                                let yy = clamp(y as isize + dy, ny);
                                let xx = clamp(x as isize + dx, nx);
                                by_voxel.push(((zz * ny + yy) * nx + xx) as u32);
                            }
                        }
                    }
                }
            }
        }
        let mut by_tap = vec![0u32; voxels * TAPS];
        for (v, taps) in by_voxel.chunks_exact(TAPS).enumerate() {
            for (t, &u) in taps.iter().enumerate() {
                by_tap[t * voxels + v] = u;
            }
        }
        Self {
            voxels,
            by_voxel,
            by_tap,
        }
    }

    pub fn voxels(&self) -> usize {
        self.voxels
    }

    fn of_tap(&self, t: usize) -> &[u32] {
        &self.by_tap[t * self.voxels..(t + 1) * self.voxels]
    }
}

#[inline(always)]
fn fmadd(a: f64, b: f64, c: f64) -> f64 {
    #[cfg(target_feature = "fma")]
    {
        a.mul_add(b, c)
    }
    #[cfg(not(target_feature = "fma"))]
    {
        a * b + c
    }
}

macro_rules! by_width {
    ($w:expr, $f:ident($($arg:expr),* $(,)?)) => {
        match $w {
            1 => $f::<1>($($arg),*),
            2 => $f::<2>($($arg),*),
            3 => $f::<3>($($arg),*),
            4 => $f::<4>($($arg),*),
            5 => $f::<5>($($arg),*),
            6 => $f::<6>($($arg),*),
            7 => $f::<7>($($arg),*),
            8 => $f::<8>($($arg),*),
            9 => $f::<9>($($arg),*),
            10 => $f::<10>($($arg),*),
            11 => $f::<11>($($arg),*),
            12 => $f::<12>($($arg),*),
            13 => $f::<13>($($arg),*),
            14 => $f::<14>($($arg),*),
            15 => $f::<15>($($arg),*),
            16 => $f::<16>($($arg),*),
            w => panic!("channel width {w} outside 1..={MAX_WIDTH}"),
        }
    };
}

/// `out[v] = bias + sum_tap W_tap^T input[nb(v, tap)]`.
pub fn conv_forward(
    nb: &Neighbours,
    input: &[f64],
    c_in: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut Vec<f64>,
) {
    let c_out = bias.len();
    assert_eq!(input.len(), nb.voxels * c_in);
    assert_eq!(weights.len(), TAPS * c_in * c_out);
    out.clear();
    out.resize(nb.voxels * c_out, 0.0);
    by_width!(c_out, forward_kernel(nb, input, c_in, weights, bias, out));
}

fn forward_kernel<const N: usize>(
    nb: &Neighbours,
    input: &[f64],
    c_in: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    // Narrow outputs need more voxels in flight to fill the FMA pipeline.
    if N <= 4 {
        forward_blocks::<N, { 2 * BLOCK }>(nb, input, c_in, weights, bias, out)
    } else {
        forward_blocks::<N, BLOCK>(nb, input, c_in, weights, bias, out)
    }
}

fn forward_blocks<const N: usize, const B: usize>(
    nb: &Neighbours,
    input: &[f64],
    c_in: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let bias: [f64; N] = bias.try_into().expect("bias width");
    let (out, _) = out.as_chunks_mut::<N>();
    let (blocks, rest) = out.as_chunks_mut::<B>();
    let done = blocks.len() * B;
    for (b, block) in blocks.iter_mut().enumerate() {
        forward_block(nb, b * B, input, c_in, weights, bias, block);
    }
    for (v, o) in rest.iter_mut().enumerate() {
        forward_block::<N, 1>(nb, done + v, input, c_in, weights, bias, std::array::from_mut(o));
    }
}

/// `B` neighbouring output voxels share every weight row load.
#[inline(always)]
fn forward_block<const N: usize, const B: usize>(
    nb: &Neighbours,
    v0: usize,
    input: &[f64],
    c_in: usize,
    weights: &[f64],
    bias: [f64; N],
    out: &mut [[f64; N]; B],
) {
    let mut acc = [bias; B];
    for tap in 0..TAPS {
        let base: [usize; B] =
            std::array::from_fn(|j| nb.by_voxel[(v0 + j) * TAPS + tap] as usize * c_in);
        let (w, _) = weights[tap * c_in * N..][..c_in * N].as_chunks::<N>();
        for (ci, row) in w.iter().enumerate() {
            for j in 0..B {
                let x = input[base[j] + ci];
                for k in 0..N {
                    acc[j][k] = fmadd(x, row[k], acc[j][k]);
                }
            }
        }
    }
    *out = acc;
}

/// `d_in[nb(v, tap)] += W_tap d_out[v]`, the adjoint of [`conv_forward`]
/// without the bias.
pub fn conv_backward_input(
    nb: &Neighbours,
    d_out: &[f64],
    c_in: usize,
    c_out: usize,
    weights: &[f64],
    d_in: &mut [f64],
) {
    assert_eq!(d_out.len(), nb.voxels * c_out);
    assert_eq!(d_in.len(), nb.voxels * c_in);
    assert_eq!(weights.len(), TAPS * c_in * c_out);
    // Per tap, transpose to c_out x c_in so the accumulation runs over c_in.
    let mut wt = vec![0.0; weights.len()];
    for tap in 0..TAPS {
        for ci in 0..c_in {
            for co in 0..c_out {
                wt[(tap * c_out + co) * c_in + ci] = weights[(tap * c_in + ci) * c_out + co];
            }
        }
    }
    by_width!(c_in, backward_input_kernel(nb, d_out, c_out, &wt, d_in));
}

fn backward_input_kernel<const N: usize>(
    nb: &Neighbours,
    d_out: &[f64],
    c_out: usize,
    wt: &[f64],
    d_in: &mut [f64],
) {
    let voxels = nb.voxels;
    let full = voxels - voxels % BLOCK;
    for v0 in (0..full).step_by(BLOCK) {
        backward_input_block::<N, BLOCK>(nb, v0, d_out, c_out, wt, d_in);
    }
    for v in full..voxels {
        backward_input_block::<N, 1>(nb, v, d_out, c_out, wt, d_in);
    }
}

#[inline(always)]
fn backward_input_block<const N: usize, const B: usize>(
    nb: &Neighbours,
    v0: usize,
    d_out: &[f64],
    c_out: usize,
    wt: &[f64],
    d_in: &mut [f64],
) {
    let dz: [&[f64]; B] = std::array::from_fn(|j| &d_out[(v0 + j) * c_out..][..c_out]);
    for tap in 0..TAPS {
        let mut acc = [[0.0; N]; B];
        let (w, _) = wt[tap * c_out * N..][..c_out * N].as_chunks::<N>();
        for (co, row) in w.iter().enumerate() {
            for j in 0..B {
                let d = dz[j][co];
                for k in 0..N {
                    acc[j][k] = fmadd(d, row[k], acc[j][k]);
                }
            }
        }
        for (j, a) in acc.iter().enumerate() {
            let u = nb.by_voxel[(v0 + j) * TAPS + tap] as usize;
            let dst: &mut [f64; N] = (&mut d_in[u * N..][..N]).try_into().expect("width");
            for k in 0..N {
                dst[k] += a[k];
            }
        }
    }
}

/// Adds `dL/dW` and `dL/db` for a layer with the given input and output gradient.
pub fn conv_backward_weights(
    nb: &Neighbours,
    input: &[f64],
    c_in: usize,
    d_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let c_out = grad_b.len();
    assert_eq!(input.len(), nb.voxels * c_in);
    assert_eq!(d_out.len(), nb.voxels * c_out);
    assert_eq!(grad_w.len(), TAPS * c_in * c_out);
    for row in d_out.chunks_exact(c_out) {
        for (b, d) in grad_b.iter_mut().zip(row) {
            *b += d;
        }
    }
    by_width!(c_out, backward_weights_kernel(nb, input, c_in, d_out, grad_w));
}

fn backward_weights_kernel<const N: usize>(
    nb: &Neighbours,
    input: &[f64],
    c_in: usize,
    d_out: &[f64],
    grad_w: &mut [f64],
) {
    let (d_out, _) = d_out.as_chunks::<N>();
    let full = c_in - c_in % BLOCK;
    for tap in 0..TAPS {
        let taps = nb.of_tap(tap);
        for c0 in (0..full).step_by(BLOCK) {
            weights_block::<N, BLOCK>(taps, input, c_in, c0, d_out, tap, grad_w);
        }
        for ci in full..c_in {
            weights_block::<N, 1>(taps, input, c_in, ci, d_out, tap, grad_w);
        }
    }
}

/// Gradient rows of input channels `c0..c0 + B` at one tap.
#[inline(always)]
fn weights_block<const N: usize, const B: usize>(
    taps: &[u32],
    input: &[f64],
    c_in: usize,
    c0: usize,
    d_out: &[[f64; N]],
    tap: usize,
    grad_w: &mut [f64],
) {
    let mut acc = [[0.0; N]; B];
    for (&u, dz) in taps.iter().zip(d_out) {
        let x: &[f64; B] = input[u as usize * c_in + c0..][..B].try_into().expect("block");
        for j in 0..B {
            for k in 0..N {
                acc[j][k] = fmadd(x[j], dz[k], acc[j][k]);
            }
        }
    }
    for (j, a) in acc.iter().enumerate() {
        let dst: &mut [f64; N] =
            (&mut grad_w[(tap * c_in + c0 + j) * N..][..N]).try_into().expect("width");
        for k in 0..N {
            dst[k] += a[k];
        }
    }
}

/// `softplus(z)` and its derivative `sigmoid(z)`, sharing one `exp(-|z|)`.
#[inline]
pub fn softplus_and_slope(z: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let slope = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (z.max(0.0) + e.ln_1p(), slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(n: usize, a: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * a).sin()).collect()
    }

    /// Nested-loop convolution with explicit clamping.
    fn reference(dims: Dims, input: &[f64], c_in: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
        let c_out = b.len();
        let Dims { nz, ny, nx } = dims;
        let at = |z: isize, y: isize, x: isize| {
            let z = z.clamp(0, nz as isize - 1) as usize;
            let y = y.clamp(0, ny as isize - 1) as usize;
            let x = x.clamp(0, nx as isize - 1) as usize;
            (z * ny + y) * nx + x
        };
        let mut out = vec![0.0; dims.voxels() * c_out];
        for z in 0..nz as isize {
            for y in 0..ny as isize {
                for x in 0..nx as isize {
                    let v = at(z, y, x);
                    for co in 0..c_out {
                        let mut s = b[co];
                        for dz in -1..=1 {
                            for dy in -1..=1 {
                                for dx in -1..=1 {
                                    let tap = ((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1)) as usize;
                                    let u = at(z + dz, y + dy, x + dx);
                                    for ci in 0..c_in {
                                        s += input[u * c_in + ci] * w[(tap * c_in + ci) * c_out + co];
                                    }
                                }
                            }
                        }
                        out[v * c_out + co] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_reference() {
        let dims = Dims::new(3, 2, 4);
        let nb = Neighbours::new(dims);
        for (c_in, c_out) in [(1, 1), (3, 16), (16, 2)] {
            let x = wave(dims.voxels() * c_in, 0.37);
            let w = wave(TAPS * c_in * c_out, 0.11);
            let b = wave(c_out, 0.9);
            let mut out = Vec::new();
            conv_forward(&nb, &x, c_in, &w, &b, &mut out);
            let r = reference(dims, &x, c_in, &w, &b);
            for (a, e) in out.iter().zip(&r) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_input_is_adjoint() {
        let dims = Dims::new(2, 3, 4);
        let nb = Neighbours::new(dims);
        let (c_in, c_out) = (3, 5);
        let x = wave(dims.voxels() * c_in, 0.37);
        let u = wave(dims.voxels() * c_out, 0.23);
        let w = wave(TAPS * c_in * c_out, 0.11);
        let mut y = Vec::new();
        conv_forward(&nb, &x, c_in, &w, &vec![0.0; c_out], &mut y);
        let mut back = vec![0.0; x.len()];
        conv_backward_input(&nb, &u, c_in, c_out, &w, &mut back);
        let lhs: f64 = y.iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn weight_gradient_is_adjoint() {
        // <conv(x; W, b), u> is linear in (W, b) with gradient (grad_w, grad_b).
        let dims = Dims::new(2, 2, 3);
        let nb = Neighbours::new(dims);
        let (c_in, c_out) = (2, 4);
        let x = wave(dims.voxels() * c_in, 0.41);
        let u = wave(dims.voxels() * c_out, 0.17);
        let w = wave(TAPS * c_in * c_out, 0.29);
        let b = wave(c_out, 0.5);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; c_out];
        conv_backward_weights(&nb, &x, c_in, &u, &mut gw, &mut gb);
        let mut y = Vec::new();
        conv_forward(&nb, &x, c_in, &w, &b, &mut y);
        let lhs: f64 = y.iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = w.iter().zip(&gw).map(|(a, g)| a * g).sum::<f64>()
            + b.iter().zip(&gb).map(|(a, g)| a * g).sum::<f64>();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn replicate_padding_on_single_voxel() {
        let nb = Neighbours::new(Dims::new(1, 1, 1));
        let mut out = Vec::new();
        conv_forward(&nb, &[3.0], 1, &[1.0; TAPS], &[0.5], &mut out);
        assert_eq!(out, vec![81.5]);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus_and_slope(800.0), (800.0, 1.0));
        let (v, s) = softplus_and_slope(-800.0);
        assert!(v >= 0.0 && s >= 0.0);
        let (v, s) = softplus_and_slope(0.0);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!((s - 0.5).abs() < 1e-15);
        let (v, s) = softplus_and_slope(-3.0);
        assert!((v - (1.0 + (-3.0f64).exp()).ln()).abs() < 1e-15);
        assert!((s - 1.0 / (1.0 + 3.0f64.exp())).abs() < 1e-15);
    }
}
