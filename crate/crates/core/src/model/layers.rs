//! Layer kernels with explicit forward caches and backward passes.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{gemm, Op};

/// Geometry of a 2-d convolution with a square kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.cin * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.cout * self.out_height() * self.out_width()
    }

    /// Rows of the im2col matrix.
    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let p = oh * ow;
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * ow + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.height
                                && (ix as usize) < self.width
                            {
                                x[(ci * self.height + iy as usize) * self.width + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        let p = oh * ow;
        for ci in 0..self.cin {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.height {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.width {
                                continue;
                            }
                            dx[(ci * self.height + iy as usize) * self.width + ix as usize] +=
                                src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = W x` for a single sample (no bias): the linear operator of the layer.
pub fn conv_apply(g: &ConvGeometry, kernel: &[f64], x: &[f64]) -> Vec<f64> {
    let mut cols = vec![0.0; g.patch_len() * g.positions()];
    g.im2col(x, &mut cols);
    let mut y = vec![0.0; g.out_len()];
    gemm(Op::N, Op::N, g.cout, g.positions(), g.patch_len(), 1.0, kernel, &cols, 0.0, &mut y);
    y
}

/// `x = W^T y` for a single sample: the adjoint of [`conv_apply`].
pub fn conv_apply_adjoint(g: &ConvGeometry, kernel: &[f64], y: &[f64]) -> Vec<f64> {
    let mut dcols = vec![0.0; g.patch_len() * g.positions()];
    gemm(Op::T, Op::N, g.patch_len(), g.positions(), g.cout, 1.0, kernel, y, 0.0, &mut dcols);
    let mut x = vec![0.0; g.in_len()];
    g.col2im(&dcols, &mut x);
    x
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Dense {
        weight: usize,
        bias: Option<usize>,
        inputs: usize,
        outputs: usize,
    },
    Conv {
        weight: usize,
        bias: Option<usize>,
        geom: ConvGeometry,
    },
    Relu,
    GlobalAvgPool {
        channels: usize,
        spatial: usize,
    },
    /// `body(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual {
        body: Vec<Layer>,
        shortcut: Vec<Layer>,
    },
}

pub(crate) enum Cache {
    Input(Vec<f64>),
    Mask(Vec<bool>),
    None,
    Residual {
        body: Vec<Cache>,
        shortcut: Vec<Cache>,
    },
}

/// Group offsets into the flat parameter vector.
pub(crate) struct Slots<'a> {
    pub offsets: &'a [usize],
    pub lens: &'a [usize],
}

impl Slots<'_> {
    fn range(&self, g: usize) -> core::ops::Range<usize> {
        self.offsets[g]..self.offsets[g] + self.lens[g]
    }
}

pub(crate) fn forward(
    layers: &[Layer],
    slots: &Slots,
    values: &[f64],
    mut x: Vec<f64>,
    n: usize,
    mut caches: Option<&mut Vec<Cache>>,
) -> Vec<f64> {
    for layer in layers {
        let (y, cache) = forward_one(layer, slots, values, x, n, caches.is_some());
        if let Some(c) = caches.as_deref_mut() {
            c.push(cache);
        }
        x = y;
    }
    x
}

fn forward_one(
    layer: &Layer,
    slots: &Slots,
    values: &[f64],
    x: Vec<f64>,
    n: usize,
    keep: bool,
) -> (Vec<f64>, Cache) {
    match layer {
        Layer::Dense {
            weight,
            bias,
            inputs,
            outputs,
        } => {
            let w = &values[slots.range(*weight)];
            let mut y = vec![0.0; n * outputs];
            if let Some(b) = bias {
                let b = &values[slots.range(*b)];
                for row in y.chunks_exact_mut(*outputs) {
                    row.copy_from_slice(b);
                }
                gemm(Op::N, Op::T, n, *outputs, *inputs, 1.0, &x, w, 1.0, &mut y);
            } else {
                gemm(Op::N, Op::T, n, *outputs, *inputs, 1.0, &x, w, 0.0, &mut y);
            }
            (y, if keep { Cache::Input(x) } else { Cache::None })
        }
        Layer::Conv { weight, bias, geom } => {
            let w = &values[slots.range(*weight)];
            let (il, ol, p) = (geom.in_len(), geom.out_len(), geom.positions());
            let mut y = vec![0.0; n * ol];
            let mut cols = vec![0.0; geom.patch_len() * p];
            for s in 0..n {
                geom.im2col(&x[s * il..(s + 1) * il], &mut cols);
                let ys = &mut y[s * ol..(s + 1) * ol];
                let beta = if let Some(b) = bias {
                    let b = &values[slots.range(*b)];
                    for (co, chunk) in ys.chunks_exact_mut(p).enumerate() {
                        chunk.iter_mut().for_each(|v| *v = b[co]);
                    }
                    1.0
                } else {
                    0.0
                };
                gemm(Op::N, Op::N, geom.cout, p, geom.patch_len(), 1.0, w, &cols, beta, ys);
            }
            (y, if keep { Cache::Input(x) } else { Cache::None })
        }
        Layer::Relu => {
            let mut y = x;
            let mask: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
            for (v, &m) in y.iter_mut().zip(&mask) {
                if !m {
                    *v = 0.0;
                }
            }
            (y, if keep { Cache::Mask(mask) } else { Cache::None })
        }
        Layer::GlobalAvgPool { channels, spatial } => {
            let inv = 1.0 / *spatial as f64;
            let y: Vec<f64> = x
                .chunks_exact(*spatial)
                .map(|c| c.iter().sum::<f64>() * inv)
                .collect();
            debug_assert_eq!(y.len(), n * channels);
            (y, Cache::None)
        }
        Layer::Residual { body, shortcut } => {
            let mut body_caches = Vec::new();
            let mut short_caches = Vec::new();
            let side = if shortcut.is_empty() {
                None
            } else {
                Some(forward(
                    shortcut,
                    slots,
                    values,
                    x.clone(),
                    n,
                    keep.then_some(&mut short_caches),
                ))
            };
            let mut y = forward(body, slots, values, x.clone(), n, keep.then_some(&mut body_caches));
            match side {
                Some(s) => y.iter_mut().zip(&s).for_each(|(a, b)| *a += b),
                None => y.iter_mut().zip(&x).for_each(|(a, b)| *a += b),
            }
            let cache = if keep {
                Cache::Residual {
                    body: body_caches,
                    shortcut: short_caches,
                }
            } else {
                Cache::None
            };
            (y, cache)
        }
    }
}

/// Backpropagates `dy` through `layers`, accumulating parameter gradients
/// into `grad`. Returns the input gradient when `need_input` is set.
pub(crate) fn backward(
    layers: &[Layer],
    caches: &[Cache],
    slots: &Slots,
    values: &[f64],
    mut dy: Vec<f64>,
    n: usize,
    grad: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let want = i > 0 || need_input;
        match backward_one(layer, cache, slots, values, dy, n, grad, want) {
            Some(dx) => dy = dx,
            None => return None,
        }
    }
    Some(dy)
}

#[allow(clippy::too_many_arguments)]
fn backward_one(
    layer: &Layer,
    cache: &Cache,
    slots: &Slots,
    values: &[f64],
    dy: Vec<f64>,
    n: usize,
    grad: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    match (layer, cache) {
        (
            Layer::Dense {
                weight,
                bias,
                inputs,
                outputs,
            },
            Cache::Input(x),
        ) => {
            if let Some(b) = bias {
                let gb = &mut grad[slots.range(*b)];
                for row in dy.chunks_exact(*outputs) {
                    gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
            gemm(Op::T, Op::N, *outputs, *inputs, n, 1.0, &dy, x, 1.0, &mut grad[slots.range(*weight)]);
            want_input.then(|| {
                let mut dx = vec![0.0; n * inputs];
                let w = &values[slots.range(*weight)];
                gemm(Op::N, Op::N, n, *inputs, *outputs, 1.0, &dy, w, 0.0, &mut dx);
                dx
            })
        }
        (Layer::Conv { weight, bias, geom }, Cache::Input(x)) => {
            let (il, ol, p, k) = (geom.in_len(), geom.out_len(), geom.positions(), geom.patch_len());
            let w = &values[slots.range(*weight)];
            let mut cols = vec![0.0; k * p];
            let mut dcols = vec![0.0; k * p];
            let mut dx = if want_input { vec![0.0; n * il] } else { Vec::new() };
            for s in 0..n {
                let dys = &dy[s * ol..(s + 1) * ol];
                if let Some(b) = bias {
                    let gb = &mut grad[slots.range(*b)];
                    for (co, chunk) in dys.chunks_exact(p).enumerate() {
                        gb[co] += chunk.iter().sum::<f64>();
                    }
                }
                geom.im2col(&x[s * il..(s + 1) * il], &mut cols);
                gemm(Op::N, Op::T, geom.cout, k, p, 1.0, dys, &cols, 1.0, &mut grad[slots.range(*weight)]);
                if want_input {
                    gemm(Op::T, Op::N, k, p, geom.cout, 1.0, w, dys, 0.0, &mut dcols);
                    geom.col2im(&dcols, &mut dx[s * il..(s + 1) * il]);
                }
            }
            want_input.then_some(dx)
        }
        (Layer::Relu, Cache::Mask(mask)) => {
            let mut dx = dy;
            for (d, &m) in dx.iter_mut().zip(mask) {
                if !m {
                    *d = 0.0;
                }
            }
            Some(dx)
        }
        (Layer::GlobalAvgPool { spatial, .. }, _) => {
            let inv = 1.0 / *spatial as f64;
            let mut dx = Vec::with_capacity(dy.len() * spatial);
            for &d in &dy {
                dx.extend(core::iter::repeat_n(d * inv, *spatial));
            }
            Some(dx)
        }
        (Layer::Residual { body, shortcut }, Cache::Residual { body: bc, shortcut: sc }) => {
            let d_body = backward(body, bc, slots, values, dy.clone(), n, grad, true)
                .expect("residual body input gradient");
            let mut dx = if shortcut.is_empty() {
                dy
            } else {
                backward(shortcut, sc, slots, values, dy, n, grad, true)
                    .expect("residual shortcut input gradient")
            };
            dx.iter_mut().zip(&d_body).for_each(|(a, b)| *a += b);
            Some(dx)
        }
        _ => unreachable!("layer/cache mismatch: forward was not run with a tape"),
    }
}
