//! Batched layer kernels. Activations are `(batch, features)` row-major with
//! features laid out channel-major for image tensors.

use super::gemm::{gemm, Mat};

pub(crate) const KERNEL: usize = 3;
pub(crate) const POOL: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.in_h + 1 - KERNEL
    }
    pub fn out_w(&self) -> usize {
        self.in_w + 1 - KERNEL
    }
    pub fn patch(&self) -> usize {
        self.in_c * KERNEL * KERNEL
    }
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }
    pub fn out_len(&self) -> usize {
        self.out_c * self.positions()
    }
    pub fn weight_len(&self) -> usize {
        self.out_c * self.patch()
    }
}

/// Unfolds one sample into a `(patch, positions)` matrix.
fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.positions();
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for y in 0..oh {
                    let src = &plane[(y + ky) * g.in_w + kx..(y + ky) * g.in_w + kx + ow];
                    dst[y * ow..(y + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Folds a `(patch, positions)` gradient back onto one input sample.
fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = g.positions();
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * p..(row + 1) * p];
                for y in 0..oh {
                    let base = (y + ky) * g.in_w + kx;
                    for (d, s) in plane[base..base + ow]
                        .iter_mut()
                        .zip(&src[y * ow..(y + 1) * ow])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Returns the output activations and the unfolded inputs kept for backward.
pub(crate) fn conv_forward(
    g: &ConvGeom,
    weight: &[f64],
    bias: &[f64],
    x: &[f64],
    batch: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (patch, p) = (g.patch(), g.positions());
    let mut cols = vec![0.0; batch * patch * p];
    let mut out = vec![0.0; batch * g.out_len()];
    for s in 0..batch {
        let col = &mut cols[s * patch * p..(s + 1) * patch * p];
        im2col(g, &x[s * g.in_len()..(s + 1) * g.in_len()], col);
        let o = &mut out[s * g.out_len()..(s + 1) * g.out_len()];
        for (k, row) in o.chunks_exact_mut(p).enumerate() {
            row.fill(bias[k]);
        }
        gemm(
            Mat::new(weight, g.out_c, patch),
            Mat::new(col, patch, p),
            1.0,
            o,
        );
    }
    (out, cols)
}

/// Accumulates weight/bias gradients; returns the input gradient if asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    weight: &[f64],
    cols: &[f64],
    dout: &[f64],
    batch: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let (patch, p) = (g.patch(), g.positions());
    let mut dx = want_dx.then(|| vec![0.0; batch * g.in_len()]);
    let mut dcols = if want_dx {
        vec![0.0; patch * p]
    } else {
        Vec::new()
    };
    for s in 0..batch {
        let col = &cols[s * patch * p..(s + 1) * patch * p];
        let d = &dout[s * g.out_len()..(s + 1) * g.out_len()];
        for (k, row) in d.chunks_exact(p).enumerate() {
            dbias[k] += row.iter().sum::<f64>();
        }
        gemm(
            Mat::new(d, g.out_c, p),
            Mat::new(col, patch, p).t(),
            1.0,
            dweight,
        );
        if let Some(dx) = dx.as_mut() {
            gemm(
                Mat::new(weight, g.out_c, patch).t(),
                Mat::new(d, g.out_c, p),
                0.0,
                &mut dcols,
            );
            col2im(g, &dcols, &mut dx[s * g.in_len()..(s + 1) * g.in_len()]);
        }
    }
    dx
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub c: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl PoolGeom {
    pub fn out_h(&self) -> usize {
        self.in_h / POOL
    }
    pub fn out_w(&self) -> usize {
        self.in_w / POOL
    }
    pub fn in_len(&self) -> usize {
        self.c * self.in_h * self.in_w
    }
    pub fn out_len(&self) -> usize {
        self.c * self.out_h() * self.out_w()
    }
}

/// Max pooling; the first maximum in row-major window order wins ties.
/// Returns outputs and, per output, the flat input index it came from.
pub(crate) fn pool_forward(g: &PoolGeom, x: &[f64], batch: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = Vec::with_capacity(batch * g.out_len());
    let mut arg = Vec::with_capacity(batch * g.out_len());
    for s in 0..batch {
        for c in 0..g.c {
            let base = s * g.in_len() + c * g.in_h * g.in_w;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + (y * POOL) * g.in_w + xo * POOL;
                    for dy in 0..POOL {
                        for dx in 0..POOL {
                            let idx = base + (y * POOL + dy) * g.in_w + xo * POOL + dx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    (out, arg)
}

pub(crate) fn pool_backward(
    g: &PoolGeom,
    argmax: &[usize],
    dout: &[f64],
    batch: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; batch * g.in_len()];
    for (&i, &d) in argmax.iter().zip(dout) {
        dx[i] += d;
    }
    dx
}

pub(crate) fn relu_forward(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dout` in place using the post-activation values.
pub(crate) fn relu_backward(activated: &[f64], dout: &mut [f64]) {
    for (d, &a) in dout.iter_mut().zip(activated) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

pub(crate) fn dense_forward(
    inp: usize,
    out: usize,
    weight: &[f64],
    bias: &[f64],
    x: &[f64],
    batch: usize,
) -> Vec<f64> {
    let mut y: Vec<f64> = bias.iter().copied().cycle().take(batch * out).collect();
    gemm(
        Mat::new(x, batch, inp),
        Mat::new(weight, out, inp).t(),
        1.0,
        &mut y,
    );
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    inp: usize,
    out: usize,
    weight: &[f64],
    x: &[f64],
    dy: &[f64],
    batch: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    for row in dy.chunks_exact(out) {
        for (b, d) in dbias.iter_mut().zip(row) {
            *b += d;
        }
    }
    gemm(
        Mat::new(dy, batch, out).t(),
        Mat::new(x, batch, inp),
        1.0,
        dweight,
    );
    want_dx.then(|| {
        let mut dx = vec![0.0; batch * inp];
        gemm(
            Mat::new(dy, batch, out),
            Mat::new(weight, out, inp),
            0.0,
            &mut dx,
        );
        dx
    })
}
