//! Numeric kernels. Convolutions are lowered to GEMM through an im2col
//! buffer; all reductions run in a fixed order so results are bit-for-bit
//! reproducible for a given batch.

/// Columns per im2col chunk; keeps the buffer cache-sized while giving the
/// GEMM a wide enough right-hand side.
const TARGET_COLS: usize = 256;

/// `c = a * b + beta * c` for row/column strided operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(
        k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa,
        "gemm: lhs too short"
    );
    assert!(
        k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb,
        "gemm: rhs too short"
    );
    assert!(
        c.len() > (m - 1) * rsc + (n - 1) * csc,
        "gemm: output too short"
    );
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// `y = x w + b` with `x: (batch, inputs)`, `w: (inputs, outputs)`.
pub(crate) fn dense_forward(
    x: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[f64],
    b: &[f64],
) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        y.extend_from_slice(b);
    }
    gemm(
        batch,
        inputs,
        outputs,
        x,
        (inputs, 1),
        w,
        (outputs, 1),
        1.0,
        &mut y,
        (outputs, 1),
    );
    y
}

/// Returns `(dw, db, dx)`; `dx` only when requested.
pub(crate) fn dense_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    w: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut dw = vec![0.0; inputs * outputs];
    gemm(
        inputs,
        batch,
        outputs,
        x,
        (1, inputs),
        dy,
        (outputs, 1),
        0.0,
        &mut dw,
        (outputs, 1),
    );
    let mut db = vec![0.0; outputs];
    for row in dy.chunks_exact(outputs) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; batch * inputs];
        gemm(
            batch,
            outputs,
            inputs,
            dy,
            (outputs, 1),
            w,
            (1, outputs),
            0.0,
            &mut dx,
            (inputs, 1),
        );
        dx
    });
    (dw, db, dx)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn taps(&self) -> usize {
        self.c_in * 9
    }

    fn chunk(&self) -> usize {
        (TARGET_COLS / self.hw()).max(1)
    }
}

/// Fills `cols` (row stride `n = samples * h * w`) with the 3x3
/// zero-padded neighbourhoods of `samples` consecutive inputs.
fn im2col(input: &[f64], samples: usize, g: ConvGeom, cols: &mut [f64]) {
    let (h, w, hw) = (g.h, g.w, g.hw());
    let n = samples * hw;
    for c in 0..g.c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * n..(c * 9 + ky * 3 + kx + 1) * n];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize) as usize;
                for s in 0..samples {
                    let plane = &input[(s * g.c_in + c) * hw..(s * g.c_in + c + 1) * hw];
                    for y in 0..h {
                        let dst = &mut row[s * hw + y * w..s * hw + (y + 1) * w];
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        dst[..x_lo].fill(0.0);
                        dst[x_hi..].fill(0.0);
                        let s0 = (x_lo as isize + dx) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `grad_in`.
fn col2im(cols: &[f64], samples: usize, g: ConvGeom, grad_in: &mut [f64]) {
    let (h, w, hw) = (g.h, g.w, g.hw());
    let n = samples * hw;
    for c in 0..g.c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * n..(c * 9 + ky * 3 + kx + 1) * n];
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize) as usize;
                for s in 0..samples {
                    let plane = &mut grad_in[(s * g.c_in + c) * hw..(s * g.c_in + c + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[s * hw + y * w + x_lo..s * hw + y * w + x_hi];
                        let s0 = sy as usize * w + (x_lo as isize + dx) as usize;
                        for (d, v) in plane[s0..s0 + src.len()].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 cross-correlation, stride 1, zero "same" padding.
/// `input: (batch, c_in, h, w)`, `weight: (c_out, c_in * 9)`.
pub(crate) fn conv_forward(
    input: &[f64],
    batch: usize,
    g: ConvGeom,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let (hw, taps) = (g.hw(), g.taps());
    let chunk = g.chunk();
    let mut out = vec![0.0; batch * g.c_out * hw];
    let mut cols = vec![0.0; taps * chunk * hw];
    let mut buf = vec![0.0; g.c_out * chunk * hw];
    for b0 in (0..batch).step_by(chunk) {
        let samples = chunk.min(batch - b0);
        let n = samples * hw;
        im2col(
            &input[b0 * g.c_in * hw..(b0 + samples) * g.c_in * hw],
            samples,
            g,
            &mut cols,
        );
        gemm(
            g.c_out,
            taps,
            n,
            weight,
            (taps, 1),
            &cols,
            (n, 1),
            0.0,
            &mut buf,
            (n, 1),
        );
        for s in 0..samples {
            for o in 0..g.c_out {
                let dst =
                    &mut out[((b0 + s) * g.c_out + o) * hw..((b0 + s) * g.c_out + o + 1) * hw];
                let src = &buf[o * n + s * hw..o * n + (s + 1) * hw];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = v + bias[o];
                }
            }
        }
    }
    out
}

/// Returns `(dweight, dbias, dinput)`; `dinput` only when requested.
pub(crate) fn conv_backward(
    input: &[f64],
    grad_out: &[f64],
    batch: usize,
    g: ConvGeom,
    weight: &[f64],
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let (hw, taps) = (g.hw(), g.taps());
    let chunk = g.chunk();
    let mut dw = vec![0.0; g.c_out * taps];
    let mut db = vec![0.0; g.c_out];
    let mut dx = need_dx.then(|| vec![0.0; batch * g.c_in * hw]);
    let mut cols = vec![0.0; taps * chunk * hw];
    let mut dy = vec![0.0; g.c_out * chunk * hw];
    let mut dcols = if need_dx {
        vec![0.0; taps * chunk * hw]
    } else {
        Vec::new()
    };
    for b0 in (0..batch).step_by(chunk) {
        let samples = chunk.min(batch - b0);
        let n = samples * hw;
        for s in 0..samples {
            for o in 0..g.c_out {
                let src =
                    &grad_out[((b0 + s) * g.c_out + o) * hw..((b0 + s) * g.c_out + o + 1) * hw];
                dy[o * n + s * hw..o * n + (s + 1) * hw].copy_from_slice(src);
            }
        }
        for o in 0..g.c_out {
            db[o] += dy[o * n..(o + 1) * n].iter().sum::<f64>();
        }
        let in_chunk = &input[b0 * g.c_in * hw..(b0 + samples) * g.c_in * hw];
        im2col(in_chunk, samples, g, &mut cols);
        gemm(
            g.c_out,
            n,
            taps,
            &dy,
            (n, 1),
            &cols,
            (1, n),
            1.0,
            &mut dw,
            (taps, 1),
        );
        if let Some(dx) = dx.as_mut() {
            gemm(
                taps,
                g.c_out,
                n,
                weight,
                (1, taps),
                &dy,
                (n, 1),
                0.0,
                &mut dcols,
                (n, 1),
            );
            col2im(
                &dcols,
                samples,
                g,
                &mut dx[b0 * g.c_in * hw..(b0 + samples) * g.c_in * hw],
            );
        }
    }
    (dw, db, dx)
}

/// 2x2 max pooling, stride 2. Returns the output and the winning offset
/// (0..4, row-major within the window; first maximum wins) per output.
pub(crate) fn maxpool_forward(
    input: &[f64],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<u8>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &input[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let idx = [
                    (2 * y) * w + 2 * x,
                    (2 * y) * w + 2 * x + 1,
                    (2 * y + 1) * w + 2 * x,
                    (2 * y + 1) * w + 2 * x + 1,
                ];
                let mut best = 0u8;
                for k in 1..4u8 {
                    if plane[idx[k as usize]] > plane[idx[best as usize]] {
                        best = k;
                    }
                }
                out.push(plane[idx[best as usize]]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(
    grad: &[f64],
    arg: &[u8],
    planes: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        for y in 0..oh {
            for x in 0..ow {
                let o = (p * oh + y) * ow + x;
                let k = arg[o] as usize;
                let (yy, xx) = (2 * y + k / 2, 2 * x + k % 2);
                dx[p * h * w + yy * w + xx] += grad[o];
            }
        }
    }
    dx
}

/// 2x nearest-neighbour upsampling.
pub(crate) fn upsample_forward(input: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for y in 0..oh {
            for x in 0..ow {
                out[(p * oh + y) * ow + x] = input[(p * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample_backward(grad: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        for y in 0..oh {
            for x in 0..ow {
                dx[(p * h + y / 2) * w + x / 2] += grad[(p * oh + y) * ow + x];
            }
        }
    }
    dx
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softmax over consecutive runs of `row_len` values.
pub(crate) fn softmax_rows(z: &[f64], row_len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks_exact(row_len) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= sum;
        }
    }
    out
}
