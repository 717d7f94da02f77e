//! Same-padded 3×3 convolution as im2col + GEMM.
//!
//! Planes are `channels × (height·width)` row-major. A column matrix has one
//! row per `(channel, ky, kx)` tap and one column per output pixel.

pub(crate) const KERNEL: usize = 3;
pub(crate) const TAPS: usize = KERNEL * KERNEL;

/// Fills `col` (`channels·9 × h·w`) with zero-padded shifted copies of `input`.
pub(crate) fn im2col(input: &[f64], channels: usize, h: usize, w: usize, col: &mut [f64]) {
    let n = h * w;
    debug_assert_eq!(input.len(), channels * n);
    debug_assert_eq!(col.len(), channels * TAPS * n);
    for c in 0..channels {
        let plane = &input[c * n..(c + 1) * n];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((c * TAPS) + ky * KERNEL + kx) * n..][..n];
                let dx = kx as isize - 1;
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match dx {
                        -1 => {
                            out[0] = 0.0;
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        0 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back onto `out`, accumulating.
pub(crate) fn col2im_add(col: &[f64], channels: usize, h: usize, w: usize, out: &mut [f64]) {
    let n = h * w;
    for c in 0..channels {
        let plane = &mut out[c * n..(c + 1) * n];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((c * TAPS) + ky * KERNEL + kx) * n..][..n];
                let dx = kx as isize - 1;
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let (d, s) = match dx {
                        -1 => (&mut dst[..w - 1], &src[1..]),
                        0 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (d, s) in d.iter_mut().zip(s) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Row segments `(out_start, in_start, len)` pairing each output pixel with
/// its in-bounds source for tap `(ky, kx)`.
fn tap_segments(
    h: usize,
    w: usize,
    ky: usize,
    kx: usize,
) -> impl Iterator<Item = (usize, usize, usize)> {
    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
    let ys = (-dy).max(0) as usize..(h as isize - dy).min(h as isize) as usize;
    let (x0, x1) = (
        (-dx).max(0) as usize,
        (w as isize - dx).min(w as isize) as usize,
    );
    ys.map(move |y| {
        (
            y * w + x0,
            (y as isize + dy) as usize * w + (x0 as isize + dx) as usize,
            x1 - x0,
        )
    })
}

/// Direct convolution for few output channels: `out += weight ⊛ input`,
/// with `weight` laid out `[out][in][3][3]`.
pub(crate) fn conv_direct_add(
    input: &[f64],
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out: &mut [f64],
) {
    let n = h * w;
    for o in 0..co {
        let dst = &mut out[o * n..(o + 1) * n];
        for c in 0..ci {
            let src = &input[c * n..(c + 1) * n];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wt = weight[(o * ci + c) * TAPS + ky * KERNEL + kx];
                    for (os, is, len) in tap_segments(h, w, ky, kx) {
                        for (d, s) in dst[os..os + len].iter_mut().zip(&src[is..is + len]) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
}

/// Kernel gradient of [`conv_direct_add`], accumulated into `grad`.
pub(crate) fn conv_direct_weight_grad(
    input: &[f64],
    dout: &[f64],
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    grad: &mut [f64],
) {
    let n = h * w;
    for o in 0..co {
        let g = &dout[o * n..(o + 1) * n];
        for c in 0..ci {
            let src = &input[c * n..(c + 1) * n];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let mut acc = 0.0;
                    for (os, is, len) in tap_segments(h, w, ky, kx) {
                        acc += g[os..os + len]
                            .iter()
                            .zip(&src[is..is + len])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    grad[(o * ci + c) * TAPS + ky * KERNEL + kx] += acc;
                }
            }
        }
    }
}

/// Input gradient of [`conv_direct_add`], accumulated into `dinput`.
pub(crate) fn conv_direct_input_grad(
    dout: &[f64],
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    dinput: &mut [f64],
) {
    let n = h * w;
    for o in 0..co {
        let g = &dout[o * n..(o + 1) * n];
        for c in 0..ci {
            let dst = &mut dinput[c * n..(c + 1) * n];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wt = weight[(o * ci + c) * TAPS + ky * KERNEL + kx];
                    for (os, is, len) in tap_segments(h, w, ky, kx) {
                        for (d, s) in dst[is..is + len].iter_mut().zip(&g[os..os + len]) {
                            *d += wt * s;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix view: `data[r * row_stride + c * col_stride]`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major `rows × cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

/// `c = a·b + beta·c` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    let span = |mat: MatRef<'_>, rows: usize, cols: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * mat.row_stride + (cols - 1) * mat.col_stride + 1
        }
    };
    assert!(a.data.len() >= span(a, m, k) && b.data.len() >= span(b, k, n));
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
