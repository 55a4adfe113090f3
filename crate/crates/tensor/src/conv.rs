//! im2col / col2im lowering of 2-D convolutions onto a single-precision GEMM.
//!
//! Column buffers are laid out as `[(c·K + ky)·K + kx][oy·OW + ox]`, i.e. one
//! row per (channel, kernel tap) and one column per output position. `col2im`
//! is the exact adjoint of `im2col`, including under reflect padding, so the
//! same pair serves the forward pass of one operator and the backward pass of
//! the other.

use crate::error::{contract_err, dim_err, Result};

/// Border handling for [`crate::Tape::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample (`[c b | a b c d | c b]`).
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

impl Conv2dSpec {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self {
            stride,
            pad,
            pad_mode: PadMode::Zero,
        }
    }

    pub fn reflect(stride: usize, pad: usize) -> Self {
        Self {
            stride,
            pad,
            pad_mode: PadMode::Reflect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTransposeSpec {
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/columns appended on the bottom/right; must be `< stride`.
    pub output_padding: usize,
}

impl ConvTransposeSpec {
    pub fn new(stride: usize, pad: usize, output_padding: usize) -> Self {
        Self {
            stride,
            pad,
            output_padding,
        }
    }
}

/// Output extent of a strided window sweep, `None` when the kernel does not fit.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution.
pub fn conv_transpose_out_size(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (input - 1) * stride + kernel + output_padding;
    full.checked_sub(2 * pad).filter(|&v| v > 0)
}

/// Geometry of one lowered convolution over a `channels×height×width` plane
/// stack swept to `out_h×out_w` window positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub mode: PadMode,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_identity(&self) -> bool {
        self.kernel == 1
            && self.stride == 1
            && self.pad == 0
            && self.out_h == self.height
            && self.out_w == self.width
    }

    /// Source index along one axis for every output position at tap `tap`.
    fn axis_map(&self, len: usize, out: usize, tap: usize) -> AxisMap {
        let raw = |o: usize| (o * self.stride + tap) as isize - self.pad as isize;
        let map: Vec<_> = (0..out).map(|o| padded_index(raw(o), len, self.mode)).collect();
        let inside = |o: usize| (0..len as isize).contains(&raw(o));
        let lo = (0..out).find(|&o| inside(o)).unwrap_or(out);
        let hi = (lo..out).find(|&o| !inside(o)).unwrap_or(out);
        let start = if lo < hi { raw(lo) as usize } else { 0 };
        AxisMap { map, lo, hi, start }
    }
}

/// Source indices along one axis, plus the run `lo..hi` of output positions
/// that read `start + (o - lo) * stride` without padding.
struct AxisMap {
    map: Vec<Option<usize>>,
    lo: usize,
    hi: usize,
    start: usize,
}

fn padded_index(i: isize, len: usize, mode: PadMode) -> Option<usize> {
    if i >= 0 && (i as usize) < len {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            let r = if i < 0 { -i } else { 2 * (len as isize - 1) - i };
            (r >= 0 && (r as usize) < len).then_some(r as usize)
        }
    }
}

pub(crate) fn check_reflect(op: &'static str, mode: PadMode, pad: usize, h: usize, w: usize) -> Result<()> {
    if mode == PadMode::Reflect && (pad >= h || pad >= w) {
        return Err(contract_err(
            op,
            format!("reflect padding {pad} needs spatial extent above {pad}, got {h}×{w}"),
        ));
    }
    Ok(())
}

pub(crate) fn im2col(src: &[f32], win: &Window, col: &mut [f32]) {
    let (k, cols) = (win.kernel, win.cols());
    debug_assert_eq!(col.len(), win.rows() * cols);
    if win.is_identity() {
        col.copy_from_slice(src);
        return;
    }
    let ymaps: Vec<_> = (0..k).map(|t| win.axis_map(win.height, win.out_h, t)).collect();
    let xmaps: Vec<_> = (0..k).map(|t| win.axis_map(win.width, win.out_w, t)).collect();
    let plane = win.height * win.width;
    for c in 0..win.channels {
        let src_c = &src[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for (oy, iy) in ymaps[ky].map.iter().enumerate() {
                    let out = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
                    match iy {
                        None => out.fill(0.0),
                        Some(iy) => {
                            let line = &src_c[iy * win.width..(iy + 1) * win.width];
                            let xm = &xmaps[kx];
                            for o in (0..xm.lo).chain(xm.hi..win.out_w) {
                                out[o] = xm.map[o].map_or(0.0, |ix| line[ix]);
                            }
                            let run = &mut out[xm.lo..xm.hi];
                            if win.stride == 1 {
                                run.copy_from_slice(&line[xm.start..xm.start + run.len()]);
                            } else {
                                for (j, o) in run.iter_mut().enumerate() {
                                    *o = line[xm.start + j * win.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column buffer back onto the source planes.
pub(crate) fn col2im(col: &[f32], win: &Window, dst: &mut [f32]) {
    let (k, cols) = (win.kernel, win.cols());
    debug_assert_eq!(col.len(), win.rows() * cols);
    if win.is_identity() {
        for (d, c) in dst.iter_mut().zip(col) {
            *d += c;
        }
        return;
    }
    let ymaps: Vec<_> = (0..k).map(|t| win.axis_map(win.height, win.out_h, t)).collect();
    let xmaps: Vec<_> = (0..k).map(|t| win.axis_map(win.width, win.out_w, t)).collect();
    let plane = win.height * win.width;
    for c in 0..win.channels {
        let dst_c = &mut dst[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for (oy, iy) in ymaps[ky].map.iter().enumerate() {
                    let Some(iy) = iy else { continue };
                    let line = &mut dst_c[iy * win.width..(iy + 1) * win.width];
                    let vals = &src[oy * win.out_w..(oy + 1) * win.out_w];
                    let xm = &xmaps[kx];
                    scatter_edge(line, vals, &xm.map, 0..xm.lo);
                    let run = &vals[xm.lo..xm.hi];
                    if win.stride == 1 {
                        for (d, v) in line[xm.start..xm.start + run.len()].iter_mut().zip(run) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in run.iter().enumerate() {
                            line[xm.start + j * win.stride] += v;
                        }
                    }
                    scatter_edge(line, vals, &xm.map, xm.hi..win.out_w);
                }
            }
        }
    }
}

fn scatter_edge(line: &mut [f32], vals: &[f32], map: &[Option<usize>], range: std::ops::Range<usize>) {
    for o in range {
        if let Some(ix) = map[o] {
            line[ix] += vals[o];
        }
    }
}

/// Strided view of a row-major operand for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> Mat<'a> {
    pub fn rows(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

/// `c (m×n, row-major) = a (m×k) · b (k×n) + beta · c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32]) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || a.data.len() > (m - 1) * a.row_stride + (k - 1) * a.col_stride);
    assert!(k == 0 || n == 0 || b.data.len() > (k - 1) * b.row_stride + (n - 1) * b.col_stride);
    // SAFETY: the asserts above bound every element the kernel reads or writes.
    unsafe {
        matrixmultiply::sgemm(
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

/// Full geometry of a conv2d call with `N×Cin×H×W` input and `Cout×Cin×K×K` weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cout: usize,
    pub win: Window,
}

impl ConvGeom {
    pub fn conv2d(x: &[usize], w: &[usize], b: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let op = "conv2d";
        let ([n, cin, h, wd], [cout, wcin, kh, kw]) = (as4(op, x)?, as4(op, w)?);
        if wcin != cin {
            return Err(dim_err(op, format!("input has {cin} channels, weight expects {wcin}")));
        }
        if kh != kw {
            return Err(dim_err(op, format!("only square kernels are supported, got {kh}×{kw}")));
        }
        if b != [cout] {
            return Err(dim_err(op, format!("bias shape {b:?}, expected [{cout}]")));
        }
        if spec.stride == 0 {
            return Err(contract_err(op, "stride must be at least 1"));
        }
        check_reflect(op, spec.pad_mode, spec.pad, h, wd)?;
        let (out_h, out_w) = match (
            conv_out_size(h, kh, spec.stride, spec.pad),
            conv_out_size(wd, kw, spec.stride, spec.pad),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(contract_err(
                    op,
                    format!("kernel {kh} larger than padded input {h}×{wd} (pad {})", spec.pad),
                ))
            }
        };
        Ok(Self {
            batch: n,
            cout,
            win: Window {
                channels: cin,
                height: h,
                width: wd,
                kernel: kh,
                stride: spec.stride,
                pad: spec.pad,
                mode: spec.pad_mode,
                out_h,
                out_w,
            },
        })
    }

    /// Transposed convolution with `N×Cin×H×W` input and `Cin×Cout×K×K` weight.
    /// The window describes the *output* planes swept back to the input grid.
    pub fn conv_transpose(x: &[usize], w: &[usize], b: &[usize], spec: ConvTransposeSpec) -> Result<Self> {
        let op = "conv2d_transpose";
        let ([n, cin, h, wd], [wcin, cout, kh, kw]) = (as4(op, x)?, as4(op, w)?);
        if wcin != cin {
            return Err(dim_err(op, format!("input has {cin} channels, weight expects {wcin}")));
        }
        if kh != kw {
            return Err(dim_err(op, format!("only square kernels are supported, got {kh}×{kw}")));
        }
        if b != [cout] {
            return Err(dim_err(op, format!("bias shape {b:?}, expected [{cout}]")));
        }
        if spec.stride == 0 || spec.output_padding >= spec.stride {
            return Err(contract_err(op, "need stride ≥ 1 and output_padding < stride"));
        }
        let oh = conv_transpose_out_size(h, kh, spec.stride, spec.pad, spec.output_padding);
        let ow = conv_transpose_out_size(wd, kw, spec.stride, spec.pad, spec.output_padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(contract_err(op, "padding consumes the whole output"));
        };
        Ok(Self {
            batch: n,
            cout,
            win: Window {
                channels: cout,
                height: oh,
                width: ow,
                kernel: kh,
                stride: spec.stride,
                pad: spec.pad,
                mode: PadMode::Zero,
                out_h: h,
                out_w: wd,
            },
        })
    }

    pub fn conv_out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.win.out_h, self.win.out_w]
    }

    pub fn transpose_out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.win.height, self.win.width]
    }
}

fn as4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(dim_err(op, format!("expected a rank-4 tensor, got {shape:?}"))),
    }
}

pub(crate) fn conv2d_forward(x: &[f32], w: &[f32], bias: &[f32], g: &ConvGeom) -> Vec<f32> {
    let win = &g.win;
    let (rows, cols) = (win.rows(), win.cols());
    let in_plane = win.channels * win.height * win.width;
    let mut out = vec![0.0; g.batch * g.cout * cols];
    let mut col = vec![0.0; rows * cols];
    for n in 0..g.batch {
        im2col(&x[n * in_plane..(n + 1) * in_plane], win, &mut col);
        let out_n = &mut out[n * g.cout * cols..(n + 1) * g.cout * cols];
        for (c, chunk) in out_n.chunks_mut(cols).enumerate() {
            chunk.fill(bias[c]);
        }
        gemm(g.cout, rows, cols, Mat::rows(w, rows), Mat::rows(&col, cols), 1.0, out_n);
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    dout: &[f32],
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads {
    let win = &g.win;
    let (rows, cols) = (win.rows(), win.cols());
    let in_plane = win.channels * win.height * win.width;
    let mut dx = need[0].then(|| vec![0.0; x.len()]);
    let mut dw = need[1].then(|| vec![0.0; w.len()]);
    let db = need[2].then(|| bias_grad(dout, g.batch, g.cout, cols));
    let mut col = vec![0.0; rows * cols];
    for n in 0..g.batch {
        let dout_n = &dout[n * g.cout * cols..(n + 1) * g.cout * cols];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * in_plane..(n + 1) * in_plane], win, &mut col);
            gemm(g.cout, cols, rows, Mat::rows(dout_n, cols), Mat::transposed(&col, cols), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(rows, g.cout, cols, Mat::transposed(w, rows), Mat::rows(dout_n, cols), 0.0, &mut col);
            col2im(&col, win, &mut dx[n * in_plane..(n + 1) * in_plane]);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

pub(crate) fn conv_transpose_forward(x: &[f32], w: &[f32], bias: &[f32], g: &ConvGeom) -> Vec<f32> {
    let win = &g.win;
    let (rows, cols) = (win.rows(), win.cols());
    let cin = x.len() / (g.batch * cols);
    let out_plane = g.cout * win.height * win.width;
    let mut out = vec![0.0; g.batch * out_plane];
    let mut col = vec![0.0; rows * cols];
    for n in 0..g.batch {
        let x_n = &x[n * cin * cols..(n + 1) * cin * cols];
        gemm(rows, cin, cols, Mat::transposed(w, rows), Mat::rows(x_n, cols), 0.0, &mut col);
        let out_n = &mut out[n * out_plane..(n + 1) * out_plane];
        let plane = win.height * win.width;
        for (c, chunk) in out_n.chunks_mut(plane).enumerate() {
            chunk.fill(bias[c]);
        }
        col2im(&col, win, out_n);
    }
    out
}

pub(crate) fn conv_transpose_backward(
    x: &[f32],
    w: &[f32],
    dout: &[f32],
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads {
    let win = &g.win;
    let (rows, cols) = (win.rows(), win.cols());
    let cin = x.len() / (g.batch * cols);
    let plane = win.height * win.width;
    let out_plane = g.cout * plane;
    let mut dx = need[0].then(|| vec![0.0; x.len()]);
    let mut dw = need[1].then(|| vec![0.0; w.len()]);
    let db = need[2].then(|| bias_grad(dout, g.batch, g.cout, plane));
    if dx.is_none() && dw.is_none() {
        return ConvGrads {
            input: None,
            weight: None,
            bias: db,
        };
    }
    let mut col = vec![0.0; rows * cols];
    for n in 0..g.batch {
        im2col(&dout[n * out_plane..(n + 1) * out_plane], win, &mut col);
        if let Some(dx) = dx.as_mut() {
            let dx_n = &mut dx[n * cin * cols..(n + 1) * cin * cols];
            gemm(cin, rows, cols, Mat::rows(w, rows), Mat::rows(&col, cols), 0.0, dx_n);
        }
        if let Some(dw) = dw.as_mut() {
            let x_n = &x[n * cin * cols..(n + 1) * cin * cols];
            gemm(cin, cols, rows, Mat::rows(x_n, cols), Mat::transposed(&col, cols), 1.0, dw);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

fn bias_grad(dout: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut db = vec![0.0f64; channels];
    for n in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (n * channels + c) * plane;
            *acc += dout[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    db.into_iter().map(|v| v as f32).collect()
}
