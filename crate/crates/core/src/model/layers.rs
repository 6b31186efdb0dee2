//! Building blocks on `(channels, height * width)` activation matrices.

use ndarray::{Array1, Array2, ArrayView2, Axis};

/// Unrolls 3×3 / stride 1 / zero-pad 1 patches into a `(c*9, h*w)` matrix.
pub fn im2col3(input: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let c = input.nrows();
    let hw = h * w;
    let mut cols = Array2::<f64>::zeros((c * 9, hw));
    let src = input.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let plane = &src[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut dst[(ch * 9 + ky * 3 + kx) * hw..(ch * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let out_row = &mut row[y * w..(y + 1) * w];
                    let in_row = &plane[sy * w..(sy + 1) * w];
                    match kx {
                        0 => out_row[1..].copy_from_slice(&in_row[..w - 1]),
                        1 => out_row.copy_from_slice(in_row),
                        _ => out_row[..w - 1].copy_from_slice(&in_row[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`]: folds a `(c*9, h*w)` gradient back onto `(c, h*w)`.
pub fn col2im3(cols: ArrayView2<f64>, c: usize, h: usize, w: usize) -> Array2<f64> {
    let hw = h * w;
    let mut out = Array2::<f64>::zeros((c, hw));
    let src = cols.as_standard_layout();
    let src = src.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    for ch in 0..c {
        let plane = &mut dst[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &src[(ch * 9 + ky * 3 + kx) * hw..(ch * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let g_row = &row[y * w..(y + 1) * w];
                    let in_row = &mut plane[sy * w..(sy + 1) * w];
                    match kx {
                        0 => in_row[..w - 1].iter_mut().zip(&g_row[1..]).for_each(|(a, b)| *a += b),
                        1 => in_row.iter_mut().zip(g_row).for_each(|(a, b)| *a += b),
                        _ => in_row[1..].iter_mut().zip(&g_row[..w - 1]).for_each(|(a, b)| *a += b),
                    }
                }
            }
        }
    }
    out
}

/// 2×2 / stride 2 max pooling. Returns the pooled map and, per output cell,
/// the flat source index that won.
pub fn max_pool2(input: ArrayView2<f64>, h: usize, w: usize) -> (Array2<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let c = input.nrows();
    let mut out = Array2::<f64>::zeros((c, oh * ow));
    let mut idx = vec![0usize; c * oh * ow];
    for ch in 0..c {
        let plane = input.row(ch);
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = (2 * y + dy) * w + 2 * x + dx;
                    if plane[cand] > plane[best] {
                        best = cand;
                    }
                }
                out[[ch, y * ow + x]] = plane[best];
                idx[ch * oh * ow + y * ow + x] = best;
            }
        }
    }
    (out, idx)
}

pub fn max_unpool2(grad: ArrayView2<f64>, idx: &[usize], h: usize, w: usize) -> Array2<f64> {
    let c = grad.nrows();
    let per = grad.ncols();
    let mut out = Array2::<f64>::zeros((c, h * w));
    for ch in 0..c {
        for k in 0..per {
            out[[ch, idx[ch * per + k]]] += grad[[ch, k]];
        }
    }
    out
}

/// Average pooling with a square window and equal stride; trailing rows and
/// columns that do not fill a window are dropped.
pub fn avg_pool(input: ArrayView2<f64>, h: usize, w: usize, k: usize) -> Array2<f64> {
    if k == 1 {
        return input.to_owned();
    }
    let (oh, ow) = (h / k, w / k);
    let c = input.nrows();
    let norm = 1.0 / (k * k) as f64;
    let mut out = Array2::<f64>::zeros((c, oh * ow));
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        s += input[[ch, (y * k + dy) * w + x * k + dx]];
                    }
                }
                out[[ch, y * ow + x]] = s * norm;
            }
        }
    }
    out
}

pub fn global_avg_pool(input: ArrayView2<f64>) -> Array1<f64> {
    input.mean_axis(Axis(1)).expect("non-empty spatial axis")
}

/// Per-channel maximum and the (first) position attaining it.
pub fn global_max_pool(input: ArrayView2<f64>) -> (Array1<f64>, Vec<usize>) {
    let mut vals = Array1::zeros(input.nrows());
    let mut idx = Vec::with_capacity(input.nrows());
    for (c, row) in input.rows().into_iter().enumerate() {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        vals[c] = row[best];
        idx.push(best);
    }
    (vals, idx)
}

pub fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;

    #[test]
    fn im2col_center_row_is_identity() {
        let x = Array2::from_shape_fn((2, 12), |(c, i)| (c * 100 + i) as f64);
        let cols = im2col3(x.view(), 3, 4);
        assert_eq!(cols.row(4), x.row(0));
        assert_eq!(cols.row(13), x.row(1));
        // top-left tap of the first output pixel reads padding
        assert_eq!(cols[[0, 0]], 0.0);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), g> == <x, col2im(g)>
        let (c, h, w) = (3, 5, 4);
        let x = Array2::from_shape_fn((c, h * w), |(a, b)| ((a * 7 + b * 3) % 11) as f64 - 5.0);
        let g = Array2::from_shape_fn((c * 9, h * w), |(a, b)| ((a * 5 + b) % 13) as f64 * 0.1);
        let lhs = (&im2col3(x.view(), h, w) * &g).sum();
        let rhs = (&x * &col2im3(g.view(), c, h, w)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let x = Array2::from_shape_vec((1, 16), (0..16).map(|v| v as f64).collect()).unwrap();
        let (p, idx) = max_pool2(x.view(), 4, 4);
        assert_eq!(p.as_slice().unwrap(), &[5.0, 7.0, 13.0, 15.0]);
        let g = Array2::from_elem((1, 4), 1.0);
        let back = max_unpool2(g.view(), &idx, 4, 4);
        assert_eq!(back.sum(), 4.0);
        assert_eq!(back[[0, 5]], 1.0);
    }

    #[test]
    fn avg_pool_of_constant() {
        let x = Array2::from_elem((3, 64), 0.25);
        let p = avg_pool(x.view(), 8, 8, 4);
        assert_eq!(p.dim(), (3, 4));
        assert!(p.iter().all(|v| *v == 0.25));
    }
}
