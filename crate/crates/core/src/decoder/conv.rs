use ndarray::{Array2, Array3, ArrayView3};

use super::Real;

/// Unfolds a "same"-padded dilated k×k convolution input into a
/// `(c·k·k) × (h·w)` matrix.
pub(crate) fn im2col<T: Real>(x: ArrayView3<T>, k: usize, dilation: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let pad = (dilation * (k - 1) / 2) as isize;
    let mut cols = Array2::<T>::zeros((c * k * k, h * w));
    let x = x.as_standard_layout();
    let src = x.as_slice().unwrap();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let mut row = cols.row_mut((ch * k + ki) * k + kj);
                let dst = row.as_slice_mut().unwrap();
                let dy = (ki * dilation) as isize - pad;
                let dx = (kj * dilation) as isize - pad;
                let (x_lo, x_hi) = span(w, dx);
                for y in 0..h {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let s = yy as usize * w;
                    let d = y * w;
                    let from = (x_lo as isize + dx) as usize;
                    dst[d + x_lo..d + x_hi].copy_from_slice(&plane[s + from..s + from + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds column gradients back onto the input.
pub(crate) fn col2im<T: Real>(cols: &Array2<T>, shape: (usize, usize, usize), k: usize, dilation: usize) -> Array3<T> {
    let (c, h, w) = shape;
    let pad = (dilation * (k - 1) / 2) as isize;
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = cols.row((ch * k + ki) * k + kj);
                let src = row.as_slice().unwrap();
                let dy = (ki * dilation) as isize - pad;
                let dx = (kj * dilation) as isize - pad;
                let (x_lo, x_hi) = span(w, dx);
                for y in 0..h {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                        continue;
                    }
                    let s = yy as usize * w;
                    let d = y * w;
                    let to = (x_lo as isize + dx) as usize;
                    for (o, &g) in plane[s + to..s + to + (x_hi - x_lo)].iter_mut().zip(&src[d + x_lo..d + x_hi]) {
                        *o = *o + g;
                    }
                }
            }
        }
    }
    Array3::from_shape_vec(shape, out).unwrap()
}

/// Output columns `x` for which `x + dx` lands inside `[0, w)`.
fn span(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
    (lo.min(w), hi)
}

pub(crate) fn upsample<T: Real>(x: ArrayView3<T>, factor: usize) -> Array3<T> {
    let (c, h, w) = x.dim();
    Array3::from_shape_fn((c, h * factor, w * factor), |(ch, i, j)| x[[ch, i / factor, j / factor]])
}

pub(crate) fn upsample_adjoint<T: Real>(g: ArrayView3<T>, factor: usize) -> Array3<T> {
    let (c, h, w) = g.dim();
    let mut out = Array3::<T>::zeros((c, h / factor, w / factor));
    for ((ch, i, j), &v) in g.indexed_iter() {
        let o = &mut out[[ch, i / factor, j / factor]];
        *o = *o + v;
    }
    out
}
