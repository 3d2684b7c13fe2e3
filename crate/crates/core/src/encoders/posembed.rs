//! Bicubic (Catmull-Rom) resampling of a square position-embedding grid.

use ndgrad::Tensor;

use crate::error::{AclipError, Result};

/// Catmull-Rom weights for the four taps around a sample at fraction `t`.
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Value at integer tap `i` of a 1-D signal, extended linearly past the ends
/// so that linear ramps are reproduced exactly at the borders.
fn tap(signal: &[f64], i: isize) -> f64 {
    let n = signal.len() as isize;
    if i < 0 {
        signal[0] + (signal[0] - signal[1]) * (-i) as f64
    } else if i >= n {
        let last = signal[(n - 1) as usize];
        last + (last - signal[(n - 2) as usize]) * (i - n + 1) as f64
    } else {
        signal[i as usize]
    }
}

/// Resamples a 1-D signal onto `out` cells with cell-center alignment.
fn resample_line(signal: &[f64], out: usize) -> Vec<f64> {
    let scale = signal.len() as f64 / out as f64;
    (0..out)
        .map(|j| {
            let src = (j as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let w = catmull_rom(src - base);
            let i = base as isize;
            let center = tap(signal, i);
            // Written relative to the nearest tap so a constant signal and
            // the identity resample come out exact.
            center
                + w[0] * (tap(signal, i - 1) - center)
                + w[2] * (tap(signal, i + 1) - center)
                + w[3] * (tap(signal, i + 2) - center)
        })
        .collect()
}

/// Resamples `pos: [g*g, width]` (row-major grid) to `[g'*g', width]`.
/// The CLS position embedding is stored separately and is not touched.
pub fn interpolate_pos_embed(pos: &Tensor, new_grid: usize) -> Result<Tensor> {
    if pos.rank() != 2 {
        return Err(AclipError::Dimension(format!("position table {:?} is not 2-D", pos.shape())));
    }
    let (n, width) = (pos.shape()[0], pos.shape()[1]);
    let grid = (n as f64).sqrt().round() as usize;
    if grid * grid != n || grid < 2 || new_grid < 2 {
        return Err(AclipError::Dimension(format!(
            "cannot resample a {n}-entry grid to {new_grid}x{new_grid} (both sides must be >= 2)"
        )));
    }
    let mut out = vec![0.0; new_grid * new_grid * width];
    let mut column = vec![0.0; grid];
    for c in 0..width {
        // Rows first, then columns.
        let mut rows_done = vec![0.0; grid * new_grid];
        for y in 0..grid {
            let line: Vec<f64> = (0..grid).map(|x| pos.data()[(y * grid + x) * width + c]).collect();
            let res = resample_line(&line, new_grid);
            rows_done[y * new_grid..(y + 1) * new_grid].copy_from_slice(&res);
        }
        for x in 0..new_grid {
            for (y, slot) in column.iter_mut().enumerate() {
                *slot = rows_done[y * new_grid + x];
            }
            for (y, v) in resample_line(&column, new_grid).into_iter().enumerate() {
                out[(y * new_grid + x) * width + c] = v;
            }
        }
    }
    Ok(Tensor::new(&[new_grid * new_grid, width], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_of(g: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
        let mut data = Vec::new();
        for y in 0..g {
            for x in 0..g {
                for c in 0..width {
                    data.push(f(y, x, c));
                }
            }
        }
        Tensor::new(&[g * g, width], data).unwrap()
    }

    #[test]
    fn same_grid_is_identity() {
        let pos = grid_of(4, 3, |y, x, c| ((y * 7 + x * 3 + c) as f64).sin());
        let out = interpolate_pos_embed(&pos, 4).unwrap();
        assert!(out.max_abs_diff(&pos) < 1e-12);
    }

    #[test]
    fn constant_grid_stays_constant() {
        let pos = Tensor::full(&[16, 2], 0.37);
        for g in [2, 3, 7] {
            let out = interpolate_pos_embed(&pos, g).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn ramp_downsampled_matches_closed_form() {
        // Value at cell (y, x) is 0.3 x - 0.2 y + 1; halving the grid samples
        // old cell coordinates 2j + 0.5.
        let pos = grid_of(4, 1, |y, x, _| 0.3 * x as f64 - 0.2 * y as f64 + 1.0);
        let out = interpolate_pos_embed(&pos, 2).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                let (sy, sx) = (2.0 * y as f64 + 0.5, 2.0 * x as f64 + 0.5);
                let expected = 0.3 * sx - 0.2 * sy + 1.0;
                assert!((out.data()[y * 2 + x] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(interpolate_pos_embed(&Tensor::zeros(&[1, 4]), 2).is_err());
        assert!(interpolate_pos_embed(&Tensor::zeros(&[4, 4]), 1).is_err());
    }
}
