//! Two-dimensional discrete Fourier transform on row-major grids.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Unnormalized forward 2D DFT of a real `n_u × n_v` grid stored row-major
/// (element (i, j) at `i * n_v + j`).
pub fn dft2(grid: &[f64], n_u: usize, n_v: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = grid.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    dft2_in_place(&mut data, n_u, n_v);
    data
}

/// In-place unnormalized forward 2D DFT of a complex grid.
pub fn dft2_in_place(data: &mut [Complex64], n_u: usize, n_v: usize) {
    assert_eq!(data.len(), n_u * n_v, "grid has {} entries, expected {n_u}x{n_v}", data.len());
    if data.is_empty() {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let rows = planner.plan_fft_forward(n_v);
    rows.process(data);

    let cols = planner.plan_fft_forward(n_u);
    let mut column = vec![Complex64::new(0.0, 0.0); n_u];
    for j in 0..n_v {
        for i in 0..n_u {
            column[i] = data[i * n_v + j];
        }
        cols.process(&mut column);
        for i in 0..n_u {
            data[i * n_v + j] = column[i];
        }
    }
}

#[cfg(test)]
pub(crate) fn naive_dft2(grid: &[f64], n_u: usize, n_v: usize) -> Vec<Complex64> {
    use std::f64::consts::PI;
    let mut out = vec![Complex64::new(0.0, 0.0); n_u * n_v];
    for ku in 0..n_u {
        for kv in 0..n_v {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n_u {
                for j in 0..n_v {
                    let phase = -2.0 * PI * ((ku * i) as f64 / n_u as f64 + (kv * j) as f64 / n_v as f64);
                    acc += grid[i * n_v + j] * Complex64::from_polar(1.0, phase);
                }
            }
            out[ku * n_v + kv] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn constant_grid_has_only_dc() {
        let x = dft2(&[2.5; 12], 3, 4);
        assert!((x[0].re - 30.0).abs() < 1e-12 && x[0].im.abs() < 1e-12);
        assert!(x[1..].iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn impulse_is_flat() {
        let mut g = vec![0.0; 35];
        g[0] = 1.0;
        for z in dft2(&g, 5, 7) {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn cosine_rows_give_conjugate_peaks() {
        let (n_u, n_v, k) = (8, 6, 3);
        let g: Vec<f64> = (0..n_u * n_v)
            .map(|idx| (2.0 * std::f64::consts::PI * (k * (idx / n_v)) as f64 / n_u as f64).cos())
            .collect();
        let x = dft2(&g, n_u, n_v);
        let peak = (n_u * n_v) as f64 / 2.0;
        assert!((x[k * n_v].norm() - peak).abs() < 1e-9);
        assert!((x[(n_u - k) * n_v].norm() - peak).abs() < 1e-9);
        let others: f64 = x.iter().map(|z| z.norm()).sum::<f64>() - 2.0 * peak;
        assert!(others.abs() < 1e-9);
    }

    #[test]
    fn matches_naive_on_all_small_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n_u in 1..=16 {
            for n_v in 1..=16 {
                let g: Vec<f64> = (0..n_u * n_v).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let err = max_rel(&dft2(&g, n_u, n_v), &naive_dft2(&g, n_u, n_v));
                assert!(err < 1e-9, "{n_u}x{n_v}: {err}");
            }
        }
    }

    proptest! {
        #[test]
        fn matches_naive_random(n_u in 1usize..=16, n_v in 1usize..=16, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<f64> = (0..n_u * n_v).map(|_| rng.gen_range(-10.0..10.0)).collect();
            prop_assert!(max_rel(&dft2(&g, n_u, n_v), &naive_dft2(&g, n_u, n_v)) < 1e-9);
        }
    }
}
