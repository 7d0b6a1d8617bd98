//! Periodic box discretization: grids, sampled fields, discrete Fourier
//! transforms and quadrature.
//!
//! Conventions, fixed repo-wide:
//! - index order x1 slowest / x3 fastest;
//! - coordinates x_i = -L/2 + i*h, so the box is [-L/2, L/2) and the box
//!   center sits on the lattice at index n/2;
//! - the forward transform approximates f_hat(xi) = integral of
//!   f(x) exp(-i xi.x) dx, realized as dv * (-1)^(k1+k2+k3) * DFT, and the
//!   inverse divides by the box volume. Analytic continuous symbols are
//!   therefore directly usable on the frequency lattice;
//! - quadrature is the rectangle rule dv * sum, spectrally accurate for
//!   smooth periodic integrands.

use crate::error::{Error, Result};
use crate::fft::fft3;
use ndarray::{Array3, Zip};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Periodic computational box with spectral frequency metadata.
#[derive(Clone, Debug)]
pub struct Grid {
    n: [usize; 3],
    len: [f64; 3],
    h: [f64; 3],
    dv: f64,
    freqs: [Vec<f64>; 3],
    coords: [Vec<f64>; 3],
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.len == other.len
    }
}

impl Grid {
    pub fn new(n: [usize; 3], len: [f64; 3]) -> Result<Self> {
        for &ni in &n {
            if ni < 4 || ni % 2 != 0 {
                return Err(Error::BadGridSize(ni));
            }
        }
        for &li in &len {
            if !(li > 0.0) || !li.is_finite() {
                return Err(Error::BadBoxLength(li));
            }
        }
        let h = [len[0] / n[0] as f64, len[1] / n[1] as f64, len[2] / n[2] as f64];
        let dv = h[0] * h[1] * h[2];
        let axis_freqs = |a: usize| -> Vec<f64> {
            (0..n[a])
                .map(|k| {
                    let m = if k < n[a] / 2 { k as i64 } else { k as i64 - n[a] as i64 };
                    2.0 * PI * m as f64 / len[a]
                })
                .collect()
        };
        let axis_coords =
            |a: usize| -> Vec<f64> { (0..n[a]).map(|i| -0.5 * len[a] + i as f64 * h[a]).collect() };
        Ok(Grid {
            n,
            len,
            h,
            dv,
            freqs: [axis_freqs(0), axis_freqs(1), axis_freqs(2)],
            coords: [axis_coords(0), axis_coords(1), axis_coords(2)],
        })
    }

    /// Same point counts on a box with different edge lengths.
    pub fn with_lengths(&self, len: [f64; 3]) -> Result<Self> {
        Grid::new(self.n, len)
    }

    pub fn n(&self) -> [usize; 3] {
        self.n
    }
    pub fn lengths(&self) -> [f64; 3] {
        self.len
    }
    pub fn spacing(&self) -> [f64; 3] {
        self.h
    }
    pub fn cell_volume(&self) -> f64 {
        self.dv
    }
    pub fn volume(&self) -> f64 {
        self.len[0] * self.len[1] * self.len[2]
    }
    pub fn num_points(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n[0], self.n[1], self.n[2])
    }
    pub fn coords(&self, axis: usize) -> &[f64] {
        &self.coords[axis]
    }
    pub fn freqs(&self, axis: usize) -> &[f64] {
        &self.freqs[axis]
    }
    /// Smallest half edge length; the radius of the largest centered ball
    /// that fits in the box.
    pub fn half_width(&self) -> f64 {
        0.5 * self.len.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn check_same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Complex samples on a grid, index order x1 slowest / x3 fastest.
#[derive(Clone, Debug)]
pub struct ComplexField {
    grid: Grid,
    data: Array3<Complex64>,
}

/// Real samples on a grid; densities, potentials.
#[derive(Clone, Debug)]
pub struct RealField {
    grid: Grid,
    data: Array3<f64>,
}

/// Spectral samples in FFT index order (mode k <-> frequency freqs[a][k]).
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Grid,
    data: Array3<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: &Grid) -> Self {
        ComplexField { grid: grid.clone(), data: Array3::default(grid.shape()) }
    }

    /// Sample a function of the box coordinates.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64, f64) -> Complex64 + Sync) -> Self {
        let mut data = Array3::default(grid.shape());
        let (c0, c1, c2) = (grid.coords(0), grid.coords(1), grid.coords(2));
        Zip::indexed(&mut data).par_for_each(|(i, j, k), v| *v = f(c0[i], c1[j], c2[k]));
        ComplexField { grid: grid.clone(), data }
    }

    pub fn from_data(grid: &Grid, data: Array3<Complex64>) -> Result<Self> {
        if data.dim() != grid.shape() {
            return Err(Error::GridMismatch);
        }
        Ok(ComplexField { grid: grid.clone(), data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    /// Reinterpret the same samples on another grid with identical shape
    /// (used by the scale-changing rescaling step).
    pub fn reinterpret_on(&self, grid: &Grid) -> Result<Self> {
        ComplexField::from_data(grid, self.data.clone())
    }

    pub fn scaled(&self, q: f64) -> Self {
        let mut out = self.clone();
        out.data.par_mapv_inplace(|v| v * q);
        out
    }

    /// dv * sum of |v|^2 (squared discrete L2 norm).
    pub fn norm_l2_sq(&self) -> f64 {
        self.grid.dv * plane_sum(&self.data, |v| v.norm_sqr())
    }
    pub fn norm_l2(&self) -> f64 {
        self.norm_l2_sq().sqrt()
    }
    /// dv * sum of |v|^4.
    pub fn norm_l4_pow4(&self) -> f64 {
        self.grid.dv * plane_sum(&self.data, |v| v.norm_sqr() * v.norm_sqr())
    }
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn density(&self) -> RealField {
        let mut data = Array3::zeros(self.grid.shape());
        Zip::from(&mut data).and(&self.data).par_for_each(|d, v| *d = v.norm_sqr());
        RealField { grid: self.grid.clone(), data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Forward transform: dv * sign * DFT, approximating the integral
    /// transform with x measured over [-L/2, L/2).
    pub fn transform(&self) -> Spectrum {
        let n = self.grid.n;
        let buf = self.data.as_slice().expect("standard layout").to_vec();
        let out = fft3(buf, n, false);
        let mut data = Array3::from_shape_vec(self.grid.shape(), out).unwrap();
        let dv = self.grid.dv;
        Zip::indexed(&mut data).par_for_each(|(k1, k2, k3), v| {
            *v *= dv * parity_sign(k1 + k2 + k3);
        });
        Spectrum { grid: self.grid.clone(), data }
    }

    /// Squared L2 norm of the spectral gradient, via one forward transform.
    pub fn grad_norm_sq(&self) -> f64 {
        self.transform().grad_norm_sq()
    }

    pub fn gradient(&self) -> [ComplexField; 3] {
        let hat = self.transform();
        [0, 1, 2].map(|axis| {
            let mut d = hat.clone();
            let freqs = d.grid.freqs.clone();
            Zip::indexed(&mut d.data).par_for_each(|(k1, k2, k3), v| {
                let xi = freqs[axis][[k1, k2, k3][axis]];
                *v *= Complex64::new(0.0, xi);
            });
            d.inverse()
        })
    }

    pub fn laplacian(&self) -> ComplexField {
        let mut hat = self.transform();
        let freqs = hat.grid.freqs.clone();
        Zip::indexed(&mut hat.data).par_for_each(|(k1, k2, k3), v| {
            let q = freqs[0][k1] * freqs[0][k1]
                + freqs[1][k2] * freqs[1][k2]
                + freqs[2][k3] * freqs[2][k3];
            *v *= -q;
        });
        hat.inverse()
    }
}

impl RealField {
    pub fn zeros(grid: &Grid) -> Self {
        RealField { grid: grid.clone(), data: Array3::zeros(grid.shape()) }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64, f64) -> f64 + Sync) -> Self {
        let mut data = Array3::zeros(grid.shape());
        let (c0, c1, c2) = (grid.coords(0), grid.coords(1), grid.coords(2));
        Zip::indexed(&mut data).par_for_each(|(i, j, k), v| *v = f(c0[i], c1[j], c2[k]));
        RealField { grid: grid.clone(), data }
    }

    pub fn from_data(grid: &Grid, data: Array3<f64>) -> Result<Self> {
        if data.dim() != grid.shape() {
            return Err(Error::GridMismatch);
        }
        Ok(RealField { grid: grid.clone(), data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn to_complex(&self) -> ComplexField {
        let mut data = Array3::default(self.grid.shape());
        Zip::from(&mut data).and(&self.data).par_for_each(|c, &r| *c = Complex64::new(r, 0.0));
        ComplexField { grid: self.grid.clone(), data }
    }

    pub fn transform(&self) -> Spectrum {
        self.to_complex().transform()
    }

    pub fn norm_l2_sq(&self) -> f64 {
        self.grid.dv * plane_sum_real(&self.data, |v| v * v)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Spectrum {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    /// Inverse of `transform`: (1/V) * IDFT(sign * f_hat).
    pub fn inverse(&self) -> ComplexField {
        let n = self.grid.n;
        let inv_vol = 1.0 / self.grid.volume();
        let mut buf = self.data.as_slice().expect("standard layout").to_vec();
        let (n2, n3) = (n[1], n[2]);
        buf.iter_mut().enumerate().for_each(|(idx, v)| {
            let k3 = idx % n3;
            let k2 = (idx / n3) % n2;
            let k1 = idx / (n2 * n3);
            *v *= inv_vol * parity_sign(k1 + k2 + k3);
        });
        let out = fft3(buf, n, true);
        let data = Array3::from_shape_vec(self.grid.shape(), out).unwrap();
        ComplexField { grid: self.grid.clone(), data }
    }

    /// Spectral-side squared L2 norm: (1/V) * sum |f_hat|^2 (Parseval).
    pub fn norm_l2_sq(&self) -> f64 {
        plane_sum(&self.data, |v| v.norm_sqr()) / self.grid.volume()
    }

    /// (1/V) * sum |xi|^2 |f_hat|^2 = squared L2 norm of the gradient.
    pub fn grad_norm_sq(&self) -> f64 {
        let freqs = &self.freqs_ref();
        let inv_vol = 1.0 / self.grid.volume();
        let sums: Vec<f64> = self
            .data
            .outer_iter()
            .into_par_iter()
            .enumerate()
            .map(|(k1, plane)| {
                let f1 = freqs[0][k1] * freqs[0][k1];
                let mut s = 0.0;
                for (k2, row) in plane.outer_iter().enumerate() {
                    let f12 = f1 + freqs[1][k2] * freqs[1][k2];
                    for (k3, v) in row.iter().enumerate() {
                        s += (f12 + freqs[2][k3] * freqs[2][k3]) * v.norm_sqr();
                    }
                }
                s
            })
            .collect();
        sums.iter().sum::<f64>() * inv_vol
    }

    fn freqs_ref(&self) -> [&[f64]; 3] {
        [&self.grid.freqs[0], &self.grid.freqs[1], &self.grid.freqs[2]]
    }

    /// Multiply every mode by a real symbol sampled on the frequency lattice.
    pub fn mul_symbol(&self, symbol: &Array3<f64>) -> Spectrum {
        let mut out = self.clone();
        Zip::from(&mut out.data).and(symbol).par_for_each(|v, &s| *v *= s);
        out
    }

    pub fn map_modes(&mut self, f: impl Fn([f64; 3], Complex64) -> Complex64 + Sync) {
        let freqs = self.grid.freqs.clone();
        Zip::indexed(&mut self.data).par_for_each(|(k1, k2, k3), v| {
            *v = f([freqs[0][k1], freqs[1][k2], freqs[2][k3]], *v);
        });
    }

    /// Zero-padded copy on a grid with more points and the same box; the
    /// inverse transform of the result samples the band-limited
    /// interpolant on the finer lattice. Coarse Nyquist planes (any
    /// |m_a| = n_a/2) are dropped: they have no symmetric partner on the
    /// coarse lattice, and excluding them keeps `pad_to`/`restricted_to`
    /// an exact projection/adjoint pair, so dealiased functionals remain
    /// consistent with their gradients to rounding.
    pub fn pad_to(&self, fine: &Grid) -> Result<Spectrum> {
        if fine.len != self.grid.len || (0..3).any(|a| fine.n[a] < self.grid.n[a]) {
            return Err(Error::GridMismatch);
        }
        let n = self.grid.n;
        let nf = fine.n;
        let mut data = Array3::default(fine.shape());
        for ((k1, k2, k3), &v) in self.data.indexed_iter() {
            if k1 == n[0] / 2 || k2 == n[1] / 2 || k3 == n[2] / 2 {
                continue;
            }
            let f1 = if k1 < n[0] / 2 { k1 } else { k1 + nf[0] - n[0] };
            let f2 = if k2 < n[1] / 2 { k2 } else { k2 + nf[1] - n[1] };
            let f3 = if k3 < n[2] / 2 { k3 } else { k3 + nf[2] - n[2] };
            data[[f1, f2, f3]] = v;
        }
        Ok(Spectrum { grid: fine.clone(), data })
    }

    /// Adjoint of `pad_to`: band restriction onto a coarser lattice with
    /// the same box, zeroing the coarse Nyquist planes.
    pub fn restricted_to(&self, coarse: &Grid) -> Result<Spectrum> {
        if coarse.len != self.grid.len || (0..3).any(|a| coarse.n[a] > self.grid.n[a]) {
            return Err(Error::GridMismatch);
        }
        let n = coarse.n;
        let nf = self.grid.n;
        let mut data = Array3::default(coarse.shape());
        for ((k1, k2, k3), v) in data.indexed_iter_mut() {
            if k1 == n[0] / 2 || k2 == n[1] / 2 || k3 == n[2] / 2 {
                continue;
            }
            let f1 = if k1 < n[0] / 2 { k1 } else { k1 + nf[0] - n[0] };
            let f2 = if k2 < n[1] / 2 { k2 } else { k2 + nf[1] - n[1] };
            let f3 = if k3 < n[2] / 2 { k3 } else { k3 + nf[2] - n[2] };
            *v = self.data[[f1, f2, f3]];
        }
        Ok(Spectrum { grid: coarse.clone(), data })
    }
}

/// Grid with doubled points per axis on the same box; products of two
/// fields band-limited to `grid` are exactly representable on it, and the
/// rectangle rule there integrates their squares exactly.
pub fn doubled_grid(grid: &Grid) -> Grid {
    let n = grid.n();
    Grid::new([2 * n[0], 2 * n[1], 2 * n[2]], grid.lengths()).expect("valid doubled grid")
}

#[inline]
fn parity_sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Deterministic parallel reduction: per-plane partial sums in index order,
/// then a sequential fold. Identical results run to run.
fn plane_sum(data: &Array3<Complex64>, f: impl Fn(&Complex64) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> = data
        .outer_iter()
        .into_par_iter()
        .map(|plane| plane.iter().map(&f).sum::<f64>())
        .collect();
    partials.iter().sum()
}

fn plane_sum_real(data: &Array3<f64>, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> = data
        .outer_iter()
        .into_par_iter()
        .map(|plane| plane.iter().map(|&v| f(v)).sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Rectangle-rule integral dv * sum f.
pub fn integrate(f: &RealField) -> f64 {
    f.grid.dv * plane_sum_real(&f.data, |v| v)
}

/// Discrete L2 pairing, conjugate-linear in the second argument.
pub fn inner_product(f: &ComplexField, g: &ComplexField) -> Result<Complex64> {
    check_same_grid(&f.grid, &g.grid)?;
    let partials: Vec<Complex64> = f
        .data
        .outer_iter()
        .into_par_iter()
        .zip(g.data.outer_iter().into_par_iter())
        .map(|(pf, pg)| {
            let mut s = Complex64::default();
            for (a, b) in pf.iter().zip(pg.iter()) {
                s += a * b.conj();
            }
            s
        })
        .collect();
    Ok(partials.iter().sum::<Complex64>() * f.grid.dv)
}

/// Samples of A * exp(-sum (x_i - c_i)^2 / (2 sigma_i^2)).
pub fn gaussian_field(
    grid: &Grid,
    amplitude: f64,
    widths: [f64; 3],
    center: [f64; 3],
) -> Result<ComplexField> {
    for &w in &widths {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::BadWidth(w));
        }
    }
    for a in 0..3 {
        if center[a] < -0.5 * grid.len[a] || center[a] > 0.5 * grid.len[a] {
            return Err(Error::CenterOutsideBox(center[a]));
        }
    }
    Ok(ComplexField::from_fn(grid, |x1, x2, x3| {
        let e = (x1 - center[0]).powi(2) / (2.0 * widths[0] * widths[0])
            + (x2 - center[1]).powi(2) / (2.0 * widths[1] * widths[1])
            + (x3 - center[2]).powi(2) / (2.0 * widths[2] * widths[2]);
        Complex64::new(amplitude * (-e).exp(), 0.0)
    }))
}

/// Seeded sum of a few complex-amplitude Gaussians; smooth, box-localized
/// probe data for tests and diagnostics.
pub fn random_smooth_field(grid: &Grid, seed: u64, components: usize) -> ComplexField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = Vec::new();
    for _ in 0..components.max(1) {
        let amp = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let widths = [
            rng.random_range(0.7..1.8),
            rng.random_range(0.7..1.8),
            rng.random_range(0.7..1.8),
        ];
        let center = [
            rng.random_range(-grid.len[0] / 8.0..grid.len[0] / 8.0),
            rng.random_range(-grid.len[1] / 8.0..grid.len[1] / 8.0),
            rng.random_range(-grid.len[2] / 8.0..grid.len[2] / 8.0),
        ];
        parts.push((amp, widths, center));
    }
    ComplexField::from_fn(grid, |x1, x2, x3| {
        let mut v = Complex64::default();
        for (amp, w, c) in &parts {
            let e = (x1 - c[0]).powi(2) / (2.0 * w[0] * w[0])
                + (x2 - c[1]).powi(2) / (2.0 * w[1] * w[1])
                + (x3 - c[2]).powi(2) / (2.0 * w[2] * w[2]);
            v += amp * (-e).exp();
        }
        v
    })
}
