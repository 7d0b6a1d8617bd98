//! The anisotropic dipolar convolution operator rho -> K * rho, acting
//! diagonally in frequency space through the bounded symbol
//! K_hat(xi) = (4 pi / 3) (3 cos^2 Theta - 1), where Theta is the angle
//! between xi and the dipole axis. K_hat(0) is set to zero (the angular
//! average), so the operator annihilates constants.

use crate::error::{Error, Result};
use crate::grid::{Grid, RealField, Spectrum};
use ndarray::{Array3, Zip};
use std::f64::consts::PI;

/// Unit vector singling out the dipole orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DipoleAxis([f64; 3]);

impl DipoleAxis {
    pub fn new(n: [f64; 3]) -> Result<Self> {
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::BadAxis(norm));
        }
        Ok(DipoleAxis(n))
    }

    /// Normalize a direction vector into an axis.
    pub fn from_direction(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::BadAxis(norm));
        }
        Ok(DipoleAxis([v[0] / norm, v[1] / norm, v[2] / norm]))
    }

    pub fn canonical() -> Self {
        DipoleAxis([0.0, 0.0, 1.0])
    }

    pub fn components(&self) -> [f64; 3] {
        self.0
    }

    pub fn is_canonical(&self) -> bool {
        self.0 == [0.0, 0.0, 1.0]
    }
}

impl Default for DipoleAxis {
    fn default() -> Self {
        DipoleAxis::canonical()
    }
}

/// The dipolar symbol sampled on a grid's frequency lattice.
#[derive(Clone, Debug)]
pub struct SpectralKernel {
    grid: Grid,
    axis: DipoleAxis,
    symbol: Array3<f64>,
}

impl SpectralKernel {
    pub fn build(grid: &Grid, axis: DipoleAxis) -> Self {
        let mut symbol = Array3::zeros(grid.shape());
        let f = [grid.freqs(0).to_vec(), grid.freqs(1).to_vec(), grid.freqs(2).to_vec()];
        let n = axis.components();
        Zip::indexed(&mut symbol).par_for_each(|(k1, k2, k3), s| {
            let xi = [f[0][k1], f[1][k2], f[2][k3]];
            let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            *s = if q == 0.0 {
                0.0
            } else {
                let dot = xi[0] * n[0] + xi[1] * n[1] + xi[2] * n[2];
                (4.0 * PI / 3.0) * (3.0 * dot * dot / q - 1.0)
            };
        });
        SpectralKernel { grid: grid.clone(), axis, symbol }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn axis(&self) -> DipoleAxis {
        self.axis
    }
    pub fn symbol(&self) -> &Array3<f64> {
        &self.symbol
    }

    /// Symbol extrema over the lattice, excluding the zero mode.
    pub fn bounds(&self) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (k, &s) in self.symbol.indexed_iter() {
            if k == (0, 0, 0) {
                continue;
            }
            lo = lo.min(s);
            hi = hi.max(s);
        }
        (lo, hi)
    }

    /// K * rho by symbol multiplication in frequency space. The result of
    /// the inverse transform must be real up to roundoff; a larger
    /// imaginary residue signals a symbol or lattice bug.
    pub fn apply(&self, rho: &RealField) -> Result<RealField> {
        if rho.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let conv = rho.transform().mul_symbol(&self.symbol).inverse();
        let mut imag_sq = 0.0;
        let mut data = Array3::zeros(self.grid.shape());
        for (d, v) in data.iter_mut().zip(conv.data().iter()) {
            *d = v.re;
            imag_sq += v.im * v.im;
        }
        let residue = (self.grid.cell_volume() * imag_sq).sqrt();
        let limit = 1e-10 * rho.norm_l2_sq().sqrt();
        if residue > limit {
            return Err(Error::ImaginaryResidue { residue, limit });
        }
        RealField::from_data(&self.grid, data)
    }

    /// Same operator through the Poisson route, canonical axis only:
    /// K * rho = -(4 pi/3) rho' - d^2/dx3^2 Phi with Phi_hat = 4 pi rho_hat / |xi|^2
    /// and rho' the mean-free part of rho (the torus Poisson problem only
    /// sees the mean-free part, matching K_hat(0) = 0).
    pub fn apply_via_poisson(&self, rho: &RealField) -> Result<RealField> {
        if rho.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if !self.axis.is_canonical() {
            return Err(Error::NonCanonicalAxis);
        }
        let rho_hat = rho.transform();
        let mut phi_dzz_hat = rho_hat.clone();
        phi_dzz_hat.map_modes(|xi, v| {
            let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
            if q == 0.0 {
                // zero mode of Phi pinned to 0
                v * 0.0
            } else {
                // (i xi3)^2 * Phi_hat
                v * (-xi[2] * xi[2]) * (4.0 * PI / q)
            }
        });
        let phi_dzz = phi_dzz_hat.inverse();
        let mean = rho_hat.data()[[0, 0, 0]].re / self.grid.volume();
        let mut data = Array3::zeros(self.grid.shape());
        Zip::from(&mut data)
            .and(rho.data())
            .and(phi_dzz.data())
            .par_for_each(|out, &r, d| *out = -(4.0 * PI / 3.0) * (r - mean) - d.re);
        RealField::from_data(&self.grid, data)
    }

    /// The pairing <K*rho, rho>, evaluated directly in frequency space as
    /// (1/V) sum K_hat |rho_hat|^2.
    pub fn pairing(&self, rho: &RealField) -> Result<f64> {
        if rho.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self.pairing_from_spectrum(rho.transform()))
    }

    pub fn pairing_from_spectrum(&self, rho_hat: Spectrum) -> f64 {
        self.pairing_parts(&rho_hat).0
    }

    /// (pairing, scale) where scale = (1/V) sum |K_hat| |rho_hat|^2 bounds
    /// the attainable magnitude; used for sign decisions near zero.
    pub fn pairing_parts(&self, rho_hat: &Spectrum) -> (f64, f64) {
        use rayon::prelude::*;
        let inv_vol = 1.0 / self.grid.volume();
        let partials: Vec<(f64, f64)> = rho_hat
            .data()
            .outer_iter()
            .into_par_iter()
            .zip(self.symbol.outer_iter().into_par_iter())
            .map(|(plane, sym)| {
                let mut p = 0.0;
                let mut a = 0.0;
                for (v, &s) in plane.iter().zip(sym.iter()) {
                    let w = v.norm_sqr();
                    p += s * w;
                    a += s.abs() * w;
                }
                (p, a)
            })
            .collect();
        let (mut p, mut a) = (0.0, 0.0);
        for (pp, aa) in partials {
            p += pp;
            a += aa;
        }
        (p * inv_vol, a * inv_vol)
    }
}

#[inline]
fn symbol_at(axis: [f64; 3], xi: [f64; 3]) -> f64 {
    let q = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
    if q == 0.0 {
        0.0
    } else {
        let dot = xi[0] * axis[0] + xi[1] * axis[1] + xi[2] * axis[2];
        (4.0 * PI / 3.0) * (3.0 * dot * dot / q - 1.0)
    }
}

/// Pairing (1/V) sum K_hat |rho_hat|^2 over the lattice of `rho_hat`,
/// with the symbol evaluated on the fly (no stored kernel needed); also
/// returns the |K_hat|-weighted magnitude scale.
pub(crate) fn pairing_on_lattice(axis: DipoleAxis, rho_hat: &Spectrum) -> (f64, f64) {
    use rayon::prelude::*;
    let grid = rho_hat.grid();
    let n = axis.components();
    let freqs = [grid.freqs(0).to_vec(), grid.freqs(1).to_vec(), grid.freqs(2).to_vec()];
    let partials: Vec<(f64, f64)> = rho_hat
        .data()
        .outer_iter()
        .into_par_iter()
        .enumerate()
        .map(|(k1, plane)| {
            let x1 = freqs[0][k1];
            let mut p = 0.0;
            let mut a = 0.0;
            for (k2, row) in plane.outer_iter().enumerate() {
                let x2 = freqs[1][k2];
                for (k3, v) in row.iter().enumerate() {
                    let s = symbol_at(n, [x1, x2, freqs[2][k3]]);
                    let w = v.norm_sqr();
                    p += s * w;
                    a += s.abs() * w;
                }
            }
            (p, a)
        })
        .collect();
    let inv_vol = 1.0 / grid.volume();
    let (mut p, mut a) = (0.0, 0.0);
    for (pp, aa) in partials {
        p += pp;
        a += aa;
    }
    (p * inv_vol, a * inv_vol)
}

/// Multiply a spectrum by the dipolar symbol evaluated on its own lattice.
pub(crate) fn mul_symbol_on_lattice(axis: DipoleAxis, hat: &mut Spectrum) {
    let n = axis.components();
    hat.map_modes(|xi, v| v * symbol_at(n, xi));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian_field, inner_product, random_smooth_field, Grid};
    use approx::assert_relative_eq;

    const EIGHT_PI_3: f64 = 8.377580409572781;
    const FOUR_PI_3: f64 = 4.188790204786391;

    fn grid32() -> Grid {
        Grid::new([32, 32, 32], [16.0, 16.0, 16.0]).unwrap()
    }

    #[test]
    fn symbol_values_on_and_off_axis() {
        let g = grid32();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        // first on-axis mode xi = (0, 0, 2 pi/L)
        assert_relative_eq!(k.symbol()[[0, 0, 1]], EIGHT_PI_3, max_relative = 1e-14);
        // perpendicular mode xi = (2 pi/L, 0, 0)
        assert_relative_eq!(k.symbol()[[1, 0, 0]], -FOUR_PI_3, max_relative = 1e-14);
        assert_eq!(k.symbol()[[0, 0, 0]], 0.0);
    }

    #[test]
    fn symbol_vanishes_at_magic_angle() {
        // need a lattice mode with cos^2 Theta = 1/3, i.e. xi1^2 = 2 xi3^2;
        // stretch the third box length so mode (2, 0, 1) satisfies it:
        // xi1 = 2*(2pi/16), xi3 = 2pi/(16/sqrt2) = sqrt2*(2pi/16).
        let g = Grid::new([16, 16, 16], [16.0, 16.0, 16.0 / 2f64.sqrt()]).unwrap();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        assert!(k.symbol()[[2, 0, 1]].abs() < 1e-13);
    }

    #[test]
    fn bounds_attained_on_cubic_lattice() {
        let g = grid32();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        let (lo, hi) = k.bounds();
        assert_relative_eq!(hi, EIGHT_PI_3, max_relative = 1e-12);
        assert_relative_eq!(lo, -FOUR_PI_3, max_relative = 1e-12);

        let kx = SpectralKernel::build(&g, DipoleAxis::new([1.0, 0.0, 0.0]).unwrap());
        let (lo_x, hi_x) = kx.bounds();
        assert_relative_eq!(hi_x, hi, max_relative = 1e-12);
        assert_relative_eq!(lo_x, lo, max_relative = 1e-12);
    }

    #[test]
    fn bounds_respected_on_tiny_grid() {
        let g = Grid::new([4, 4, 4], [5.0, 5.0, 5.0]).unwrap();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        let (lo, hi) = k.bounds();
        assert!(lo >= -FOUR_PI_3 - 1e-12 && hi <= EIGHT_PI_3 + 1e-12);
    }

    #[test]
    fn degree_zero_homogeneity_on_lattice() {
        let g = Grid::new([16, 16, 16], [11.0, 9.0, 16.0]).unwrap();
        let k = SpectralKernel::build(&g, DipoleAxis::new([0.6, 0.0, 0.8]).unwrap());
        // colinear pairs: mode (k1,k2,k3) vs (2k1,2k2,2k3)
        for &(k1, k2, k3) in &[(1usize, 2usize, 3usize), (2, 1, 0), (0, 3, 1), (3, 0, 2)] {
            let a = k.symbol()[[k1, k2, k3]];
            let b = k.symbol()[[2 * k1, 2 * k2, 2 * k3]];
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn isotropic_gaussian_pairing_vanishes() {
        let g = grid32();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        for &w in &[0.8, 1.0, 1.5] {
            let rho = gaussian_field(&g, 1.0, [w, w, w], [0.0; 3]).unwrap().density();
            let p = k.pairing(&rho).unwrap();
            assert!(p.abs() <= 1e-8 * rho.norm_l2_sq(), "pairing {p}");
        }
    }

    #[test]
    fn zero_density_maps_to_zero() {
        let g = Grid::new([8, 8, 8], [4.0, 4.0, 4.0]).unwrap();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        let rho = RealField::zeros(&g);
        let out = k.apply(&rho).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let out_p = k.apply_via_poisson(&rho).unwrap();
        assert!(out_p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cigar_gaussian_pairing_is_negative_and_matches_quadrature() {
        let g = Grid::new([48, 48, 48], [16.0, 16.0, 16.0]).unwrap();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        let rho = gaussian_field(&g, 1.0, [1.0, 1.0, 2.0], [0.0; 3]).unwrap().density();
        let p = k.pairing(&rho).unwrap();
        assert!(p < 0.0);

        // oracles use the analytic transform of the density
        // rho = exp(-x_perp^2/sp^2 - x3^2/s3^2):
        // rho_hat(xi) = pi^(3/2) sp^2 s3 exp(-(sp^2 xi_perp^2 + s3^2 xi3^2)/4).
        let (sp, s3) = (1.0f64, 2.0f64);
        let amp = PI.powf(1.5) * sp * sp * s3;
        let rho_hat = |q2: f64, z2: f64| amp * (-(sp * sp * q2 + s3 * s3 * z2) / 4.0).exp();

        // oracle 1: the same lattice sum with analytic rho_hat samples;
        // tight because only sampling/periodization error of rho enters.
        let mut lattice = 0.0;
        for (idx, &s) in k.symbol().indexed_iter() {
            let xi = [g.freqs(0)[idx.0], g.freqs(1)[idx.1], g.freqs(2)[idx.2]];
            let rh = rho_hat(xi[0] * xi[0] + xi[1] * xi[1], xi[2] * xi[2]);
            lattice += s * rh * rh;
        }
        lattice /= g.volume();
        assert_relative_eq!(p, lattice, max_relative = 1e-8);

        // oracle 2: continuum cylindrical quadrature of
        // (2 pi)^-3 integral K_hat |rho_hat|^2; differs from the lattice
        // value by periodic-image terms, so the tolerance is loose.
        let (nq, nz) = (600usize, 1200usize);
        let (qmax, zmax) = (12.0, 12.0);
        let (dq, dz) = (qmax / nq as f64, 2.0 * zmax / nz as f64);
        let mut sum = 0.0;
        for iq in 0..nq {
            let q = (iq as f64 + 0.5) * dq;
            for iz in 0..nz {
                let z = -zmax + (iz as f64 + 0.5) * dz;
                let norm2 = q * q + z * z;
                let sym = (4.0 * PI / 3.0) * (3.0 * z * z / norm2 - 1.0);
                let rh = rho_hat(q * q, z * z);
                sum += sym * rh * rh * q;
            }
        }
        let continuum = sum * dq * dz * 2.0 * PI / (2.0 * PI).powi(3);
        assert_relative_eq!(p, continuum, max_relative = 1e-2);
        assert!(continuum < 0.0);
    }

    #[test]
    fn poisson_route_matches_symbol_route() {
        let g = grid32();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        for seed in 0..5 {
            let rho = random_smooth_field(&g, seed, 4).density();
            let a = k.apply(&rho).unwrap();
            let b = k.apply_via_poisson(&rho).unwrap();
            let mut diff = 0.0;
            let mut norm = 0.0;
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                diff += (x - y) * (x - y);
                norm += x * x;
            }
            assert!(
                (diff / norm.max(f64::MIN_POSITIVE)).sqrt() < 1e-12,
                "relative deviation {}",
                (diff / norm).sqrt()
            );
        }
    }

    #[test]
    fn poisson_route_requires_canonical_axis() {
        let g = Grid::new([8, 8, 8], [4.0, 4.0, 4.0]).unwrap();
        let k = SpectralKernel::build(&g, DipoleAxis::new([1.0, 0.0, 0.0]).unwrap());
        let rho = RealField::zeros(&g);
        assert!(matches!(k.apply_via_poisson(&rho), Err(Error::NonCanonicalAxis)));
    }

    #[test]
    fn operator_is_self_adjoint() {
        let g = Grid::new([16, 16, 16], [10.0, 10.0, 10.0]).unwrap();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        let f = random_smooth_field(&g, 11, 3).density();
        let h = random_smooth_field(&g, 12, 3).density();
        let kf_h = inner_product(&k.apply(&f).unwrap().to_complex(), &h.to_complex()).unwrap();
        let f_kh = inner_product(&f.to_complex(), &k.apply(&h).unwrap().to_complex()).unwrap();
        assert_relative_eq!(kf_h.re, f_kh.re, max_relative = 1e-12);
    }

    #[test]
    fn axis_validation() {
        assert!(DipoleAxis::new([0.0, 0.0, 0.0]).is_err());
        assert!(DipoleAxis::new([1.0, 1.0, 0.0]).is_err());
        let a = DipoleAxis::from_direction([0.0, 0.0, 2.0]).unwrap();
        assert!(a.is_canonical());
    }
}
