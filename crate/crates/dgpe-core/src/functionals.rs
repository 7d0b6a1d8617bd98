//! Scalar functionals of a field: mass, energy decomposition, the
//! scale-invariant quotient J and its L2 gradient, coupling admissibility,
//! and the a-posteriori identities (Pohozaev, virial) used to verify
//! standing waves.

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Spectrum};
use crate::kernel::SpectralKernel;
use ndarray::Zip;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Contact strength lambda1 and dipolar strength lambda2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Couplings {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Couplings {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !lambda1.is_finite() || !lambda2.is_finite() {
            return Err(Error::BadConfig(format!(
                "couplings must be finite, got ({lambda1}, {lambda2})"
            )));
        }
        Ok(Couplings { lambda1, lambda2 })
    }

    pub fn admissibility(&self) -> Admissibility {
        if self.lambda2 > 0.0 {
            if self.lambda1 < 4.0 * PI / 3.0 * self.lambda2 {
                Admissibility::Admissible
            } else {
                Admissibility::Inadmissible(CouplingBranch::DipolarPositive)
            }
        } else if self.lambda2 < 0.0 {
            if self.lambda1 < -8.0 * PI / 3.0 * self.lambda2 {
                Admissibility::Admissible
            } else {
                Admissibility::Inadmissible(CouplingBranch::DipolarNegative)
            }
        } else if self.lambda1 < 0.0 {
            Admissibility::Admissible
        } else {
            Admissibility::Inadmissible(CouplingBranch::DipolarZero)
        }
    }

    pub fn is_admissible(&self) -> bool {
        self.admissibility() == Admissibility::Admissible
    }

    pub fn require_admissible(&self) -> Result<()> {
        match self.admissibility() {
            Admissibility::Admissible => Ok(()),
            Admissibility::Inadmissible(branch) => Err(Error::NotAdmissible {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                condition: branch.condition(self),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admissibility {
    Admissible,
    /// The necessary condition fails on this branch of the coupling plane.
    Inadmissible(CouplingBranch),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingBranch {
    /// lambda2 > 0: requires lambda1 < (4 pi/3) lambda2.
    DipolarPositive,
    /// lambda2 < 0: requires lambda1 < -(8 pi/3) lambda2.
    DipolarNegative,
    /// lambda2 = 0: requires lambda1 < 0 (attractive contact limit).
    DipolarZero,
}

impl CouplingBranch {
    pub fn condition(&self, c: &Couplings) -> String {
        match self {
            CouplingBranch::DipolarPositive => format!(
                "lambda2 > 0 requires lambda1 < (4*pi/3)*lambda2 = {:.6}",
                4.0 * PI / 3.0 * c.lambda2
            ),
            CouplingBranch::DipolarNegative => format!(
                "lambda2 < 0 requires lambda1 < -(8*pi/3)*lambda2 = {:.6}",
                -8.0 * PI / 3.0 * c.lambda2
            ),
            CouplingBranch::DipolarZero => "lambda2 = 0 requires lambda1 < 0".to_string(),
        }
    }
}

/// The six scalars of the energy decomposition.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyBreakdown {
    /// N = integral |u|^2
    pub mass: f64,
    /// T = (1/2) integral |grad u|^2
    pub kinetic: f64,
    /// Q = integral |u|^4
    pub quartic: f64,
    /// D = <K*(|u|^2), |u|^2>
    pub dipolar: f64,
    /// V = (lambda1/2) Q + (lambda2/2) D
    pub potential: f64,
    /// E = T + V
    pub total: f64,
}

/// Quartic quantities of the band-limited interpolant, evaluated without
/// aliasing on a doubled lattice. The density of a band-limited field is
/// exactly representable there and the rectangle rule integrates its
/// square exactly, so these are the true integrals of the trigonometric
/// interpolant; the plain per-sample sums would break the functional's
/// scale invariance at the working resolutions.
pub(crate) struct QuarticTerms {
    /// Interpolant samples on the doubled lattice.
    pub v_fine: ComplexField,
    /// Exact density spectrum; `None` until a dipolar term asks for it.
    pub rho_fine_hat: Option<Spectrum>,
    pub quartic: f64,
    pub dipolar: f64,
    pub dipolar_abs: f64,
}

pub(crate) fn quartic_terms(
    v_hat: &Spectrum,
    axis: crate::kernel::DipoleAxis,
    needs_dipolar: bool,
) -> Result<QuarticTerms> {
    let fine = crate::grid::doubled_grid(v_hat.grid());
    let v_fine = v_hat.pad_to(&fine)?.inverse();
    let rho_fine = v_fine.density();
    let quartic = rho_fine.norm_l2_sq();
    if !needs_dipolar {
        return Ok(QuarticTerms { v_fine, rho_fine_hat: None, quartic, dipolar: 0.0, dipolar_abs: 0.0 });
    }
    let rho_fine_hat = rho_fine.transform();
    let (dipolar, dipolar_abs) = crate::kernel::pairing_on_lattice(axis, &rho_fine_hat);
    Ok(QuarticTerms { v_fine, rho_fine_hat: Some(rho_fine_hat), quartic, dipolar, dipolar_abs })
}

pub fn energy_breakdown(
    u: &ComplexField,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<EnergyBreakdown> {
    if u.grid() != kernel.grid() {
        return Err(Error::GridMismatch);
    }
    let mass = u.norm_l2_sq();
    let u_hat = u.transform();
    let kinetic = 0.5 * u_hat.grad_norm_sq();
    let q = quartic_terms(&u_hat, kernel.axis(), couplings.lambda2 != 0.0)?;
    let potential = 0.5 * couplings.lambda1 * q.quartic + 0.5 * couplings.lambda2 * q.dipolar;
    Ok(EnergyBreakdown {
        mass,
        kinetic,
        quartic: q.quartic,
        dipolar: q.dipolar,
        potential,
        total: kinetic + potential,
    })
}

/// Pieces of one J evaluation, shared between the value, the gradient and
/// the descent loop.
#[derive(Clone, Copy, Debug)]
pub struct JParts {
    /// beta1 = ||v||_2
    pub norm: f64,
    /// beta2 = ||grad v||_2
    pub grad_norm: f64,
    pub quartic: f64,
    pub dipolar: f64,
    /// -lambda1 Q - lambda2 D (= -2V)
    pub den: f64,
    /// |lambda1| Q + |lambda2| sum |K_hat||rho_hat|^2 / V; magnitude scale
    /// used to decide whether den is meaningfully positive.
    pub den_scale: f64,
    pub j: f64,
}

#[derive(Clone)]
pub(crate) struct EvalCache {
    pub v_hat: Spectrum,
    pub v_fine: ComplexField,
    pub rho_fine_hat: Option<Spectrum>,
    pub parts: JParts,
}

/// Denominator positivity threshold, relative to the attainable magnitude.
const DEN_REL_FLOOR: f64 = 1e-12;

pub(crate) fn evaluate(
    v: &ComplexField,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<EvalCache> {
    if v.grid() != kernel.grid() {
        return Err(Error::GridMismatch);
    }
    let norm_sq = v.norm_l2_sq();
    if norm_sq == 0.0 {
        return Err(Error::ZeroField);
    }
    let v_hat = v.transform();
    let grad_sq = v_hat.grad_norm_sq();
    let q = quartic_terms(&v_hat, kernel.axis(), couplings.lambda2 != 0.0)?;
    let den = -couplings.lambda1 * q.quartic - couplings.lambda2 * q.dipolar;
    let den_scale =
        couplings.lambda1.abs() * q.quartic + couplings.lambda2.abs() * q.dipolar_abs;
    if den <= DEN_REL_FLOOR * den_scale {
        return Err(Error::NonpositiveDenominator { den });
    }
    let norm = norm_sq.sqrt();
    let grad_norm = grad_sq.sqrt();
    let j = grad_norm.powi(3) * norm / den;
    Ok(EvalCache {
        v_hat,
        v_fine: q.v_fine,
        rho_fine_hat: q.rho_fine_hat,
        parts: JParts {
            norm,
            grad_norm,
            quartic: q.quartic,
            dipolar: q.dipolar,
            den,
            den_scale,
            j,
        },
    })
}

/// J(v) = ||grad v||^3 ||v|| / (-lambda1 ||v||_4^4 - lambda2 <K rho, rho>).
pub fn weinstein_j(
    v: &ComplexField,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<f64> {
    Ok(evaluate(v, kernel, couplings)?.parts.j)
}

pub fn weinstein_j_parts(
    v: &ComplexField,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<JParts> {
    Ok(evaluate(v, kernel, couplings)?.parts)
}

/// Band projection of (lambda1 rho + lambda2 K rho) v, computed exactly on
/// the doubled lattice; this is the variation of the dealiased quartic
/// terms. Returned in spectral form on the coarse lattice.
pub(crate) fn nonlinear_term_hat(
    cache: &EvalCache,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<Spectrum> {
    let (l1, l2) = (couplings.lambda1, couplings.lambda2);
    let v_fine = &cache.v_fine;
    let mut wv = ComplexField::zeros(v_fine.grid());
    if let Some(rho_fine_hat) = &cache.rho_fine_hat {
        let mut conv_hat = rho_fine_hat.clone();
        crate::kernel::mul_symbol_on_lattice(kernel.axis(), &mut conv_hat);
        let conv = conv_hat.inverse();
        Zip::from(wv.data_mut())
            .and(v_fine.data())
            .and(conv.data())
            .par_for_each(|out, &vv, &kr| {
                *out = (l1 * vv.norm_sqr() + l2 * kr.re) * vv;
            });
    } else {
        Zip::from(wv.data_mut()).and(v_fine.data()).par_for_each(|out, &vv| {
            *out = l1 * vv.norm_sqr() * vv;
        });
    }
    wv.transform().restricted_to(cache.v_hat.grid())
}

pub(crate) fn nonlinear_term(
    cache: &EvalCache,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<ComplexField> {
    Ok(nonlinear_term_hat(cache, kernel, couplings)?.inverse())
}

/// Cache carrying only the spectral/fine data needed by `nonlinear_term`,
/// for callers that do not evaluate J itself.
pub(crate) fn product_cache(
    u_hat: Spectrum,
    axis: crate::kernel::DipoleAxis,
    needs_dipolar: bool,
) -> Result<EvalCache> {
    let q = quartic_terms(&u_hat, axis, needs_dipolar)?;
    Ok(EvalCache {
        v_hat: u_hat,
        v_fine: q.v_fine,
        rho_fine_hat: q.rho_fine_hat,
        parts: JParts {
            norm: 0.0,
            grad_norm: 0.0,
            quartic: q.quartic,
            dipolar: q.dipolar,
            den: 0.0,
            den_scale: 0.0,
            j: 0.0,
        },
    })
}

pub(crate) fn gradient_from_cache(
    v: &ComplexField,
    cache: &EvalCache,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<ComplexField> {
    let p = &cache.parts;
    let lap = {
        let mut s = cache.v_hat.clone();
        s.map_modes(|xi, val| val * -(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]));
        s.inverse()
    };
    let wv = nonlinear_term(cache, kernel, couplings)?;
    let c_lap = -3.0 * p.norm * p.grad_norm;
    let c_v = p.grad_norm.powi(3) / p.norm;
    let c_nl = 4.0 * p.j;
    let inv_den = 1.0 / p.den;
    let mut g = ComplexField::zeros(v.grid());
    Zip::from(g.data_mut())
        .and(v.data())
        .and(lap.data())
        .and(wv.data())
        .par_for_each(|out, &vv, &dv, &w| {
            *out = (c_lap * dv + c_v * vv + c_nl * w) * inv_den;
        });
    Ok(g)
}

/// L2 gradient of J: the real part of <g, eta> equals the directional
/// derivative of J at v along eta.
pub fn weinstein_gradient(
    v: &ComplexField,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<ComplexField> {
    let cache = evaluate(v, kernel, couplings)?;
    gradient_from_cache(v, &cache, kernel, couplings)
}

/// Relative residuals of the three standing-wave identities
/// T = 3 omega N, V = -2 omega N, E = T/3, from precomputed scalars.
pub fn pohozaev_residuals_from_breakdown(b: &EnergyBreakdown, omega: f64) -> [f64; 3] {
    let rel = |a: f64, b: f64| -> f64 {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    };
    [
        rel(b.kinetic, 3.0 * omega * b.mass),
        rel(b.potential, -2.0 * omega * b.mass),
        rel(b.total, b.kinetic / 3.0),
    ]
}

pub fn pohozaev_residuals(
    u: &ComplexField,
    omega: f64,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<[f64; 3]> {
    let b = energy_breakdown(u, kernel, couplings)?;
    Ok(pohozaev_residuals_from_breakdown(&b, omega))
}

/// Right-hand side of the variance identity:
/// I'' = integral |grad psi|^2 + (3 lambda1/2)|psi|^4 + (3 lambda2/2)(K rho) rho.
pub fn virial_rhs(
    psi: &ComplexField,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<f64> {
    let b = energy_breakdown(psi, kernel, couplings)?;
    Ok(virial_rhs_from_breakdown(&b, couplings))
}

pub fn virial_rhs_from_breakdown(b: &EnergyBreakdown, couplings: &Couplings) -> f64 {
    2.0 * b.kinetic + 1.5 * (couplings.lambda1 * b.quartic + couplings.lambda2 * b.dipolar)
}

/// I = integral (|x|^2 / 2) |psi|^2, x measured from the box center.
pub fn variance(psi: &ComplexField) -> f64 {
    let g = psi.grid();
    let (c0, c1, c2) = (g.coords(0).to_vec(), g.coords(1).to_vec(), g.coords(2).to_vec());
    let partials: Vec<f64> = psi
        .data()
        .outer_iter()
        .into_par_iter()
        .enumerate()
        .map(|(i1, plane)| {
            let x1sq = c0[i1] * c0[i1];
            let mut s = 0.0;
            for (i2, row) in plane.outer_iter().enumerate() {
                let x12 = x1sq + c1[i2] * c1[i2];
                for (i3, v) in row.iter().enumerate() {
                    s += 0.5 * (x12 + c2[i3] * c2[i3]) * v.norm_sqr();
                }
            }
            s
        })
        .collect();
    g.cell_volume() * partials.iter().sum::<f64>()
}

/// Center of mass integral x |psi|^2 / N, x from the box center.
pub fn center_of_mass(psi: &ComplexField) -> [f64; 3] {
    let g = psi.grid();
    let (c0, c1, c2) = (g.coords(0).to_vec(), g.coords(1).to_vec(), g.coords(2).to_vec());
    let partials: Vec<[f64; 4]> = psi
        .data()
        .outer_iter()
        .into_par_iter()
        .enumerate()
        .map(|(i1, plane)| {
            let mut s = [0.0; 4];
            for (i2, row) in plane.outer_iter().enumerate() {
                for (i3, v) in row.iter().enumerate() {
                    let w = v.norm_sqr();
                    s[0] += w * c0[i1];
                    s[1] += w * c1[i2];
                    s[2] += w * c2[i3];
                    s[3] += w;
                }
            }
            s
        })
        .collect();
    let mut acc = [0.0; 4];
    for p in partials {
        for a in 0..4 {
            acc[a] += p[a];
        }
    }
    let n = acc[3].max(f64::MIN_POSITIVE);
    [acc[0] / n, acc[1] / n, acc[2] / n]
}

/// RMS widths (sigma_1, sigma_2, sigma_3) of |psi|^2 about its center of
/// mass; sigma3 / sqrt(sigma1 sigma2) is the reported aspect ratio.
pub fn rms_widths(psi: &ComplexField) -> [f64; 3] {
    let com = center_of_mass(psi);
    let g = psi.grid();
    let (c0, c1, c2) = (g.coords(0).to_vec(), g.coords(1).to_vec(), g.coords(2).to_vec());
    let partials: Vec<[f64; 4]> = psi
        .data()
        .outer_iter()
        .into_par_iter()
        .enumerate()
        .map(|(i1, plane)| {
            let mut s = [0.0; 4];
            let d1 = c0[i1] - com[0];
            for (i2, row) in plane.outer_iter().enumerate() {
                let d2 = c1[i2] - com[1];
                for (i3, v) in row.iter().enumerate() {
                    let w = v.norm_sqr();
                    let d3 = c2[i3] - com[2];
                    s[0] += w * d1 * d1;
                    s[1] += w * d2 * d2;
                    s[2] += w * d3 * d3;
                    s[3] += w;
                }
            }
            s
        })
        .collect();
    let mut acc = [0.0; 4];
    for p in partials {
        for a in 0..4 {
            acc[a] += p[a];
        }
    }
    let n = acc[3].max(f64::MIN_POSITIVE);
    [(acc[0] / n).sqrt(), (acc[1] / n).sqrt(), (acc[2] / n).sqrt()]
}

/// (-lambda1 ||f||_4^4 - lambda2 <K rho, rho>) / (||grad f||^3 ||f||),
/// the reciprocal of J; defined for any sign of the numerator.
pub fn sharp_constant_ratio(
    f: &ComplexField,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<f64> {
    if f.grid() != kernel.grid() {
        return Err(Error::GridMismatch);
    }
    let norm_sq = f.norm_l2_sq();
    if norm_sq == 0.0 {
        return Err(Error::ZeroField);
    }
    let f_hat = f.transform();
    let grad = f_hat.grad_norm_sq().sqrt();
    let q = quartic_terms(&f_hat, kernel.axis(), couplings.lambda2 != 0.0)?;
    let num = -couplings.lambda1 * q.quartic - couplings.lambda2 * q.dipolar;
    Ok(num / (grad.powi(3) * norm_sq.sqrt()))
}
