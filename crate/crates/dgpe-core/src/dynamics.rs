//! Time propagation by Strang splitting, Galilean boosts of standing
//! waves, variance (virial) diagnostics, and blow-up monitoring.
//!
//! The local half-step multiplies by exp(-i (dt/2) (lambda1 |psi|^2 +
//! lambda2 K*rho + V_ext)); it is exact because the phase leaves |psi|^2
//! invariant. The kinetic step multiplies mode xi by exp(-i (dt/2) |xi|^2),
//! the full-step propagator of -(1/2) Laplacian. Every substep is an
//! isometry, so mass is conserved to rounding.

use crate::error::{Error, Result};
use crate::functionals::{
    center_of_mass, energy_breakdown, variance, Couplings,
    EnergyBreakdown,
};
use crate::grid::{gaussian_field, ComplexField, Grid, RealField, Spectrum};
use crate::kernel::SpectralKernel;
use ndarray::{Array3, Zip};
use num_complex::Complex64;
use serde::Serialize;

#[derive(Clone, Debug)]
pub struct PropagationConfig {
    pub dt: f64,
    pub steps: usize,
    /// Diagnostics (and snapshots) are recorded every this many steps.
    pub snapshot_stride: usize,
    /// Keep field snapshots in the trajectory (diagnostics are always kept).
    pub keep_snapshots: bool,
    /// Harmonic confinement |x|^2/2 about the box center.
    pub trap: bool,
    /// Blow-up monitor: max density amplification over the initial state.
    pub density_blowup_factor: f64,
    /// Blow-up monitor: mass fraction allowed in the top third of modes.
    pub tail_fraction_limit: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            dt: 1e-3,
            steps: 1000,
            snapshot_stride: 10,
            keep_snapshots: true,
            trap: false,
            density_blowup_factor: 1e4,
            tail_fraction_limit: 1e-4,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::BadConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps < 1 {
            return Err(Error::BadConfig("steps must be >= 1".into()));
        }
        if self.snapshot_stride < 1 {
            return Err(Error::BadConfig("snapshot_stride must be >= 1".into()));
        }
        if !(self.density_blowup_factor > 1.0) || !(self.tail_fraction_limit > 0.0) {
            return Err(Error::BadConfig("blow-up thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// One recorded diagnostics row.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub kinetic: f64,
    /// (lambda1/2) integral |psi|^4
    pub contact_energy: f64,
    /// (lambda2/2) <K rho, rho>
    pub dipolar_energy: f64,
    pub total_energy: f64,
    /// I = integral (|x|^2/2) |psi|^2
    pub variance: f64,
    pub com: [f64; 3],
    pub max_density: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BlowUpInfo {
    pub step: usize,
    pub t: f64,
    pub density_amplification: f64,
    pub tail_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<(f64, ComplexField)>,
    pub diagnostics: Vec<DiagnosticsRow>,
    /// Set when the resolution monitor tripped; the trajectory is truncated.
    pub blow_up: Option<BlowUpInfo>,
    pub trapped: bool,
    pub final_state: ComplexField,
    pub final_time: f64,
}

/// Mass fraction carried by modes in the outer third of the Nyquist range
/// on any axis.
fn tail_fraction(hat: &Spectrum) -> f64 {
    let n = hat.grid().n();
    let mut tail = 0.0;
    let mut total = 0.0;
    for ((k1, k2, k3), v) in hat.data().indexed_iter() {
        let w = v.norm_sqr();
        total += w;
        let m1 = if k1 < n[0] / 2 { k1 } else { n[0] - k1 };
        let m2 = if k2 < n[1] / 2 { k2 } else { n[1] - k2 };
        let m3 = if k3 < n[2] / 2 { k3 } else { n[2] - k3 };
        if 3 * m1 >= n[0] || 3 * m2 >= n[1] || 3 * m3 >= n[2] {
            tail += w;
        }
    }
    tail / total.max(f64::MIN_POSITIVE)
}

struct Stepper<'a> {
    kernel: &'a SpectralKernel,
    couplings: Couplings,
    kinetic_phase: Array3<Complex64>,
    trap_potential: Option<RealField>,
    has_contact: bool,
    has_dipolar: bool,
}

impl<'a> Stepper<'a> {
    fn new(grid: &Grid, kernel: &'a SpectralKernel, couplings: &Couplings, config: &PropagationConfig) -> Self {
        let mut kinetic_phase = Array3::default(grid.shape());
        let f = [grid.freqs(0).to_vec(), grid.freqs(1).to_vec(), grid.freqs(2).to_vec()];
        let dt = config.dt;
        Zip::indexed(&mut kinetic_phase).par_for_each(|(k1, k2, k3), p| {
            let q = f[0][k1] * f[0][k1] + f[1][k2] * f[1][k2] + f[2][k3] * f[2][k3];
            *p = Complex64::new(0.0, -0.5 * dt * q).exp();
        });
        let trap_potential = config.trap.then(|| {
            RealField::from_fn(grid, |x1, x2, x3| 0.5 * (x1 * x1 + x2 * x2 + x3 * x3))
        });
        Stepper {
            kernel,
            couplings: *couplings,
            kinetic_phase,
            trap_potential,
            has_contact: couplings.lambda1 != 0.0,
            has_dipolar: couplings.lambda2 != 0.0,
        }
    }

    /// psi <- exp(-i tau W) psi with W = lambda1 rho + lambda2 K*rho + V_ext.
    fn local_phase(&self, psi: &mut ComplexField, tau: f64) -> Result<()> {
        if !self.has_contact && !self.has_dipolar && self.trap_potential.is_none() {
            return Ok(());
        }
        let rho = psi.density();
        let conv = if self.has_dipolar { Some(self.kernel.apply(&rho)?) } else { None };
        let l1 = self.couplings.lambda1;
        let l2 = self.couplings.lambda2;
        match (&conv, &self.trap_potential) {
            (Some(kr), Some(vx)) => {
                Zip::from(psi.data_mut())
                    .and(rho.data())
                    .and(kr.data())
                    .and(vx.data())
                    .par_for_each(|p, &r, &k, &v| {
                        *p *= Complex64::new(0.0, -tau * (l1 * r + l2 * k + v)).exp()
                    });
            }
            (Some(kr), None) => {
                Zip::from(psi.data_mut()).and(rho.data()).and(kr.data()).par_for_each(
                    |p, &r, &k| *p *= Complex64::new(0.0, -tau * (l1 * r + l2 * k)).exp(),
                );
            }
            (None, Some(vx)) => {
                Zip::from(psi.data_mut()).and(rho.data()).and(vx.data()).par_for_each(
                    |p, &r, &v| *p *= Complex64::new(0.0, -tau * (l1 * r + v)).exp(),
                );
            }
            (None, None) => {
                Zip::from(psi.data_mut())
                    .and(rho.data())
                    .par_for_each(|p, &r| *p *= Complex64::new(0.0, -tau * l1 * r).exp());
            }
        }
        Ok(())
    }

    fn kinetic_full(&self, psi: &mut ComplexField) {
        let mut hat = psi.transform();
        Zip::from(hat.data_mut()).and(&self.kinetic_phase).par_for_each(|v, &p| *v *= p);
        *psi = hat.inverse();
    }

    /// One Strang step V(dt/2) K(dt) V(dt/2).
    fn step(&self, psi: &mut ComplexField, dt: f64) -> Result<()> {
        self.local_phase(psi, 0.5 * dt)?;
        self.kinetic_full(psi);
        self.local_phase(psi, 0.5 * dt)?;
        Ok(())
    }
}

fn diagnostics_row(
    psi: &ComplexField,
    t: f64,
    kernel: &SpectralKernel,
    couplings: &Couplings,
) -> Result<(DiagnosticsRow, EnergyBreakdown)> {
    let b = energy_breakdown(psi, kernel, couplings)?;
    let max_density = psi.data().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    let row = DiagnosticsRow {
        t,
        mass: b.mass,
        kinetic: b.kinetic,
        contact_energy: 0.5 * couplings.lambda1 * b.quartic,
        dipolar_energy: 0.5 * couplings.lambda2 * b.dipolar,
        total_energy: b.total,
        variance: variance(psi),
        com: center_of_mass(psi),
        max_density,
    };
    Ok((row, b))
}

/// Propagate with Strang splitting, recording diagnostics (and optionally
/// field snapshots) every `snapshot_stride` steps. A tripped blow-up
/// monitor truncates the run and flags the trajectory.
pub fn split_step(
    psi0: &ComplexField,
    kernel: &SpectralKernel,
    couplings: &Couplings,
    config: &PropagationConfig,
) -> Result<Trajectory> {
    config.validate()?;
    if psi0.grid() != kernel.grid() {
        return Err(Error::GridMismatch);
    }
    if !psi0.is_finite() {
        return Err(Error::NonfiniteField);
    }

    let stepper = Stepper::new(psi0.grid(), kernel, couplings, config);
    let mut psi = psi0.clone();
    let mut snapshots = Vec::new();
    let mut diagnostics = Vec::new();
    let mut blow_up = None;

    let density0 = psi.data().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    let (row0, _) = diagnostics_row(&psi, 0.0, kernel, couplings)?;
    diagnostics.push(row0);
    if config.keep_snapshots {
        snapshots.push((0.0, psi.clone()));
    }

    let mut t = 0.0;
    for step in 1..=config.steps {
        stepper.step(&mut psi, config.dt)?;
        t = step as f64 * config.dt;

        let max_density = psi.data().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        if !max_density.is_finite() {
            return Err(Error::NonfiniteField);
        }
        let amplification = max_density / density0.max(f64::MIN_POSITIVE);
        let record = step % config.snapshot_stride == 0;
        let mut tail = 0.0;
        if record || amplification > config.density_blowup_factor {
            tail = tail_fraction(&psi.transform());
        }
        if amplification > config.density_blowup_factor || tail > config.tail_fraction_limit {
            blow_up = Some(BlowUpInfo {
                step,
                t,
                density_amplification: amplification,
                tail_fraction: tail,
            });
            break;
        }
        if record {
            let (row, _) = diagnostics_row(&psi, t, kernel, couplings)?;
            diagnostics.push(row);
            if config.keep_snapshots {
                snapshots.push((t, psi.clone()));
            }
        }
    }

    Ok(Trajectory {
        snapshots,
        diagnostics,
        blow_up,
        trapped: config.trap,
        final_state: psi,
        final_time: t,
    })
}

/// Galilean boost data: the requested velocity snapped onto the frequency
/// lattice so the boost phase is periodic.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoostTrack {
    pub requested: [f64; 3],
    pub velocity: [f64; 3],
    pub omega: f64,
    pub initial_com: [f64; 3],
}

impl BoostTrack {
    /// Predicted center of mass at time t (no box wrapping applied).
    pub fn predicted_com(&self, t: f64) -> [f64; 3] {
        [
            self.initial_com[0] + self.velocity[0] * t,
            self.initial_com[1] + self.velocity[1] * t,
            self.initial_com[2] + self.velocity[2] * t,
        ]
    }

    /// The analytic boosted standing wave at time t:
    /// u(x - v t) exp(i (v.x - |v|^2 t/2 + omega t)).
    pub fn predicted_field(&self, u: &ComplexField, t: f64) -> ComplexField {
        let v = self.velocity;
        let mut hat = u.transform();
        hat.map_modes(|xi, val| {
            let phase = -(xi[0] * v[0] + xi[1] * v[1] + xi[2] * v[2]) * t;
            val * Complex64::new(0.0, phase).exp()
        });
        let translated = hat.inverse();
        let vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        let global = (self.omega - 0.5 * vv) * t;
        let grid = u.grid().clone();
        let mut out = translated;
        let (c0, c1, c2) =
            (grid.coords(0).to_vec(), grid.coords(1).to_vec(), grid.coords(2).to_vec());
        Zip::indexed(out.data_mut()).par_for_each(|(i1, i2, i3), val| {
            let phase = v[0] * c0[i1] + v[1] * c1[i2] + v[2] * c2[i3] + global;
            *val *= Complex64::new(0.0, phase).exp();
        });
        out
    }
}

/// Multiply a standing-wave profile by the lattice-periodic plane wave
/// exp(i v.x); returns the boosted initial state and the expected track.
pub fn boost(u: &ComplexField, omega: f64, velocity: [f64; 3]) -> (ComplexField, BoostTrack) {
    let grid = u.grid();
    let len = grid.lengths();
    let mut snapped = [0.0; 3];
    for a in 0..3 {
        let unit = 2.0 * std::f64::consts::PI / len[a];
        snapped[a] = unit * (velocity[a] / unit).round();
    }
    let (c0, c1, c2) =
        (grid.coords(0).to_vec(), grid.coords(1).to_vec(), grid.coords(2).to_vec());
    let mut psi0 = u.clone();
    Zip::indexed(psi0.data_mut()).par_for_each(|(i1, i2, i3), val| {
        let phase = snapped[0] * c0[i1] + snapped[1] * c1[i2] + snapped[2] * c2[i3];
        *val *= Complex64::new(0.0, phase).exp();
    });
    let track =
        BoostTrack { requested: velocity, velocity: snapped, omega, initial_com: center_of_mass(u) };
    (psi0, track)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct VirialRow {
    pub t: f64,
    /// Central second difference of the recorded variance.
    pub i_dd_fd: f64,
    /// 2T + (3/2)(lambda1 Q + lambda2 D) evaluated at the same time.
    pub i_dd_formula: f64,
    /// |fd - formula| / max(|fd|, |formula|).
    pub mismatch: f64,
}

/// Compare the finite-difference second derivative of the variance with
/// the virial right-hand side at every interior diagnostics record. The
/// right-hand side comes from the recorded energy components.
pub fn virial_check(traj: &Trajectory) -> Result<Vec<VirialRow>> {
    if traj.trapped {
        return Err(Error::TrapActive);
    }
    let d = &traj.diagnostics;
    if d.len() < 3 {
        return Err(Error::InsufficientSnapshots(d.len()));
    }
    let dt = d[1].t - d[0].t;
    for w in d.windows(2) {
        let step = w[1].t - w[0].t;
        if ((step - dt) / dt).abs() > 1e-9 {
            return Err(Error::InsufficientSnapshots(d.len()));
        }
    }
    let mut rows = Vec::with_capacity(d.len() - 2);
    for k in 1..d.len() - 1 {
        let fd = (d[k + 1].variance - 2.0 * d[k].variance + d[k - 1].variance) / (dt * dt);
        let formula = 2.0 * d[k].kinetic + 3.0 * (d[k].contact_energy + d[k].dipolar_energy);
        let scale = fd.abs().max(formula.abs()).max(f64::MIN_POSITIVE);
        rows.push(VirialRow { t: d[k].t, i_dd_fd: fd, i_dd_formula: formula, mismatch: (fd - formula).abs() / scale });
    }
    Ok(rows)
}

/// Gaussian of the given widths with its amplitude placed just above the
/// zero-energy root, so the total energy is strictly negative.
#[derive(Clone, Debug)]
pub struct NegativeEnergyState {
    pub field: ComplexField,
    pub amplitude: f64,
    /// Amplitude at which E = 0, located by bisection.
    pub root_amplitude: f64,
    pub breakdown: EnergyBreakdown,
}

pub fn make_negative_energy_state(
    grid: &Grid,
    kernel: &SpectralKernel,
    couplings: &Couplings,
    widths: [f64; 3],
) -> Result<NegativeEnergyState> {
    couplings.require_admissible()?;
    let unit = gaussian_field(grid, 1.0, widths, [0.0; 3])?;
    let b = energy_breakdown(&unit, kernel, couplings)?;
    if b.potential >= 0.0 {
        return Err(Error::ShapeNotFocusing);
    }
    // E(A) = A^2 T + A^4 V with V < 0
    let energy = |a: f64| a * a * b.kinetic + a.powi(4) * b.potential;
    let mut hi = 1.0;
    while energy(hi) >= 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if energy(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        let t_mid = mid * mid * b.kinetic;
        if energy(mid).abs() <= 1e-9 * t_mid && t_mid > 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    let amplitude = 1.25 * root;
    let field = unit.scaled(amplitude);
    let breakdown = energy_breakdown(&field, kernel, couplings)?;
    Ok(NegativeEnergyState { field, amplitude, root_amplitude: root, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::DipoleAxis;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn setup(n: usize, l: f64) -> (Grid, SpectralKernel) {
        let g = Grid::new([n, n, n], [l, l, l]).unwrap();
        let k = SpectralKernel::build(&g, DipoleAxis::canonical());
        (g, k)
    }

    #[test]
    fn free_gaussian_dispersion_oracle() {
        let (g, k) = setup(32, 16.0);
        let c = Couplings::new(0.0, 0.0).unwrap();
        let psi0 = gaussian_field(&g, 1.0, [1.0; 3], [0.0; 3]).unwrap();
        let config = PropagationConfig {
            dt: 1e-3,
            steps: 1000,
            snapshot_stride: 250,
            keep_snapshots: false,
            ..Default::default()
        };
        let traj = split_step(&psi0, &k, &c, &config).unwrap();
        assert!(traj.blow_up.is_none());
        // analytic: |psi(t, 0)| = (1 + t^2)^(-3/4)
        let center = traj.final_state.data()[[16, 16, 16]].norm();
        assert_relative_eq!(center, 2f64.powf(-0.75), max_relative = 1e-6);
        // unitarity
        let n0 = traj.diagnostics.first().unwrap().mass;
        let n1 = traj.diagnostics.last().unwrap().mass;
        assert!(((n1 - n0) / n0).abs() < 1e-12);
        // free flow: energy exactly conserved by the splitting
        let e0 = traj.diagnostics.first().unwrap().total_energy;
        let e1 = traj.diagnostics.last().unwrap().total_energy;
        assert!(((e1 - e0) / e0).abs() < 1e-12);
    }

    #[test]
    fn trapped_oscillator_ground_state_is_stationary() {
        let (g, k) = setup(32, 16.0);
        let c = Couplings::new(0.0, 0.0).unwrap();
        let amp = PI.powf(-0.75);
        let psi0 = gaussian_field(&g, amp, [1.0; 3], [0.0; 3]).unwrap();
        let config = PropagationConfig {
            dt: 1e-3,
            steps: 1000,
            snapshot_stride: 1000,
            keep_snapshots: false,
            trap: true,
            ..Default::default()
        };
        let traj = split_step(&psi0, &k, &c, &config).unwrap();
        let mut dev = 0.0f64;
        for (a, b) in traj.final_state.data().iter().zip(psi0.data().iter()) {
            dev += (a.norm() - b.norm()).powi(2);
        }
        let rel = (g.cell_volume() * dev).sqrt() / psi0.norm_l2();
        assert!(rel < 1e-6, "modulus drifted by {rel}");
    }

    #[test]
    fn forward_backward_recovers_initial_state() {
        let (g, k) = setup(16, 10.0);
        let c = Couplings::new(-1.0, 0.0).unwrap();
        let psi0 = gaussian_field(&g, 0.8, [1.0; 3], [0.0; 3]).unwrap();
        let config = PropagationConfig {
            dt: 1e-3,
            steps: 100,
            snapshot_stride: 100,
            keep_snapshots: false,
            ..Default::default()
        };
        let traj = split_step(&psi0, &k, &c, &config).unwrap();
        // conjugation reverses time for this real-symbol Hamiltonian
        let mut back0 = traj.final_state.clone();
        back0.data_mut().mapv_inplace(|v| v.conj());
        let back = split_step(&back0, &k, &c, &config).unwrap();
        let mut dev = 0.0f64;
        for (a, b) in back.final_state.data().iter().zip(psi0.data().iter()) {
            dev += (a.conj() - b).norm_sqr();
        }
        let rel = (g.cell_volume() * dev).sqrt() / psi0.norm_l2();
        assert!(rel < 1e-10, "reversibility violated: {rel}");
    }

    #[test]
    fn boost_snaps_to_lattice() {
        let (g, _) = setup(16, 16.0);
        let u = gaussian_field(&g, 1.0, [1.0; 3], [0.0; 3]).unwrap();
        let (psi0, track) = boost(&u, 1.0, [0.8, 0.0, 0.0]);
        assert_relative_eq!(track.velocity[0], 2.0 * (2.0 * PI / 16.0), max_relative = 1e-14);
        assert_eq!(track.velocity[1], 0.0);
        // zero velocity: identity
        let (same, track0) = boost(&u, 1.0, [0.0; 3]);
        assert_eq!(track0.velocity, [0.0; 3]);
        for (a, b) in same.data().iter().zip(u.data().iter()) {
            assert_eq!(a, b);
        }
        // boosted state keeps the density
        for (a, b) in psi0.data().iter().zip(u.data().iter()) {
            assert_relative_eq!(a.norm(), b.norm(), max_relative = 1e-12);
        }
    }

    #[test]
    fn virial_check_on_free_gaussian() {
        let (g, k) = setup(32, 16.0);
        let c = Couplings::new(0.0, 0.0).unwrap();
        let psi0 = gaussian_field(&g, 1.0, [1.0; 3], [0.0; 3]).unwrap();
        let config = PropagationConfig {
            dt: 1e-3,
            steps: 300,
            snapshot_stride: 50,
            keep_snapshots: false,
            ..Default::default()
        };
        let traj = split_step(&psi0, &k, &c, &config).unwrap();
        let rows = virial_check(&traj).unwrap();
        assert!(!rows.is_empty());
        for r in &rows {
            // free flow: I(t) is exactly quadratic, I'' = 2T constant
            assert!(r.mismatch < 1e-3, "virial mismatch {} at t={}", r.mismatch, r.t);
            assert!(r.i_dd_formula > 0.0);
        }
    }

    #[test]
    fn virial_check_rejects_trapped_runs() {
        let (g, k) = setup(16, 8.0);
        let c = Couplings::new(0.0, 0.0).unwrap();
        let psi0 = gaussian_field(&g, 1.0, [1.0; 3], [0.0; 3]).unwrap();
        let config = PropagationConfig {
            dt: 1e-2,
            steps: 30,
            snapshot_stride: 10,
            keep_snapshots: false,
            trap: true,
            ..Default::default()
        };
        let traj = split_step(&psi0, &k, &c, &config).unwrap();
        assert!(matches!(virial_check(&traj), Err(Error::TrapActive)));
    }

    #[test]
    fn negative_energy_amplitude_matches_closed_form() {
        let (g, k) = setup(32, 16.0);
        let c = Couplings::new(-1.0, 0.0).unwrap();
        let s = make_negative_energy_state(&g, &k, &c, [1.0; 3]).unwrap();
        // closed form from analytic gaussian integrals:
        // T = (3/4) pi^(3/2), V = -(1/2)(pi/2)^(3/2), root A = sqrt(T/-V)
        let t_g = 0.75 * PI.powf(1.5);
        let v_g = -0.5 * (PI / 2.0).powf(1.5);
        let expect = (t_g / -v_g).sqrt();
        assert_relative_eq!(s.root_amplitude, expect, max_relative = 1e-6);
        assert!(s.breakdown.total < 0.0);
        // the bisection root itself leaves |E| below 1e-8 T
        let e_root = s.root_amplitude.powi(2) * t_g + s.root_amplitude.powi(4) * v_g;
        assert!(e_root.abs() < 1e-8 * s.root_amplitude.powi(2) * t_g);
    }

    #[test]
    fn focusing_shape_required_for_negative_energy() {
        let (g, k) = setup(16, 12.0);
        // repulsive contact with no dipolar term is inadmissible
        let c = Couplings::new(1.0, 0.0).unwrap();
        assert!(make_negative_energy_state(&g, &k, &c, [1.0; 3]).is_err());
        // admissible dipolar couplings but the wrong shape: pancake along
        // the axis gives D > 0 under lambda2 = 1, so V >= 0 can occur
        let c2 = Couplings::new(0.5, 1.0).unwrap();
        let r = make_negative_energy_state(&g, &k, &c2, [2.0, 2.0, 1.0]);
        assert!(matches!(r, Err(Error::ShapeNotFocusing)));
    }

    #[test]
    fn dipolar_dominated_negative_energy_state() {
        let (g, k) = setup(32, 16.0);
        let c = Couplings::new(0.5, 1.0).unwrap();
        let s = make_negative_energy_state(&g, &k, &c, [1.0, 1.0, 2.0]).unwrap();
        assert!(s.breakdown.total < 0.0);
    }
}
