use dgpe_core::functionals::Couplings;
use dgpe_core::grid::Grid;
use dgpe_core::ground_state::{solve_ground_state, MinimizerConfig};
use dgpe_core::kernel::DipoleAxis;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let l1: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(-1.0);
    let l2: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let omega: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let g = Grid::new([64, 64, 64], [16.0, 16.0, 16.0]).unwrap();
    let c = Couplings::new(l1, l2).unwrap();
    let t0 = std::time::Instant::now();
    let (gs, res) = solve_ground_state(&g, DipoleAxis::canonical(), &c, omega, &MinimizerConfig::default()).unwrap();
    let report = gs.report.unwrap();
    println!("couplings=({l1},{l2}) omega={omega} time={:?}", t0.elapsed());
    println!("min converged={} iters={} j={:.10}", res.converged, res.iterations, res.j);
    println!("final box {:?}", gs.u.grid().lengths());
    println!("pohozaev {:?}", report.pohozaev);
    println!("pde_residual {:.3e}", report.pde_residual);
    println!("positivity {:.3e} imag {:.3e}", report.positivity_deficit, report.imag_residue);
    println!("azim {:.3e} refl {:.3e} swap {:?}", report.azimuthal_error, report.reflection_error, report.axis_swap_error);
    println!("decay slope {:.4} fit {:.4}", report.decay_slope, report.decay_fit_residual);
    println!("aspect {:.6}", report.aspect_ratio);
    println!("E={:.8} T/3={:.8} ratio_resid={:.3e}", report.energy.total, report.energy.kinetic / 3.0, report.energy_ratio_residual);
    println!("passed={}", report.passed());
}
