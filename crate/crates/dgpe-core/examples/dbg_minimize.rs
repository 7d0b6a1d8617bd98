use dgpe_core::functionals::{weinstein_gradient, Couplings};
use dgpe_core::grid::{inner_product, Grid};
use dgpe_core::ground_state::{
    minimize_j, refine_standing_wave, rescale_to_standing_wave, verify, MinimizerConfig,
};
use dgpe_core::kernel::{DipoleAxis, SpectralKernel};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.get(1).map(|s| s == "sweep").unwrap_or(false) {
        width_sweep();
        return;
    }
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let l: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(16.0);
    let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let g = Grid::new([n, n, n], [l, l, l]).unwrap();
    let k = SpectralKernel::build(&g, DipoleAxis::canonical());
    let c = Couplings::new(-1.0, 0.0).unwrap();
    let cfg = MinimizerConfig { tol_grad: 1e-8, max_iters: iters, ..Default::default() };
    let t0 = std::time::Instant::now();
    let res = minimize_j(&g, &k, &c, &cfg).unwrap();
    println!(
        "converged={} iters={} j={:.12} time={:?}",
        res.converged,
        res.iterations,
        res.j,
        t0.elapsed()
    );
    let m = res.trace.len();
    for (i, p) in res.trace.iter().enumerate() {
        if i % 100 == 0 || i + 5 > m {
            println!(
                "iter {:4}  J={:.14}  |Pg|={:.3e}  step={:.3e}",
                p.iter, p.j, p.grad_norm, p.step
            );
        }
    }
    let kf = SpectralKernel::build(res.v.grid(), DipoleAxis::canonical());
    let grad = weinstein_gradient(&res.v, &kf, &c).unwrap();
    println!("full |g| = {:.3e}", grad.norm_l2());
    let w = dgpe_core::functionals::rms_widths(&res.v);
    println!("widths={w:?} grad_ratio={:.4}", res.v.grad_norm_sq().sqrt() / res.v.norm_l2());

    // tilt along the dilation mode, via finite difference of J under
    // metadata rescaling of the samples... use inner product with numeric zeta
    let vh = res.v.transform();
    let mut zeta = res.v.scaled(1.5);
    for axis in 0..3 {
        let mut s = vh.clone();
        s.map_modes(|xi, val| val * num_complex_mul(xi[axis]));
        let d = s.inverse();
        let coords = res.v.grid().coords(axis).to_vec();
        let mut dd = d;
        ndarray::Zip::indexed(dd.data_mut()).for_each(|idx, o| {
            let x = coords[[idx.0, idx.1, idx.2][axis]];
            *o *= x;
        });
        ndarray::Zip::from(zeta.data_mut()).and(dd.data()).for_each(|a, &b| *a += b);
    }
    let tilt = inner_product(&grad, &zeta).unwrap().re / zeta.norm_l2();
    println!("tilt <g,zeta>/|zeta| = {:.3e}", tilt);

    let t1 = std::time::Instant::now();
    let gs = rescale_to_standing_wave(&res.v, res.j, 1.0, &kf, &c).unwrap();
    let gs = refine_standing_wave(&gs).unwrap();
    let report = verify(&gs).unwrap();
    println!("rescale+verify time {:?}", t1.elapsed());
    println!("final box {:?}", gs.u.grid().lengths());
    println!("pohozaev {:?}", report.pohozaev);
    println!("pde_residual {:.3e}", report.pde_residual);
    println!("positivity {:.3e} imag {:.3e}", report.positivity_deficit, report.imag_residue);
    println!("azim {:.3e} refl {:.3e} swap {:?}", report.azimuthal_error, report.reflection_error, report.axis_swap_error);
    println!("decay slope {:.4} fit {:.4}", report.decay_slope, report.decay_fit_residual);
    println!("aspect {:.6}", report.aspect_ratio);
    println!("E={:.6} T/3={:.6}", report.energy.total, report.energy.kinetic / 3.0);
}

fn num_complex_mul(x: f64) -> num_complex::Complex64 {
    num_complex::Complex64::new(0.0, x)
}
// quick width sweep entry: cargo run --example dbg_minimize -- sweep

fn width_sweep() {
    let g = Grid::new([64, 64, 64], [16.0, 16.0, 16.0]).unwrap();
    let k = SpectralKernel::build(&g, DipoleAxis::canonical());
    let c = Couplings::new(-1.0, 0.0).unwrap();
    for sigma in [1.0, 1.25, 1.5, 1.75, 2.0] {
        let cfg = MinimizerConfig {
            tol_grad: 1e-9,
            max_iters: 400,
            initial_widths: Some([sigma; 3]),
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        let res = minimize_j(&g, &k, &c, &cfg).unwrap();
        let kf = SpectralKernel::build(res.v.grid(), DipoleAxis::canonical());
        let grad = weinstein_gradient(&res.v, &kf, &c).unwrap();
        let gs = rescale_to_standing_wave(&res.v, res.j, 1.0, &kf, &c).unwrap();
        let gs = refine_standing_wave(&gs).unwrap();
    let gs = refine_standing_wave(&gs).unwrap();
        let report = verify(&gs).unwrap();
        let w = dgpe_core::functionals::rms_widths(&res.v);
        println!(
            "sigma={sigma:.2} iters={} j={:.10} |Pg|={:.2e} full|g|={:.2e} rms={:.3} Lf={:.2} pde={:.2e} decay=({:.3},{:.4}) time={:?}",
            res.iterations,
            res.j,
            res.trace.last().unwrap().grad_norm,
            grad.norm_l2(),
            w[0],
            gs.u.grid().lengths()[0],
            report.pde_residual,
            report.decay_slope,
            report.decay_fit_residual,
            t0.elapsed()
        );
    }
}
