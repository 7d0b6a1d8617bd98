use dgpe_core::functionals::Couplings;
use dgpe_core::grid::{Grid, gaussian_field};
use dgpe_core::ground_state::symmetrize;

fn main() {
    // symmetric anisotropic gaussian: projection should be identity
    let g = Grid::new([32, 32, 32], [9.793009640900594, 9.793009640900594, 9.793009640900594]).unwrap();
    let f = gaussian_field(&g, 1.0, [0.8, 0.8, 1.3], [0.0; 3]).unwrap();
    let s = symmetrize(&f).unwrap();
    let mut dev = 0.0f64;
    let mut max_dev = 0.0f64;
    for (a, b) in f.data().iter().zip(s.data().iter()) {
        dev += (a - b).norm_sqr();
        max_dev = max_dev.max((a - b).norm());
    }
    println!("symmetrize move on symmetric gaussian: L2 {:.3e} max {:.3e}", (dev * g.cell_volume()).sqrt(), max_dev);
    let _ = Couplings::new(-1.0, 0.0);
}
