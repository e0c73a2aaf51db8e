use nalgebra::DMatrix;
use num_complex::Complex64;

use super::GridModel;

pub type AdmittanceMatrix = DMatrix<Complex64>;

/// Series admittance of a branch.
pub(crate) fn series_admittance(r: f64, x: f64) -> Complex64 {
    Complex64::new(r, x).inv()
}

/// Bus admittance matrix from the π-model of every line, indexed in bus
/// declaration order.
pub fn build_admittance(grid: &GridModel) -> AdmittanceMatrix {
    let n = grid.buses().len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for line in grid.lines() {
        let a = grid.bus_index(line.from).expect("validated");
        let b = grid.bus_index(line.to).expect("validated");
        let ys = series_admittance(line.r, line.x);
        let half_shunt = Complex64::new(0.0, line.b / 2.0);
        y[(a, a)] += ys + half_shunt;
        y[(b, b)] += ys + half_shunt;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    }
    y
}
