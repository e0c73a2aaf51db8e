//! Quasi-static network seen by the devices.
//!
//! Buses plus one internal node per voltage-type device. Loads become
//! constant admittances at the equilibrium voltage. Nodes with an imposed
//! voltage (device EMFs, and the slack bus when it acts as an infinite bus)
//! are eliminated by Kron reduction, leaving a linear map from the device
//! sources to the device responses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::components::{Component, Port};
use super::SmallSignalError;
use crate::feasibility::PowerFlowSolution;
use crate::grid::{build_admittance, GridModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    /// responses = h · sources + h0
    pub h: DMatrix<Complex64>,
    pub h0: DVector<Complex64>,
}

impl Network {
    pub fn build(
        grid: &GridModel,
        sol: &PowerFlowSolution,
        comps: &[Component],
        infinite_bus: bool,
    ) -> Result<Self, SmallSignalError> {
        let nb = grid.buses().len();
        let base = grid.base_mva();
        let volt = sol.voltages();
        let internal: Vec<(usize, f64)> = comps
            .iter()
            .enumerate()
            .filter_map(|(k, c)| match c.port() {
                Port::Voltage { x_c } => Some((k, x_c)),
                Port::Current => None,
            })
            .collect();
        let n = nb + internal.len();
        let mut y = DMatrix::<Complex64>::zeros(n, n);
        y.view_mut((0, 0), (nb, nb)).copy_from(&build_admittance(grid));
        for i in 0..nb {
            let s = Complex64::new(sol.load_p[i], sol.load_q[i]) / base;
            y[(i, i)] += s.conj() / volt[i].norm_sqr();
        }
        let mut node_of = vec![0usize; comps.len()];
        for (r, &(k, x_c)) in internal.iter().enumerate() {
            let e = nb + r;
            let b = comps[k].bus;
            let yc = Complex64::new(0.0, -1.0 / x_c);
            y[(b, b)] += yc;
            y[(e, e)] += yc;
            y[(b, e)] -= yc;
            y[(e, b)] -= yc;
            node_of[k] = e;
        }
        for (k, c) in comps.iter().enumerate() {
            if c.port() == Port::Current {
                node_of[k] = c.bus;
            }
        }

        let slack = grid.slack_index();
        let known: Vec<usize> = (0..n)
            .filter(|&i| i >= nb || (infinite_bus && i == slack))
            .collect();
        let unknown: Vec<usize> = (0..nb).filter(|&i| !(infinite_bus && i == slack)).collect();
        let pos_u = |i: usize| unknown.iter().position(|&u| u == i);
        let pos_k = |i: usize| known.iter().position(|&u| u == i);
        let yuu = DMatrix::from_fn(unknown.len(), unknown.len(), |r, c| y[(unknown[r], unknown[c])]);
        let yuk = DMatrix::from_fn(unknown.len(), known.len(), |r, c| y[(unknown[r], known[c])]);
        let yku = DMatrix::from_fn(known.len(), unknown.len(), |r, c| y[(known[r], unknown[c])]);
        let ykk = DMatrix::from_fn(known.len(), known.len(), |r, c| y[(known[r], known[c])]);
        let zuu = yuu.try_inverse().ok_or(SmallSignalError::SingularNetwork)?;
        if zuu.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SmallSignalError::SingularNetwork);
        }

        let respond = |src: &[Complex64], v_slack: Complex64| -> DVector<Complex64> {
            let mut j = DVector::zeros(unknown.len());
            let mut vk = DVector::zeros(known.len());
            for (k, c) in comps.iter().enumerate() {
                match c.port() {
                    Port::Voltage { .. } => vk[pos_k(node_of[k]).unwrap()] = src[k],
                    Port::Current => j[pos_u(node_of[k]).unwrap()] += src[k],
                }
            }
            if infinite_bus {
                vk[pos_k(slack).unwrap()] = v_slack;
            }
            let vu = &zuu * (j - &yuk * &vk);
            let ik = &yku * &vu + &ykk * &vk;
            DVector::from_iterator(
                comps.len(),
                comps.iter().enumerate().map(|(k, c)| match c.port() {
                    Port::Voltage { .. } => ik[pos_k(node_of[k]).unwrap()],
                    Port::Current => vu[pos_u(node_of[k]).unwrap()],
                }),
            )
        };

        let zero = Complex64::new(0.0, 0.0);
        let mut h = DMatrix::zeros(comps.len(), comps.len());
        let mut unit = vec![zero; comps.len()];
        for k in 0..comps.len() {
            unit[k] = Complex64::new(1.0, 0.0);
            h.set_column(k, &respond(&unit, zero));
            unit[k] = zero;
        }
        let h0 = respond(&unit, volt[slack]);
        Ok(Self { h, h0 })
    }

    pub fn responses(&self, sources: &[Complex64]) -> DVector<Complex64> {
        &self.h * DVector::from_column_slice(sources) + &self.h0
    }

    /// Real 2n × 2n form of `h` acting on interleaved (Re, Im) pairs.
    pub fn h_real(&self) -> DMatrix<f64> {
        let n = self.h.nrows();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for r in 0..n {
            for c in 0..n {
                let z = self.h[(r, c)];
                out[(2 * r, 2 * c)] = z.re;
                out[(2 * r, 2 * c + 1)] = -z.im;
                out[(2 * r + 1, 2 * c)] = z.im;
                out[(2 * r + 1, 2 * c + 1)] = z.re;
            }
        }
        out
    }
}
