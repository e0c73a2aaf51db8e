//! Reduced-order dynamic device models.
//!
//! Every device exchanges one complex quantity with the network. Voltage-type
//! devices (SG, GFOR) impose an internal EMF behind a coupling reactance and
//! see the current they inject; current-type devices (GFOL) inject a current
//! at their terminal bus and see its voltage. All powers are in pu of the
//! system base; `m` is the device rating over the system base, and every
//! gain is scaled with it so that identical units aggregate exactly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{GfolParams, GforParams, SgParams, OMEGA_B};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Port {
    /// EMF behind reactance `x_c` (system pu).
    Voltage { x_c: f64 },
    Current,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Device {
    Sg { p: SgParams, e_mag: f64, p0: f64 },
    Gfor { p: GforParams, e0: f64, p0: f64, q0: f64 },
    Gfol { p: GfolParams, v0: f64, p0: f64, q0: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// `SG_<bus>`, `GFM_<bus>` or `GFL_<bus>`.
    pub id: String,
    pub bus: usize,
    pub m: f64,
    pub device: Device,
    /// Equilibrium state.
    pub x0: Vec<f64>,
}

type Jac = (DMatrix<f64>, DMatrix<f64>);

impl Component {
    /// Synchronous generator delivering `s` (pu) into terminal voltage `v`.
    pub fn sg(id: String, bus: usize, m: f64, p: SgParams, v: Complex64, s: Complex64) -> Self {
        let i = (s / v).conj();
        let e = v + Complex64::new(0.0, p.x_d / m) * i;
        let mut x0 = vec![e.arg(), 0.0];
        if p.governor {
            x0.push(s.re);
        }
        Self {
            id,
            bus,
            m,
            device: Device::Sg {
                p,
                e_mag: e.norm(),
                p0: s.re,
            },
            x0,
        }
    }

    pub fn gfor(id: String, bus: usize, m: f64, p: GforParams, v: Complex64, s: Complex64) -> Self {
        let i = (s / v).conj();
        let e = v + Complex64::new(0.0, p.x_f / m) * i;
        let se = e * i.conj();
        let mut x0 = vec![e.arg(), se.re, se.im];
        if p.t_v > 0.0 {
            x0.extend([e.norm(), 0.0]);
        }
        Self {
            id,
            bus,
            m,
            device: Device::Gfor {
                p,
                e0: e.norm(),
                p0: se.re,
                q0: se.im,
            },
            x0,
        }
    }

    pub fn gfol(id: String, bus: usize, m: f64, p: GfolParams, v: Complex64, s: Complex64) -> Self {
        Self {
            id,
            bus,
            m,
            device: Device::Gfol {
                p,
                v0: v.norm(),
                p0: s.re,
                q0: s.im,
            },
            x0: vec![v.arg(), 0.0, s.re, 0.0, 0.0],
        }
    }

    pub fn n_states(&self) -> usize {
        self.x0.len()
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match &self.device {
            Device::Sg { p, .. } if p.governor => &["delta", "d_omega", "p_m"],
            Device::Sg { .. } => &["delta", "d_omega"],
            Device::Gfor { p, .. } if p.t_v > 0.0 => &["theta", "p_f", "q_f", "e_d", "e_q"],
            Device::Gfor { .. } => &["theta", "p_f", "q_f"],
            Device::Gfol { .. } => &["theta_pll", "x_pll", "x_p", "w_f", "u_f"],
        }
    }

    /// Every device carries its absolute phase as state 0.
    pub fn angle_state(&self) -> usize {
        0
    }

    pub fn port(&self) -> Port {
        match &self.device {
            Device::Sg { p, .. } => Port::Voltage { x_c: p.x_d / self.m },
            Device::Gfor { p, .. } => Port::Voltage { x_c: p.x_f / self.m },
            Device::Gfol { .. } => Port::Current,
        }
    }

    /// Network-facing quantity: EMF for voltage-type, injected current for
    /// current-type devices.
    pub fn source(&self, x: &[f64]) -> Complex64 {
        let m = self.m;
        match &self.device {
            Device::Sg { e_mag, .. } => Complex64::from_polar(*e_mag, x[0]),
            Device::Gfor { p, .. } if p.t_v > 0.0 => {
                Complex64::new(x[3], x[4]) * Complex64::from_polar(1.0, x[0])
            }
            Device::Gfor { p, e0, q0, .. } => {
                Complex64::from_polar(e0 - p.k_q * (x[2] - q0) / m, x[0])
            }
            Device::Gfol { p, v0, q0, .. } => {
                Complex64::new(x[2], -(q0 - p.k_v * m * x[4])) / v0 * Complex64::from_polar(1.0, x[0])
            }
        }
    }

    /// d(Re, Im of source)/dx, 2 × n.
    pub fn source_jac(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.n_states();
        let mut j = DMatrix::zeros(2, n);
        let s = self.source(x);
        // every source is proportional to e^{jθ}
        j[(0, 0)] = -s.im;
        j[(1, 0)] = s.re;
        let (sn, cs) = x[0].sin_cos();
        match &self.device {
            Device::Sg { .. } => {}
            Device::Gfor { p, .. } if p.t_v > 0.0 => {
                j[(0, 3)] = cs;
                j[(1, 3)] = sn;
                j[(0, 4)] = -sn;
                j[(1, 4)] = cs;
            }
            Device::Gfor { p, .. } => {
                j[(0, 2)] = -p.k_q / self.m * cs;
                j[(1, 2)] = -p.k_q / self.m * sn;
            }
            Device::Gfol { p, v0, .. } => {
                j[(0, 2)] = cs / v0;
                j[(1, 2)] = sn / v0;
                let k = p.k_v * self.m / v0;
                j[(0, 4)] = -k * sn;
                j[(1, 4)] = k * cs;
            }
        }
        j
    }

    /// State derivative given the network response `y` (current out of the
    /// EMF, or terminal voltage).
    pub fn rhs(&self, x: &[f64], y: Complex64) -> DVector<f64> {
        let m = self.m;
        match &self.device {
            Device::Sg { p, p0, .. } => {
                let pe = (self.source(x) * y.conj()).re;
                let pm = if p.governor { x[2] } else { *p0 };
                let mut f = vec![
                    OMEGA_B * x[1],
                    (pm - pe - p.damping_d * m * x[1]) / (2.0 * p.inertia_h * m),
                ];
                if p.governor {
                    f.push((p0 - m * x[1] / p.droop_r - x[2]) / p.t_g);
                }
                DVector::from_vec(f)
            }
            Device::Gfor { p, e0, p0, q0 } => {
                let s = self.source(x) * y.conj();
                let w = p.k_p * (p0 - x[1]) / m;
                let mut f = vec![w, (s.re - x[1]) / p.tau_w, (s.im - x[2]) / p.tau_u];
                if p.t_v > 0.0 {
                    // EMF lags its droop reference, held in the frame of θ
                    let e_ref = e0 - p.k_q * (x[2] - q0) / m;
                    f.push((e_ref - x[3]) / p.t_v + w * x[4]);
                    f.push(-x[4] / p.t_v - w * x[3]);
                }
                DVector::from_vec(f)
            }
            Device::Gfol { p, v0, p0, .. } => {
                let (sn, cs) = x[0].sin_cos();
                let vq = y.im * cs - y.re * sn;
                let dw = p.pll_kp * vq + x[1];
                DVector::from_vec(vec![
                    dw,
                    p.pll_ki * vq,
                    (p0 - p.k_f * m * x[3] - x[2]) / p.t_p,
                    (dw / OMEGA_B - x[3]) / p.tau_w,
                    (y.norm() - v0 - x[4]) / p.tau_u,
                ])
            }
        }
    }

    /// (∂f/∂x, ∂f/∂(Re y, Im y)).
    pub fn rhs_jac(&self, x: &[f64], y: Complex64) -> Jac {
        let n = self.n_states();
        let m = self.m;
        let mut fx = DMatrix::zeros(n, n);
        let mut fy = DMatrix::zeros(n, 2);
        match &self.device {
            Device::Sg { p, .. } => {
                let e = self.source(x);
                let k = 2.0 * p.inertia_h * m;
                // P = Re(E) Re(I) + Im(E) Im(I), E = |E| e^{jδ}
                let dp_dd = -e.im * y.re + e.re * y.im;
                fx[(0, 1)] = OMEGA_B;
                fx[(1, 0)] = -dp_dd / k;
                fx[(1, 1)] = -p.damping_d * m / k;
                fy[(1, 0)] = -e.re / k;
                fy[(1, 1)] = -e.im / k;
                if p.governor {
                    fx[(1, 2)] = 1.0 / k;
                    fx[(2, 1)] = -m / (p.droop_r * p.t_g);
                    fx[(2, 2)] = -1.0 / p.t_g;
                }
            }
            Device::Gfor { p, .. } => {
                let e = self.source(x);
                let ej = self.source_jac(x);
                // ∂P/∂E = (Ir, Ii), ∂Q/∂E = (−Ii, Ir)
                let dp = |c: usize| y.re * ej[(0, c)] + y.im * ej[(1, c)];
                let dq = |c: usize| -y.im * ej[(0, c)] + y.re * ej[(1, c)];
                let dw = -p.k_p / m;
                fx[(0, 1)] = dw;
                for c in 0..n {
                    fx[(1, c)] = dp(c) / p.tau_w;
                    fx[(2, c)] = dq(c) / p.tau_u;
                }
                fx[(1, 1)] -= 1.0 / p.tau_w;
                fx[(2, 2)] -= 1.0 / p.tau_u;
                if p.t_v > 0.0 {
                    let w = self.rhs(x, y)[0];
                    fx[(3, 1)] = dw * x[4];
                    fx[(3, 2)] = -p.k_q / m / p.t_v;
                    fx[(3, 3)] = -1.0 / p.t_v;
                    fx[(3, 4)] = w;
                    fx[(4, 1)] = -dw * x[3];
                    fx[(4, 3)] = -w;
                    fx[(4, 4)] = -1.0 / p.t_v;
                }
                fy[(1, 0)] = e.re / p.tau_w;
                fy[(1, 1)] = e.im / p.tau_w;
                fy[(2, 0)] = e.im / p.tau_u;
                fy[(2, 1)] = -e.re / p.tau_u;
            }
            Device::Gfol { p, .. } => {
                let (sn, cs) = x[0].sin_cos();
                let vd = y.re * cs + y.im * sn;
                let (kp, ki) = (p.pll_kp, p.pll_ki);
                let tw = OMEGA_B * p.tau_w;
                fx[(0, 0)] = -kp * vd;
                fx[(0, 1)] = 1.0;
                fx[(1, 0)] = -ki * vd;
                fx[(2, 2)] = -1.0 / p.t_p;
                fx[(2, 3)] = -p.k_f * m / p.t_p;
                fx[(3, 0)] = -kp * vd / tw;
                fx[(3, 1)] = 1.0 / tw;
                fx[(3, 3)] = -1.0 / p.tau_w;
                fx[(4, 4)] = -1.0 / p.tau_u;
                for (r, g) in [(0, kp), (1, ki), (3, kp / tw)] {
                    fy[(r, 0)] = -g * sn;
                    fy[(r, 1)] = g * cs;
                }
                let vm = y.norm();
                fy[(4, 0)] = y.re / vm / p.tau_u;
                fy[(4, 1)] = y.im / vm / p.tau_u;
            }
        }
        (fx, fy)
    }

    /// Network response at the equilibrium, for devices built from a terminal
    /// voltage `v` and power `s`.
    pub fn equilibrium_response(&self, v: Complex64, s: Complex64) -> Complex64 {
        match self.port() {
            Port::Voltage { .. } => (s / v).conj(),
            Port::Current => v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(c: &Component, y: Complex64) {
        let x = c.x0.clone();
        let (fx, fy) = c.rhs_jac(&x, y);
        let sj = c.source_jac(&x);
        let h = 1e-6;
        for k in 0..c.n_states() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let d = (c.rhs(&xp, y) - c.rhs(&xm, y)) / (2.0 * h);
            for r in 0..c.n_states() {
                assert!((d[r] - fx[(r, k)]).abs() < 1e-6, "{} fx[{r},{k}]", c.id);
            }
            let ds = (c.source(&xp) - c.source(&xm)) / (2.0 * h);
            assert!((ds.re - sj[(0, k)]).abs() < 1e-6 && (ds.im - sj[(1, k)]).abs() < 1e-6);
        }
        for (col, dy) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].into_iter().enumerate() {
            let d = (c.rhs(&x, y + dy) - c.rhs(&x, y - dy)) / (2.0 * h);
            for r in 0..c.n_states() {
                assert!((d[r] - fy[(r, col)]).abs() < 1e-6, "{} fy[{r},{col}]", c.id);
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let v = Complex64::from_polar(1.02, 0.1);
        let s = Complex64::new(0.8, 0.2);
        let sg = Component::sg("SG_1".into(), 0, 2.0, SgParams::default(), v, s);
        let gfor = Component::gfor("GFM_1".into(), 0, 1.5, GforParams::default(), v, s);
        let gfol = Component::gfol("GFL_1".into(), 0, 1.2, GfolParams::default(), v, s);
        for c in [&sg, &gfor, &gfol] {
            // perturbed response so that no term vanishes at the operating point
            let y = c.equilibrium_response(v, s) * Complex64::from_polar(1.01, 0.02);
            fd_check(c, y);
        }
    }

    #[test]
    fn equilibrium_is_stationary() {
        let v = Complex64::from_polar(0.98, -0.2);
        let s = Complex64::new(1.1, -0.3);
        for c in [
            Component::sg("SG_1".into(), 0, 2.0, SgParams::default(), v, s),
            Component::gfor("GFM_1".into(), 0, 1.5, GforParams::default(), v, s),
            Component::gfol("GFL_1".into(), 0, 1.2, GfolParams::default(), v, s),
        ] {
            let y = c.equilibrium_response(v, s);
            assert!(c.rhs(&c.x0, y).amax() < 1e-12, "{}", c.id);
            if let Port::Voltage { x_c } = c.port() {
                // EMF drives the equilibrium current through the coupling reactance
                let e = c.source(&c.x0);
                assert!(((e - v) / Complex64::new(0.0, x_c) - y).norm() < 1e-12);
            } else {
                assert!((c.source(&c.x0) - (s / v).conj()).norm() < 1e-12);
            }
        }
    }
}
