//! Polar Newton–Raphson AC power flow on a dense bus admittance matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::grid::AdmittanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfBusKind {
    Slack,
    PV,
    PQ,
}

/// Per-bus power-flow data in per unit on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct PfBus {
    pub kind: PfBusKind,
    /// Voltage magnitude setpoint (slack and PV); initial guess for PQ.
    pub v_set: f64,
    pub p_gen: f64,
    /// Fixed reactive generation of PQ buses.
    pub q_gen: f64,
    pub p_load: f64,
    pub q_load: f64,
    /// Reactive capability of the generation at the bus.
    pub q_min: f64,
    pub q_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Switch PV buses to PQ when their reactive output leaves its limits.
    pub enforce_q_limits: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 30,
            enforce_q_limits: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfResult {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Net injections (generation minus load), pu.
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    /// Reactive generation per bus, pu.
    pub q_gen: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
    /// Buses converted from PV to PQ by reactive-limit enforcement.
    pub switched: Vec<bool>,
}

impl PfResult {
    /// Active generation at each bus (net injection plus load).
    pub fn p_gen(&self, buses: &[PfBus]) -> Vec<f64> {
        self.p_inj.iter().zip(buses).map(|(p, b)| p + b.p_load).collect()
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        self.vm
            .iter()
            .zip(&self.va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

/// Complex power injections `S = V ∘ conj(Y V)`.
pub fn injections(y: &AdmittanceMatrix, v: &[Complex64]) -> Vec<Complex64> {
    let vv = DVector::from_column_slice(v);
    let i = y * &vv;
    v.iter().zip(i.iter()).map(|(a, b)| a * b.conj()).collect()
}

struct Newton<'a> {
    y: &'a AdmittanceMatrix,
    kinds: Vec<PfBusKind>,
    p_spec: Vec<f64>,
    q_spec: Vec<f64>,
}

impl Newton<'_> {
    fn mismatch(&self, v: &[Complex64], pvpq: &[usize], pq: &[usize]) -> (DVector<f64>, f64) {
        let s = injections(self.y, v);
        let mut f = DVector::zeros(pvpq.len() + pq.len());
        for (k, &i) in pvpq.iter().enumerate() {
            f[k] = s[i].re - self.p_spec[i];
        }
        for (k, &i) in pq.iter().enumerate() {
            f[pvpq.len() + k] = s[i].im - self.q_spec[i];
        }
        let norm = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (f, norm)
    }

    fn jacobian(&self, v: &[Complex64], pvpq: &[usize], pq: &[usize]) -> DMatrix<f64> {
        let n = v.len();
        let vv = DVector::from_column_slice(v);
        let ibus = self.y * &vv;
        // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
        // dS/dVm = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let vnorm: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();
        let j = Complex64::new(0.0, 1.0);
        let ds_dva = |r: usize, c: usize| {
            let mut t = -self.y[(r, c)] * v[c];
            if r == c {
                t += ibus[r];
            }
            j * v[r] * t.conj()
        };
        let ds_dvm = |r: usize, c: usize| {
            let mut t = v[r] * (self.y[(r, c)] * vnorm[c]).conj();
            if r == c {
                t += ibus[r].conj() * vnorm[r];
            }
            t
        };
        let (npvpq, npq) = (pvpq.len(), pq.len());
        let mut jac = DMatrix::zeros(npvpq + npq, npvpq + npq);
        debug_assert!(n >= npvpq);
        for (r, &i) in pvpq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(r, c)] = ds_dva(i, k).re;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(r, npvpq + c)] = ds_dvm(i, k).re;
            }
        }
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pvpq.iter().enumerate() {
                jac[(npvpq + r, c)] = ds_dva(i, k).im;
            }
            for (c, &k) in pq.iter().enumerate() {
                jac[(npvpq + r, npvpq + c)] = ds_dvm(i, k).im;
            }
        }
        jac
    }

    /// Runs Newton iterations in place; returns (converged, iterations, mismatch).
    fn run(&self, v: &mut [Complex64], opts: &PfOptions, budget: usize) -> (bool, usize, f64) {
        let pvpq: Vec<usize> = (0..v.len())
            .filter(|&i| self.kinds[i] != PfBusKind::Slack)
            .collect();
        let pq: Vec<usize> = (0..v.len())
            .filter(|&i| self.kinds[i] == PfBusKind::PQ)
            .collect();
        let (mut f, mut norm) = self.mismatch(v, &pvpq, &pq);
        let mut it = 0;
        while norm >= opts.tolerance && it < budget {
            it += 1;
            let jac = self.jacobian(v, &pvpq, &pq);
            let Some(dx) = jac.lu().solve(&(-&f)) else {
                return (false, it, f64::INFINITY);
            };
            for (k, &i) in pvpq.iter().enumerate() {
                let (m, a) = v[i].to_polar();
                v[i] = Complex64::from_polar(m, a + dx[k]);
            }
            for (k, &i) in pq.iter().enumerate() {
                let (m, a) = v[i].to_polar();
                v[i] = Complex64::from_polar(m + dx[pvpq.len() + k], a);
            }
            (f, norm) = self.mismatch(v, &pvpq, &pq);
            let sane = v.iter().all(|x| {
                let m = x.norm();
                m.is_finite() && m > 0.2 && m < 3.0
            });
            if !norm.is_finite() || !sane {
                return (false, it, f64::INFINITY);
            }
        }
        (norm < opts.tolerance, it, norm)
    }
}

/// Solves the power flow. Non-convergence is reported in the result, never as
/// an error.
pub fn newton_raphson(y: &AdmittanceMatrix, buses: &[PfBus], opts: &PfOptions) -> PfResult {
    let n = buses.len();
    let mut kinds: Vec<PfBusKind> = buses.iter().map(|b| b.kind).collect();
    let mut q_fixed: Vec<f64> = buses.iter().map(|b| b.q_gen).collect();
    let mut switched = vec![false; n];
    let mut v: Vec<Complex64> = buses
        .iter()
        .map(|b| Complex64::new(if b.v_set > 0.0 { b.v_set } else { 1.0 }, 0.0))
        .collect();
    let mut iterations = 0;
    let mut converged;
    let mut mismatch;
    loop {
        let newton = Newton {
            y,
            kinds: kinds.clone(),
            p_spec: buses.iter().map(|b| b.p_gen - b.p_load).collect(),
            q_spec: buses
                .iter()
                .zip(&q_fixed)
                .map(|(b, q)| q - b.q_load)
                .collect(),
        };
        let budget = opts.max_iter.saturating_sub(iterations);
        let (ok, it, mm) = newton.run(&mut v, opts, budget);
        iterations += it;
        converged = ok;
        mismatch = mm;
        if !ok || !opts.enforce_q_limits {
            break;
        }
        let s = injections(y, &v);
        let mut changed = false;
        for i in 0..n {
            if kinds[i] != PfBusKind::PV {
                continue;
            }
            let q = s[i].im + buses[i].q_load;
            let limit = if q > buses[i].q_max + opts.tolerance {
                Some(buses[i].q_max)
            } else if q < buses[i].q_min - opts.tolerance {
                Some(buses[i].q_min)
            } else {
                None
            };
            if let Some(lim) = limit {
                kinds[i] = PfBusKind::PQ;
                q_fixed[i] = lim;
                switched[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let s = injections(y, &v);
    PfResult {
        vm: v.iter().map(|x| x.norm()).collect(),
        va: v.iter().map(|x| x.arg()).collect(),
        p_inj: s.iter().map(|x| x.re).collect(),
        q_inj: s.iter().map(|x| x.im).collect(),
        q_gen: s.iter().zip(buses).map(|(x, b)| x.im + b.q_load).collect(),
        converged,
        iterations,
        max_mismatch: mismatch,
        switched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(kind: PfBusKind) -> PfBus {
        PfBus {
            kind,
            v_set: 1.0,
            p_gen: 0.0,
            q_gen: 0.0,
            p_load: 0.0,
            q_load: 0.0,
            q_min: -10.0,
            q_max: 10.0,
        }
    }

    fn two_bus_y(x: f64) -> AdmittanceMatrix {
        let y = Complex64::new(0.0, -1.0 / x);
        DMatrix::from_row_slice(2, 2, &[y, -y, -y, y])
    }

    #[test]
    fn flat_start_no_flow() {
        let r = newton_raphson(
            &two_bus_y(0.1),
            &[bus(PfBusKind::Slack), bus(PfBusKind::PQ)],
            &PfOptions::default(),
        );
        assert!(r.converged);
        assert!(r.iterations <= 2);
        assert!(r.va.iter().all(|a| a.abs() < 1e-12));
    }

    #[test]
    fn two_bus_closed_form() {
        let mut b2 = bus(PfBusKind::PV);
        b2.p_load = 1.0;
        let r = newton_raphson(
            &two_bus_y(0.1),
            &[bus(PfBusKind::Slack), b2],
            &PfOptions::default(),
        );
        assert!(r.converged);
        // P = V1 V2 sin(θ1-θ2)/x  ⇒  θ2 = -asin(0.1)
        let theta = -(0.1f64).asin();
        assert!((r.va[1] - theta).abs() < 1e-8);
        // Q2 = (V2² - V1 V2 cos θ)/x supplied by the bus-2 generator
        let q2 = (1.0 - theta.cos()) / 0.1;
        assert!((r.q_gen[1] - q2).abs() < 1e-8);
    }

    #[test]
    fn reactive_limit_switches_to_pq() {
        let mut b2 = bus(PfBusKind::PV);
        b2.p_load = 1.0;
        b2.q_max = 0.01;
        b2.v_set = 1.05;
        let r = newton_raphson(
            &two_bus_y(0.1),
            &[bus(PfBusKind::Slack), b2],
            &PfOptions::default(),
        );
        assert!(r.converged);
        assert!(r.switched[1]);
        assert!((r.q_gen[1] - 0.01).abs() < 1e-8);
        assert!(r.vm[1] < 1.05);
    }

    #[test]
    fn unservable_load_does_not_converge() {
        let mut b2 = bus(PfBusKind::PQ);
        b2.p_load = 20.0;
        let r = newton_raphson(
            &two_bus_y(0.1),
            &[bus(PfBusKind::Slack), b2],
            &PfOptions::default(),
        );
        assert!(!r.converged);
    }
}
