//! Terminal admittance of single devices and converter aggregation.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::components::{Component, Port};
use super::{GfolParams, GforParams, SmallSignalError};

/// Linear device model from terminal voltage to the current drawn from the
/// grid, both in the dq frame of the equilibrium terminal voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

fn rot(phi: f64) -> DMatrix<f64> {
    let (s, c) = phi.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

/// Builds the scan model of a device connected to terminal voltage `v`.
pub fn scan_model(comp: &Component, v: Complex64) -> ScanModel {
    let x0 = &comp.x0;
    let r_in = rot(v.arg());
    let r_out = rot(-v.arg());
    let sx = comp.source_jac(x0);
    match comp.port() {
        Port::Current => {
            let (fx, fy) = comp.rhs_jac(x0, v);
            ScanModel {
                a: fx,
                b: fy * &r_in,
                c: -(&r_out * sx),
                d: DMatrix::zeros(2, 2),
            }
        }
        Port::Voltage { x_c } => {
            let i0 = (comp.source(x0) - v) / Complex64::new(0.0, x_c);
            let (fx, fy) = comp.rhs_jac(x0, i0);
            // real form of 1/(j x_c)
            let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0 / x_c, -1.0 / x_c, 0.0]);
            ScanModel {
                a: fx + &fy * &m * &sx,
                b: -(&fy * &m * &r_in),
                c: -(&r_out * &m * &sx),
                d: &r_out * &m * &r_in,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPoint {
    pub freq_hz: f64,
    /// 2 × 2 dq admittance; `None` where jω is an eigenvalue of A.
    pub y: Option<[[Complex64; 2]; 2]>,
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Evaluates Y(jω) = C (jωI − A)⁻¹ B + D on `freqs` (Hz).
pub fn admittance_scan(model: &ScanModel, freqs: &[f64]) -> Vec<ScanPoint> {
    let n = model.a.nrows();
    let a = to_complex(&model.a);
    let b = to_complex(&model.b);
    let c = to_complex(&model.c);
    let d = to_complex(&model.d);
    freqs
        .iter()
        .map(|&f| {
            let s = Complex64::new(0.0, 2.0 * std::f64::consts::PI * f);
            let y = if n == 0 {
                Some(d.clone())
            } else {
                let lhs = DMatrix::<Complex64>::identity(n, n) * s - &a;
                lhs.lu().solve(&b).map(|x| &c * x + &d)
            };
            let y = y.filter(|m| m.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
            ScanPoint {
                freq_hz: f,
                y: y.map(|m| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]),
            }
        })
        .collect()
}

/// Positive-sequence scalar of a dq admittance: ((Ydd + Yqq) + j(Yqd − Ydq))/2.
/// Equals y for a static admittance y.
pub fn positive_sequence(y: &[[Complex64; 2]; 2]) -> Complex64 {
    let j = Complex64::new(0.0, 1.0);
    (y[0][0] + y[1][1] + j * (y[1][0] - y[0][1])) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConverterControl {
    Gfor(GforParams),
    Gfol(GfolParams),
}

/// A converter at a given terminal voltage and dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverterUnit {
    pub control: ConverterControl,
    /// MVA.
    pub s_rated: f64,
    /// MW and MVAr delivered at the terminal.
    pub p: f64,
    pub q: f64,
    /// Terminal voltage, pu.
    pub v: Complex64,
}

impl ConverterUnit {
    pub fn component(&self, id: impl Into<String>, base_mva: f64) -> Component {
        let m = self.s_rated / base_mva;
        let s = Complex64::new(self.p, self.q) / base_mva;
        match &self.control {
            ConverterControl::Gfor(p) => Component::gfor(id.into(), 0, m, p.clone(), self.v, s),
            ConverterControl::Gfol(p) => Component::gfol(id.into(), 0, m, p.clone(), self.v, s),
        }
    }

    pub fn scan(&self, base_mva: f64, freqs: &[f64]) -> Vec<ScanPoint> {
        admittance_scan(&scan_model(&self.component("unit", base_mva), self.v), freqs)
    }
}

/// Replaces identical-control converters by one unit with summed rating and
/// dispatch. Exact when the units share per-unit loading.
pub fn aggregate_ibrs(units: &[ConverterUnit]) -> Result<ConverterUnit, SmallSignalError> {
    let first = units.first().ok_or(SmallSignalError::EmptyAggregate)?;
    let gfor = |u: &ConverterUnit| matches!(u.control, ConverterControl::Gfor(_));
    if units.iter().any(|u| gfor(u) != gfor(first)) {
        return Err(SmallSignalError::MixedControl);
    }
    for u in &units[1..] {
        if u.control != first.control || (u.v - first.v).norm() > 1e-12 {
            return Err(SmallSignalError::ParameterMismatch);
        }
    }
    Ok(ConverterUnit {
        control: first.control.clone(),
        s_rated: units.iter().map(|u| u.s_rated).sum(),
        p: units.iter().map(|u| u.p).sum(),
        q: units.iter().map(|u| u.q).sum(),
        v: first.v,
    })
}
