//! Control parameters, eliminated rates and the three levels of model
//! description: the full {|1>,|2>,|3>} master equation, the two-level
//! equations obtained by adiabatically eliminating |3> exactly, and the
//! leading-order Lindblad equation with effective loss and dephasing.
//!
//! Units: hbar = 1 and all rates share one energy unit (recoil energy for
//! the cold-atom parameter set, with momentum in units of k_r).

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smallmat::{self, ComplexMatrix, ComplexVector};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParams { name: &'static str, reason: String },
    #[error("degenerate model: Delta^4 vanishes")]
    Degenerate,
    #[error("adiabatic elimination requires gamma > 0")]
    EliminationInvalid,
    #[error("density matrix has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("density matrix violates {invariant} (deviation {deviation:.3e})")]
    InvalidDensity { invariant: &'static str, deviation: f64 },
}

/// The six control knobs of the four-level scheme plus the momentum sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// |1>-|2> coupling.
    pub omega1: C64,
    /// |1>-|2> detuning.
    pub delta1: f64,
    /// |2>-|3> (dissipative) coupling.
    pub omega2: C64,
    /// |2>-|3> detuning.
    pub delta2: f64,
    /// Decay rate |3> -> |4>.
    pub gamma0: f64,
    /// Decay rate |3> -> |2>.
    pub gamma2: f64,
    /// Momentum sector, in units of k_r.
    #[serde(default)]
    pub qx: f64,
}

impl Default for ControlParams {
    /// Parameters of the circular encircling (centre of the loop).
    fn default() -> Self {
        Self {
            omega1: C64::new(0.5, 0.0),
            delta1: 0.0,
            omega2: C64::new(1.0, 0.0),
            delta2: 0.0,
            gamma0: 50.0,
            gamma2: 10.0,
            qx: 0.0,
        }
    }
}

impl ControlParams {
    /// Parameter set of the cold-atom experiment (energies in E_r).
    pub fn cold_atom() -> Self {
        Self {
            omega1: C64::new(-2.25, 0.0),
            delta1: 0.0,
            omega2: C64::new(3.0, 0.0),
            delta2: 0.0,
            gamma0: 110.57,
            gamma2: 18.43,
            qx: -0.81,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [
            ("omega1", self.omega1.re),
            ("omega1", self.omega1.im),
            ("delta1", self.delta1),
            ("omega2", self.omega2.re),
            ("omega2", self.omega2.im),
            ("delta2", self.delta2),
            ("gamma0", self.gamma0),
            ("gamma2", self.gamma2),
            ("qx", self.qx),
        ];
        for (name, x) in finite {
            if !x.is_finite() {
                return Err(ModelError::InvalidParams { name, reason: format!("{x} is not finite") });
            }
        }
        if self.gamma0 < 0.0 {
            return Err(ModelError::InvalidParams { name: "gamma0", reason: "must be >= 0".into() });
        }
        if self.gamma2 < 0.0 {
            return Err(ModelError::InvalidParams { name: "gamma2", reason: "must be >= 0".into() });
        }
        Ok(())
    }

    /// Total decay rate of |3> halved, (gamma0 + gamma2)/2.
    pub fn gamma(&self) -> f64 {
        0.5 * (self.gamma0 + self.gamma2)
    }

    /// Detuning seen by the |1>-|2> coherence, shifted by the momentum sector.
    pub fn effective_delta1(&self) -> f64 {
        self.delta1 - 4.0 * self.qx
    }

    /// Copy with gamma2 = 0, the convention for Hamiltonian landscapes.
    pub fn without_recycling(&self) -> Self {
        Self { gamma2: 0.0, ..*self }
    }
}

/// Rates of the eliminated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedRates {
    pub gamma: f64,
    pub delta4: f64,
    /// Dephasing rate gamma_phi.
    pub gamma_phi: f64,
    /// Loss rate Gamma of |2> in the effective Hamiltonian.
    pub loss: f64,
}

/// Delta^4, gamma_phi and Gamma. `delta1_override` replaces the detuning
/// entering Delta^4 (the Hermitian part is unaffected).
pub fn derived_rates(p: &ControlParams, delta1_override: Option<f64>) -> Result<DerivedRates, ModelError> {
    p.validate()?;
    let g = p.gamma();
    let d1 = delta1_override.unwrap_or(p.delta1);
    let d2 = p.delta2;
    let o1 = p.omega1.norm_sqr();
    let o2 = p.omega2.norm_sqr();
    let dd = d1 + d2;
    let delta4 = o1 * (o2 + 2.0 * g * g - 2.0 * d2 * dd) + (g * g + dd * dd) * (o2 + g * g + d2 * d2) + o1 * o1;
    if delta4 == 0.0 {
        return Err(ModelError::Degenerate);
    }
    let common = g * g * o2 / delta4;
    Ok(DerivedRates { gamma: g, delta4, gamma_phi: p.gamma2 * common, loss: 0.5 * p.gamma0 * common })
}

/// Hermitian part [[d/2 - 2q, -W1], [-W1*, -d/2 + 2q]].
pub fn build_h0(p: &ControlParams) -> ComplexMatrix {
    let d = 0.5 * p.delta1 - 2.0 * p.qx;
    let mut h = ComplexMatrix::zeros(2);
    h[(0, 0)] = C64::new(d, 0.0);
    h[(0, 1)] = -p.omega1;
    h[(1, 0)] = -p.omega1.conj();
    h[(1, 1)] = C64::new(-d, 0.0);
    h
}

/// H0 - i*loss |2><2| for an explicitly given loss rate.
pub fn heff_with_loss(p: &ControlParams, loss: f64) -> ComplexMatrix {
    let mut h = build_h0(p);
    h[(1, 1)] -= I * loss;
    h
}

/// Effective non-Hermitian Hamiltonian. With `landscape_gamma2_zero` the
/// loss is evaluated with gamma2 set to zero, which is the convention used
/// for every spectral landscape and projection onto H_eff eigenstates.
pub fn build_heff(p: &ControlParams, landscape_gamma2_zero: bool) -> Result<ComplexMatrix, ModelError> {
    let source = if landscape_gamma2_zero { p.without_recycling() } else { *p };
    let rates = derived_rates(&source, None)?;
    Ok(heff_with_loss(p, rates.loss))
}

/// Jump operator sqrt(gamma_phi) |2><2|.
pub fn build_lphi(p: &ControlParams) -> Result<ComplexMatrix, ModelError> {
    let rates = derived_rates(p, None)?;
    let mut l = ComplexMatrix::zeros(2);
    l[(1, 1)] = C64::new(rates.gamma_phi.sqrt(), 0.0);
    Ok(l)
}

fn expect_dim(rho: &ComplexMatrix, dim: usize) -> Result<(), ModelError> {
    if rho.dim() == dim {
        Ok(())
    } else {
        Err(ModelError::Dimension { expected: dim, got: rho.dim() })
    }
}

/// Right-hand side of the leading-order Lindblad equation.
pub fn lindblad_rhs(p: &ControlParams, rho: &ComplexMatrix) -> Result<ComplexMatrix, ModelError> {
    expect_dim(rho, 2)?;
    let heff = build_heff(p, false)?;
    let l = build_lphi(p)?;
    let ld = l.adjoint();
    let ldl = ld * l;
    let coherent = (heff * *rho - *rho * heff.adjoint()).scale(-I);
    let jump = l * *rho * ld;
    let anti = (ldl * *rho + *rho * ldl).scale(C64::new(0.5, 0.0));
    Ok(coherent + jump - anti)
}

/// The nine matrix-element equations of the three-level master equation in
/// the rotating frame. The momentum shift enters the |1>-|2> block only.
pub fn full3_rhs(p: &ControlParams, rho: &ComplexMatrix) -> Result<ComplexMatrix, ModelError> {
    expect_dim(rho, 3)?;
    p.validate()?;
    Ok(ComplexMatrix::from_array(&full3_rhs_array(p, &rho.to_array::<9>())))
}

/// Array form of [`full3_rhs`] used by the integrator.
pub(crate) fn full3_rhs_array(p: &ControlParams, r: &[C64; 9]) -> [C64; 9] {
    let g = p.gamma();
    let o1 = p.omega1;
    let o2 = p.omega2;
    let o1c = o1.conj();
    let o2c = o2.conj();
    let d1 = p.delta1;
    let d1q = p.effective_delta1();
    let d2 = p.delta2;
    let (r11, r12, r13) = (r[0], r[1], r[2]);
    let (r21, r22, r23) = (r[3], r[4], r[5]);
    let (r31, r32, r33) = (r[6], r[7], r[8]);

    let d11 = I * o1 * r21 - I * r12 * o1c;
    let d12 = -I * (r13 * o2c + d1q * r12 + o1 * (r11 - r22));
    let d13 = -r13 * (g + I * d1 + I * d2) - I * o2 * r12 + I * o1 * r23;
    let d21 = I * (r31 * o2 + d1q * r21 + o1c * (r11 - r22));
    let d22 = p.gamma2 * r33 + I * (r12 * o1c - r23 * o2c - o1 * r21 + o2 * r32);
    let d23 = I * (I * r23 * (g + I * d2) + r13 * o1c + o2 * (r33 - r22));
    let d31 = -r31 * (g - I * d1 - I * d2) + I * o2c * r21 - I * o1c * r32;
    let d32 = -I * (-I * r32 * (g - I * d2) + r31 * o1 + o2c * (r33 - r22));
    let d33 = I * (2.0 * I * g * r33 + r23 * o2c - o2 * r32);
    [d11, d12, d13, d21, d22, d23, d31, d32, d33]
}

/// Two-level equations after setting the derivatives of every element that
/// involves |3> to zero, keeping all orders in the couplings.
pub fn eliminated_rhs(p: &ControlParams, rho: &ComplexMatrix) -> Result<ComplexMatrix, ModelError> {
    expect_dim(rho, 2)?;
    let rates = derived_rates(p, None)?;
    if rates.gamma <= 0.0 {
        return Err(ModelError::EliminationInvalid);
    }
    Ok(ComplexMatrix::from_array(&eliminated_rhs_array(p, &rates, &rho.to_array::<4>())))
}

pub(crate) fn eliminated_rhs_array(p: &ControlParams, rates: &DerivedRates, r: &[C64; 4]) -> [C64; 4] {
    let g = rates.gamma;
    let d4 = rates.delta4;
    let o1 = p.omega1;
    let o1c = o1.conj();
    let a1 = o1.norm_sqr();
    let a2 = p.omega2.norm_sqr();
    let d1 = p.delta1;
    let d1q = p.effective_delta1();
    let d2 = p.delta2;
    let (r11, r12, r21, r22) = (r[0], r[1], r[2], r[3]);

    let gm_dd = g - I * (d1 + d2); // gamma - i(d1 + d2)
    let gp_dd = g + I * (d1 + d2);
    let gm_d2 = g - I * d2;
    let gp_d2 = g + I * d2;
    let big = a2 + g * g + d2 * d2;

    let d11 = -I * r12 * o1c + I * o1 * r21;

    let shift12 = I * a2 * (2.0 * g * gm_dd * big + a1 * (a2 + 2.0 * g * gp_d2)) / (2.0 * g * d4);
    let d12 = -I * r12 * (d1q - shift12)
        + I * o1 * r22 * (1.0 - a2 * (a1 + gm_d2 * gm_dd) / d4)
        + o1 * o1 * a2 * a2 / (2.0 * g * d4) * r21
        - I * o1 * r11;

    let shift21 = I * a2 * (2.0 * g * gp_dd * big + a1 * (a2 + 2.0 * g * gm_d2)) / (2.0 * g * d4);
    let d21 = I * r21 * (d1q + shift21) - I * o1c * r22 * (1.0 - a2 * (a1 + gp_d2 * gp_dd) / d4)
        + a2 * a2 * o1c * o1c / (2.0 * g * d4) * r12
        + I * r11 * o1c;

    let recyc = (2.0 * g - p.gamma2) * a2 / (2.0 * g * d4);
    let d22 = -p.gamma0 * r22 * a2 * (a1 + g * g + (d1 + d2) * (d1 + d2)) / d4
        + I * o1 * r21 * (-1.0 + recyc * (a1 + gp_d2 * gp_dd))
        - I * r12 * o1c * (-1.0 + recyc * (a1 + gm_d2 * gm_dd));

    [d11, d12, d21, d22]
}

/// Array form of [`lindblad_rhs`], written out element by element.
pub(crate) fn lindblad_rhs_array(p: &ControlParams, rates: &DerivedRates, r: &[C64; 4]) -> [C64; 4] {
    let o1 = p.omega1;
    let o1c = o1.conj();
    let d = p.effective_delta1();
    let coh = rates.loss + 0.5 * rates.gamma_phi;
    let (r11, r12, r21, r22) = (r[0], r[1], r[2], r[3]);
    let d11 = -I * o1c * r12 + I * o1 * r21;
    let d12 = -I * o1 * r11 - (I * d + coh) * r12 + I * o1 * r22;
    let d21 = I * o1c * r11 + (I * d - coh) * r21 - I * o1c * r22;
    let d22 = I * o1c * r12 - I * o1 * r21 - 2.0 * rates.loss * r22;
    [d11, d12, d21, d22]
}

/// Tolerance of the density-matrix invariants.
pub const DENSITY_TOL: f64 = 1e-10;

/// Hermitian, positive semidefinite matrix with trace in [0, 1], of
/// dimension 2 (reduced model) or 3 (full model).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix {
    m: ComplexMatrix,
}

/// First invariant of a candidate density matrix broken by more than `tol`,
/// with its size.
pub fn density_violation(m: &ComplexMatrix, tol: f64) -> Option<(&'static str, f64)> {
    if !m.is_finite() {
        return Some(("finiteness", f64::INFINITY));
    }
    let herm = m.hermiticity_deviation();
    if herm > tol {
        return Some(("hermiticity", herm));
    }
    let tr = m.trace();
    if tr.re < -tol {
        return Some(("trace", -tr.re));
    }
    if tr.re > 1.0 + tol {
        return Some(("trace", tr.re - 1.0));
    }
    let lowest = match smallmat::hermitian_eigenvalues(&m.hermitian_part(), 1.0) {
        Ok(v) => *v.last().unwrap_or(&0.0),
        Err(_) => return Some(("positivity", f64::INFINITY)),
    };
    if lowest < -tol {
        return Some(("positivity", -lowest));
    }
    None
}

impl DensityMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self, ModelError> {
        if !(m.dim() == 2 || m.dim() == 3) {
            return Err(ModelError::Dimension { expected: 2, got: m.dim() });
        }
        if let Some((invariant, deviation)) = density_violation(&m, DENSITY_TOL) {
            return Err(ModelError::InvalidDensity { invariant, deviation });
        }
        Ok(Self { m: m.hermitian_part() })
    }

    /// Wraps a matrix already checked by the caller.
    pub(crate) fn from_checked(m: ComplexMatrix) -> Self {
        Self { m }
    }

    /// Projector |k><k| in dimension `dim`.
    pub fn basis(dim: usize, k: usize) -> Result<Self, ModelError> {
        if !(dim == 2 || dim == 3) || k >= dim {
            return Err(ModelError::Dimension { expected: 2, got: dim });
        }
        let mut m = ComplexMatrix::zeros(dim);
        m[(k, k)] = C64::new(1.0, 0.0);
        Ok(Self { m })
    }

    /// |psi><psi| for a vector of norm at most 1.
    pub fn pure(psi: &ComplexVector) -> Result<Self, ModelError> {
        Self::new(ComplexMatrix::outer(psi, psi))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace().re
    }

    /// Tr(rho~^2) of the trace-normalized state.
    pub fn purity(&self) -> Result<f64, ModelError> {
        let n = self.normalized()?;
        Ok((n.m * n.m).trace().re)
    }

    /// rho / Tr(rho).
    pub fn normalized(&self) -> Result<Self, ModelError> {
        let tr = self.trace();
        if tr <= 1e-12 {
            return Err(ModelError::InvalidDensity { invariant: "trace", deviation: tr });
        }
        Ok(Self { m: self.m.scale(C64::new(1.0 / tr, 0.0)) })
    }

    /// Embeds a two-level state into the {|1>,|2>} block of the three-level
    /// space; three-level states are returned unchanged.
    pub fn embed3(&self) -> Self {
        if self.dim() == 3 {
            return *self;
        }
        let mut m = ComplexMatrix::zeros(3);
        for i in 0..2 {
            for j in 0..2 {
                m[(i, j)] = self.m[(i, j)];
            }
        }
        Self { m }
    }

    /// Restriction to the {|1>,|2>} block.
    pub fn project2(&self) -> Self {
        if self.dim() == 2 {
            return *self;
        }
        let mut m = ComplexMatrix::zeros(2);
        for i in 0..2 {
            for j in 0..2 {
                m[(i, j)] = self.m[(i, j)];
            }
        }
        Self { m }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn fig1() -> ControlParams {
        ControlParams { omega1: c(0.5, 0.0), delta1: 0.0, ..ControlParams::default() }
    }

    fn basis(dim: usize, i: usize, j: usize) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(dim);
        m[(i, j)] = c(1.0, 0.0);
        m
    }

    #[test]
    fn derived_rates_reference_point() {
        let r = derived_rates(&fig1(), None).unwrap();
        assert_eq!(r.gamma, 30.0);
        assert!((r.delta4 - 811350.3125).abs() < 1e-9);
        // gamma_phi = 10*900/811350.3125, Gamma = 50*900/(2*811350.3125)
        assert!((r.gamma_phi - 0.011_092_619_132_996_267).abs() < 1e-15);
        assert!((r.loss - 0.027_731_547_832_490_665).abs() < 1e-15);
    }

    #[test]
    fn rates_vanish_without_dissipative_coupling() {
        let p = ControlParams { omega2: c(0.0, 0.0), ..fig1() };
        let r = derived_rates(&p, None).unwrap();
        assert_eq!(r.gamma_phi, 0.0);
        assert_eq!(r.loss, 0.0);
    }

    #[test]
    fn no_dephasing_without_recycling_channel() {
        let p = ControlParams { gamma2: 0.0, ..fig1() };
        let r = derived_rates(&p, None).unwrap();
        assert_eq!(r.gamma, 25.0);
        assert_eq!(r.gamma_phi, 0.0);
        assert!(r.loss > 0.0);
    }

    #[test]
    fn degenerate_model_rejected() {
        let p = ControlParams {
            omega1: c(0.0, 0.0),
            delta1: 0.0,
            omega2: c(0.0, 0.0),
            delta2: 0.0,
            gamma0: 0.0,
            gamma2: 0.0,
            qx: 0.0,
        };
        assert_eq!(derived_rates(&p, None).unwrap_err(), ModelError::Degenerate);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = ControlParams { gamma0: -1.0, ..fig1() };
        assert!(matches!(derived_rates(&p, None), Err(ModelError::InvalidParams { name: "gamma0", .. })));
        let p = ControlParams { delta2: f64::NAN, ..fig1() };
        assert!(matches!(p.validate(), Err(ModelError::InvalidParams { name: "delta2", .. })));
    }

    #[test]
    fn rate_identities() {
        let p = ControlParams { omega1: c(0.3, -0.4), delta1: 0.7, omega2: c(1.2, 0.5), delta2: -0.3, ..fig1() };
        let r = derived_rates(&p, None).unwrap();
        let g = r.gamma;
        let target = g * g * g * p.omega2.norm_sqr() / r.delta4;
        assert!(((r.loss + 0.5 * r.gamma_phi) - target).abs() <= 1e-12 * target);
        assert!((p.gamma0 * r.gamma_phi - 2.0 * p.gamma2 * r.loss).abs() < 1e-15);
    }

    #[test]
    fn h0_examples() {
        let p = ControlParams { delta1: 1.0, omega1: c(0.5, 0.0), ..fig1() };
        let h = build_h0(&p);
        assert_eq!(h.entries(), &[c(0.5, 0.0), c(-0.5, 0.0), c(-0.5, 0.0), c(-0.5, 0.0)]);

        let p = ControlParams { delta1: 0.0, omega1: c(-2.25, 0.0), qx: -0.81, ..fig1() };
        let h = build_h0(&p);
        let want = [c(1.62, 0.0), c(2.25, 0.0), c(2.25, 0.0), c(-1.62, 0.0)];
        for (a, b) in h.entries().iter().zip(want) {
            assert!((a - b).norm() < 1e-15);
        }

        let p = ControlParams { omega1: c(0.0, 0.0), delta1: 0.0, qx: 0.0, ..fig1() };
        assert_eq!(build_h0(&p).max_abs(), 0.0);
    }

    #[test]
    fn heff_examples() {
        let p = fig1();
        let h = build_heff(&p, false).unwrap();
        let h0 = build_h0(&p);
        let diff = h - h0;
        assert!((diff[(1, 1)] - c(0.0, -0.027_731_547_832_490_665)).norm() < 1e-15);
        assert_eq!(diff[(0, 0)], c(0.0, 0.0));

        let p = ControlParams { omega2: c(0.0, 0.0), ..fig1() };
        assert_eq!(build_heff(&p, false).unwrap(), build_h0(&p));

        let p = ControlParams { gamma2: 0.0, ..fig1() };
        assert_eq!(build_heff(&p, true).unwrap(), build_heff(&p, false).unwrap());
    }

    #[test]
    fn lphi_examples() {
        let l = build_lphi(&fig1()).unwrap();
        assert!((l[(1, 1)].re - 0.105_322).abs() < 1e-6);
        assert_eq!(l[(0, 0)], c(0.0, 0.0));
        let p = ControlParams { omega2: c(0.0, 0.0), ..fig1() };
        assert_eq!(build_lphi(&p).unwrap().max_abs(), 0.0);
        let p = ControlParams { gamma2: 0.0, ..fig1() };
        assert_eq!(build_lphi(&p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn lindblad_population_and_coherence_decay() {
        let p = ControlParams { omega1: c(0.0, 0.0), delta1: 0.0, ..fig1() };
        let r = derived_rates(&p, None).unwrap();
        let d = lindblad_rhs(&p, &basis(2, 1, 1)).unwrap();
        assert!((d[(1, 1)] - c(-2.0 * r.loss, 0.0)).norm() < 1e-16);
        assert_eq!(d[(0, 0)], c(0.0, 0.0));

        let d = lindblad_rhs(&p, &basis(2, 0, 1)).unwrap();
        let rate = r.loss + 0.5 * r.gamma_phi;
        assert!((d[(0, 1)] + rate).norm() < 1e-16);
        let g = r.gamma;
        assert!((rate - g * g * g / r.delta4).abs() < 1e-15);
    }

    #[test]
    fn lindblad_without_jumps_is_conditional_evolution() {
        let p = ControlParams { gamma2: 0.0, omega1: c(0.3, 0.1), delta1: -0.2, ..fig1() };
        let psi = crate::smallmat::ComplexVector::from_slice(&[c(0.6, 0.0), c(0.0, 0.8)]);
        let rho = ComplexMatrix::outer(&psi, &psi);
        let h = build_heff(&p, false).unwrap();
        let want = (h * rho - rho * h.adjoint()).scale(-I);
        let got = lindblad_rhs(&p, &rho).unwrap();
        assert!((got - want).max_abs() < 1e-16);
    }

    #[test]
    fn lindblad_array_form_matches_matrix_form() {
        let p =
            ControlParams { omega1: c(0.3, -0.7), delta1: 0.4, omega2: c(0.9, 0.2), delta2: 0.5, qx: 0.1, ..fig1() };
        let rates = derived_rates(&p, None).unwrap();
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let rho = basis(2, i, j);
            let a = lindblad_rhs(&p, &rho).unwrap();
            let b = ComplexMatrix::from_array(&lindblad_rhs_array(&p, &rates, &rho.to_array()));
            assert!((a - b).max_abs() < 1e-15);
        }
    }

    #[test]
    fn full3_decoupled_decay() {
        let p = ControlParams { omega1: c(0.0, 0.0), omega2: c(0.0, 0.0), ..fig1() };
        let d = full3_rhs(&p, &basis(3, 2, 2)).unwrap();
        assert_eq!(d[(2, 2)], c(-60.0, 0.0));
        assert_eq!(d[(1, 1)], c(10.0, 0.0));
        assert_eq!(d[(0, 0)], c(0.0, 0.0));
    }

    #[test]
    fn full3_closed_block_is_hamiltonian() {
        let p = ControlParams { omega2: c(0.0, 0.0), omega1: c(0.4, 0.2), delta1: 0.3, qx: 0.05, ..fig1() };
        let mut rho = ComplexMatrix::zeros(3);
        rho[(0, 0)] = c(0.3, 0.0);
        rho[(1, 1)] = c(0.7, 0.0);
        rho[(0, 1)] = c(0.1, 0.2);
        rho[(1, 0)] = c(0.1, -0.2);
        let d = full3_rhs(&p, &rho).unwrap();
        let mut r2 = ComplexMatrix::zeros(2);
        for i in 0..2 {
            for j in 0..2 {
                r2[(i, j)] = rho[(i, j)];
            }
        }
        let h = build_h0(&p);
        let want = (h * r2 - r2 * h).scale(-I);
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[(i, j)] - want[(i, j)]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn full3_trace_leak() {
        let p = ControlParams { omega1: c(0.3, 0.4), omega2: c(1.1, -0.3), delta1: 0.2, delta2: 0.1, ..fig1() };
        let mut rho = ComplexMatrix::identity(3).scale(c(1.0 / 3.0, 0.0));
        rho[(0, 2)] = c(0.1, 0.05);
        rho[(2, 0)] = c(0.1, -0.05);
        let d = full3_rhs(&p, &rho).unwrap();
        assert!((d.trace() - c(-p.gamma0 * rho[(2, 2)].re, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn eliminated_without_omega1() {
        let p = ControlParams { omega1: c(0.0, 0.0), delta1: 0.2, delta2: 0.1, ..fig1() };
        let r = derived_rates(&p, None).unwrap();
        let d = eliminated_rhs(&p, &basis(2, 1, 1)).unwrap();
        assert_eq!(d[(0, 0)], c(0.0, 0.0));
        let g = r.gamma;
        let want = -p.gamma0 * p.omega2.norm_sqr() * (g * g + 0.3 * 0.3) / r.delta4;
        assert!((d[(1, 1)] - c(want, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn eliminated_matches_lindblad_without_dissipation() {
        let p = ControlParams { omega2: c(0.0, 0.0), omega1: c(0.4, -0.1), delta1: 0.3, ..fig1() };
        let mut rho = ComplexMatrix::zeros(2);
        rho[(0, 0)] = c(0.4, 0.0);
        rho[(1, 1)] = c(0.6, 0.0);
        rho[(0, 1)] = c(0.2, 0.1);
        rho[(1, 0)] = c(0.2, -0.1);
        let a = eliminated_rhs(&p, &rho).unwrap();
        let b = lindblad_rhs(&p, &rho).unwrap();
        assert!((a - b).max_abs() < 1e-15);
    }

    #[test]
    fn eliminated_rejects_zero_gamma() {
        let p = ControlParams { gamma0: 0.0, gamma2: 0.0, ..fig1() };
        assert_eq!(eliminated_rhs(&p, &basis(2, 0, 0)).unwrap_err(), ModelError::EliminationInvalid);
    }

    #[test]
    fn dimension_checked() {
        assert!(matches!(lindblad_rhs(&fig1(), &basis(3, 0, 0)), Err(ModelError::Dimension { expected: 2, got: 3 })));
        assert!(matches!(full3_rhs(&fig1(), &basis(2, 0, 0)), Err(ModelError::Dimension { expected: 3, got: 2 })));
    }

    #[test]
    fn density_matrix_accepts_states() {
        let mixed = DensityMatrix::new(ComplexMatrix::identity(2).scale(c(0.5, 0.0))).unwrap();
        assert!((mixed.purity().unwrap() - 0.5).abs() < 1e-15);
        let psi = ComplexVector::from_slice(&[c(0.6, 0.0), c(0.0, 0.8)]);
        let pure = DensityMatrix::pure(&psi).unwrap();
        assert!((pure.trace() - 1.0).abs() < 1e-15);
        assert!((pure.purity().unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(DensityMatrix::basis(3, 2).unwrap().matrix()[(2, 2)], c(1.0, 0.0));
        assert!(DensityMatrix::basis(2, 2).is_err());
        assert!(DensityMatrix::basis(4, 0).is_err());
    }

    #[test]
    fn density_matrix_rejects_invalid_matrices() {
        let mut m = ComplexMatrix::zeros(2);
        m[(0, 0)] = c(0.5, 0.0);
        m[(0, 1)] = c(0.1, 0.0);
        let err = DensityMatrix::new(m).unwrap_err();
        assert!(matches!(err, ModelError::InvalidDensity { invariant: "hermiticity", .. }));
        let neg = ComplexMatrix::from_diagonal(&[c(1.2, 0.0), c(-0.2, 0.0)]);
        assert!(matches!(DensityMatrix::new(neg), Err(ModelError::InvalidDensity { invariant: "positivity", .. })));
        let big = ComplexMatrix::identity(2);
        assert!(matches!(DensityMatrix::new(big), Err(ModelError::InvalidDensity { invariant: "trace", .. })));
        assert!(DensityMatrix::new(ComplexMatrix::identity(4).scale(c(0.25, 0.0))).is_err());
        let mut nan = ComplexMatrix::zeros(2);
        nan[(0, 0)] = c(f64::NAN, 0.0);
        assert!(DensityMatrix::new(nan).is_err());
    }

    #[test]
    fn normalization_embedding_and_projection() {
        let psi = ComplexVector::from_slice(&[c(0.3, 0.0), c(0.0, 0.4)]);
        let rho = DensityMatrix::pure(&psi).unwrap();
        assert!((rho.trace() - 0.25).abs() < 1e-15);
        let n = rho.normalized().unwrap();
        assert!((n.trace() - 1.0).abs() < 1e-15);
        let e = rho.embed3();
        assert_eq!(e.dim(), 3);
        assert_eq!(e.project2(), rho);
        assert!(DensityMatrix::new(ComplexMatrix::zeros(2)).unwrap().normalized().is_err());
    }
}
