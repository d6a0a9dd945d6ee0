//! Projections of states onto the spectral landscapes of H_eff and of the
//! Liouvillian, purity, and the chirality of a pair of final states.
//!
//! Left eigenvectors are biorthonormal partners of unit-norm right
//! eigenvectors, `<l_i|r_j> = delta_ij`. The projections are ratios, so the
//! overall scale of the state drops out, but this choice fixes the relative
//! weights of the branches.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::integrate::{DensityTrajectory, StateSample};
use crate::liouville::{self, SpectrumError};
use crate::model::{self, ControlParams, DensityMatrix, ModelError};
use crate::paths::{PathError, PathSpec};
use crate::smallmat::{self, ComplexMatrix, ComplexVector, EigenSystem, LinalgError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservableError {
    #[error("state has vanishing norm")]
    ZeroState,
    #[error("fully decayed state (trace {trace:e})")]
    Decayed { trace: f64 },
    #[error("pure-state and density trajectories are sampled at different times")]
    Misaligned,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Path(#[from] PathError),
}

/// A projected eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub value: C64,
    /// The operator is defective (or nearly so) here; `value` is
    /// ill-conditioned and callers interpolate over it.
    pub near_ep: bool,
    /// Some eigenvalues coincide; their joint weight was taken by orthogonal
    /// projection onto the degenerate eigenspace.
    pub degenerate: bool,
}

fn weighted_mean(values: &[C64], weights: &[f64]) -> Result<C64, ObservableError> {
    let total: f64 = weights.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(ObservableError::ZeroState);
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * *w).sum::<C64>() / total)
}

fn heff_system(p: &ControlParams) -> Result<EigenSystem, ObservableError> {
    Ok(smallmat::eig(&model::build_heff(p, true)?)?)
}

/// Eigenvalues of H_eff (gamma2 = 0 convention) weighted by
/// |<chi_i^L|psi>|^2.
pub fn project_hamiltonian_pure(psi: &ComplexVector, p: &ControlParams) -> Result<Projection, ObservableError> {
    if psi.dim() != 2 {
        return Err(ModelError::Dimension { expected: 2, got: psi.dim() }.into());
    }
    if psi.norm().is_nan() || psi.norm() <= 1e-15 {
        return Err(ObservableError::ZeroState);
    }
    let sys = heff_system(p)?;
    let near_ep = sys.is_defective();
    let basis = if near_ep { &sys.right } else { &sys.left };
    let weights: Vec<f64> = basis.iter().map(|v| v.inner(psi).norm_sqr()).collect();
    Ok(Projection { value: weighted_mean(&sys.eigenvalues, &weights)?, near_ep, degenerate: false })
}

/// Eigenvalues of H_eff (gamma2 = 0 convention) weighted by
/// <chi_i^L|rho|chi_i^L>.
pub fn project_hamiltonian_density(rho: &ComplexMatrix, p: &ControlParams) -> Result<Projection, ObservableError> {
    if rho.dim() != 2 {
        return Err(ModelError::Dimension { expected: 2, got: rho.dim() }.into());
    }
    let sys = heff_system(p)?;
    let near_ep = sys.is_defective();
    let basis = if near_ep { &sys.right } else { &sys.left };
    let weights: Vec<f64> = basis.iter().map(|v| v.inner(&rho.mul_vec(v)).re.max(0.0)).collect();
    Ok(Projection { value: weighted_mean(&sys.eigenvalues, &weights)?, near_ep, degenerate: false })
}

/// Indices of eigenvalues grouped by coincidence within `tol`.
fn clusters(values: &[C64], tol: f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match groups.iter_mut().find(|g| (values[g[0]] - v).norm() <= tol) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

/// Squared norm of the orthogonal projection of `x` onto span(vectors).
fn projected_weight(vectors: &[ComplexVector], x: &ComplexVector) -> f64 {
    let mut basis: Vec<ComplexVector> = Vec::new();
    for v in vectors {
        let mut u = *v;
        for q in &basis {
            u = u - q.scale(q.inner(&u));
        }
        let n = u.norm();
        if n > 1e-8 {
            basis.push(u.scale(C64::new(1.0 / n, 0.0)));
        }
    }
    basis.iter().map(|q| q.inner(x).norm_sqr()).sum()
}

/// Liouvillian eigenvalues weighted by |<phi_i^L|vec(rho)>|^2.
pub fn project_liouvillian(rho: &ComplexMatrix, p: &ControlParams) -> Result<Projection, ObservableError> {
    if rho.dim() != 2 {
        return Err(ModelError::Dimension { expected: 2, got: rho.dim() }.into());
    }
    let l = liouville::build_l(p)?;
    let sys = smallmat::eig(&l)?;
    let x = liouville::vectorize(rho).as_vector();
    let near_ep = sys.is_defective();
    let tol = 1e-9 * l.max_abs().max(1.0);
    let groups = clusters(&sys.eigenvalues, tol);
    let degenerate = groups.iter().any(|g| g.len() > 1);
    let mut values = Vec::with_capacity(groups.len());
    let mut weights = Vec::with_capacity(groups.len());
    for g in &groups {
        let mean = g.iter().map(|&i| sys.eigenvalues[i]).sum::<C64>() / g.len() as f64;
        let w = if g.len() > 1 || near_ep {
            let vs: Vec<ComplexVector> = g.iter().map(|&i| sys.right[i]).collect();
            projected_weight(&vs, &x)
        } else {
            sys.left[g[0]].inner(&x).norm_sqr()
        };
        values.push(mean);
        weights.push(w);
    }
    Ok(Projection { value: weighted_mean(&values, &weights)?, near_ep, degenerate })
}

/// Chirality of a cw/ccw pair of final states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiralityResult {
    pub c: f64,
    /// Unit-trace final states on {|1>,|2>}.
    pub rho_cw: DensityMatrix,
    pub rho_ccw: DensityMatrix,
    pub total_time: f64,
    /// 2 pi / T.
    pub velocity: f64,
}

/// C = 1/2 || rho~_cw - rho~_ccw ||_1 with rho~ = rho / Tr(rho). States of
/// the three-level model are restricted to {|1>,|2>} first.
pub fn chirality(
    rho_cw: &DensityMatrix,
    rho_ccw: &DensityMatrix,
    total_time: f64,
) -> Result<ChiralityResult, ObservableError> {
    let normalize = |r: &DensityMatrix| {
        let r2 = r.project2();
        let trace = r2.trace();
        if trace <= 1e-12 {
            return Err(ObservableError::Decayed { trace });
        }
        Ok(r2.normalized()?)
    };
    let cw = normalize(rho_cw)?;
    let ccw = normalize(rho_ccw)?;
    let c = 0.5 * smallmat::trace_norm_hermitian(&(*cw.matrix() - *ccw.matrix()))?;
    Ok(ChiralityResult { c, rho_cw: cw, rho_ccw: ccw, total_time, velocity: 2.0 * PI / total_time })
}

/// One time point of an encircling run with all projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub theta: f64,
    /// Projection of the pure no-jump state, when one was evolved.
    pub ebar0: Option<C64>,
    pub ebar: C64,
    pub lambdabar: C64,
    /// Tr rho (of the full state for the three-level tier).
    pub trace: f64,
    /// Tr(rho~^2) on {|1>,|2>}.
    pub purity: f64,
    /// Unit-trace state on {|1>,|2>}.
    pub rho: DensityMatrix,
    pub near_ep_flag: bool,
}

/// Replaces flagged entries by linear interpolation in t between the
/// nearest unflagged neighbours (or copies the single available one).
pub fn interpolate_flagged(ts: &[f64], values: &mut [C64], flagged: &[bool]) {
    let n = values.len();
    let clean: Vec<usize> = (0..n).filter(|&i| !flagged[i]).collect();
    if clean.is_empty() {
        return;
    }
    for i in (0..n).filter(|&i| flagged[i]) {
        let after = clean.partition_point(|&j| j < i);
        let left = after.checked_sub(1).map(|k| clean[k]);
        let right = clean.get(after).copied();
        values[i] = match (left, right) {
            (Some(a), Some(b)) => {
                let s = (ts[i] - ts[a]) / (ts[b] - ts[a]);
                values[a] * (1.0 - s) + values[b] * s
            }
            (Some(a), None) => values[a],
            (None, Some(b)) => values[b],
            (None, None) => values[i],
        };
    }
}

/// Projects every sample of a density trajectory along `path`, optionally
/// paired with a pure-state run sampled at the same times.
pub fn trajectory_samples(
    path: &PathSpec,
    traj: &DensityTrajectory,
    pure: Option<&[StateSample]>,
) -> Result<Vec<TrajectorySample>, ObservableError> {
    let n = traj.samples.len();
    if let Some(ps) = pure {
        let tol = 1e-12 * path.total_time.max(1.0);
        if ps.len() != n || ps.iter().zip(&traj.samples).any(|(a, b)| (a.t - b.t).abs() > tol) {
            return Err(ObservableError::Misaligned);
        }
    }
    let ts: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
    let mut ebar0 = vec![C64::new(0.0, 0.0); n];
    let mut ebar = vec![C64::new(0.0, 0.0); n];
    let mut lambdabar = vec![C64::new(0.0, 0.0); n];
    let mut flags = [vec![false; n], vec![false; n], vec![false; n]];
    let mut degenerate = vec![false; n];
    let mut reduced = Vec::with_capacity(n);
    for (k, s) in traj.samples.iter().enumerate() {
        let p = path.params_at(s.t)?;
        let rho2 = s.rho.project2().normalized()?;
        let e = project_hamiltonian_density(rho2.matrix(), &p)?;
        let l = project_liouvillian(rho2.matrix(), &p)?;
        ebar[k] = e.value;
        flags[1][k] = e.near_ep;
        lambdabar[k] = l.value;
        flags[2][k] = l.near_ep;
        degenerate[k] = l.degenerate;
        if let Some(ps) = pure {
            let e0 = project_hamiltonian_pure(&ps[k].psi, &p)?;
            ebar0[k] = e0.value;
            flags[0][k] = e0.near_ep;
        }
        reduced.push(rho2);
    }
    interpolate_flagged(&ts, &mut ebar0, &flags[0]);
    interpolate_flagged(&ts, &mut ebar, &flags[1]);
    interpolate_flagged(&ts, &mut lambdabar, &flags[2]);

    let mut out = Vec::with_capacity(n);
    for (k, s) in traj.samples.iter().enumerate() {
        out.push(TrajectorySample {
            t: s.t,
            theta: path.theta(s.t),
            ebar0: pure.map(|_| ebar0[k]),
            ebar: ebar[k],
            lambdabar: lambdabar[k],
            trace: s.trace(),
            purity: reduced[k].purity()?,
            rho: reduced[k],
            near_ep_flag: flags.iter().any(|f| f[k]) || degenerate[k],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn fig1() -> ControlParams {
        ControlParams::default()
    }

    #[test]
    fn right_eigenvector_projects_to_its_eigenvalue() {
        let p = fig1();
        let sys = smallmat::eig(&model::build_heff(&p, true).unwrap()).unwrap();
        for i in 0..2 {
            let e = project_hamiltonian_pure(&sys.right[i], &p).unwrap();
            assert!((e.value - sys.eigenvalues[i]).norm() < 1e-12);
            assert!(!e.near_ep);
            let rho = ComplexMatrix::outer(&sys.right[i], &sys.right[i]);
            let e = project_hamiltonian_density(&rho, &p).unwrap();
            assert!((e.value - sys.eigenvalues[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn symmetric_superposition_projects_to_zero() {
        // Gamma = 0 (Omega2 = 0), delta1 = 0, real Omega1 = 0.5
        let p = ControlParams { omega2: c(0.0, 0.0), ..fig1() };
        let psi = ComplexVector::from_slice(&[c(1.0, 0.0), c(0.0, 0.0)]);
        let e = project_hamiltonian_pure(&psi, &p).unwrap();
        assert!(e.value.norm() < 1e-14);
    }

    #[test]
    fn pure_projection_is_scale_invariant() {
        let p = ControlParams { delta1: 0.2, ..fig1() };
        let psi = ComplexVector::from_slice(&[c(0.3, 0.1), c(-0.4, 0.7)]);
        let a = project_hamiltonian_pure(&psi, &p).unwrap().value;
        let b = project_hamiltonian_pure(&psi.scale(c(7.0, 0.0)), &p).unwrap().value;
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn mixed_state_hermitian_case_is_real() {
        let p = ControlParams { omega2: c(0.0, 0.0), delta1: 0.3, ..fig1() };
        let rho = ComplexMatrix::identity(2).scale(c(0.5, 0.0));
        let e = project_hamiltonian_density(&rho, &p).unwrap();
        assert!(e.value.im.abs() < 1e-15);
    }

    #[test]
    fn zero_state_rejected() {
        assert_eq!(project_hamiltonian_pure(&ComplexVector::zeros(2), &fig1()), Err(ObservableError::ZeroState));
    }

    #[test]
    fn liouvillian_eigenvector_projects_to_its_eigenvalue() {
        let p = ControlParams { delta1: 0.1, omega1: c(0.4, 0.0), ..fig1() };
        let sys = liouville::spectrum(&p).unwrap();
        for i in 0..4 {
            let rho = liouville::devectorize(&liouville::VectorizedState::from_vector(&sys.right[i]));
            let l = project_liouvillian(&rho, &p).unwrap();
            assert!((l.value - sys.eigenvalues[i]).norm() < 1e-10, "{i}");
        }
    }

    #[test]
    fn dark_state_projects_to_zero() {
        let p = ControlParams { omega1: c(0.0, 0.0), ..fig1() };
        let rho = DensityMatrix::basis(2, 0).unwrap();
        let l = project_liouvillian(rho.matrix(), &p).unwrap();
        assert!(l.value.norm() < 1e-14);
    }

    #[test]
    fn hermitian_point_is_flagged_degenerate() {
        let p = ControlParams { omega2: c(0.0, 0.0), delta1: 0.3, ..fig1() };
        let rho = DensityMatrix::basis(2, 1).unwrap();
        let l = project_liouvillian(rho.matrix(), &p).unwrap();
        assert!(l.degenerate);
        assert!(l.value.norm() < 1e-12);
    }

    #[test]
    fn chirality_reference_values() {
        let one = DensityMatrix::basis(2, 0).unwrap();
        let two = DensityMatrix::basis(2, 1).unwrap();
        let mixed = DensityMatrix::new(ComplexMatrix::identity(2).scale(c(0.5, 0.0))).unwrap();
        assert!((chirality(&one, &two, 1.0).unwrap().c - 1.0).abs() < 1e-14);
        assert!(chirality(&mixed, &mixed, 1.0).unwrap().c.abs() < 1e-14);
        assert!((chirality(&mixed, &one, 1.0).unwrap().c - 0.5).abs() < 1e-14);
    }

    #[test]
    fn chirality_normalizes_and_reports_velocity() {
        let half = DensityMatrix::new(ComplexMatrix::from_diagonal(&[c(0.25, 0.0), c(0.0, 0.0)])).unwrap();
        let one = DensityMatrix::basis(2, 0).unwrap();
        let r = chirality(&half, &one, 2.0 * PI).unwrap();
        assert!(r.c.abs() < 1e-14);
        assert!((r.velocity - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chirality_of_decayed_state_fails() {
        let zero = DensityMatrix::new(ComplexMatrix::zeros(2)).unwrap();
        let one = DensityMatrix::basis(2, 0).unwrap();
        assert!(matches!(chirality(&zero, &one, 1.0), Err(ObservableError::Decayed { .. })));
    }

    #[test]
    fn interpolation_over_flagged_samples() {
        let ts = [0.0, 1.0, 2.0, 3.0, 4.0];
        let mut v = [c(0.0, 0.0), c(9.0, 9.0), c(9.0, 9.0), c(3.0, -3.0), c(9.0, 0.0)];
        interpolate_flagged(&ts, &mut v, &[false, true, true, false, true]);
        assert_eq!(v[1], c(1.0, -1.0));
        assert_eq!(v[2], c(2.0, -2.0));
        assert_eq!(v[4], c(3.0, -3.0));
    }
}
