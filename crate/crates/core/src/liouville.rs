//! Vectorized density matrices, the 4x4 Liouvillian of the reduced model and
//! its spectral landscape.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, ControlParams, ModelError};
use crate::smallmat::{self, ComplexMatrix, ComplexVector, EigenSystem, LinalgError};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Real parts closer than this count as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Minimum eigenvector overlap for continuing a sheet between grid points.
pub const TRACKING_OVERLAP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid grid: {0}")]
    Grid(String),
}

/// Density matrix flattened row-major: (rho11, rho12, rho21, rho22).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VectorizedState(pub [C64; 4]);

impl VectorizedState {
    pub fn as_vector(&self) -> ComplexVector {
        ComplexVector::from_slice(&self.0)
    }

    pub fn from_vector(v: &ComplexVector) -> Self {
        assert_eq!(v.dim(), 4);
        let mut out = [C64::new(0.0, 0.0); 4];
        out.copy_from_slice(v.as_slice());
        Self(out)
    }

    /// Trace of the corresponding 2x2 matrix.
    pub fn trace(&self) -> C64 {
        self.0[0] + self.0[3]
    }
}

pub fn vectorize(rho: &ComplexMatrix) -> VectorizedState {
    assert_eq!(rho.dim(), 2, "only 2x2 density matrices are vectorized");
    VectorizedState(rho.to_array())
}

pub fn devectorize(v: &VectorizedState) -> ComplexMatrix {
    ComplexMatrix::from_array(&v.0)
}

/// Matrix of a linear map on 2x2 matrices, found by applying it to the four
/// matrix units and vectorizing the images.
pub fn superoperator<F>(mut map: F) -> Result<ComplexMatrix, ModelError>
where
    F: FnMut(&ComplexMatrix) -> Result<ComplexMatrix, ModelError>,
{
    let mut l = ComplexMatrix::zeros(4);
    for col in 0..4 {
        let mut unit = ComplexMatrix::zeros(2);
        unit[(col / 2, col % 2)] = C64::new(1.0, 0.0);
        let image = vectorize(&map(&unit)?);
        for row in 0..4 {
            l[(row, col)] = image.0[row];
        }
    }
    Ok(l)
}

/// Liouvillian of the leading-order Lindblad equation, obtained from the
/// right-hand side itself so that any momentum sector is covered.
pub fn build_l(p: &ControlParams) -> Result<ComplexMatrix, ModelError> {
    superoperator(|rho| model::lindblad_rhs(p, rho))
}

/// Closed-form Liouvillian. The momentum sector enters as
/// delta1 -> delta1 - 4 qx in the coherence rows.
pub fn liouvillian_closed_form(p: &ControlParams) -> Result<ComplexMatrix, ModelError> {
    let rates = model::derived_rates(p, None)?;
    let w = p.omega1;
    let wc = w.conj();
    let d = p.effective_delta1();
    let a2 = p.omega2.norm_sqr();
    let g = rates.gamma;
    let coh = C64::new(a2 * g * g * g / rates.delta4, 0.0);
    let pop = C64::new(a2 * p.gamma0 * g * g / rates.delta4, 0.0);
    let z = C64::new(0.0, 0.0);
    ComplexMatrix::from_row_major(
        4,
        &[
            z,
            -I * wc,
            I * w,
            z,
            -I * w,
            -I * d - coh,
            z,
            I * w,
            I * wc,
            z,
            I * d - coh,
            -I * wc,
            z,
            I * wc,
            -I * w,
            -pop,
        ],
    )
    .map_err(|e| ModelError::InvalidParams { name: "liouvillian", reason: e.to_string() })
}

pub fn spectrum(p: &ControlParams) -> Result<EigenSystem, SpectrumError> {
    Ok(smallmat::eig(&build_l(p)?)?)
}

/// An eigenpair of the Liouvillian with its state normalized to unit trace
/// whenever the trace does not vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyCandidate {
    pub eigenvalue: C64,
    pub state: VectorizedState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuasiSteadyState {
    Unique(SteadyCandidate),
    /// Several sheets share the maximal real part; all of them are returned.
    Degenerate(Vec<SteadyCandidate>),
}

impl QuasiSteadyState {
    /// The first candidate in spectral order.
    pub fn primary(&self) -> &SteadyCandidate {
        match self {
            QuasiSteadyState::Unique(c) => c,
            QuasiSteadyState::Degenerate(cs) => &cs[0],
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, QuasiSteadyState::Degenerate(_))
    }
}

fn candidate(sys: &EigenSystem, i: usize) -> SteadyCandidate {
    let mut state = VectorizedState::from_vector(&sys.right[i]);
    let tr = state.trace();
    if tr.norm() > 1e-12 {
        state.0.iter_mut().for_each(|z| *z /= tr);
    }
    SteadyCandidate { eigenvalue: sys.eigenvalues[i], state }
}

/// The sheet with the largest real part.
pub fn quasi_steady_state(p: &ControlParams) -> Result<QuasiSteadyState, SpectrumError> {
    let sys = spectrum(p)?;
    let top = sys.eigenvalues[0].re;
    let tied: Vec<usize> = (0..sys.dim()).filter(|&i| top - sys.eigenvalues[i].re <= DEGENERACY_TOL).collect();
    if tied.len() == 1 {
        Ok(QuasiSteadyState::Unique(candidate(&sys, 0)))
    } else {
        Ok(QuasiSteadyState::Degenerate(tied.into_iter().map(|i| candidate(&sys, i)).collect()))
    }
}

/// Distance in real part between the top sheet and the next one of a
/// sorted spectrum; zero when the top is degenerate.
pub fn gap_of(eigenvalues: &[C64]) -> f64 {
    let top = eigenvalues[0].re;
    let next = eigenvalues[1..].iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let gap = top - next;
    if gap <= DEGENERACY_TOL {
        0.0
    } else {
        gap
    }
}

pub fn liouvillian_gap(p: &ControlParams) -> Result<f64, SpectrumError> {
    Ok(gap_of(&spectrum(p)?.eigenvalues))
}

/// Which coupling is scanned along the first landscape axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandscapeAxis {
    Omega1,
    Omega2,
}

/// Uniform axis `start..=end` with `points` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        let span = self.end - self.start;
        let last = (self.points - 1) as f64;
        (0..self.points).map(|i| self.start + span * (i as f64) / last).collect()
    }

    fn check(&self, name: &str) -> Result<(), SpectrumError> {
        if self.points < 2 {
            return Err(SpectrumError::Grid(format!("{name} needs at least 2 points")));
        }
        if !(self.start.is_finite() && self.end.is_finite()) || self.end <= self.start {
            return Err(SpectrumError::Grid(format!("{name} must be strictly increasing")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeSpec {
    pub axis: LandscapeAxis,
    pub coupling: AxisSpec,
    pub delta1: AxisSpec,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        Self {
            axis: LandscapeAxis::Omega1,
            coupling: AxisSpec { start: 0.0, end: 1.0, points: 101 },
            delta1: AxisSpec { start: -0.5, end: 0.5, points: 101 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapePoint {
    /// Eigenvalues in tracked sheet order.
    pub sheets: [C64; 4],
    pub gap: f64,
    /// Sheet continuity was lost at this point and ordering restarted.
    pub crossing: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub axis: LandscapeAxis,
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    /// Row-major: index `i1 * axis2.len() + i2`.
    pub points: Vec<LandscapePoint>,
}

impl LandscapeGrid {
    pub fn point(&self, i1: usize, i2: usize) -> &LandscapePoint {
        &self.points[i1 * self.axis2.len() + i2]
    }

    pub fn min_gap(&self) -> f64 {
        self.points.iter().map(|p| p.gap).fold(f64::INFINITY, f64::min)
    }
}

/// Greedy maximal-overlap matching of new eigenvectors onto previous sheets.
/// Returns the permutation (sheet -> new index) and whether every matched
/// pair overlaps by at least [`TRACKING_OVERLAP`].
fn match_sheets(prev: &[ComplexVector], next: &[ComplexVector]) -> ([usize; 4], bool) {
    let n = prev.len();
    let mut overlap = [[0.0f64; 4]; 4];
    for a in 0..n {
        for b in 0..n {
            overlap[a][b] = prev[a].inner(&next[b]).norm();
        }
    }
    let mut perm = [usize::MAX; 4];
    let mut used = [false; 4];
    let mut ok = true;
    for _ in 0..n {
        let mut best = (0, 0, -1.0);
        for a in 0..n {
            if perm[a] != usize::MAX {
                continue;
            }
            for b in 0..n {
                if !used[b] && overlap[a][b] > best.2 {
                    best = (a, b, overlap[a][b]);
                }
            }
        }
        perm[best.0] = best.1;
        used[best.1] = true;
        if best.2 < TRACKING_OVERLAP {
            ok = false;
        }
    }
    (perm, ok)
}

fn params_at(base: &ControlParams, axis: LandscapeAxis, coupling: f64, delta1: f64) -> ControlParams {
    let mut p = *base;
    match axis {
        LandscapeAxis::Omega1 => p.omega1 = C64::new(coupling, 0.0),
        LandscapeAxis::Omega2 => p.omega2 = C64::new(coupling, 0.0),
    }
    p.delta1 = delta1;
    p
}

fn scan_row(
    base: &ControlParams,
    axis: LandscapeAxis,
    coupling: f64,
    deltas: &[f64],
) -> Result<Vec<LandscapePoint>, SpectrumError> {
    let mut out = Vec::with_capacity(deltas.len());
    let mut prev: Option<Vec<ComplexVector>> = None;
    for &d in deltas {
        let sys = spectrum(&params_at(base, axis, coupling, d))?;
        let gap = gap_of(&sys.eigenvalues);
        let (order, crossing) = match &prev {
            None => ([0, 1, 2, 3], false),
            Some(prev_vecs) => {
                let (perm, ok) = match_sheets(prev_vecs, &sys.right);
                if ok {
                    (perm, false)
                } else {
                    ([0, 1, 2, 3], true)
                }
            }
        };
        let sheets = [
            sys.eigenvalues[order[0]],
            sys.eigenvalues[order[1]],
            sys.eigenvalues[order[2]],
            sys.eigenvalues[order[3]],
        ];
        prev = Some(order.iter().map(|&k| sys.right[k]).collect());
        out.push(LandscapePoint { sheets, gap, crossing });
    }
    Ok(out)
}

/// Liouvillian spectra over (coupling x delta1). Rows (fixed coupling) are
/// independent and run in parallel; sheets are tracked along each row.
pub fn scan_landscape(spec: &LandscapeSpec, base: &ControlParams) -> Result<LandscapeGrid, SpectrumError> {
    spec.coupling.check("coupling axis")?;
    spec.delta1.check("delta1 axis")?;
    base.validate()?;
    let axis1 = spec.coupling.values();
    let axis2 = spec.delta1.values();
    let rows: Vec<Vec<LandscapePoint>> =
        axis1.par_iter().map(|&c| scan_row(base, spec.axis, c, &axis2)).collect::<Result<_, _>>()?;
    Ok(LandscapeGrid { axis: spec.axis, axis1, axis2, points: rows.into_iter().flatten().collect() })
}
