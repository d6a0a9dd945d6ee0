//! Independent oracles for the three-level model and its elimination.

use dephasing_ep::model::{self, ControlParams};
use dephasing_ep::smallmat::ComplexMatrix;
use dephasing_ep::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn random_params(rng: &mut ChaCha8Rng, qx: bool) -> ControlParams {
    let c = |rng: &mut ChaCha8Rng, s: f64| C64::from_polar(rng.gen_range(0.05..s), rng.gen_range(-3.0..3.0));
    ControlParams {
        omega1: c(rng, 2.0),
        delta1: rng.gen_range(-3.0..3.0),
        omega2: c(rng, 4.0),
        delta2: rng.gen_range(-2.0..2.0),
        gamma0: rng.gen_range(1.0..120.0),
        gamma2: rng.gen_range(0.0..30.0),
        qx: if qx { rng.gen_range(-1.0..1.0) } else { 0.0 },
    }
}

/// Arbitrary (not necessarily physical) complex matrix.
fn random_matrix(rng: &mut ChaCha8Rng, dim: usize) -> ComplexMatrix {
    let entries: Vec<C64> =
        (0..dim * dim).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    ComplexMatrix::from_row_major(dim, &entries).unwrap()
}

fn max_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    (*a - *b).max_abs()
}

/// rho' = -i (H rho - rho H^dag) + gamma2 rho33 |2><2| with
/// H = H3 - i (gamma0 + gamma2)/2 |3><3|.
fn generic_three_level(p: &ControlParams, rho: &ComplexMatrix) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(3);
    h[(0, 0)] = C64::new(0.5 * p.delta1, 0.0);
    h[(1, 1)] = C64::new(-0.5 * p.delta1, 0.0);
    h[(2, 2)] = C64::new(-0.5 * p.delta1 - p.delta2, 0.0) - I * p.gamma();
    h[(0, 1)] = -p.omega1;
    h[(1, 0)] = -p.omega1.conj();
    h[(1, 2)] = -p.omega2;
    h[(2, 1)] = -p.omega2.conj();
    let mut out = (h * *rho - *rho * h.adjoint()).scale(-I);
    out[(1, 1)] += rho[(2, 2)] * p.gamma2;
    out
}

#[test]
fn full_model_is_of_lindblad_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let p = random_params(&mut rng, false);
        let rho = random_matrix(&mut rng, 3);
        let got = model::full3_rhs(&p, &rho).unwrap();
        let want = generic_three_level(&p, &rho);
        assert!(max_diff(&got, &want) < 1e-11 * (1.0 + want.max_abs()), "{p:?}");
    }
}

#[test]
fn momentum_shift_enters_the_coherences_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let p = random_params(&mut rng, true);
        let rho = random_matrix(&mut rng, 3);
        let shifted = model::full3_rhs(&p, &rho).unwrap();
        let plain = model::full3_rhs(&ControlParams { qx: 0.0, ..p }, &rho).unwrap();
        let mut diff = shifted - plain;
        let s = 4.0 * p.qx;
        assert!((diff[(0, 1)] - I * s * rho[(0, 1)]).norm() < 1e-12);
        assert!((diff[(1, 0)] + I * s * rho[(1, 0)]).norm() < 1e-12);
        diff[(0, 1)] = C64::new(0.0, 0.0);
        diff[(1, 0)] = C64::new(0.0, 0.0);
        assert!(diff.max_abs() < 1e-12);
    }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<C64>>, mut b: Vec<C64>) -> Vec<C64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].norm().total_cmp(&a[j][k].norm())).unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let (upper, lower) = a.split_at_mut(i);
            let f = lower[0][k] / upper[k][k];
            for (x, &y) in lower[0][k..].iter_mut().zip(&upper[k][k..]) {
                *x -= f * y;
            }
            let bk = b[k];
            b[i] -= f * bk;
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    for k in (0..n).rev() {
        let s: C64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Sets the derivatives of the five elements involving |3> to zero,
/// solves for them and returns the resulting {|1>,|2>} derivatives.
fn eliminate_numerically(p: &ControlParams, block: &ComplexMatrix) -> ComplexMatrix {
    let slow = [(0, 0), (0, 1), (1, 0), (1, 1)];
    let fast = [(0, 2), (1, 2), (2, 0), (2, 1), (2, 2)];
    let embed = |x: &[C64]| {
        let mut r = ComplexMatrix::zeros(3);
        for (k, &(i, j)) in fast.iter().enumerate() {
            r[(i, j)] = x[k];
        }
        r
    };
    let mut base = ComplexMatrix::zeros(3);
    for &(i, j) in &slow {
        base[(i, j)] = block[(i, j)];
    }
    let f0 = model::full3_rhs(p, &base).unwrap();
    let mut a = vec![vec![C64::new(0.0, 0.0); 5]; 5];
    for col in 0..5 {
        let mut e = vec![C64::new(0.0, 0.0); 5];
        e[col] = C64::new(1.0, 0.0);
        let f = model::full3_rhs(p, &embed(&e)).unwrap();
        for (row, &(i, j)) in fast.iter().enumerate() {
            a[row][col] = f[(i, j)];
        }
    }
    let b: Vec<C64> = fast.iter().map(|&ij| -f0[ij]).collect();
    let x = solve(a, b);
    let mut full = base;
    for (k, &(i, j)) in fast.iter().enumerate() {
        full[(i, j)] = x[k];
    }
    let d = model::full3_rhs(p, &full).unwrap();
    let mut out = ComplexMatrix::zeros(2);
    for &(i, j) in &slow {
        out[(i, j)] = d[(i, j)];
    }
    out
}

#[test]
fn eliminated_model_matches_numerical_elimination() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let p = random_params(&mut rng, true);
        let block = random_matrix(&mut rng, 2);
        let got = model::eliminated_rhs(&p, &block).unwrap();
        let want = eliminate_numerically(&p, &block);
        assert!(max_diff(&got, &want) < 1e-9 * (1.0 + want.max_abs()), "{p:?}: {}", max_diff(&got, &want));
    }
}

#[test]
fn leading_order_model_is_the_large_gamma_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let mut p = random_params(&mut rng, true);
        p.gamma0 = 2e5;
        p.gamma2 = 1e5;
        let block = random_matrix(&mut rng, 2);
        let exact = model::eliminated_rhs(&p, &block).unwrap();
        let approx = model::lindblad_rhs(&p, &block).unwrap();
        assert!(max_diff(&exact, &approx) < 1e-3 * (1.0 + exact.max_abs()));
    }
}
