//! Zero-order-hold discretisation of x' = Ax + Bu.

use nalgebra::{DMatrix, DVector};

use crate::error::{param, Error, Result};

/// Below this |Δa| the input matrix uses its Taylor limit.
pub const SERIES_CUTOFF: f64 = 1e-6;

/// Continuous state matrix, either per-state diagonal or dense.
#[derive(Clone, Debug, PartialEq)]
pub enum StateMatrix {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl StateMatrix {
    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal(d) => d.len(),
            Self::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Self::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Self::Dense(m) => m.clone(),
        }
    }
}

/// φ(Δ, a) = (e^{Δa} − 1)/a, so that B̄ = φ·b, together with e^{Δa}.
#[inline]
pub fn zoh_phi(a: f64, delta: f64) -> (f64, f64) {
    let x = delta * a;
    if x.abs() < SERIES_CUTOFF {
        (1.0 + x + 0.5 * x * x, delta * (1.0 + x / 2.0 + x * x / 6.0))
    } else {
        let em1 = x.exp_m1();
        (em1 + 1.0, delta * em1 / x)
    }
}

/// ∂φ/∂a = Δ²·(x eˣ − (eˣ − 1))/x² with x = Δa.
#[inline]
pub fn zoh_phi_da(a: f64, delta: f64) -> f64 {
    let x = delta * a;
    let g = if x.abs() < 1e-3 {
        0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0
    } else {
        let e = x.exp();
        (x * e - x.exp_m1()) / (x * x)
    };
    delta * delta * g
}

/// [`zoh_phi_da`] reusing ā = eˣ and φ from the forward pass.
#[inline]
pub fn zoh_phi_da_cached(a: f64, delta: f64, abar: f64, phi: f64) -> f64 {
    let x = delta * a;
    if x.abs() < 1e-3 {
        return zoh_phi_da(a, delta);
    }
    // eˣ − 1 = φ·a.
    delta * delta * (x * abar - phi * a) / (x * x)
}

/// Scalar ZOH: (ā, b̄) for one diagonal entry.
#[inline]
pub fn zoh_scalar(a: f64, b: f64, delta: f64) -> (f64, f64) {
    let (abar, phi) = zoh_phi(a, delta);
    (abar, phi * b)
}

/// Ā = exp(ΔA), B̄ = (ΔA)⁻¹(exp(ΔA) − I)·ΔB.
///
/// Diagonal matrices decouple into scalar problems. Dense matrices go
/// through the exponential of the augmented block matrix [[ΔA, ΔB], [0, 0]],
/// whose top-right column is B̄; this needs no inverse and so also covers
/// singular A.
pub fn discretize_zoh(a: &StateMatrix, b: &[f64], delta: f64) -> Result<(StateMatrix, Vec<f64>)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return param(format!("step size {delta} must be positive"));
    }
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Shape(format!("B has {} entries for state size {n}", b.len())));
    }
    match a {
        StateMatrix::Diagonal(d) => {
            let (abar, bbar): (Vec<f64>, Vec<f64>) =
                d.iter().zip(b).map(|(&ai, &bi)| zoh_scalar(ai, bi, delta)).unzip();
            Ok((StateMatrix::Diagonal(abar), bbar))
        }
        StateMatrix::Dense(m) => {
            let mut aug = DMatrix::zeros(n + 1, n + 1);
            aug.view_mut((0, 0), (n, n)).copy_from(&(m * delta));
            for i in 0..n {
                aug[(i, n)] = delta * b[i];
            }
            let e = expm_pade13(&aug);
            let abar = e.view((0, 0), (n, n)).into_owned();
            let bbar = (0..n).map(|i| e[(i, n)]).collect();
            Ok((StateMatrix::Dense(abar), bbar))
        }
    }
}

/// Matrix exponential by [13/13] Padé approximation with scaling and
/// squaring.
pub fn expm_pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371_920_351_148_152;
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &id * B[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_closed_form() {
        // 30-digit evaluation: e^{-0.1} and (e^{-0.1} − 1)/(−1).
        let (abar, bbar) = zoh_scalar(-1.0, 1.0, 0.1);
        assert!((abar - 0.904_837_418_035_959_6).abs() < 1e-15);
        assert!((bbar - 0.095_162_581_964_040_43).abs() < 1e-15);
    }

    #[test]
    fn zero_state_matrix_limit() {
        let (abar, bbar) = zoh_scalar(0.0, 2.0, 0.1);
        assert_eq!(abar, 1.0);
        assert!((bbar - 0.2).abs() < 1e-15);
        let (a, b) = discretize_zoh(&StateMatrix::Dense(DMatrix::zeros(2, 2)), &[2.0, 1.0], 0.1).unwrap();
        assert!((a.to_dense() - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        assert!((b[0] - 0.2).abs() < 1e-15 && (b[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn series_branch_is_continuous() {
        for a in [-1e-3, -1e-5, 1e-5] {
            let delta = 0.9e-3;
            let below = zoh_phi(a, delta).1;
            let exact = delta * (delta * a).exp_m1() / (delta * a);
            assert!((below - exact).abs() <= 1e-15 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn phi_derivative_matches_central_difference() {
        for (a, d) in [(-1.0f64, 0.1f64), (-3.0, 0.5), (-0.02, 0.01), (-5.0, 1e-3)] {
            let eps = 1e-4 * a.abs();
            let fd = (zoh_phi(a + eps, d).1 - zoh_phi(a - eps, d).1) / (2.0 * eps);
            let an = zoh_phi_da(a, d);
            let (abar, phi) = zoh_phi(a, d);
            assert!((zoh_phi_da_cached(a, d, abar, phi) - an).abs() <= 1e-9 * an.abs());
            assert!((fd - an).abs() <= 1e-7 * an.abs().max(1e-12), "{a} {d}: {fd} vs {an}");
        }
    }

    #[test]
    fn nonpositive_step_is_rejected() {
        let a = StateMatrix::Diagonal(vec![-1.0]);
        assert!(discretize_zoh(&a, &[1.0], 0.0).is_err());
        assert!(discretize_zoh(&a, &[1.0], -0.1).is_err());
        assert!(discretize_zoh(&a, &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn dense_path_agrees_with_diagonal_path() {
        let d = vec![-0.5, -1.0, -2.0, -4.0];
        let b = vec![1.0, -0.5, 0.25, 2.0];
        for delta in [0.01, 0.3, 2.0] {
            let (ad, bd) = discretize_zoh(&StateMatrix::Diagonal(d.clone()), &b, delta).unwrap();
            let dense = StateMatrix::Dense(StateMatrix::Diagonal(d.clone()).to_dense());
            let (am, bm) = discretize_zoh(&dense, &b, delta).unwrap();
            assert!((ad.to_dense() - am.to_dense()).abs().max() < 1e-13);
            for (x, y) in bd.iter().zip(&bm) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }

    /// Taylor series with scaling and squaring, as an independent exponential.
    fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let norm = a.abs().max() * n as f64;
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let a = a / 2f64.powi(s);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &a / k as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn pade_matches_taylor_on_dense_matrices() {
        let m = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.5, 0.3, -1.5, 0.2, -0.4, 0.1, -3.0]);
        for scale in [0.01, 1.0, 4.0] {
            let a = &m * scale;
            let d = (expm_pade13(&a) - expm_taylor(&a)).abs().max();
            assert!(d < 1e-12 * expm_taylor(&a).abs().max().max(1.0), "{scale}: {d}");
        }
    }

    #[test]
    fn abar_approaches_first_order_as_step_shrinks() {
        let m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
        let a = StateMatrix::Dense(m.clone());
        let mut ratios = vec![];
        for delta in [1e-2, 1e-3, 1e-4] {
            let (abar, _) = discretize_zoh(&a, &[1.0, 1.0], delta).unwrap();
            let err = (abar.to_dense() - (DMatrix::identity(2, 2) + &m * delta)).abs().max();
            ratios.push(err / (delta * delta));
        }
        // ‖ΔA‖²/2 bounds the remainder; here ‖A‖max² ≈ 4 so K = 4 suffices.
        assert!(ratios.iter().all(|r| *r <= 4.0), "{ratios:?}");
    }

    proptest::proptest! {
        #[test]
        fn stable_diagonal_stays_contractive(a in -50.0f64..=0.0, delta in 1e-6f64..10.0, b in -5.0f64..5.0) {
            let (abar, bbar) = zoh_scalar(a, b, delta);
            proptest::prop_assert!(abar.abs() <= 1.0);
            proptest::prop_assert!(bbar.is_finite());
        }
    }
}
