//! State-space layers: ZOH discretisation, the selective scan, and the
//! ViMM block built around it.

mod scan;
mod vimm;
mod zoh;

pub use scan::{selective_scan, selective_scan_backward, ScanCache, SsmParams};
pub use vimm::{vimm_backward, vimm_forward, VimmCache, VimmConfig, VimmWeights, CONV_WIDTH};
pub use zoh::{discretize_zoh, expm_pade13, zoh_phi, zoh_phi_da, zoh_phi_da_cached, zoh_scalar, StateMatrix, SERIES_CUTOFF};

/// One recurrence step: h' = Āh + B̄x, y = C·h'.
pub fn ssm_step(h: &[f64], x_t: f64, abar: &StateMatrix, bbar: &[f64], c: &[f64]) -> (Vec<f64>, f64) {
    let next: Vec<f64> = match abar {
        StateMatrix::Diagonal(d) => d
            .iter()
            .zip(h)
            .zip(bbar)
            .map(|((a, hi), b)| a * hi + b * x_t)
            .collect(),
        StateMatrix::Dense(m) => (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * h[j]).sum::<f64>() + bbar[i] * x_t)
            .collect(),
    };
    let y = next.iter().zip(c).map(|(a, b)| a * b).sum();
    (next, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_state_stays_at_rest() {
        let a = StateMatrix::Diagonal(vec![0.9, 0.5]);
        let (h, y) = ssm_step(&[0.0, 0.0], 0.0, &a, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(y, 0.0);
    }

    #[test]
    fn impulse_reads_out_c_dot_bbar() {
        let a = StateMatrix::Diagonal(vec![0.9, 0.5]);
        let (_, y) = ssm_step(&[0.0, 0.0], 1.0, &a, &[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(y, 11.0);
    }

    #[test]
    fn three_steps_match_unrolled_sum() {
        let (abar, bbar) = zoh_scalar(-1.0, 1.0, 0.1);
        let c = 0.7;
        let xs = [0.3, -1.2, 2.0];
        let a = StateMatrix::Diagonal(vec![abar]);
        let mut h = vec![0.0];
        let mut y = 0.0;
        for &x in &xs {
            let (hn, yt) = ssm_step(&h, x, &a, &[bbar], &[c]);
            h = hn;
            y = yt;
        }
        let want = c * (abar * abar * bbar * xs[0] + abar * bbar * xs[1] + bbar * xs[2]);
        assert!((y - want).abs() < 1e-15);
    }
}
