//! Central finite-difference gradient checking.

use rand::Rng;

use super::Params;

/// Near ε_mach^(1/5), which balances round-off against the stencil's
/// truncation error.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<String>,
}

impl GradCheck {
    pub fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(e);
            if e >= self.max_rel_err {
                self.worst = Some(format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", what()));
            }
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        if other.max_rel_err >= self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

/// Five-point central difference, (−f(x+2ε) + 8f(x+ε) − 8f(x−ε) + f(x−2ε)) / 12ε.
/// Its O(ε⁴) truncation error keeps small gradients of curved losses
/// comparable in relative terms.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, x0: f64, eps: f64) -> f64 {
    (-f(x0 + 2.0 * eps) + 8.0 * f(x0 + eps) - 8.0 * f(x0 - eps) + f(x0 - 2.0 * eps)) / (12.0 * eps)
}

/// Checks up to `per_tensor` randomly chosen entries of every tensor in
/// `params` against `analytic`, re-evaluating `loss` on perturbed copies.
pub fn check_params<P, R>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
    per_tensor: usize,
    eps: f64,
    rng: &mut R,
) -> GradCheck
where
    P: Params + Clone,
    R: Rng,
{
    let mut report = GradCheck::default();
    let grads = analytic.tensors();
    let names: Vec<(String, usize)> = params
        .tensors()
        .iter()
        .map(|(n, t)| (n.clone(), t.len()))
        .collect();
    for (ti, (name, len)) in names.iter().enumerate() {
        if *len == 0 {
            continue;
        }
        let picks: Vec<usize> = if *len <= per_tensor {
            (0..*len).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..*len)).collect()
        };
        for idx in picks {
            let numeric = central_difference(
                |v| {
                    let mut p = params.clone();
                    p.tensors_mut()[ti].1.data[idx] = v;
                    loss(&p)
                },
                params.tensors()[ti].1.data[idx],
                eps,
            );
            report.record(|| format!("{name}[{idx}]"), grads[ti].1.data[idx], numeric);
        }
    }
    report
}

/// Same as [`check_params`] for a plain input buffer.
pub fn check_slice<R: Rng>(
    x: &[f64],
    analytic: &[f64],
    loss: impl Fn(&[f64]) -> f64,
    samples: usize,
    eps: f64,
    label: &str,
    rng: &mut R,
) -> GradCheck {
    let mut report = GradCheck::default();
    let picks: Vec<usize> = if x.len() <= samples {
        (0..x.len()).collect()
    } else {
        (0..samples).map(|_| rng.gen_range(0..x.len())).collect()
    };
    for idx in picks {
        let numeric = central_difference(
            |v| {
                let mut p = x.to_vec();
                p[idx] = v;
                loss(&p)
            },
            x[idx],
            eps,
        );
        report.record(|| format!("{label}[{idx}]"), analytic[idx], numeric);
    }
    report
}
