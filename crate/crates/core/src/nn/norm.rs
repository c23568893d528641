use super::{join, Params, Tensor};

const EPS: f64 = 1e-5;

/// Per-token layer normalisation over the channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Tensor::full(&[c], 1.0),
            beta: Tensor::zeros(&[c]),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
        let c = self.channels();
        let rows = x.len() / c;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[r * c + j] = xh;
                y[r * c + j] = xh * self.gamma.data[j] + self.beta.data[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &[f64], grad: Option<&mut LayerNorm>) -> Vec<f64> {
        let c = self.channels();
        let rows = dy.len() / c;
        if let Some(g) = grad {
            for r in 0..rows {
                for j in 0..c {
                    g.gamma.data[j] += dy[r * c + j] * cache.xhat[r * c + j];
                    g.beta.data[j] += dy[r * c + j];
                }
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for r in 0..rows {
            let xh = &cache.xhat[r * c..(r + 1) * c];
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for j in 0..c {
                let gj = dy[r * c + j] * self.gamma.data[j];
                sum_g += gj;
                sum_gx += gj * xh[j];
            }
            let inv = 1.0 / c as f64;
            for j in 0..c {
                let gj = dy[r * c + j] * self.gamma.data[j];
                dx[r * c + j] = cache.rstd[r] * (gj - inv * sum_g - xh[j] * inv * sum_gx);
            }
        }
        dx
    }
}

impl Params for LayerNorm {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut ln = LayerNorm::new(4);
        ln.gamma.data = vec![0.5, 1.5, -0.7, 1.0];
        ln.beta.data = vec![0.1, 0.0, 0.2, -0.3];
        let x = vec![0.3, -1.2, 2.0, 0.4, 1.0, 1.1, -0.5, 0.0];
        let r = vec![0.7, -0.2, 0.9, 1.3, -0.4, 0.5, 0.6, -1.1];
        let f = |x: &[f64]| -> f64 { ln.forward(x).0.iter().zip(&r).map(|(a, b)| a * b).sum() };
        let (_, cache) = ln.forward(&x);
        let dx = ln.backward(&cache, &r, None);
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += 1e-6;
            let mut m = x.clone();
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
    }
}
