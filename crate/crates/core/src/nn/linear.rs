use rand::Rng;

use super::{gemm, join, Params, Tensor};

/// Token-wise affine map `y = x·Wᵀ + b` over a row-major (rows × in) matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[output, input]),
            bias: bias.then(|| Tensor::zeros(&[output])),
        }
    }

    /// Uniform fan-in initialisation scaled by `gain`.
    pub fn init<R: Rng>(input: usize, output: usize, bias: bool, gain: f64, rng: &mut R) -> Self {
        let mut l = Self::zeros(input, output, bias);
        let bound = gain * (3.0 / input as f64).sqrt();
        if bound == 0.0 {
            return l;
        }
        for v in &mut l.weight.data {
            *v = rng.gen_range(-bound..bound);
        }
        l
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let (i, o) = (self.input_dim(), self.output_dim());
        debug_assert_eq!(x.len(), rows * i);
        let mut y = vec![0.0; rows * o];
        if let Some(b) = &self.bias {
            for row in y.chunks_exact_mut(o) {
                row.copy_from_slice(&b.data);
            }
        }
        gemm(rows, i, o, x, false, &self.weight.data, true, &mut y, 1.0);
        y
    }

    /// Accumulates parameter gradients into `grad` (if given) and returns
    /// the input gradient when `need_dx` is set.
    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        rows: usize,
        grad: Option<&mut Linear>,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let (i, o) = (self.input_dim(), self.output_dim());
        if let Some(g) = grad {
            gemm(o, rows, i, dy, true, x, false, &mut g.weight.data, 1.0);
            if let Some(gb) = &mut g.bias {
                for row in dy.chunks_exact(o) {
                    for (a, b) in gb.data.iter_mut().zip(row) {
                        *a += b;
                    }
                }
            }
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; rows * i];
            gemm(rows, o, i, dy, false, &self.weight.data, false, &mut dx, 0.0);
            dx
        })
    }
}

impl Params for Linear {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}
