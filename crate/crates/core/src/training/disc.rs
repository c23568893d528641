use rand::Rng;

use crate::nn::{join, leaky_relu, leaky_relu_grad, Conv2d, ConvCache, Feat, Params, Tensor};

const SLOPE: f64 = 0.2;

/// Patch discriminator: three stride-2 3×3 convs (3 → 16 → 32 → 64) and a
/// 1×1 head producing one logit per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorWeights {
    pub convs: Vec<Conv2d>,
    pub head: Conv2d,
}

#[derive(Clone, Debug)]
pub struct DiscCache {
    convs: Vec<ConvCache>,
    pre_act: Vec<Feat>,
    head: ConvCache,
}

impl DiscriminatorWeights {
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let mut convs: Vec<Conv2d> = [3, 16, 32, 64]
            .windows(2)
            .map(|p| Conv2d::zeros(p[0], p[1], 3, 2, 1))
            .collect();
        for c in &mut convs {
            c.init_(1.0, rng);
        }
        let mut head = Conv2d::same(64, 1, 1);
        head.init_(1.0, rng);
        Self { convs, head }
    }

    pub fn forward(&self, x: &Feat) -> (Feat, DiscCache) {
        let mut cur = x.clone();
        let mut convs = Vec::new();
        let mut pre_act = Vec::new();
        for c in &self.convs {
            let (y, cc) = c.forward(&cur);
            convs.push(cc);
            cur = Feat {
                data: y.data.iter().map(|v| leaky_relu(*v, SLOPE)).collect(),
                ..y.clone()
            };
            pre_act.push(y);
        }
        let (logits, head) = self.head.forward(&cur);
        (logits, DiscCache { convs, pre_act, head })
    }

    /// Accumulates into `grad` when given; returns dL/dx when `need_dx`.
    pub fn backward(
        &self,
        cache: &DiscCache,
        d_logits: &Feat,
        mut grad: Option<&mut DiscriminatorWeights>,
        need_dx: bool,
    ) -> Option<Feat> {
        let mut dy = self
            .head
            .backward(&cache.head, d_logits, grad.as_deref_mut().map(|g| &mut g.head), true)?;
        for i in (0..self.convs.len()).rev() {
            for (g, p) in dy.data.iter_mut().zip(&cache.pre_act[i].data) {
                *g *= leaky_relu_grad(*p, SLOPE);
            }
            let gi = grad.as_deref_mut().map(|g| &mut g.convs[i]);
            dy = self.convs[i].backward(&cache.convs[i], &dy, gi, i > 0 || need_dx)?;
        }
        Some(dy)
    }
}

impl Params for DiscriminatorWeights {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.named(&join(prefix, &format!("conv{i}")), out);
        }
        self.head.named(&join(prefix, "head"), out);
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.named_mut(&join(prefix, &format!("conv{i}")), out);
        }
        self.head.named_mut(&join(prefix, "head"), out);
    }
}
