use crate::error::{Error, Result};
use crate::nn::Feat;

/// Channel-to-space: input channel `c·r² + i·r + j` at (y, x) lands at
/// output (y·r + i, x·r + j) channel `c`.
pub fn pixel_shuffle(x: &Feat, r: usize) -> Result<Feat> {
    let rr = r * r;
    if r == 0 || x.c % rr != 0 {
        return Err(Error::Config(format!("{} channels not divisible by {r}²", x.c)));
    }
    let oc = x.c / rr;
    let (oh, ow) = (x.h * r, x.w * r);
    let mut out = vec![0.0; oh * ow * oc];
    for y in 0..x.h {
        for xx in 0..x.w {
            let src = &x.data[(y * x.w + xx) * x.c..(y * x.w + xx + 1) * x.c];
            for c in 0..oc {
                for i in 0..r {
                    for j in 0..r {
                        out[((y * r + i) * ow + xx * r + j) * oc + c] = src[c * rr + i * r + j];
                    }
                }
            }
        }
    }
    Feat::from_vec(oh, ow, oc, out)
}

/// Exact inverse of [`pixel_shuffle`]; also its adjoint, so it carries
/// gradients back through the shuffle.
pub fn pixel_unshuffle(x: &Feat, r: usize) -> Result<Feat> {
    if r == 0 || x.h % r != 0 || x.w % r != 0 {
        return Err(Error::Config(format!("{}x{} not divisible by {r}", x.h, x.w)));
    }
    let (h, w, rr) = (x.h / r, x.w / r, r * r);
    let ic = x.c * rr;
    let mut out = vec![0.0; h * w * ic];
    for y in 0..h {
        for xx in 0..w {
            for c in 0..x.c {
                for i in 0..r {
                    for j in 0..r {
                        out[(y * w + xx) * ic + c * rr + i * r + j] = x.data[((y * r + i) * x.w + xx * r + j) * x.c + c];
                    }
                }
            }
        }
    }
    Feat::from_vec(h, w, ic, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn r1_is_identity() {
        let x = Feat::from_vec(2, 3, 2, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn four_channels_to_two_by_two() {
        let x = Feat::from_vec(1, 1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!((y.h, y.w, y.c), (2, 2, 1));
        assert_eq!(y.data, vec![1.0, 2.0, 3.0, 4.0]);
        let x = Feat::from_vec(1, 1, 8, (0..8).map(f64::from).collect()).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        // Channel 1 of the output reads inputs 4..8.
        assert_eq!(y.data, vec![0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
    }

    #[test]
    fn indivisible_channels_fail() {
        assert!(pixel_shuffle(&Feat::zeros(2, 2, 6), 2).is_err());
        assert!(pixel_unshuffle(&Feat::zeros(3, 2, 1), 2).is_err());
    }

    proptest! {
        #[test]
        fn shuffle_round_trips(h in 1usize..5, w in 1usize..5, c in 1usize..4, r in 1usize..4, seed in 0u64..1000) {
            let n = h * w * c * r * r;
            let data: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64).collect();
            let x = Feat::from_vec(h, w, c * r * r, data).unwrap();
            let y = pixel_shuffle(&x, r).unwrap();
            prop_assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
        }
    }
}
