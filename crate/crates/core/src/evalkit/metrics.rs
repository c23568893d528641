use crate::error::{shape, Result};
use crate::imgproc::ImageTensor;

/// Pixels trimmed from each side before PSNR at ×4.
pub const DEFAULT_BORDER: usize = 4;

/// BT.601 studio-swing luma on the [0,1] scale. 1-channel input is returned
/// unchanged.
pub fn rgb_to_y(img: &ImageTensor) -> ImageTensor {
    if img.channels == 1 {
        return img.clone();
    }
    ImageTensor::from_fn(img.height, img.width, 1, |y, x, _| {
        (65.481 * img.get(y, x, 0) + 128.553 * img.get(y, x, 1) + 24.966 * img.get(y, x, 2) + 16.0) / 255.0
    })
}

/// 10·log10(1/MSE) on [0,1] data; `+inf` when the inputs are identical.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR on the Y channel after trimming `border` pixels from every side.
pub fn psnr_y_border(sr: &ImageTensor, hr: &ImageTensor, border: usize) -> Result<f64> {
    if !sr.same_shape(hr) {
        return shape(format!(
            "psnr inputs {}x{}x{} vs {}x{}x{}",
            sr.height, sr.width, sr.channels, hr.height, hr.width, hr.channels
        ));
    }
    let (ys, yh) = (rgb_to_y(sr), rgb_to_y(hr));
    let (ys, yh) = if sr.height > 2 * border && sr.width > 2 * border && border > 0 {
        let (h, w) = (sr.height - 2 * border, sr.width - 2 * border);
        (ys.crop(border, border, h, w)?, yh.crop(border, border, h, w)?)
    } else {
        (ys, yh)
    };
    Ok(psnr(&ys.data, &yh.data))
}

pub fn psnr_y(sr: &ImageTensor, hr: &ImageTensor) -> Result<f64> {
    psnr_y_border(sr, hr, DEFAULT_BORDER)
}
