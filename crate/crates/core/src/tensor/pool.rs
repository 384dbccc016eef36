use super::{Float, Tensor};
use crate::error::{Error, Result};

pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    /// Flat input index of the selected element for every output element.
    pub argmax: Vec<usize>,
}

/// Max pooling over `window x window` blocks. Ties go to the first element in
/// row-major order within the window.
pub fn maxpool2d<T: Float>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<MaxPoolOutput<T>> {
    let [n, c, h, w] = input.dims4()?;
    if window == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "maxpool window {window} and stride {stride} must be positive"
        )));
    }
    if window > h || window > w {
        return Err(Error::Config(format!(
            "maxpool window {window} exceeds input shape {:?}",
            input.shape()
        )));
    }
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for idx in row..row + window {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::new([n, c, ho, wo], out)?,
        argmax,
    })
}

/// Routes each output gradient to its selected input element.
pub fn maxpool2d_backward<T: Float>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_output.len() {
        return Err(Error::Contract(format!(
            "maxpool gradient of {} values for {} pooled outputs",
            grad_output.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape.to_vec());
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_output.data()) {
        g[idx] += v;
    }
    Ok(grad)
}
