//! Ratio post-mask on the pair of beamformer outputs.
//!
//! mask_i(k,f) = max(beta, |B_i|^p / (|B_1|^p + |B_2|^p + eps)), applied
//! multiplicatively to the corresponding output. A non-learned stand-in
//! for a masking stage that suppresses residual noise and cross-talk.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wola::Spectrogram;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostmaskParams {
    pub exponent: f64,
    pub floor: f64,
}

impl Default for PostmaskParams {
    fn default() -> Self {
        Self {
            exponent: 2.0,
            floor: 0.05,
        }
    }
}

/// Real-valued masks for the two beamformer outputs, frames x bins.
#[derive(Debug, Clone)]
pub struct MaskPair {
    pub masks: [Array2<f64>; 2],
    pub params: PostmaskParams,
}

/// Build the ratio masks from the two single-channel beamformer outputs.
pub fn ratio_mask(
    outputs: [&Spectrogram; 2],
    params: &PostmaskParams,
) -> Result<MaskPair> {
    if params.exponent <= 0.0 {
        return Err(Error::InvalidParameter("mask exponent must be > 0".into()));
    }
    if !(0.0..=1.0).contains(&params.floor) {
        return Err(Error::InvalidParameter("mask floor outside [0, 1]".into()));
    }
    let shape = outputs[0].data.shape();
    if outputs[1].data.shape() != shape {
        return Err(Error::ShapeMismatch("beamformer outputs disagree".into()));
    }
    let (frames, bins) = (shape[0], shape[1]);
    let p = params.exponent;
    let mut m1 = Array2::<f64>::zeros((frames, bins));
    let mut m2 = Array2::<f64>::zeros((frames, bins));
    for k in 0..frames {
        for f in 0..bins {
            let a = outputs[0].data[(k, f, 0)].norm().powf(p);
            let b = outputs[1].data[(k, f, 0)].norm().powf(p);
            let den = a + b + EPS;
            m1[(k, f)] = (a / den).max(params.floor);
            m2[(k, f)] = (b / den).max(params.floor);
        }
    }
    Ok(MaskPair {
        masks: [m1, m2],
        params: *params,
    })
}

/// Element-wise application of one mask to its beamformer output.
pub fn apply_mask(mask: &Array2<f64>, spect: &Spectrogram) -> Result<Spectrogram> {
    let shape = spect.data.shape();
    if mask.nrows() != shape[0] || mask.ncols() != shape[1] || shape[2] != 1 {
        return Err(Error::ShapeMismatch("mask shape disagrees".into()));
    }
    let mut out = spect.clone();
    for k in 0..shape[0] {
        for f in 0..shape[1] {
            out.data[(k, f, 0)] *= mask[(k, f)];
        }
    }
    Ok(out)
}
