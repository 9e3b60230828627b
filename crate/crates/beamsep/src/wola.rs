//! Weighted overlap-add STFT analysis and synthesis.
//!
//! Analysis and synthesis both apply the window; synthesis divides by
//! the accumulated squared-window envelope, so `istft(stft(x))`
//! reproduces `x` exactly on the fully overlapped interior. The first
//! and last `frame_len - hop` samples carry partial overlap and are
//! not covered by the reconstruction guarantee.

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
    Rectangular,
}

/// STFT framing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftSpec {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Window,
    pub sample_rate: f64,
}

impl StftSpec {
    pub fn new(
        frame_len: usize,
        hop: usize,
        fft_size: usize,
        window: Window,
        sample_rate: f64,
    ) -> Result<Self> {
        if frame_len == 0 || hop == 0 || frame_len % hop != 0 {
            return Err(Error::InvalidParameter(format!(
                "hop {hop} must divide frame_len {frame_len}"
            )));
        }
        if fft_size < frame_len {
            return Err(Error::InvalidParameter(format!(
                "fft_size {fft_size} < frame_len {frame_len}"
            )));
        }
        if sample_rate <= 0.0 {
            return Err(Error::InvalidParameter("sample_rate must be positive".into()));
        }
        Ok(Self {
            frame_len,
            hop,
            fft_size,
            window,
            sample_rate,
        })
    }

    /// 512-sample Hann frames with 50% overlap at 16 kHz.
    pub fn default_16k() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            fft_size: 512,
            window: Window::Hann,
            sample_rate: 16000.0,
        }
    }

    /// Number of one-sided frequency bins.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if len < self.frame_len {
            return Err(Error::SignalTooShort {
                len,
                min: self.frame_len,
            });
        }
        Ok((len - self.frame_len) / self.hop + 1)
    }

    /// Periodic analysis/synthesis window samples.
    pub fn window_samples(&self) -> Vec<f64> {
        let n = self.frame_len as f64;
        (0..self.frame_len)
            .map(|i| match self.window {
                Window::Hann => 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos(),
                Window::Rectangular => 1.0,
            })
            .collect()
    }
}

/// Complex time-frequency tensor, frames x bins x channels.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub spec: StftSpec,
    /// Length of the time-domain signal this spectrogram was taken from;
    /// `istft` pads or truncates its output to this length.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn num_bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.re == 0.0 && v.im == 0.0)
    }
}

/// Analyze a multichannel signal (channels x samples) into a one-sided
/// complex spectrogram.
pub fn stft(signal: ArrayView2<f64>, spec: &StftSpec) -> Result<Spectrogram> {
    let channels = signal.nrows();
    let len = signal.ncols();
    let frames = spec.num_frames(len)?;
    let bins = spec.num_bins();
    let window = spec.window_samples();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(spec.fft_size);
    let mut data = Array3::<Complex64>::zeros((frames, bins, channels));
    let mut buf = vec![Complex64::new(0.0, 0.0); spec.fft_size];

    for ch in 0..channels {
        for k in 0..frames {
            let start = k * spec.hop;
            for i in 0..spec.fft_size {
                buf[i] = if i < spec.frame_len {
                    Complex64::new(signal[(ch, start + i)] * window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            fft.process(&mut buf);
            for f in 0..bins {
                data[(k, f, ch)] = buf[f];
            }
        }
    }
    Ok(Spectrogram {
        data,
        spec: *spec,
        signal_len: len,
    })
}

/// Synthesize a multichannel signal (channels x samples) from a
/// spectrogram by weighted overlap-add.
pub fn istft(spect: &Spectrogram) -> Result<Array2<f64>> {
    let spec = &spect.spec;
    let frames = spect.num_frames();
    let bins = spect.num_bins();
    let channels = spect.num_channels();
    if bins != spec.num_bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {bins} bins, spec expects {}",
            spec.num_bins()
        )));
    }
    if frames == 0 {
        return Err(Error::ShapeMismatch("spectrogram has no frames".into()));
    }
    let window = spec.window_samples();
    let covered = (frames - 1) * spec.hop + spec.frame_len;

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(spec.fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); spec.fft_size];

    let mut out = Array2::<f64>::zeros((channels, spect.signal_len));
    let mut acc = vec![0.0f64; covered];
    let mut wsum = vec![0.0f64; covered];
    for k in 0..frames {
        let start = k * spec.hop;
        for (i, w) in window.iter().enumerate() {
            wsum[start + i] += w * w;
        }
    }

    let scale = 1.0 / spec.fft_size as f64;
    for ch in 0..channels {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..frames {
            // rebuild the full Hermitian spectrum from the one-sided half
            for f in 0..bins {
                buf[f] = spect.data[(k, f, ch)];
            }
            for f in bins..spec.fft_size {
                buf[f] = spect.data[(k, spec.fft_size - f, ch)].conj();
            }
            ifft.process(&mut buf);
            let start = k * spec.hop;
            for i in 0..spec.frame_len {
                acc[start + i] += buf[i].re * scale * window[i];
            }
        }
        // Floor the overlap normalization at a fraction of its interior
        // value. Fully overlapped samples divide by the exact envelope;
        // edge samples with vanishing window weight are faded out instead
        // of amplified, which keeps the synthesis bounded for modified
        // (non-consistent) spectrograms.
        let peak = wsum.iter().fold(0.0f64, |a, &v| a.max(v));
        let floor = 0.15 * peak;
        let n = covered.min(spect.signal_len);
        for i in 0..n {
            out[(ch, i)] = if wsum[i] > 1e-10 {
                acc[i] / wsum[i].max(floor)
            } else {
                0.0
            };
        }
    }
    Ok(out)
}
