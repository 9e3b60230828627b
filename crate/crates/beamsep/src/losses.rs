//! Spectral distance losses and utterance-level permutation alignment.
//!
//! Each loss has a complex and a magnitude form blended by a factor
//! `alpha` (SDR exists only in complex form). All sums run over every
//! (frame, bin) element and carry an additive floor `eps` inside the
//! log10 so perfect reconstruction stays finite.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wola::Spectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "MSE")]
    Mse,
    #[serde(rename = "cMSE")]
    Cmse,
    #[serde(rename = "MAE")]
    Mae,
    #[serde(rename = "SDR")]
    Sdr,
}

/// Loss selection: kind, complex/magnitude blend, compression exponent
/// and numerical floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_compression")]
    pub compression: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_compression() -> f64 {
    0.3
}

fn default_floor() -> f64 {
    1e-12
}

impl LossSpec {
    pub fn new(kind: LossKind, alpha: f64, compression: f64, floor: f64) -> Result<Self> {
        let spec = Self {
            kind,
            alpha,
            compression,
            floor,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cmse(alpha: f64) -> Self {
        Self {
            kind: LossKind::Cmse,
            alpha,
            compression: default_compression(),
            floor: default_floor(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "compression {} outside (0, 1]",
                self.compression
            )));
        }
        if self.floor <= 0.0 {
            return Err(Error::InvalidParameter("floor must be positive".into()));
        }
        if self.kind == LossKind::Sdr && self.alpha != 1.0 {
            return Err(Error::UnsupportedLossCombination);
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: LossSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Compressed complex value |x|^c * e^{j phi}; phase of zero is zero.
fn compress(x: Complex64, c: f64) -> Complex64 {
    let mag = x.norm();
    if mag == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::from_polar(mag.powf(c), x.arg())
    }
}

/// Spectral distance between an estimate and a target, both single
/// utterances with matching shapes.
pub fn spectral_loss(est: &Spectrogram, tgt: &Spectrogram, spec: &LossSpec) -> Result<f64> {
    spec.validate()?;
    if est.data.shape() != tgt.data.shape() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {:?} vs target {:?}",
            est.data.shape(),
            tgt.data.shape()
        )));
    }
    let eps = spec.floor;
    let c = spec.compression;
    let complex_part = |kind: LossKind| -> Result<f64> {
        match kind {
            LossKind::Mse => {
                let s: f64 = est
                    .data
                    .iter()
                    .zip(tgt.data.iter())
                    .map(|(e, t)| (t - e).norm_sqr())
                    .sum();
                Ok((s + eps).log10())
            }
            LossKind::Cmse => {
                let s: f64 = est
                    .data
                    .iter()
                    .zip(tgt.data.iter())
                    .map(|(e, t)| (compress(*t, c) - compress(*e, c)).norm_sqr())
                    .sum();
                Ok((s + eps).log10())
            }
            LossKind::Mae => {
                let s: f64 = est
                    .data
                    .iter()
                    .zip(tgt.data.iter())
                    .map(|(e, t)| (t - e).norm())
                    .sum();
                Ok((s + eps).log10())
            }
            LossKind::Sdr => {
                let num: f64 = tgt.data.iter().map(|t| t.norm_sqr()).sum();
                if num == 0.0 {
                    return Err(Error::DegenerateTarget);
                }
                let den: f64 = est
                    .data
                    .iter()
                    .zip(tgt.data.iter())
                    .map(|(e, t)| (t - e).norm_sqr())
                    .sum();
                Ok(-(num / (den + eps)).log10())
            }
        }
    };
    let magnitude_part = |kind: LossKind| -> f64 {
        match kind {
            LossKind::Mse => {
                let s: f64 = est
                    .data
                    .iter()
                    .zip(tgt.data.iter())
                    .map(|(e, t)| (t.norm() - e.norm()).powi(2))
                    .sum();
                (s + eps).log10()
            }
            LossKind::Cmse => {
                let s: f64 = est
                    .data
                    .iter()
                    .zip(tgt.data.iter())
                    .map(|(e, t)| (t.norm().powf(c) - e.norm().powf(c)).powi(2))
                    .sum();
                (s + eps).log10()
            }
            LossKind::Mae => {
                let s: f64 = est
                    .data
                    .iter()
                    .zip(tgt.data.iter())
                    .map(|(e, t)| (t.norm() - e.norm()).abs())
                    .sum();
                (s + eps).log10()
            }
            LossKind::Sdr => unreachable!("SDR has no magnitude form"),
        }
    };
    if spec.alpha == 1.0 {
        complex_part(spec.kind)
    } else {
        let lc = complex_part(spec.kind)?;
        let lm = magnitude_part(spec.kind);
        Ok(spec.alpha * lc + (1.0 - spec.alpha) * lm)
    }
}

/// Output-to-source assignment chosen by uPIT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Permutation {
    Identity,
    Swapped,
}

impl Permutation {
    /// Index of the estimate assigned to target `i`.
    pub fn estimate_for(&self, target: usize) -> usize {
        match self {
            Permutation::Identity => target,
            Permutation::Swapped => 1 - target,
        }
    }
}

/// Utterance-level permutation-invariant loss over two sources: total
/// loss of the better assignment and which one won.
pub fn upit_loss(
    ests: [&Spectrogram; 2],
    tgts: [&Spectrogram; 2],
    spec: &LossSpec,
) -> Result<(f64, Permutation)> {
    let identity = spectral_loss(ests[0], tgts[0], spec)? + spectral_loss(ests[1], tgts[1], spec)?;
    let swapped = spectral_loss(ests[1], tgts[0], spec)? + spectral_loss(ests[0], tgts[1], spec)?;
    if identity <= swapped {
        Ok((identity, Permutation::Identity))
    } else {
        Ok((swapped, Permutation::Swapped))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wola::StftSpec;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Spectrogram {
            data: Array3::from_shape_fn((2, 3, 1), |_| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            }),
            spec: StftSpec::default_16k(),
            signal_len: 1024,
        }
    }

    #[test]
    fn perfect_reconstruction_hits_floor() {
        let x = small(1);
        let spec = LossSpec::new(LossKind::Mse, 1.0, 0.3, 1e-12).unwrap();
        assert!((spectral_loss(&x, &x.clone(), &spec).unwrap() + 12.0).abs() < 1e-9);
    }

    #[test]
    fn cmse_with_unit_exponent_equals_mse_magnitude() {
        for seed in 0..5 {
            let e = small(seed);
            let t = small(seed + 100);
            let cmse = LossSpec::new(LossKind::Cmse, 0.0, 1.0, 1e-12).unwrap();
            let mse = LossSpec::new(LossKind::Mse, 0.0, 0.3, 1e-12).unwrap();
            let a = spectral_loss(&e, &t, &cmse).unwrap();
            let b = spectral_loss(&e, &t, &mse).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sdr_requires_alpha_one() {
        assert!(matches!(
            LossSpec::new(LossKind::Sdr, 0.5, 0.3, 1e-12),
            Err(Error::UnsupportedLossCombination)
        ));
    }

    #[test]
    fn sdr_zero_target_errors() {
        let e = small(2);
        let mut t = small(3);
        t.data.fill(Complex64::new(0.0, 0.0));
        let spec = LossSpec::new(LossKind::Sdr, 1.0, 0.3, 1e-12).unwrap();
        assert!(matches!(
            spectral_loss(&e, &t, &spec),
            Err(Error::DegenerateTarget)
        ));
    }

    /// Straight-line re-implementation of every loss formula, used as the
    /// oracle for the table-driven check.
    fn brute_force(
        est: &Spectrogram,
        tgt: &Spectrogram,
        kind: LossKind,
        alpha: f64,
        c: f64,
        eps: f64,
    ) -> f64 {
        let es: Vec<Complex64> = est.data.iter().copied().collect();
        let ts: Vec<Complex64> = tgt.data.iter().copied().collect();
        let n = es.len();
        let lc = match kind {
            LossKind::Mse => {
                let mut s = 0.0;
                for i in 0..n {
                    s += (ts[i] - es[i]).norm_sqr();
                }
                (s + eps).log10()
            }
            LossKind::Cmse => {
                let mut s = 0.0;
                for i in 0..n {
                    let ct = if ts[i].norm() == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::from_polar(ts[i].norm().powf(c), ts[i].im.atan2(ts[i].re))
                    };
                    let ce = if es[i].norm() == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::from_polar(es[i].norm().powf(c), es[i].im.atan2(es[i].re))
                    };
                    s += (ct - ce).norm_sqr();
                }
                (s + eps).log10()
            }
            LossKind::Mae => {
                let mut s = 0.0;
                for i in 0..n {
                    s += (ts[i] - es[i]).norm();
                }
                (s + eps).log10()
            }
            LossKind::Sdr => {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..n {
                    num += ts[i].norm_sqr();
                    den += (ts[i] - es[i]).norm_sqr();
                }
                -(num / (den + eps)).log10()
            }
        };
        if alpha == 1.0 {
            return lc;
        }
        let lm = match kind {
            LossKind::Mse => {
                let mut s = 0.0;
                for i in 0..n {
                    s += (ts[i].norm() - es[i].norm()).powi(2);
                }
                (s + eps).log10()
            }
            LossKind::Cmse => {
                let mut s = 0.0;
                for i in 0..n {
                    s += (ts[i].norm().powf(c) - es[i].norm().powf(c)).powi(2);
                }
                (s + eps).log10()
            }
            LossKind::Mae => {
                let mut s = 0.0;
                for i in 0..n {
                    s += ((ts[i].norm() - es[i].norm()) as f64).abs();
                }
                (s + eps).log10()
            }
            LossKind::Sdr => unreachable!(),
        };
        alpha * lc + (1.0 - alpha) * lm
    }

    #[test]
    fn all_rows_match_brute_force() {
        for seed in 0..10u64 {
            let e = small(seed);
            let t = small(seed + 500);
            for kind in [LossKind::Mse, LossKind::Cmse, LossKind::Mae, LossKind::Sdr] {
                for &alpha in &[0.0, 0.5, 1.0] {
                    if kind == LossKind::Sdr && alpha != 1.0 {
                        continue;
                    }
                    let spec = LossSpec::new(kind, alpha, 0.3, 1e-12).unwrap();
                    let got = spectral_loss(&e, &t, &spec).unwrap();
                    let want = brute_force(&e, &t, kind, alpha, 0.3, 1e-12);
                    assert!((got - want).abs() < 1e-10, "{kind:?} alpha {alpha}");
                }
            }
        }
    }

    #[test]
    fn upit_identity_and_swap() {
        let a = small(10);
        let b = small(11);
        let spec = LossSpec::new(LossKind::Mse, 1.0, 0.3, 1e-12).unwrap();
        let (l, p) = upit_loss([&a, &b], [&a, &b], &spec).unwrap();
        assert_eq!(p, Permutation::Identity);
        assert!((l - 2.0 * (1e-12f64).log10()).abs() < 1e-9);
        let (l2, p2) = upit_loss([&b, &a], [&a, &b], &spec).unwrap();
        assert_eq!(p2, Permutation::Swapped);
        assert!((l - l2).abs() < 1e-9);
    }

    #[test]
    fn upit_matches_enumeration() {
        let spec = LossSpec::new(LossKind::Cmse, 0.5, 0.3, 1e-12).unwrap();
        for seed in 0..8u64 {
            let e1 = small(seed);
            let e2 = small(seed + 20);
            let t1 = small(seed + 40);
            let t2 = small(seed + 60);
            let (l, _) = upit_loss([&e1, &e2], [&t1, &t2], &spec).unwrap();
            let id = spectral_loss(&e1, &t1, &spec).unwrap() + spectral_loss(&e2, &t2, &spec).unwrap();
            let sw = spectral_loss(&e2, &t1, &spec).unwrap() + spectral_loss(&e1, &t2, &spec).unwrap();
            assert_eq!(l, id.min(sw));
        }
    }

    proptest! {
        #[test]
        fn upit_never_above_identity(s1 in 0u64..1000, s2 in 1000u64..2000) {
            let e1 = small(s1);
            let e2 = small(s1 + 7);
            let t1 = small(s2);
            let t2 = small(s2 + 7);
            let spec = LossSpec::new(LossKind::Mae, 0.5, 0.3, 1e-12).unwrap();
            let (l, _) = upit_loss([&e1, &e2], [&t1, &t2], &spec).unwrap();
            let id = spectral_loss(&e1, &t1, &spec).unwrap()
                + spectral_loss(&e2, &t2, &spec).unwrap();
            prop_assert!(l <= id + 1e-12);
        }

        #[test]
        fn magnitude_loss_phase_invariant(seed in 0u64..500, phase in 0.0f64..6.28) {
            // alpha = 0: rotating every estimate bin by a common phase
            // leaves the loss unchanged
            let e = small(seed);
            let t = small(seed + 3);
            let mut rotated = e.clone();
            let rot = Complex64::from_polar(1.0, phase);
            rotated.data.mapv_inplace(|v| v * rot);
            let spec = LossSpec::new(LossKind::Mse, 0.0, 0.3, 1e-12).unwrap();
            let a = spectral_loss(&e, &t, &spec).unwrap();
            let b = spectral_loss(&rotated, &t, &spec).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn floor_monotonicity(seed in 0u64..500) {
            let e = small(seed);
            let t = small(seed + 9);
            for kind in [LossKind::Mse, LossKind::Cmse, LossKind::Mae] {
                let lo = LossSpec::new(kind, 0.5, 0.3, 1e-12).unwrap();
                let hi = LossSpec::new(kind, 0.5, 0.3, 1e-6).unwrap();
                prop_assert!(
                    spectral_loss(&e, &t, &hi).unwrap() >= spectral_loss(&e, &t, &lo).unwrap()
                );
            }
        }
    }

    #[test]
    fn loss_spec_json() {
        let spec =
            LossSpec::from_json_str(r#"{"kind":"cMSE","alpha":1.0,"compression":0.3,"floor":1e-12}"#)
                .unwrap();
        assert_eq!(spec.kind, LossKind::Cmse);
        assert_eq!(spec.alpha, 1.0);
        let spec = LossSpec::from_json_str(r#"{"kind":"MAE"}"#).unwrap();
        assert_eq!(spec.alpha, 1.0);
        assert_eq!(spec.floor, 1e-12);
    }
}
