//! LCMV beamformer against a spherically isotropic diffuse noise field.
//!
//! Per bin the weights are `w = G^-1 A (A^H G^-1 A)^-1 g` with
//! `A = [a_target, a_interf]`, `g = [1, 0]^T` and `G` the diagonally
//! loaded diffuse coherence matrix: unit gain toward the target, a null
//! toward the interferer, minimum diffuse-noise power otherwise. Bins
//! where the two-constraint system is degenerate (always bin 0, where
//! every steering vector is the all-ones vector) fall back to the
//! single-constraint distortionless solution.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{bin_frequency, ArrayGeometry, SteeringMatrix};
use crate::linalg::{herm2_eigs, lu_solve};
use crate::wola::{Spectrogram, StftSpec};

/// Default diagonal loading, relative to trace(G)/M.
pub const DEFAULT_LOADING: f64 = 1e-9;

/// Condition-number threshold on the 2x2 constraint Gram matrix above
/// which a bin falls back to the single-constraint solution.
const CONDITION_LIMIT: f64 = 1e13;

/// Hermitian diffuse-noise coherence per bin, bins x M x M.
#[derive(Debug, Clone)]
pub struct NoiseCovariance {
    pub values: Array3<f64>,
}

impl NoiseCovariance {
    pub fn num_bins(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn num_channels(&self) -> usize {
        self.values.shape()[1]
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Spherically isotropic coherence: Gamma_pq(f) = sinc(2*pi*f_Hz*d_pq/c).
pub fn diffuse_coherence(geom: &ArrayGeometry, spec: &StftSpec) -> NoiseCovariance {
    let m = geom.num_channels();
    let bins = spec.num_bins();
    let mut values = Array3::<f64>::zeros((bins, m, m));
    for p in 0..m {
        for q in 0..m {
            let d = geom.mic_distance(p, q);
            for f in 0..bins {
                let freq = bin_frequency(f, spec);
                values[(f, p, q)] =
                    sinc(2.0 * std::f64::consts::PI * freq * d / geom.speed_of_sound);
            }
        }
    }
    NoiseCovariance { values }
}

/// Per-source beamforming weights, bins x channels.
#[derive(Debug, Clone)]
pub struct BeamformerWeights {
    pub values: Array2<Complex64>,
    /// Bins where the two-constraint solve was degenerate and the
    /// single-constraint fallback was used.
    pub fallback_bins: Vec<usize>,
}

fn loaded_gamma(noise: &NoiseCovariance, bin: usize, loading: f64) -> Array2<Complex64> {
    let m = noise.num_channels();
    let mut trace = 0.0;
    for i in 0..m {
        trace += noise.values[(bin, i, i)];
    }
    let delta = loading * trace / m as f64;
    Array2::from_shape_fn((m, m), |(p, q)| {
        let v = noise.values[(bin, p, q)] + if p == q { delta } else { 0.0 };
        Complex64::new(v, 0.0)
    })
}

/// Single-constraint distortionless weights for one bin:
/// w = G^-1 a / (a^H G^-1 a).
fn mvdr_bin(gamma: &Array2<Complex64>, a: &[Complex64]) -> Option<Vec<Complex64>> {
    let m = a.len();
    let rhs = Array2::from_shape_fn((m, 1), |(i, _)| a[i]);
    let c = lu_solve(gamma, &rhs)?;
    let mut denom = Complex64::new(0.0, 0.0);
    for i in 0..m {
        denom += a[i].conj() * c[(i, 0)];
    }
    if denom.norm() < 1e-300 {
        return None;
    }
    Some((0..m).map(|i| c[(i, 0)] / denom).collect())
}

/// LCMV weights for every bin: unit response toward `a_target`, null
/// toward `a_interf`, minimum diffuse-noise power.
///
/// Degenerate bins (including bin 0) use the single-constraint fallback;
/// an entirely coincident steering pair is an error.
pub fn lcmv_weights(
    a_target: &SteeringMatrix,
    a_interf: &SteeringMatrix,
    noise: &NoiseCovariance,
    loading: f64,
) -> Result<BeamformerWeights> {
    let bins = a_target.num_bins();
    let m = a_target.num_channels();
    if a_interf.num_bins() != bins
        || a_interf.num_channels() != m
        || noise.num_bins() != bins
        || noise.num_channels() != m
    {
        return Err(Error::ShapeMismatch(
            "steering/noise dimensions disagree".into(),
        ));
    }
    if loading < 0.0 {
        return Err(Error::InvalidParameter("loading must be >= 0".into()));
    }
    let max_sep = a_target
        .values
        .iter()
        .zip(a_interf.values.iter())
        .map(|(u, v)| (u - v).norm())
        .fold(0.0f64, f64::max);
    if max_sep < 1e-9 {
        return Err(Error::DegenerateSteering);
    }

    let mut values = Array2::<Complex64>::zeros((bins, m));
    let mut fallback_bins = Vec::new();
    for f in 0..bins {
        let gamma = loaded_gamma(noise, f, loading);
        let at: Vec<Complex64> = (0..m).map(|i| a_target.values[(f, i)]).collect();
        let w = if f == 0 {
            None
        } else {
            lcmv_bin(&gamma, &at, a_interf, f)
        };
        let w = match w {
            Some(w) => w,
            None => {
                fallback_bins.push(f);
                mvdr_bin(&gamma, &at).ok_or(Error::DegenerateSteering)?
            }
        };
        for i in 0..m {
            values[(f, i)] = w[i];
        }
    }
    Ok(BeamformerWeights {
        values,
        fallback_bins,
    })
}

fn lcmv_bin(
    gamma: &Array2<Complex64>,
    at: &[Complex64],
    a_interf: &SteeringMatrix,
    bin: usize,
) -> Option<Vec<Complex64>> {
    let m = at.len();
    let a = Array2::from_shape_fn((m, 2), |(i, j)| {
        if j == 0 {
            at[i]
        } else {
            a_interf.values[(bin, i)]
        }
    });
    // C = G^-1 A, B = A^H C (2x2 Hermitian)
    let c = lu_solve(gamma, &a)?;
    let mut b = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut s = Complex64::new(0.0, 0.0);
            for r in 0..m {
                s += a[(r, i)].conj() * c[(r, j)];
            }
            b[i][j] = s;
        }
    }
    let (lo, hi) = herm2_eigs(b[0][0].re, b[0][1], b[1][1].re);
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi / lo > CONDITION_LIMIT {
        return None;
    }
    // z = B^-1 g with g = [1, 0]^T
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    let z = [b[1][1] / det, -b[1][0] / det];
    let w: Vec<Complex64> = (0..m).map(|i| c[(i, 0)] * z[0] + c[(i, 1)] * z[1]).collect();
    if w.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Some(w)
    } else {
        None
    }
}

/// Apply weights to a multichannel spectrogram: out(k, f) = w(f)^H y(k, f).
pub fn apply_beamformer(w: &BeamformerWeights, spect: &Spectrogram) -> Result<Spectrogram> {
    let (frames, bins, channels) = (spect.num_frames(), spect.num_bins(), spect.num_channels());
    if w.values.nrows() != bins || w.values.ncols() != channels {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} vs spectrogram {} bins x {} channels",
            w.values.shape(),
            bins,
            channels
        )));
    }
    let mut data = ndarray::Array3::<Complex64>::zeros((frames, bins, 1));
    for k in 0..frames {
        for f in 0..bins {
            let mut s = Complex64::new(0.0, 0.0);
            for m in 0..channels {
                s += w.values[(f, m)].conj() * spect.data[(k, f, m)];
            }
            data[(k, f, 0)] = s;
        }
    }
    Ok(Spectrogram {
        data,
        spec: spect.spec,
        signal_len: spect.signal_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{steering_vector, ArrayGeometry, Doa};
    use crate::wola::StftSpec;
    use ndarray::Array3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ArrayGeometry, StftSpec, NoiseCovariance) {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let noise = diffuse_coherence(&geom, &spec);
        (geom, spec, noise)
    }

    #[test]
    fn coherence_diagonal_and_dc() {
        let (_, _, noise) = setup();
        for f in 0..noise.num_bins() {
            for p in 0..7 {
                assert_eq!(noise.values[(f, p, p)], 1.0);
            }
        }
        for p in 0..7 {
            for q in 0..7 {
                assert_eq!(noise.values[(0, p, q)], 1.0);
            }
        }
    }

    #[test]
    fn coherence_zero_crossing() {
        // d = 0.08 m at 2143.75 Hz puts the sinc argument at pi
        let x = 2.0 * std::f64::consts::PI * 2143.75 * 0.08 / 343.0;
        assert!((x - std::f64::consts::PI).abs() < 1e-10);
        assert!(sinc(x).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_identity_closed_form() {
        // Gamma = I and a_t^H a_i = 0 per bin -> w = a_t / M
        let m = 4;
        let bins = 3;
        let eye = NoiseCovariance {
            values: Array3::from_shape_fn((bins, m, m), |(_, p, q)| if p == q { 1.0 } else { 0.0 }),
        };
        // orthogonal columns of the DFT matrix, unit modulus
        let at = SteeringMatrix {
            values: Array2::from_shape_fn((bins, m), |(_, i)| {
                Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * i as f64 / m as f64)
            }),
        };
        let ai = SteeringMatrix {
            values: Array2::from_shape_fn((bins, m), |(_, i)| {
                Complex64::from_polar(1.0, 4.0 * std::f64::consts::PI * i as f64 / m as f64)
            }),
        };
        let w = lcmv_weights(&at, &ai, &eye, 0.0).unwrap();
        for f in 1..bins {
            for i in 0..m {
                assert!((w.values[(f, i)] - at.values[(f, i)] / m as f64).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn constraints_satisfied() {
        let (geom, spec, noise) = setup();
        let at = steering_vector(&geom, &Doa::from_degrees(-45.0, 0.0).unwrap(), &spec);
        let ai = steering_vector(&geom, &Doa::from_degrees(45.0, 0.0).unwrap(), &spec);
        let w = lcmv_weights(&at, &ai, &noise, DEFAULT_LOADING).unwrap();
        for f in 1..spec.num_bins() {
            let mut gt = Complex64::new(0.0, 0.0);
            let mut gi = Complex64::new(0.0, 0.0);
            for m in 0..7 {
                gt += w.values[(f, m)].conj() * at.values[(f, m)];
                gi += w.values[(f, m)].conj() * ai.values[(f, m)];
            }
            assert!((gt - Complex64::new(1.0, 0.0)).norm() < 1e-8, "bin {f}");
            assert!(gi.norm() < 1e-8, "bin {f}");
        }
        assert!(w.fallback_bins.iter().all(|&f| f == 0));
    }

    #[test]
    fn coincident_steering_is_error() {
        let (geom, spec, noise) = setup();
        let a = steering_vector(&geom, &Doa::from_degrees(10.0, 0.0).unwrap(), &spec);
        assert!(matches!(
            lcmv_weights(&a, &a.clone(), &noise, DEFAULT_LOADING),
            Err(Error::DegenerateSteering)
        ));
    }

    #[test]
    fn weights_match_kkt_solve() {
        // oracle: solve the KKT system [[G, A], [A^H, 0]] [w; l] = [0; g]
        // with an independent Gauss-Jordan elimination
        let (geom, spec, noise) = setup();
        let at = steering_vector(&geom, &Doa::from_degrees(-45.0, 0.0).unwrap(), &spec);
        let ai = steering_vector(&geom, &Doa::from_degrees(45.0, 0.0).unwrap(), &spec);
        let loading = 1e-6;
        let w = lcmv_weights(&at, &ai, &noise, loading).unwrap();
        let f = 100usize;
        let m = 7usize;
        let gamma = loaded_gamma(&noise, f, loading);
        let n = m + 2;
        let mut kkt = vec![vec![Complex64::new(0.0, 0.0); n + 1]; n];
        for p in 0..m {
            for q in 0..m {
                kkt[p][q] = gamma[(p, q)];
            }
            kkt[p][m] = at.values[(f, p)];
            kkt[p][m + 1] = ai.values[(f, p)];
            kkt[m][p] = at.values[(f, p)].conj();
            kkt[m + 1][p] = ai.values[(f, p)].conj();
        }
        kkt[m][n] = Complex64::new(1.0, 0.0);
        // Gauss-Jordan
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&a, &b| kkt[a][col].norm().total_cmp(&kkt[b][col].norm()))
                .unwrap();
            kkt.swap(col, piv);
            let d = kkt[col][col];
            for j in 0..=n {
                kkt[col][j] /= d;
            }
            for r in 0..n {
                if r != col {
                    let factor = kkt[r][col];
                    for j in 0..=n {
                        let upd = kkt[col][j] * factor;
                        kkt[r][j] -= upd;
                    }
                }
            }
        }
        for p in 0..m {
            assert!((w.values[(f, p)] - kkt[p][n]).norm() < 1e-8);
        }
    }

    #[test]
    fn optimality_among_constraint_satisfiers() {
        // any feasible w' has w'^H G w' >= w^H G w; check against random
        // feasible perturbations w' = w + P n with A^H P = 0
        let (geom, spec, noise) = setup();
        let at = steering_vector(&geom, &Doa::from_degrees(-30.0, 0.0).unwrap(), &spec);
        let ai = steering_vector(&geom, &Doa::from_degrees(70.0, 0.0).unwrap(), &spec);
        let loading = 1e-6;
        let w = lcmv_weights(&at, &ai, &noise, loading).unwrap();
        let f = 64usize;
        let m = 7usize;
        let gamma = loaded_gamma(&noise, f, loading);
        let quad = |v: &[Complex64]| -> f64 {
            let mut s = Complex64::new(0.0, 0.0);
            for p in 0..m {
                for q in 0..m {
                    s += v[p].conj() * gamma[(p, q)] * v[q];
                }
            }
            s.re
        };
        let w0: Vec<Complex64> = (0..m).map(|i| w.values[(f, i)]).collect();
        let base = quad(&w0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            // random direction projected onto the constraint null space
            let mut n: Vec<Complex64> = (0..m)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            for a in [&at, &ai] {
                let col: Vec<Complex64> = (0..m).map(|i| a.values[(f, i)]).collect();
                let dot: Complex64 = (0..m).map(|i| col[i].conj() * n[i]).sum();
                let nrm: f64 = col.iter().map(|v| v.norm_sqr()).sum();
                for i in 0..m {
                    n[i] -= col[i] * (dot / nrm);
                }
            }
            // re-project onto the second constraint is approximate; verify
            // feasibility before comparing
            let gt: Complex64 = (0..m).map(|i| (w0[i] + n[i]).conj() * at.values[(f, i)]).sum();
            let gi: Complex64 = (0..m).map(|i| (w0[i] + n[i]).conj() * ai.values[(f, i)]).sum();
            if (gt - Complex64::new(1.0, 0.0)).norm() > 1e-6 || gi.norm() > 1e-6 {
                continue;
            }
            let wp: Vec<Complex64> = (0..m).map(|i| w0[i] + n[i]).collect();
            assert!(quad(&wp) >= base - 1e-10);
        }
    }

    #[test]
    fn apply_selects_reference_channel() {
        let (geom, spec, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = ndarray::Array2::from_shape_fn((geom.num_channels(), 4096), |_| {
            rng.gen_range(-1.0..1.0)
        });
        let s = crate::wola::stft(x.view(), &spec).unwrap();
        let mut values = Array2::<Complex64>::zeros((spec.num_bins(), 7));
        for f in 0..spec.num_bins() {
            values[(f, 0)] = Complex64::new(1.0, 0.0);
        }
        let w = BeamformerWeights {
            values,
            fallback_bins: vec![],
        };
        let out = apply_beamformer(&w, &s).unwrap();
        for k in 0..s.num_frames() {
            for f in 0..s.num_bins() {
                assert_eq!(out.data[(k, f, 0)], s.data[(k, f, 0)]);
            }
        }
    }

    #[test]
    fn distortionless_on_plane_wave() {
        // y(k,f) = a_t(f) X(k,f) -> w^H y = X
        let (geom, spec, noise) = setup();
        let at = steering_vector(&geom, &Doa::from_degrees(20.0, 0.0).unwrap(), &spec);
        let ai = steering_vector(&geom, &Doa::from_degrees(-60.0, 0.0).unwrap(), &spec);
        let w = lcmv_weights(&at, &ai, &noise, DEFAULT_LOADING).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frames = 5;
        let bins = spec.num_bins();
        let mut data = Array3::<Complex64>::zeros((frames, bins, 7));
        let src = Array2::from_shape_fn((frames, bins), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        for k in 0..frames {
            for f in 0..bins {
                for m in 0..7 {
                    data[(k, f, m)] = at.values[(f, m)] * src[(k, f)];
                }
            }
        }
        let y = Spectrogram {
            data,
            spec,
            signal_len: frames * spec.hop + spec.frame_len,
        };
        let out = apply_beamformer(&w, &y).unwrap();
        for k in 0..frames {
            for f in 1..bins {
                assert!((out.data[(k, f, 0)] - src[(k, f)]).norm() < 1e-7);
            }
        }
    }
}
