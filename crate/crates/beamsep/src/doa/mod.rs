//! Source directions: SRP-PHAT scanning and loss-driven fitting.
//!
//! `doa_fit` recovers both source directions by minimizing the
//! permutation-invariant spectral loss of the beamformed outputs against
//! the target spectra, searching over the four angles with a
//! derivative-free simplex. No ground-truth DOAs enter the objective.

pub mod optim;

use ndarray::Array3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::beamforming::{
    apply_beamformer, diffuse_coherence, lcmv_weights, NoiseCovariance, DEFAULT_LOADING,
};
use crate::error::{Error, Result};
use crate::geometry::{steering_vector, ArrayGeometry, Doa};
use crate::losses::{upit_loss, LossSpec, Permutation};
use crate::postmask::{apply_mask, ratio_mask, PostmaskParams};
use crate::wola::{istft, stft, Spectrogram, StftSpec};
use optim::NelderMead;

/// An ordered pair of source directions; canonical form puts the smaller
/// azimuth first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaPair {
    pub doa_1: Doa,
    pub doa_2: Doa,
}

impl DoaPair {
    pub fn new(doa_1: Doa, doa_2: Doa) -> Self {
        Self { doa_1, doa_2 }.canonical()
    }

    pub fn canonical(self) -> Self {
        if self.doa_1.azimuth <= self.doa_2.azimuth {
            self
        } else {
            Self {
                doa_1: self.doa_2,
                doa_2: self.doa_1,
            }
        }
    }
}

/// Search grid for SRP-PHAT: azimuth always covers [-180, 180).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DoaGrid {
    pub azimuth_step_deg: f64,
    pub elevation_step_deg: f64,
    pub elevation_range_deg: f64,
}

impl Default for DoaGrid {
    fn default() -> Self {
        Self {
            azimuth_step_deg: 5.0,
            elevation_step_deg: 5.0,
            elevation_range_deg: 0.0,
        }
    }
}

impl DoaGrid {
    pub fn points(&self) -> Result<Vec<Doa>> {
        if self.azimuth_step_deg <= 0.0 || self.elevation_step_deg <= 0.0 {
            return Err(Error::InvalidParameter("grid steps must be positive".into()));
        }
        let mut out = Vec::new();
        let mut el = -self.elevation_range_deg;
        while el <= self.elevation_range_deg + 1e-9 {
            let mut az = -180.0;
            while az < 180.0 - 1e-9 {
                out.push(Doa::from_degrees(az, el)?);
                az += self.azimuth_step_deg;
            }
            el += self.elevation_step_deg;
        }
        Ok(out)
    }
}

/// Steered-response power with phase-transform weighting, summed over
/// frames and bins 1..F-1, evaluated at every grid point. Returned in
/// descending score order.
pub fn srp_phat(
    spect: &Spectrogram,
    geom: &ArrayGeometry,
    grid: &DoaGrid,
) -> Result<Vec<(Doa, f64)>> {
    if spect.is_zero() {
        return Err(Error::NoSignal);
    }
    let frames = spect.num_frames();
    let bins = spect.num_bins();
    let m = spect.num_channels();
    if m != geom.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {m} channels, geometry {}",
            geom.num_channels()
        )));
    }

    // accumulate the phase-transformed cross-spectral matrix per bin
    let mut cross = Array3::<Complex64>::zeros((bins, m, m));
    for k in 0..frames {
        for f in 1..bins {
            let y: Vec<Complex64> = (0..m)
                .map(|c| {
                    let v = spect.data[(k, f, c)];
                    let n = v.norm();
                    if n > 0.0 {
                        v / n
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            for p in 0..m {
                for q in 0..m {
                    cross[(f, p, q)] += y[p] * y[q].conj();
                }
            }
        }
    }

    let mut scored: Vec<(Doa, f64)> = grid
        .points()?
        .into_iter()
        .map(|doa| {
            let a = steering_vector(geom, &doa, &spect.spec);
            let mut power = 0.0;
            for f in 1..bins {
                let mut s = Complex64::new(0.0, 0.0);
                for p in 0..m {
                    let mut row = Complex64::new(0.0, 0.0);
                    for q in 0..m {
                        row += cross[(f, p, q)] * a.values[(f, q)];
                    }
                    s += a.values[(f, p)].conj() * row;
                }
                power += s.re;
            }
            (doa, power)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(scored)
}

/// Pick the best-scoring pair of grid points at least `min_sep_deg`
/// apart; the usual initializer for `doa_fit`.
pub fn srp_top_pair(ranked: &[(Doa, f64)], min_sep_deg: f64) -> Result<DoaPair> {
    let first = ranked.first().ok_or(Error::NoSignal)?.0;
    let second = ranked
        .iter()
        .find(|(d, _)| first.angle_to(d).to_degrees() >= min_sep_deg)
        .ok_or(Error::NoSignal)?
        .0;
    Ok(DoaPair::new(first, second))
}

/// Beamform the mixture toward both directions of a pair: output i is
/// steered to doa_i with a null toward the other.
pub fn separate_tf(
    mixture: &Spectrogram,
    doas: &DoaPair,
    geom: &ArrayGeometry,
    noise: &NoiseCovariance,
) -> Result<(Spectrogram, Spectrogram)> {
    let a1 = steering_vector(geom, &doas.doa_1, &mixture.spec);
    let a2 = steering_vector(geom, &doas.doa_2, &mixture.spec);
    let w1 = lcmv_weights(&a1, &a2, noise, DEFAULT_LOADING)?;
    let w2 = lcmv_weights(&a2, &a1, noise, DEFAULT_LOADING)?;
    Ok((
        apply_beamformer(&w1, mixture)?,
        apply_beamformer(&w2, mixture)?,
    ))
}

/// Knobs of the loss-driven fit.
#[derive(Debug, Clone, Copy)]
pub struct DoaFitOptions {
    pub max_evaluations: usize,
    /// Simplex tolerance, degrees.
    pub tolerance_deg: f64,
    /// Initial simplex step, degrees.
    pub initial_step_deg: f64,
    /// Search bound on |elevation|, degrees. A planar array cannot
    /// resolve the elevation sign and loses azimuth aperture at steep
    /// tilts, so a tight bound acts as an in-plane prior.
    pub elevation_limit_deg: f64,
}

impl Default for DoaFitOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 400,
            tolerance_deg: 0.05,
            initial_step_deg: 3.0,
            elevation_limit_deg: 90.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoaFit {
    pub doas: DoaPair,
    pub loss: f64,
    pub evaluations: usize,
    pub permutation: Permutation,
}

fn angles_to_pair(x: &[f64], el_limit: f64) -> DoaPair {
    let clamp_el = |e: f64| e.clamp(-el_limit, el_limit);
    DoaPair {
        doa_1: Doa::from_degrees(x[0], clamp_el(x[1])).unwrap(),
        doa_2: Doa::from_degrees(x[2], clamp_el(x[3])).unwrap(),
    }
}

/// Fit both source directions by minimizing the uPIT spectral loss of
/// the beamformed mixture against the reference-channel target spectra.
pub fn doa_fit(
    mixture: &Spectrogram,
    targets: [&Spectrogram; 2],
    loss: &LossSpec,
    init: &DoaPair,
    geom: &ArrayGeometry,
    options: &DoaFitOptions,
) -> Result<DoaFit> {
    loss.validate()?;
    let noise = diffuse_coherence(geom, &mixture.spec);
    let el_limit = options.elevation_limit_deg.clamp(0.0, 90.0);
    let objective = |x: &[f64]| -> f64 {
        let pair = angles_to_pair(x, el_limit);
        if pair.doa_1.angle_to(&pair.doa_2).to_degrees() < 1.0 {
            return f64::INFINITY;
        }
        match separate_tf(mixture, &pair, geom, &noise) {
            Ok((e1, e2)) => match upit_loss([&e1, &e2], targets, loss) {
                Ok((l, _)) => l,
                Err(_) => f64::INFINITY,
            },
            Err(_) => f64::INFINITY,
        }
    };

    let init = init.canonical();
    let x0 = [
        init.doa_1.azimuth_deg(),
        init.doa_1.elevation_deg(),
        init.doa_2.azimuth_deg(),
        init.doa_2.elevation_deg(),
    ];
    let nm = NelderMead {
        max_evaluations: options.max_evaluations,
        x_tolerance: options.tolerance_deg,
        initial_step: options.initial_step_deg,
    };
    let r = nm.minimize(&x0, objective);
    let pair = angles_to_pair(&r.x, el_limit).canonical();
    if !r.converged {
        return Err(Error::NonConvergence {
            evals: r.evaluations,
            loss: r.value,
            best_deg: (
                pair.doa_1.azimuth_deg(),
                pair.doa_1.elevation_deg(),
                pair.doa_2.azimuth_deg(),
                pair.doa_2.elevation_deg(),
            ),
        });
    }
    // report the winning assignment at the solution
    let (e1, e2) = separate_tf(mixture, &pair, geom, &noise)?;
    let (final_loss, permutation) = upit_loss([&e1, &e2], targets, loss)?;
    Ok(DoaFit {
        doas: pair,
        loss: final_loss.min(r.value),
        evaluations: r.evaluations,
        permutation,
    })
}

/// End-to-end separation of a multichannel time-domain mixture
/// (channels x samples) into two single-channel signals of the same
/// length.
pub fn separate(
    mixture: ndarray::ArrayView2<f64>,
    doas: &DoaPair,
    geom: &ArrayGeometry,
    spec: &StftSpec,
    postmask: Option<&PostmaskParams>,
) -> Result<[Vec<f64>; 2]> {
    if mixture.nrows() != geom.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} channels vs geometry {}",
            mixture.nrows(),
            geom.num_channels()
        )));
    }
    let spect = stft(mixture, spec)?;
    let noise = diffuse_coherence(geom, spec);
    let (mut b1, mut b2) = separate_tf(&spect, doas, geom, &noise)?;
    if let Some(params) = postmask {
        let masks = ratio_mask([&b1, &b2], params)?;
        b1 = apply_mask(&masks.masks[0], &b1)?;
        b2 = apply_mask(&masks.masks[1], &b2)?;
    }
    let y1 = istft(&b1)?;
    let y2 = istft(&b2)?;
    Ok([y1.row(0).to_vec(), y2.row(0).to_vec()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sir;
    use ndarray::Array3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_source(frames: usize, bins: usize, seed: u64, spec: StftSpec) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Spectrogram {
            data: Array3::from_shape_fn((frames, bins, 1), |(_, f, _)| {
                if f == 0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                }
            }),
            spec,
            signal_len: (frames - 1) * spec.hop + spec.frame_len,
        }
    }

    /// Mixture of far-field plane waves built directly in the STFT domain.
    fn plane_wave_mixture(
        sources: &[(Doa, &Spectrogram)],
        geom: &ArrayGeometry,
    ) -> Spectrogram {
        let spec = sources[0].1.spec;
        let frames = sources[0].1.num_frames();
        let bins = sources[0].1.num_bins();
        let m = geom.num_channels();
        let mut data = Array3::<Complex64>::zeros((frames, bins, m));
        for (doa, src) in sources {
            let a = steering_vector(geom, doa, &spec);
            for k in 0..frames {
                for f in 0..bins {
                    for c in 0..m {
                        data[(k, f, c)] += a.values[(f, c)] * src.data[(k, f, 0)];
                    }
                }
            }
        }
        Spectrogram {
            data,
            spec,
            signal_len: sources[0].1.signal_len,
        }
    }

    #[test]
    fn srp_finds_single_plane_wave() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let src = random_source(20, spec.num_bins(), 1, spec);
        let doa = Doa::from_degrees(30.0, 0.0).unwrap();
        let mix = plane_wave_mixture(&[(doa, &src)], &geom);
        let ranked = srp_phat(&mix, &geom, &DoaGrid::default()).unwrap();
        let top = ranked[0].0;
        assert!(top.angle_to(&doa).to_degrees() <= 5.0 + 1e-9, "top {top:?}");
    }

    #[test]
    fn srp_finds_two_plane_waves() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let s1 = random_source(20, spec.num_bins(), 2, spec);
        let s2 = random_source(20, spec.num_bins(), 3, spec);
        let d1 = Doa::from_degrees(-60.0, 0.0).unwrap();
        let d2 = Doa::from_degrees(60.0, 0.0).unwrap();
        let mix = plane_wave_mixture(&[(d1, &s1), (d2, &s2)], &geom);
        let ranked = srp_phat(&mix, &geom, &DoaGrid::default()).unwrap();
        let pair = srp_top_pair(&ranked, 20.0).unwrap();
        assert!(pair.doa_1.angle_to(&d1).to_degrees() <= 5.0 + 1e-9);
        assert!(pair.doa_2.angle_to(&d2).to_degrees() <= 5.0 + 1e-9);
    }

    #[test]
    fn srp_zero_signal_errors() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let z = Spectrogram {
            data: Array3::zeros((4, spec.num_bins(), 7)),
            spec,
            signal_len: 4096,
        };
        assert!(matches!(
            srp_phat(&z, &geom, &DoaGrid::default()),
            Err(Error::NoSignal)
        ));
    }

    #[test]
    fn srp_scale_invariant() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let src = random_source(10, spec.num_bins(), 4, spec);
        let doa = Doa::from_degrees(-100.0, 0.0).unwrap();
        let mix = plane_wave_mixture(&[(doa, &src)], &geom);
        let mut scaled = mix.clone();
        scaled.data.mapv_inplace(|v| v * 37.5);
        let a = srp_phat(&mix, &geom, &DoaGrid::default()).unwrap();
        let b = srp_phat(&scaled, &geom, &DoaGrid::default()).unwrap();
        for ((da, sa), (db, sb)) in a.iter().zip(b.iter()) {
            assert_eq!(da, db);
            assert!((sa - sb).abs() < 1e-6 * sa.abs().max(1.0));
        }
    }

    #[test]
    fn fit_from_truth_stays_put() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let s1 = random_source(15, spec.num_bins(), 5, spec);
        let s2 = random_source(15, spec.num_bins(), 6, spec);
        let d1 = Doa::from_degrees(-45.0, 0.0).unwrap();
        let d2 = Doa::from_degrees(45.0, 0.0).unwrap();
        let mix = plane_wave_mixture(&[(d1, &s1), (d2, &s2)], &geom);
        let truth = DoaPair::new(d1, d2);
        let loss = LossSpec::cmse(1.0);
        let fit = doa_fit(&mix, [&s1, &s2], &loss, &truth, &geom, &DoaFitOptions::default())
            .unwrap();
        assert!(fit.doas.doa_1.angle_to(&d1).to_degrees() < 0.1);
        assert!(fit.doas.doa_2.angle_to(&d2).to_degrees() < 0.1);
        // never worse than the init loss
        let noise = diffuse_coherence(&geom, &spec);
        let (e1, e2) = separate_tf(&mix, &truth, &geom, &noise).unwrap();
        let (l0, _) = upit_loss([&e1, &e2], [&s1, &s2], &loss).unwrap();
        assert!(fit.loss <= l0 + 1e-9);
    }

    #[test]
    fn fit_recovers_azimuths_from_srp_init() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let s1 = random_source(15, spec.num_bins(), 7, spec);
        let s2 = random_source(15, spec.num_bins(), 8, spec);
        let d1 = Doa::from_degrees(-45.0, 0.0).unwrap();
        let d2 = Doa::from_degrees(45.0, 0.0).unwrap();
        let mix = plane_wave_mixture(&[(d1, &s1), (d2, &s2)], &geom);
        let ranked = srp_phat(&mix, &geom, &DoaGrid::default()).unwrap();
        let init = srp_top_pair(&ranked, 20.0).unwrap();
        let loss = LossSpec::cmse(1.0);
        let fit =
            doa_fit(&mix, [&s1, &s2], &loss, &init, &geom, &DoaFitOptions::default()).unwrap();
        assert!((fit.doas.doa_1.azimuth_deg() + 45.0).abs() < 2.0);
        assert!((fit.doas.doa_2.azimuth_deg() - 45.0).abs() < 2.0);
    }

    #[test]
    fn fit_label_symmetry() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let s1 = random_source(10, spec.num_bins(), 9, spec);
        let s2 = random_source(10, spec.num_bins(), 10, spec);
        let d1 = Doa::from_degrees(-30.0, 0.0).unwrap();
        let d2 = Doa::from_degrees(80.0, 0.0).unwrap();
        let mix = plane_wave_mixture(&[(d1, &s1), (d2, &s2)], &geom);
        let loss = LossSpec::cmse(1.0);
        let a = doa_fit(
            &mix,
            [&s1, &s2],
            &loss,
            &DoaPair::new(d1, d2),
            &geom,
            &DoaFitOptions::default(),
        )
        .unwrap();
        let b = doa_fit(
            &mix,
            [&s1, &s2],
            &loss,
            &DoaPair::new(d2, d1),
            &geom,
            &DoaFitOptions::default(),
        )
        .unwrap();
        // swapped init reaches the same canonical pair and loss
        assert!(a.doas.doa_1.angle_to(&b.doas.doa_1).to_degrees() < 0.2);
        assert!(a.doas.doa_2.angle_to(&b.doas.doa_2).to_degrees() < 0.2);
        assert!((a.loss - b.loss).abs() < 0.05 * a.loss.abs().max(1.0));
    }

    #[test]
    fn separate_oracle_plane_waves() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let s1 = random_source(40, spec.num_bins(), 11, spec);
        let s2 = random_source(40, spec.num_bins(), 12, spec);
        let d1 = Doa::from_degrees(-50.0, 0.0).unwrap();
        let d2 = Doa::from_degrees(40.0, 0.0).unwrap();
        let mix_tf = plane_wave_mixture(&[(d1, &s1), (d2, &s2)], &geom);
        let mixture = istft(&mix_tf).unwrap();
        let refs = [
            istft(&s1).unwrap().row(0).to_vec(),
            istft(&s2).unwrap().row(0).to_vec(),
        ];
        let outs = separate(
            mixture.view(),
            &DoaPair::new(d1, d2),
            &geom,
            &spec,
            None,
        )
        .unwrap();
        assert_eq!(outs[0].len(), mixture.ncols());
        // trim edges where WOLA reconstruction is partial
        let lo = spec.frame_len;
        let hi = refs[0].len() - 2 * spec.frame_len;
        let mix_ref: Vec<f64> = mixture.row(0).to_vec();
        for i in 0..2 {
            let est = &outs[i][lo..hi];
            let t = &refs[i][lo..hi];
            let o = &refs[1 - i][lo..hi];
            let sir_out = sir(est, t, o).unwrap();
            let sir_in = sir(&mix_ref[lo..hi], t, o).unwrap();
            assert!(
                sir_out - sir_in >= 30.0,
                "source {i}: {sir_out} vs {sir_in}"
            );
        }
    }

    #[test]
    fn separate_identical_doas_errors() {
        let geom = ArrayGeometry::default_circular();
        let spec = StftSpec::default_16k();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mixture =
            ndarray::Array2::from_shape_fn((7, 8192), |_| rng.gen_range(-1.0..1.0));
        let d = Doa::from_degrees(10.0, 0.0).unwrap();
        let pair = DoaPair { doa_1: d, doa_2: d };
        assert!(matches!(
            separate(mixture.view(), &pair, &geom, &spec, None),
            Err(Error::DegenerateSteering)
        ));
    }
}
