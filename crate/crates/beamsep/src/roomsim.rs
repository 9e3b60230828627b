//! Image-method room simulation and mixture generation.
//!
//! RIRs are sums over mirrored image sources with 1/(4*pi*d) attenuation
//! and fractional delays placed by an 81-tap Hann-windowed sinc. Scene
//! mixing follows: convolve dry speech with full RIRs, set the drawn
//! source energy ratio, add diffuse noise at the drawn SNR against the
//! reverberant mixture at the reference mic, then scale mixture and
//! targets jointly to the drawn level. Targets are the dry signals
//! convolved with the 200 ms windowed reference-mic RIRs.

use ndarray::Array2;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::Normal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Doa};

const SINC_HALF_TAPS: isize = 40; // 81-tap windowed sinc

/// Shoebox room with a uniform wall reflection coefficient.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: [f64; 3],
    pub reflection_coefficient: f64,
    pub max_reflection_order: usize,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
}

fn default_c() -> f64 {
    crate::geometry::SPEED_OF_SOUND
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidParameter("room dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.reflection_coefficient) {
            return Err(Error::InvalidParameter(
                "reflection coefficient outside [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] > 0.0 && p[i] < self.dimensions[i])
    }
}

/// Sampled impulse response for one (source, mic) pair.
#[derive(Debug, Clone)]
pub struct Rir {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Rir {
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

fn windowed_sinc_place(h: &mut [f64], delay_samples: f64, amplitude: f64) {
    let center = delay_samples.round() as isize;
    for t in -SINC_HALF_TAPS..=SINC_HALF_TAPS {
        let n = center + t;
        if n < 0 || n as usize >= h.len() {
            continue;
        }
        let x = n as f64 - delay_samples;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        let w = 0.5 + 0.5 * (PI * x / (SINC_HALF_TAPS as f64 + 1.0)).cos();
        h[n as usize] += amplitude * sinc * w;
    }
}

/// Image-method RIRs from one source position to every microphone of a
/// (posed, absolute-coordinate) array.
pub fn simulate_rir(
    room: &RoomSpec,
    src: [f64; 3],
    mics: &ArrayGeometry,
    sample_rate: f64,
) -> Result<Vec<Rir>> {
    room.validate()?;
    if !room.contains(src) {
        return Err(Error::OutsideRoom(src));
    }
    for m in 0..mics.num_channels() {
        if !room.contains(mics.mic(m)) {
            return Err(Error::OutsideRoom(mics.mic(m)));
        }
    }

    let order = room.max_reflection_order as isize;
    let beta = room.reflection_coefficient;
    let c = room.speed_of_sound;

    // enumerate image sources: position component
    // (1 - 2q)*s + 2n*L, with |n - q| + |n| reflections on that axis
    let mut images: Vec<([f64; 3], u32)> = Vec::new();
    let nmax = (order + 1) / 2 + 1;
    for qx in 0..2isize {
        for qy in 0..2isize {
            for qz in 0..2isize {
                for nx in -nmax..=nmax {
                    let rx = (nx - qx).unsigned_abs() + nx.unsigned_abs();
                    if rx as isize > order {
                        continue;
                    }
                    for ny in -nmax..=nmax {
                        let ry = (ny - qy).unsigned_abs() + ny.unsigned_abs();
                        if (rx + ry) as isize > order {
                            continue;
                        }
                        for nz in -nmax..=nmax {
                            let rz = (nz - qz).unsigned_abs() + nz.unsigned_abs();
                            let refl = rx + ry + rz;
                            if refl as isize > order {
                                continue;
                            }
                            let pos = [
                                (1 - 2 * qx) as f64 * src[0] + 2.0 * nx as f64 * room.dimensions[0],
                                (1 - 2 * qy) as f64 * src[1] + 2.0 * ny as f64 * room.dimensions[1],
                                (1 - 2 * qz) as f64 * src[2] + 2.0 * nz as f64 * room.dimensions[2],
                            ];
                            images.push((pos, refl as u32));
                        }
                    }
                }
            }
        }
    }

    let mut max_dist = 0.0f64;
    for m in 0..mics.num_channels() {
        let p = mics.mic(m);
        for (img, _) in &images {
            let d = dist(*img, p);
            max_dist = max_dist.max(d);
        }
    }
    let len = (max_dist / c * sample_rate).ceil() as usize + 2 * SINC_HALF_TAPS as usize + 2;

    let mut out = Vec::with_capacity(mics.num_channels());
    for m in 0..mics.num_channels() {
        let p = mics.mic(m);
        let mut h = vec![0.0f64; len];
        for (img, refl) in &images {
            let d = dist(*img, p);
            if d < 1e-6 {
                return Err(Error::SingularDistance);
            }
            let amp = beta.powi(*refl as i32) / (4.0 * PI * d);
            windowed_sinc_place(&mut h, d / c * sample_rate, amp);
        }
        out.push(Rir {
            samples: h,
            sample_rate,
        });
    }
    Ok(out)
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Zero everything later than `max_ms` after the direct-path arrival,
/// with a 5 ms raised-cosine fade ending at the cutoff.
pub fn window_rir(rir: &Rir, max_ms: f64) -> Rir {
    let peak = rir.samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if peak == 0.0 {
        return rir.clone();
    }
    let onset = rir
        .samples
        .iter()
        .position(|&v| v.abs() >= 1e-3 * peak)
        .unwrap_or(0);
    let cutoff = onset + (max_ms * 1e-3 * rir.sample_rate).round() as usize;
    let fade = (5e-3 * rir.sample_rate).round() as usize;
    let mut samples = rir.samples.clone();
    samples.truncate(cutoff.min(samples.len()));
    let fade_start = cutoff.saturating_sub(fade);
    for i in fade_start..samples.len() {
        let x = (i - fade_start) as f64 / fade as f64;
        samples[i] *= 0.5 * (1.0 + (PI * x).cos());
    }
    Rir {
        samples,
        sample_rate: rir.sample_rate,
    }
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Linear FFT convolution truncated to the length of `x`.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let full = x.len() + h.len() - 1;
    let n = next_pow2(full);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = x
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut b: Vec<Complex64> = h
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut a);
    fft.process(&mut b);
    for i in 0..n {
        a[i] *= b[i];
    }
    ifft.process(&mut a);
    let scale = 1.0 / n as f64;
    a.iter().take(x.len()).map(|v| v.re * scale).collect()
}

/// Spherically isotropic noise: `num_waves` independent white plane
/// waves from a seeded uniform spherical covering, delayed per the
/// far-field model and normalized to unit power per channel.
pub fn diffuse_noise(
    geom: &ArrayGeometry,
    duration_s: f64,
    sample_rate: f64,
    seed: u64,
    num_waves: usize,
) -> Result<Array2<f64>> {
    if duration_s <= 0.0 {
        return Err(Error::InvalidParameter("duration must be positive".into()));
    }
    let num_waves = num_waves.max(64);
    let n = (duration_s * sample_rate).round() as usize;
    let nfft = next_pow2(n + 2 * SINC_HALF_TAPS as usize);
    let channels = geom.num_channels();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Fibonacci covering of the sphere under a random rotation: uniform
    // coverage with far lower quadrature error than independent draws
    let rot = random_rotation(&mut rng);
    let golden = PI * (3.0 - 5.0f64.sqrt());
    let dirs: Vec<[f64; 3]> = (0..num_waves)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / num_waves as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            apply_rotation(&rot, [r * phi.cos(), r * phi.sin(), z])
        })
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nfft);
    let ifft = planner.plan_fft_inverse(nfft);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut acc = vec![vec![Complex64::new(0.0, 0.0); nfft]; channels];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for u in &dirs {
        for v in buf.iter_mut() {
            *v = Complex64::new(normal.sample(&mut rng), 0.0);
        }
        fft.process(&mut buf);
        for m in 0..channels {
            let p = geom.mic(m);
            // delay consistent with the steering model: spectrum times
            // exp(+j*omega*<p, u>/c)
            let tau = (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / geom.speed_of_sound;
            for f in 0..=nfft / 2 {
                let omega = 2.0 * PI * f as f64 * sample_rate / nfft as f64;
                let ph = Complex64::from_polar(1.0, omega * tau);
                let val = buf[f] * ph;
                acc[m][f] += val;
                if f != 0 && f != nfft / 2 {
                    acc[m][nfft - f] += val.conj();
                }
            }
        }
    }

    let mut out = Array2::<f64>::zeros((channels, n));
    let scale = 1.0 / nfft as f64;
    for m in 0..channels {
        ifft.process(&mut acc[m]);
        let mut e = 0.0;
        for i in 0..n {
            let v = acc[m][i].re * scale;
            out[(m, i)] = v;
            e += v * v;
        }
        let g = (n as f64 / e).sqrt();
        for i in 0..n {
            out[(m, i)] *= g;
        }
    }
    Ok(out)
}

fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    // rotation about a uniform random axis by a uniform random angle
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    let axis = [r * phi.cos(), r * phi.sin(), z];
    let angle: f64 = rng.gen_range(0.0..2.0 * PI);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, w] = axis;
    [
        [t * x * x + c, t * x * y - s * w, t * x * w + s * y],
        [t * x * y + s * w, t * y * y + c, t * y * w - s * x],
        [t * x * w - s * y, t * y * w + s * x, t * w * w + c],
    ]
}

fn apply_rotation(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// A scalar scene parameter: fixed value or drawn from the pipeline's
/// normal distribution. JSON form: a number, or the string "draw".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DrawSpec {
    Fixed(f64),
    Draw,
}

impl Serialize for DrawSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DrawSpec::Fixed(v) => s.serialize_f64(*v),
            DrawSpec::Draw => s.serialize_str("draw"),
        }
    }
}

impl<'de> Deserialize<'de> for DrawSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => Ok(DrawSpec::Fixed(
                n.as_f64().ok_or_else(|| D::Error::custom("bad number"))?,
            )),
            serde_json::Value::String(s) if s == "draw" => Ok(DrawSpec::Draw),
            other => Err(D::Error::custom(format!(
                "expected number or \"draw\", got {other}"
            ))),
        }
    }
}

/// SNR parameter: fixed dB, drawn, or no noise at all. JSON form: a
/// number, "draw", or "inf".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrSpec {
    Fixed(f64),
    Draw,
    Infinite,
}

impl Serialize for SnrSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SnrSpec::Fixed(v) => s.serialize_f64(*v),
            SnrSpec::Draw => s.serialize_str("draw"),
            SnrSpec::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for SnrSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => Ok(SnrSpec::Fixed(
                n.as_f64().ok_or_else(|| D::Error::custom("bad number"))?,
            )),
            serde_json::Value::String(s) if s == "draw" => Ok(SnrSpec::Draw),
            serde_json::Value::String(s) if s == "inf" => Ok(SnrSpec::Infinite),
            other => Err(D::Error::custom(format!(
                "expected number, \"draw\" or \"inf\", got {other}"
            ))),
        }
    }
}

/// Array placement inside the room.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ArrayPose {
    pub center: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

/// Declarative description of one simulated mixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: RoomSpec,
    pub array: ArrayPose,
    pub sources: [[f64; 3]; 2],
    pub mixing_ratio_db: DrawSpec,
    pub snr_db: SnrSpec,
    pub level_db: DrawSpec,
    pub seed: u64,
}

/// Realized randomization of one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta {
    pub mixing_ratio_db: f64,
    pub snr_db: Option<f64>,
    pub level_db: f64,
    /// Direct-path DOAs in the array frame, degrees, per source.
    pub true_doas_deg: [[f64; 2]; 2],
    pub seed: u64,
    pub clipped: bool,
}

/// One generated mixture with its reference-channel targets.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    /// channels x samples
    pub mixture: Array2<f64>,
    pub targets: [Vec<f64>; 2],
    pub meta: SceneMeta,
}

/// Target-window length enforced on the reference-mic RIRs, ms.
pub const TARGET_WINDOW_MS: f64 = 200.0;

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// True direct-path DOA from the array pose to a source, in the array
/// frame.
pub fn true_doa(array: &ArrayPose, source: [f64; 3]) -> Doa {
    let rel = [
        source[0] - array.center[0],
        source[1] - array.center[1],
        source[2] - array.center[2],
    ];
    let (s, c) = (-array.yaw).sin_cos();
    let local = [c * rel[0] - s * rel[1], s * rel[0] + c * rel[1], rel[2]];
    let r = (local[0] * local[0] + local[1] * local[1] + local[2] * local[2]).sqrt();
    Doa::new(local[1].atan2(local[0]), (local[2] / r).asin()).unwrap()
}

/// Generate one scene from two dry speech signals.
pub fn make_scene(
    scene: &SceneSpec,
    geom: &ArrayGeometry,
    dry: [&[f64]; 2],
    sample_rate: f64,
) -> Result<SceneBundle> {
    scene.room.validate()?;
    if dist(scene.sources[0], scene.sources[1]) < 1e-9 {
        return Err(Error::InvalidParameter("sources must be distinct".into()));
    }
    let len = dry[0].len().min(dry[1].len());
    if len == 0 {
        return Err(Error::SignalTooShort { len: 0, min: 1 });
    }
    let posed = geom.posed(scene.array.center, scene.array.yaw);
    let channels = posed.num_channels();
    let reference = posed.reference_index;

    let mut rng = ChaCha20Rng::seed_from_u64(scene.seed);
    let ratio_db = match scene.mixing_ratio_db {
        DrawSpec::Fixed(v) => v,
        DrawSpec::Draw => Normal::new(0.0, 1.0).unwrap().sample(&mut rng),
    };
    let snr_db = match scene.snr_db {
        SnrSpec::Fixed(v) => Some(v),
        SnrSpec::Draw => {
            Some(Normal::new(8.0, 10.0).unwrap().sample(&mut rng))
        }
        SnrSpec::Infinite => None,
    };
    let noise_seed: u64 = rng.gen();

    // reverberant images of both sources at every mic
    let mut reverberant: Vec<Array2<f64>> = Vec::with_capacity(2);
    let mut ref_rirs: Vec<Rir> = Vec::with_capacity(2);
    for i in 0..2 {
        let rirs = simulate_rir(&scene.room, scene.sources[i], &posed, sample_rate)?;
        let mut rev = Array2::<f64>::zeros((channels, len));
        for (m, rir) in rirs.iter().enumerate() {
            let y = convolve_truncated(&dry[i][..len], &rir.samples);
            for (j, v) in y.iter().enumerate() {
                rev[(m, j)] = *v;
            }
        }
        ref_rirs.push(rirs[reference].clone());
        reverberant.push(rev);
    }

    // source 2 gain fixing the reference-mic energy ratio E2/E1
    let e1: f64 = reverberant[0].row(reference).iter().map(|v| v * v).sum();
    let e2: f64 = reverberant[1].row(reference).iter().map(|v| v * v).sum();
    if e1 == 0.0 || e2 == 0.0 {
        return Err(Error::NoSignal);
    }
    let g2 = (10f64.powf(ratio_db / 10.0) * e1 / e2).sqrt();

    let mut mixture = &reverberant[0] + &(g2 * &reverberant[1]);

    if let Some(snr) = snr_db {
        let noise = diffuse_noise(&posed, len as f64 / sample_rate, sample_rate, noise_seed, 128)?;
        let mix_e: f64 = mixture.row(reference).iter().map(|v| v * v).sum();
        let noise_e: f64 = noise.row(reference).iter().map(|v| v * v).sum();
        let gn = (mix_e / noise_e / 10f64.powf(snr / 10.0)).sqrt();
        mixture = &mixture + &(gn * &noise);
    }

    // targets: dry convolved with windowed reference-mic RIRs
    let mut targets = [
        convolve_truncated(&dry[0][..len], &window_rir(&ref_rirs[0], TARGET_WINDOW_MS).samples),
        convolve_truncated(&dry[1][..len], &window_rir(&ref_rirs[1], TARGET_WINDOW_MS).samples),
    ];
    targets[1].iter_mut().for_each(|v| *v *= g2);

    // joint level scaling, with clipping re-draws
    let ref_rms = rms(mixture.row(reference).as_slice().unwrap());
    let mut level_db = match scene.level_db {
        DrawSpec::Fixed(v) => v,
        DrawSpec::Draw => Normal::new(-28.0, 10.0).unwrap().sample(&mut rng),
    };
    let peak = mixture.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut clipped = false;
    if matches!(scene.level_db, DrawSpec::Draw) {
        for _ in 0..5 {
            if peak * 10f64.powf(level_db / 20.0) / ref_rms <= 1.0 {
                break;
            }
            level_db = Normal::new(-28.0, 10.0).unwrap().sample(&mut rng);
        }
    }
    let scale = 10f64.powf(level_db / 20.0) / ref_rms;
    mixture.mapv_inplace(|v| v * scale);
    for t in targets.iter_mut() {
        t.iter_mut().for_each(|v| *v *= scale);
    }
    if mixture.iter().any(|v| v.abs() > 1.0) {
        eprintln!(
            "warning: scene seed {} clips after level scaling; clamping",
            scene.seed
        );
        mixture.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        clipped = true;
    }

    let meta = SceneMeta {
        mixing_ratio_db: ratio_db,
        snr_db,
        level_db,
        true_doas_deg: [
            {
                let d = true_doa(&scene.array, scene.sources[0]);
                [d.azimuth_deg(), d.elevation_deg()]
            },
            {
                let d = true_doa(&scene.array, scene.sources[1]);
                [d.azimuth_deg(), d.elevation_deg()]
            },
        ],
        seed: scene.seed,
        clipped,
    };
    Ok(SceneBundle {
        mixture,
        targets,
        meta,
    })
}
