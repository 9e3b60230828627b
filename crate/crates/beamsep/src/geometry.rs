//! Microphone geometry, DOA conventions and the far-field steering model.
//!
//! Steering entry (f, m) is `exp(j * kappa(f) * <r_m, u(doa)>)` with
//! `kappa(f) = 2*pi*f*fs / (c*N_fft)` and `u` the unit direction of the
//! source. Phases are absolute with respect to the coordinate origin, so
//! a reference microphone at the origin has an all-ones steering column.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::wola::StftSpec;

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Direction of arrival. Azimuth is measured in the array plane from +x,
/// wrapped to [-pi, pi); elevation from the plane, in [-pi/2, pi/2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doa {
    pub azimuth: f64,
    pub elevation: f64,
}

/// Wrap an angle to [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x >= PI {
        x -= 2.0 * PI;
    }
    x
}

impl Doa {
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !azimuth.is_finite() || !elevation.is_finite() {
            return Err(Error::InvalidParameter("non-finite DOA angle".into()));
        }
        if !(-PI / 2.0..=PI / 2.0).contains(&elevation) {
            return Err(Error::InvalidParameter(format!(
                "elevation {elevation} outside [-pi/2, pi/2]"
            )));
        }
        Ok(Self {
            azimuth: wrap_angle(azimuth),
            elevation,
        })
    }

    pub fn from_degrees(az_deg: f64, el_deg: f64) -> Result<Self> {
        Self::new(az_deg.to_radians(), el_deg.to_radians())
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth.to_degrees()
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation.to_degrees()
    }

    /// Unit direction vector: x = cos(el)cos(az), y = cos(el)sin(az),
    /// z = sin(el).
    pub fn unit_direction(&self) -> [f64; 3] {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [ce * ca, ce * sa, se]
    }

    /// Great-circle angle to another direction, radians.
    pub fn angle_to(&self, other: &Doa) -> f64 {
        let a = self.unit_direction();
        let b = other.unit_direction();
        let dot = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
        dot.acos()
    }
}

#[derive(Debug, Deserialize)]
struct GeometryFile {
    coords_m: Vec<[f64; 3]>,
    #[serde(default)]
    reference: usize,
    #[serde(default = "default_c")]
    speed_of_sound: f64,
}

fn default_c() -> f64 {
    SPEED_OF_SOUND
}

/// Cartesian microphone coordinates with a reference channel.
#[derive(Debug, Clone)]
pub struct ArrayGeometry {
    coords: Array2<f64>,
    pub reference_index: usize,
    pub speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(coords: Array2<f64>, reference_index: usize, speed_of_sound: f64) -> Result<Self> {
        if coords.nrows() < 2 || coords.ncols() != 3 {
            return Err(Error::InvalidParameter(format!(
                "geometry must be M x 3 with M >= 2, got {:?}",
                coords.shape()
            )));
        }
        if reference_index >= coords.nrows() {
            return Err(Error::InvalidParameter(format!(
                "reference index {reference_index} out of range"
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mic coordinate".into()));
        }
        if speed_of_sound <= 0.0 {
            return Err(Error::InvalidParameter("speed of sound must be positive".into()));
        }
        Ok(Self {
            coords,
            reference_index,
            speed_of_sound,
        })
    }

    /// Default array: 6 mics on a 4 cm circle in the xy-plane (mic 1 at +x)
    /// plus one center mic, which is the reference.
    pub fn default_circular() -> Self {
        let radius = 0.04;
        let mut coords = Array2::<f64>::zeros((7, 3));
        for i in 0..6 {
            let angle = i as f64 * PI / 3.0;
            coords[(i + 1, 0)] = radius * angle.cos();
            coords[(i + 1, 1)] = radius * angle.sin();
        }
        Self {
            coords,
            reference_index: 0,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: GeometryFile = serde_json::from_str(s)?;
        let m = raw.coords_m.len();
        let coords = Array2::from_shape_fn((m, 3), |(i, j)| raw.coords_m[i][j]);
        Self::new(coords, raw.reference, raw.speed_of_sound)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn num_channels(&self) -> usize {
        self.coords.nrows()
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn mic(&self, m: usize) -> [f64; 3] {
        [self.coords[(m, 0)], self.coords[(m, 1)], self.coords[(m, 2)]]
    }

    /// Distance between microphones p and q, meters.
    pub fn mic_distance(&self, p: usize, q: usize) -> f64 {
        let a = self.mic(p);
        let b = self.mic(q);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Geometry rigidly moved: rotated around z by `yaw`, then translated.
    pub fn posed(&self, center: [f64; 3], yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let coords = Array2::from_shape_fn((self.num_channels(), 3), |(m, j)| {
            let p = self.mic(m);
            let r = [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]];
            r[j] + center[j]
        });
        Self {
            coords,
            reference_index: self.reference_index,
            speed_of_sound: self.speed_of_sound,
        }
    }
}

/// Physical frequency of a bin, Hz.
pub fn bin_frequency(bin: usize, spec: &StftSpec) -> f64 {
    bin as f64 * spec.sample_rate / spec.fft_size as f64
}

/// Wavenumber of a frequency bin, rad/m.
pub fn wavenumber(bin: usize, spec: &StftSpec, speed_of_sound: f64) -> f64 {
    2.0 * PI * bin_frequency(bin, spec) / speed_of_sound
}

/// Per-source steering phases, bins x channels, unit modulus.
#[derive(Debug, Clone)]
pub struct SteeringMatrix {
    pub values: Array2<Complex64>,
}

impl SteeringMatrix {
    pub fn num_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Far-field steering matrix for one source direction; frame-independent.
pub fn steering_vector(geom: &ArrayGeometry, doa: &Doa, spec: &StftSpec) -> SteeringMatrix {
    let u = doa.unit_direction();
    let bins = spec.num_bins();
    let m = geom.num_channels();
    let mut values = Array2::<Complex64>::zeros((bins, m));
    for ch in 0..m {
        let p = geom.mic(ch);
        let proj = p[0] * u[0] + p[1] * u[1] + p[2] * u[2];
        for f in 0..bins {
            let kappa = wavenumber(f, spec, geom.speed_of_sound);
            values[(f, ch)] = Complex64::from_polar(1.0, kappa * proj);
        }
    }
    SteeringMatrix { values }
}
