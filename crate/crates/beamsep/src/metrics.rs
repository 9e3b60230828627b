//! Scale-invariant SDR and SIR evaluation against the unprocessed
//! reference channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Permutation;

/// Cap applied to all dB values to keep reports finite.
pub const DB_CAP: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

fn to_db(ratio_num: f64, ratio_den: f64) -> f64 {
    if ratio_den <= 0.0 {
        return DB_CAP;
    }
    if ratio_num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (ratio_num / ratio_den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// Scale-invariant SDR in dB: project the estimate onto the reference
/// and compare projection energy to residual energy. Capped at +-60 dB.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "length {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    let ref_e = energy(reference);
    if ref_e == 0.0 {
        return Err(Error::DegenerateReference);
    }
    let scale = dot(est, reference) / ref_e;
    let target_e = scale * scale * ref_e;
    let noise_e: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - scale * r).powi(2))
        .sum();
    Ok(to_db(target_e, noise_e))
}

/// Signal-to-interference ratio in dB: least-squares decompose the
/// estimate onto the target and interferer references.
pub fn sir(est: &[f64], target: &[f64], interferer: &[f64]) -> Result<f64> {
    if est.len() != target.len() || est.len() != interferer.len() {
        return Err(Error::ShapeMismatch("length mismatch".into()));
    }
    // 2x2 normal equations
    let tt = energy(target);
    let ii = energy(interferer);
    let ti = dot(target, interferer);
    let det = tt * ii - ti * ti;
    if tt == 0.0 || ii == 0.0 || det <= 1e-12 * tt * ii {
        return Err(Error::CollinearReferences);
    }
    let et = dot(est, target);
    let ei = dot(est, interferer);
    let a = (ii * et - ti * ei) / det;
    let b = (tt * ei - ti * et) / det;
    let eps = 1e-12 * energy(est);
    Ok(to_db(a * a * tt, b * b * ii + eps))
}

/// Per-source metrics for one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub si_sdr_db: [f64; 2],
    pub sir_db: [f64; 2],
    pub delta_si_sdr_db: [f64; 2],
    pub delta_sir_db: [f64; 2],
    pub permutation: Permutation,
}

impl EvalReport {
    pub fn mean_delta_si_sdr(&self) -> f64 {
        0.5 * (self.delta_si_sdr_db[0] + self.delta_si_sdr_db[1])
    }

    pub fn mean_delta_sir(&self) -> f64 {
        0.5 * (self.delta_sir_db[0] + self.delta_sir_db[1])
    }
}

/// Evaluate a pair of separated signals against the pair of targets,
/// with improvements measured against the unprocessed reference-channel
/// mixture. The output-to-source assignment maximizes total SI-SDR.
pub fn evaluate_scene(
    separated: [&[f64]; 2],
    targets: [&[f64]; 2],
    mixture_ref: &[f64],
) -> Result<EvalReport> {
    let score = |perm: Permutation| -> Result<f64> {
        let mut s = 0.0;
        for t in 0..2 {
            s += si_sdr(separated[perm.estimate_for(t)], targets[t])?;
        }
        Ok(s)
    };
    let id = score(Permutation::Identity)?;
    let sw = score(Permutation::Swapped)?;
    let perm = if id >= sw {
        Permutation::Identity
    } else {
        Permutation::Swapped
    };

    let mut si = [0.0; 2];
    let mut sir_db = [0.0; 2];
    let mut dsi = [0.0; 2];
    let mut dsir = [0.0; 2];
    for t in 0..2 {
        let est = separated[perm.estimate_for(t)];
        let other = targets[1 - t];
        si[t] = si_sdr(est, targets[t])?;
        sir_db[t] = sir(est, targets[t], other)?;
        let base_si = si_sdr(mixture_ref, targets[t])?;
        let base_sir = sir(mixture_ref, targets[t], other)?;
        dsi[t] = si[t] - base_si;
        dsir[t] = sir_db[t] - base_sir;
    }
    Ok(EvalReport {
        si_sdr_db: si,
        sir_db,
        delta_si_sdr_db: dsi,
        delta_sir_db: dsir,
        permutation: perm,
    })
}
