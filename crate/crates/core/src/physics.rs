//! Detector-specific math: the five-channel readout, the preprocessing and
//! postprocessing chains, response diversity and the inverse-diversity
//! sample weights.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{Condition, CondKey, Sample};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Channel membership of a pixel: every second fibre in a checkerboard
/// pattern forms channel 0; the remaining pixels split into the four
/// quadrants (top-left, top-right, bottom-left, bottom-right).
#[inline]
pub fn channel_index(grid: usize, idx: usize) -> usize {
    let r = idx / grid;
    let c = idx % grid;
    if (r + c) % 2 == 0 {
        0
    } else {
        match (r < grid / 2, c < grid / 2) {
            (true, true) => 1,
            (true, false) => 2,
            (false, true) => 3,
            (false, false) => 4,
        }
    }
}

/// Sums grid content into the five detector channels.
pub fn extract_channels(grid_values: &[f64], grid: usize) -> Result<[f64; 5]> {
    if grid % 2 != 0 {
        return Err(Error::config("extract_channels: grid size must be even"));
    }
    assert_eq!(grid_values.len(), grid * grid, "grid length mismatch");
    let mut out = [0.0f64; 5];
    for (idx, &v) in grid_values.iter().enumerate() {
        out[channel_index(grid, idx)] += v;
    }
    Ok(out)
}

/// Preprocessing parameters.
#[derive(Clone, Copy, Debug)]
pub struct PreprocessConfig {
    pub grid: usize,
    /// Logit clamp: pixel fractions are mapped through
    /// `logit(lambda + (1 - 2 lambda) p)`.
    pub logit_lambda: f64,
}

impl PreprocessConfig {
    pub fn new(grid: usize, logit_lambda: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&logit_lambda) || logit_lambda <= 0.0 {
            return Err(Error::config("preprocess: lambda must be in (0, 0.5)"));
        }
        Ok(PreprocessConfig { grid, logit_lambda })
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dequantize, normalize by the noisy sum, and map to logit space.
///
/// Returns the logit-space vector and the recorded noisy photon sum, which
/// [`postprocess`] needs to invert the chain.
pub fn preprocess(
    grid_values: &[f64],
    cfg: &PreprocessConfig,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<(Vec<f64>, f64)> {
    if grid_values.iter().any(|&v| v < 0.0) {
        return Err(Error::config("preprocess: negative photon count"));
    }
    let total: f64 = grid_values.iter().sum();
    if total <= 0.0 {
        return Err(Error::RejectedSample("all-zero response grid".into()));
    }
    let noisy: Vec<f64> = grid_values
        .iter()
        .map(|&v| v + crate::rng::uniform01(rng))
        .collect();
    let noisy_sum: f64 = noisy.iter().sum();
    let lam = cfg.logit_lambda;
    let v = noisy
        .iter()
        .map(|&q| logit(lam + (1.0 - 2.0 * lam) * (q / noisy_sum)))
        .collect();
    Ok((v, noisy_sum))
}

/// Inverts preprocessing: sigmoid, undo the lambda-affine map, renormalize,
/// rescale by the photon sum, and floor to integer counts (denoising).
pub fn postprocess(v: &[f64], photon_sum: f64, cfg: &PreprocessConfig) -> Vec<f64> {
    if photon_sum <= 0.0 {
        return vec![0.0; v.len()];
    }
    let lam = cfg.logit_lambda;
    let p: Vec<f64> = v
        .iter()
        .map(|&x| ((sigmoid(x) - lam) / (1.0 - 2.0 * lam)).max(0.0))
        .collect();
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return vec![0.0; v.len()];
    }
    p.iter().map(|&q| (q / total * photon_sum).floor()).collect()
}

/// Differentiable channel fractions of a logit-space vector: sigmoid each
/// element, normalize by the total, then sum per channel. The five outputs
/// sum to one.
pub fn soft_channels(v: &[f64], grid: usize) -> [f64; 5] {
    let mut total = 0.0;
    let mut out = [0.0f64; 5];
    for (idx, &x) in v.iter().enumerate() {
        let s = sigmoid(x);
        total += s;
        out[channel_index(grid, idx)] += s;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

/// Channel loss between two logit-space batches: mean over samples of the
/// summed squared soft-channel differences.
pub fn channel_loss(student_v: &Matrix, reference_v: &Matrix, grid: usize) -> Result<f64> {
    if student_v.shape() != reference_v.shape() {
        return Err(Error::config("channel_loss: batch shape mismatch"));
    }
    let n = student_v.rows();
    let mut total = 0.0;
    for (s, r) in student_v.iter_rows().zip(reference_v.iter_rows()) {
        let ws = soft_channels(s, grid);
        let wr = soft_channels(r, grid);
        total += ws
            .iter()
            .zip(&wr)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

/// Response diversity: sum over pixels of the population standard deviation
/// across the responses sharing one condition.
pub fn diversity<T: AsRef<[f64]>>(responses: &[T]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::config("diversity: empty response list"));
    }
    let n = responses.len() as f64;
    let len = responses[0].as_ref().len();
    let mut total = 0.0;
    for p in 0..len {
        let mean: f64 = responses.iter().map(|r| r.as_ref()[p]).sum::<f64>() / n;
        let var: f64 = responses
            .iter()
            .map(|r| {
                let d = r.as_ref()[p] - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        total += var.sqrt();
    }
    Ok(total)
}

/// Per-unique-condition statistics: occurrence count, diversity, and the
/// inverse-diversity sample weight.
#[derive(Clone, Debug)]
pub struct DiversityEntry {
    pub key: CondKey,
    pub count: usize,
    pub f_div: f64,
    pub weight: f64,
}

/// Built from the training split only; read-only afterwards.
#[derive(Clone, Debug)]
pub struct DiversityTable {
    entries: Vec<DiversityEntry>,
    lookup: HashMap<CondKey, usize>,
    pub epsilon: f64,
    pub delta: f64,
}

impl DiversityTable {
    pub fn entries(&self) -> &[DiversityEntry] {
        &self.entries
    }

    pub fn weight_for(&self, key: &CondKey) -> Option<f64> {
        self.lookup.get(key).map(|&i| self.entries[i].weight)
    }

    /// Persists one tab-separated line per unique condition:
    /// index, occurrence count, diversity, weight.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# index\tcount\tf_div\tf_div_inv_w")?;
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(w, "{i}\t{}\t{:.17e}\t{:.17e}", e.count, e.f_div, e.weight)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reloads counts and values; condition keys are not stored in the text
    /// form, so a reloaded table supports inspection but not lookups.
    pub fn load_values(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
        let r = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::config(format!("diversity table: bad line '{line}'")));
            }
            let count = parts[1]
                .parse::<usize>()
                .map_err(|e| Error::config(format!("diversity table: {e}")))?;
            let f_div = parts[2]
                .parse::<f64>()
                .map_err(|e| Error::config(format!("diversity table: {e}")))?;
            let weight = parts[3]
                .parse::<f64>()
                .map_err(|e| Error::config(format!("diversity table: {e}")))?;
            out.push((count, f_div, weight));
        }
        Ok(out)
    }
}

/// Builds the diversity table over the unique conditions of the given
/// (training) samples.
///
/// Diversities are clamped below at `delta` before inversion; the inverses
/// are min-max normalized to `[0, 1]` across unique conditions (a degenerate
/// spread maps to 1), multiplied by the occurrence count, plus `epsilon`.
pub fn build_diversity_table(samples: &[Sample], delta: f64, epsilon: f64) -> DiversityTable {
    let mut order: Vec<CondKey> = Vec::new();
    let mut groups: HashMap<CondKey, Vec<&Sample>> = HashMap::new();
    for s in samples {
        let key = s.condition.key();
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(s);
    }

    let mut entries: Vec<DiversityEntry> = order
        .iter()
        .map(|key| {
            let group = &groups[key];
            let responses: Vec<&[f64]> = group.iter().map(|s| s.response.as_slice()).collect();
            let f_div = diversity(&responses).expect("non-empty group");
            DiversityEntry {
                key: *key,
                count: group.len(),
                f_div,
                weight: 0.0,
            }
        })
        .collect();

    let inverses: Vec<f64> = entries.iter().map(|e| 1.0 / e.f_div.max(delta)).collect();
    let min = inverses.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = inverses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = entries.len() < 2 || (max - min) <= 0.0;
    for (e, inv) in entries.iter_mut().zip(&inverses) {
        let norm = if degenerate { 1.0 } else { (inv - min) / (max - min) };
        e.weight = norm * e.count as f64 + epsilon;
    }

    let lookup = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.key, i))
        .collect();
    DiversityTable {
        entries,
        lookup,
        epsilon,
        delta,
    }
}

/// Fixed feature map applied to condition vectors before they enter a
/// network: magnitude-heavy features (energy, longitudinal momentum, photon
/// sum) pass through log1p so every input is O(1)-O(10).
pub fn condition_features(c: &Condition) -> [f64; 10] {
    let v = c.0;
    [
        (v[0] as f64).max(0.0).ln_1p(),
        v[1] as f64,
        v[2] as f64,
        (v[3] as f64).max(0.0).ln_1p(),
        v[4] as f64,
        v[5] as f64,
        v[6] as f64,
        v[7] as f64,
        v[8] as f64,
        (v[9] as f64).max(0.0).ln_1p(),
    ]
}
