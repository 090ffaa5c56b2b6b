//! Evaluation metrics: channel-distribution Wasserstein score, per-condition
//! channel MAEs, shower centre/radius statistics, and the MAF-vs-IAF
//! sampling benchmark.

use std::collections::HashMap;
use std::time::Instant;

use crate::data::CondKey;
use crate::error::{Error, Result};
use crate::flow::{draw_standard_normal, FlowStack};
use crate::linalg::Matrix;
use crate::rng;

/// Empirical 1-Wasserstein distance between two samples.
///
/// Equal sizes use the exact sorted pairing. Unequal sizes integrate the
/// absolute difference of the two piecewise-linear quantile functions
/// (nodes at `(i + 0.5) / n`, constant beyond the end nodes).
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::config("wasserstein1: empty input"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());

    if sa.len() == sb.len() {
        let n = sa.len() as f64;
        return Ok(sa
            .iter()
            .zip(&sb)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / n);
    }

    let quantile = |sorted: &[f64], q: f64| -> f64 {
        let n = sorted.len() as f64;
        let p = q * n - 0.5;
        if p <= 0.0 {
            sorted[0]
        } else if p >= n - 1.0 {
            *sorted.last().unwrap()
        } else {
            let i = p.floor() as usize;
            let frac = p - i as f64;
            sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
        }
    };

    let mut breaks: Vec<f64> = Vec::with_capacity(sa.len() + sb.len() + 2);
    breaks.push(0.0);
    for (len, _) in [(sa.len(), ()), (sb.len(), ())] {
        for i in 0..len {
            breaks.push((i as f64 + 0.5) / len as f64);
        }
    }
    breaks.push(1.0);
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup();

    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (q0, q1) = (w[0], w[1]);
        let dq = q1 - q0;
        if dq <= 0.0 {
            continue;
        }
        let d0 = quantile(&sa, q0) - quantile(&sb, q0);
        let d1 = quantile(&sa, q1) - quantile(&sb, q1);
        if d0 * d1 >= 0.0 {
            total += dq * (d0.abs() + d1.abs()) / 2.0;
        } else {
            let t = d0 / (d0 - d1);
            total += dq * (t * d0.abs() + (1.0 - t) * d1.abs()) / 2.0;
        }
    }
    Ok(total)
}

/// Mean over the five channels of the 1-Wasserstein distance between
/// reference and generated channel-value distributions.
pub fn ws_score(reference: &[[f64; 5]], generated: &[[f64; 5]]) -> Result<f64> {
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::config("ws_score: empty channel set"));
    }
    let mut total = 0.0;
    for c in 0..5 {
        let a: Vec<f64> = reference.iter().map(|v| v[c]).collect();
        let b: Vec<f64> = generated.iter().map(|v| v[c]).collect();
        total += wasserstein1(&a, &b)?;
    }
    Ok(total / 5.0)
}

fn group_channel_means(
    entries: &[(CondKey, [f64; 5])],
) -> HashMap<CondKey, ([f64; 5], usize)> {
    let mut out: HashMap<CondKey, ([f64; 5], usize)> = HashMap::new();
    for (key, ch) in entries {
        let e = out.entry(*key).or_insert(([0.0; 5], 0));
        for (acc, v) in e.0.iter_mut().zip(ch) {
            *acc += v;
        }
        e.1 += 1;
    }
    for e in out.values_mut() {
        for acc in e.0.iter_mut() {
            *acc /= e.1 as f64;
        }
    }
    out
}

fn check_same_keys<A, B>(
    reference: &HashMap<CondKey, A>,
    generated: &HashMap<CondKey, B>,
) -> Result<()> {
    let missing_gen: Vec<&CondKey> = reference
        .keys()
        .filter(|k| !generated.contains_key(k))
        .take(4)
        .collect();
    let missing_ref: Vec<&CondKey> = generated
        .keys()
        .filter(|k| !reference.contains_key(k))
        .take(4)
        .collect();
    if !missing_gen.is_empty() || !missing_ref.is_empty() {
        return Err(Error::config(format!(
            "condition keys differ between sets; first only-in-reference: {missing_gen:?}, first only-in-generated: {missing_ref:?}"
        )));
    }
    Ok(())
}

/// Per-condition channel-mean MAE, aggregated unweighted (`mae_c`) and
/// weighted by the reference occurrence counts (`mae_cw`).
pub fn channel_mae(
    reference: &[(CondKey, [f64; 5])],
    generated: &[(CondKey, [f64; 5])],
) -> Result<(f64, f64)> {
    let ref_means = group_channel_means(reference);
    let gen_means = group_channel_means(generated);
    check_same_keys(&ref_means, &gen_means)?;
    let mut sum = 0.0;
    let mut wsum = 0.0;
    let mut wtotal = 0.0;
    for (key, (rm, count)) in &ref_means {
        let (gm, _) = &gen_means[key];
        let mae: f64 = rm.iter().zip(gm).map(|(a, b)| (a - b).abs()).sum::<f64>() / 5.0;
        sum += mae;
        wsum += mae * *count as f64;
        wtotal += *count as f64;
    }
    Ok((sum / ref_means.len() as f64, wsum / wtotal))
}

/// Photon-weighted centre of mass `(row, col)`.
pub fn shower_centre(grid_values: &[f64], grid: usize) -> Result<(f64, f64)> {
    let total: f64 = grid_values.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroGrid("shower centre undefined".into()));
    }
    let mut r = 0.0;
    let mut c = 0.0;
    for (idx, &v) in grid_values.iter().enumerate() {
        r += (idx / grid) as f64 * v;
        c += (idx % grid) as f64 * v;
    }
    Ok((r / total, c / total))
}

/// Smallest radius around the centre of mass containing at least `threshold`
/// of the photons; pixels are treated as points at integer coordinates and
/// the threshold comparison is inclusive.
pub fn shower_radius(grid_values: &[f64], grid: usize, threshold: f64) -> Result<f64> {
    let total: f64 = grid_values.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroGrid("shower radius undefined".into()));
    }
    let centre = shower_centre(grid_values, grid)?;
    let mut by_dist: Vec<(f64, f64)> = grid_values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(idx, &v)| {
            let dr = (idx / grid) as f64 - centre.0;
            let dc = (idx % grid) as f64 - centre.1;
            ((dr * dr + dc * dc).sqrt(), v)
        })
        .collect();
    by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut acc = 0.0;
    for (dist, v) in by_dist {
        acc += v;
        if acc >= threshold * total {
            return Ok(dist);
        }
    }
    Ok(0.0)
}

/// Default containment threshold for the shape statistic.
pub const RADIUS_THRESHOLD: f64 = 0.9;

/// The eight aggregates of the centre/radius comparison: MAE and RMSE of the
/// per-condition differences in centre position, centre variance, radius,
/// and radius variance, weighted by occurrence counts.
#[derive(Clone, Copy, Debug, Default)]
pub struct CentreRadiusTable {
    pub centre_mae: f64,
    pub centre_rmse: f64,
    pub centre_var_mae: f64,
    pub centre_var_rmse: f64,
    pub radius_mae: f64,
    pub radius_rmse: f64,
    pub radius_var_mae: f64,
    pub radius_var_rmse: f64,
}

impl CentreRadiusTable {
    pub fn as_rows(&self) -> [(&'static str, f64); 8] {
        [
            ("centre_mae", self.centre_mae),
            ("centre_rmse", self.centre_rmse),
            ("centre_var_mae", self.centre_var_mae),
            ("centre_var_rmse", self.centre_var_rmse),
            ("radius_mae", self.radius_mae),
            ("radius_rmse", self.radius_rmse),
            ("radius_var_mae", self.radius_var_mae),
            ("radius_var_rmse", self.radius_var_rmse),
        ]
    }
}

struct ShapeStats {
    centre_mean: (f64, f64),
    centre_var: f64,
    radius_mean: f64,
    radius_var: f64,
    count: usize,
}

fn shape_stats(grids: &[&[f64]], grid: usize) -> Option<ShapeStats> {
    let mut centres = Vec::new();
    let mut radii = Vec::new();
    for g in grids {
        // Zero grids carry no shape information; skip them.
        if g.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        centres.push(shower_centre(g, grid).ok()?);
        radii.push(shower_radius(g, grid, RADIUS_THRESHOLD).ok()?);
    }
    if centres.is_empty() {
        return None;
    }
    let n = centres.len() as f64;
    let mr = centres.iter().map(|c| c.0).sum::<f64>() / n;
    let mc = centres.iter().map(|c| c.1).sum::<f64>() / n;
    let var_r = centres.iter().map(|c| (c.0 - mr) * (c.0 - mr)).sum::<f64>() / n;
    let var_c = centres.iter().map(|c| (c.1 - mc) * (c.1 - mc)).sum::<f64>() / n;
    let rm = radii.iter().sum::<f64>() / n;
    let rv = radii.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() / n;
    Some(ShapeStats {
        centre_mean: (mr, mc),
        centre_var: var_r + var_c,
        radius_mean: rm,
        radius_var: rv,
        count: grids.len(),
    })
}

/// Per-condition means and variances of shower centre and radius for
/// reference and generated data, aggregated into the eight-column table with
/// occurrence-count weights.
///
/// The 2-D centre difference collapses to the Euclidean distance between the
/// per-condition mean centres; centre variance is the sum of per-coordinate
/// variances (population convention).
pub fn centre_radius_report(
    reference: &[(CondKey, &[f64])],
    generated: &[(CondKey, &[f64])],
    grid: usize,
) -> Result<CentreRadiusTable> {
    fn group<'g>(entries: &[(CondKey, &'g [f64])]) -> HashMap<CondKey, Vec<&'g [f64]>> {
        let mut out: HashMap<CondKey, Vec<&'g [f64]>> = HashMap::new();
        for (key, g) in entries {
            out.entry(*key).or_default().push(g);
        }
        out
    }
    let ref_groups = group(reference);
    let gen_groups = group(generated);
    check_same_keys(&ref_groups, &gen_groups)?;

    let mut w_total = 0.0;
    let mut sums = [0.0f64; 4]; // weighted |diff| per quantity
    let mut sq_sums = [0.0f64; 4]; // weighted diff^2 per quantity
    for (key, ref_grids) in &ref_groups {
        let Some(rs) = shape_stats(ref_grids, grid) else {
            continue;
        };
        let Some(gs) = shape_stats(&gen_groups[key], grid) else {
            continue;
        };
        let w = rs.count as f64;
        let centre_d = {
            let dr = rs.centre_mean.0 - gs.centre_mean.0;
            let dc = rs.centre_mean.1 - gs.centre_mean.1;
            (dr * dr + dc * dc).sqrt()
        };
        let diffs = [
            centre_d,
            rs.centre_var - gs.centre_var,
            rs.radius_mean - gs.radius_mean,
            rs.radius_var - gs.radius_var,
        ];
        for (i, d) in diffs.iter().enumerate() {
            sums[i] += w * d.abs();
            sq_sums[i] += w * d * d;
        }
        w_total += w;
    }
    if w_total <= 0.0 {
        return Err(Error::ZeroGrid(
            "centre/radius report: no condition with nonzero responses".into(),
        ));
    }
    Ok(CentreRadiusTable {
        centre_mae: sums[0] / w_total,
        centre_rmse: (sq_sums[0] / w_total).sqrt(),
        centre_var_mae: sums[1] / w_total,
        centre_var_rmse: (sq_sums[1] / w_total).sqrt(),
        radius_mae: sums[2] / w_total,
        radius_rmse: (sq_sums[2] / w_total).sqrt(),
        radius_var_mae: sums[3] / w_total,
        radius_var_rmse: (sq_sums[3] / w_total).sqrt(),
    })
}

/// Mean and sample standard deviation (denominator `R - 1`; zero for a
/// single run).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sampling-speed comparison on identical conditions.
#[derive(Clone, Debug)]
pub struct BenchResult {
    pub teacher_ms_per_sample: f64,
    pub student_ms_per_sample: f64,
    pub speedup: f64,
    pub batch: usize,
    pub data_dim: usize,
    pub layers: usize,
    pub warmup: usize,
    pub repetitions: usize,
    /// Masked-network calls for one teacher sampling batch.
    pub teacher_calls: u64,
    /// Masked-network calls for one student sampling batch.
    pub student_calls: u64,
}

impl BenchResult {
    pub fn report_lines(&self) -> Vec<String> {
        vec![
            format!("data_dim\t{}", self.data_dim),
            format!("layers\t{}", self.layers),
            format!("batch\t{}", self.batch),
            format!("warmup\t{}", self.warmup),
            format!("repetitions\t{}", self.repetitions),
            format!("teacher_made_calls\t{}", self.teacher_calls),
            format!("student_made_calls\t{}", self.student_calls),
            format!("teacher_ms_per_sample\t{:.6}", self.teacher_ms_per_sample),
            format!("student_ms_per_sample\t{:.6}", self.student_ms_per_sample),
            format!("speedup\t{:.2}", self.speedup),
        ]
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Times MAF sampling against IAF sampling on identical conditions and
/// latents. Medians over at least five repetitions; one warmup pass also
/// measures the masked-network call counts.
pub fn bench_sampling(
    teacher: &FlowStack,
    student: &FlowStack,
    cond: &Matrix,
    repetitions: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchResult> {
    if repetitions < 5 {
        return Err(Error::config("bench: need at least 5 repetitions"));
    }
    if warmup < 1 {
        return Err(Error::config("bench: need at least 1 warmup pass"));
    }
    let n = cond.rows();
    let d = teacher.data_dim;

    let z0 = draw_standard_normal(n, d, &mut rng::stream(seed, &[0xbe4c, 0]));
    teacher.reset_made_calls();
    teacher.slow_decode(&z0, cond)?;
    let teacher_calls = teacher.made_calls();
    student.reset_made_calls();
    student.fast_decode(&z0, cond)?;
    let student_calls = student.made_calls();
    for w in 1..warmup {
        let z = draw_standard_normal(n, d, &mut rng::stream(seed, &[0xbe4c, w as u64]));
        teacher.slow_decode(&z, cond)?;
        student.fast_decode(&z, cond)?;
    }

    let mut t_times = Vec::with_capacity(repetitions);
    let mut s_times = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let z = draw_standard_normal(n, d, &mut rng::stream(seed, &[0xbe4d, rep as u64]));
        let t0 = Instant::now();
        teacher.slow_decode(&z, cond)?;
        t_times.push(t0.elapsed().as_secs_f64() * 1e3);
        let t1 = Instant::now();
        student.fast_decode(&z, cond)?;
        s_times.push(t1.elapsed().as_secs_f64() * 1e3);
    }
    let t_med = median(&mut t_times) / n as f64;
    let s_med = median(&mut s_times) / n as f64;
    Ok(BenchResult {
        teacher_ms_per_sample: t_med,
        student_ms_per_sample: s_med,
        speedup: t_med / s_med,
        batch: n,
        data_dim: d,
        layers: teacher.n_layers(),
        warmup,
        repetitions,
        teacher_calls,
        student_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn key(v: u32) -> CondKey {
        let mut k = [0u32; 10];
        k[0] = v;
        CondKey(k)
    }

    #[test]
    fn wasserstein_hand_cases() {
        assert_eq!(wasserstein1(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((wasserstein1(&[0.0, 0.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((wasserstein1(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_translation_and_symmetry() {
        let mut r = rng::stream(1, &[0]);
        for _ in 0..20 {
            let n = 3 + (rng::uniform01(&mut r) * 40.0) as usize;
            let m = 3 + (rng::uniform01(&mut r) * 40.0) as usize;
            let a: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r, -5.0, 5.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| rng::uniform(&mut r, -5.0, 5.0)).collect();
            let ab = wasserstein1(&a, &b).unwrap();
            let ba = wasserstein1(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12, "symmetry");
            assert!(ab >= 0.0);
            let c = rng::uniform(&mut r, -3.0, 3.0);
            let shifted: Vec<f64> = a.iter().map(|v| v + c).collect();
            let w = wasserstein1(&a, &shifted).unwrap();
            assert!((w - c.abs()).abs() < 1e-12, "translation: {w} vs {}", c.abs());
        }
    }

    #[test]
    fn wasserstein_triangle_inequality_sampled() {
        let mut r = rng::stream(2, &[0]);
        for _ in 0..30 {
            let mk = |r: &mut rand_chacha::ChaCha12Rng, n: usize| -> Vec<f64> {
                (0..n).map(|_| rng::uniform(r, -4.0, 4.0)).collect()
            };
            let a = mk(&mut r, 17);
            let b = mk(&mut r, 23);
            let c = mk(&mut r, 11);
            let ab = wasserstein1(&a, &b).unwrap();
            let bc = wasserstein1(&b, &c).unwrap();
            let ac = wasserstein1(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-9, "triangle: {ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn ws_score_zero_on_copy_and_translation_property() {
        let reference: Vec<[f64; 5]> = (0..50)
            .map(|i| {
                let f = i as f64;
                [f, 2.0 * f, 30.0 - f, 5.0, f / 2.0]
            })
            .collect();
        assert_eq!(ws_score(&reference, &reference.clone()).unwrap(), 0.0);
        // Shift one channel by +c uniformly: score = c / 5.
        let c = 7.0;
        let shifted: Vec<[f64; 5]> = reference
            .iter()
            .map(|v| [v[0], v[1], v[2] + c, v[3], v[4]])
            .collect();
        let s = ws_score(&reference, &shifted).unwrap();
        assert!((s - c / 5.0).abs() < 1e-12);
    }

    #[test]
    fn channel_mae_hand_weighting() {
        // Condition 1 (count 1): channel-mean MAE 2; condition 2 (count 3):
        // MAE 4 -> mae_c = 3, mae_cw = (2*1 + 4*3)/4 = 3.5.
        let reference = vec![
            (key(1), [0.0; 5]),
            (key(2), [10.0; 5]),
            (key(2), [10.0; 5]),
            (key(2), [10.0; 5]),
        ];
        let generated = vec![
            (key(1), [2.0; 5]),
            (key(2), [14.0; 5]),
            (key(2), [14.0; 5]),
            (key(2), [14.0; 5]),
        ];
        let (mae_c, mae_cw) = channel_mae(&reference, &generated).unwrap();
        assert!((mae_c - 3.0).abs() < 1e-12);
        assert!((mae_cw - 3.5).abs() < 1e-12);
        // Zero on copy; equal counts collapse the two aggregates.
        let (c0, cw0) = channel_mae(&reference, &reference.clone()).unwrap();
        assert_eq!(c0, 0.0);
        assert_eq!(cw0, 0.0);
        // Missing key is a config error.
        let missing = vec![(key(1), [2.0; 5])];
        assert!(channel_mae(&reference, &missing).is_err());
    }

    #[test]
    fn mae_cw_equals_mae_c_for_equal_counts() {
        let reference = vec![(key(1), [0.0; 5]), (key(2), [5.0; 5])];
        let generated = vec![(key(1), [1.0; 5]), (key(2), [9.0; 5])];
        let (mae_c, mae_cw) = channel_mae(&reference, &generated).unwrap();
        assert!((mae_c - mae_cw).abs() < 1e-12);
    }

    #[test]
    fn shower_centre_hand_cases() {
        let g = 8;
        let mut grid = vec![0.0; 64];
        grid[3 * 8 + 7] = 4.0;
        assert_eq!(shower_centre(&grid, g).unwrap(), (3.0, 7.0));
        let uniform = vec![1.0; 64];
        assert_eq!(shower_centre(&uniform, g).unwrap(), (3.5, 3.5));
        let mut two = vec![0.0; 64];
        two[0] = 2.0;
        two[2] = 2.0;
        assert_eq!(shower_centre(&two, g).unwrap(), (0.0, 1.0));
        assert!(shower_centre(&vec![0.0; 64], g).is_err());
    }

    #[test]
    fn shower_radius_hand_cases() {
        let g = 16;
        let mut grid = vec![0.0; 256];
        grid[5 * 16 + 5] = 3.0;
        assert_eq!(shower_radius(&grid, g, 0.9).unwrap(), 0.0);
        // 10 photons at the centre-of-mass pixel, 1 photon 5 pixels away
        // pulls the centre slightly; rebuild with exact centre: put 10 at
        // (8,8) and 1 at (8,13): centre = (8, 8.4545); the near pixel holds
        // 10/11 > 0.9 of photons but sits 0.4545 from the centre.
        let mut grid = vec![0.0; 256];
        grid[8 * 16 + 8] = 10.0;
        grid[8 * 16 + 13] = 1.0;
        let r = shower_radius(&grid, g, 0.9).unwrap();
        assert!((r - 5.0 / 11.0).abs() < 1e-12);
        // Boundary: exactly 90% at the first pixel (tie includes).
        let mut grid = vec![0.0; 256];
        grid[8 * 16 + 8] = 9.0;
        grid[8 * 16 + 13] = 1.0;
        let r = shower_radius(&grid, g, 0.9).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        // Monotone non-increasing in the threshold.
        let mut last = f64::INFINITY;
        for t in [0.99, 0.9, 0.5, 0.1] {
            let r = shower_radius(&grid, g, t).unwrap();
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn centre_radius_zero_on_copy_and_euclidean_centre() {
        let g = 8;
        let mut a = vec![0.0; 64];
        a[2 * 8 + 2] = 5.0;
        a[2 * 8 + 3] = 5.0;
        let mut b = vec![0.0; 64];
        b[5 * 8 + 6] = 5.0;
        b[5 * 8 + 7] = 5.0;
        let reference: Vec<(CondKey, &[f64])> = vec![(key(1), &a)];
        let same = centre_radius_report(&reference, &reference.clone(), g).unwrap();
        for (_, v) in same.as_rows() {
            assert_eq!(v, 0.0);
        }
        // Single condition, centre means differing by (3, 4): Euclidean 5.
        let generated: Vec<(CondKey, &[f64])> = vec![(key(1), &b)];
        let table = centre_radius_report(&reference, &generated, g).unwrap();
        assert!((table.centre_mae - 5.0).abs() < 1e-12);
        assert!((table.centre_rmse - 5.0).abs() < 1e-12);
    }

    #[test]
    fn mean_std_uses_sample_denominator() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
        let (_, s1) = mean_std(&[5.0]);
        assert_eq!(s1, 0.0);
    }
}
