//! End-to-end orchestration: dataset preparation, teacher/student training
//! runners, the generation-based evaluation protocol, and report formatting.
//! The CLI is a thin wrapper around these functions, and the acceptance
//! suite drives them directly.



use crate::data::{CondKey, Dataset, Placement};
use crate::error::{Error, Result};
use crate::eval::{
    bench_sampling, centre_radius_report, channel_mae, mean_std, ws_score, BenchResult,
    CentreRadiusTable,
};
use crate::flow::{
    build_stack, distill_student, draw_standard_normal, train_teacher, DistillSetup,
    EpochLog, FlowDirection, FlowStack, LossWeights, TrainConfig, Variant,
};
use crate::linalg::Matrix;
use crate::physics::{
    self, build_diversity_table, extract_channels, postprocess, preprocess, DiversityTable,
    PreprocessConfig,
};
use crate::rng;

const TAG_PREPROCESS: u64 = 0x7072_6570;
const TAG_GENERATE: u64 = 0x6765_6e00;
const TAG_EVAL_PICK: u64 = 0x6576_706b;

/// Flow architecture settings.
#[derive(Clone, Debug)]
pub struct ArchConfig {
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub spline_bins: usize,
    pub tail_bound: f64,
}

/// Everything a full pipeline run needs. Mirrors the CLI configuration file.
#[derive(Clone, Debug)]
pub struct Settings {
    pub seed: u64,
    pub grid: usize,
    pub n_total: usize,
    pub repeats_per_condition: usize,
    pub placement: Placement,
    pub types: Vec<crate::data::ParticleTypeSpec>,
    pub split_ratios: (u32, u32, u32),
    pub arch: ArchConfig,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    /// Logit clamp for preprocessing.
    pub lambda: f64,
    /// Diversity clamp before inversion.
    pub delta: f64,
    /// Additive constant in the inverse-diversity weight.
    pub epsilon: f64,
    pub loss_weights: LossWeights,
    pub eval_runs: usize,
    /// Cap on generated samples per evaluation run; 0 means the full split.
    pub max_generated: usize,
    pub bench_batch: usize,
    pub bench_repetitions: usize,
    pub bench_warmup: usize,
}

impl Settings {
    /// Desk-scale defaults (16x16 grid, ~20k samples, 4 flow layers).
    pub fn desk(seed: u64) -> Settings {
        Settings {
            seed,
            grid: 16,
            n_total: 20_000,
            repeats_per_condition: 8,
            placement: Placement::Stochastic,
            types: crate::data::desk_type_specs(),
            split_ratios: (70, 10, 20),
            arch: ArchConfig {
                layers: 4,
                hidden: vec![128, 128],
                spline_bins: 8,
                tail_bound: 14.0,
            },
            teacher_epochs: 4,
            student_epochs: 3,
            batch_size: 128,
            learning_rate: 1e-3,
            grad_clip: 5.0,
            lambda: 1e-6,
            delta: 1e-6,
            epsilon: 1e-3,
            loss_weights: LossWeights::default(),
            eval_runs: 5,
            max_generated: 0,
            bench_batch: 16,
            bench_repetitions: 5,
            bench_warmup: 1,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.grid * self.grid
    }

    pub fn preprocess_config(&self) -> Result<PreprocessConfig> {
        PreprocessConfig::new(self.grid, self.lambda)
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            grad_clip: self.grad_clip,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.grid % 4 != 0 {
            return Err(Error::config("settings: grid must be divisible by 4"));
        }
        if self.arch.layers == 0 || self.arch.hidden.is_empty() {
            return Err(Error::config("settings: empty architecture"));
        }
        if self.eval_runs == 0 {
            return Err(Error::config("settings: eval runs must be >= 1"));
        }
        if !(self.lambda > 0.0 && self.lambda < 0.5) {
            return Err(Error::config("settings: lambda must be in (0, 0.5)"));
        }
        if self.delta <= 0.0 || self.epsilon <= 0.0 {
            return Err(Error::config("settings: delta and epsilon must be positive"));
        }
        if self.learning_rate <= 0.0 || self.grad_clip <= 0.0 || self.batch_size == 0 {
            return Err(Error::config("settings: bad training hyperparameters"));
        }
        Ok(())
    }
}

/// Generates the dataset and splits it by condition groups.
pub fn generate_and_split(s: &Settings) -> Result<(Dataset, Dataset, Dataset)> {
    let ds = crate::data::generate_dataset(
        &s.types,
        s.n_total,
        s.repeats_per_condition,
        s.grid,
        s.placement,
        s.seed,
    )?;
    crate::data::split_dataset(&ds, s.split_ratios, s.seed)
}

/// A dataset mapped into model space: logit-space responses, transformed
/// condition features, plus the per-sample keys and photon sums needed for
/// evaluation.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub x: Matrix,
    pub cond: Matrix,
    pub keys: Vec<CondKey>,
    pub photon_sums: Vec<f64>,
    pub grid: usize,
}

/// Preprocesses every sample with an index-keyed dequantization stream.
pub fn prepare(dataset: &Dataset, s: &Settings) -> Result<Prepared> {
    let cfg = s.preprocess_config()?;
    let n = dataset.samples.len();
    let d = s.data_dim();
    let mut x = Matrix::zeros(n, d);
    let mut cond = Matrix::zeros(n, 10);
    let mut keys = Vec::with_capacity(n);
    let mut photon_sums = Vec::with_capacity(n);
    for (i, sample) in dataset.samples.iter().enumerate() {
        let mut r = rng::stream(s.seed, &[TAG_PREPROCESS, i as u64]);
        let (v, _noisy_sum) = preprocess(&sample.response, &cfg, &mut r)?;
        x.row_mut(i).copy_from_slice(&v);
        cond.row_mut(i)
            .copy_from_slice(&physics::condition_features(&sample.condition));
        keys.push(sample.condition.key());
        photon_sums.push(sample.condition.photon_sum());
    }
    Ok(Prepared {
        x,
        cond,
        keys,
        photon_sums,
        grid: s.grid,
    })
}

/// Builds and trains the MAF teacher.
pub fn run_teacher(
    s: &Settings,
    train: &Prepared,
    val: &Prepared,
) -> Result<(FlowStack, Vec<EpochLog>)> {
    let mut teacher = build_stack(
        FlowDirection::Maf,
        s.data_dim(),
        10,
        s.arch.layers,
        &s.arch.hidden,
        s.arch.spline_bins,
        s.arch.tail_bound,
        s.seed,
    )?;
    let logs = train_teacher(
        &mut teacher,
        &train.x,
        &train.cond,
        &val.x,
        &val.cond,
        &s.train_config(s.teacher_epochs),
    )?;
    Ok((teacher, logs))
}

/// Builds the diversity table from raw training samples.
pub fn diversity_table(s: &Settings, train_raw: &Dataset) -> DiversityTable {
    build_diversity_table(&train_raw.samples, s.delta, s.epsilon)
}

/// Distills a student in the given variant. `table` supplies the Eq.-style
/// per-sample weights for the weighted variants.
pub fn run_distill(
    s: &Settings,
    teacher: &FlowStack,
    train: &Prepared,
    val: &Prepared,
    table: &DiversityTable,
    variant: Variant,
) -> Result<(FlowStack, Vec<EpochLog>)> {
    let mut student = FlowStack::new_student_like(teacher, s.seed.wrapping_add(1))?;
    let sample_weights: Vec<f64> = train
        .keys
        .iter()
        .map(|k| table.weight_for(k).unwrap_or(s.epsilon))
        .collect();
    let setup = DistillSetup {
        variant,
        loss_weights: s.loss_weights,
        sample_weights,
        grid: s.grid,
    };
    let logs = distill_student(
        teacher,
        &mut student,
        &train.x,
        &train.cond,
        &val.x,
        &val.cond,
        &setup,
        &s.train_config(s.student_epochs),
    )?;
    Ok((student, logs))
}

/// Generates one response per selected test sample (its condition reused,
/// photon sum read from the condition vector) and postprocesses to integer
/// grids. Works in chunks so MAF generation stays within memory.
pub fn generate_responses(
    model: &FlowStack,
    prepared: &Prepared,
    indices: &[usize],
    s: &Settings,
    run: usize,
) -> Result<Vec<Vec<f64>>> {
    let cfg = s.preprocess_config()?;
    let d = s.data_dim();
    let z_all = draw_standard_normal(
        indices.len(),
        d,
        &mut rng::stream(s.seed, &[TAG_GENERATE, run as u64]),
    );
    let mut grids = Vec::with_capacity(indices.len());
    let chunk_size = 512;
    for (chunk_no, chunk) in indices.chunks(chunk_size).enumerate() {
        let rows: Vec<usize> = (chunk_no * chunk_size..chunk_no * chunk_size + chunk.len()).collect();
        let z = z_all.select_rows(&rows);
        let cond = prepared.cond.select_rows(chunk);
        let v = match model.direction {
            FlowDirection::Iaf => model.fast_decode(&z, &cond)?,
            FlowDirection::Maf => model.slow_decode(&z, &cond)?,
        };
        for (row, &idx) in v.iter_rows().zip(chunk) {
            grids.push(postprocess(row, prepared.photon_sums[idx], &cfg));
        }
    }
    Ok(grids)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let (mean, std) = mean_std(values);
    MetricSummary { mean, std }
}

/// The full metric battery, mean and standard deviation over generation runs.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub runs: usize,
    pub n_reference: usize,
    pub n_generated_per_run: usize,
    pub ws: MetricSummary,
    pub mae_c: MetricSummary,
    pub mae_cw: MetricSummary,
    pub centre_radius: [(&'static str, MetricSummary); 8],
}

impl MetricReport {
    /// Machine-readable lines: `name<TAB>mean<TAB>std`.
    pub fn kv_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("runs\t{}\t0", self.runs),
            format!("n_reference\t{}\t0", self.n_reference),
            format!("n_generated_per_run\t{}\t0", self.n_generated_per_run),
            format!("ws\t{:.9e}\t{:.9e}", self.ws.mean, self.ws.std),
            format!("mae_c\t{:.9e}\t{:.9e}", self.mae_c.mean, self.mae_c.std),
            format!("mae_cw\t{:.9e}\t{:.9e}", self.mae_cw.mean, self.mae_cw.std),
        ];
        for (name, m) in &self.centre_radius {
            lines.push(format!("{name}\t{:.9e}\t{:.9e}", m.mean, m.std));
        }
        lines
    }

    /// Human-readable table.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "metric report: {} runs, {} reference samples, {} generated per run\n",
            self.runs, self.n_reference, self.n_generated_per_run
        ));
        out.push_str(&format!(
            "{:<18} {:>14} {:>14}\n",
            "metric", "mean", "std"
        ));
        let mut push = |name: &str, m: &MetricSummary| {
            out.push_str(&format!("{:<18} {:>14.6} {:>14.6}\n", name, m.mean, m.std));
        };
        push("ws", &self.ws);
        push("mae_c", &self.mae_c);
        push("mae_cw", &self.mae_cw);
        for (name, m) in &self.centre_radius {
            push(name, m);
        }
        out
    }
}

/// Selects the evaluation subset: whole split when it fits the budget,
/// otherwise whole condition groups in seeded-shuffle order until the budget
/// is filled.
pub fn evaluation_indices(prepared: &Prepared, s: &Settings) -> Vec<usize> {
    let n = prepared.keys.len();
    if s.max_generated == 0 || s.max_generated >= n {
        return (0..n).collect();
    }
    let mut order: Vec<CondKey> = Vec::new();
    let mut groups: std::collections::HashMap<CondKey, Vec<usize>> =
        std::collections::HashMap::new();
    for (i, key) in prepared.keys.iter().enumerate() {
        groups
            .entry(*key)
            .or_insert_with(|| {
                order.push(*key);
                Vec::new()
            })
            .push(i);
    }
    let mut group_idx: Vec<usize> = (0..order.len()).collect();
    rng::shuffle(&mut rng::stream(s.seed, &[TAG_EVAL_PICK]), &mut group_idx);
    let mut selected = Vec::new();
    for g in group_idx {
        if selected.len() >= s.max_generated {
            break;
        }
        selected.extend_from_slice(&groups[&order[g]]);
    }
    selected.sort_unstable();
    selected
}

/// Runs the generation-based evaluation: `eval_runs` independent generation
/// passes against the reference subset, reporting mean and sample standard
/// deviation for every metric.
pub fn evaluate_model(
    model: &FlowStack,
    test_raw: &Dataset,
    prepared_test: &Prepared,
    s: &Settings,
) -> Result<MetricReport> {
    let indices = evaluation_indices(prepared_test, s);
    let ref_channels: Vec<[f64; 5]> = indices
        .iter()
        .map(|&i| extract_channels(&test_raw.samples[i].response, s.grid))
        .collect::<Result<_>>()?;
    let ref_keyed: Vec<(CondKey, [f64; 5])> = indices
        .iter()
        .zip(&ref_channels)
        .map(|(&i, ch)| (prepared_test.keys[i], *ch))
        .collect();
    let ref_grids: Vec<(CondKey, &[f64])> = indices
        .iter()
        .map(|&i| {
            (
                prepared_test.keys[i],
                test_raw.samples[i].response.as_slice(),
            )
        })
        .collect();

    let mut ws_runs = Vec::new();
    let mut mae_c_runs = Vec::new();
    let mut mae_cw_runs = Vec::new();
    let mut table_runs: Vec<CentreRadiusTable> = Vec::new();
    for run in 0..s.eval_runs {
        let grids = generate_responses(model, prepared_test, &indices, s, run)?;
        let gen_channels: Vec<[f64; 5]> = grids
            .iter()
            .map(|g| extract_channels(g, s.grid))
            .collect::<Result<_>>()?;
        let gen_keyed: Vec<(CondKey, [f64; 5])> = indices
            .iter()
            .zip(&gen_channels)
            .map(|(&i, ch)| (prepared_test.keys[i], *ch))
            .collect();
        let gen_grids: Vec<(CondKey, &[f64])> = indices
            .iter()
            .zip(&grids)
            .map(|(&i, g)| (prepared_test.keys[i], g.as_slice()))
            .collect();
        ws_runs.push(ws_score(&ref_channels, &gen_channels)?);
        let (mae_c, mae_cw) = channel_mae(&ref_keyed, &gen_keyed)?;
        mae_c_runs.push(mae_c);
        mae_cw_runs.push(mae_cw);
        table_runs.push(centre_radius_report(&ref_grids, &gen_grids, s.grid)?);
    }

    let table_summary = |f: fn(&CentreRadiusTable) -> f64| -> MetricSummary {
        summarize(&table_runs.iter().map(f).collect::<Vec<f64>>())
    };
    Ok(MetricReport {
        runs: s.eval_runs,
        n_reference: indices.len(),
        n_generated_per_run: indices.len(),
        ws: summarize(&ws_runs),
        mae_c: summarize(&mae_c_runs),
        mae_cw: summarize(&mae_cw_runs),
        centre_radius: [
            ("centre_mae", table_summary(|t| t.centre_mae)),
            ("centre_rmse", table_summary(|t| t.centre_rmse)),
            ("centre_var_mae", table_summary(|t| t.centre_var_mae)),
            ("centre_var_rmse", table_summary(|t| t.centre_var_rmse)),
            ("radius_mae", table_summary(|t| t.radius_mae)),
            ("radius_rmse", table_summary(|t| t.radius_rmse)),
            ("radius_var_mae", table_summary(|t| t.radius_var_mae)),
            ("radius_var_rmse", table_summary(|t| t.radius_var_rmse)),
        ],
    })
}

/// Reference-vs-copy sanity report: every metric must come out zero.
pub fn self_check_report(test_raw: &Dataset, prepared_test: &Prepared, s: &Settings) -> Result<MetricReport> {
    let indices = evaluation_indices(prepared_test, s);
    let ref_channels: Vec<[f64; 5]> = indices
        .iter()
        .map(|&i| extract_channels(&test_raw.samples[i].response, s.grid))
        .collect::<Result<_>>()?;
    let ref_keyed: Vec<(CondKey, [f64; 5])> = indices
        .iter()
        .zip(&ref_channels)
        .map(|(&i, ch)| (prepared_test.keys[i], *ch))
        .collect();
    let ref_grids: Vec<(CondKey, &[f64])> = indices
        .iter()
        .map(|&i| {
            (
                prepared_test.keys[i],
                test_raw.samples[i].response.as_slice(),
            )
        })
        .collect();
    let ws = ws_score(&ref_channels, &ref_channels.clone())?;
    let (mae_c, mae_cw) = channel_mae(&ref_keyed, &ref_keyed.clone())?;
    let table = centre_radius_report(&ref_grids, &ref_grids.clone(), s.grid)?;
    let zero = |v: f64| MetricSummary { mean: v, std: 0.0 };
    Ok(MetricReport {
        runs: 1,
        n_reference: indices.len(),
        n_generated_per_run: indices.len(),
        ws: zero(ws),
        mae_c: zero(mae_c),
        mae_cw: zero(mae_cw),
        centre_radius: [
            ("centre_mae", zero(table.centre_mae)),
            ("centre_rmse", zero(table.centre_rmse)),
            ("centre_var_mae", zero(table.centre_var_mae)),
            ("centre_var_rmse", zero(table.centre_var_rmse)),
            ("radius_mae", zero(table.radius_mae)),
            ("radius_rmse", zero(table.radius_rmse)),
            ("radius_var_mae", zero(table.radius_var_mae)),
            ("radius_var_rmse", zero(table.radius_var_rmse)),
        ],
    })
}

/// Per-channel value dump for external plotting: CSV with
/// `channel,source,value` rows (reference plus one generation run).
pub fn channel_histogram_csv(
    model: &FlowStack,
    test_raw: &Dataset,
    prepared_test: &Prepared,
    s: &Settings,
) -> Result<String> {
    let indices = evaluation_indices(prepared_test, s);
    let mut out = String::from("channel,source,value\n");
    for &i in &indices {
        let ch = extract_channels(&test_raw.samples[i].response, s.grid)?;
        for (c, v) in ch.iter().enumerate() {
            out.push_str(&format!("{c},reference,{v}\n"));
        }
    }
    let grids = generate_responses(model, prepared_test, &indices, s, 0)?;
    for g in &grids {
        let ch = extract_channels(g, s.grid)?;
        for (c, v) in ch.iter().enumerate() {
            out.push_str(&format!("{c},generated,{v}\n"));
        }
    }
    Ok(out)
}

/// Times teacher vs student sampling on test conditions.
pub fn run_bench(
    s: &Settings,
    teacher: &FlowStack,
    student: &FlowStack,
    prepared_test: &Prepared,
) -> Result<BenchResult> {
    let n = s.bench_batch.min(prepared_test.cond.rows());
    if n == 0 {
        return Err(Error::config("bench: empty test split"));
    }
    let idx: Vec<usize> = (0..n).collect();
    let cond = prepared_test.cond.select_rows(&idx);
    bench_sampling(
        teacher,
        student,
        &cond,
        s.bench_repetitions,
        s.bench_warmup,
        s.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_settings() -> Settings {
        let mut s = Settings::desk(42);
        s.grid = 8;
        s.n_total = 320;
        s.repeats_per_condition = 4;
        s.arch = ArchConfig {
            layers: 2,
            hidden: vec![16],
            spline_bins: 4,
            tail_bound: 14.0,
        };
        s.teacher_epochs = 1;
        s.student_epochs = 1;
        s.batch_size = 64;
        s.eval_runs = 2;
        s
    }

    #[test]
    fn prepare_is_deterministic_and_finite() {
        let s = tiny_settings();
        let (train, _, _) = generate_and_split(&s).unwrap();
        let a = prepare(&train, &s).unwrap();
        let b = prepare(&train, &s).unwrap();
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert!(a.x.is_finite());
        assert!(a.cond.is_finite());
        // Logit-space values stay within the spline support.
        let bound = s.arch.tail_bound;
        assert!(a.x.as_slice().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn self_check_metrics_are_zero() {
        let s = tiny_settings();
        let (_, _, test) = generate_and_split(&s).unwrap();
        let prepared = prepare(&test, &s).unwrap();
        let report = self_check_report(&test, &prepared, &s).unwrap();
        assert_eq!(report.ws.mean, 0.0);
        assert_eq!(report.mae_c.mean, 0.0);
        assert_eq!(report.mae_cw.mean, 0.0);
        for (_, m) in &report.centre_radius {
            assert_eq!(m.mean, 0.0);
        }
    }

    #[test]
    fn evaluation_indices_respect_budget_and_groups() {
        let mut s = tiny_settings();
        let (train, _, _) = generate_and_split(&s).unwrap();
        let prepared = prepare(&train, &s).unwrap();
        s.max_generated = 17;
        let idx = evaluation_indices(&prepared, &s);
        // Whole groups of 4: the budget rounds up to a multiple of 4.
        assert!(idx.len() >= 17 && idx.len() % 4 == 0);
        // All repeats of each selected condition are present.
        let mut counts: std::collections::HashMap<CondKey, usize> = Default::default();
        for &i in &idx {
            *counts.entry(prepared.keys[i]).or_default() += 1;
        }
        assert!(counts.values().all(|&c| c == 4));
    }
}
