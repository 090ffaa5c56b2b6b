//! The six pipeline stages. Each stage validates its prerequisites, runs
//! through the core pipeline functions, and writes its artifacts plus a
//! frozen copy of the effective configuration.

use std::path::{Path, PathBuf};

use flowdistill_core::data::{read_dataset, write_dataset, write_manifest, Dataset};
use flowdistill_core::flow::{load_stack, save_stack, EpochLog, FlowStack, Variant};
use flowdistill_core::pipeline::{self, Prepared, Settings};
use flowdistill_core::{flow, Error};

use crate::config::FileConfig;
use crate::CliError;

pub struct Stage<'a> {
    pub config: &'a FileConfig,
    pub settings: Settings,
    pub out_dir: PathBuf,
}

impl<'a> Stage<'a> {
    pub fn new(config: &'a FileConfig) -> Result<Stage<'a>, CliError> {
        Ok(Stage {
            settings: config.to_settings()?,
            out_dir: config.out_dir.clone(),
            config,
        })
    }

    fn dataset_path(&self, split: &str) -> PathBuf {
        self.out_dir.join("dataset").join(format!("{split}.zds"))
    }

    pub fn teacher_path(&self) -> PathBuf {
        self.out_dir.join("teacher").join("teacher.fdw")
    }

    pub fn student_path(&self, variant: Variant) -> PathBuf {
        self.out_dir
            .join(format!("student-{}", variant.name()))
            .join("student.fdw")
    }

    fn require(&self, path: &Path) -> Result<(), CliError> {
        if !path.exists() {
            return Err(CliError::MissingArtifact(path.to_path_buf()));
        }
        Ok(())
    }

    fn load_split(&self, split: &str) -> Result<Dataset, CliError> {
        let path = self.dataset_path(split);
        self.require(&path)?;
        Ok(read_dataset(&path)?)
    }

    fn load_prepared(&self, split: &str) -> Result<(Dataset, Prepared), CliError> {
        let raw = self.load_split(split)?;
        let prepared = pipeline::prepare(&raw, &self.settings)?;
        Ok((raw, prepared))
    }

    fn write_metrics_log(&self, dir: &Path, logs: &[EpochLog]) -> Result<(), CliError> {
        let text: String = logs.iter().map(|l| format!("{}\n", l.line)).collect();
        std::fs::write(dir.join("metrics.log"), text).map_err(Error::from)?;
        Ok(())
    }

    pub fn gen_data(&self) -> Result<(), CliError> {
        let dir = self.out_dir.join("dataset");
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let (train, val, test) = pipeline::generate_and_split(&self.settings)?;
        write_dataset(&self.dataset_path("train"), &train)?;
        write_dataset(&self.dataset_path("val"), &val)?;
        write_dataset(&self.dataset_path("test"), &test)?;
        write_manifest(
            &dir.join("manifest.txt"),
            &self.settings.types,
            self.settings.seed,
            self.settings.n_total,
            self.settings.repeats_per_condition,
            self.settings.grid,
            self.settings.placement,
            self.settings.split_ratios,
        )?;
        self.config.freeze(&dir)?;
        println!(
            "gen-data: wrote {} train / {} val / {} test samples to {}",
            train.samples.len(),
            val.samples.len(),
            test.samples.len(),
            dir.display()
        );
        Ok(())
    }

    pub fn train_teacher(&self) -> Result<(), CliError> {
        let (_, train) = self.load_prepared("train")?;
        let (_, val) = self.load_prepared("val")?;
        let dir = self.out_dir.join("teacher");
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let (teacher, logs) = pipeline::run_teacher(&self.settings, &train, &val)?;
        save_stack(&self.teacher_path(), &teacher)?;
        self.write_metrics_log(&dir, &logs)?;
        self.config.freeze(&dir)?;
        let last = logs.last().unwrap();
        println!(
            "train-teacher: {} epochs, val NLL {:.4} -> {:.4}; checkpoint at {}",
            self.settings.teacher_epochs,
            logs[0].val,
            last.val,
            self.teacher_path().display()
        );
        Ok(())
    }

    pub fn distill(&self, variant: Variant) -> Result<(), CliError> {
        self.require(&self.teacher_path())?;
        let teacher = load_stack(&self.teacher_path())?;
        let (train_raw, train) = self.load_prepared("train")?;
        let (_, val) = self.load_prepared("val")?;
        let dir = self.out_dir.join(format!("student-{}", variant.name()));
        std::fs::create_dir_all(&dir).map_err(Error::from)?;

        let table = pipeline::diversity_table(&self.settings, &train_raw);
        table.save(&self.out_dir.join("dataset").join("diversity.tsv"))?;

        let (student, logs) =
            pipeline::run_distill(&self.settings, &teacher, &train, &val, &table, variant)?;
        save_stack(&self.student_path(variant), &student)?;
        self.write_metrics_log(&dir, &logs)?;
        self.config.freeze(&dir)?;
        println!(
            "distill[{}]: {} epochs, val loss {:.6e} -> {:.6e}; checkpoint at {}",
            variant.name(),
            self.settings.student_epochs,
            logs[0].val,
            logs.last().unwrap().val,
            self.student_path(variant).display()
        );
        Ok(())
    }

    fn load_model(&self, model: Option<&Path>, variant: Variant) -> Result<(FlowStack, String), CliError> {
        let path = match model {
            Some(p) => p.to_path_buf(),
            None => {
                let student = self.student_path(variant);
                if student.exists() {
                    student
                } else {
                    self.teacher_path()
                }
            }
        };
        self.require(&path)?;
        let stack = load_stack(&path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        Ok((stack, stem))
    }

    pub fn sample(
        &self,
        model: Option<&Path>,
        variant: Variant,
        count: usize,
    ) -> Result<(), CliError> {
        let (stack, stem) = self.load_model(model, variant)?;
        let (test_raw, prepared) = self.load_prepared("test")?;
        let n = test_raw.samples.len();
        if n == 0 {
            return Err(CliError::Config("sample: empty test split".into()));
        }
        let indices: Vec<usize> = (0..count).map(|i| i % n).collect();
        let grids = pipeline::generate_responses(&stack, &prepared, &indices, &self.settings, 0)?;
        let samples: Vec<flowdistill_core::data::Sample> = indices
            .iter()
            .zip(grids)
            .map(|(&i, response)| flowdistill_core::data::Sample {
                condition: test_raw.samples[i].condition,
                response,
            })
            .collect();
        let dir = self.out_dir.join("samples");
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let path = dir.join(format!("{stem}-generated.zds"));
        write_dataset(
            &path,
            &Dataset {
                grid: self.settings.grid,
                samples,
            },
        )?;
        self.config.freeze(&dir)?;
        println!("sample: wrote {count} generated responses to {}", path.display());
        Ok(())
    }

    pub fn eval(
        &self,
        model: Option<&Path>,
        variant: Variant,
        self_check: bool,
        dump_channels: Option<&Path>,
    ) -> Result<(), CliError> {
        let (test_raw, prepared) = self.load_prepared("test")?;
        let (report, stem) = if self_check {
            (
                pipeline::self_check_report(&test_raw, &prepared, &self.settings)?,
                "self-check".to_string(),
            )
        } else {
            let (stack, stem) = self.load_model(model, variant)?;
            let report = pipeline::evaluate_model(&stack, &test_raw, &prepared, &self.settings)?;
            if let Some(csv_path) = dump_channels {
                let csv =
                    pipeline::channel_histogram_csv(&stack, &test_raw, &prepared, &self.settings)?;
                std::fs::write(csv_path, csv).map_err(Error::from)?;
            }
            (report, stem)
        };
        let dir = self.out_dir.join(format!("eval-{stem}"));
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let kv: String = report.kv_lines().iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(dir.join("report.kv"), kv).map_err(Error::from)?;
        std::fs::write(dir.join("report.txt"), report.text_table()).map_err(Error::from)?;
        self.config.freeze(&dir)?;
        print!("{}", report.text_table());
        Ok(())
    }

    pub fn bench(&self, assert_floor: bool) -> Result<(), CliError> {
        let (_, prepared) = self.load_prepared("test")?;
        // Benchmark trained checkpoints when available, otherwise randomized
        // stacks of the configured architecture (timings only depend on
        // shapes).
        let teacher_path = self.teacher_path();
        let (teacher, student, source) = if teacher_path.exists() {
            let teacher = load_stack(&teacher_path)?;
            let variant = Variant::parse(&self.config.loss.variant)?;
            let student_path = self.student_path(variant);
            let student = if student_path.exists() {
                load_stack(&student_path)?
            } else {
                let mut s = FlowStack::new_student_like(&teacher, self.settings.seed)?;
                s.randomize(0.3, self.settings.seed);
                s
            };
            (teacher, student, "checkpoints")
        } else {
            let s = &self.settings;
            let mut teacher = flow::build_stack(
                flow::FlowDirection::Maf,
                s.data_dim(),
                10,
                s.arch.layers,
                &s.arch.hidden,
                s.arch.spline_bins,
                s.arch.tail_bound,
                s.seed,
            )?;
            teacher.randomize(0.3, s.seed);
            let mut student = FlowStack::new_student_like(&teacher, s.seed)?;
            student.randomize(0.3, s.seed + 1);
            (teacher, student, "randomized stacks")
        };
        let result = pipeline::run_bench(&self.settings, &teacher, &student, &prepared)?;
        let dir = self.out_dir.join("bench");
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let mut lines = result.report_lines();
        lines.push(format!("model_source\t{source}"));
        let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(dir.join("bench.txt"), &text).map_err(Error::from)?;
        self.config.freeze(&dir)?;
        print!("{text}");
        let call_ratio = result.teacher_calls as f64 / result.student_calls as f64;
        println!(
            "call ratio {call_ratio:.0} (expected D = {}), speedup {:.1}x",
            result.data_dim, result.speedup
        );
        if assert_floor && result.speedup < self.config.evaluation.speedup_floor {
            return Err(CliError::BenchBelowFloor {
                speedup: result.speedup,
                floor: self.config.evaluation.speedup_floor,
            });
        }
        Ok(())
    }
}
