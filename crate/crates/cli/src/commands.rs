//! One function per subcommand. Human-readable output goes to `out`, so the
//! binary and the tests share the same code path.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dts_core::distill::save_metrics_csv;
use dts_core::model::train_supervised;
use dts_core::verify::gradcheck::{run_suite, Perturbation};
use dts_core::{distill, evaluate, Dataset, DistillConfig, Mlp, SchedulerSpec};
use rayon::prelude::*;

use crate::config::{range_label, ExperimentConfig};
use crate::error::CliError;
use crate::report::{
    append_manifest, summary_table, write_eval, write_summary_csv, write_sweep_csv, Aggregate,
};

pub fn run_dir(output_dir: &Path, name: &str) -> PathBuf {
    output_dir.join("runs").join(name)
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn manifest_header(cfg: &ExperimentConfig) -> Vec<String> {
    let mut lines = vec![
        format!("name = {}", cfg.name),
        format!("seeds = {:?}", cfg.seeds),
        "config:".to_string(),
    ];
    lines.extend(cfg.to_toml().lines().map(|l| format!("    {l}")));
    lines
}

pub fn generate_data(cfg: &ExperimentConfig, zero_spread: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let data = cfg.dataset.materialise(zero_spread)?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("data.csv");
    data.save_csv(&path)?;
    let mut counts = vec![0usize; data.num_classes()];
    for &y in data.labels().as_slice() {
        counts[y] += 1;
    }
    let mut lines = manifest_header(cfg);
    lines.push(format!("zero_spread = {zero_spread}"));
    append_manifest(&cfg.output_dir, "generate-data", &lines)?;
    writeln!(out, "wrote {}", path.display())?;
    writeln!(
        out,
        "rows={} dim={} classes={} per_class={:?}",
        data.len(),
        data.dim(),
        data.num_classes(),
        counts
    )?;
    Ok(())
}

pub fn train_teacher(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (train, test) = cfg.dataset.train_test()?;
    let t = &cfg.teacher;
    let mut model = Mlp::new(&t.layers, t.seed)?;
    let records = train_supervised(&mut model, &train, &t.optimizer.with_seed(t.seed))?;

    let dir = run_dir(&cfg.output_dir, "teacher");
    create_dir(&dir)?;
    model.save(dir.join("model.bin"))?;
    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    if records.is_empty() {
        w.write_record(["epoch", "lr", "mean_ce", "train_accuracy"])?;
    }
    for r in &records {
        w.serialize(r)?;
    }
    w.flush()?;
    let (tr, te) = (evaluate(&model, &train)?, evaluate(&model, &test)?);
    write_eval(&dir.join("eval.csv"), tr, te)?;

    let mut lines = manifest_header(cfg);
    lines.push(format!("teacher_optimizer: {}", t.optimizer.describe()));
    append_manifest(&cfg.output_dir, "train-teacher", &lines)?;
    writeln!(
        out,
        "teacher {:?}: train_accuracy={:.4} test_accuracy={:.4}",
        t.layers, tr.0, te.0
    )?;
    writeln!(out, "checkpoint {}", dir.join("model.bin").display())?;
    Ok(())
}

fn load_teacher(cfg: &ExperimentConfig) -> Result<Mlp, CliError> {
    let path = cfg.teacher_checkpoint();
    if !path.exists() {
        return Err(CliError::Runtime(format!(
            "teacher checkpoint {} not found; run train-teacher first",
            path.display()
        )));
    }
    let teacher = Mlp::load(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if teacher.layer_sizes() != cfg.teacher.layers.as_slice() {
        return Err(CliError::Runtime(format!(
            "{}: layer sizes {:?} do not match the configured {:?}",
            path.display(),
            teacher.layer_sizes(),
            cfg.teacher.layers
        )));
    }
    Ok(teacher)
}

struct Shared {
    teacher: Mlp,
    train: Dataset,
    test: Dataset,
}

impl Shared {
    fn load(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let teacher = load_teacher(cfg)?;
        let (train, test) = cfg.dataset.train_test()?;
        Ok(Self { teacher, train, test })
    }
}

/// Distils one student and writes its run directory; returns test accuracy.
fn student_run(
    cfg: &ExperimentConfig,
    shared: &Shared,
    name: &str,
    config: &DistillConfig,
    seed: u64,
) -> Result<f64, CliError> {
    let mut student = Mlp::new(&cfg.student.layers, seed)?;
    let records = distill(&shared.teacher, &mut student, &shared.train, config)?;
    let dir = run_dir(&cfg.output_dir, name);
    create_dir(&dir)?;
    save_metrics_csv(&records, dir.join("metrics.csv"))?;
    student.save(dir.join("model.bin"))?;
    let test = evaluate(&student, &shared.test)?;
    write_eval(&dir.join("eval.csv"), evaluate(&student, &shared.train)?, test)?;
    Ok(test.0)
}

pub fn seed_run_name(label: &str, seed: u64) -> String {
    format!("{label}-seed{seed}")
}

/// Runs every `(row, seed)` job in parallel and folds the results per row.
fn run_grid(
    cfg: &ExperimentConfig,
    shared: &Shared,
    rows: &[(String, DistillConfig)],
    prefix: &str,
) -> Vec<Aggregate> {
    let jobs: Vec<(usize, u64)> = (0..rows.len())
        .flat_map(|r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let results: Vec<Result<f64, CliError>> = jobs
        .par_iter()
        .map(|&(r, seed)| {
            let (label, base) = &rows[r];
            let mut config = base.clone();
            config.sgd.seed = seed;
            student_run(cfg, shared, &seed_run_name(&format!("{prefix}{label}"), seed), &config, seed)
        })
        .collect();
    let mut out: Vec<Aggregate> = rows
        .iter()
        .map(|(label, _)| Aggregate {
            name: label.clone(),
            accuracies: Vec::new(),
            failures: Vec::new(),
        })
        .collect();
    for ((r, seed), result) in jobs.into_iter().zip(results) {
        match result {
            Ok(acc) => out[r].accuracies.push(acc),
            Err(e) => out[r].failures.push((seed, e.to_string())),
        }
    }
    out
}

fn failures_to_error(rows: &[Aggregate]) -> Result<(), CliError> {
    let failed: usize = rows.iter().map(|r| r.failures.len()).sum();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} run(s) failed; see the table above")));
    }
    Ok(())
}

pub fn distill_cmd(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let shared = Shared::load(cfg)?;
    let label = cfg.distill.scheduler.label();
    let base = cfg.distill.build(cfg.distill.scheduler.clone(), cfg.distill.kd_weight, cfg.distill.ce_weight, 0);
    let rows = run_grid(cfg, &shared, &[(label, base)], "");
    write!(out, "{}", summary_table(&rows, "scheduler"))?;
    let mut lines = manifest_header(cfg);
    lines.push(format!("distill_optimizer: {}", cfg.distill.optimizer.describe()));
    append_manifest(&cfg.output_dir, "distill", &lines)?;
    failures_to_error(&rows)
}

pub fn compare(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    if cfg.compare.is_empty() {
        return Err(CliError::Config("compare needs at least one [[compare]] entry".into()));
    }
    let shared = Shared::load(cfg)?;
    let rows: Vec<(String, DistillConfig)> = cfg
        .compare
        .iter()
        .map(|e| (e.label(), cfg.entry_config(e, 0)))
        .collect();
    let agg = run_grid(cfg, &shared, &rows, "");
    write_summary_csv(&cfg.output_dir.join("summary.csv"), &agg)?;
    let table = summary_table(&agg, "scheduler");
    fs::write(cfg.output_dir.join("summary.txt"), &table)?;

    let mut lines = manifest_header(cfg);
    for (label, c) in &rows {
        lines.push(format!(
            "entry {label}: kd_weight={} ce_weight={} {}",
            c.kd_weight,
            c.ce_weight,
            cfg.distill.optimizer.describe()
        ));
    }
    append_manifest(&cfg.output_dir, "compare", &lines)?;
    write!(out, "{table}")?;
    failures_to_error(&agg)
}

pub fn sweep(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let shared = Shared::load(cfg)?;
    let d = &cfg.distill;
    let rows: Vec<(String, DistillConfig)> = cfg
        .sweep
        .params()
        .into_iter()
        .map(|p| {
            let label = range_label(p.t_max, p.t_min);
            (label, d.build(SchedulerSpec::Dts(p), d.kd_weight, d.ce_weight, 0))
        })
        .collect();
    let agg = run_grid(cfg, &shared, &rows, "sweep-");
    write_sweep_csv(&cfg.output_dir.join("sweep.csv"), &agg)?;
    let table = summary_table(&agg, "range");
    fs::write(cfg.output_dir.join("sweep.txt"), &table)?;

    let mut lines = manifest_header(cfg);
    for (label, c) in &rows {
        lines.push(format!(
            "range {label}: kd_weight={} ce_weight={} mu={} {}",
            c.kd_weight,
            c.ce_weight,
            cfg.sweep.mu,
            d.optimizer.describe()
        ));
    }
    append_manifest(&cfg.output_dir, "sweep", &lines)?;
    write!(out, "{table}")?;
    failures_to_error(&agg)
}

pub fn grad_check(
    seed: u64,
    instances: usize,
    perturb: Option<f64>,
    output_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let hook = perturb.map_or(Perturbation::None, Perturbation::Scale);
    let reports = run_suite(seed, instances, hook)?;
    let text: String = reports.iter().map(|r| format!("{r}\n")).collect();
    write!(out, "{text}")?;
    if let Some(dir) = output_dir {
        create_dir(dir)?;
        fs::write(dir.join("grad_check.txt"), &text)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}
