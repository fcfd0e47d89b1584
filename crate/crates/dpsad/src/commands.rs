//! One function per subcommand. Each returns the paths it wrote.

use std::path::{Path, PathBuf};

use dpsad_core::dataset::LabeledDataset;
use dpsad_core::diffusion::{sample_reverse, Denoiser, GuidanceConfig, NoiseSchedule};
use dpsad_core::eval::MetricReport;
use dpsad_core::kmeans::pseudo_label;
use dpsad_core::privacy::{calibrate_sigma, total_epsilon, PrivacyParams, PrivacySpend};
use dpsad_core::rng::stream;
use dpsad_core::tensor::Tensor;
use dpsad_core::toy::eight_gaussians;
use dpsad_core::training::{train_teacher, NoiseSpec, StudentTrainer, TrainerCounters, TrainerState};

use crate::checkpoint::Container;
use crate::config::{DataFormat, RunConfig};
use crate::data::{read_csv, DatasetFile};
use crate::manifest::{Manifest, MetricsLog, Report};
use crate::{sha256_file, sha256_hex, CliError, CliResult};

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const STUDENT_STATE: &str = "student.state";
pub const STUDENT_METRICS: &str = "student.metrics";
pub const TEACHER_METRICS: &str = "teacher.metrics";
pub const PRIVACY_REPORT: &str = "privacy.report";

const SAMPLE_STREAM: u64 = 0x7361_6d70;

/// Training data with labels (from the file or from k-means) and its hash.
pub struct LoadedData {
    pub data: LabeledDataset,
    pub sha256: String,
    pub pseudo_labeled: bool,
}

pub fn load_training_data(cfg: &RunConfig) -> CliResult<LoadedData> {
    let path = cfg.data_path()?;
    let file = match cfg.data_format {
        DataFormat::Dpsad => DatasetFile::read(path)?,
        DataFormat::CsvLabeled => read_csv(path, true)?,
        DataFormat::Csv => read_csv(path, false)?,
    };
    let sha256 = sha256_file(path)?;
    if cfg.clusters > 0 {
        let (data, _) = pseudo_label(&file.x, cfg.clusters, cfg.seed)?;
        return Ok(LoadedData { data, sha256, pseudo_labeled: true });
    }
    if file.labels.is_none() {
        return Err(CliError::usage("data has no labels; set 'clusters' to pseudo-label it"));
    }
    Ok(LoadedData { data: file.labeled()?, sha256, pseudo_labeled: false })
}

fn schedule_hash(s: &NoiseSchedule) -> String {
    let bytes: Vec<u8> = s.betas().iter().flat_map(|b| b.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

/// A trained model with the schedule it runs on.
pub struct LoadedModel {
    pub kind: String,
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub guidance: f64,
    pub sha256: String,
}

pub fn load_model(path: &Path) -> CliResult<LoadedModel> {
    let c = Container::read(path)?;
    let kind = c.str("kind")?.to_string();
    if kind != "teacher" && kind != "student" {
        return Err(CliError::usage(format!("'{}' is a {kind} file, not a model checkpoint", path.display())));
    }
    Ok(LoadedModel {
        model: c.denoiser("model")?,
        schedule: c.schedule()?.0,
        guidance: c.f64("sample.guidance")?,
        kind,
        sha256: sha256_file(path)?,
    })
}

pub fn cmd_train_teacher(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let loaded = load_training_data(cfg)?;
    let schedule = cfg.schedule.build()?;
    let run = train_teacher(&loaded.data, &schedule, &cfg.teacher)?;

    let mut log = MetricsLog::new(&["iteration", "loss", "lr", "heldout"]);
    for r in &run.records {
        log.push(vec![r.iteration.to_string(), fmt(r.loss), fmt(r.lr), r.heldout.map(fmt).unwrap_or_default()]);
    }

    let mut c = Container::new();
    c.put_str("kind", "teacher");
    c.put_schedule(&schedule, cfg.schedule.beta_start, cfg.schedule.beta_end);
    c.put_denoiser("model", &run.teacher);
    c.put_f64("sample.guidance", cfg.student.guidance_w);
    c.put_str("data.sha256", &loaded.sha256);

    let ckpt = cfg.out.join(TEACHER_CKPT);
    let metrics = cfg.out.join(TEACHER_METRICS);
    c.write(&ckpt)?;
    log.write(&metrics)?;

    let mut m = Manifest::new("train-teacher", cfg);
    m.fact("data_sha256", &loaded.sha256);
    m.fact("pseudo_labeled", loaded.pseudo_labeled);
    m.fact("schedule_sha256", schedule_hash(&schedule));
    m.fact("param_count", run.teacher.params.len());
    m.output("checkpoint", &ckpt)?;
    m.output("metrics", &metrics)?;
    let manifest = cfg.out.join("teacher.manifest");
    m.write(&manifest)?;
    Ok(vec![ckpt, metrics, manifest])
}

fn save_state(path: &Path, st: &TrainerState, fingerprint: &str) -> CliResult<()> {
    let mut c = Container::new();
    c.put_str("kind", "student-state");
    c.put_str("fingerprint", fingerprint);
    c.put_u64("iteration", st.iteration);
    c.put_f64("sigma", st.sigma);
    c.put_params("student", &st.student);
    c.put_params("disc", &st.disc);
    c.put_opt("student_opt", &st.student_opt);
    c.put_opt("disc_opt", &st.disc_opt);
    for (i, s) in st.streams.iter().enumerate() {
        c.put(format!("stream.{i}"), crate::checkpoint::Value::Stream(*s));
    }
    c.put_u64("counters.noise_injections", st.counters.noise_injections);
    c.put_u64("counters.student_updates", st.counters.student_updates);
    c.put_u64("counters.disc_evals", st.counters.disc_evals_in_student_path);
    c.write(path)
}

fn load_state(path: &Path, fingerprint: &str) -> CliResult<TrainerState> {
    let c = Container::read(path)?;
    if c.str("kind")? != "student-state" {
        return Err(CliError::usage(format!("'{}' is not a student resume state", path.display())));
    }
    if c.str("fingerprint")? != fingerprint {
        return Err(CliError::usage("resume state was written by a different config, teacher or dataset"));
    }
    Ok(TrainerState {
        student: c.params("student")?,
        disc: c.params("disc")?,
        student_opt: c.opt("student_opt")?,
        disc_opt: c.opt("disc_opt")?,
        iteration: c.u64("iteration")?,
        sigma: c.f64("sigma")?,
        streams: [c.stream("stream.0")?, c.stream("stream.1")?, c.stream("stream.2")?, c.stream("stream.3")?],
        counters: TrainerCounters {
            noise_injections: c.u64("counters.noise_injections")?,
            student_updates: c.u64("counters.student_updates")?,
            disc_evals_in_student_path: c.u64("counters.disc_evals")?,
        },
    })
}

fn spend_report(spend: &PrivacySpend, p: &PrivacyParams, target: Option<f64>) -> Report {
    let mut r = Report::default();
    r.set("epsilon", fmt(spend.epsilon()));
    r.set("epsilon_raw", fmt(spend.epsilon_raw));
    r.set("best_order", fmt(spend.best_order));
    r.set("epsilon_rdp", fmt(spend.epsilon_rdp));
    r.set("delta", fmt(spend.delta));
    r.set("sigma", fmt(p.sigma));
    r.set("clip", fmt(p.clip));
    r.set("batch_size", p.batch_size);
    r.set("iterations", p.iterations);
    r.set("steps", p.steps);
    r.set("param_count", p.param_count);
    if let Some(t) = target {
        r.set("target_epsilon", fmt(t));
    }
    r
}

/// Outcome of `train-student`: finished, or stopped early with resume state.
#[derive(Debug, Clone, PartialEq)]
pub enum StudentOutcome {
    Finished(Vec<PathBuf>),
    Stopped { iteration: u64, state: PathBuf },
}

pub fn cmd_train_student(cfg: &RunConfig, teacher_path: &Path, resume: bool) -> CliResult<StudentOutcome> {
    let noise = cfg.require_noise()?;
    let teacher = load_model(teacher_path)?;
    if teacher.kind != "teacher" {
        return Err(CliError::usage(format!("'{}' is not a teacher checkpoint", teacher_path.display())));
    }
    let schedule = teacher.schedule.clone();
    if schedule != cfg.schedule.build()? {
        return Err(CliError::usage("config schedule differs from the teacher checkpoint's schedule"));
    }
    let loaded = load_training_data(cfg)?;
    if loaded.data.num_classes != teacher.model.cond.num_classes {
        return Err(CliError::usage(format!(
            "data has {} classes but the teacher was trained on {}",
            loaded.data.num_classes, teacher.model.cond.num_classes
        )));
    }
    let plan = cfg.student.clone();
    let resumable = RunConfig { stop_after: None, checkpoint_every: 0, ..cfg.clone() };
    let fingerprint = sha256_hex(format!("{}{}{}", resumable.to_text(), teacher.sha256, loaded.sha256).as_bytes());
    let state_path = cfg.out.join(STUDENT_STATE);
    let metrics_path = cfg.out.join(STUDENT_METRICS);
    let header = ["iteration", "r", "l_dis", "l_adv", "l_disc", "lr", "epsilon"];

    let (mut trainer, mut log) = if resume && state_path.is_file() {
        let state = load_state(&state_path, &fingerprint)?;
        let done = state.iteration;
        let t = StudentTrainer::restore(teacher.model.clone(), loaded.data, schedule.clone(), plan, state)?;
        let text = std::fs::read_to_string(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
        let mut log = MetricsLog::parse(&text)?;
        log.rows.retain(|r| r.first().and_then(|v| v.parse::<u64>().ok()).is_some_and(|i| i <= done));
        (t, log)
    } else {
        let t = StudentTrainer::new(teacher.model.clone(), loaded.data, schedule.clone(), plan)?;
        (t, MetricsLog::new(&header))
    };

    while !trainer.is_done() {
        let rec = trainer.step()?;
        log.push(vec![
            rec.iteration.to_string(),
            rec.r.to_string(),
            fmt(rec.l_dis),
            fmt(rec.l_adv),
            fmt(rec.l_disc),
            fmt(rec.lr),
            fmt(rec.epsilon),
        ]);
        let stop = cfg.stop_after == Some(rec.iteration) && !trainer.is_done();
        let periodic = cfg.checkpoint_every > 0 && rec.iteration % cfg.checkpoint_every == 0;
        if stop || periodic {
            save_state(&state_path, &trainer.state(), &fingerprint)?;
            log.write(&metrics_path)?;
        }
        if stop {
            return Ok(StudentOutcome::Stopped { iteration: rec.iteration, state: state_path });
        }
    }

    let run = trainer.finish(Vec::new())?;
    let privacy = PrivacyParams { sigma: run.sigma, ..cfg.student.privacy_params(&schedule, run.models.student.params.len(), run.sigma) };
    let target = match noise {
        NoiseSpec::TargetEpsilon(e) => Some(e),
        NoiseSpec::Sigma(_) => None,
    };
    let mut report = spend_report(&run.spend, &privacy, target);
    report.set("noise_injections", run.counters.noise_injections);

    let mut c = Container::new();
    c.put_str("kind", "student");
    let (_, b0, b1) = Container::read(teacher_path)?.schedule()?;
    c.put_schedule(&schedule, b0, b1);
    c.put_denoiser("model", &run.models.student);
    c.put_f64("sample.guidance", 0.0);
    c.put_f64("privacy.epsilon", run.spend.epsilon());
    c.put_f64("privacy.delta", run.spend.delta);
    c.put_f64("privacy.sigma", run.sigma);
    c.put_str("teacher.sha256", &teacher.sha256);

    let ckpt = cfg.out.join(STUDENT_CKPT);
    let report_path = cfg.out.join(PRIVACY_REPORT);
    c.write(&ckpt)?;
    log.write(&metrics_path)?;
    report.write(&report_path)?;

    let mut m = Manifest::new("train-student", cfg);
    m.fact("teacher_sha256", &teacher.sha256);
    m.fact("data_sha256", &loaded.sha256);
    m.fact("schedule_sha256", schedule_hash(&schedule));
    m.fact("sigma", fmt(run.sigma));
    m.output("checkpoint", &ckpt)?;
    m.output("metrics", &metrics_path)?;
    m.output("privacy", &report_path)?;
    let manifest = cfg.out.join("student.manifest");
    m.write(&manifest)?;
    Ok(StudentOutcome::Finished(vec![ckpt, metrics_path, report_path, manifest]))
}

/// Which labels to condition samples on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSpec {
    None,
    Balanced,
    Fixed(usize),
}

impl std::str::FromStr for LabelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "balanced" => Ok(Self::Balanced),
            _ => s.parse().map(Self::Fixed).map_err(|_| format!("label must be none, balanced or a class index, got '{s}'")),
        }
    }
}

pub fn cmd_sample(
    checkpoint: &Path,
    n: usize,
    label: Option<LabelSpec>,
    seed: u64,
    guidance: Option<f64>,
    out: &Path,
) -> CliResult<PathBuf> {
    let m = load_model(checkpoint)?;
    let k = m.model.cond.num_classes;
    let spec = label.unwrap_or(if k > 0 { LabelSpec::Balanced } else { LabelSpec::None });
    let labels: Option<Vec<usize>> = match spec {
        LabelSpec::None => None,
        LabelSpec::Balanced if k > 0 => Some((0..n).map(|i| i % k).collect()),
        LabelSpec::Fixed(y) if y < k => Some(vec![y; n]),
        _ => return Err(CliError::usage(format!("model has {k} classes; cannot sample with label {spec:?}"))),
    };
    let w = if labels.is_some() { guidance.unwrap_or(m.guidance) } else { 0.0 };
    let d = m.model.data_dim();
    let x = if n == 0 {
        Tensor::matrix(0, d, Vec::new())?
    } else {
        let mut rng = stream(seed, SAMPLE_STREAM);
        sample_reverse(&m.model, d, &m.schedule, GuidanceConfig::new(w)?, n, labels.as_deref(), &mut rng)?
    };
    let file = match labels {
        Some(l) => DatasetFile { labels: Some(l), num_classes: k, ..DatasetFile::unlabeled(x) },
        None => DatasetFile::unlabeled(x),
    }
    .with_provenance("source", format!("{} sha256:{}", m.kind, m.sha256))
    .with_provenance("seed", seed)
    .with_provenance("guidance", fmt(w))
    .with_provenance("steps", m.schedule.steps());
    file.write(out)?;
    Ok(out.to_path_buf())
}

/// Accounted spend for a config, without reading any data.
pub fn cmd_account(cfg: &RunConfig) -> CliResult<Report> {
    let noise = cfg.require_noise()?;
    let s = cfg.accounted_param_count()?;
    let steps = cfg.schedule.steps as u64;
    let mut p = PrivacyParams {
        clip: cfg.student.clip,
        sigma: 1.0,
        batch_size: cfg.student.batch_size as u64,
        iterations: cfg.student.iterations,
        steps,
        param_count: s,
        delta: cfg.student.delta,
    };
    let target = match noise {
        NoiseSpec::Sigma(sigma) => {
            p.sigma = sigma;
            None
        }
        NoiseSpec::TargetEpsilon(e) => {
            p.sigma = calibrate_sigma(e, &p)?;
            Some(e)
        }
    };
    let spend = total_epsilon(&p)?;
    Ok(spend_report(&spend, &p, target))
}

pub fn cmd_eval(samples: &Path, real_path: &Path, cfg: &RunConfig, out: &Path) -> CliResult<Report> {
    let synth = DatasetFile::read(samples)?;
    let real = DatasetFile::read(real_path)?;
    if synth.dim() != real.dim() {
        return Err(CliError::usage(format!("dimension mismatch: samples have {}, real data {}", synth.dim(), real.dim())));
    }
    let labeled = synth.labels.is_some() && real.labels.is_some();
    let as_labeled = |f: &DatasetFile| -> CliResult<LabeledDataset> {
        if labeled {
            f.labeled()
        } else {
            Ok(LabeledDataset::new(f.x.clone(), vec![0; f.rows()], 1)?)
        }
    };
    let metrics = MetricReport::compute(&as_labeled(&real)?, &as_labeled(&synth)?, labeled, &cfg.classifier)?;
    let mut r = Report::default();
    r.set("mmd", fmt(metrics.mmd));
    r.set("mmd_raw", fmt(metrics.mmd_raw));
    r.set("bandwidth", fmt(metrics.bandwidth));
    r.set("classifier_accuracy", metrics.classifier_accuracy.map(fmt).unwrap_or_else(|| "n/a".into()));
    r.set("n_real", metrics.n_real);
    r.set("n_synth", metrics.n_synth);
    r.set("samples_sha256", sha256_file(samples)?);
    r.set("real_sha256", sha256_file(real_path)?);
    r.write(out)?;
    Ok(r)
}

/// Write the eight-component ring mixture used by the toy experiments.
pub fn cmd_toy(n: usize, seed: u64, out: &Path) -> CliResult<PathBuf> {
    let data = eight_gaussians(n, seed);
    DatasetFile::from_labeled(&data)
        .with_provenance("source", "eight_gaussians")
        .with_provenance("seed", seed)
        .write(out)?;
    Ok(out.to_path_buf())
}
