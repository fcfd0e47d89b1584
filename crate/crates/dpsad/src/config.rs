//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Keys starting with `manifest.`
//! are bookkeeping written by the tools themselves and are skipped, so a
//! manifest can be fed back in as a config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dpsad_core::diffusion::{Conditioning, Denoiser, NoiseSchedule};
use dpsad_core::eval::ClassifierConfig;
use dpsad_core::training::{NoiseSpec, TeacherPlan, TrainPlan};

use crate::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DPSAD_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    /// The versioned text format of [`crate::data::DatasetFile`].
    Dpsad,
    /// Plain numeric rows, last column a label.
    CsvLabeled,
    /// Plain numeric rows, no labels.
    Csv,
}

impl DataFormat {
    fn parse(s: &str) -> CliResult<Self> {
        match s {
            "dpsad" => Ok(Self::Dpsad),
            "csv-labeled" => Ok(Self::CsvLabeled),
            "csv" => Ok(Self::Csv),
            _ => Err(CliError::usage(format!("data_format must be dpsad, csv or csv-labeled, got '{s}'"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Dpsad => "dpsad",
            Self::CsvLabeled => "csv-labeled",
            Self::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> CliResult<NoiseSchedule> {
        Ok(NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub data_format: DataFormat,
    /// Pseudo-label unlabeled data into this many clusters; 0 uses the file's labels.
    pub clusters: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub schedule: ScheduleConfig,
    pub teacher: TeacherPlan,
    pub student: TrainPlan,
    /// Whether `privacy.sigma` or `privacy.epsilon` was given.
    pub noise_explicit: bool,
    /// Stop the student after this many iterations (leaving resume state).
    pub stop_after: Option<u64>,
    pub checkpoint_every: u64,
    /// Accountant inputs when no data is read.
    pub param_count: Option<u64>,
    pub data_dim: Option<usize>,
    pub num_classes: Option<usize>,
    pub classifier: ClassifierConfig,
}

const KEYS: &[&str] = &[
    "data",
    "data_format",
    "clusters",
    "seed",
    "out",
    "schedule.steps",
    "schedule.beta_start",
    "schedule.beta_end",
    "teacher.iterations",
    "teacher.batch_size",
    "teacher.lr",
    "teacher.label_dropout",
    "teacher.hidden",
    "teacher.time_dim",
    "teacher.heldout_fraction",
    "teacher.eval_every",
    "student.iterations",
    "student.batch_size",
    "student.lambda",
    "student.data_mse_weight",
    "student.lr",
    "student.lr_disc",
    "student.guidance",
    "student.hidden",
    "student.conditional",
    "student.stop_after",
    "student.checkpoint_every",
    "disc.hidden",
    "disc.conditional",
    "privacy.clip",
    "privacy.sigma",
    "privacy.epsilon",
    "privacy.delta",
    "account.param_count",
    "account.data_dim",
    "account.num_classes",
    "eval.iterations",
    "eval.batch_size",
    "eval.lr",
    "eval.hidden",
];

/// Raw key/value pairs in file order of last assignment.
pub fn parse_pairs(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.starts_with("manifest.") {
            continue;
        }
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::usage(format!("config '{key}': cannot parse '{v}'"))),
        }
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| CliError::usage(format!("config '{key}': cannot parse '{v}'"))))
            .transpose()
    }

    fn list(&self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::usage(format!("config '{key}': expected comma-separated sizes"))),
        }
    }

    fn flag(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(CliError::usage(format!("config '{key}': expected true or false, got '{v}'"))),
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parse config text and apply `key=value` overrides in order.
    pub fn from_text(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut map = parse_pairs(text)?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::usage(format!("override '{o}' is not key=value")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(CliError::usage(format!("unknown config key '{k}'")));
        }
        Self::from_fields(Fields { map })
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        let mut cfg = Self::from_text(&text, overrides)?;
        if let (Some(p), Some(data)) = (path, cfg.data.as_ref()) {
            if data.is_relative() {
                let base = p.parent().unwrap_or(Path::new(""));
                if !data.exists() && base.join(data).exists() {
                    cfg.data = Some(base.join(data));
                }
            }
        }
        Ok(cfg)
    }

    fn from_fields(f: Fields) -> CliResult<Self> {
        let td = TeacherPlan::default();
        let sd = TrainPlan::default();
        let seed = f.parse("seed", 0u64)?;
        let sigma: Option<f64> = f.opt("privacy.sigma")?;
        let epsilon: Option<f64> = f.opt("privacy.epsilon")?;
        let noise = match (sigma, epsilon) {
            (Some(s), None) => NoiseSpec::Sigma(s),
            (None, Some(e)) => NoiseSpec::TargetEpsilon(e),
            (Some(_), Some(_)) => return Err(CliError::usage("set exactly one of privacy.sigma and privacy.epsilon, not both")),
            (None, None) => sd.noise,
        };
        let out = match f.raw("out") {
            Some(p) => PathBuf::from(p),
            None => std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("dpsad-out")),
        };
        let cfg = Self {
            data: f.raw("data").map(PathBuf::from),
            data_format: DataFormat::parse(f.raw("data_format").unwrap_or("dpsad"))?,
            clusters: f.parse("clusters", 0)?,
            seed,
            out,
            schedule: ScheduleConfig {
                steps: f.parse("schedule.steps", 500)?,
                beta_start: f.parse("schedule.beta_start", 1e-4)?,
                beta_end: f.parse("schedule.beta_end", 0.028)?,
            },
            teacher: TeacherPlan {
                iterations: f.parse("teacher.iterations", td.iterations)?,
                batch_size: f.parse("teacher.batch_size", td.batch_size)?,
                lr: f.parse("teacher.lr", td.lr)?,
                label_dropout: f.parse("teacher.label_dropout", td.label_dropout)?,
                hidden: f.list("teacher.hidden", &td.hidden)?,
                time_dim: f.parse("teacher.time_dim", td.time_dim)?,
                heldout_fraction: f.parse("teacher.heldout_fraction", td.heldout_fraction)?,
                eval_every: f.parse("teacher.eval_every", td.eval_every)?,
                seed,
            },
            student: TrainPlan {
                iterations: f.parse("student.iterations", sd.iterations)?,
                batch_size: f.parse("student.batch_size", sd.batch_size)?,
                lambda: f.parse("student.lambda", sd.lambda)?,
                data_mse_weight: f.parse("student.data_mse_weight", sd.data_mse_weight)?,
                lr: f.parse("student.lr", sd.lr)?,
                lr_disc: f.parse("student.lr_disc", sd.lr_disc)?,
                guidance_w: f.parse("student.guidance", sd.guidance_w)?,
                clip: f.parse("privacy.clip", sd.clip)?,
                noise,
                delta: f.parse("privacy.delta", sd.delta)?,
                student_hidden: f.list("student.hidden", &sd.student_hidden)?,
                disc_hidden: f.list("disc.hidden", &sd.disc_hidden)?,
                student_conditional: f.flag("student.conditional", sd.student_conditional)?,
                disc_conditional: f.flag("disc.conditional", sd.disc_conditional)?,
                seed,
            },
            noise_explicit: sigma.is_some() || epsilon.is_some(),
            stop_after: f.opt("student.stop_after")?,
            checkpoint_every: f.parse("student.checkpoint_every", 0)?,
            param_count: f.opt("account.param_count")?,
            data_dim: f.opt("account.data_dim")?,
            num_classes: f.opt("account.num_classes")?,
            classifier: {
                let c = ClassifierConfig::default();
                ClassifierConfig {
                    hidden: f.list("eval.hidden", &c.hidden)?,
                    iterations: f.parse("eval.iterations", c.iterations)?,
                    batch_size: f.parse("eval.batch_size", c.batch_size)?,
                    lr: f.parse("eval.lr", c.lr)?,
                    seed,
                }
            },
        };
        cfg.student.validate()?;
        cfg.schedule.build()?;
        Ok(cfg)
    }

    /// The resolved noise setting; fails unless exactly one was configured.
    pub fn require_noise(&self) -> CliResult<NoiseSpec> {
        if !self.noise_explicit {
            return Err(CliError::usage("set exactly one of privacy.sigma and privacy.epsilon"));
        }
        Ok(self.student.noise)
    }

    /// The data file, which must exist.
    pub fn data_path(&self) -> CliResult<&Path> {
        let p = self.data.as_deref().ok_or_else(|| CliError::usage("config does not set 'data'"))?;
        if !p.is_file() {
            return Err(CliError::usage(format!("data file '{}' does not exist", p.display())));
        }
        Ok(p)
    }

    /// Parameter count `s` seen by the accountant: explicit, or from the
    /// student architecture implied by `account.data_dim`/`account.num_classes`.
    pub fn accounted_param_count(&self) -> CliResult<u64> {
        if let Some(s) = self.param_count {
            return Ok(s);
        }
        let d = self.data_dim.ok_or_else(|| {
            CliError::usage("accounting needs account.param_count, or account.data_dim and account.num_classes")
        })?;
        let k = if self.student.student_conditional { self.num_classes.unwrap_or(0) } else { 0 };
        let cond = Conditioning { time_dim: self.teacher.time_dim, num_classes: k };
        Ok(Denoiser::arch_for(d, cond, &self.student.student_hidden).param_count() as u64)
    }

    /// Canonical text with every key, usable as a config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        kv("data_format", self.data_format.name().into());
        kv("clusters", self.clusters.to_string());
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("schedule.steps", self.schedule.steps.to_string());
        kv("schedule.beta_start", format!("{:?}", self.schedule.beta_start));
        kv("schedule.beta_end", format!("{:?}", self.schedule.beta_end));
        let t = &self.teacher;
        kv("teacher.iterations", t.iterations.to_string());
        kv("teacher.batch_size", t.batch_size.to_string());
        kv("teacher.lr", format!("{:?}", t.lr));
        kv("teacher.label_dropout", format!("{:?}", t.label_dropout));
        kv("teacher.hidden", join(&t.hidden));
        kv("teacher.time_dim", t.time_dim.to_string());
        kv("teacher.heldout_fraction", format!("{:?}", t.heldout_fraction));
        kv("teacher.eval_every", t.eval_every.to_string());
        let p = &self.student;
        kv("student.iterations", p.iterations.to_string());
        kv("student.batch_size", p.batch_size.to_string());
        kv("student.lambda", format!("{:?}", p.lambda));
        kv("student.data_mse_weight", format!("{:?}", p.data_mse_weight));
        kv("student.lr", format!("{:?}", p.lr));
        kv("student.lr_disc", format!("{:?}", p.lr_disc));
        kv("student.guidance", format!("{:?}", p.guidance_w));
        kv("student.hidden", join(&p.student_hidden));
        kv("student.conditional", p.student_conditional.to_string());
        kv("student.stop_after", self.stop_after.map(|v| v.to_string()).unwrap_or_default());
        kv("student.checkpoint_every", self.checkpoint_every.to_string());
        kv("disc.hidden", join(&p.disc_hidden));
        kv("disc.conditional", p.disc_conditional.to_string());
        kv("privacy.clip", format!("{:?}", p.clip));
        match (self.noise_explicit, p.noise) {
            (false, _) => {}
            (true, NoiseSpec::Sigma(v)) => kv("privacy.sigma", format!("{v:?}")),
            (true, NoiseSpec::TargetEpsilon(v)) => kv("privacy.epsilon", format!("{v:?}")),
        }
        kv("privacy.delta", format!("{:?}", p.delta));
        kv("account.param_count", self.param_count.map(|v| v.to_string()).unwrap_or_default());
        kv("account.data_dim", self.data_dim.map(|v| v.to_string()).unwrap_or_default());
        kv("account.num_classes", self.num_classes.map(|v| v.to_string()).unwrap_or_default());
        kv("eval.iterations", self.classifier.iterations.to_string());
        kv("eval.batch_size", self.classifier.batch_size.to_string());
        kv("eval.lr", format!("{:?}", self.classifier.lr));
        kv("eval.hidden", join(&self.classifier.hidden));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let cfg = RunConfig::from_text(
            "data = x.txt # the data\nschedule.steps = 50\nprivacy.sigma = 2.5\nstudent.hidden = 8, 8\nout = o\n",
            &["seed=4".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.student.noise, NoiseSpec::Sigma(2.5));
        assert_eq!(cfg.student.student_hidden, vec![8, 8]);
        let again = RunConfig::from_text(&cfg.to_text(), &[]).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_conflicts_and_unknown_keys() {
        assert!(RunConfig::from_text("privacy.sigma = 1\nprivacy.epsilon = 1\n", &[]).is_err());
        assert!(RunConfig::from_text("nonsense = 1\n", &[]).is_err());
        assert!(RunConfig::from_text("privacy.delta = 1.5\n", &[]).is_err());
        assert!(RunConfig::from_text("seed = x\n", &[]).is_err());
        assert!(RunConfig::from_text("", &["privacy.clip".into()]).is_err());
    }

    #[test]
    fn manifest_keys_are_ignored() {
        let cfg = RunConfig::from_text("manifest.command = train-teacher\nout = o\n", &[]).unwrap();
        assert_eq!(cfg.out, PathBuf::from("o"));
    }
}
