//! Pipeline configuration: flat `key = value` files with `[sections]`,
//! `WARDSENSE_<SECTION>_<KEY>` environment overrides, and command-line
//! flags, applied in that order. Validation collects every problem before
//! failing so a bad config is reported in one pass.

use crate::failure::Failure;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use wardsense_core::actigraphy::ActigraphyConfig;
use wardsense_core::environs::{DisruptionConfig, EnvConfig, SplAveraging};
use wardsense_core::facs::{AuPolicy, EvalConfig};
use wardsense_core::ingest::{ParsePolicy, Site, DEFAULT_ANCHOR_HOUR};
use wardsense_core::stats::{CompareConfig, MethodChoice};

/// Non-maximum-suppression applied before detector scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmsChoice {
    None,
    Proposal,
    Refine,
    Output,
}

impl NmsChoice {
    pub fn threshold(self) -> Option<f64> {
        use wardsense_core::deteval::NmsPreset;
        match self {
            NmsChoice::None => None,
            NmsChoice::Proposal => Some(NmsPreset::Proposal.threshold()),
            NmsChoice::Refine => Some(NmsPreset::Refine.threshold()),
            NmsChoice::Output => Some(NmsPreset::Output.threshold()),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NmsChoice::None => "none",
            NmsChoice::Proposal => "proposal",
            NmsChoice::Refine => "refine",
            NmsChoice::Output => "output",
        }
    }
}

/// Every tunable of the pipeline, resolved from defaults, file, env, flags.
#[derive(Debug, Clone)]
pub struct Config {
    // [io]
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Cohort membership table; defaults to `<data_dir>/groups.csv`.
    pub groups_file: Option<PathBuf>,
    // [pipeline]
    pub anchor_hour: u32,
    pub strict: bool,
    /// Worker threads; 0 means the logical CPU count.
    pub jobs: usize,
    pub seed: u64,
    // [actigraphy]
    pub loess_span: f64,
    pub loess_degree: usize,
    pub coverage_fraction: f64,
    pub curve_site: Site,
    // [facs]
    pub intensity_threshold: f64,
    pub trace_threshold: f64,
    pub au_policy: AuPolicy,
    pub rules_file: Option<PathBuf>,
    // [posture]
    pub knn_k: usize,
    pub impute_k: usize,
    pub minkowski_p: f64,
    pub test_fraction: f64,
    pub model_file: Option<PathBuf>,
    // [deteval]
    pub iou_threshold: f64,
    pub nms: NmsChoice,
    pub match_threshold: f64,
    // [environment]
    pub spl_mean: SplAveraging,
    pub assume_present: bool,
    // [stats]
    pub alpha: f64,
    pub method: MethodChoice,
    pub compare_site: Site,
    // [simulate]
    pub sim_groups: Vec<String>,
    pub patients_per_group: u32,
    pub days: u32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: None,
            out_dir: None,
            groups_file: None,
            anchor_hour: DEFAULT_ANCHOR_HOUR,
            strict: false,
            jobs: 0,
            seed: 0,
            loess_span: 0.3,
            loess_degree: 1,
            coverage_fraction: 0.5,
            curve_site: Site::Wrist,
            intensity_threshold: 1.0,
            trace_threshold: 0.5,
            au_policy: AuPolicy::Lenient,
            rules_file: None,
            knn_k: 1,
            impute_k: 3,
            minkowski_p: 2.0,
            test_fraction: 0.25,
            model_file: None,
            iou_threshold: 0.5,
            nms: NmsChoice::None,
            match_threshold: 0.9,
            spl_mean: SplAveraging::Energy,
            assume_present: true,
            alpha: 0.05,
            method: MethodChoice::Auto,
            compare_site: Site::Wrist,
            sim_groups: vec!["delirious".to_string(), "non_delirious".to_string()],
            patients_per_group: 10,
            days: 3,
        }
    }
}

/// Every `(section, key)` the schema knows, for env-override matching and
/// unknown-key diagnostics.
const KEYS: &[(&str, &str)] = &[
    ("io", "data_dir"),
    ("io", "out_dir"),
    ("io", "groups_file"),
    ("pipeline", "anchor_hour"),
    ("pipeline", "strict"),
    ("pipeline", "jobs"),
    ("pipeline", "seed"),
    ("actigraphy", "loess_span"),
    ("actigraphy", "loess_degree"),
    ("actigraphy", "coverage_fraction"),
    ("actigraphy", "curve_site"),
    ("facs", "intensity_threshold"),
    ("facs", "trace_threshold"),
    ("facs", "au_policy"),
    ("facs", "rules_file"),
    ("posture", "knn_k"),
    ("posture", "impute_k"),
    ("posture", "minkowski_p"),
    ("posture", "test_fraction"),
    ("posture", "model_file"),
    ("deteval", "iou_threshold"),
    ("deteval", "nms"),
    ("deteval", "match_threshold"),
    ("environment", "spl_mean"),
    ("environment", "assume_present"),
    ("stats", "alpha"),
    ("stats", "method"),
    ("stats", "site"),
    ("simulate", "groups"),
    ("simulate", "patients_per_group"),
    ("simulate", "days"),
];

fn parse_num<T: std::str::FromStr>(
    value: &str,
    what: &str,
    at: &str,
    errors: &mut Vec<String>,
) -> Option<T> {
    match value.parse::<T>() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{at}: expected {what}, got `{value}`"));
            None
        }
    }
}

fn parse_bool(value: &str, at: &str, errors: &mut Vec<String>) -> Option<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => {
            errors.push(format!("{at}: expected true/false, got `{value}`"));
            None
        }
    }
}

impl Config {
    /// Apply one `section.key = value` assignment; `at` names the source
    /// for error messages.
    fn set(&mut self, section: &str, key: &str, value: &str, at: &str, errors: &mut Vec<String>) {
        match (section, key) {
            ("io", "data_dir") => self.data_dir = Some(PathBuf::from(value)),
            ("io", "out_dir") => self.out_dir = Some(PathBuf::from(value)),
            ("io", "groups_file") => self.groups_file = Some(PathBuf::from(value)),
            ("pipeline", "anchor_hour") => {
                if let Some(v) = parse_num::<u32>(value, "an hour 0-23", at, errors) {
                    self.anchor_hour = v;
                }
            }
            ("pipeline", "strict") => {
                if let Some(v) = parse_bool(value, at, errors) {
                    self.strict = v;
                }
            }
            ("pipeline", "jobs") => {
                if let Some(v) = parse_num::<usize>(value, "a thread count", at, errors) {
                    self.jobs = v;
                }
            }
            ("pipeline", "seed") => {
                if let Some(v) = parse_num::<u64>(value, "an unsigned seed", at, errors) {
                    self.seed = v;
                }
            }
            ("actigraphy", "loess_span") => {
                if let Some(v) = parse_num::<f64>(value, "a number", at, errors) {
                    self.loess_span = v;
                }
            }
            ("actigraphy", "loess_degree") => {
                if let Some(v) = parse_num::<usize>(value, "0, 1 or 2", at, errors) {
                    self.loess_degree = v;
                }
            }
            ("actigraphy", "coverage_fraction") => {
                if let Some(v) = parse_num::<f64>(value, "a fraction", at, errors) {
                    self.coverage_fraction = v;
                }
            }
            ("actigraphy", "curve_site") | ("stats", "site") => match Site::from_str(value) {
                Some(site) if key == "curve_site" => self.curve_site = site,
                Some(site) => self.compare_site = site,
                None => errors.push(format!("{at}: expected wrist/arm/ankle, got `{value}`")),
            },
            ("facs", "intensity_threshold") => {
                if let Some(v) = parse_num::<f64>(value, "a number", at, errors) {
                    self.intensity_threshold = v;
                }
            }
            ("facs", "trace_threshold") => {
                if let Some(v) = parse_num::<f64>(value, "a number", at, errors) {
                    self.trace_threshold = v;
                }
            }
            ("facs", "au_policy") => match value {
                "strict" => self.au_policy = AuPolicy::Strict,
                "lenient" => self.au_policy = AuPolicy::Lenient,
                _ => errors.push(format!("{at}: expected strict/lenient, got `{value}`")),
            },
            ("facs", "rules_file") => self.rules_file = Some(PathBuf::from(value)),
            ("posture", "knn_k") => {
                if let Some(v) = parse_num::<usize>(value, "a neighbor count", at, errors) {
                    self.knn_k = v;
                }
            }
            ("posture", "impute_k") => {
                if let Some(v) = parse_num::<usize>(value, "a donor count", at, errors) {
                    self.impute_k = v;
                }
            }
            ("posture", "minkowski_p") => {
                if let Some(v) = parse_num::<f64>(value, "an order >= 1", at, errors) {
                    self.minkowski_p = v;
                }
            }
            ("posture", "test_fraction") => {
                if let Some(v) = parse_num::<f64>(value, "a fraction in (0,1)", at, errors) {
                    self.test_fraction = v;
                }
            }
            ("posture", "model_file") => self.model_file = Some(PathBuf::from(value)),
            ("deteval", "iou_threshold") => {
                if let Some(v) = parse_num::<f64>(value, "a fraction", at, errors) {
                    self.iou_threshold = v;
                }
            }
            ("deteval", "nms") => match value {
                "none" => self.nms = NmsChoice::None,
                "proposal" => self.nms = NmsChoice::Proposal,
                "refine" => self.nms = NmsChoice::Refine,
                "output" => self.nms = NmsChoice::Output,
                _ => errors.push(format!(
                    "{at}: expected none/proposal/refine/output, got `{value}`"
                )),
            },
            ("deteval", "match_threshold") => {
                if let Some(v) = parse_num::<f64>(value, "a fraction", at, errors) {
                    self.match_threshold = v;
                }
            }
            ("environment", "spl_mean") => match value {
                "energy" => self.spl_mean = SplAveraging::Energy,
                "arithmetic" => self.spl_mean = SplAveraging::Arithmetic,
                _ => errors.push(format!("{at}: expected energy/arithmetic, got `{value}`")),
            },
            ("environment", "assume_present") => {
                if let Some(v) = parse_bool(value, at, errors) {
                    self.assume_present = v;
                }
            }
            ("stats", "alpha") => {
                if let Some(v) = parse_num::<f64>(value, "a significance level", at, errors) {
                    self.alpha = v;
                }
            }
            ("stats", "method") => match value {
                "auto" => self.method = MethodChoice::Auto,
                "exact" => self.method = MethodChoice::Exact,
                "normal" => self.method = MethodChoice::Normal,
                _ => errors.push(format!("{at}: expected auto/exact/normal, got `{value}`")),
            },
            ("simulate", "groups") => {
                self.sim_groups = value.split(',').map(|s| s.trim().to_string()).collect();
            }
            ("simulate", "patients_per_group") => {
                if let Some(v) = parse_num::<u32>(value, "a patient count", at, errors) {
                    self.patients_per_group = v;
                }
            }
            ("simulate", "days") => {
                if let Some(v) = parse_num::<u32>(value, "a day count", at, errors) {
                    self.days = v;
                }
            }
            _ => errors.push(format!("{at}: unknown key [{section}] {key}")),
        }
    }

    /// Range checks over the resolved values; every violation is reported.
    fn validate(&self, errors: &mut Vec<String>) {
        if self.anchor_hour >= 24 {
            errors.push(format!(
                "[pipeline] anchor_hour: {} outside [0, 24)",
                self.anchor_hour
            ));
        }
        if !(self.loess_span > 0.0 && self.loess_span <= 1.0) {
            errors.push(format!(
                "[actigraphy] loess_span: {} outside (0, 1]",
                self.loess_span
            ));
        }
        if self.loess_degree > 2 {
            errors.push(format!(
                "[actigraphy] loess_degree: {} exceeds 2",
                self.loess_degree
            ));
        }
        if !(0.0..=1.0).contains(&self.coverage_fraction) {
            errors.push(format!(
                "[actigraphy] coverage_fraction: {} outside [0, 1]",
                self.coverage_fraction
            ));
        }
        if !(0.0..=5.0).contains(&self.intensity_threshold) {
            errors.push(format!(
                "[facs] intensity_threshold: {} outside the 0-5 intensity scale",
                self.intensity_threshold
            ));
        }
        if !(self.trace_threshold >= 0.0 && self.trace_threshold <= self.intensity_threshold) {
            errors.push(format!(
                "[facs] trace_threshold: {} outside [0, intensity_threshold]",
                self.trace_threshold
            ));
        }
        if self.knn_k == 0 {
            errors.push("[posture] knn_k: must be at least 1".to_string());
        }
        if self.impute_k == 0 {
            errors.push("[posture] impute_k: must be at least 1".to_string());
        }
        if !(self.minkowski_p >= 1.0) {
            errors.push(format!(
                "[posture] minkowski_p: {} below 1",
                self.minkowski_p
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            errors.push(format!(
                "[posture] test_fraction: {} outside (0, 1)",
                self.test_fraction
            ));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            errors.push(format!(
                "[deteval] iou_threshold: {} outside (0, 1]",
                self.iou_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            errors.push(format!(
                "[deteval] match_threshold: {} outside [0, 1]",
                self.match_threshold
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            errors.push(format!("[stats] alpha: {} outside (0, 1)", self.alpha));
        }
        if self.sim_groups.is_empty() {
            errors.push("[simulate] groups: at least one preset required".to_string());
        }
        for name in &self.sim_groups {
            if wardsense_core::simulator::preset(name).is_err() {
                errors.push(format!(
                    "[simulate] groups: unknown preset `{name}` (expected delirious or non_delirious)"
                ));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &self.sim_groups {
            if !seen.insert(name) {
                errors.push(format!("[simulate] groups: `{name}` listed twice"));
            }
        }
        if self.patients_per_group == 0 {
            errors.push("[simulate] patients_per_group: must be at least 1".to_string());
        }
        if self.days == 0 {
            errors.push("[simulate] days: must be at least 1".to_string());
        }
    }

    pub fn parse_policy(&self) -> ParsePolicy {
        if self.strict {
            ParsePolicy::Strict
        } else {
            ParsePolicy::Lenient
        }
    }

    pub fn actigraphy_config(&self) -> ActigraphyConfig {
        ActigraphyConfig {
            coverage_fraction: self.coverage_fraction,
            ..ActigraphyConfig::default()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            intensity_threshold: self.intensity_threshold,
            trace_threshold: self.trace_threshold,
            policy: self.au_policy,
            ..EvalConfig::default()
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            averaging: self.spl_mean,
            ..EnvConfig::default()
        }
    }

    pub fn disruption_config(&self) -> DisruptionConfig {
        DisruptionConfig {
            assume_patient_present: self.assume_present,
            anchor_hour: self.anchor_hour,
        }
    }

    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            alpha: self.alpha,
            method: self.method,
        }
    }

    /// The data tree root: positional argument, else `[io] data_dir`.
    pub fn data_dir(&self, positional: Option<PathBuf>) -> Result<PathBuf, Failure> {
        positional
            .or_else(|| self.data_dir.clone())
            .ok_or_else(|| Failure::config("no data directory: pass DATA_DIR or set [io] data_dir"))
    }

    /// The artifact directory: `--out`, else `[io] out_dir`.
    pub fn out_dir(&self) -> Result<&Path, Failure> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Failure::config("no output directory: pass --out or set [io] out_dir"))
    }

    /// Posture model path: `--model`, else `[posture] model_file`.
    pub fn model_file(&self, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
        flag.or_else(|| self.model_file.clone()).ok_or_else(|| {
            Failure::config("no model file: pass --model or set [posture] model_file")
        })
    }

    /// Hash of every *semantic* parameter. Paths and the worker count are
    /// excluded: they change where data comes from or how fast it is
    /// processed, never what is computed — input identity is captured by
    /// the manifest's input digests instead.
    pub fn semantic_hash(&self) -> String {
        let mut canon = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(canon, "{k}={v}");
        };
        put("pipeline.anchor_hour", self.anchor_hour.to_string());
        put("pipeline.strict", self.strict.to_string());
        put("pipeline.seed", self.seed.to_string());
        put("actigraphy.loess_span", self.loess_span.to_string());
        put("actigraphy.loess_degree", self.loess_degree.to_string());
        put(
            "actigraphy.coverage_fraction",
            self.coverage_fraction.to_string(),
        );
        put("actigraphy.curve_site", self.curve_site.to_string());
        put(
            "facs.intensity_threshold",
            self.intensity_threshold.to_string(),
        );
        put("facs.trace_threshold", self.trace_threshold.to_string());
        put(
            "facs.au_policy",
            match self.au_policy {
                AuPolicy::Strict => "strict".to_string(),
                AuPolicy::Lenient => "lenient".to_string(),
            },
        );
        put("posture.knn_k", self.knn_k.to_string());
        put("posture.impute_k", self.impute_k.to_string());
        put("posture.minkowski_p", self.minkowski_p.to_string());
        put("posture.test_fraction", self.test_fraction.to_string());
        put("deteval.iou_threshold", self.iou_threshold.to_string());
        put("deteval.nms", self.nms.as_str().to_string());
        put("deteval.match_threshold", self.match_threshold.to_string());
        put(
            "environment.spl_mean",
            match self.spl_mean {
                SplAveraging::Energy => "energy".to_string(),
                SplAveraging::Arithmetic => "arithmetic".to_string(),
            },
        );
        put(
            "environment.assume_present",
            self.assume_present.to_string(),
        );
        put("stats.alpha", self.alpha.to_string());
        put(
            "stats.method",
            match self.method {
                MethodChoice::Auto => "auto".to_string(),
                MethodChoice::Exact => "exact".to_string(),
                MethodChoice::Normal => "normal".to_string(),
            },
        );
        put("stats.site", self.compare_site.to_string());
        put("simulate.groups", self.sim_groups.join(","));
        put(
            "simulate.patients_per_group",
            self.patients_per_group.to_string(),
        );
        put("simulate.days", self.days.to_string());
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// Parse a config file into `(section, key, value)` entries; syntax
/// problems are collected, not short-circuited.
fn parse_entries(text: &str, file: &str, errors: &mut Vec<String>) -> Vec<(String, String, String)> {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            match name.strip_suffix(']') {
                Some(name) if !name.trim().is_empty() => {
                    section = name.trim().to_string();
                }
                _ => errors.push(format!("{file}:{lineno}: malformed section header `{raw}`")),
            }
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                if section.is_empty() {
                    errors.push(format!(
                        "{file}:{lineno}: key `{}` appears before any [section]",
                        key.trim()
                    ));
                } else {
                    entries.push((
                        section.clone(),
                        key.trim().to_string(),
                        value.trim().to_string(),
                    ));
                }
            }
            None => errors.push(format!(
                "{file}:{lineno}: expected `key = value`, got `{raw}`"
            )),
        }
    }
    entries
}

fn env_var_name(section: &str, key: &str) -> String {
    format!(
        "WARDSENSE_{}_{}",
        section.to_ascii_uppercase(),
        key.to_ascii_uppercase()
    )
}

/// Resolve the full configuration. Order: defaults, then `--config` file,
/// then `WARDSENSE_*` environment overrides, then command-line flags.
pub fn resolve(
    config_path: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
    strict: bool,
    jobs: Option<usize>,
) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    let mut errors = Vec::new();

    if let Some(path) = config_path {
        let file = path.display().to_string();
        match std::fs::read_to_string(path) {
            Ok(text) => {
                for (section, key, value) in parse_entries(&text, &file, &mut errors) {
                    let at = format!("{file}: [{section}] {key}");
                    cfg.set(&section, &key, &value, &at, &mut errors);
                }
            }
            Err(e) => errors.push(format!("cannot read config file {file}: {e}")),
        }
    }

    for (name, value) in std::env::vars() {
        let Some(rest) = name.strip_prefix("WARDSENSE_") else {
            continue;
        };
        match KEYS
            .iter()
            .find(|(section, key)| env_var_name(section, key) == name)
        {
            Some((section, key)) => {
                let at = format!("environment {name}");
                cfg.set(section, key, &value, &at, &mut errors);
            }
            None => errors.push(format!(
                "environment WARDSENSE_{rest}: matches no configuration key"
            )),
        }
    }

    if let Some(out) = out {
        cfg.out_dir = Some(out.to_path_buf());
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if strict {
        cfg.strict = true;
    }
    if let Some(jobs) = jobs {
        if jobs == 0 {
            errors.push("--jobs: must be at least 1".to_string());
        } else {
            cfg.jobs = jobs;
        }
    }

    cfg.validate(&mut errors);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Failure::Config(errors))
    }
}
