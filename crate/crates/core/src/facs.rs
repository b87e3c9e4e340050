//! Rule-based facial-expression detection over action-unit frames.
//!
//! Rules are conjunctions of disjunction groups over action units, written
//! `Name: 4+6||7+9||10+43` — `+` separates required groups, `||` separates
//! alternatives within a group. A term may carry an `R`/`L` laterality
//! prefix and an `A` (trace-intensity) suffix. Binary-coded AUs activate on
//! presence; intensity-coded AUs on a configurable threshold (trace terms on
//! a lower one). Expression frequency is detected frames over evaluated
//! frames, where evaluated means detection succeeded and the frame fell in
//! the daytime segment.

use crate::ingest::{day_anchor, slot_within, AuFrame, SLOTS_PER_SEGMENT};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FacsError {
    #[error("rule parse error at byte {offset}: {problem}")]
    Parse { offset: usize, problem: String },
    #[error("duplicate expression name `{0}`")]
    DuplicateRuleName(String),
    #[error("rule `{rule}` references AU{au:02}, which this frame does not carry (strict policy)")]
    UnavailableAu { rule: String, au: u8 },
    #[error("no evaluated frames (successful daytime detections)")]
    NoFrames,
}

/// How evaluation treats a rule term whose action unit is absent from a
/// frame. The default is lenient: rules routinely reference AUs the
/// upstream extractor never emits, and those terms are skipped with a log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuPolicy {
    Strict,
    Lenient,
}

impl Default for AuPolicy {
    fn default() -> Self {
        AuPolicy::Lenient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// One action-unit reference inside a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Term {
    pub au: u8,
    /// Laterality prefix. Unilateral activation is approximated as
    /// bilateral (the plain AU channel); see [`FrequencyReport`].
    pub side: Option<Side>,
    /// `A` suffix: activate at the trace-intensity threshold.
    pub trace: bool,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.side {
            Some(Side::Right) => write!(f, "R")?,
            Some(Side::Left) => write!(f, "L")?,
            None => {}
        }
        write!(f, "{}", self.au)?;
        if self.trace {
            write!(f, "A")?;
        }
        Ok(())
    }
}

/// Alternatives, any one of which satisfies the group.
pub type Clause = Vec<Term>;

/// A named expression rule: every clause must be satisfied.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionRule {
    pub name: String,
    pub clauses: Vec<Clause>,
}

/// Canonical text of a rule; `compile_rule` of the result is the identity.
pub fn render_rule(rule: &ExpressionRule) -> String {
    let body = rule
        .clauses
        .iter()
        .map(|clause| {
            clause
                .iter()
                .map(Term::to_string)
                .collect::<Vec<_>>()
                .join("||")
        })
        .collect::<Vec<_>>()
        .join("+");
    format!("{}: {}", rule.name, body)
}

fn parse_error(offset: usize, problem: impl Into<String>) -> FacsError {
    FacsError::Parse {
        offset,
        problem: problem.into(),
    }
}

fn parse_term(raw: &str, offset: usize) -> Result<Term, FacsError> {
    let mut s = raw;
    let mut side = None;
    if let Some(rest) = s.strip_prefix('R') {
        side = Some(Side::Right);
        s = rest;
    } else if let Some(rest) = s.strip_prefix('L') {
        side = Some(Side::Left);
        s = rest;
    }
    let trace = if let Some(rest) = s.strip_suffix('A') {
        s = rest;
        true
    } else {
        false
    };
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(parse_error(offset, format!("expected an AU number in `{raw}`")));
    }
    let au: u8 = s
        .parse()
        .map_err(|_| parse_error(offset, format!("AU number out of range in `{raw}`")))?;
    if au == 0 {
        return Err(parse_error(offset, "AU number must be positive"));
    }
    Ok(Term { au, side, trace })
}

/// Compile one `Name: term(+term)*` line.
pub fn compile_rule(line: &str) -> Result<ExpressionRule, FacsError> {
    let colon = line
        .find(':')
        .ok_or_else(|| parse_error(line.len(), "missing `:` after expression name"))?;
    let name = line[..colon].trim();
    if name.is_empty() {
        return Err(parse_error(0, "empty expression name"));
    }

    let mut clauses = Vec::new();
    let mut offset = colon + 1;
    for group in line[colon + 1..].split('+') {
        let mut terms = Vec::new();
        let mut term_offset = offset;
        for raw in group.split("||") {
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                return Err(parse_error(term_offset, "empty term"));
            }
            let lead = raw.len() - raw.trim_start().len();
            terms.push(parse_term(trimmed, term_offset + lead)?);
            term_offset += raw.len() + 2;
        }
        clauses.push(terms);
        offset += group.len() + 1;
    }
    Ok(ExpressionRule {
        name: name.to_string(),
        clauses,
    })
}

/// Compile a rule file: one rule per line, `#` comments and blank lines
/// ignored. Names must be unique.
pub fn compile_rules(text: &str) -> Result<Vec<ExpressionRule>, FacsError> {
    let mut rules: Vec<ExpressionRule> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rule = compile_rule(line)?;
        if rules.iter().any(|r| r.name == rule.name) {
            return Err(FacsError::DuplicateRuleName(rule.name));
        }
        rules.push(rule);
    }
    Ok(rules)
}

/// The eight standard expression rules shipped with the engine.
pub const BUILTIN_RULES_TEXT: &str = "\
Happiness: 6+12
Sadness: 1+4+15
Surprise: 1+2+5+26
Fear: 1+2+4+5+7+20+26
Anger: 4+5+7+23
Disgust: 9+15+16
Contempt: R12A+R14A
Pain: 4+6||7+9||10+43
";

pub fn builtin_rules() -> Vec<ExpressionRule> {
    compile_rules(BUILTIN_RULES_TEXT).expect("builtin rules compile")
}

/// Evaluation thresholds and policies.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Activation threshold for intensity-coded AUs (0–5 scale).
    pub intensity_threshold: f64,
    /// Threshold for `A`-suffixed (trace) terms.
    pub trace_threshold: f64,
    pub policy: AuPolicy,
    /// Rewrites applied to rule AU numbers before lookup, for extractors
    /// that emit a neighbouring code (e.g. blink 45 for closure 43).
    pub alias: BTreeMap<u8, u8>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            intensity_threshold: 1.0,
            trace_threshold: 0.5,
            policy: AuPolicy::Lenient,
            alias: BTreeMap::new(),
        }
    }
}

/// Is action unit `au` active in this frame? Presence channels win;
/// otherwise the intensity channel is compared against `min_intensity`.
/// `None` when the frame carries neither channel for `au`.
pub fn au_active(frame: &AuFrame, au: u8, min_intensity: f64) -> Option<bool> {
    if let Some(&p) = frame.presence.get(&au) {
        return Some(p == 1);
    }
    frame.intensity.get(&au).map(|&v| v >= min_intensity)
}

fn term_active(frame: &AuFrame, term: &Term, cfg: &EvalConfig) -> Option<bool> {
    let au = cfg.alias.get(&term.au).copied().unwrap_or(term.au);
    if term.trace {
        // Trace terms are about *weak* activation, so the graded channel is
        // preferred when the extractor provides it.
        if let Some(&v) = frame.intensity.get(&au) {
            return Some(v >= cfg.trace_threshold);
        }
        return frame.presence.get(&au).map(|&p| p == 1);
    }
    au_active(frame, au, cfg.intensity_threshold)
}

fn rule_detected(
    frame: &AuFrame,
    rule: &ExpressionRule,
    cfg: &EvalConfig,
    skipped_clauses: &mut u64,
) -> Result<bool, FacsError> {
    let mut evaluated_any = false;
    let mut all_satisfied = true;
    for clause in &rule.clauses {
        let mut available = false;
        let mut satisfied = false;
        for term in clause {
            match term_active(frame, term, cfg) {
                Some(true) => {
                    available = true;
                    satisfied = true;
                }
                Some(false) => available = true,
                None => {
                    if cfg.policy == AuPolicy::Strict {
                        return Err(FacsError::UnavailableAu {
                            rule: rule.name.clone(),
                            au: term.au,
                        });
                    }
                    log::debug!(
                        "rule `{}`: AU{:02} not carried by frame, term skipped",
                        rule.name,
                        term.au
                    );
                }
            }
        }
        if !available {
            *skipped_clauses += 1;
            continue;
        }
        evaluated_any = true;
        if !satisfied {
            all_satisfied = false;
        }
    }
    // A rule whose every clause was unavailable asserts nothing.
    Ok(evaluated_any && all_satisfied)
}

/// Evaluate every rule against one frame; `result[i]` answers rule `i`.
///
/// Callers are responsible for only passing frames they consider evaluable
/// (successful detections, daytime); see [`ExpressionCounter`] for the
/// stream-level wrapper that enforces this.
pub fn detect_expressions(
    frame: &AuFrame,
    rules: &[ExpressionRule],
    cfg: &EvalConfig,
) -> Result<Vec<bool>, FacsError> {
    let mut skips = 0;
    rules
        .iter()
        .map(|rule| rule_detected(frame, rule, cfg, &mut skips))
        .collect()
}

/// Running totals over a whole frame stream, successful or not.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTally {
    pub total_frames: u64,
    pub successful_frames: u64,
}

impl FrameTally {
    /// Detection success rate over all observed frames.
    pub fn success_rate(&self) -> Option<f64> {
        (self.total_frames > 0)
            .then(|| self.successful_frames as f64 / self.total_frames as f64)
    }
}

/// Frequency of one expression over the evaluated frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionFrequency {
    pub expression: String,
    pub detected_frames: u64,
    pub evaluated_frames: u64,
    /// detected / evaluated.
    pub frequency: f64,
}

/// Everything the counter learned from a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyReport {
    pub frequencies: Vec<ExpressionFrequency>,
    pub tally: FrameTally,
    pub evaluated_frames: u64,
    /// Clause evaluations skipped because no member AU was available.
    pub skipped_clause_evaluations: u64,
    /// True when any rule used laterality, which this engine approximates
    /// as bilateral activation.
    pub laterality_approximated: bool,
}

/// Streaming expression counter.
///
/// Feed every frame of a stream in order: the tally covers all of them,
/// while rules are evaluated only on successful daytime frames (daytime
/// meaning the first 12 hours after the day anchor).
pub struct ExpressionCounter {
    rules: Vec<ExpressionRule>,
    cfg: EvalConfig,
    anchor_hour: u32,
    counts: Vec<u64>,
    evaluated: u64,
    tally: FrameTally,
    skipped_clauses: u64,
}

impl ExpressionCounter {
    pub fn new(rules: Vec<ExpressionRule>, cfg: EvalConfig, anchor_hour: u32) -> Self {
        let counts = vec![0; rules.len()];
        ExpressionCounter {
            rules,
            cfg,
            anchor_hour,
            counts,
            evaluated: 0,
            tally: FrameTally::default(),
            skipped_clauses: 0,
        }
    }

    fn is_daytime(&self, ts: NaiveDateTime) -> bool {
        let slot = slot_within(day_anchor(ts, self.anchor_hour), ts).expect("ts in its own day");
        slot < SLOTS_PER_SEGMENT
    }

    pub fn observe(&mut self, frame: &AuFrame) -> Result<(), FacsError> {
        self.tally.total_frames += 1;
        if !frame.success {
            return Ok(());
        }
        self.tally.successful_frames += 1;
        if !self.is_daytime(frame.ts) {
            return Ok(());
        }
        self.evaluated += 1;
        for (i, rule) in self.rules.iter().enumerate() {
            if rule_detected(frame, rule, &self.cfg, &mut self.skipped_clauses)? {
                self.counts[i] += 1;
            }
        }
        Ok(())
    }

    pub fn tally(&self) -> FrameTally {
        self.tally
    }

    /// Final report. Errors when no frame was evaluated.
    pub fn report(&self) -> Result<FrequencyReport, FacsError> {
        if self.evaluated == 0 {
            return Err(FacsError::NoFrames);
        }
        let frequencies = self
            .rules
            .iter()
            .zip(&self.counts)
            .map(|(rule, &detected)| ExpressionFrequency {
                expression: rule.name.clone(),
                detected_frames: detected,
                evaluated_frames: self.evaluated,
                frequency: detected as f64 / self.evaluated as f64,
            })
            .collect();
        Ok(FrequencyReport {
            frequencies,
            tally: self.tally,
            evaluated_frames: self.evaluated,
            skipped_clause_evaluations: self.skipped_clauses,
            laterality_approximated: self
                .rules
                .iter()
                .flat_map(|r| r.clauses.iter().flatten())
                .any(|t| t.side.is_some()),
        })
    }
}
