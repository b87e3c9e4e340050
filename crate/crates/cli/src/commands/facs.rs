//! `facs`: expression frequencies over successful daytime frames plus the
//! stream-wide detection success rate, one `expressions.csv` row per
//! patient and rule.

use super::{data_label, per_patient};
use crate::artifacts::{absorb_inputs, digest_file, ArtifactSet};
use crate::config::Config;
use crate::data::{cell, discover_patients, group_of, load_groups};
use crate::failure::Failure;
use std::path::PathBuf;
use wardsense_core::facs::{builtin_rules, compile_rules, ExpressionCounter, FacsError};
use wardsense_core::ingest::au_frames_from_path;

pub fn run(cfg: &Config, data_dir: PathBuf) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let patients = discover_patients(&data_dir)?;
    let groups = load_groups(&data_dir, cfg.groups_file.as_deref())?;
    let policy = cfg.parse_policy();

    let rules = match &cfg.rules_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read rules file {}: {e}", path.display()))
            })?;
            set.record_input_file(
                format!(
                    "rules:{}",
                    path.file_name().unwrap_or_default().to_string_lossy()
                ),
                path,
            )?;
            compile_rules(&text).map_err(|e| {
                Failure::config(format!("rules file {}: {e}", path.display()))
            })?
        }
        None => builtin_rules(),
    };
    let uses_laterality = rules
        .iter()
        .any(|r| r.clauses.iter().any(|c| c.iter().any(|t| t.side.is_some())));
    let eval = cfg.eval_config();
    let anchor = cfg.anchor_hour;

    let results = per_patient(&patients, |id, dir| {
        let path = dir.join("au.jsonl");
        if !path.exists() {
            log::warn!("patient {id}: no au.jsonl, skipped");
            return Ok(None);
        }
        let digest = digest_file(&path)?;
        let mut counter = ExpressionCounter::new(rules.clone(), eval.clone(), anchor);
        for frame in au_frames_from_path(&path, policy)? {
            let frame = frame?;
            counter
                .observe(&frame)
                .map_err(|e| Failure::data(format!("patient {id}: {e}")))?;
        }
        let group = group_of(&groups, id);
        let tally = counter.tally();
        let success = cell(tally.success_rate());
        let mut rows = Vec::new();
        match counter.report() {
            Ok(report) => {
                for freq in &report.frequencies {
                    rows.push(format!(
                        "{id},{group},{},{},{},{},{},{},{success},{uses_laterality}",
                        freq.expression,
                        freq.detected_frames,
                        freq.evaluated_frames,
                        freq.frequency,
                        tally.total_frames,
                        tally.successful_frames,
                    ));
                }
            }
            // A stream with no evaluable (successful daytime) frames still
            // contributes its tally; frequencies stay undefined.
            Err(FacsError::NoFrames) => {
                for rule in &rules {
                    rows.push(format!(
                        "{id},{group},{},0,0,,{},{},{success},{uses_laterality}",
                        rule.name, tally.total_frames, tally.successful_frames,
                    ));
                }
            }
            Err(e) => return Err(Failure::data(format!("patient {id}: {e}"))),
        }
        Ok(Some((rows, (data_label(&data_dir, &path), digest))))
    })?;

    let results: Vec<_> = results.into_iter().flatten().collect();
    if results.is_empty() {
        return Err(Failure::data(format!(
            "no action-unit streams found under {}",
            data_dir.display()
        )));
    }

    let mut csv = String::from(
        "patient,group,expression,detected_frames,evaluated_frames,frequency,\
         total_frames,successful_frames,success_rate,laterality_approximated\n",
    );
    for (rows, _) in &results {
        for row in rows {
            csv.push_str(row);
            csv.push('\n');
        }
    }
    absorb_inputs(&mut set, results.into_iter().map(|(_, input)| vec![input]));
    set.write("expressions.csv", csv.as_bytes())?;
    Ok(set)
}
