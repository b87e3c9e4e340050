//! `simulate`: synthesize a cohort data tree (sensor streams plus truth
//! sidecars) from named cohort presets, deterministically per seed.

use crate::artifacts::ArtifactSet;
use crate::config::Config;
use crate::failure::Failure;
use rayon::prelude::*;
use wardsense_core::simulator::{derive_seed, preset, simulate_patient, write_groups_csv};

pub fn run(cfg: &Config) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;

    let mut groups = cfg.sim_groups.clone();
    groups.sort();
    let mut profiles = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        let mut profile =
            preset(group).map_err(|e| Failure::config(format!("simulate.groups: {e}")))?;
        profile.seed = derive_seed(cfg.seed, gi as u64 + 1);
        profile.anchor_hour = cfg.anchor_hour;
        profiles.push(profile);
    }

    let patients: Vec<(usize, u32)> = (0..profiles.len())
        .flat_map(|gi| (0..cfg.patients_per_group).map(move |pi| (gi, pi)))
        .collect();
    struct Rendered {
        patient_id: String,
        group: String,
        files: Vec<(String, Vec<u8>)>,
    }
    let rendered: Vec<Rendered> = patients
        .par_iter()
        .map(|&(gi, pi)| {
            let streams = simulate_patient(&profiles[gi], pi, cfg.days)
                .map_err(|e| Failure::config(format!("simulate: {e}")))?;
            let files = streams
                .rendered_files()
                .map_err(|e| Failure::internal(format!("cannot render streams: {e}")))?;
            Ok(Rendered {
                patient_id: streams.patient_id,
                group: streams.group,
                files,
            })
        })
        .collect::<Result<_, Failure>>()?;

    let mut memberships = Vec::new();
    for patient in rendered {
        memberships.push((patient.patient_id, patient.group));
        for (rel, bytes) in patient.files {
            set.write(&rel, &bytes)?;
        }
    }
    memberships.sort();
    let mut groups_csv = Vec::new();
    write_groups_csv(&mut groups_csv, memberships)
        .map_err(|e| Failure::internal(format!("cannot render cohort file: {e}")))?;
    set.write("groups.csv", &groups_csv)?;
    Ok(set)
}
