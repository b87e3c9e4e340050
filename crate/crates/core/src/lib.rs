//! Core analytics for continuous bedside sensor streams.
//!
//! The crate is organised around one temporal unit: the *patient-day*, a
//! 1440-minute window anchored at a fixed wall-clock hour (07:00 by default)
//! and split into a day half (first 720 slots) and a night half (last 720).
//! Every subsystem consumes streams bucketed into patient-days:
//!
//! - [`ingest`] — stream schemas, strict parsers/writers, patient-day assembly
//! - [`actigraphy`] — rest–activity features (M10, L5, RA, RMSSD, …) and
//!   LOESS-smoothed group activity curves
//! - [`facs`] — facial-action-unit rule engine and expression frequencies
//! - [`posture`] — pose-keypoint featurisation, KNN imputation/classification
//! - [`deteval`] — detector quality: IoU, greedy NMS, average precision,
//!   embedding-based patient matching
//! - [`environs`] — sound-pressure levels, light, WHO night-noise compliance,
//!   visitation disruption
//! - [`stats`] — medians/IQRs, Mann–Whitney U, proportion tests, cohort
//!   comparison tables
//! - [`simulator`] — deterministic synthetic cohorts emitting the exact
//!   ingest formats plus ground-truth sidecars

pub mod actigraphy;
pub mod deteval;
pub mod environs;
pub mod facs;
pub mod ingest;
pub mod posture;
pub mod simulator;
pub mod stats;
