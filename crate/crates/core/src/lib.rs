//! Detection of localised anomalies in per-country usage of circumvention
//! tools.
//!
//! Usage estimates are assembled into a date × country matrix. A rolling
//! principal component model, refitted every day on the preceding window,
//! captures the trends countries share; what remains for each country is a
//! proportional residual. Residuals that leave a robust per-country band
//! (rolling median ± a multiple of the MAD) are flagged, and countries can
//! be ranked by the MAD of their residuals over any period.
//!
//! ```no_run
//! use usage_anomaly::{detector, ingest};
//!
//! let parsed = ingest::parse_userstats_path("userstats-relay-country.csv")?;
//! let table = ingest::filter_countries(&parsed.table, ingest::DEFAULT_MIN_USERS)?;
//! let matrix = ingest::assemble_matrix(&table, ingest::DEFAULT_MAX_GAP)?.matrix;
//! let detection = detector::run_detector(&matrix, &detector::DetectorParams::default())?;
//! for flag in &detection.flags {
//!     println!("{} {} {:?}", flag.date, flag.country, flag.class);
//! }
//! # Ok::<(), usage_anomaly::Error>(())
//! ```

pub mod detector;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod parallel;
pub mod pca;
pub mod ranking;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use parallel::Execution;
