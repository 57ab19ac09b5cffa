//! Detection rates for injected anomalies on a synthetic correlated baseline.
//!
//! `cargo run --release --example injection_rates -- [runs] [noise]`

use std::time::Instant;

use usage_anomaly::detector::{run_detector, DetectorParams};
use usage_anomaly::synth::{
    run_experiment, synthetic_baseline, synthetic_country, synthetic_matrix, BaselineSpec, ExperimentConfig,
    HoldPolicy, DEFAULT_RAMP_DAYS,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let runs: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let noise: f64 = args.next().map_or(Ok(0.03), |s| s.parse())?;
    let baseline = BaselineSpec {
        noise,
        ..BaselineSpec::default()
    };
    let params = DetectorParams::default();

    let matrix = synthetic_matrix(&baseline)?;
    let null = run_detector(&matrix, &params)?;
    let evaluated = null.series.iter().filter(|r| r.evaluated()).count();
    println!(
        "null flag rate {:.4} ({} flags over {evaluated} country-days)",
        null.flags.len() as f64 / evaluated as f64,
        null.flags.len()
    );

    let table = synthetic_baseline(&baseline)?;
    let dates = matrix.dates();
    let config = ExperimentConfig {
        country: synthetic_country(0),
        period: (dates[params.window + params.min_history], *dates.last().unwrap()),
        magnitudes: vec![-0.5, -0.3, -0.2, -0.1, 0.1, 0.2, 0.3, 0.5],
        ramp_days: DEFAULT_RAMP_DAYS,
        hold: HoldPolicy::SameAsRamp,
        runs,
        seed: 7,
        max_gap: 7,
    };
    let started = Instant::now();
    let report = run_experiment(&table, &params, &config)?;
    for b in &report.buckets {
        println!("{:?} {:.2}: {}/{} = {:.3}", b.sign, b.magnitude, b.detected, b.runs, b.rate);
    }
    println!("{} runs in {:.1?}", report.total_runs, started.elapsed());
    Ok(())
}
