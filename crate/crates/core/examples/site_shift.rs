//! Runs the two-site experiment for one seed and prints both arms.
//!
//! cargo run --release --example site_shift -- [seed]

use spatial_mil::experiment::{band_attention_excess, site_shift_run, DeskScale};
use spatial_mil::synthetic::CohortSpec;

fn main() -> spatial_mil::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let spec = CohortSpec { seed, ..CohortSpec::default() };
    let run = site_shift_run(&spec, &DeskScale::default(), seed)?;
    for arm in [&run.baseline, &run.pd] {
        println!(
            "{:<12} internal auc {:.3} (last epoch {:.3})  internal spec {:.3}  external spec {:.3}",
            arm.name,
            arm.internal_auc(),
            arm.internal_auc_last(),
            arm.internal_spec(),
            arm.external_spec()
        );
    }
    let rows = band_attention_excess(&run.pd, &spec)?;
    for msi in [true, false] {
        let v: Vec<f64> = rows.iter().filter(|r| r.msi == msi).map(|r| r.excess).collect();
        let pos = v.iter().filter(|&&e| e > 0.0).count();
        println!(
            "{} band attention excess: mean {:+.4}, positive on {pos}/{}",
            if msi { "MSI-H" } else { "MSS  " },
            v.iter().sum::<f64>() / v.len() as f64,
            v.len()
        );
    }
    Ok(())
}
