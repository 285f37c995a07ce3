//! Certificate runs: the energy-drift diagnostic on linear pH systems that
//! satisfy the bound's assumptions, plus the calculator outputs.

use super::csvio::write_text;
use super::RunConfig;
use crate::certificates::{
    certificate_csv, energy_drift_diagnostic, make_linear_ph, mc_margin, pinsker_transfer,
    stationary_energy,
};
use crate::error::Result;
use nalgebra::DVector;
use std::path::PathBuf;

/// Runs the diagnostic on the three linear pH systems and writes the
/// certificate report plus a calculator sheet.
pub fn run_certify(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut notes = String::from("system,closed_form_stationary_energy\n");
    for variant in 0..3 {
        let spec = make_linear_ph(variant);
        let z0 = DVector::from_column_slice(&[1.0, 0.5]);
        let rep = energy_drift_diagnostic(
            &spec,
            &z0,
            0,
            cfg.certify_horizon,
            cfg.certify_batch,
            0.0,
            cfg.root_seed.wrapping_add(variant as u64),
        )?;
        notes.push_str(&format!(
            "{},{:.6e}\n",
            spec.name,
            stationary_energy(&spec)
        ));
        rows.push((spec.name.clone(), rep));
    }

    // calculator sheet: a small grid of Pinsker and Monte Carlo margins
    let mut calc = String::from("quantity,input,value\n");
    for eps_h in [0.0, 0.02, 0.5, 2.0] {
        let p = pinsker_transfer(eps_h, 1.0, 0.0, 0.2);
        calc.push_str(&format!("eps_tv,{eps_h},{:.6}\n", p.eps_tv));
    }
    for n in [100usize, 200, 400, 800] {
        calc.push_str(&format!(
            "mc_margin,{n},{:.6}\n",
            mc_margin(n, 1, 1.0 / std::f64::consts::E)
        ));
    }

    let dir = std::path::Path::new(&cfg.out_dir);
    let mut written = Vec::new();
    written.push(write_text(dir, "certify_report.csv", &certificate_csv(&rows))?);
    written.push(write_text(dir, "certify_stationary.csv", &notes)?);
    written.push(write_text(dir, "certify_calculators.csv", &calc)?);
    written.push(write_text(dir, "certify_config.toml", &cfg.echo_toml())?);
    Ok(written)
}
