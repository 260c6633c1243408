//! Energy to CO₂ conversion.

use crate::error::{input_err, Result};

/// Joules in one kilowatt-hour.
pub const JOULES_PER_KWH: f64 = 3.6e6;

/// Carbon intensity of Taiwan's grid, kg CO₂ per kWh.
pub const TAIWAN_GRID_CI: f64 = 0.502;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub energy_kwh: f64,
    pub carbon_intensity: f64,
    pub emissions_kg: f64,
}

/// `E_consumed × CI`.
pub fn co2_estimate(energy_kwh: f64, carbon_intensity: f64) -> Result<EnergyReport> {
    if !(energy_kwh >= 0.0 && energy_kwh.is_finite()) {
        return Err(input_err!("energy must be a nonnegative number of kWh, got {energy_kwh}"));
    }
    if !(carbon_intensity >= 0.0 && carbon_intensity.is_finite()) {
        return Err(input_err!("carbon intensity must be nonnegative, got {carbon_intensity}"));
    }
    Ok(EnergyReport {
        energy_kwh,
        carbon_intensity,
        emissions_kg: energy_kwh * carbon_intensity,
    })
}

/// Energy proxy from an operation count and a per-FLOP energy constant.
pub fn energy_from_flops(flops: f64, joules_per_flop: f64) -> Result<f64> {
    if !(flops >= 0.0 && joules_per_flop >= 0.0) {
        return Err(input_err!("flops and joules per flop must be nonnegative"));
    }
    Ok(flops * joules_per_flop / JOULES_PER_KWH)
}
