//! Training cost, energy, and carbon accounting, plus the traffic break-even
//! point between shipping a model once and answering every exchange in the
//! cloud.
//!
//! Defaults reflect a 128-GPU cluster of 400 W devices at $1 per GPU-hour on
//! a 0.4235 kg CO2-eq/kWh grid. Under those defaults a 184,320 GPU-hour
//! pre-training run costs $184,320, draws 73,728 kWh, and emits about
//! 31.22 t CO2-eq; a 1,720,320 GPU-hour run draws 688,128 kWh and emits about
//! 291.42 t CO2-eq.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("{name} must be finite and positive (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("core_bytes_per_exchange must be positive")]
    ZeroExchangeBytes,
    #[error("model_bytes must be positive")]
    ZeroModelBytes,
}

fn require_positive(name: &'static str, value: f64) -> Result<f64, CostError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(CostError::NonPositive { name, value });
    }
    Ok(value)
}

/// Unit prices and factors for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub price_usd_per_gpu_hour: f64,
    /// Per-GPU draw in kW (TDP).
    pub tdp_kw: f64,
    /// Grid intensity in kg CO2-eq per kWh.
    pub carbon_kg_per_kwh: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { price_usd_per_gpu_hour: 1.0, tdp_kw: 0.4, carbon_kg_per_kwh: 0.4235 }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        require_positive("price_usd_per_gpu_hour", self.price_usd_per_gpu_hour)?;
        require_positive("tdp_kw", self.tdp_kw)?;
        require_positive("carbon_kg_per_kwh", self.carbon_kg_per_kwh)?;
        Ok(())
    }
}

/// Electrical energy for a GPU-hour budget: `gpu_hours * tdp_kw` kWh.
pub fn energy_kwh(gpu_hours: f64, tdp_kw: f64) -> Result<f64, CostError> {
    require_positive("gpu_hours", gpu_hours)?;
    require_positive("tdp_kw", tdp_kw)?;
    Ok(gpu_hours * tdp_kw)
}

/// Carbon for an energy budget, in metric tons CO2-eq.
pub fn carbon_tco2(kwh: f64, carbon_kg_per_kwh: f64) -> Result<f64, CostError> {
    require_positive("kwh", kwh)?;
    require_positive("carbon_kg_per_kwh", carbon_kg_per_kwh)?;
    Ok(kwh * carbon_kg_per_kwh / 1000.0)
}

/// Rental price for a GPU-hour budget.
pub fn training_usd(gpu_hours: f64, price_usd_per_gpu_hour: f64) -> Result<f64, CostError> {
    require_positive("gpu_hours", gpu_hours)?;
    require_positive("price_usd_per_gpu_hour", price_usd_per_gpu_hour)?;
    Ok(gpu_hours * price_usd_per_gpu_hour)
}

/// Full cost sheet for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub gpu_hours: f64,
    pub usd: f64,
    pub kwh: f64,
    pub tco2eq: f64,
}

impl CostReport {
    pub fn compute(gpu_hours: f64, params: &CostParams) -> Result<CostReport, CostError> {
        params.validate()?;
        let kwh = energy_kwh(gpu_hours, params.tdp_kw)?;
        Ok(CostReport {
            gpu_hours,
            usd: training_usd(gpu_hours, params.price_usd_per_gpu_hour)?,
            kwh,
            tco2eq: carbon_tco2(kwh, params.carbon_kg_per_kwh)?,
        })
    }

    /// Fixed key order, fixed 6-decimal reals.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"gpu_hours\":{:.6},\"usd\":{:.6},\"kwh\":{:.6},\"tco2eq\":{:.6}}}",
            self.gpu_hours, self.usd, self.kwh, self.tco2eq
        )
    }
}

/// Number of answered exchanges after which shipping the model once beats
/// serving every exchange over the core: `ceil(model_bytes / core_bytes_per_exchange)`.
pub fn breakeven_messages(model_bytes: u64, core_bytes_per_exchange: u64) -> Result<u64, CostError> {
    if model_bytes == 0 {
        return Err(CostError::ZeroModelBytes);
    }
    if core_bytes_per_exchange == 0 {
        return Err(CostError::ZeroExchangeBytes);
    }
    Ok(model_bytes.div_ceil(core_bytes_per_exchange))
}
