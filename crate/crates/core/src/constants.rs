use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Optical constants shared by the kinematics and photonics stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Speed of light, m/s.
    pub c: f64,
    /// Laser wavelength, m.
    pub lambda: f64,
    /// Interferometer arm unbalance, s.
    pub delta_t: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            c: SPEED_OF_LIGHT,
            lambda: 532e-9,
            delta_t: 3.498e-9,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.c > 0.0) {
            return Err(format!("speed of light must be positive, got {}", self.c));
        }
        if !(self.lambda > 0.0) {
            return Err(format!("wavelength must be positive, got {}", self.lambda));
        }
        if !(self.delta_t > 0.0) {
            return Err(format!("unbalance must be positive, got {}", self.delta_t));
        }
        Ok(())
    }

    /// Phase accumulated per unit fractional Doppler shift: 2π c Δt / λ.
    pub fn phase_constant(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.c * self.delta_t / self.lambda
    }
}
