//! CODATA 2018 physical constants (SI).

/// Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Vacuum permeability, T·m/A.
pub const VACUUM_PERMEABILITY: f64 = 1.256_637_062_12e-6;
/// Reduced Planck constant, J·s.
pub const REDUCED_PLANCK: f64 = 1.054_571_817e-34;
/// Planck constant, J·s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Electron-to-proton mass ratio; converts nuclear magnetons to Bohr magnetons.
pub const ELECTRON_PROTON_MASS_RATIO: f64 = 5.446_170_214_87e-4;

/// Bundle of the constants above, for callers that want them as a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub bohr_magneton: f64,
    pub boltzmann: f64,
    pub vacuum_permeability: f64,
    pub reduced_planck: f64,
}

pub const CODATA: PhysicalConstants = PhysicalConstants {
    bohr_magneton: BOHR_MAGNETON,
    boltzmann: BOLTZMANN,
    vacuum_permeability: VACUUM_PERMEABILITY,
    reduced_planck: REDUCED_PLANCK,
};

/// μ0/(4π)·μ_B²/ħ in rad·s⁻¹·nm³: the dipolar prefactor for two g = 1 moments.
pub fn dipolar_prefactor_rad_s_nm3() -> f64 {
    VACUUM_PERMEABILITY / (4.0 * std::f64::consts::PI) * BOHR_MAGNETON * BOHR_MAGNETON
        / REDUCED_PLANCK
        * 1e27
}
