use thiserror::Error;

/// Errors raised by the simulator. Variants are split so the command line can
/// map configuration problems and numerical failures to distinct exit codes.
#[derive(Debug, Error)]
pub enum RamanError {
    #[error("invalid ladder: {0}")]
    InvalidLadder(String),

    #[error("order {order} is outside the ladder [{q_min}, {q_max}]")]
    OrderOutOfLadder { order: i32, q_min: i32, q_max: i32 },

    #[error("missing coefficient for order {0}")]
    MissingCoefficient(i32),

    #[error("negative photon density {value} at order {order}, tau index {tau_index}")]
    NegativePhotonDensity {
        order: i32,
        tau_index: usize,
        value: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("wavelength {wavelength_nm:.4} nm is outside the valid range of material '{material}' ([{min_nm}, {max_nm}] nm)")]
    WavelengthOutOfRange {
        material: String,
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },

    #[error("coherence step rejected at tau index {tau_index}: |rho01| = {magnitude:.6} exceeds 0.5 (step too large?)")]
    CoherenceBound { tau_index: usize, magnitude: f64 },

    #[error("non-finite value at xi = {xi:.6e} m, tau index {tau_index}, order {order}")]
    NonFinite {
        xi: f64,
        tau_index: usize,
        order: i32,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl RamanError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            RamanError::CoherenceBound { .. } | RamanError::NonFinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, RamanError>;
