use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("branch {from}-{to} (circuit {circuit}) has zero series impedance")]
    ZeroImpedanceBranch { from: u32, to: u32, circuit: u32 },

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    NoConvergence { iterations: usize, mismatch: f64 },

    #[error("singular Jacobian in {context}")]
    SingularJacobian { context: &'static str },

    #[error("machine at bus {bus} needs efd = {efd:.4} pu, outside exciter limits")]
    InfeasibleInit { bus: u32, efd: f64 },

    #[error("region {0} has no in-service machine")]
    EmptyRegion(String),

    #[error("AC voltage collapse at bus {bus} (|V| = {v:.4} pu)")]
    VoltageCollapse { bus: u32, v: f64 },

    #[error("DC overvoltage on link {link}: {v:.4} pu")]
    DcOvervoltage { link: String, v: f64 },

    #[error("DC undervoltage on link {link}: {v:.4} pu")]
    DcUndervoltage { link: String, v: f64 },

    #[error("POD-Q FCOI variant needs a centre-of-inertia frequency")]
    MissingCoi,

    #[error("initial state is not an equilibrium: max |dx/dt| = {max_residual:.3e} at {state}")]
    InitResidualTooLarge { max_residual: f64, state: String },

    #[error("time step at t = {t:.4} s did not converge (residual {residual:.3e})")]
    StepNonConvergence { t: f64, residual: f64 },

    #[error("event target not found: {0}")]
    TargetNotFound(String),

    #[error("event target already out of service: {0}")]
    AlreadyOut(String),

    #[error("tripping {branch} islands the machine at bus {bus}")]
    IslandedMachine { branch: String, bus: u32 },

    #[error("tripping {0} splits the network")]
    Islanding(String),

    #[error("algebraic network solve failed (residual {residual:.3e})")]
    AlgebraicSolveFailed { residual: f64 },

    #[error("eigenvalue iteration did not converge within {max_iterations} iterations")]
    EigenNoConvergence { max_iterations: usize },

    #[error("damping is undefined for a zero eigenvalue")]
    ZeroEigenvalue,

    #[error("mode is defective or ill-conditioned (condition {condition:.3e})")]
    DefectiveMode { condition: f64 },

    #[error("sensitivity gain step must be non-zero")]
    ZeroGainStep,

    #[error("perturbed mode match is ambiguous (best {best:.3}, second {second:.3})")]
    ModeMatchAmbiguous { best: f64, second: f64 },

    #[error("lead/lag needs {phi_deg:.1} deg per stage; raise the stage count")]
    ExcessivePhaseRequirement { phi_deg: f64 },

    #[error("eigenvalue sensitivity is zero")]
    ZeroSensitivity,

    #[error("removing the planned branches does not separate the regions: {0}")]
    NotASeparator(String),

    #[error("link {link}: flow {flow_mva:.1} MVA exceeds rating {rating_mva:.1} MVA")]
    RatingExceeded {
        link: String,
        flow_mva: f64,
        rating_mva: f64,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for numerical convergence failures (as opposed to bad input).
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::SingularJacobian { .. }
                | Error::StepNonConvergence { .. }
                | Error::AlgebraicSolveFailed { .. }
                | Error::EigenNoConvergence { .. }
                | Error::InitResidualTooLarge { .. }
                | Error::VoltageCollapse { .. }
                | Error::DcOvervoltage { .. }
                | Error::DcUndervoltage { .. }
        )
    }
}
