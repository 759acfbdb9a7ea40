//! Named tolerances with their rationale.
//!
//! Every threshold used by constructors and checks lives here. Operations
//! take these as defaults; command-line callers may override the check
//! thresholds but not the structural ones.

/// Quadrature-orthonormality slack accepted when constructing an
/// [`crate::EigenSystem`]. Dense symmetric QR and SVD both deliver
/// orthogonality near machine epsilon; 1e-8 leaves room for file
/// round-trips and accumulated scaling.
pub const QUADRATURE_ORTHONORMALITY: f64 = 1e-8;

/// Maximum Gram deviation from the identity accepted for the planted
/// eigenflows of a finite-rank generator spec.
pub const GRAM_IDENTITY: f64 = 1e-10;

/// Gram deviation guaranteed by [`crate::generators::orthonormalize`]
/// (two-pass Gram–Schmidt).
pub const ORTHONORMALIZE_OUTPUT: f64 = 1e-12;

/// A Gram–Schmidt pivot below this fraction of the largest input norm is
/// treated as rank deficiency.
pub const ORTHONORMALIZE_PIVOT_RATIO: f64 = 1e-10;

/// Relative clamp for the dense eigendecomposition: eigenvalues in
/// `(-tol·λ₁, 0)` are reported as 0, anything below `-tol·λ₁` is an error.
pub const EIGENVALUE_CLAMP_REL: f64 = 1e-8;

/// Eigenvalues whose gap is below this fraction of λ₁ are treated as one
/// degenerate cluster when comparing eigenflows across decomposition paths.
pub const DEGENERACY_GAP_REL: f64 = 1e-9;

/// Maximum relative eigenvalue discrepancy (normalized by λ₁) tolerated
/// between the dense and SVD decomposition paths.
pub const PATH_EIGVAL_REL: f64 = 1e-10;

/// Minimum quadrature alignment `|⟨Φ_dense, Φ_svd⟩|` required on simple
/// eigenvalues: alignment ≥ 1 − PATH_ALIGNMENT.
pub const PATH_ALIGNMENT: f64 = 1e-8;

/// Relative slack (against the kernel's diagonal trace scale) for checks
/// that assert a quantity is nonnegative or vanishes: partial-sum residuals
/// at full rank, domination of diagonal residual blocks, score covariance
/// diagonality.
pub const REPORT_PSD_REL: f64 = 1e-10;

/// Additive slack for the Cauchy–Schwarz bound on partial-sum trace norms.
pub const PARTIAL_SUM_BOUND: f64 = 1e-10;

/// Relative agreement required between `Σ λⱼ` and the quadrature trace of
/// the kernel diagonal for full-rank decompositions.
pub const TRACE_IDENTITY_REL: f64 = 1e-12;

/// Monte Carlo band: estimates must sit within this many standard errors
/// of the closed-form value. 4σ keeps the false-failure probability per
/// check below 1e-4.
pub const MC_SIGMA_FACTOR: f64 = 4.0;

/// Slack on the in-sample optimality comparison between the expansion
/// basis and any alternative orthonormal family.
pub const OPTIMALITY_MARGIN: f64 = 1e-10;
