//! Discretization conventions and data containers shared by every module.
//!
//! The index set is a compact interval of length `domain_length` carrying a
//! uniform midpoint grid: `n` nodes `t_k = (k + 1/2)·w` (0-based `k`) with
//! quadrature weight `w = domain_length / n`. The ambient Hilbert space is
//! truncated to the span of its first `m` basis vectors, so a single flow
//! realization is an `n × m` coefficient matrix with entry `(k, i)` equal to
//! the i-th coordinate of the flow at node `t_k`.
//!
//! Stacked layout: a flow maps to a column of length `m·n` in node-major,
//! basis-minor order; block `k` holds the `m` coordinates at node `t_k`.
//! Ensembles store one stacked sample per column, so the data matrix is
//! `(m·n) × N` and matches the column-major layout used on disk.
//!
//! All containers are immutable after construction and safe to share across
//! threads.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::tol;

/// Uniform midpoint discretization of the index interval.
#[derive(Debug, Clone)]
pub struct Grid {
    domain_length: f64,
    n: usize,
    nodes: Vec<f64>,
    weight: f64,
}

impl Grid {
    /// Midpoint grid with `n` nodes on `[0, domain_length]`.
    pub fn uniform(n: usize, domain_length: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("grid needs at least one node"));
        }
        if !(domain_length.is_finite() && domain_length > 0.0) {
            return Err(Error::param(format!(
                "domain length must be positive and finite, got {domain_length}"
            )));
        }
        let weight = domain_length / n as f64;
        let nodes = (0..n).map(|k| (k as f64 + 0.5) * weight).collect();
        Ok(Grid {
            domain_length,
            n,
            nodes,
            weight,
        })
    }

    /// Midpoint grid on the unit interval.
    pub fn unit(n: usize) -> Result<Self> {
        Self::uniform(n, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    /// Quadrature weight `w = domain_length / n`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.domain_length == other.domain_length
    }
}

/// Dimension `m` of the retained subspace of the ambient Hilbert space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisTruncation {
    m: usize,
}

impl BasisTruncation {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::param("basis truncation must retain at least one direction"));
        }
        Ok(BasisTruncation { m })
    }

    pub fn m(&self) -> usize {
        self.m
    }
}

fn ensure_compatible(
    ga: &Grid,
    gb: &Grid,
    ta: BasisTruncation,
    tb: BasisTruncation,
) -> Result<()> {
    if ga != gb {
        return Err(Error::GridMismatch);
    }
    if ta != tb {
        return Err(Error::TruncationMismatch);
    }
    Ok(())
}

/// One discretized flow realization: coefficients `(k, i) = ⟨χ(t_k), e_i⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    grid: Grid,
    trunc: BasisTruncation,
    coeffs: DMatrix<f64>,
}

impl FlowSample {
    pub fn new(grid: Grid, trunc: BasisTruncation, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != grid.n() {
            return Err(Error::dim("flow sample rows", grid.n(), coeffs.nrows()));
        }
        if coeffs.ncols() != trunc.m() {
            return Err(Error::dim("flow sample columns", trunc.m(), coeffs.ncols()));
        }
        if coeffs.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("flow sample coefficients"));
        }
        Ok(FlowSample {
            grid,
            trunc,
            coeffs,
        })
    }

    pub fn zeros(grid: Grid, trunc: BasisTruncation) -> Self {
        let coeffs = DMatrix::zeros(grid.n(), trunc.m());
        FlowSample {
            grid,
            trunc,
            coeffs,
        }
    }

    /// Build a sample by evaluating `f(t_k, i)` on the grid.
    pub fn from_fn(grid: Grid, trunc: BasisTruncation, f: impl Fn(f64, usize) -> f64) -> Self {
        let coeffs = DMatrix::from_fn(grid.n(), trunc.m(), |k, i| f(grid.node(k), i));
        FlowSample {
            grid,
            trunc,
            coeffs,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn trunc(&self) -> BasisTruncation {
        self.trunc
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// Stacked column in node-major, basis-minor order.
    pub fn stack(&self) -> DVector<f64> {
        stack(self)
    }

    /// Squared coordinate norm `‖χ(t_k)‖²` at node `k`.
    pub fn node_norm_sq(&self, k: usize) -> f64 {
        self.coeffs.row(k).iter().map(|x| x * x).sum()
    }

    /// Quadrature inner product with another sample on the same grid.
    pub fn inner(&self, other: &FlowSample) -> Result<f64> {
        l2_inner(self, other)
    }

    /// Quadrature squared norm.
    pub fn norm_sq(&self) -> f64 {
        self.grid.weight() * self.coeffs.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn scaled(&self, c: f64) -> FlowSample {
        FlowSample {
            grid: self.grid.clone(),
            trunc: self.trunc,
            coeffs: &self.coeffs * c,
        }
    }

    /// `self + c · other`.
    pub fn add_scaled(&self, c: f64, other: &FlowSample) -> Result<FlowSample> {
        ensure_compatible(&self.grid, &other.grid, self.trunc, other.trunc)?;
        Ok(FlowSample {
            grid: self.grid.clone(),
            trunc: self.trunc,
            coeffs: &self.coeffs + &other.coeffs * c,
        })
    }
}

/// Stack a sample into its column of length `m·n` (node-major, basis-minor).
pub fn stack(sample: &FlowSample) -> DVector<f64> {
    let n = sample.grid.n();
    let m = sample.trunc.m();
    let mut v = DVector::zeros(m * n);
    for k in 0..n {
        for i in 0..m {
            v[k * m + i] = sample.coeffs[(k, i)];
        }
    }
    v
}

/// Inverse of [`stack`]: rebuild the `n × m` coefficient matrix.
pub fn unstack(v: &[f64], grid: &Grid, trunc: BasisTruncation) -> Result<FlowSample> {
    let n = grid.n();
    let m = trunc.m();
    if v.len() != m * n {
        return Err(Error::dim("stacked vector length", m * n, v.len()));
    }
    let coeffs = DMatrix::from_fn(n, m, |k, i| v[k * m + i]);
    FlowSample::new(grid.clone(), trunc, coeffs)
}

/// Discretized inner product of `L²(𝒯, ℍ)`: `w · Σ_k ⟨f(t_k), g(t_k)⟩`.
pub fn l2_inner(f: &FlowSample, g: &FlowSample) -> Result<f64> {
    ensure_compatible(&f.grid, &g.grid, f.trunc, g.trunc)?;
    let dot = f
        .coeffs
        .iter()
        .zip(g.coeffs.iter())
        .map(|(a, b)| a * b)
        .sum::<f64>();
    Ok(f.grid.weight() * dot)
}

/// `N` discretized realizations stored as the `(m·n) × N` data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEnsemble {
    grid: Grid,
    trunc: BasisTruncation,
    data: DMatrix<f64>,
}

impl FlowEnsemble {
    pub fn new(grid: Grid, trunc: BasisTruncation, data: DMatrix<f64>) -> Result<Self> {
        let expected = grid.n() * trunc.m();
        if data.nrows() != expected {
            return Err(Error::dim("ensemble stacked rows", expected, data.nrows()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ensemble data"));
        }
        Ok(FlowEnsemble { grid, trunc, data })
    }

    pub fn from_samples(samples: &[FlowSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyEnsemble)?;
        let grid = first.grid().clone();
        let trunc = first.trunc();
        let mn = grid.n() * trunc.m();
        let mut data = DMatrix::zeros(mn, samples.len());
        for (j, s) in samples.iter().enumerate() {
            ensure_compatible(&grid, s.grid(), trunc, s.trunc())?;
            data.set_column(j, &s.stack());
        }
        Ok(FlowEnsemble { grid, trunc, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn trunc(&self) -> BasisTruncation {
        self.trunc
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Stacked dimension `m·n`.
    pub fn stacked_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn sample(&self, j: usize) -> FlowSample {
        unstack(self.data.column(j).as_slice(), &self.grid, self.trunc)
            .expect("stored column has the right length")
    }

    /// Pointwise mean flow across samples (zero flow for an empty ensemble).
    pub fn mean_flow(&self) -> FlowSample {
        let mn = self.stacked_dim();
        let n_samples = self.n_samples();
        let mut mean = DVector::zeros(mn);
        if n_samples > 0 {
            for j in 0..n_samples {
                mean += self.data.column(j);
            }
            mean /= n_samples as f64;
        }
        unstack(mean.as_slice(), &self.grid, self.trunc).expect("mean has the right length")
    }

    /// Ensemble with the mean flow subtracted from every sample.
    pub fn centered(&self) -> FlowEnsemble {
        let mean = self.mean_flow().stack();
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            col -= &mean;
        }
        FlowEnsemble {
            grid: self.grid.clone(),
            trunc: self.trunc,
            data,
        }
    }
}

/// Operator-valued kernel sampled on the grid, stored as its full
/// `(m·n) × (m·n)` symmetric assembly; block `(k, l)` is the `m × m` matrix
/// of `K(t_k, t_l)` in the retained basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteKernel {
    grid: Grid,
    trunc: BasisTruncation,
    assembly: DMatrix<f64>,
}

impl DiscreteKernel {
    /// Wrap a full assembly. The matrix must be exactly symmetric; assemble
    /// one triangle and mirror (or use [`DiscreteKernel::from_upper_blocks`])
    /// rather than relying on floating-point products commuting.
    pub fn from_assembly(
        grid: Grid,
        trunc: BasisTruncation,
        assembly: DMatrix<f64>,
    ) -> Result<Self> {
        let mn = grid.n() * trunc.m();
        if assembly.nrows() != mn || assembly.ncols() != mn {
            return Err(Error::dim("kernel assembly order", mn, assembly.nrows().max(assembly.ncols())));
        }
        if assembly.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("kernel assembly"));
        }
        for r in 0..mn {
            for c in (r + 1)..mn {
                if assembly[(r, c)] != assembly[(c, r)] {
                    return Err(Error::NotSymmetric {
                        row: r,
                        col: c,
                        deviation: (assembly[(r, c)] - assembly[(c, r)]).abs(),
                    });
                }
            }
        }
        Ok(DiscreteKernel {
            grid,
            trunc,
            assembly,
        })
    }

    /// Mirror the upper triangle onto the lower one and wrap the result.
    pub fn from_mirrored(
        grid: Grid,
        trunc: BasisTruncation,
        mut assembly: DMatrix<f64>,
    ) -> Result<Self> {
        let mn = grid.n() * trunc.m();
        if assembly.nrows() != mn || assembly.ncols() != mn {
            return Err(Error::dim("kernel assembly order", mn, assembly.nrows().max(assembly.ncols())));
        }
        for r in 0..mn {
            for c in (r + 1)..mn {
                assembly[(c, r)] = assembly[(r, c)];
            }
        }
        Self::from_assembly(grid, trunc, assembly)
    }

    /// Assemble from a block generator called only for `k ≤ l`; the lower
    /// blocks are the exact transposes of the upper ones.
    pub fn from_upper_blocks(
        grid: Grid,
        trunc: BasisTruncation,
        block: impl Fn(usize, usize) -> DMatrix<f64>,
    ) -> Result<Self> {
        let n = grid.n();
        let m = trunc.m();
        let mut assembly = DMatrix::zeros(m * n, m * n);
        for k in 0..n {
            for l in k..n {
                let b = block(k, l);
                if b.nrows() != m || b.ncols() != m {
                    return Err(Error::dim("kernel block order", m, b.nrows().max(b.ncols())));
                }
                for i in 0..m {
                    for j in 0..m {
                        assembly[(k * m + i, l * m + j)] = b[(i, j)];
                    }
                }
            }
        }
        Self::from_mirrored(grid, trunc, assembly)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn trunc(&self) -> BasisTruncation {
        self.trunc
    }

    /// Full symmetric assembly, the blocked reshape of the kernel.
    pub fn assembly(&self) -> &DMatrix<f64> {
        &self.assembly
    }

    /// View of block `(k, l)`, the matrix of `K(t_k, t_l)`.
    pub fn block(&self, k: usize, l: usize) -> DMatrixView<'_, f64> {
        let m = self.trunc.m();
        self.assembly.view((k * m, l * m), (m, m))
    }

    /// Trace of the diagonal block at node `k` (the trace norm of the PSD
    /// operator `K(t_k, t_k)`).
    pub fn diag_trace(&self, k: usize) -> f64 {
        let m = self.trunc.m();
        (0..m).map(|i| self.assembly[(k * m + i, k * m + i)]).sum()
    }

    /// Quadrature approximation of `∫ tr K(s, s) ds`.
    pub fn trace_quadrature(&self) -> f64 {
        let n = self.grid.n();
        self.grid.weight() * (0..n).map(|k| self.diag_trace(k)).sum::<f64>()
    }

    /// Largest diagonal trace over the grid; the natural scale for residual
    /// and domination tolerances.
    pub fn diag_trace_sup(&self) -> f64 {
        let n = self.grid.n();
        (0..n).map(|k| self.diag_trace(k)).fold(0.0, f64::max)
    }

    /// Largest absolute assembly entry.
    pub fn max_abs(&self) -> f64 {
        self.assembly.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }
}

/// Eigenvalues with their discretized eigenflows, orthonormal under the
/// grid quadrature and sorted nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    grid: Grid,
    trunc: BasisTruncation,
    eigenvalues: Vec<f64>,
    /// Column `j` is the stacked eigenflow `Φ_j`.
    stacked: DMatrix<f64>,
}

impl EigenSystem {
    pub fn new(
        grid: Grid,
        trunc: BasisTruncation,
        eigenvalues: Vec<f64>,
        stacked: DMatrix<f64>,
    ) -> Result<Self> {
        let mn = grid.n() * trunc.m();
        if stacked.nrows() != mn {
            return Err(Error::dim("stacked eigenflow rows", mn, stacked.nrows()));
        }
        if stacked.ncols() != eigenvalues.len() {
            return Err(Error::dim(
                "eigenflow count",
                eigenvalues.len(),
                stacked.ncols(),
            ));
        }
        if eigenvalues.iter().any(|x| !x.is_finite())
            || stacked.iter().any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite("eigensystem"));
        }
        for j in 1..eigenvalues.len() {
            if eigenvalues[j] > eigenvalues[j - 1] {
                return Err(Error::NotSorted(j));
            }
        }
        if let Some(&smallest) = eigenvalues.last() {
            let scale = eigenvalues[0].max(0.0);
            let floor = tol::EIGENVALUE_CLAMP_REL * scale;
            if smallest < -floor {
                return Err(Error::NotPositiveSemidefinite {
                    eigenvalue: smallest,
                    tolerance: floor,
                });
            }
        }
        let sys = EigenSystem {
            grid,
            trunc,
            eigenvalues,
            stacked,
        };
        let dev = sys.max_gram_deviation();
        if dev > tol::QUADRATURE_ORTHONORMALITY {
            return Err(Error::NotOrthonormal {
                deviation: dev,
                tolerance: tol::QUADRATURE_ORTHONORMALITY,
            });
        }
        Ok(sys)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn trunc(&self) -> BasisTruncation {
        self.trunc
    }

    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, j: usize) -> f64 {
        self.eigenvalues[j]
    }

    /// Stacked eigenflows, one column per component.
    pub fn stacked_flows(&self) -> &DMatrix<f64> {
        &self.stacked
    }

    pub fn eigenflow(&self, j: usize) -> FlowSample {
        unstack(self.stacked.column(j).as_slice(), &self.grid, self.trunc)
            .expect("stored column has the right length")
    }

    /// `‖Φ_j(t_k)‖²`, the squared coordinate norm of eigenflow `j` at node `k`.
    pub fn flow_node_norm_sq(&self, j: usize, k: usize) -> f64 {
        let m = self.trunc.m();
        self.stacked
            .view((k * m, j), (m, 1))
            .iter()
            .map(|x| x * x)
            .sum()
    }

    /// Largest deviation of the quadrature Gram matrix from the identity.
    pub fn max_gram_deviation(&self) -> f64 {
        let gram = self.stacked.tr_mul(&self.stacked) * self.grid.weight();
        let j = self.count();
        let mut dev: f64 = 0.0;
        for a in 0..j {
            for b in 0..j {
                let target = if a == b { 1.0 } else { 0.0 };
                dev = dev.max((gram[(a, b)] - target).abs());
            }
        }
        dev
    }

    /// Prefix truncation keeping the leading `count` components.
    pub fn leading(&self, count: usize) -> Result<EigenSystem> {
        if count > self.count() {
            return Err(Error::RankExceeded {
                requested: count,
                bound: self.count(),
            });
        }
        Ok(EigenSystem {
            grid: self.grid.clone(),
            trunc: self.trunc,
            eigenvalues: self.eigenvalues[..count].to_vec(),
            stacked: self.stacked.columns(0, count).into_owned(),
        })
    }
}

/// Expansion scores: entry `(j, r)` is the quadrature inner product of
/// sample `j` with eigenflow `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: DMatrix<f64>,
}

impl ScoreMatrix {
    pub(crate) fn from_values(values: DMatrix<f64>) -> Self {
        ScoreMatrix { values }
    }

    /// `N × J` score matrix.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn count(&self) -> usize {
        self.values.ncols()
    }

    /// Empirical second-moment matrix `(1/N) SᵀS`. When the source ensemble
    /// is centered this is the score covariance; the expansion makes it
    /// diagonal with the eigenvalues on the diagonal.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let n = self.values.nrows().max(1);
        self.values.tr_mul(&self.values) / n as f64
    }

    /// Column means of the scores.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.values.nrows().max(1);
        (0..self.values.ncols())
            .map(|r| self.values.column(r).sum() / n as f64)
            .collect()
    }
}
