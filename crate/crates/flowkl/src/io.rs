//! Binary interchange formats and file validation.
//!
//! All three formats share the same frame: an 8-byte ASCII magic, an
//! unsigned 32-bit little-endian byte length, a UTF-8 JSON header of that
//! length, then the payload as little-endian `f64` values. Readers reject
//! trailing bytes and non-finite payloads.
//!
//! | magic      | payload                                            |
//! |------------|----------------------------------------------------|
//! | `FLOWKL01` | ensemble data matrix, column-major, `m·n·N` values |
//! | `FLOWKK01` | kernel block tensor, `(k,l,i,i′)` row-major        |
//! | `FLOWKE01` | eigenvalues, then stacked eigenflows, `J·(1+m·n)`  |
//!
//! Ensemble headers: `{domain_length, n, m, N, seed?, generator?}`.
//! Kernel headers drop `N`; eigensystem headers carry `count` instead.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BasisTruncation, DiscreteKernel, EigenSystem, FlowEnsemble, Grid};
use nalgebra::DMatrix;

pub const ENSEMBLE_MAGIC: &[u8; 8] = b"FLOWKL01";
pub const KERNEL_MAGIC: &[u8; 8] = b"FLOWKK01";
pub const EIGEN_MAGIC: &[u8; 8] = b"FLOWKE01";

const HEADER_LEN_OFFSET: u64 = 8;
const HEADER_OFFSET: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Ensemble,
    Kernel,
    Eigensystem,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleHeader {
    pub domain_length: f64,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelHeader {
    pub domain_length: f64,
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenHeader {
    pub domain_length: f64,
    pub n: usize,
    pub m: usize,
    pub count: usize,
}

/// Outcome of [`validate_file`]: the recognized kind and the echoed header.
#[derive(Debug, Clone, Serialize)]
pub struct FormatReport {
    pub kind: FileKind,
    pub header: serde_json::Value,
    pub payload_values: usize,
    pub payload_bytes: u64,
}

struct Parsed {
    kind: FileKind,
    header: serde_json::Value,
    payload_offset: u64,
    values: Vec<f64>,
}

fn grid_field(header: &serde_json::Value, field: &str) -> Result<usize> {
    header
        .get(field)
        .and_then(|v| v.as_u64())
        .filter(|&v| v >= 1)
        .map(|v| v as usize)
        .ok_or_else(|| {
            Error::format(
                HEADER_OFFSET,
                format!("header field '{field}' must be a positive integer"),
            )
        })
}

fn domain_length_field(header: &serde_json::Value) -> Result<f64> {
    header
        .get("domain_length")
        .and_then(|v| v.as_f64())
        .filter(|v| v.is_finite() && *v > 0.0)
        .ok_or_else(|| {
            Error::format(
                HEADER_OFFSET,
                "header field 'domain_length' must be positive and finite",
            )
        })
}

fn expected_values(kind: FileKind, header: &serde_json::Value) -> Result<usize> {
    let n = grid_field(header, "n")?;
    let m = grid_field(header, "m")?;
    domain_length_field(header)?;
    Ok(match kind {
        FileKind::Ensemble => {
            let n_samples = header
                .get("N")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| {
                    Error::format(HEADER_OFFSET, "header field 'N' must be a nonnegative integer")
                })? as usize;
            m * n * n_samples
        }
        FileKind::Kernel => (m * n) * (m * n),
        FileKind::Eigensystem => {
            let count = header
                .get("count")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| {
                    Error::format(HEADER_OFFSET, "header field 'count' must be a nonnegative integer")
                })? as usize;
            count + count * m * n
        }
    })
}

fn parse(path: &Path) -> Result<Parsed> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::format(0, "file too short to hold a magic"));
    }
    let kind = match &bytes[0..8] {
        b if b == ENSEMBLE_MAGIC => FileKind::Ensemble,
        b if b == KERNEL_MAGIC => FileKind::Kernel,
        b if b == EIGEN_MAGIC => FileKind::Eigensystem,
        _ => return Err(Error::format(0, "unknown magic")),
    };
    if bytes.len() < HEADER_OFFSET as usize {
        return Err(Error::format(HEADER_LEN_OFFSET, "missing header length"));
    }
    let header_len =
        u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = HEADER_OFFSET as usize + header_len;
    if header_end > bytes.len() {
        return Err(Error::format(
            HEADER_LEN_OFFSET,
            format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ),
        ));
    }
    let header: serde_json::Value = serde_json::from_slice(&bytes[HEADER_OFFSET as usize..header_end])
        .map_err(|e| Error::format(HEADER_OFFSET, format!("header is not valid JSON: {e}")))?;

    let expected = expected_values(kind, &header)?;
    let expected_bytes = expected * 8;
    let payload = &bytes[header_end..];
    if payload.len() < expected_bytes {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "truncated payload: expected {expected_bytes} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected_bytes {
        return Err(Error::format(
            (header_end + expected_bytes) as u64,
            format!(
                "trailing bytes: expected {expected_bytes} payload bytes, found {}",
                payload.len()
            ),
        ));
    }
    let mut values = Vec::with_capacity(expected);
    for (idx, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::format(
                (header_end + idx * 8) as u64,
                format!("non-finite value {v}"),
            ));
        }
        values.push(v);
    }
    Ok(Parsed {
        kind,
        header,
        payload_offset: header_end as u64,
        values,
    })
}

/// Verify magic, header consistency, payload length, and finiteness.
/// Violations name the byte offset; success echoes the header.
pub fn validate_file(path: impl AsRef<Path>) -> Result<FormatReport> {
    let parsed = parse(path.as_ref())?;
    Ok(FormatReport {
        kind: parsed.kind,
        header: parsed.header,
        payload_values: parsed.values.len(),
        payload_bytes: (parsed.values.len() * 8) as u64,
    })
}

fn write_framed(path: &Path, magic: &[u8; 8], header: &[u8], values: &[f64]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    file.write_all(magic)?;
    file.write_all(&(header.len() as u32).to_le_bytes())?;
    file.write_all(header)?;
    for v in values {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Write an ensemble with optional provenance fields in the header.
pub fn write_ensemble(
    path: impl AsRef<Path>,
    ens: &FlowEnsemble,
    seed: Option<u64>,
    generator: Option<&str>,
) -> Result<()> {
    let header = EnsembleHeader {
        domain_length: ens.grid().domain_length(),
        n: ens.grid().n(),
        m: ens.trunc().m(),
        n_samples: ens.n_samples(),
        seed,
        generator: generator.map(str::to_owned),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    write_framed(
        path.as_ref(),
        ENSEMBLE_MAGIC,
        &header_bytes,
        ens.data().as_slice(),
    )
}

pub fn read_ensemble(path: impl AsRef<Path>) -> Result<(FlowEnsemble, EnsembleHeader)> {
    let parsed = parse(path.as_ref())?;
    if parsed.kind != FileKind::Ensemble {
        return Err(Error::format(0, "expected an ensemble file (magic FLOWKL01)"));
    }
    let header: EnsembleHeader = serde_json::from_value(parsed.header)?;
    let grid = Grid::uniform(header.n, header.domain_length)?;
    let trunc = BasisTruncation::new(header.m)?;
    let data = DMatrix::from_column_slice(header.m * header.n, header.n_samples, &parsed.values);
    Ok((FlowEnsemble::new(grid, trunc, data)?, header))
}

/// Write a kernel as its `(k, l, i, i′)` row-major block tensor.
pub fn write_kernel(path: impl AsRef<Path>, kernel: &DiscreteKernel) -> Result<()> {
    let header = KernelHeader {
        domain_length: kernel.grid().domain_length(),
        n: kernel.grid().n(),
        m: kernel.trunc().m(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let n = kernel.grid().n();
    let m = kernel.trunc().m();
    let mut values = Vec::with_capacity((m * n) * (m * n));
    for k in 0..n {
        for l in 0..n {
            let block = kernel.block(k, l);
            for i in 0..m {
                for ip in 0..m {
                    values.push(block[(i, ip)]);
                }
            }
        }
    }
    write_framed(path.as_ref(), KERNEL_MAGIC, &header_bytes, &values)
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<(DiscreteKernel, KernelHeader)> {
    let parsed = parse(path.as_ref())?;
    if parsed.kind != FileKind::Kernel {
        return Err(Error::format(0, "expected a kernel file (magic FLOWKK01)"));
    }
    let header: KernelHeader = serde_json::from_value(parsed.header)?;
    let n = header.n;
    let m = header.m;
    let mut assembly = DMatrix::zeros(m * n, m * n);
    let tensor_index = |k: usize, l: usize, i: usize, ip: usize| ((k * n + l) * m + i) * m + ip;
    for k in 0..n {
        for l in 0..n {
            for i in 0..m {
                for ip in 0..m {
                    assembly[(k * m + i, l * m + ip)] = parsed.values[tensor_index(k, l, i, ip)];
                }
            }
        }
    }
    // symmetry is part of the format; report the offending element offset
    for k in 0..n {
        for l in k..n {
            for i in 0..m {
                for ip in 0..m {
                    let upper = assembly[(k * m + i, l * m + ip)];
                    let lower = assembly[(l * m + ip, k * m + i)];
                    if upper != lower {
                        let idx = tensor_index(l, k, ip, i).max(tensor_index(k, l, i, ip));
                        return Err(Error::format(
                            parsed.payload_offset + (idx * 8) as u64,
                            format!(
                                "kernel tensor is not symmetric: block ({k},{l}) entry ({i},{ip})"
                            ),
                        ));
                    }
                }
            }
        }
    }
    let grid = Grid::uniform(n, header.domain_length)?;
    let trunc = BasisTruncation::new(m)?;
    Ok((DiscreteKernel::from_assembly(grid, trunc, assembly)?, header))
}

/// Write an eigensystem: eigenvalues, then the stacked eigenflows.
pub fn write_eigensystem(path: impl AsRef<Path>, eig: &EigenSystem) -> Result<()> {
    let header = EigenHeader {
        domain_length: eig.grid().domain_length(),
        n: eig.grid().n(),
        m: eig.trunc().m(),
        count: eig.count(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut values = Vec::with_capacity(eig.count() * (1 + eig.grid().n() * eig.trunc().m()));
    values.extend_from_slice(eig.eigenvalues());
    values.extend_from_slice(eig.stacked_flows().as_slice());
    write_framed(path.as_ref(), EIGEN_MAGIC, &header_bytes, &values)
}

pub fn read_eigensystem(path: impl AsRef<Path>) -> Result<(EigenSystem, EigenHeader)> {
    let parsed = parse(path.as_ref())?;
    if parsed.kind != FileKind::Eigensystem {
        return Err(Error::format(0, "expected an eigensystem file (magic FLOWKE01)"));
    }
    let header: EigenHeader = serde_json::from_value(parsed.header)?;
    let count = header.count;
    let mn = header.m * header.n;
    let eigenvalues = parsed.values[..count].to_vec();
    for j in 1..count {
        if eigenvalues[j] > eigenvalues[j - 1] {
            return Err(Error::format(
                parsed.payload_offset + (j * 8) as u64,
                format!("eigenvalues not sorted nonincreasing at index {j}"),
            ));
        }
    }
    let stacked = DMatrix::from_column_slice(mn, count, &parsed.values[count..]);
    let grid = Grid::uniform(header.n, header.domain_length)?;
    let trunc = BasisTruncation::new(header.m)?;
    let eig = EigenSystem::new(grid, trunc, eigenvalues, stacked).map_err(|e| match e {
        Error::NotOrthonormal { deviation, tolerance } => Error::format(
            parsed.payload_offset + (count * 8) as u64,
            format!(
                "stored eigenflows are not quadrature-orthonormal: deviation {deviation:.3e} > {tolerance:.3e}"
            ),
        ),
        other => other,
    })?;
    Ok((eig, header))
}

/// `(j, λ_j)` pairs, 1-based, for plotting by external tools.
pub fn eigenvalues_csv(eig: &EigenSystem) -> String {
    let mut out = String::from("j,lambda\n");
    for (idx, lam) in eig.eigenvalues().iter().enumerate() {
        out.push_str(&format!("{},{:.17e}\n", idx + 1, lam));
    }
    out
}

pub fn write_eigenvalues_csv(path: impl AsRef<Path>, eig: &EigenSystem) -> Result<()> {
    fs::write(path, eigenvalues_csv(eig))?;
    Ok(())
}
