//! Recovery of a function from its subsampled local averages.
//!
//! Three engines share one data path:
//!
//! * [`pc_recover`] places each datum as a constant on its patch;
//! * [`build_multiscale_basis`] computes the energy-minimizing basis
//!   `psi_i = sum_j Theta^{-1}_{ij} L^{-1} phi_j`, biorthogonal to the
//!   measurement functionals, and [`ms_recover`] combines it with the data;
//! * the weighted variant is the multiscale engine with the coefficient
//!   replaced by a singular weight (see [`crate::weights`]).
//!
//! The subsample kind (cube, slice or point) enters only through the
//! measurement functionals.

mod sharp;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sharp::{sharp_constant_estimate, sharp_constant_with, SharpEstimate, SharpOptions};

use crate::elliptic::{weighted_energy, CoefficientField, StiffnessOperator};
use crate::grid::{CellField, CoarsePartition, GridFunction};
use crate::measurements::{MeasurementSet, MeasurementVector};
use crate::{Error, Result};

/// Piecewise-constant recovery: `data_i` on patch `i`; nodes shared by
/// several patches take the mean of their constants.
pub fn pc_recover(data: &MeasurementVector, part: &CoarsePartition) -> Result<GridFunction> {
    if data.len() != part.num_patches() {
        return Err(Error::Mismatch(format!("{} data for {} patches", data.len(), part.num_patches())));
    }
    let spec = *part.spec();
    let values = (0..spec.num_nodes())
        .map(|node| {
            let patches = part.patches_of_node(node);
            patches.iter().map(|&i| data.values[i]).sum::<f64>() / patches.len() as f64
        })
        .collect();
    GridFunction::new(spec, values)
}

/// `L^{-1} phi_j` for every functional, solved concurrently and returned in
/// index order.
pub fn green_solves(set: &MeasurementSet, op: &StiffnessOperator, tol: f64) -> Result<Vec<GridFunction>> {
    let spec = *op.spec();
    if set.subsample().partition().spec() != &spec {
        return Err(Error::Mismatch("measurements and operator live on different grids".into()));
    }
    set.functionals()
        .par_iter()
        .map(|f| op.solve_functional(&f.interior_load(&spec), tol))
        .collect()
}

/// Coupling matrix `Theta_ij = [phi_j, L^{-1} phi_i]` with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct ThetaMatrix {
    matrix: DMatrix<f64>,
    asymmetry: f64,
    cholesky: Cholesky<f64, Dyn>,
}

impl ThetaMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `max |Theta_ij - Theta_ji| / max |Theta_ij|` before symmetrization.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.cholesky.inverse()
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = nalgebra::DVector::from_column_slice(rhs);
        self.cholesky.solve(&b).as_slice().to_vec()
    }
}

/// Assembles and factors `Theta` from precomputed Green solves.
pub fn build_theta(set: &MeasurementSet, solves: &[GridFunction]) -> Result<ThetaMatrix> {
    let m = set.len();
    if solves.len() != m {
        return Err(Error::Mismatch(format!("{} solves for {m} functionals", solves.len())));
    }
    let raw = DMatrix::from_fn(m, m, |i, j| set.functional(j).apply(solves[i].values()));
    let scale = raw.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let asymmetry = if scale > 0.0 { (&raw - raw.transpose()).amax() / scale } else { 0.0 };
    let matrix = (&raw + raw.transpose()) * 0.5;
    let cholesky = Cholesky::new(matrix.clone())
        .ok_or_else(|| Error::Indefinite(format!("coupling matrix of size {m} is not positive definite")))?;
    Ok(ThetaMatrix { matrix, asymmetry, cholesky })
}

/// What a basis was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisProvenance {
    /// `"a"` for the operator coefficient, `"w"` for a singular weight.
    pub coefficient: String,
    pub kind: String,
    pub h: f64,
    #[serde(rename = "H")]
    pub patch_side: f64,
    pub solver_tol: f64,
}

/// Recovery basis `psi_i`, one grid function per coarse index.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub provenance: BasisProvenance,
    functions: Vec<GridFunction>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    provenance: BasisProvenance,
    offsets: BTreeMap<usize, u64>,
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn function(&self, i: usize) -> &GridFunction {
        &self.functions[i]
    }

    pub fn functions(&self) -> &[GridFunction] {
        &self.functions
    }

    /// `[psi_i, phi_j]` for all pairs; the identity up to solver error.
    pub fn constraint_matrix(&self, set: &MeasurementSet) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), set.len(), |i, j| set.functional(j).apply(self.functions[i].values()))
    }

    /// Writes the concatenated grid-function blobs to `blob` and a JSON
    /// manifest mapping each patch index to its byte offset.
    pub fn write<B: Write, M: Write>(&self, mut blob: B, manifest: M) -> Result<()> {
        let mut offsets = BTreeMap::new();
        let mut offset = 0u64;
        for (i, f) in self.functions.iter().enumerate() {
            offsets.insert(i, offset);
            let mut buf = Vec::new();
            f.write_binary(&mut buf)?;
            offset += buf.len() as u64;
            blob.write_all(&buf)?;
        }
        serde_json::to_writer_pretty(manifest, &Manifest { provenance: self.provenance.clone(), offsets })?;
        Ok(())
    }

    pub fn read<B: Read, M: Read>(mut blob: B, manifest: M) -> Result<Self> {
        let manifest: Manifest = serde_json::from_reader(manifest)?;
        let mut bytes = Vec::new();
        blob.read_to_end(&mut bytes)?;
        let functions = manifest
            .offsets
            .values()
            .map(|&off| {
                let start = usize::try_from(off).map_err(|_| Error::Parse("offset overflow".into()))?;
                let chunk = bytes.get(start..).ok_or_else(|| Error::Parse(format!("offset {off} past end of blob")))?;
                GridFunction::read_binary(chunk)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { provenance: manifest.provenance, functions })
    }
}

/// `psi_i = sum_j Theta^{-1}_{ij} L^{-1} phi_j`, assembled column-parallel.
pub fn multiscale_basis(theta: &ThetaMatrix, solves: &[GridFunction], provenance: BasisProvenance) -> Result<BasisSet> {
    let m = theta.dim();
    if solves.len() != m {
        return Err(Error::Mismatch(format!("{} solves for a {m}x{m} coupling matrix", solves.len())));
    }
    let inv = theta.inverse();
    let spec = *solves[0].spec();
    let functions = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut values = vec![0.0; spec.num_nodes()];
            for (j, s) in solves.iter().enumerate() {
                let c = inv[(i, j)];
                for (v, sv) in values.iter_mut().zip(s.values()) {
                    *v += c * sv;
                }
            }
            GridFunction::new(spec, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BasisSet { provenance, functions })
}

/// Green solves, coupling matrix and basis in one call.
pub fn build_multiscale_basis(set: &MeasurementSet, op: &StiffnessOperator, tol: f64, coefficient: &str) -> Result<BasisSet> {
    let solves = green_solves(set, op, tol)?;
    let theta = build_theta(set, &solves)?;
    let sub = set.subsample();
    multiscale_basis(
        &theta,
        &solves,
        BasisProvenance {
            coefficient: coefficient.to_string(),
            kind: sub.kind().name().to_string(),
            h: sub.side(),
            patch_side: sub.partition().patch_side(),
            solver_tol: tol,
        },
    )
}

/// `u^{h,H} = sum_i data_i psi_i`.
pub fn ms_recover(data: &MeasurementVector, basis: &BasisSet) -> Result<GridFunction> {
    if data.len() != basis.len() {
        return Err(Error::Mismatch(format!("{} data for {} basis functions", data.len(), basis.len())));
    }
    let spec = *basis.functions[0].spec();
    let mut values = vec![0.0; spec.num_nodes()];
    for (c, psi) in data.values.iter().zip(&basis.functions) {
        for (v, p) in values.iter_mut().zip(psi.values()) {
            *v += c * p;
        }
    }
    GridFunction::new(spec, values)
}

/// Which engine produced a recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    PiecewiseConstant,
    Multiscale,
    WeightedMultiscale,
}

/// Parameters echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub d: usize,
    pub p: f64,
    pub h: f64,
    #[serde(rename = "H")]
    pub patch_side: f64,
    pub basis: BasisKind,
}

/// Error of a recovery in the norms controlled by the theory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub l2_error: f64,
    pub energy_error: f64,
    pub weighted_energy_error: Option<f64>,
    pub params: ReportParams,
    pub per_patch_l2: Vec<f64>,
    /// Whether `|u - u^{h,H}|_a <= |u|_a`; absent for piecewise-constant recovery,
    /// which has no such guarantee.
    pub energy_stable: Option<bool>,
}

/// Compares a recovery against the truth. When `weight` is given the
/// weighted energy error `(int w a |grad e|^2)^{1/2}` is reported as well.
pub fn recovery_error_report(
    u: &GridFunction,
    recovered: &GridFunction,
    coeff: &CoefficientField,
    weight: Option<&CellField>,
    part: &CoarsePartition,
    params: ReportParams,
) -> Result<RecoveryReport> {
    let err = recovered.sub(u)?;
    let l2_error = err.lp_norm(2.0, None)?;
    let energy_error = weighted_energy(coeff, None, &err)?.sqrt();
    let weighted_energy_error = weight.map(|w| weighted_energy(coeff, Some(w), &err).map(f64::sqrt)).transpose()?;
    let per_patch_l2 = (0..part.num_patches())
        .map(|i| err.lp_norm(2.0, Some(part.patch(i))))
        .collect::<Result<Vec<_>>>()?;
    let energy_stable = match params.basis {
        BasisKind::PiecewiseConstant => None,
        _ => {
            let norm_u = weighted_energy(coeff, None, u)?.sqrt();
            Some(energy_error <= norm_u * (1.0 + 1e-9) + 1e-14)
        }
    };
    Ok(RecoveryReport { l2_error, energy_error, weighted_energy_error, params, per_patch_l2, energy_stable })
}

/// Measurement set, operator and basis bundled for repeated recoveries.
#[derive(Debug)]
pub struct MultiscaleRecovery {
    set: MeasurementSet,
    op: StiffnessOperator,
    basis: BasisSet,
}

impl MultiscaleRecovery {
    pub fn new(set: MeasurementSet, op: StiffnessOperator, tol: f64, coefficient: &str) -> Result<Self> {
        let basis = build_multiscale_basis(&set, &op, tol, coefficient)?;
        Ok(Self { set, op, basis })
    }

    pub fn measurements(&self) -> &MeasurementSet {
        &self.set
    }

    pub fn operator(&self) -> &StiffnessOperator {
        &self.op
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    /// Measures `u` and recovers it from the data.
    pub fn recover(&self, u: &GridFunction) -> Result<(MeasurementVector, GridFunction)> {
        let data = self.set.measure(u)?;
        let rec = ms_recover(&data, &self.basis)?;
        Ok((data, rec))
    }
}
