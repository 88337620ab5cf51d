//! Singular weights concentrated on the subsample sets, their limits as the
//! sets shrink to the patch centers, and the integrability condition that
//! makes the weighted Poincaré inequality hold uniformly in `h`.
//!
//! Weights are evaluated at fine-cell centers from the exact Euclidean
//! distance to the union of subsample sets.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::elliptic::{CoefficientField, StiffnessOperator, DEFAULT_TOL};
use crate::grid::{CellField, CoarsePartition, DomainSpec, GridFunction, SubsampleSpec, MAX_DIM};
use crate::measurements::{MeasurementSet, MeasurementVector};
use crate::recovery::{build_multiscale_basis, ms_recover};
use crate::{Error, Result};

/// Distance from every fine-cell center to the union of subsample sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    field: CellField,
    /// Side of the subsample sets (zero for the point limit).
    h: f64,
    patch_side: f64,
}

fn box_distance(x: &[f64; MAX_DIM], lo: &[f64; MAX_DIM], hi: &[f64; MAX_DIM], d: usize) -> f64 {
    (0..d)
        .map(|k| {
            let g = (lo[k] - x[k]).max(x[k] - hi[k]).max(0.0);
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

impl DistanceField {
    /// Distance to the subsample sets of `sub` (boxes, slices or centers).
    pub fn to_subsample(sub: &SubsampleSpec) -> Self {
        let part = sub.partition();
        let boxes: Vec<_> = (0..part.num_patches()).map(|i| sub.support_box(i)).collect();
        Self::from_boxes(part, &boxes, sub.side())
    }

    /// Distance to the patch centers `X^H`.
    pub fn to_centers(part: &CoarsePartition) -> Self {
        let boxes: Vec<_> = (0..part.num_patches()).map(|i| (part.center(i), part.center(i))).collect();
        Self::from_boxes(part, &boxes, 0.0)
    }

    fn from_boxes(part: &CoarsePartition, boxes: &[([f64; MAX_DIM], [f64; MAX_DIM])], h: f64) -> Self {
        let spec = *part.spec();
        let d = spec.dim();
        let field = CellField::from_fn(spec, |c, _| {
            let x = spec.cell_center(c);
            boxes.iter().map(|(lo, hi)| box_distance(&x, lo, hi, d)).fold(f64::INFINITY, f64::min)
        });
        Self { field, h, patch_side: part.patch_side() }
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn spec(&self) -> &DomainSpec {
        self.field.spec()
    }

    pub fn subsample_side(&self) -> f64 {
        self.h
    }

    pub fn patch_side(&self) -> f64 {
        self.patch_side
    }

    /// `max{h, dist}` per cell, the regularized distance the weights use.
    pub fn regularized(&self) -> impl Iterator<Item = f64> + '_ {
        self.values().iter().map(move |&v| v.max(self.h))
    }
}

/// Shape of the singular weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "profile")]
pub enum WeightProfile {
    /// `(H/m)^{d-p+beta}` with `m = max{h, dist}`, `beta > 0`.
    Polynomial { beta: f64 },
    /// `(H/m)^{d-p} (ln(1/m)+1)^gamma / (ln(1/H)+1)^{gamma-p+1}`, `gamma > p-1`.
    Logarithmic { gamma: f64 },
    /// `(H/m)^{d-1}`, the `p = 1` weight.
    W11,
}

impl WeightProfile {
    pub fn polynomial() -> Self {
        WeightProfile::Polynomial { beta: 1.0 }
    }

    pub fn logarithmic(p: f64) -> Self {
        WeightProfile::Logarithmic { gamma: p }
    }

    fn validate(&self, p: f64) -> Result<()> {
        match *self {
            WeightProfile::Polynomial { beta } if !(beta > 0.0) => {
                Err(Error::Domain(format!("polynomial weight needs beta > 0, got {beta}")))
            }
            WeightProfile::Logarithmic { gamma } if !(gamma > p - 1.0) => {
                Err(Error::Domain(format!("logarithmic weight needs gamma > p - 1 = {}, got {gamma}", p - 1.0)))
            }
            _ => Ok(()),
        }
    }

    fn eval(&self, d: usize, p: f64, patch_side: f64, m: f64) -> f64 {
        let d = d as f64;
        let ratio = patch_side / m;
        match *self {
            WeightProfile::Polynomial { beta } => ratio.powf(d - p + beta),
            WeightProfile::Logarithmic { gamma } => {
                let top = ((1.0 / m).ln() + 1.0).max(f64::EPSILON);
                let bottom = ((1.0 / patch_side).ln() + 1.0).max(f64::EPSILON);
                ratio.powf(d - p) * top.powf(gamma) / bottom.powf(gamma - p + 1.0)
            }
            WeightProfile::W11 => ratio.powf(d - 1.0),
        }
    }
}

/// Everything a weight was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    #[serde(flatten)]
    pub profile: WeightProfile,
    pub p: f64,
    pub d: usize,
    pub h: f64,
    #[serde(rename = "H")]
    pub patch_side: f64,
    /// True for the `h = 0` limit `w^H`.
    pub is_limit: bool,
}

/// Positive weight, one value per fine cell.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    field: CellField,
    params: WeightParams,
}

/// Evaluates the profile on a distance field. A zero subsample side yields
/// the limit weight; it requires every cell center to avoid the centers.
pub fn build_weight(dist: &DistanceField, profile: WeightProfile, p: f64) -> Result<WeightField> {
    profile.validate(p)?;
    build_weight_unchecked(dist, profile, p)
}

/// [`build_weight`] without the profile parameter checks, so degenerate
/// members of a family (for instance `beta = 0`) can be studied.
pub fn build_weight_unchecked(dist: &DistanceField, profile: WeightProfile, p: f64) -> Result<WeightField> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("weight exponent p must be at least 1, got {p}")));
    }
    let spec = *dist.spec();
    let hh = dist.patch_side;
    if let Some(c) = dist.regularized().position(|m| m <= 0.0) {
        return Err(Error::Alignment(format!(
            "cell {c} is centered on a measurement point, where the limit weight is infinite"
        )));
    }
    let values = dist.regularized().map(|m| profile.eval(spec.dim(), p, hh, m)).collect();
    Ok(WeightField {
        field: CellField::new(spec, values)?,
        params: WeightParams { profile, p, d: spec.dim(), h: dist.h, patch_side: hh, is_limit: dist.h == 0.0 },
    })
}

impl WeightField {
    pub fn params(&self) -> &WeightParams {
        &self.params
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn as_cell_field(&self) -> &CellField {
        &self.field
    }

    pub fn to_coefficient(&self) -> Result<CoefficientField> {
        CoefficientField::new(*self.field.spec(), self.values().to_vec())
    }

    /// Params header as one JSON line, then `cell_index,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = self.field.spec();
        writeln!(w, "{}", serde_json::to_string(&self.params)?)?;
        writeln!(w, "d,n")?;
        writeln!(w, "{},{}", spec.dim(), spec.resolution())?;
        writeln!(w, "cell_index,value")?;
        for (c, v) in self.values().iter().enumerate() {
            writeln!(w, "{c},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty weight file".into()))??;
        let params: WeightParams = serde_json::from_str(&header)?;
        let rest: Vec<String> = lines.collect::<std::io::Result<_>>()?;
        let coeff = CoefficientField::read_csv(rest.join("\n").as_bytes())?;
        Ok(Self { field: coeff.as_cell_field().clone(), params })
    }
}

/// Value of the integrability condition and its ratio to `H^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCondition {
    pub integral_value: f64,
    pub normalized: f64,
}

/// `int (H/max{h,dist})^{p(d-1)/(p-1)} w^{-1/(p-1)}` by the midpoint rule.
/// Bounded multiples of `H^d` uniformly in `h` characterize admissible
/// weights for `p > 1`.
pub fn weight_condition_check(w: &WeightField, dist: &DistanceField) -> Result<WeightCondition> {
    let WeightParams { p, d, patch_side, .. } = w.params;
    if p == 1.0 {
        return Err(Error::Domain("the integrability condition is only needed for p > 1".into()));
    }
    if w.field.spec() != dist.spec() {
        return Err(Error::Mismatch("weight and distance live on different grids".into()));
    }
    let d = d as f64;
    let vol = dist.spec().cell_volume();
    let a = p * (d - 1.0) / (p - 1.0);
    let b = -1.0 / (p - 1.0);
    let integral_value = dist
        .regularized()
        .zip(w.values())
        .map(|(m, &wv)| (patch_side / m).powf(a) * wv.powf(b))
        .sum::<f64>()
        * vol;
    Ok(WeightCondition { integral_value, normalized: integral_value / patch_side.powf(d) })
}

/// Multiscale recovery with the weight in place of the coefficient.
pub fn weighted_basis_and_recover(data: &MeasurementVector, sub: &SubsampleSpec, w: &WeightField) -> Result<GridFunction> {
    if w.params.p != 2.0 {
        return Err(Error::Domain("weighted multiscale bases are built for p = 2 only".into()));
    }
    let set = MeasurementSet::new(sub);
    let op = StiffnessOperator::new(&w.to_coefficient()?);
    let basis = build_multiscale_basis(&set, &op, DEFAULT_TOL, "w")?;
    ms_recover(data, &basis)
}
