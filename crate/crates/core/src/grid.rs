//! Uniform fine grid on `[0,1]^d`, its two-scale partition into coarse patches
//! with concentric subsample sets, and nodal grid functions.
//!
//! Nodes and cells are numbered lexicographically with axis 0 running
//! fastest: node `(j_0, .., j_{d-1})` has index `sum_k j_k (n+1)^k` and cell
//! `(c_0, .., c_{d-1})` has index `sum_k c_k n^k`. Cell `c` spans
//! `[c_k/n, (c_k+1)/n]` along every axis.
//!
//! Grid functions are piecewise multilinear interpolants of their nodal
//! values. All `L^p` type norms use the midpoint rule on fine cells, where the
//! cell-center value of a multilinear function is the mean of its `2^d`
//! corner values and the gradient is the mean of the edge differences.

use std::io::{BufRead, Read, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest supported grid dimension.
pub const MAX_DIM: usize = 3;

/// Multi-index with unused trailing axes set to zero.
pub type MultiIndex = [usize; MAX_DIM];

/// Dimension and resolution of the fine grid over the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    d: usize,
    n: usize,
}

impl DomainSpec {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::Domain(format!("dimension must be 1, 2 or 3, got {d}")));
        }
        if n < 2 {
            return Err(Error::Domain(format!("fine resolution must be at least 2, got {n}")));
        }
        Ok(Self { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Cells per axis.
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Fine grid spacing `1/n`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n + 1
    }

    pub fn num_nodes(&self) -> usize {
        (self.n + 1).pow(self.d as u32)
    }

    pub fn num_cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn num_interior(&self) -> usize {
        (self.n - 1).pow(self.d as u32)
    }

    pub fn node_stride(&self, axis: usize) -> usize {
        (self.n + 1).pow(axis as u32)
    }

    pub fn node_index(&self, multi: &MultiIndex) -> usize {
        let mut idx = 0;
        for k in (0..self.d).rev() {
            idx = idx * (self.n + 1) + multi[k];
        }
        idx
    }

    pub fn node_multi(&self, mut idx: usize) -> MultiIndex {
        let mut multi = [0; MAX_DIM];
        for m in multi.iter_mut().take(self.d) {
            *m = idx % (self.n + 1);
            idx /= self.n + 1;
        }
        multi
    }

    pub fn node_coords(&self, idx: usize) -> [f64; MAX_DIM] {
        let multi = self.node_multi(idx);
        let h = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.d {
            x[k] = multi[k] as f64 * h;
        }
        x
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        let multi = self.node_multi(idx);
        multi[..self.d].iter().any(|&j| j == 0 || j == self.n)
    }

    /// Position of the node among interior nodes, if it is interior.
    pub fn interior_index(&self, node: usize) -> Option<usize> {
        let multi = self.node_multi(node);
        let mut idx = 0;
        for k in (0..self.d).rev() {
            let j = multi[k];
            if j == 0 || j == self.n {
                return None;
            }
            idx = idx * (self.n - 1) + (j - 1);
        }
        Some(idx)
    }

    pub fn interior_to_node(&self, mut interior: usize) -> usize {
        let mut multi = [0; MAX_DIM];
        for m in multi.iter_mut().take(self.d) {
            *m = interior % (self.n - 1) + 1;
            interior /= self.n - 1;
        }
        self.node_index(&multi)
    }

    pub fn cell_index(&self, multi: &MultiIndex) -> usize {
        let mut idx = 0;
        for k in (0..self.d).rev() {
            idx = idx * self.n + multi[k];
        }
        idx
    }

    pub fn cell_multi(&self, mut idx: usize) -> MultiIndex {
        let mut multi = [0; MAX_DIM];
        for m in multi.iter_mut().take(self.d) {
            *m = idx % self.n;
            idx /= self.n;
        }
        multi
    }

    pub fn cell_center(&self, idx: usize) -> [f64; MAX_DIM] {
        let multi = self.cell_multi(idx);
        let h = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.d {
            x[k] = (multi[k] as f64 + 0.5) * h;
        }
        x
    }

    /// Node index of the lower corner of a cell.
    pub fn cell_base_node(&self, cell: usize) -> usize {
        self.node_index(&self.cell_multi(cell))
    }

    /// The `2^d` corner nodes of a cell; bit `k` of the position selects the
    /// upper node along axis `k`.
    pub fn cell_corners(&self, cell: usize) -> Vec<usize> {
        let base = self.cell_base_node(cell);
        (0..1usize << self.d)
            .map(|corner| {
                (0..self.d)
                    .filter(|k| corner >> k & 1 == 1)
                    .map(|k| self.node_stride(k))
                    .sum::<usize>()
                    + base
            })
            .collect()
    }

    /// Cell indices of an axis-aligned block of cells, axis 0 fastest.
    pub fn cells_in_block(&self, ranges: &[Range<usize>; MAX_DIM]) -> Vec<usize> {
        let mut out = Vec::new();
        for_each_multi(self.d, ranges, |m| out.push(self.cell_index(m)));
        out
    }

    pub fn all_cells(&self) -> Range<usize> {
        0..self.num_cells()
    }
}

/// Visits every multi-index of a block, axis 0 fastest.
pub(crate) fn for_each_multi(d: usize, ranges: &[Range<usize>; MAX_DIM], mut f: impl FnMut(&MultiIndex)) {
    if ranges[..d].iter().any(|r| r.is_empty()) {
        return;
    }
    let mut multi = [0; MAX_DIM];
    for k in 0..d {
        multi[k] = ranges[k].start;
    }
    loop {
        f(&multi);
        let mut k = 0;
        loop {
            if k == d {
                return;
            }
            multi[k] += 1;
            if multi[k] < ranges[k].end {
                break;
            }
            multi[k] = ranges[k].start;
            k += 1;
        }
    }
}

/// Even partition of the unit cube into `m^d` coarse patches of side `H = 1/m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarsePartition {
    spec: DomainSpec,
    m: usize,
}

/// Borrowed handle on one coarse patch.
#[derive(Debug, Clone, Copy)]
pub struct Patch<'a> {
    pub partition: &'a CoarsePartition,
    pub index: usize,
}

impl CoarsePartition {
    /// Splits the domain into `m` patches per axis; `m` must divide `n`.
    pub fn new(spec: DomainSpec, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("patches per axis must be positive".into()));
        }
        if spec.n % m != 0 {
            return Err(Error::Alignment(format!(
                "{m} patches per axis do not align with {} fine cells per axis",
                spec.n
            )));
        }
        Ok(Self { spec, m })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn patches_per_axis(&self) -> usize {
        self.m
    }

    /// Patch side length `H`.
    pub fn patch_side(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn num_patches(&self) -> usize {
        self.m.pow(self.spec.d as u32)
    }

    pub fn cells_per_patch_side(&self) -> usize {
        self.spec.n / self.m
    }

    pub fn patch_volume(&self) -> f64 {
        self.patch_side().powi(self.spec.d as i32)
    }

    pub fn patch(&self, index: usize) -> Patch<'_> {
        Patch { partition: self, index }
    }

    pub fn patch_multi(&self, mut idx: usize) -> MultiIndex {
        let mut multi = [0; MAX_DIM];
        for m in multi.iter_mut().take(self.spec.d) {
            *m = idx % self.m;
            idx /= self.m;
        }
        multi
    }

    pub fn patch_index(&self, multi: &MultiIndex) -> usize {
        let mut idx = 0;
        for k in (0..self.spec.d).rev() {
            idx = idx * self.m + multi[k];
        }
        idx
    }

    /// Patch centers, the set `X^H`.
    pub fn center(&self, idx: usize) -> [f64; MAX_DIM] {
        let multi = self.patch_multi(idx);
        let side = self.patch_side();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.spec.d {
            x[k] = (multi[k] as f64 + 0.5) * side;
        }
        x
    }

    pub fn cell_ranges(&self, idx: usize) -> [Range<usize>; MAX_DIM] {
        let multi = self.patch_multi(idx);
        let c = self.cells_per_patch_side();
        let mut ranges = [0..1, 0..1, 0..1];
        for k in 0..self.spec.d {
            ranges[k] = multi[k] * c..(multi[k] + 1) * c;
        }
        ranges
    }

    pub fn cells_in_patch(&self, idx: usize) -> Vec<usize> {
        self.spec.cells_in_block(&self.cell_ranges(idx))
    }

    pub fn patch_of_cell(&self, cell: usize) -> usize {
        let multi = self.spec.cell_multi(cell);
        let c = self.cells_per_patch_side();
        let mut pm = [0; MAX_DIM];
        for k in 0..self.spec.d {
            pm[k] = multi[k] / c;
        }
        self.patch_index(&pm)
    }

    /// Patches whose closure contains the node.
    pub fn patches_of_node(&self, node: usize) -> Vec<usize> {
        let d = self.spec.d;
        let multi = self.spec.node_multi(node);
        let c = self.cells_per_patch_side();
        let mut choices: [Vec<usize>; MAX_DIM] = Default::default();
        for k in 0..d {
            let j = multi[k];
            let mut axis = Vec::with_capacity(2);
            if j % c == 0 && j > 0 {
                axis.push(j / c - 1);
            }
            if j < self.spec.n {
                axis.push(j / c);
            }
            choices[k] = axis;
        }
        let ranges = [0..choices[0].len().max(1), 0..choices[1].len().max(1), 0..choices[2].len().max(1)];
        let mut out = Vec::new();
        for_each_multi(d, &ranges, |sel| {
            let mut pm = [0; MAX_DIM];
            for k in 0..d {
                pm[k] = choices[k][sel[k]];
            }
            out.push(self.patch_index(&pm));
        });
        out
    }
}

/// Shape of the subsampled measurement sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SubsampleKind {
    /// Concentric cube of side `h = rH`.
    Cube,
    /// `(d-1)`-dimensional square of side `h` through the patch center,
    /// normal to the given (zero-based) axis.
    Slice { normal: usize },
    /// The patch center itself.
    Point,
}

impl SubsampleKind {
    pub fn name(&self) -> &'static str {
        match self {
            SubsampleKind::Cube => "cube",
            SubsampleKind::Slice { .. } => "slice",
            SubsampleKind::Point => "point",
        }
    }
}

/// Subsample sets `omega_i^{h,H}`, one per coarse patch, concentric with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSpec {
    partition: CoarsePartition,
    kind: SubsampleKind,
    ratio: f64,
    /// Fine cells per side of the subsample set (zero for points).
    cells_per_side: usize,
    /// Fine cells from the patch boundary to the subsample set.
    offset: usize,
}

impl SubsampleSpec {
    /// Builds the subsample sets with `h = r H`. The ratio is ignored for
    /// point kind, where the sets degenerate to the patch centers.
    pub fn new(partition: &CoarsePartition, kind: SubsampleKind, ratio: f64) -> Result<Self> {
        let spec = partition.spec;
        let c = partition.cells_per_patch_side();
        match kind {
            SubsampleKind::Point => {
                if c % 2 != 0 {
                    return Err(Error::Alignment(format!(
                        "patch centers fall on grid nodes only for an even number of cells per patch side (got {c})"
                    )));
                }
                return Ok(Self {
                    partition: partition.clone(),
                    kind,
                    ratio: 0.0,
                    cells_per_side: 0,
                    offset: c / 2,
                });
            }
            SubsampleKind::Slice { normal } => {
                if spec.d < 2 {
                    return Err(Error::Domain("slices need dimension at least 2".into()));
                }
                if normal >= spec.d {
                    return Err(Error::Domain(format!("slice normal axis {normal} out of range for d = {}", spec.d)));
                }
                if c % 2 != 0 {
                    return Err(Error::Alignment(format!(
                        "slice through the patch center needs an even number of cells per patch side (got {c})"
                    )));
                }
            }
            SubsampleKind::Cube => {}
        }
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Domain(format!("subsample ratio must lie in (0, 1], got {ratio}")));
        }
        let cells = ratio * c as f64;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(Error::Alignment(format!(
                "h = {ratio} H is not a multiple of the fine spacing ({cells} cells)"
            )));
        }
        let s = rounded as usize;
        if (c - s) % 2 != 0 {
            return Err(Error::Alignment(format!(
                "subsample set of {s} cells cannot be centered in a patch of {c} cells"
            )));
        }
        Ok(Self {
            partition: partition.clone(),
            kind,
            ratio,
            cells_per_side: s,
            offset: (c - s) / 2,
        })
    }

    pub fn partition(&self) -> &CoarsePartition {
        &self.partition
    }

    pub fn kind(&self) -> SubsampleKind {
        self.kind
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Side length `h` of the subsample set (zero for points).
    pub fn side(&self) -> f64 {
        self.cells_per_side as f64 * self.partition.spec.spacing()
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    /// Lebesgue or Hausdorff measure of one subsample set: `h^d`, `h^{d-1}`
    /// or one for points (counting measure).
    pub fn set_measure(&self) -> f64 {
        let d = self.partition.spec.d as i32;
        match self.kind {
            SubsampleKind::Cube => self.side().powi(d),
            SubsampleKind::Slice { .. } => self.side().powi(d - 1),
            SubsampleKind::Point => 1.0,
        }
    }

    /// Bounding box `(lo, hi)` of the subsample set in patch `idx`; degenerate
    /// along the slice normal and along every axis for points.
    pub fn support_box(&self, idx: usize) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let d = self.partition.spec.d;
        let h = self.partition.spec.spacing();
        let pm = self.partition.patch_multi(idx);
        let c = self.partition.cells_per_patch_side();
        let mut lo = [0.0; MAX_DIM];
        let mut hi = [0.0; MAX_DIM];
        for k in 0..d {
            let (a, b) = match self.kind {
                SubsampleKind::Point => (pm[k] * c + c / 2, pm[k] * c + c / 2),
                SubsampleKind::Slice { normal } if normal == k => (pm[k] * c + c / 2, pm[k] * c + c / 2),
                _ => (pm[k] * c + self.offset, pm[k] * c + self.offset + self.cells_per_side),
            };
            lo[k] = a as f64 * h;
            hi[k] = b as f64 * h;
        }
        (lo, hi)
    }

    /// Fine cells making up the cube subsample set of patch `idx`.
    pub fn cube_cells(&self, idx: usize) -> Vec<usize> {
        let pm = self.partition.patch_multi(idx);
        let c = self.partition.cells_per_patch_side();
        let mut ranges = [0..1, 0..1, 0..1];
        for k in 0..self.partition.spec.d {
            let start = pm[k] * c + self.offset;
            ranges[k] = start..start + self.cells_per_side;
        }
        self.partition.spec.cells_in_block(&ranges)
    }

    /// Node index range description for slice/point sets: per axis the node
    /// indices covered by the set (a single node along degenerate axes).
    pub(crate) fn node_ranges(&self, idx: usize) -> [Range<usize>; MAX_DIM] {
        let pm = self.partition.patch_multi(idx);
        let c = self.partition.cells_per_patch_side();
        let mut ranges = [0..1, 0..1, 0..1];
        for k in 0..self.partition.spec.d {
            ranges[k] = match self.kind {
                SubsampleKind::Point => {
                    let j = pm[k] * c + c / 2;
                    j..j + 1
                }
                SubsampleKind::Slice { normal } if normal == k => {
                    let j = pm[k] * c + c / 2;
                    j..j + 1
                }
                _ => {
                    let start = pm[k] * c + self.offset;
                    start..start + self.cells_per_side + 1
                }
            };
        }
        ranges
    }

    /// Node at the patch center, when it lies on the grid.
    pub fn center_node(&self, idx: usize) -> Option<usize> {
        let c = self.partition.cells_per_patch_side();
        if c % 2 != 0 {
            return None;
        }
        let pm = self.partition.patch_multi(idx);
        let mut multi = [0; MAX_DIM];
        for k in 0..self.partition.spec.d {
            multi[k] = pm[k] * c + c / 2;
        }
        Some(self.partition.spec.node_index(&multi))
    }
}

/// One real value per fine cell: coefficients, weights and densities.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    spec: DomainSpec,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(spec: DomainSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.num_cells() {
            return Err(Error::Mismatch(format!(
                "cell field has {} values, grid has {} cells",
                values.len(),
                spec.num_cells()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn constant(spec: DomainSpec, value: f64) -> Self {
        Self { spec, values: vec![value; spec.num_cells()] }
    }

    pub fn from_fn(spec: DomainSpec, mut f: impl FnMut(usize, &[f64]) -> f64) -> Self {
        let values = (0..spec.num_cells())
            .map(|c| {
                let x = spec.cell_center(c);
                f(c, &x[..spec.d])
            })
            .collect();
        Self { spec, values }
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Nodal values of a scalar field on the fine grid, boundary nodes included.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    spec: DomainSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(spec: DomainSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.num_nodes() {
            return Err(Error::Mismatch(format!(
                "grid function has {} values, grid has {} nodes",
                values.len(),
                spec.num_nodes()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: DomainSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    pub fn constant(spec: DomainSpec, value: f64) -> Self {
        Self { spec, values: vec![value; spec.num_nodes()] }
    }

    /// Nodal interpolant of `f`; the closure receives the first `d` coordinates.
    pub fn from_fn(spec: DomainSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..spec.num_nodes())
            .map(|i| {
                let x = spec.node_coords(i);
                f(&x[..spec.d])
            })
            .collect();
        Self { spec, values }
    }

    /// Scatters interior values into a function that vanishes on the boundary.
    pub fn from_interior(spec: DomainSpec, interior: &[f64]) -> Result<Self> {
        if interior.len() != spec.num_interior() {
            return Err(Error::Mismatch(format!(
                "{} interior values for {} interior nodes",
                interior.len(),
                spec.num_interior()
            )));
        }
        let mut values = vec![0.0; spec.num_nodes()];
        for (i, &v) in interior.iter().enumerate() {
            values[spec.interior_to_node(i)] = v;
        }
        Ok(Self { spec, values })
    }

    pub fn interior_values(&self) -> Vec<f64> {
        (0..self.spec.num_interior())
            .map(|i| self.values[self.spec.interior_to_node(i)])
            .collect()
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn vanishes_on_boundary(&self) -> bool {
        (0..self.values.len()).all(|i| !self.spec.is_boundary_node(i) || self.values[i] == 0.0)
    }

    fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Mismatch(format!("grids differ: {:?} vs {:?}", self.spec, other.spec)));
        }
        Ok(())
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &GridFunction) -> Result<GridFunction> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect();
        Ok(GridFunction { spec: self.spec, values })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.add_scaled(-1.0, other)
    }

    pub fn scaled(&self, alpha: f64) -> GridFunction {
        GridFunction { spec: self.spec, values: self.values.iter().map(|v| alpha * v).collect() }
    }

    /// Mean of the corner values, which is the cell-center value of the
    /// multilinear interpolant.
    pub fn cell_center_value(&self, cell: usize) -> f64 {
        let corners = self.spec.cell_corners(cell);
        corners.iter().map(|&c| self.values[c]).sum::<f64>() / corners.len() as f64
    }

    /// Gradient of the multilinear interpolant at the cell center.
    pub fn cell_gradient(&self, cell: usize) -> [f64; MAX_DIM] {
        let d = self.spec.d;
        let corners = self.spec.cell_corners(cell);
        let scale = self.spec.n as f64 / (1usize << (d - 1)) as f64;
        let mut g = [0.0; MAX_DIM];
        for (k, gk) in g.iter_mut().enumerate().take(d) {
            let mut s = 0.0;
            for (pos, &node) in corners.iter().enumerate() {
                if pos >> k & 1 == 1 {
                    s += self.values[node];
                } else {
                    s -= self.values[node];
                }
            }
            *gk = s * scale;
        }
        g
    }

    fn region_cells(&self, region: Option<Patch<'_>>) -> Result<Vec<usize>> {
        match region {
            None => Ok(self.spec.all_cells().collect()),
            Some(patch) => {
                if patch.partition.spec != self.spec {
                    return Err(Error::Mismatch("patch belongs to another grid".into()));
                }
                Ok(patch.partition.cells_in_patch(patch.index))
            }
        }
    }

    /// `(int |u|^p)^{1/p}` over the domain or a patch, midpoint rule.
    pub fn lp_norm(&self, p: f64, region: Option<Patch<'_>>) -> Result<f64> {
        check_exponent(p)?;
        let vol = self.spec.cell_volume();
        let sum: f64 = self
            .region_cells(region)?
            .into_iter()
            .map(|c| self.cell_center_value(c).abs().powf(p))
            .sum();
        Ok((sum * vol).powf(1.0 / p))
    }

    /// `(int w |Du|^p)^{1/p}` with the cell-centered gradient; `w = 1` when
    /// no weight is given.
    pub fn gradient_lp_norm(&self, p: f64, weight: Option<&CellField>) -> Result<f64> {
        self.gradient_lp_norm_on(p, weight, None)
    }

    pub fn gradient_lp_norm_on(&self, p: f64, weight: Option<&CellField>, region: Option<Patch<'_>>) -> Result<f64> {
        check_exponent(p)?;
        if let Some(w) = weight {
            if w.spec != self.spec {
                return Err(Error::Mismatch("weight lives on another grid".into()));
            }
            if let Some(c) = w.values.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Domain(format!("weight must be positive, cell {c} has {}", w.values[c])));
            }
        }
        let d = self.spec.d;
        let vol = self.spec.cell_volume();
        let sum: f64 = self
            .region_cells(region)?
            .into_iter()
            .map(|c| {
                let g = self.cell_gradient(c);
                let mag = g[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
                let w = weight.map_or(1.0, |w| w.values[c]);
                w * mag.powf(p)
            })
            .sum();
        Ok((sum * vol).powf(1.0 / p))
    }

    /// Little-endian layout: `d` and `n` as `u64`, then the node values as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.spec.d as u64).to_le_bytes())?;
        w.write_all(&(self.spec.n as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let d = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        let spec = DomainSpec::new(d, n)?;
        let mut values = Vec::with_capacity(spec.num_nodes());
        for _ in 0..spec.num_nodes() {
            r.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Self::new(spec, values)
    }

    /// CSV layout: a `d,n` header row and its values, then a `value` column
    /// in node order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d,n")?;
        writeln!(w, "{},{}", self.spec.d, self.spec.n)?;
        writeln!(w, "value")?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of grid function CSV".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != "d,n" {
            return Err(Error::Parse("grid function CSV must start with a d,n header".into()));
        }
        let dims = next()?;
        let mut parts = dims.trim().split(',');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.ok_or_else(|| Error::Parse("missing header field".into()))?
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad header field: {e}")))
        };
        let d = parse(parts.next())?;
        let n = parse(parts.next())?;
        let spec = DomainSpec::new(d, n)?;
        if next()?.trim() != "value" {
            return Err(Error::Parse("expected value column header".into()));
        }
        let mut values = Vec::with_capacity(spec.num_nodes());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            values.push(line.trim().parse().map_err(|e| Error::Parse(format!("bad value {line:?}: {e}")))?);
        }
        Self::new(spec, values)
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Domain(format!("norm exponent must be at least 1, got {p}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn one_dimensional_bisection() {
        let spec = DomainSpec::new(1, 8).unwrap();
        let part = CoarsePartition::new(spec, 2).unwrap();
        assert_eq!(part.num_patches(), 2);
        assert_eq!(part.patch_side(), 0.5);
        assert_eq!(part.center(0)[0], 0.25);
        assert_eq!(part.center(1)[0], 0.75);
        assert_eq!(part.cell_ranges(0)[0], 0..4);
        assert_eq!(part.cell_ranges(1)[0], 4..8);
    }

    #[test]
    fn patch_count_is_inverse_volume() {
        let spec = DomainSpec::new(2, 16).unwrap();
        let part = CoarsePartition::new(spec, 4).unwrap();
        assert_eq!(part.num_patches(), 16);
        assert_eq!(part.num_patches() as f64, 1.0 / part.patch_volume());
        let total: f64 = (0..part.num_patches()).map(|i| part.cells_in_patch(i).len() as f64 * spec.cell_volume()).sum();
        assert_eq!(total, 1.0);
        let mut seen = vec![0; spec.num_cells()];
        for i in 0..part.num_patches() {
            for c in part.cells_in_patch(i) {
                seen[c] += 1;
                assert_eq!(part.patch_of_cell(c), i);
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn misaligned_partition_is_rejected() {
        let spec = DomainSpec::new(1, 8).unwrap();
        assert!(matches!(CoarsePartition::new(spec, 3), Err(Error::Alignment(_))));
        assert!(matches!(DomainSpec::new(4, 8), Err(Error::Domain(_))));
        assert!(matches!(DomainSpec::new(2, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn full_ratio_cube_is_the_patch() {
        let spec = DomainSpec::new(1, 8).unwrap();
        let part = CoarsePartition::new(spec, 2).unwrap();
        let sub = SubsampleSpec::new(&part, SubsampleKind::Cube, 1.0).unwrap();
        for i in 0..2 {
            assert_eq!(sub.cube_cells(i), part.cells_in_patch(i));
        }
        assert_eq!(sub.side(), 0.5);
    }

    #[test]
    fn concentric_squares_have_area_h_squared() {
        let spec = DomainSpec::new(2, 16).unwrap();
        let part = CoarsePartition::new(spec, 4).unwrap();
        let sub = SubsampleSpec::new(&part, SubsampleKind::Cube, 0.5).unwrap();
        assert_eq!(sub.side(), 0.125);
        for i in 0..part.num_patches() {
            let area = sub.cube_cells(i).len() as f64 * spec.cell_volume();
            assert!((area - 0.015625).abs() <= 1e-12 * 0.015625);
            let (lo, hi) = sub.support_box(i);
            let c = part.center(i);
            let pr = part.cell_ranges(i);
            for k in 0..2 {
                assert!(((lo[k] + hi[k]) / 2.0 - c[k]).abs() < 1e-15);
                assert!(lo[k] >= pr[k].start as f64 / 16.0 && hi[k] <= pr[k].end as f64 / 16.0);
            }
        }
    }

    #[test]
    fn slices_pass_through_centers() {
        let spec = DomainSpec::new(2, 16).unwrap();
        let part = CoarsePartition::new(spec, 4).unwrap();
        let sub = SubsampleSpec::new(&part, SubsampleKind::Slice { normal: 1 }, 0.5).unwrap();
        assert_eq!(sub.set_measure(), 0.125);
        for i in 0..part.num_patches() {
            let (lo, hi) = sub.support_box(i);
            let c = part.center(i);
            assert_eq!(lo[1], c[1]);
            assert_eq!(hi[1], c[1]);
            assert!((hi[0] - lo[0] - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let spec = DomainSpec::new(2, 16).unwrap();
        let part = CoarsePartition::new(spec, 4).unwrap();
        assert!(matches!(SubsampleSpec::new(&part, SubsampleKind::Cube, 0.0), Err(Error::Domain(_))));
        assert!(matches!(SubsampleSpec::new(&part, SubsampleKind::Cube, 1.5), Err(Error::Domain(_))));
        assert!(matches!(SubsampleSpec::new(&part, SubsampleKind::Cube, 0.3), Err(Error::Alignment(_))));
        // 3 cells cannot be centered in 4
        assert!(matches!(SubsampleSpec::new(&part, SubsampleKind::Cube, 0.75), Err(Error::Alignment(_))));
        let odd = CoarsePartition::new(DomainSpec::new(2, 12).unwrap(), 4).unwrap();
        assert!(matches!(SubsampleSpec::new(&odd, SubsampleKind::Point, 1.0), Err(Error::Alignment(_))));
    }

    #[test]
    fn constant_and_polynomial_norms() {
        let spec = DomainSpec::new(2, 8).unwrap();
        let u = GridFunction::constant(spec, -3.0);
        assert!((u.lp_norm(2.0, None).unwrap() - 3.0).abs() < 1e-14);
        assert_eq!(u.gradient_lp_norm(2.0, None).unwrap(), 0.0);

        let spec = DomainSpec::new(1, 64).unwrap();
        let x = GridFunction::from_fn(spec, |x| x[0]);
        assert!((x.lp_norm(1.0, None).unwrap() - 0.5).abs() < 1e-14);
        assert!((x.gradient_lp_norm(2.0, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sine_norms_match_analytic_integrals() {
        let spec = DomainSpec::new(1, 256).unwrap();
        let u = GridFunction::from_fn(spec, |x| (PI * x[0]).sin());
        assert!((u.lp_norm(2.0, None).unwrap() - 0.5f64.sqrt()).abs() < 1e-3);
        assert!((u.gradient_lp_norm(2.0, None).unwrap() - PI / 2f64.sqrt()).abs() < 1e-2);
    }

    #[test]
    fn nonpositive_weight_is_a_domain_error() {
        let spec = DomainSpec::new(1, 4).unwrap();
        let u = GridFunction::from_fn(spec, |x| x[0]);
        let mut w = vec![1.0; 4];
        w[2] = 0.0;
        let w = CellField::new(spec, w).unwrap();
        assert!(matches!(u.gradient_lp_norm(2.0, Some(&w)), Err(Error::Domain(_))));
        assert!(matches!(u.lp_norm(0.5, None), Err(Error::Domain(_))));
    }

    #[test]
    fn refinement_error_is_second_order() {
        let f = |x: &[f64]| (PI * x[0]).sin() * (2.0 * x[1]).exp();
        let exact = {
            // int sin^2(pi x) dx * int e^{4y} dy
            (0.5 * ((4.0f64).exp() - 1.0) / 4.0).sqrt()
        };
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let u = GridFunction::from_fn(DomainSpec::new(2, n).unwrap(), f);
                (u.lp_norm(2.0, None).unwrap() - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn node_books_are_consistent() {
        let spec = DomainSpec::new(3, 4).unwrap();
        for i in 0..spec.num_nodes() {
            assert_eq!(spec.node_index(&spec.node_multi(i)), i);
            if let Some(j) = spec.interior_index(i) {
                assert_eq!(spec.interior_to_node(j), i);
                assert!(!spec.is_boundary_node(i));
            } else {
                assert!(spec.is_boundary_node(i));
            }
        }
        assert_eq!(spec.cell_corners(0), vec![0, 1, 5, 6, 25, 26, 30, 31]);
        let part = CoarsePartition::new(DomainSpec::new(2, 8).unwrap(), 2).unwrap();
        let node = part.spec().node_index(&[4, 4, 0]);
        assert_eq!(part.patches_of_node(node), vec![0, 1, 2, 3]);
        let edge = part.spec().node_index(&[4, 8, 0]);
        assert_eq!(part.patches_of_node(edge), vec![2, 3]);
    }

    #[test]
    fn binary_and_csv_layouts_round_trip() {
        let spec = DomainSpec::new(2, 3).unwrap();
        let u = GridFunction::from_fn(spec, |x| x[0] - 2.0 * x[1] + 0.1);
        let mut bytes = Vec::new();
        u.write_binary(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * 16);
        assert_eq!(&bytes[..8], &2u64.to_le_bytes());
        assert_eq!(GridFunction::read_binary(&bytes[..]).unwrap(), u);
        let mut text = Vec::new();
        u.write_csv(&mut text).unwrap();
        assert_eq!(GridFunction::read_csv(&text[..]).unwrap(), u);
    }

    fn arb_function() -> impl Strategy<Value = GridFunction> {
        proptest::collection::vec(-10.0f64..10.0, 25).prop_map(|v| GridFunction::new(DomainSpec::new(2, 4).unwrap(), v).unwrap())
    }

    proptest! {
        #[test]
        fn norms_are_homogeneous_and_subadditive(u in arb_function(), v in arb_function(), alpha in -5.0f64..5.0, p in 1.0f64..4.0) {
            let nu = u.lp_norm(p, None).unwrap();
            let nv = v.lp_norm(p, None).unwrap();
            let scaled = u.scaled(alpha).lp_norm(p, None).unwrap();
            prop_assert!((scaled - alpha.abs() * nu).abs() <= 1e-12 * (1.0 + nu * alpha.abs()));
            let sum = u.add_scaled(1.0, &v).unwrap().lp_norm(p, None).unwrap();
            prop_assert!(sum <= nu + nv + 1e-12);
        }

        #[test]
        fn patch_norms_add_up(u in arb_function(), p in 1.0f64..4.0) {
            let part = CoarsePartition::new(*u.spec(), 2).unwrap();
            let global = u.lp_norm(p, None).unwrap().powf(p);
            let local: f64 = (0..part.num_patches()).map(|i| u.lp_norm(p, Some(part.patch(i))).unwrap().powf(p)).sum();
            prop_assert!((global - local).abs() <= 1e-12 * global.max(1e-300));
        }
    }
}
