//! Divergence-form operator `-div(a grad u)` on the unit cube with homogeneous
//! Dirichlet data, discretized by multilinear (Q1) finite elements on the fine
//! grid with a cellwise constant coefficient.

mod sparse;
mod solvers;

use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

pub use solvers::{pcg, BandedCholesky, CgStats};
pub use sparse::CsrMatrix;

use crate::grid::{CellField, DomainSpec, GridFunction};
use crate::{Error, Result};

/// Default relative residual tolerance for iterative solves.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Above this many unknowns (or an equivalent band cost) the direct solver
/// is replaced by conjugate gradients.
pub const DIRECT_LIMIT: usize = 20_000;

/// Positive, bounded conductivity, constant on each fine cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    field: CellField,
}

impl CoefficientField {
    pub fn new(spec: DomainSpec, values: Vec<f64>) -> Result<Self> {
        if let Some((c, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!("coefficient must be positive and finite, cell {c} has {v}")));
        }
        Ok(Self { field: CellField::new(spec, values)? })
    }

    pub fn constant(spec: DomainSpec, value: f64) -> Result<Self> {
        Self::new(spec, vec![value; spec.num_cells()])
    }

    /// Alternates `lo` and `hi` between neighbouring fine cells.
    pub fn checkerboard(spec: DomainSpec, lo: f64, hi: f64) -> Result<Self> {
        let values = (0..spec.num_cells())
            .map(|c| {
                let parity: usize = spec.cell_multi(c).iter().sum();
                if parity % 2 == 0 {
                    lo
                } else {
                    hi
                }
            })
            .collect();
        Self::new(spec, values)
    }

    /// Alternates `lo` and `hi` between fine-cell layers normal to `axis`.
    pub fn layered(spec: DomainSpec, axis: usize, lo: f64, hi: f64) -> Result<Self> {
        if axis >= spec.dim() {
            return Err(Error::Domain(format!("layer axis {axis} out of range")));
        }
        let values = (0..spec.num_cells())
            .map(|c| if spec.cell_multi(c)[axis] % 2 == 0 { lo } else { hi })
            .collect();
        Self::new(spec, values)
    }

    /// Independent lognormal values `exp(sigma Z)` per cell from a seeded stream.
    pub fn lognormal(spec: DomainSpec, sigma: f64, seed: u64) -> Result<Self> {
        let dist = LogNormal::new(0.0, sigma).map_err(|e| Error::Domain(format!("lognormal sigma {sigma}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..spec.num_cells()).map(|_| dist.sample(&mut rng)).collect();
        Self::new(spec, values)
    }

    pub fn spec(&self) -> &DomainSpec {
        self.field.spec()
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn as_cell_field(&self) -> &CellField {
        &self.field
    }

    /// `max a / min a`.
    pub fn contrast(&self) -> f64 {
        self.field.max() / self.field.min()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = self.spec();
        writeln!(w, "d,n")?;
        writeln!(w, "{},{}", spec.dim(), spec.resolution())?;
        writeln!(w, "cell_index,value")?;
        for (c, v) in self.values().iter().enumerate() {
            writeln!(w, "{c},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |what: String| Error::Parse(format!("coefficient CSV: {what}"));
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty());
        if it.next() != Some("d,n") {
            return Err(bad("missing d,n header".into()));
        }
        let dims = it.next().ok_or_else(|| bad("missing grid row".into()))?;
        let (d, n) = dims.split_once(',').ok_or_else(|| bad("grid row needs d,n".into()))?;
        let d: usize = d.trim().parse().map_err(|e| bad(format!("{e}")))?;
        let n: usize = n.trim().parse().map_err(|e| bad(format!("{e}")))?;
        let spec = DomainSpec::new(d, n)?;
        if it.next() != Some("cell_index,value") {
            return Err(bad("missing cell_index,value header".into()));
        }
        let mut values = vec![f64::NAN; spec.num_cells()];
        for row in it {
            let (c, v) = row.split_once(',').ok_or_else(|| bad(format!("bad row {row:?}")))?;
            let c: usize = c.trim().parse().map_err(|e| bad(format!("{e}")))?;
            if c >= values.len() {
                return Err(bad(format!("cell index {c} out of range")));
            }
            values[c] = v.trim().parse().map_err(|e| bad(format!("{e}")))?;
        }
        Self::new(spec, values)
    }
}

/// Reference element matrix of `int grad N_a . grad N_b` on one cell, corners
/// ordered as in [`DomainSpec::cell_corners`].
pub fn reference_stiffness(spec: &DomainSpec) -> Vec<f64> {
    let d = spec.dim();
    let h = spec.spacing();
    let nc = 1usize << d;
    let s1 = |a: usize, b: usize| if a == b { 1.0 / h } else { -1.0 / h };
    let m1 = |a: usize, b: usize| if a == b { h / 3.0 } else { h / 6.0 };
    let mut ke = vec![0.0; nc * nc];
    for a in 0..nc {
        for b in 0..nc {
            let mut s = 0.0;
            for k in 0..d {
                let mut term = s1(a >> k & 1, b >> k & 1);
                for l in (0..d).filter(|&l| l != k) {
                    term *= m1(a >> l & 1, b >> l & 1);
                }
                s += term;
            }
            ke[a * nc + b] = s;
        }
    }
    ke
}

/// Assembles `sum_cells a_c K_ref` into a CSR matrix; `index` maps a grid
/// node to its unknown (or `None` to drop the row and column).
fn assemble(spec: &DomainSpec, cell_scale: impl Fn(usize) -> f64, dim: usize, index: impl Fn(usize) -> Option<usize>) -> CsrMatrix {
    let ke = reference_stiffness(spec);
    let nc = 1usize << spec.dim();
    let mut triplets = Vec::with_capacity(spec.num_cells() * nc * nc);
    for cell in spec.all_cells() {
        let a = cell_scale(cell);
        let corners: Vec<Option<usize>> = spec.cell_corners(cell).into_iter().map(&index).collect();
        for (p, ip) in corners.iter().enumerate() {
            let Some(ip) = ip else { continue };
            for (q, iq) in corners.iter().enumerate() {
                let Some(iq) = iq else { continue };
                triplets.push((*ip, *iq, a * ke[p * nc + q]));
            }
        }
    }
    CsrMatrix::from_triplets(dim, triplets)
}

/// Stiffness matrix over all nodes (natural boundary conditions).
pub fn assemble_neumann(coeff: &CoefficientField) -> CsrMatrix {
    let spec = *coeff.spec();
    assemble(&spec, |c| coeff.values()[c], spec.num_nodes(), Some)
}

/// `sum_cells w_c a_c u_c^T K_ref u_c`, the exact (weighted) energy of the
/// multilinear interpolant over all cells. Works for functions that do not
/// vanish on the boundary.
pub fn weighted_energy(coeff: &CoefficientField, weight: Option<&CellField>, u: &GridFunction) -> Result<f64> {
    let spec = *coeff.spec();
    if u.spec() != &spec {
        return Err(Error::Mismatch("function and coefficient live on different grids".into()));
    }
    if let Some(w) = weight {
        if w.spec() != &spec {
            return Err(Error::Mismatch("weight lives on another grid".into()));
        }
    }
    let ke = reference_stiffness(&spec);
    let nc = 1usize << spec.dim();
    let vals = u.values();
    let mut total = 0.0;
    for cell in spec.all_cells() {
        let corners = spec.cell_corners(cell);
        let mut e = 0.0;
        for p in 0..nc {
            let up = vals[corners[p]];
            for q in 0..nc {
                e += up * ke[p * nc + q] * vals[corners[q]];
            }
        }
        let w = weight.map_or(1.0, |w| w.values()[cell]);
        total += w * coeff.values()[cell] * e;
    }
    Ok(total.max(0.0))
}

/// `|u|_a = (int a |grad u|^2)^{1/2}` for the multilinear interpolant.
pub fn energy_norm(coeff: &CoefficientField, u: &GridFunction) -> Result<f64> {
    Ok(weighted_energy(coeff, None, u)?.sqrt())
}

/// Applies the consistent Q1 mass matrix over all nodes; it is the tensor
/// product of the 1D matrices `(h/6) [2 1; 1 2]`.
pub fn mass_apply(spec: &DomainSpec, values: &[f64]) -> Vec<f64> {
    let d = spec.dim();
    let np = spec.nodes_per_axis();
    let h = spec.spacing();
    let mut out = values.to_vec();
    let mut line = vec![0.0; np];
    for k in 0..d {
        let stride = spec.node_stride(k);
        for start in 0..spec.num_nodes() {
            if spec.node_multi(start)[k] != 0 {
                continue;
            }
            for (j, l) in line.iter_mut().enumerate() {
                *l = out[start + j * stride];
            }
            for j in 0..np {
                let mut s = if j == 0 || j == np - 1 { h / 3.0 } else { 2.0 * h / 3.0 } * line[j];
                if j > 0 {
                    s += h / 6.0 * line[j - 1];
                }
                if j + 1 < np {
                    s += h / 6.0 * line[j + 1];
                }
                out[start + j * stride] = s;
            }
        }
    }
    out
}

/// `int u v` for multilinear interpolants, `u^T M v`.
pub fn l2_inner(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    if u.spec() != v.spec() {
        return Err(Error::Mismatch("functions live on different grids".into()));
    }
    let mv = mass_apply(u.spec(), v.values());
    Ok(sparse::dot(u.values(), &mv))
}

/// Choice of linear solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Direct banded Cholesky for small problems, CG for large ones.
    #[default]
    Auto,
    Cg,
    Cholesky,
}

/// Dirichlet stiffness operator over interior nodes, with a lazily computed
/// and cached factorization.
#[derive(Debug)]
pub struct StiffnessOperator {
    coeff: CoefficientField,
    matrix: CsrMatrix,
    solver: SolverKind,
    factor: OnceLock<std::result::Result<BandedCholesky, String>>,
}

impl StiffnessOperator {
    pub fn new(coeff: &CoefficientField) -> Self {
        let spec = *coeff.spec();
        let matrix = assemble(&spec, |c| coeff.values()[c], spec.num_interior(), |k| spec.interior_index(k));
        Self { coeff: coeff.clone(), matrix, solver: SolverKind::Auto, factor: OnceLock::new() }
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn spec(&self) -> &DomainSpec {
        self.coeff.spec()
    }

    pub fn coefficient(&self) -> &CoefficientField {
        &self.coeff
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn solver(&self) -> SolverKind {
        self.solver
    }

    fn uses_direct(&self) -> bool {
        match self.solver {
            SolverKind::Cholesky => true,
            SolverKind::Cg => false,
            SolverKind::Auto => {
                let n = self.matrix.dim();
                let bw = self.matrix.bandwidth();
                n <= DIRECT_LIMIT && (n as f64) * (bw as f64).powi(2) <= 1e9
            }
        }
    }

    fn factor(&self) -> Result<&BandedCholesky> {
        self.factor
            .get_or_init(|| BandedCholesky::factor(&self.matrix).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Indefinite(e.clone()))
    }

    /// Solves `K x = load` on interior unknowns.
    pub fn solve_load(&self, load: &[f64], tol: f64) -> Result<Vec<f64>> {
        if load.len() != self.matrix.dim() {
            return Err(Error::Mismatch(format!("load has {} entries, system has {}", load.len(), self.matrix.dim())));
        }
        if self.uses_direct() {
            Ok(self.factor()?.solve(load))
        } else {
            let n = self.matrix.dim();
            let per_axis = (n as f64).powf(1.0 / self.spec().dim() as f64);
            let cap = (50.0 * per_axis * self.coeff.contrast().sqrt()).ceil() as usize + 1000;
            Ok(pcg(&self.matrix, load, tol, cap.min(20 * n + 1000))?.0)
        }
    }

    /// Dirichlet solution with zero boundary values for a nodal load vector.
    pub fn solve_functional(&self, load: &[f64], tol: f64) -> Result<GridFunction> {
        let x = self.solve_load(load, tol)?;
        GridFunction::from_interior(*self.spec(), &x)
    }

    /// Galerkin solution of `-div(a grad u) = f`, `u = 0` on the boundary,
    /// with the load `int f N_k` computed by the consistent mass matrix.
    pub fn solve(&self, f: &GridFunction, tol: f64) -> Result<GridFunction> {
        let spec = *self.spec();
        if f.spec() != &spec {
            return Err(Error::Mismatch("right-hand side lives on another grid".into()));
        }
        let mf = mass_apply(&spec, f.values());
        let load: Vec<f64> = (0..spec.num_interior()).map(|i| mf[spec.interior_to_node(i)]).collect();
        self.solve_functional(&load, tol)
    }

    /// `u^T K v` on interior values.
    pub fn energy_inner(&self, u: &GridFunction, v: &GridFunction) -> f64 {
        let ui = u.interior_values();
        let kv = self.matrix.mul(&v.interior_values());
        sparse::dot(&ui, &kv)
    }
}

/// One-shot Dirichlet solve.
pub fn solve(coeff: &CoefficientField, f: &GridFunction, tol: f64) -> Result<GridFunction> {
    StiffnessOperator::new(coeff).solve(f, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn one_dimensional_stiffness_is_scaled_second_difference() {
        let spec = DomainSpec::new(1, 4).unwrap();
        let op = StiffnessOperator::new(&CoefficientField::constant(spec, 1.0).unwrap());
        let k = op.matrix();
        assert_eq!(k.dim(), 3);
        for i in 0..3 {
            assert!((k.get(i, i) - 8.0).abs() < 1e-14);
            if i + 1 < 3 {
                assert!((k.get(i, i + 1) + 4.0).abs() < 1e-14);
            }
        }
        assert_eq!(k.get(0, 2), 0.0);
    }

    #[test]
    fn two_dimensional_single_interior_node() {
        let spec = DomainSpec::new(2, 2).unwrap();
        let op = StiffnessOperator::new(&CoefficientField::constant(spec, 1.0).unwrap());
        assert!((op.matrix().get(0, 0) - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn stiffness_is_symmetric_and_annihilates_constants() {
        let spec = DomainSpec::new(2, 6).unwrap();
        let coeff = CoefficientField::lognormal(spec, 1.0, 7).unwrap();
        let kn = assemble_neumann(&coeff);
        assert!(kn.is_symmetric(1e-14));
        let ones = vec![1.0; spec.num_nodes()];
        assert!(kn.mul(&ones).iter().all(|v| v.abs() < 1e-12));
        let op = StiffnessOperator::new(&coeff);
        assert!(op.matrix().is_symmetric(1e-14));
    }

    #[test]
    fn mass_matrix_integrates_products_exactly() {
        let spec = DomainSpec::new(2, 5).unwrap();
        let one = GridFunction::constant(spec, 1.0);
        assert!((l2_inner(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        // int x * y over the unit square is 1/4; x^2 interpolant is not exact
        let x = GridFunction::from_fn(spec, |p| p[0]);
        let y = GridFunction::from_fn(spec, |p| p[1]);
        assert!((l2_inner(&x, &y).unwrap() - 0.25).abs() < 1e-14);
        assert!((l2_inner(&x, &x).unwrap() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn poisson_in_one_dimension_is_nodally_exact() {
        // -u'' = 1 has u = x(1-x)/2; Q1 Galerkin with exact load is nodally exact,
        // and the consistent mass load of the constant 1 is exact.
        let spec = DomainSpec::new(1, 16).unwrap();
        let coeff = CoefficientField::constant(spec, 1.0).unwrap();
        let u = solve(&coeff, &GridFunction::constant(spec, 1.0), DEFAULT_TOL).unwrap();
        for (i, v) in u.values().iter().enumerate() {
            let x = i as f64 / 16.0;
            assert!((v - x * (1.0 - x) / 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn sine_mode_converges_at_second_order() {
        let err = |n: usize| {
            let spec = DomainSpec::new(2, n).unwrap();
            let coeff = CoefficientField::constant(spec, 1.0).unwrap();
            let exact = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
            let f = GridFunction::from_fn(spec, |x| 2.0 * PI * PI * exact(x));
            let u = solve(&coeff, &f, 1e-12).unwrap();
            u.sub(&GridFunction::from_fn(spec, exact)).unwrap().lp_norm(2.0, None).unwrap()
        };
        let (e1, e2) = (err(16), err(32));
        let rate = (e1 / e2).log2();
        assert!((1.8..2.3).contains(&rate), "rate {rate}");
    }

    #[test]
    fn direct_and_iterative_solvers_agree() {
        let spec = DomainSpec::new(2, 12).unwrap();
        let coeff = CoefficientField::checkerboard(spec, 1.0, 100.0).unwrap();
        let f = GridFunction::from_fn(spec, |x| 1.0 + x[0]);
        let a = StiffnessOperator::new(&coeff).with_solver(SolverKind::Cholesky).solve(&f, 1e-12).unwrap();
        let b = StiffnessOperator::new(&coeff).with_solver(SolverKind::Cg).solve(&f, 1e-12).unwrap();
        let diff = a.sub(&b).unwrap().lp_norm(2.0, None).unwrap();
        assert!(diff < 1e-9 * a.lp_norm(2.0, None).unwrap());
        assert!(a.vanishes_on_boundary() && b.vanishes_on_boundary());
    }

    #[test]
    fn energy_norm_matches_matrix_form() {
        let spec = DomainSpec::new(2, 8).unwrap();
        let coeff = CoefficientField::layered(spec, 1, 0.5, 3.0).unwrap();
        let op = StiffnessOperator::new(&coeff);
        let u = GridFunction::from_fn(spec, |x| (PI * x[0]).sin() * x[1] * (1.0 - x[1]));
        let e1 = energy_norm(&coeff, &u).unwrap();
        let e2 = op.energy_inner(&u, &u).sqrt();
        assert!((e1 - e2).abs() < 1e-12 * e1);
    }

    #[test]
    fn generators_and_csv() {
        let spec = DomainSpec::new(2, 4).unwrap();
        let c = CoefficientField::checkerboard(spec, 1.0, 9.0).unwrap();
        assert_eq!(c.contrast(), 9.0);
        let l1 = CoefficientField::lognormal(spec, 0.5, 3).unwrap();
        let l2 = CoefficientField::lognormal(spec, 0.5, 3).unwrap();
        assert_eq!(l1, l2);
        let mut buf = Vec::new();
        l1.write_csv(&mut buf).unwrap();
        assert_eq!(CoefficientField::read_csv(&buf[..]).unwrap(), l1);
        assert!(matches!(CoefficientField::constant(spec, 0.0), Err(Error::Domain(_))));
        assert!(matches!(CoefficientField::layered(spec, 2, 1.0, 2.0), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn stiffness_is_positive_definite(values in proptest::collection::vec(0.01f64..100.0, 16), x in proptest::collection::vec(-1.0f64..1.0, 9)) {
            let spec = DomainSpec::new(2, 4).unwrap();
            let op = StiffnessOperator::new(&CoefficientField::new(spec, values).unwrap());
            let q = op.matrix().quadratic_form(&x);
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!(q >= 0.0);
            if norm2 > 1e-12 { prop_assert!(q > 0.0); }
        }
    }
}
