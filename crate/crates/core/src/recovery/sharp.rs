//! Optimal constant of the subsampled Poincaré inequality at `p = 2`,
//!
//! ```text
//! C(D)^2 = sup_u |u - avg_D u|^2_{L^2} / |grad u|^2_{L^2},
//! ```
//!
//! on a single patch (the whole unit cube), computed as the largest
//! generalized eigenvalue of `P^T M P v = mu K_N v` where `K_N` is the
//! Neumann stiffness matrix, `M` the mass matrix and `P u = u - avg_D(u) 1`.
//! Both sides annihilate constants, so power iteration runs with a grounded
//! (one-node regularized) stiffness solve as the inner step.

use crate::elliptic::{assemble_neumann, mass_apply, BandedCholesky, CoefficientField, CsrMatrix};
use crate::grid::SubsampleSpec;
use crate::measurements::MeasurementSet;
use crate::{Error, Result};

/// Power iteration controls.
#[derive(Debug, Clone, Copy)]
pub struct SharpOptions {
    /// Stop when the Rayleigh quotient changes by less than this, relatively.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SharpOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 5000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpEstimate {
    /// The constant `C(D)`, square root of the top eigenvalue.
    pub constant: f64,
    pub iterations: usize,
}

/// `C(D)` with default options.
pub fn sharp_constant_estimate(sub: &SubsampleSpec) -> Result<f64> {
    Ok(sharp_constant_with(sub, SharpOptions::default())?.constant)
}

pub fn sharp_constant_with(sub: &SubsampleSpec, opts: SharpOptions) -> Result<SharpEstimate> {
    let part = sub.partition();
    if part.num_patches() != 1 {
        return Err(Error::Domain(format!(
            "the sharp constant is computed on a single patch, got {} patches",
            part.num_patches()
        )));
    }
    let spec = *part.spec();
    let set = MeasurementSet::new(sub);
    let phi = set.functional(0);
    let kn = assemble_neumann(&CoefficientField::constant(spec, 1.0)?);
    let n = kn.dim();

    // Ground node 0: A = K_N + k00 e0 e0^T is SPD, and A x = y with y ⟂ 1
    // forces x_0 = 0 and K_N x = y.
    let k00 = kn.get(0, 0);
    let mut triplets = Vec::with_capacity(kn.nnz() + 1);
    for i in 0..n {
        let (cols, vals) = kn.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            triplets.push((i, j, v));
        }
    }
    triplets.push((0, 0, k00));
    let grounded = BandedCholesky::factor(&CsrMatrix::from_triplets(n, triplets))?;

    let project = |v: &[f64]| -> Vec<f64> {
        let avg = phi.apply(v);
        v.iter().map(|x| x - avg).collect()
    };
    // P^T y = y - b (1 . y), with b the load vector of the average.
    let project_t = |y: &mut Vec<f64>| {
        let total: f64 = y.iter().sum();
        for (&k, &w) in phi.nodes().iter().zip(phi.weights()) {
            y[k] -= w * total;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // Start from a smooth non-constant field so the iterate is not orthogonal
    // to the top eigenvector by symmetry.
    let mut v: Vec<f64> = (0..n)
        .map(|k| {
            let x = spec.node_coords(k);
            (0..spec.dim()).map(|a| (1.0 + a as f64) * (x[a] - 0.37)).sum::<f64>() + 0.3 * (x[0] * x[0])
        })
        .collect();
    let mut mu_prev = f64::NAN;
    for it in 1..=opts.max_iter {
        let pv = project(&v);
        let mut y = mass_apply(&spec, &pv);
        project_t(&mut y);
        let mut next = grounded.solve(&y);
        let pn = project(&next);
        let num = dot(&pn, &mass_apply(&spec, &pn));
        let den = kn.quadratic_form(&next);
        if !(den > 0.0) {
            return Err(Error::Indefinite("power iterate lost its gradient".into()));
        }
        let mu = num / den;
        let scale = den.sqrt();
        next.iter_mut().for_each(|x| *x /= scale);
        v = next;
        if (mu - mu_prev).abs() <= opts.tol * mu {
            return Ok(SharpEstimate { constant: mu.sqrt(), iterations: it });
        }
        mu_prev = mu;
    }
    Err(Error::Solver { iterations: opts.max_iter, residual: f64::NAN, tolerance: opts.tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CoarsePartition, DomainSpec, SubsampleKind};
    use std::f64::consts::PI;

    fn sub(d: usize, n: usize, kind: SubsampleKind, r: f64) -> SubsampleSpec {
        let part = CoarsePartition::new(DomainSpec::new(d, n).unwrap(), 1).unwrap();
        SubsampleSpec::new(&part, kind, r).unwrap()
    }

    #[test]
    fn classical_neumann_constant_in_one_dimension() {
        let c = sharp_constant_estimate(&sub(1, 512, SubsampleKind::Cube, 1.0)).unwrap();
        assert!((c * PI - 1.0).abs() < 0.02, "{c}");
    }

    #[test]
    fn shrinking_the_averaging_set_never_decreases_the_constant() {
        // Centered sets do not see the antisymmetric first Neumann mode, so the
        // constant stays at 1/pi until a symmetric mode overtakes it.
        let c: Vec<f64> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&r| sharp_constant_estimate(&sub(2, 32, SubsampleKind::Cube, r)).unwrap())
            .collect();
        assert!(c[1] >= c[0] - 1e-9 && c[2] > c[1], "{c:?}");
        assert!((c[0] * PI - 1.0).abs() < 0.02);
    }

    #[test]
    fn several_patches_are_rejected() {
        let part = CoarsePartition::new(DomainSpec::new(1, 8).unwrap(), 2).unwrap();
        let s = SubsampleSpec::new(&part, SubsampleKind::Cube, 1.0).unwrap();
        assert!(matches!(sharp_constant_estimate(&s), Err(Error::Domain(_))));
    }
}
