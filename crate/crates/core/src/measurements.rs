//! Localized measurement functionals `phi_i = 1_{omega_i} / |omega_i|` and
//! their action on grid functions.
//!
//! Each functional is stored as its exact load vector `b[k] = int phi N_k`
//! against the nodal hat functions `N_k`, so `b . u` is the exact average of
//! the multilinear interpolant of `u` over the subsample set. Every load
//! vector has unit mass.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::grid::{for_each_multi, CellField, DomainSpec, GridFunction, SubsampleKind, SubsampleSpec};
use crate::{Error, Result};

/// Sparse load vector of one measurement functional over all grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFunctional {
    nodes: Vec<usize>,
    weights: Vec<f64>,
}

impl MeasurementFunctional {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Pairing with nodal values.
    pub fn apply(&self, values: &[f64]) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&k, &w)| w * values[k]).sum()
    }

    /// Dense load vector restricted to interior nodes.
    pub fn interior_load(&self, spec: &DomainSpec) -> Vec<f64> {
        let mut b = vec![0.0; spec.num_interior()];
        for (&k, &w) in self.nodes.iter().zip(&self.weights) {
            if let Some(i) = spec.interior_index(k) {
                b[i] += w;
            }
        }
        b
    }
}

/// The functionals `phi_1, .., phi_M` for one subsample configuration.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    subsample: SubsampleSpec,
    functionals: Vec<MeasurementFunctional>,
}

impl MeasurementSet {
    pub fn new(subsample: &SubsampleSpec) -> Self {
        let part = subsample.partition();
        let spec = *part.spec();
        let functionals = (0..part.num_patches())
            .map(|i| build_functional(&spec, subsample, i))
            .collect();
        Self { subsample: subsample.clone(), functionals }
    }

    pub fn subsample(&self) -> &SubsampleSpec {
        &self.subsample
    }

    pub fn len(&self) -> usize {
        self.functionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functionals.is_empty()
    }

    pub fn functional(&self, i: usize) -> &MeasurementFunctional {
        &self.functionals[i]
    }

    pub fn functionals(&self) -> &[MeasurementFunctional] {
        &self.functionals
    }

    /// Averages of `u` over every subsample set.
    pub fn measure(&self, u: &GridFunction) -> Result<MeasurementVector> {
        if u.spec() != self.subsample.partition().spec() {
            return Err(Error::Mismatch("measured function lives on another grid".into()));
        }
        let values = self.functionals.iter().map(|f| f.apply(u.values())).collect();
        Ok(MeasurementVector::from_subsample(&self.subsample, values))
    }

    /// Piecewise-constant density of the cube functional for patch `i`
    /// (`1/h^d` on the subsample cube, zero elsewhere). `None` for slices and
    /// points, which have no density.
    pub fn cell_density(&self, i: usize) -> Option<CellField> {
        if self.subsample.kind() != SubsampleKind::Cube {
            return None;
        }
        let spec = *self.subsample.partition().spec();
        let mut values = vec![0.0; spec.num_cells()];
        let inv = 1.0 / self.subsample.set_measure();
        for c in self.subsample.cube_cells(i) {
            values[c] = inv;
        }
        Some(CellField::new(spec, values).expect("sized by the grid"))
    }
}

fn build_functional(spec: &DomainSpec, subsample: &SubsampleSpec, patch: usize) -> MeasurementFunctional {
    let d = spec.dim();
    let nodes = subsample.node_ranges(patch);
    // Axes with more than one node span cells; the others are pinned.
    let mut cell_ranges = nodes.clone();
    let mut spanning = Vec::with_capacity(d);
    for k in 0..d {
        if nodes[k].len() > 1 {
            cell_ranges[k] = nodes[k].start..nodes[k].end - 1;
            spanning.push(k);
        }
    }
    let q = spanning.len();
    let weight = if q == 0 {
        1.0
    } else {
        let hf = spec.spacing();
        (hf.powi(q as i32) / (1u32 << q) as f64) / subsample.set_measure()
    };

    let mut entries: Vec<(usize, f64)> = Vec::new();
    for_each_multi(d, &cell_ranges, |base| {
        for corner in 0..1usize << q {
            let mut multi = *base;
            for (bit, &k) in spanning.iter().enumerate() {
                multi[k] += corner >> bit & 1;
            }
            entries.push((spec.node_index(&multi), weight));
        }
    });
    entries.sort_by_key(|e| e.0);
    let mut nodes_out: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (k, w) in entries {
        if nodes_out.last() == Some(&k) {
            *weights.last_mut().expect("paired with nodes") += w;
        } else {
            nodes_out.push(k);
            weights.push(w);
        }
    }
    MeasurementFunctional { nodes: nodes_out, weights }
}

/// `int u * density`, midpoint rule on fine cells.
pub fn l2_inner_density(u: &GridFunction, density: &CellField) -> Result<f64> {
    if u.spec() != density.spec() {
        return Err(Error::Mismatch("density lives on another grid".into()));
    }
    let vol = u.spec().cell_volume();
    Ok(density
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(c, &w)| w * u.cell_center_value(c))
        .sum::<f64>()
        * vol)
}

/// Measured data `(phi_i, u)` for `i = 1..M`, tagged with its subsample setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub kind: String,
    /// Subsample side `h`.
    pub h: f64,
    /// Patch side `H`.
    #[serde(rename = "H")]
    pub patch_side: f64,
    pub d: usize,
    pub values: Vec<f64>,
}

impl MeasurementVector {
    pub fn from_subsample(subsample: &SubsampleSpec, values: Vec<f64>) -> Self {
        let part = subsample.partition();
        Self {
            kind: subsample.kind().name().to_string(),
            h: subsample.side(),
            patch_side: part.patch_side(),
            d: part.spec().dim(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kind,h,H,d")?;
        writeln!(w, "{},{},{},{}", self.kind, self.h, self.patch_side, self.d)?;
        writeln!(w, "patch_index,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty());
        let bad = |what: &str| Error::Parse(format!("measurement CSV: {what}"));
        if it.next() != Some("kind,h,H,d") {
            return Err(bad("missing kind,h,H,d header"));
        }
        let meta: Vec<&str> = it.next().ok_or_else(|| bad("missing metadata row"))?.split(',').collect();
        if meta.len() != 4 {
            return Err(bad("metadata row needs four fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(&format!("{s:?}: {e}")));
        let kind = meta[0].to_string();
        let h = num(meta[1])?;
        let patch_side = num(meta[2])?;
        let d = meta[3].parse::<usize>().map_err(|e| bad(&e.to_string()))?;
        if it.next() != Some("patch_index,value") {
            return Err(bad("missing patch_index,value header"));
        }
        let mut values = Vec::new();
        for (expected, row) in it.enumerate() {
            let (idx, val) = row.split_once(',').ok_or_else(|| bad("row needs two fields"))?;
            if idx.parse::<usize>().ok() != Some(expected) {
                return Err(bad(&format!("patch indices out of order at row {expected}")));
            }
            values.push(num(val)?);
        }
        Ok(Self { kind, h, patch_side, d, values })
    }
}

/// Envelope `alpha(t)` bounding the measure of scaled copies of the domain
/// seen from any point, for the concentric cube (exponent `d`) and slice
/// (exponent `d-1`) measures:
/// `alpha(t) = min{1, (H/h)^q (t/(1-t))^q}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEnvelope {
    exponent: f64,
    ratio: f64,
}

impl AlphaEnvelope {
    /// `kind` must be cube or slice; requires `0 < h <= H`.
    pub fn new(kind: SubsampleKind, d: usize, patch_side: f64, h: f64) -> Result<Self> {
        let exponent = match kind {
            SubsampleKind::Cube => d as f64,
            SubsampleKind::Slice { .. } if d >= 2 => (d - 1) as f64,
            SubsampleKind::Slice { .. } => return Err(Error::Domain("slices need dimension at least 2".into())),
            SubsampleKind::Point => {
                return Err(Error::Domain("point measures admit no envelope (h = 0)".into()));
            }
        };
        if !(h > 0.0 && h <= patch_side) {
            return Err(Error::Domain(format!("envelope needs 0 < h <= H, got h = {h}, H = {patch_side}")));
        }
        Ok(Self { exponent, ratio: patch_side / h })
    }

    /// Point `h/(H+h)` where the envelope reaches one.
    pub fn breakpoint(&self) -> f64 {
        1.0 / (1.0 + self.ratio)
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 1.0;
        }
        if t <= 0.0 {
            return 0.0;
        }
        (self.ratio * t / (1.0 - t)).powf(self.exponent).min(1.0)
    }
}

/// `alpha(t)` for the given measure; `t` is clamped to `[0, 1]`.
pub fn alpha_envelope(kind: SubsampleKind, d: usize, patch_side: f64, h: f64, t: f64) -> Result<f64> {
    Ok(AlphaEnvelope::new(kind, d, patch_side, h)?.eval(t))
}

/// `int_0^1 alpha(t)^{1/p} t^{-d/p} dt`, the coefficient integral of the
/// subsampled Poincaré bound, by adaptive quadrature split at `h/(H+h)`.
///
/// For slices the integrand behaves like `t^{-1/p}` at the origin; the first
/// segment is integrated after the substitution `t = s^{p/(p-1)}`, which
/// removes the singularity. With `p = 1` the integral diverges.
pub fn bound_integral(kind: SubsampleKind, p: f64, d: usize, patch_side: f64, h: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("exponent p must be at least 1, got {p}")));
    }
    let env = AlphaEnvelope::new(kind, d, patch_side, h)?;
    let slice = matches!(kind, SubsampleKind::Slice { .. });
    if slice && p == 1.0 {
        return Err(Error::Domain(
            "the slice coefficient integral diverges for p = 1; sliced data need p > 1".into(),
        ));
    }
    let ts = env.breakpoint();
    let dp = d as f64 / p;
    let q = env.exponent() / p;
    let tol = 1e-14;
    // Below the breakpoint alpha^{1/p} t^{-d/p} = (H/h)^q t^{q-d/p} (1-t)^{-q}.
    let head = if slice {
        let k = p / (p - 1.0);
        let s_end = ts.powf(1.0 / k);
        crate::quadrature::integrate_with(
            |s: f64| {
                let t = s.powf(k);
                // t^{q-d/p} = t^{-1/p} and dt = k t^{1/p} ds cancel each other
                k * env.ratio.powf(q) * (1.0 - t).powf(-q)
            },
            0.0,
            s_end,
            &[],
            tol,
            tol,
        )
        .value
    } else {
        crate::quadrature::integrate_with(
            |t: f64| env.ratio.powf(q) * (1.0 - t).powf(-q),
            0.0,
            ts,
            &[],
            tol,
            tol,
        )
        .value
    };
    let tail = crate::quadrature::integrate_with(|t: f64| t.powf(-dp), ts, 1.0, &[], tol, tol).value;
    Ok(head + tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CoarsePartition;
    use proptest::prelude::*;

    fn setup(d: usize, n: usize, m: usize, kind: SubsampleKind, r: f64) -> MeasurementSet {
        let spec = DomainSpec::new(d, n).unwrap();
        let part = CoarsePartition::new(spec, m).unwrap();
        MeasurementSet::new(&SubsampleSpec::new(&part, kind, r).unwrap())
    }

    #[test]
    fn every_functional_has_unit_mass() {
        for (d, kind) in [
            (1, SubsampleKind::Cube),
            (2, SubsampleKind::Cube),
            (3, SubsampleKind::Cube),
            (2, SubsampleKind::Slice { normal: 0 }),
            (3, SubsampleKind::Slice { normal: 2 }),
            (2, SubsampleKind::Point),
        ] {
            let set = setup(d, 8, 2, kind, 0.5);
            for f in set.functionals() {
                assert!((f.mass() - 1.0).abs() < 1e-14, "{kind:?}");
            }
        }
    }

    #[test]
    fn constant_functions_are_reproduced() {
        let set = setup(2, 16, 4, SubsampleKind::Cube, 0.5);
        let u = GridFunction::constant(*set.subsample().partition().spec(), 2.5);
        let data = set.measure(&u).unwrap();
        assert!(data.values.iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn cube_average_of_linear_function_is_center_value() {
        let set = setup(1, 8, 2, SubsampleKind::Cube, 1.0);
        let u = GridFunction::from_fn(*set.subsample().partition().spec(), |x| x[0]);
        let data = set.measure(&u).unwrap();
        assert!((data.values[0] - 0.25).abs() < 1e-15);
        assert!((data.values[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cube_average_of_quadratic_matches_exact_integral() {
        // Average of x^2 over [1/4-1/16, 1/4+1/16] differs from the
        // interpolant's average by h_f^2/6; compare against the latter.
        let set = setup(1, 16, 2, SubsampleKind::Cube, 0.25);
        let spec = *set.subsample().partition().spec();
        let u = GridFunction::from_fn(spec, |x| x[0] * x[0]);
        let v = set.measure(&u).unwrap().values[0];
        let (a, b) = (0.1875f64, 0.3125f64);
        let exact = (b.powi(3) - a.powi(3)) / 3.0 / (b - a);
        let hf = spec.spacing();
        assert!((v - exact - hf * hf / 6.0).abs() < 1e-14);
    }

    #[test]
    fn point_functional_is_nodal_evaluation() {
        let set = setup(2, 8, 2, SubsampleKind::Point, 1.0);
        let spec = *set.subsample().partition().spec();
        let u = GridFunction::from_fn(spec, |x| x[0] * 10.0 + x[1]);
        let data = set.measure(&u).unwrap();
        assert!((data.values[0] - 2.75).abs() < 1e-14);
        assert!((data.values[3] - 8.25).abs() < 1e-14);
        assert_eq!(set.functional(0).nodes().len(), 1);
    }

    #[test]
    fn slice_ignores_normal_variation_off_plane() {
        let set = setup(2, 16, 2, SubsampleKind::Slice { normal: 1 }, 0.5);
        let spec = *set.subsample().partition().spec();
        // vanishes on the lines y = 1/4 and y = 3/4
        let u = GridFunction::from_fn(spec, |x| (x[1] - 0.25) * (x[1] - 0.75) * (1.0 + x[0]));
        let data = set.measure(&u).unwrap();
        assert!(data.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn density_reproduces_measurement() {
        let set = setup(2, 16, 4, SubsampleKind::Cube, 0.5);
        let spec = *set.subsample().partition().spec();
        let u = GridFunction::from_fn(spec, |x| (3.0 * x[0]).sin() * (x[1] + 0.5).ln());
        let data = set.measure(&u).unwrap();
        for i in 0..set.len() {
            let rho = set.cell_density(i).unwrap();
            let v = l2_inner_density(&u, &rho).unwrap();
            assert!((v - data.values[i]).abs() < 1e-12);
        }
        let slices = setup(2, 16, 4, SubsampleKind::Slice { normal: 0 }, 0.5);
        assert!(slices.cell_density(0).is_none());
    }

    #[test]
    fn envelope_values() {
        let a = AlphaEnvelope::new(SubsampleKind::Cube, 2, 1.0, 0.1).unwrap();
        assert!((a.eval(a.breakpoint()) - 1.0).abs() < 1e-12);
        assert_eq!(a.eval(0.0), 0.0);
        assert_eq!(a.eval(1.0), 1.0);
        let v = alpha_envelope(SubsampleKind::Cube, 2, 1.0, 0.1, 0.05).unwrap();
        assert!((v - 100.0 * (0.05f64 / 0.95).powi(2)).abs() < 1e-12);
        assert!((v - 0.2770).abs() < 1e-4);
        let s = alpha_envelope(SubsampleKind::Slice { normal: 0 }, 2, 1.0, 0.1, 0.05).unwrap();
        assert!((s - 10.0 * 0.05 / 0.95).abs() < 1e-12);
        assert!(matches!(AlphaEnvelope::new(SubsampleKind::Cube, 2, 1.0, 1.5), Err(Error::Domain(_))));
        assert!(matches!(AlphaEnvelope::new(SubsampleKind::Cube, 2, 1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn envelope_is_monotone_in_t_and_antitone_in_h() {
        let ts: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        for d in 1..=3 {
            let a = AlphaEnvelope::new(SubsampleKind::Cube, d, 1.0, 0.2).unwrap();
            let b = AlphaEnvelope::new(SubsampleKind::Cube, d, 1.0, 0.4).unwrap();
            for w in ts.windows(2) {
                assert!(a.eval(w[1]) >= a.eval(w[0]));
            }
            // a smaller subsample set concentrates the measure, so the envelope rises
            for &t in &ts {
                assert!(a.eval(t) >= b.eval(t));
                assert!((0.0..=1.0).contains(&a.eval(t)));
            }
        }
    }

    #[test]
    fn critical_cube_integral_closed_form() {
        let v = bound_integral(SubsampleKind::Cube, 2.0, 2, 1.0, 0.1).unwrap();
        let exact = 10.0 * 1.1f64.ln() + 11.0f64.ln();
        assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
        assert!((v - 3.3510).abs() < 1e-4);
    }

    #[test]
    fn slice_integral_closed_form_and_divergence() {
        // d = p = 2: head = (H/h)^{1/2} 2 asin(sqrt(t*)), tail = ln(1 + H/h)
        let (hh, h) = (1.0, 0.125);
        let ts = h / (hh + h);
        let exact = (hh / h as f64).sqrt() * 2.0 * ts.sqrt().asin() + (1.0f64 + hh / h).ln();
        let v = bound_integral(SubsampleKind::Slice { normal: 0 }, 2.0, 2, hh, h).unwrap();
        assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
        assert!(matches!(bound_integral(SubsampleKind::Slice { normal: 0 }, 1.0, 2, 1.0, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn vector_csv_round_trip() {
        let set = setup(2, 8, 2, SubsampleKind::Cube, 0.5);
        let u = GridFunction::from_fn(*set.subsample().partition().spec(), |x| x[0] - x[1] / 3.0);
        let data = set.measure(&u).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,h,H,d\ncube,0.25,0.5,2\npatch_index,value\n0,"));
        assert_eq!(MeasurementVector::read_csv(&buf[..]).unwrap(), data);
    }

    proptest! {
        #[test]
        fn measurement_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let set = setup(2, 8, 2, SubsampleKind::Cube, 0.5);
            let spec = *set.subsample().partition().spec();
            let s = seed as f64;
            let u = GridFunction::from_fn(spec, |x| (s * x[0]).sin() + x[1]);
            let v = GridFunction::from_fn(spec, |x| (s + x[0] * x[1]).cos());
            let w = u.scaled(a).add_scaled(b, &v).unwrap();
            let mu = set.measure(&u).unwrap().values;
            let mv = set.measure(&v).unwrap().values;
            let mw = set.measure(&w).unwrap().values;
            for i in 0..mu.len() {
                prop_assert!((mw[i] - a * mu[i] - b * mv[i]).abs() < 1e-12);
            }
        }
    }
}
