//! Seeded test functions.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::grid::{CoarsePartition, DomainSpec, GridFunction};

use super::config::TestFunctionKind;

/// `prod_k sin(pi x_k)`, exactly zero on the boundary.
pub fn sine_product(x: &[f64]) -> f64 {
    x.iter().map(|&t| if t == 0.0 || t == 1.0 { 0.0 } else { (PI * t).sin() }).product()
}

/// The sine product multiplied by `1 + (min_i |x - x_i| / H)^2`, which is
/// flattest at the patch centers `x_i`.
pub fn flattened_profile(part: &CoarsePartition) -> impl Fn(&[f64]) -> f64 + '_ {
    let d = part.spec().dim();
    let hh = part.patch_side();
    let centers: Vec<[f64; 3]> = (0..part.num_patches()).map(|i| part.center(i)).collect();
    move |x: &[f64]| {
        let dist2 = centers
            .iter()
            .map(|c| (0..d).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        sine_product(x) * (1.0 + dist2 / (hh * hh))
    }
}

/// `sum_k a_k prod_j cos(pi k_j x_j + phi_{k,j})` over multi-indices with
/// entries at most `modes`, excluding zero, with `a_k ~ N(0,1) / (1 + |k|^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSum {
    d: usize,
    terms: Vec<([f64; 3], [f64; 3], f64)>,
}

impl FourierSum {
    pub fn random(d: usize, modes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
        let side = modes + 1;
        let mut terms = Vec::new();
        for flat in 1..side.pow(d as u32) {
            let mut k = [0.0; 3];
            let mut rest = flat;
            for kj in k.iter_mut().take(d) {
                *kj = (rest % side) as f64;
                rest /= side;
            }
            let mut phi = [0.0; 3];
            for p in phi.iter_mut().take(d) {
                *p = phase.sample(&mut rng);
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            let k2: f64 = k.iter().map(|v| v * v).sum();
            terms.push((k, phi, z / (1.0 + k2)));
        }
        Self { d, terms }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, phi, a)| a * (0..self.d).map(|j| (PI * k[j] * x[j] + phi[j]).cos()).product::<f64>())
            .sum()
    }
}

/// `count` Fourier sums with seeds derived from `seed`.
pub fn fourier_family(d: usize, count: usize, seed: u64) -> Vec<FourierSum> {
    (0..count as u64).map(|i| FourierSum::random(d, 4, seed.wrapping_mul(0x9E37_79B9).wrapping_add(i))).collect()
}

/// Interpolates the configured test function (sample `index` for seeded families).
pub fn sample_test_function(kind: TestFunctionKind, part: &CoarsePartition, seed: u64, index: usize) -> GridFunction {
    let spec: DomainSpec = *part.spec();
    match kind {
        TestFunctionKind::SineProduct => GridFunction::from_fn(spec, sine_product),
        TestFunctionKind::Flattened => GridFunction::from_fn(spec, flattened_profile(part)),
        TestFunctionKind::Constant => GridFunction::constant(spec, 1.0),
        TestFunctionKind::Fourier => {
            let f = &fourier_family(spec.dim(), index + 1, seed)[index];
            GridFunction::from_fn(spec, |x| f.eval(x))
        }
    }
}
