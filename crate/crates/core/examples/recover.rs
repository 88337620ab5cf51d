use subrec::elliptic::{CoefficientField, StiffnessOperator, DEFAULT_TOL};
use subrec::grid::{CoarsePartition, DomainSpec, GridFunction, SubsampleKind, SubsampleSpec};
use subrec::measurements::MeasurementSet;
use subrec::recovery::{build_multiscale_basis, ms_recover};

fn main() -> subrec::Result<()> {
    let spec = DomainSpec::new(2, 64)?;
    let part = CoarsePartition::new(spec, 4)?;
    let sub = SubsampleSpec::new(&part, SubsampleKind::Cube, 0.25)?;
    let set = MeasurementSet::new(&sub);
    let op = StiffnessOperator::new(&CoefficientField::constant(spec, 1.0)?);
    let basis = build_multiscale_basis(&set, &op, DEFAULT_TOL, "a=1")?;

    let u = GridFunction::from_fn(spec, |x| (3.0 * x[0]).sin() * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]));
    let recovered = ms_recover(&set.measure(&u)?, &basis)?;
    let err = recovered.sub(&u)?.lp_norm(2.0, None)?;
    println!("relative L2 error {:.3e}", err / u.lp_norm(2.0, None)?);
    Ok(())
}
