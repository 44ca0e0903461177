//! Step-size rules, their certificates and the derived sums and products.

use markov_sa::StepSchedule;

fn main() -> markov_sa::Result<()> {
    for sch in [
        StepSchedule::harmonic(1.0)?,
        StepSchedule::harmonic(4.0)?,
        StepSchedule::power(1.0, 0.7)?,
        StepSchedule::from_descriptor("rule=table values=0.9,0.9,0.5 d3=1 d2=0.8", None)?,
    ] {
        let n = sch.certify_n()?;
        let n0 = n.max(1);
        println!("{}", sch.id());
        println!("  d1={} d2={} d3={}  N={n}", sch.d1, sch.d2, sch.d3);
        println!("  a(n0)={:.4}  b_n0(n0+1000)={:.4}", sch.a(n0), sch.b_sum(n0, n0 + 1000)?);
        println!(
            "  beta_n0(n0+1000)={:.3e}  chi(n0+1000, n0)={:.3e}  psi(0.9; n0+1000, n0)={:.4}",
            sch.beta(n0, n0 + 1000)?,
            sch.chi(n0 + 1000, n0),
            sch.psi(0.9, n0 + 1000, n0)
        );
    }
    Ok(())
}
