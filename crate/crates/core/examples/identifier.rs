//! The discrete least-squares identifier on synthetic regressions: recovers a
//! target parameter, shows the projection onto the box, and tracks the
//! persistence-of-excitation metric.
//!
//!     cargo run --example identifier

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regulab::identifier::{cost_j, jump, pe_metric, IdentifierState, RegressionSample};
use regulab::model::ThetaBox;

fn main() -> regulab::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bbox = ThetaBox::new(DVector::from_column_slice(&[0.5, -1.0]), DVector::from_column_slice(&[10.0, 2.0]))?;

    for (label, target) in [("inside the box", [4.0, 0.0]), ("outside the box", [12.0, -3.0])] {
        let target = DVector::from_column_slice(&target);
        let mut st = IdentifierState::new(DVector::from_column_slice(&[1.0, -1.0]), 0.9, bbox.clone())?;
        let mut hist = Vec::new();
        println!("target {label}: {:?}", target.as_slice());
        for j in 0..8 {
            let alpha = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let s = RegressionSample { beta: target.dot(&alpha), alpha };
            st = jump(&st, &s);
            hist.push(s);
            let pe = pe_metric(&hist, st.mu, 2).map_or("-".into(), |m| format!("{m:.3}"));
            println!(
                "  j={:<2} theta = ({:8.4}, {:8.4})  raw = ({:8.4}, {:8.4})  pe = {pe:<6} J = {:.2e}",
                j + 1,
                st.theta[0],
                st.theta[1],
                st.raw_estimate()[0],
                st.raw_estimate()[1],
                cost_j(&hist, st.mu, &st.theta),
            );
        }
    }
    Ok(())
}
