//! Stationary law, Poisson solution and hitting times of a small chain.

use markov_sa::markov::{fundamental_matrix, hitting_time_vector, poisson_solve, stationarity_defect};
use markov_sa::FiniteChain;
use nalgebra::DMatrix;

fn main() -> markov_sa::Result<()> {
    let chain = FiniteChain::from_rows(&[
        vec![0.5, 0.3, 0.2],
        vec![0.2, 0.5, 0.3],
        vec![0.3, 0.2, 0.5],
    ])?;
    let pi = chain.stationary()?;
    println!("pi = {pi:?} (defect {:.1e})", stationarity_defect(&chain, pi));

    // Two-dimensional f, pinned at state 0.
    let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 2.0, 0.5, -3.0]);
    let sol = poisson_solve(&chain, &f, 0)?;
    for i in 0..3 {
        println!("V({i}) = {:?}", sol.row(i));
    }
    println!("residual {:.1e}", sol.residual);

    println!("fundamental matrix without state 0:\n{}", fundamental_matrix(&chain, 0)?);
    println!("mean hitting times of state 0 from 1, 2: {:?}", hitting_time_vector(&chain, 0)?);
    Ok(())
}
