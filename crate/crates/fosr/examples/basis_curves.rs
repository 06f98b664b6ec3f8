//! Build a B-spline basis on a dense grid and expand coefficient vectors
//! into curves.
//!
//! ```text
//! cargo run --example basis_curves
//! ```
//!
//! The model represents every regression coefficient function as
//! `beta(t) = b' Phi(t)` for a shared spline basis `Phi`. This example
//! builds the default cubic basis with one interior knot (five basis
//! functions), checks the partition-of-unity property, and shows how a
//! coefficient vector turns into a curve.

use fosr::{build_basis, eval_coefficient_curve, Grid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = 21;
    let grid = Grid::new((0..k).map(|i| i as f64 / (k - 1) as f64).collect())?;
    let basis = build_basis(&grid, 3, &[0.5])?;

    println!(
        "cubic basis with interior knot at 0.5: {} basis functions on {} grid points",
        basis.n_basis(),
        k
    );
    println!("knot vector: {:?}", basis.knot_vector());

    // B-spline bases sum to one at every t.
    let phi = basis.phi();
    let max_dev = (0..k)
        .map(|row| ((0..basis.n_basis()).map(|s| phi[(row, s)]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
        ;
    println!("max |sum_s Phi_s(t) - 1| over the grid: {max_dev:.2e}");

    // A coefficient vector becomes a curve; all-ones gives the constant 1.
    let ones = vec![1.0; basis.n_basis()];
    let flat = eval_coefficient_curve(&basis, &ones)?;
    println!(
        "all-ones coefficients -> curve range [{:.6}, {:.6}] (constant 1)",
        flat.iter().cloned().fold(f64::INFINITY, f64::min),
        flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );

    // The ramp-like coefficient vector from the first synthetic design.
    let a1 = vec![4.0, 1.0, 3.0, 4.0, 2.0];
    let curve = eval_coefficient_curve(&basis, &a1)?;
    println!("\ncoefficients {a1:?} expand to:");
    for (i, t) in grid.values().iter().enumerate().step_by(4) {
        println!("  t = {t:.2}  beta(t) = {:+.4}", curve[i]);
    }
    Ok(())
}
