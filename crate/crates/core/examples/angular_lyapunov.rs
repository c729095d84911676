//! Top Lyapunov exponent from the angular process, compared with the
//! closed form where one exists.

use episwitch::linalg::Matrix;
use episwitch::lyapunov::estimate_lambda;
use episwitch::model::ModelSpec;
use episwitch::rng::RngStream;
use episwitch::spectral::lambda_exact_1d;

fn main() -> episwitch::Result<()> {
    let q = Matrix::from_array([[-1.0, 1.0], [1.0, -1.0]]);
    for b in [[3.0, 0.5], [0.4, 1.2]] {
        let spec = ModelSpec::scalar(&b, 1.0, q.clone())?;
        let est = estimate_lambda(&spec, 1e5, 100.0, 20, RngStream::new(1, 0))?;
        println!(
            "b={b:?}: Lambda = {:.4} +/- {:.4} (exact {:.4})",
            est.value,
            est.half_width,
            lambda_exact_1d(&spec)?
        );
    }

    // two groups, one environment: Lambda is the principal eigenvalue of A
    let spec = ModelSpec::lajmanovich_yorke(
        vec![0.5, 0.5],
        vec![Matrix::from_array([[0.0, 2.0], [2.0, 0.0]])],
        vec![vec![1.0, 1.0]],
        Matrix::zeros(1),
    )?;
    let est = estimate_lambda(&spec, 1e4, 10.0, 20, RngStream::new(1, 0))?;
    println!("2 groups: Lambda = {:.4} +/- {:.4} (exact 1)", est.value, est.half_width);
    Ok(())
}
