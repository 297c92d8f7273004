//! Shared fixtures for the criterion benches.

use tonelli_core::{Lagrangian, Obstacle, ObstaclePair, PairOptions, ProblemSpec};

/// Taut string over `f = 1/2 − 4(x − 1/2)²`, zero boundary values.
pub fn taut_string(n: usize) -> ProblemSpec {
    let f = Obstacle::parse("0.5 - 4*(x-0.5)^2", Some("-8*(x-0.5)")).expect("valid obstacle");
    let pair = ObstaclePair::new(
        f,
        Obstacle::constant(10.0),
        0.0,
        1.0,
        PairOptions::for_solver_grid(n),
    )
    .expect("strict pair");
    let l = Lagrangian::parse("v^2", 2.0).expect("valid Lagrangian");
    ProblemSpec::new(l, pair, 0.0, 0.0, n).expect("feasible")
}

/// `L = v² + u²` under `f = 0.3 − |x − 1/2|^{3/2}`.
pub fn holder_obstacle(n: usize) -> ProblemSpec {
    let f = Obstacle::parse("0.3 - abs(x-0.5)^1.5", None).expect("valid obstacle");
    let pair = ObstaclePair::new(
        f,
        Obstacle::constant(2.0),
        0.0,
        1.0,
        PairOptions::for_solver_grid(n),
    )
    .expect("strict pair");
    let l = Lagrangian::parse("v^2 + u^2", 2.0).expect("valid Lagrangian");
    ProblemSpec::new(l, pair, 0.0, 0.0, n).expect("feasible")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(taut_string(11).n, 11);
        assert_eq!(holder_obstacle(11).obstacles.upper(0.2), 2.0);
    }
}
