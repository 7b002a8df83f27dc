//! Derivative-free local maximization used by the positivity and norm
//! searches. Objectives there are maxima/minima of eigenvalues, so they are
//! only piecewise smooth; a compass search with extra random directions copes
//! with the kinks where pure coordinate moves stall.

use rand::Rng;

use crate::random::normal;

#[derive(Debug, Clone, Copy)]
pub(crate) struct PatternOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
    /// Keep the iterate on the unit sphere (for scale-invariant objectives).
    pub normalize: bool,
}

pub(crate) struct PatternResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Maximizes `f` from `x0`. Non-finite objective values count as `-inf`.
pub(crate) fn pattern_maximize(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: Vec<f64>,
    opts: PatternOptions,
    rng: &mut impl Rng,
) -> PatternResult {
    let d = x0.len();
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut evals = 0;
    let mut x = if opts.normalize { unit(x0) } else { x0 };
    let mut fx = eval(&x, &mut evals);
    let mut step = opts.initial_step;

    while step >= opts.min_step && evals < opts.max_evals {
        let mut improved = false;
        'coords: for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut trial = x.clone();
                trial[i] += sign * step;
                if opts.normalize {
                    trial = unit(trial);
                }
                let ft = eval(&trial, &mut evals);
                if ft > fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                    continue 'coords;
                }
            }
        }
        if !improved {
            for _ in 0..d.max(2) {
                let dir = unit((0..d).map(|_| normal(rng)).collect());
                for sign in [1.0, -1.0] {
                    let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + sign * step * b).collect();
                    if opts.normalize {
                        trial = unit(trial);
                    }
                    let ft = eval(&trial, &mut evals);
                    if ft > fx {
                        x = trial;
                        fx = ft;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    PatternResult { x, value: fx, evals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::rng_from_seed;

    #[test]
    fn finds_maximum_of_kinked_function() {
        let mut rng = rng_from_seed(0);
        // max of -|x-1| - 2|y+0.5| at (1, -0.5), value 0; kinks on both axes
        let res = pattern_maximize(
            |p| -(p[0] - 1.0).abs() - 2.0 * (p[1] + 0.5).abs() - (p[0] - 1.0 - p[1] - 0.5).abs() * 0.1,
            vec![0.0, 0.0],
            PatternOptions { initial_step: 0.5, min_step: 1e-12, max_evals: 100_000, normalize: false },
            &mut rng,
        );
        assert!(res.value > -1e-9, "value {}", res.value);
    }
}
