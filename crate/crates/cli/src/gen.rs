use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use titan::solver::{even_row_counts, io::PartitionSpec, LinearSystem};

use crate::config::GenSpec;
use crate::CliError;

const MAX_ATTEMPTS: u64 = 10;

pub struct Generated {
    pub system: LinearSystem,
    pub partition: PartitionSpec,
    /// 1-based attempt that produced a full-rank system.
    pub attempt: u64,
}

/// Gaussian system with an even row split over `m` nodes. Attempt `i`
/// draws from stream `i` of the seeded generator, so a rank-deficient draw
/// is replaced deterministically.
pub fn generate_system(spec: &GenSpec, m: usize, seed: u64) -> Result<Generated, CliError> {
    let (p, n) = (spec.p, spec.n);
    if n == 0 || p < n {
        return Err(CliError::Precondition(format!("need p >= n >= 1, got p = {p}, n = {n}")));
    }
    if m == 0 || p < m {
        return Err(CliError::Precondition(format!("{p} rows cannot be split over {m} nodes")));
    }
    if spec.identity && p != n {
        return Err(CliError::Precondition("the identity system needs p = n".into()));
    }
    let normal = Normal::new(spec.mean, spec.variance.sqrt())
        .map_err(|e| CliError::Precondition(format!("bad distribution parameters: {e}")))?;
    let partition = PartitionSpec { row_counts: even_row_counts(p, m) };

    for attempt in 1..=MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let a = if spec.identity {
            DMatrix::identity(n, n)
        } else {
            DMatrix::from_fn(p, n, |_, _| normal.sample(&mut rng))
        };
        let b = DVector::from_fn(p, |_, _| normal.sample(&mut rng));
        let system = LinearSystem::new(a, b)?;
        match system.check_full_rank() {
            Ok(()) => return Ok(Generated { system, partition, attempt }),
            Err(e) => log::warn!("attempt {attempt}: {e}; redrawing"),
        }
    }
    Err(CliError::Precondition(format!("no full-rank system after {MAX_ATTEMPTS} attempts")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(p: usize, n: usize) -> GenSpec {
        GenSpec { m: None, p, n, mean: 0.0, variance: 2.0, identity: false }
    }

    #[test]
    fn small_experiment_shape() {
        let g = generate_system(&spec(15, 5), 5, 7).unwrap();
        assert_eq!((g.system.a.nrows(), g.system.a.ncols()), (15, 5));
        assert_eq!(g.partition.row_counts, vec![3; 5]);
        assert_eq!(g.attempt, 1);
    }

    #[test]
    fn same_seed_same_system() {
        let a = generate_system(&spec(8, 3), 2, 11).unwrap();
        let b = generate_system(&spec(8, 3), 2, 11).unwrap();
        assert_eq!(a.system, b.system);
        assert_ne!(a.system, generate_system(&spec(8, 3), 2, 12).unwrap().system);
    }

    #[test]
    fn sample_variance_is_near_two() {
        let g = generate_system(&spec(4000, 1), 1, 3).unwrap();
        let v = g.system.a.column(0);
        let mean = v.mean();
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 2.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn identity_flag() {
        let mut s = spec(4, 4);
        s.identity = true;
        let g = generate_system(&s, 2, 0).unwrap();
        assert_eq!(g.system.a, DMatrix::identity(4, 4));
        s.p = 5;
        assert!(matches!(generate_system(&s, 2, 0), Err(CliError::Precondition(_))));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(generate_system(&spec(3, 5), 1, 0).is_err());
        assert!(generate_system(&spec(5, 5), 6, 0).is_err());
    }
}
