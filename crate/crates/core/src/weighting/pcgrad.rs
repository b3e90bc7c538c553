use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::GradientMap;

/// One projection performed while combining: task `task`'s working gradient
/// was projected off the original gradient of task `against`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub task: usize,
    pub against: usize,
    pub dot_before: f64,
    pub dot_after: f64,
}

/// Gradient surgery: every task gradient is projected off each other task's
/// gradient it conflicts with (negative inner product), visiting the other
/// tasks in a random order, and the results are summed.
///
/// Projections are always taken against the original, unmodified gradients.
pub fn pcgrad_combine<R: Rng + ?Sized>(task_grads: &[GradientMap], rng: &mut R) -> GradientMap {
    pcgrad_combine_traced(task_grads, rng).0
}

/// [`pcgrad_combine`] that also reports every projection it made.
pub fn pcgrad_combine_traced<R: Rng + ?Sized>(
    task_grads: &[GradientMap],
    rng: &mut R,
) -> (GradientMap, Vec<Projection>) {
    let n = task_grads.len();
    let sq_norms: Vec<f64> = task_grads.iter().map(GradientMap::squared_norm).collect();
    let mut tasks: Vec<usize> = (0..n).collect();
    tasks.shuffle(rng);

    let mut combined = GradientMap::new();
    let mut trace = Vec::new();
    for &i in &tasks {
        let mut g = task_grads[i].clone();
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.shuffle(rng);
        for j in others {
            if sq_norms[j] == 0.0 {
                continue;
            }
            let dot = g.dot(&task_grads[j]);
            if dot < 0.0 {
                g.add_scaled(-dot / sq_norms[j], &task_grads[j]);
                trace.push(Projection {
                    task: i,
                    against: j,
                    dot_before: dot,
                    dot_after: g.dot(&task_grads[j]),
                });
            }
        }
        combined.add_scaled(1.0, &g);
    }
    (combined, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamId, Tensor};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g2(x: f64, y: f64) -> GradientMap {
        let mut g = GradientMap::new();
        g.insert(ParamId(0), Tensor::vector(&[x, y]).unwrap());
        g
    }

    fn values(g: &GradientMap) -> Vec<f64> {
        g.get(ParamId(0)).unwrap().data().to_vec()
    }

    #[test]
    fn non_conflicting_gradients_pass_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = pcgrad_combine(&[g2(1.0, 0.0), g2(0.0, 1.0)], &mut rng);
        assert_eq!(values(&out), vec![1.0, 1.0]);
    }

    #[test]
    fn conflicting_pair_is_projected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, trace) = pcgrad_combine_traced(&[g2(1.0, 0.0), g2(-1.0, 1.0)], &mut rng);
        // g1 -> (1,0) - (-1/2)(-1,1) = (0.5, 0.5); g2 -> (-1,1) - (-1/1)(1,0) = (0, 1)
        let p1 = trace.iter().find(|p| p.task == 0).unwrap();
        assert_eq!(p1.dot_before, -1.0);
        let v = values(&out);
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn single_task_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = pcgrad_combine(&[g2(-2.0, 7.0)], &mut rng);
        assert_eq!(values(&out), vec![-2.0, 7.0]);
    }

    #[test]
    fn zero_gradient_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = pcgrad_combine(&[g2(1.0, 2.0), g2(0.0, 0.0)], &mut rng);
        assert_eq!(values(&out), vec![1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn projection_removes_conflict(
            grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 2..7),
            seed in 0u64..1000,
        ) {
            let maps: Vec<GradientMap> = grads
                .iter()
                .map(|v| {
                    let mut g = GradientMap::new();
                    g.insert(ParamId(0), Tensor::vector(&v[..3]).unwrap());
                    g.insert(ParamId(1), Tensor::vector(&v[3..]).unwrap());
                    g
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (_, trace) = pcgrad_combine_traced(&maps, &mut rng);
            for p in trace {
                prop_assert!(p.dot_after >= -1e-12, "{p:?}");
            }
        }
    }
}
