use super::{sign, HyperParams, OptimizerState, StepReport};
use crate::error::{MofoError, Result};
use crate::filter::{top_alpha_mask_of, FilterMask};
use crate::partition::PartitionedVector;

/// Lion: `θ ← θ − η_t (sign(c) + λθ)` with `c = β1 m + (1−β1) g`.
pub fn lion_step(
    theta: &PartitionedVector,
    grad: &PartitionedVector,
    state: &mut OptimizerState,
    h: &HyperParams,
) -> Result<(PartitionedVector, StepReport)> {
    lion_family_step(theta, grad, state, h, false)
}

/// Lion with the sign update restricted to the top-α% of the previous
/// momentum `m_{t−1}`. Weight decay still applies to every coordinate.
pub fn mofo_lion_step(
    theta: &PartitionedVector,
    grad: &PartitionedVector,
    state: &mut OptimizerState,
    h: &HyperParams,
) -> Result<(PartitionedVector, StepReport)> {
    lion_family_step(theta, grad, state, h, true)
}

fn lion_family_step(
    theta: &PartitionedVector,
    grad: &PartitionedVector,
    state: &mut OptimizerState,
    h: &HyperParams,
    filtered: bool,
) -> Result<(PartitionedVector, StepReport)> {
    h.validate()?;
    state.check_compatible(theta, grad)?;
    let layout = theta.layout().clone();
    let t = state.t + 1;
    let lr = h.lr.rate(t);
    let (b1, b2, wd) = (h.lion_beta1, h.lion_beta2, h.lion_weight_decay);

    let prev = state.prev_m.as_slice();
    let g = grad.as_slice();
    let mask = if filtered {
        top_alpha_mask_of(&layout, prev, h.alpha_pct)?
    } else {
        FilterMask::ones(layout.clone())
    };

    let next: Vec<f64> = theta
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &th)| {
            let c = b1 * prev[i] + (1.0 - b1) * g[i];
            let direction = if mask.is_set(i) { sign(c) } else { 0.0 };
            th - lr * (direction + wd * th)
        })
        .collect();
    if let Some(i) = next.iter().position(|x| !x.is_finite()) {
        return Err(MofoError::Numeric {
            step: t,
            reason: format!("parameter {i} became non-finite"),
        });
    }
    let momentum: Vec<f64> = prev
        .iter()
        .zip(g)
        .map(|(&m, &g)| b2 * m + (1.0 - b2) * g)
        .collect();

    let next = theta.with_values(next)?;
    let mut report = super::adam::build_report(t, lr, theta, &next, &mask, f64::INFINITY);
    // Decoupled decay moves frozen coordinates too; that is expected here.
    report.bound_violated = false;
    state.prev_m = state.prev_m.with_values(momentum)?;
    state.t = t;
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::LrSchedule;
    use crate::partition::BlockLayout;

    fn vec_of(values: &[f64]) -> PartitionedVector {
        PartitionedVector::new(BlockLayout::shared([("x", values.len())]).unwrap(), values.to_vec())
            .unwrap()
    }

    fn hp(wd: f64, alpha: f64) -> HyperParams {
        HyperParams {
            lr: LrSchedule::Constant(0.01),
            lion_weight_decay: wd,
            alpha_pct: alpha,
            ..HyperParams::default()
        }
    }

    #[test]
    fn first_step_is_sign_of_gradient() {
        let theta = vec_of(&[1.0, 1.0]);
        let mut s = OptimizerState::new(theta.layout().clone());
        let (next, _) = lion_step(&theta, &vec_of(&[2.0, -3.0]), &mut s, &hp(0.0, 100.0)).unwrap();
        assert_eq!(next.as_slice(), &[1.0 - 0.01, 1.0 + 0.01]);
        assert!((s.prev_m.as_slice()[0] - 0.01 * 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let theta = vec_of(&[0.5, -0.5]);
        let mut s = OptimizerState::new(theta.layout().clone());
        let (next, _) = lion_step(&theta, &vec_of(&[0.0, 0.0]), &mut s, &hp(0.0, 100.0)).unwrap();
        assert_eq!(next, theta);
    }

    #[test]
    fn pure_decay() {
        let theta = vec_of(&[0.5, -2.0]);
        let mut s = OptimizerState::new(theta.layout().clone());
        let (next, _) = lion_step(&theta, &vec_of(&[0.0, 0.0]), &mut s, &hp(0.1, 100.0)).unwrap();
        for (a, b) in next.as_slice().iter().zip(theta.as_slice()) {
            assert!((a - b * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
        }
    }

    #[test]
    fn mofo_lion_full_fraction_matches_lion() {
        let theta = vec_of(&[0.3, -0.1, 0.8]);
        let grads = [[1.0, -2.0, 0.5], [-0.3, 0.2, 0.1], [0.0, 4.0, -1.0]];
        let h = hp(0.05, 100.0);
        let mut sa = OptimizerState::new(theta.layout().clone());
        let mut sb = sa.clone();
        let (mut a, mut b) = (theta.clone(), theta);
        for g in grads {
            a = lion_step(&a, &vec_of(&g), &mut sa, &h).unwrap().0;
            b = mofo_lion_step(&b, &vec_of(&g), &mut sb, &h).unwrap().0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn first_filtered_step_uses_lowest_indices() {
        let theta = vec_of(&[0.0; 4]);
        let mut s = OptimizerState::new(theta.layout().clone());
        let (next, rep) =
            mofo_lion_step(&theta, &vec_of(&[1.0, 1.0, 1.0, 1.0]), &mut s, &hp(0.0, 50.0)).unwrap();
        assert_eq!(next.as_slice(), &[-0.01, -0.01, 0.0, 0.0]);
        assert_eq!(rep.mask_counts, vec![2]);
    }

    #[test]
    fn filter_source_is_previous_momentum() {
        let theta = vec_of(&[0.0, 0.0]);
        let mut s = OptimizerState::new(theta.layout().clone());
        s.prev_m = vec_of(&[5.0, -1.0]);
        // The gradient strongly favours coordinate 1, but m_{t-1} picks 0.
        let (next, _) =
            mofo_lion_step(&theta, &vec_of(&[-1.0, -100.0]), &mut s, &hp(0.0, 50.0)).unwrap();
        assert!(next.as_slice()[0] != 0.0);
        assert_eq!(next.as_slice()[1], 0.0);
    }

    #[test]
    fn decay_applies_outside_the_mask() {
        let theta = vec_of(&[1.0, 1.0]);
        let mut s = OptimizerState::new(theta.layout().clone());
        s.prev_m = vec_of(&[5.0, -1.0]);
        let (next, rep) =
            mofo_lion_step(&theta, &vec_of(&[1.0, 1.0]), &mut s, &hp(0.5, 50.0)).unwrap();
        assert!((next.as_slice()[1] - (1.0 - 0.01 * 0.5)).abs() < 1e-15);
        assert!(rep.max_abs_frozen_update > 0.0);
    }
}
