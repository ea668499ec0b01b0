use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    hamming, AttackConfig, AttackResult, AttackTrace, FailureKind, FarSide, OutputPath, TraceEvent,
    TraceStep,
};
use crate::densecore::{
    axpy, condition_estimate, dot, norm2, norm_inf, orthonormalize, preimage_affine, solve_square,
    sub, Matrix,
};
use crate::relunet::{
    Evaluation, InputSubset, MlpNetwork, RestrictedNetwork, UnitId, SIMULTANEOUS_TOL,
};
use crate::{rng, Error, Result};

/// Square local maps with a larger estimated condition number count as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
/// Step-parameter nudge past a crossed boundary.
const CROSS_NUDGE: f64 = 1e-7;
/// The nudge is also capped at this fraction of the step to the switch.
const NUDGE_FRACTION: f64 = 1e-2;
/// Pre-activation magnitude the crossed unit must reach past its boundary.
const MIN_SEPARATION: f64 = 1e-10;
/// Upper bound on the same; it also bounds how far the nudge leaves the path.
const MAX_SEPARATION: f64 = 1e-8;
/// Re-aims at the final vertex allowed when it was reached outside tolerance.
const MAX_POLISH: usize = 5;

pub(crate) fn default_eps_target(target_output: &[f64]) -> f64 {
    1e-6 * (1.0 + norm_inf(target_output))
}

fn tolerances(cfg: &AttackConfig, path: &OutputPath) -> Result<(f64, f64)> {
    let target = path.vertices().last().unwrap();
    let eps_target = cfg
        .epsilon_target
        .unwrap_or_else(|| default_eps_target(target));
    let eps_progress = cfg.epsilon_progress.unwrap_or(1e-9 * path.arc_length());
    if eps_target.is_nan()
        || eps_target <= 0.0
        || cfg.epsilon_progress.is_some_and(|e| e.is_nan() || e <= 0.0)
    {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }
    Ok((eps_target, eps_progress))
}

/// Runs one path-following attempt along a prebuilt path. The free-coordinate
/// count decides the variant: `m` gives the square-inverse walk, `m + delta`
/// the preimage walk, sampling from `rng` when given. Runs stop early with
/// [`FailureKind::IterationCap`] once past half the iteration budget with
/// progress below `laggard_floor`.
pub fn follow_with_trace(
    net: &MlpNetwork,
    x: &[f64],
    subset: &InputSubset,
    path: &OutputPath,
    cfg: &AttackConfig,
    mut rng: Option<&mut rng::Rng>,
    laggard_floor: Option<f64>,
) -> Result<(AttackResult, AttackTrace)> {
    let m = net.output_dim();
    if subset.len() < m {
        return Err(Error::InvalidArgument(format!(
            "need at least {m} free coordinates, got {}",
            subset.len()
        )));
    }
    let delta = subset.len() - m;
    let (eps_target, eps_progress) = tolerances(cfg, path)?;
    let target = path.vertices().last().unwrap().clone();
    let rn = RestrictedNetwork::new(net, x, subset.clone());
    let start = subset.gather(x);
    let mut z = start.clone();
    let mut eval = rn.evaluate(&z);
    if let Some(u) = eval.boundary_unit() {
        return Err(Error::OnBoundary {
            layer: u.layer,
            unit: u.index,
        });
    }
    let mut trace = AttackTrace::default();
    let mut next = 1usize;
    let mut progress = 0.0;
    let mut crossed: Option<UnitId> = None;
    let mut polish = 0usize;
    let mut iterations = 0usize;

    let finish = |z: &[f64],
                  iterations: usize,
                  progress: f64,
                  failure: Option<FailureKind>,
                  trace: &AttackTrace| {
        let full = rn.embed(z);
        let final_output = net.forward(&full).expect("dimensions checked");
        let input_len = trace.input_length(&start);
        AttackResult {
            success: failure.is_none(),
            hamming: hamming(x, &full),
            z: full,
            iterations,
            final_output,
            failure_kind: failure,
            progress,
            length_ratio: if progress > 0.0 {
                input_len / progress
            } else {
                0.0
            },
        }
    };

    if norm_inf(&sub(&eval.output, &target)) <= eps_target {
        return Ok((finish(&z, 0, path.arc_length(), None, &trace), trace));
    }

    let failure = loop {
        if iterations >= cfg.max_iters {
            break FailureKind::IterationCap;
        }
        if let Some(floor) = laggard_floor {
            if iterations >= cfg.max_iters / 2 && progress < floor {
                break FailureKind::IterationCap;
            }
        }
        iterations += 1;

        let w = sub(&path.vertices()[next], &eval.output);
        let a = rn.local_map(&eval);
        let mut reflection_resolved = false;
        // the unit just crossed, its gradient and the side it is now on
        let guard = crossed.map(|u| (rn.unit_gradient(&eval, u), side_of(&eval, u)));

        let (dmin, dir) = if delta == 0 {
            if condition_estimate(&a) > SINGULAR_CONDITION {
                break FailureKind::Singular;
            }
            let Ok(d) = solve_square(&a, &w) else {
                break FailureKind::Singular;
            };
            (d, None)
        } else {
            let Some(f) = preimage_family(&a, &w, rng.as_deref_mut()) else {
                break FailureKind::Singular;
            };
            f
        };
        let r = norm2(&dmin);
        let t = match (&dir, cfg.far_side) {
            (None, _) => 0.0,
            (Some(dir), FarSide::Ray) => {
                let (lo, hi) = match &guard {
                    Some((g, sigma)) => {
                        reflection_resolved = sigma * dot(g, &dmin) < 0.0;
                        match far_side_interval(g, *sigma, &dmin, dir) {
                            Some(iv) => iv,
                            None => break FailureKind::Reflection,
                        }
                    }
                    None => (f64::NEG_INFINITY, f64::INFINITY),
                };
                sample_interval(rng.as_deref_mut(), lo, hi, r)
            }
            (Some(_), FarSide::Line) => match rng.as_deref_mut() {
                Some(g) => r * g.sample::<f64, _>(StandardNormal) / (subset.len() as f64).sqrt(),
                None => 0.0,
            },
        };
        let mut d = dmin;
        if let Some(dir) = &dir {
            axpy(t, dir, &mut d);
        }
        if let Some((g, sigma)) = &guard {
            if sigma * dot(g, &d) < 0.0 {
                break FailureKind::Reflection;
            }
        }
        let (step, deriv) = rn.step(&eval, &d, 1.0);

        let (scale, event) = match (step.tau, step.unit) {
            (Some(tau), Some(unit)) if tau < 1.0 - 1e-12 => {
                // Past the switch the output follows the new region's map, so
                // the nudge is kept small next to the step itself and leaves
                // the crossed unit only just off its boundary.
                let rate = deriv.hidden[unit.layer][unit.index].abs();
                let mut eta = CROSS_NUDGE
                    .min(NUDGE_FRACTION * tau)
                    .clamp(MIN_SEPARATION / rate, MAX_SEPARATION / rate);
                if let Some(nt) = step.next_tau {
                    let gap = nt - tau;
                    if gap > SIMULTANEOUS_TOL * tau.max(1.0) {
                        eta = eta.min(gap / 2.0);
                    }
                }
                eta = eta.min((1.0 - tau) / 2.0);
                (tau + eta, TraceEvent::BoundaryCrossed(unit))
            }
            _ => (
                1.0,
                if polish > 0 {
                    TraceEvent::Advance
                } else {
                    TraceEvent::PathCorner(next)
                },
            ),
        };
        axpy(scale, &d, &mut z);
        eval = rn.evaluate(&z);

        match event {
            TraceEvent::BoundaryCrossed(u) => {
                crossed = Some(u);
                let p = path.progress(next, &eval.output);
                let gained = p - progress;
                progress = progress.max(p);
                trace.steps.push(TraceStep {
                    z: z.clone(),
                    output: eval.output.clone(),
                    progress,
                    event,
                    reflection_resolved,
                });
                if gained < eps_progress {
                    break FailureKind::Sinkhole;
                }
            }
            _ => {
                crossed = None;
                next += 1;
                progress = progress.max(path.progress(next, &eval.output));
                trace.steps.push(TraceStep {
                    z: z.clone(),
                    output: eval.output.clone(),
                    progress,
                    event,
                    reflection_resolved,
                });
                if next == path.len() {
                    let full = net.forward(&rn.embed(&z))?;
                    if norm_inf(&sub(&full, &target)) <= eps_target {
                        return Ok((finish(&z, iterations, progress, None, &trace), trace));
                    }
                    polish += 1;
                    if polish > MAX_POLISH {
                        break FailureKind::Sinkhole;
                    }
                    next = path.len() - 1;
                }
            }
        }
    };
    Ok((
        finish(&z, iterations, progress, Some(failure), &trace),
        trace,
    ))
}

/// Min-norm solution of `a d = w` and a random unit direction in the null
/// space, or its first basis vector without `rng`.
fn preimage_family(
    a: &Matrix,
    w: &[f64],
    rng: Option<&mut rng::Rng>,
) -> Option<(Vec<f64>, Option<Vec<f64>>)> {
    let pre = preimage_affine(a, w).ok()?;
    let basis = orthonormalize(&pre.null_basis, 1e-10);
    if basis.is_empty() {
        return None;
    }
    let mut dmin = pre.particular;
    for q in &basis {
        let c = dot(q, &dmin);
        axpy(-c, q, &mut dmin);
    }
    let dir = match rng {
        Some(g) if basis.len() > 1 => {
            let mut u = vec![0.0; a.cols()];
            for q in &basis {
                axpy(g.sample::<f64, _>(StandardNormal), q, &mut u);
            }
            let nu = norm2(&u);
            u.iter_mut().for_each(|v| *v /= nu);
            u
        }
        _ => basis[0].clone(),
    };
    Some((dmin, Some(dir)))
}

fn side_of(eval: &Evaluation, u: UnitId) -> f64 {
    if eval.hidden[u.layer][u.index] > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Values of `t` for which `dmin + t dir` keeps the unit with gradient `g` on
/// side `sigma`; `None` when there are none.
fn far_side_interval(g: &[f64], sigma: f64, dmin: &[f64], dir: &[f64]) -> Option<(f64, f64)> {
    let a = sigma * dot(g, dmin);
    let b = sigma * dot(g, dir);
    if b.abs() <= 1e-12 * norm2(g) {
        return (a >= 0.0).then_some((f64::NEG_INFINITY, f64::INFINITY));
    }
    let t0 = -a / b;
    Some(if b > 0.0 {
        (t0, f64::INFINITY)
    } else {
        (f64::NEG_INFINITY, t0)
    })
}

/// A random point of `(lo, hi)`. An unbounded side is cut off at distance
/// `max(r, |end|)` from the finite end, or at `r` from the origin when both
/// are open, where `r` is the length of the minimum-norm solution.
fn sample_interval(rng: Option<&mut rng::Rng>, lo: f64, hi: f64, r: f64) -> f64 {
    let (a, b) = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => (lo, hi),
        (true, false) => (lo, lo + r.max(lo.abs())),
        (false, true) => (hi - r.max(hi.abs()), hi),
        (false, false) => (-r, r),
    };
    match rng {
        // open at the finite end so the crossed unit is not left parallel
        Some(g) if b > a => {
            let u = 1.0 - g.random::<f64>();
            if lo.is_finite() {
                a + u * (b - a)
            } else {
                b - u * (b - a)
            }
        }
        _ => 0.5 * (a + b),
    }
}

fn trivial(net: &MlpNetwork, x: &[f64]) -> Result<AttackResult> {
    Ok(AttackResult {
        success: true,
        z: x.to_vec(),
        hamming: 0,
        iterations: 0,
        final_output: net.forward(x)?,
        failure_kind: None,
        progress: 0.0,
        length_ratio: 0.0,
    })
}

/// Square-inverse walk with exactly `m` free coordinates. Reflections are
/// fatal.
pub fn follow_basic(
    net: &MlpNetwork,
    x: &[f64],
    y: &[f64],
    subset: &InputSubset,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if subset.len() != net.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "basic walk needs exactly {} free coordinates, got {}",
            net.output_dim(),
            subset.len()
        )));
    }
    if x == y {
        return trivial(net, x);
    }
    let path = super::build_path(net, x, y)?;
    Ok(follow_with_trace(net, x, subset, &path, cfg, None, None)?.0)
}

/// Preimage walk with `m + cfg.delta` free coordinates; `restart` selects the
/// random stream, so `(cfg.seed, restart)` fixes the run.
pub fn follow_improved(
    net: &MlpNetwork,
    x: &[f64],
    y: &[f64],
    subset: &InputSubset,
    cfg: &AttackConfig,
    restart: u64,
) -> Result<AttackResult> {
    if subset.len() != net.output_dim() + cfg.delta {
        return Err(Error::InvalidArgument(format!(
            "expected {} free coordinates, got {}",
            net.output_dim() + cfg.delta,
            subset.len()
        )));
    }
    if x == y {
        return trivial(net, x);
    }
    let path = super::build_path(net, x, y)?;
    let mut r = rng::stream(cfg.seed, restart);
    Ok(follow_with_trace(net, x, subset, &path, cfg, Some(&mut r), None)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathfollow::build_path;
    use crate::relunet::tests::random_net;
    use crate::relunet::DenseLayer;

    /// `|x0| + 2 x1` for `x1 > -10`.
    fn fold_net() -> MlpNetwork {
        MlpNetwork::new(vec![
            DenseLayer::new(
                Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]),
                vec![0.0, 0.0, 10.0],
            )
            .unwrap(),
            DenseLayer::new(Matrix::from_rows(&[[1.0, 1.0, 2.0]]), vec![-20.0]).unwrap(),
        ])
        .unwrap()
    }

    fn normal(r: &mut rng::Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.sample(StandardNormal)).collect()
    }

    #[test]
    fn linear_net_one_step() {
        let net = MlpNetwork::new(vec![DenseLayer::new(
            Matrix::from_rows(&[[2.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 3.0]]),
            vec![0.5, -1.0, 0.0],
        )
        .unwrap()])
        .unwrap();
        let x = [0.0, 0.0, 0.0];
        let y = [1.0, -2.0, 0.5];
        let cfg = AttackConfig::default();
        let r = follow_basic(&net, &x, &y, &InputSubset::all(3), &cfg).unwrap();
        assert!(r.success);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.hamming, 3);
        for (a, b) in r.z.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn basic_reflects_and_improved_resolves() {
        let net = fold_net();
        let x = [-0.5, 0.0];
        let y = [-0.5, -1.0];
        let cfg = AttackConfig::default();
        let b = follow_basic(&net, &x, &y, &InputSubset::new(vec![0], 2).unwrap(), &cfg).unwrap();
        assert!(!b.success);
        assert_eq!(b.failure_kind, Some(FailureKind::Reflection));
        // the frozen coordinate never moves, even on failure
        assert_eq!(b.z[1].to_bits(), x[1].to_bits());

        let i = follow_improved(&net, &x, &y, &InputSubset::all(2), &cfg, 0).unwrap();
        assert!(i.success, "{i:?}");
        assert!((i.final_output[0] - net.forward(&y).unwrap()[0]).abs() <= 1e-6 * 2.5);
    }

    #[test]
    fn identical_endpoints_are_trivial() {
        let net = random_net(1, &[5, 4, 2]);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let r = follow_basic(
            &net,
            &x,
            &x,
            &InputSubset::new(vec![0, 1], 5).unwrap(),
            &AttackConfig::default(),
        )
        .unwrap();
        assert!(r.success);
        assert_eq!((r.hamming, r.iterations), (0, 0));
        assert_eq!(r.z, x.to_vec());
    }

    #[test]
    fn square_subset_needs_no_randomness() {
        let mut g = rng::seeded(3);
        for seed in 0..20 {
            let net = random_net(100 + seed, &[8, 12, 3]);
            let x = normal(&mut g, 8);
            let y = normal(&mut g, 8);
            let subset = InputSubset::new(vec![1, 4, 6], 8).unwrap();
            let cfg = AttackConfig {
                delta: 0,
                ..AttackConfig::default()
            };
            let path = build_path(&net, &x, &y).unwrap();
            let plain = follow_with_trace(&net, &x, &subset, &path, &cfg, None, None).unwrap();
            let mut r = rng::seeded(seed);
            let seeded =
                follow_with_trace(&net, &x, &subset, &path, &cfg, Some(&mut r), None).unwrap();
            assert_eq!(plain, seeded);
            assert_eq!(follow_basic(&net, &x, &y, &subset, &cfg).unwrap(), plain.0);
        }
    }

    #[test]
    fn runs_reproduce_and_respect_invariants() {
        let mut g = rng::seeded(4);
        let mut successes = 0;
        for seed in 0..30 {
            let net = random_net(200 + seed, &[20, 16, 3]);
            let x = normal(&mut g, 20);
            let y = normal(&mut g, 20);
            let subset = InputSubset::new(vec![0, 5, 11, 17], 20).unwrap();
            let cfg = AttackConfig {
                seed,
                ..AttackConfig::default()
            };
            let path = build_path(&net, &x, &y).unwrap();
            let mut r1 = rng::stream(seed, 3);
            let (res, trace) =
                follow_with_trace(&net, &x, &subset, &path, &cfg, Some(&mut r1), None).unwrap();
            let mut r2 = rng::stream(seed, 3);
            let again =
                follow_with_trace(&net, &x, &subset, &path, &cfg, Some(&mut r2), None).unwrap();
            assert_eq!((&res, &trace), (&again.0, &again.1));
            assert_eq!(
                res,
                follow_improved(&net, &x, &y, &subset, &cfg, 3).unwrap()
            );

            for (i, (a, b)) in x.iter().zip(&res.z).enumerate() {
                if !subset.indices().contains(&i) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            assert!(res.hamming <= 4);
            assert_eq!(res.final_output, net.forward(&res.z).unwrap());
            assert!(res.length_ratio.is_finite());
            let eps = 1e-9 * path.arc_length();
            let mut last = 0.0;
            for s in &trace.steps {
                assert!(
                    path.distance(&s.output) <= 1e-6,
                    "seed {seed}: {}",
                    path.distance(&s.output)
                );
                if matches!(s.event, TraceEvent::BoundaryCrossed(_)) && s.progress < res.progress {
                    assert!(s.progress >= last + eps);
                }
                last = s.progress;
            }
            if res.success {
                successes += 1;
                let target = net.forward(&y).unwrap();
                assert!(norm_inf(&sub(&res.final_output, &target)) <= default_eps_target(&target));
            }
        }
        assert!(successes > 0);
    }

    #[test]
    fn rejects_bad_tolerances() {
        let net = fold_net();
        let cfg = AttackConfig {
            epsilon_target: Some(0.0),
            ..AttackConfig::default()
        };
        let err = follow_improved(
            &net,
            &[-0.5, 0.0],
            &[1.0, 1.0],
            &InputSubset::all(2),
            &cfg,
            0,
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }
}
