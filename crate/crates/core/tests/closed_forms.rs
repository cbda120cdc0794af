mod common;

use bfa_core::analysis::{distance_study, first_step_direction, DirectionSource, ModelPair, SearchConfig};
use bfa_core::attack::{i_fgsm, sign};
use bfa_core::boundary::{boundary_distance, linf_unit, sample_boundary_point, DirectionKind};
use bfa_core::{AttackConfig, BoundaryConfig, LabeledPoint, ModelParams, Stream};
use common::random_point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Binary affine model with margin `w . x + b` (class 1 wins when positive).
fn affine(w: &[f64], b: f64) -> ModelParams {
    ModelParams::linear(vec![vec![0.0; w.len()], w.to_vec()], vec![0.0, b]).unwrap()
}

fn margin(w: &[f64], b: f64, x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b
}

fn random_affine(rng: &mut ChaCha8Rng, dim: usize) -> (Vec<f64>, f64) {
    let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b = rng.random_range(-1.0..1.0);
    (w, b)
}

#[test]
fn distance_along_direction_matches_affine_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (cap, tol) = (4.0, 1e-4);
    let mut uncensored = 0;
    for _ in 0..1000 {
        let dim = rng.random_range(2..9);
        let (w, b) = random_affine(&mut rng, dim);
        let model = affine(&w, b);
        let x = random_point(&mut rng, dim);
        let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = linf_unit(&d).unwrap();
        let m = boundary_distance(&model, &x, &d, cap, tol, DirectionKind::Natural).unwrap();
        let f = margin(&w, b, &x);
        let slope = margin(&w, 0.0, &u);
        let root = -f / slope;
        if root > 0.0 && root <= cap {
            uncensored += 1;
            assert!(!m.censored);
            assert!(m.distance >= root - 1e-12 && m.distance - root <= tol, "distance {} root {root}", m.distance);
            assert!(m.distance - m.inside <= tol);
        } else {
            assert!(m.censored, "root {root} should be censored");
            assert_eq!(m.distance, cap);
        }
    }
    assert!(uncensored > 300);
}

#[test]
fn shrink_count_is_the_first_exponent_back_in_the_source_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut fallbacks = 0;
    for case in 0..1000u64 {
        let dim = rng.random_range(2..6);
        let (w, b) = random_affine(&mut rng, dim);
        let model = affine(&w, b);
        let x = random_point(&mut rng, dim);
        let source = model.predict(&x).unwrap();
        let cfg = BoundaryConfig { sigma: 0.3, gamma: rng.random_range(0.2..0.9), ..BoundaryConfig::default() };
        let s = sample_boundary_point(&model, &x, source, source, &cfg, Stream::new(case)).unwrap();
        let in_source = |t: u32| {
            let f = margin(&w, b, &x) + cfg.gamma.powi(t as i32) * margin(&w, 0.0, &s.direction);
            (f > 0.0) == (source == 1)
        };
        match (0..=cfg.t_max).find(|&t| in_source(t)) {
            Some(t) => {
                assert!(!s.fell_back);
                assert_eq!(s.shrink_count, t);
            }
            None => {
                fallbacks += 1;
                assert!(s.fell_back);
                assert_eq!(s.point, x);
            }
        }
    }
    assert!(fallbacks < 1000);
}

#[test]
fn binary_linear_one_step_attack_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let (w, b) = random_affine(&mut rng, 5);
        let model = affine(&w, b);
        let x = random_point(&mut rng, 5);
        let y = rng.random_range(0..2);
        let cfg = AttackConfig { iterations: 1, ..AttackConfig::new(0.1) };
        let out = i_fgsm(&model, &x, y, &cfg).unwrap();
        // d loss / dx = (p1 - [y = 1]) w for logits (0, w . x + b).
        let p1 = 1.0 / (1.0 + (-margin(&w, b, &x)).exp());
        let coef = p1 - if y == 1 { 1.0 } else { 0.0 };
        for k in 0..5 {
            let want = (x[k] + 0.1 * sign(coef * w[k])).clamp(x[k] - 0.1, x[k] + 0.1).clamp(0.0, 1.0);
            assert!((out.adversarial[k] - want).abs() <= 1e-15);
        }
    }
}

#[test]
fn distance_table_on_linear_victim_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (w, b) = ([1.5, -0.75, 0.5], -0.2);
    let victim = affine(&w, b);
    let (sw, sb) = random_affine(&mut rng, 3);
    let substitute = affine(&sw, sb);
    let inputs: Vec<LabeledPoint> = (0..80)
        .map(|_| {
            let x = random_point(&mut rng, 3);
            let y = victim.predict(&x).unwrap();
            LabeledPoint::new(x, y).unwrap()
        })
        .collect();
    let pair = ModelPair::new("linear", substitute.clone(), victim).unwrap();
    let cfg = BoundaryConfig::default();
    let search = SearchConfig::default();
    let directions = [DirectionSource::Gradient, DirectionSource::BoundaryGradient, DirectionSource::RandomSign];
    let table = distance_study(std::slice::from_ref(&pair), &inputs, &directions, &cfg, &search, 8).unwrap();
    table.check_invariants().unwrap();
    let mut compared = 0;
    for (di, source) in directions.into_iter().enumerate() {
        let row = table.row(source.name(), "linear").unwrap();
        for (i, p) in inputs.iter().enumerate() {
            let Some(got) = row.per_input[i] else { continue };
            // Boundary directions share child 0; random signs get their own child.
            let child = if source == DirectionSource::RandomSign { 1000 + di as u64 } else { 0 };
            let stream = Stream::new(8).path(&[0, i as u64]).child(child);
            let dir = first_step_direction(&substitute, p, source, &cfg, stream).unwrap();
            let root = -margin(&w, b, &p.x) / margin(&w, 0.0, &linf_unit(&dir).unwrap());
            assert!(got >= root - 1e-12 && got - root <= search.tol, "{}: {got} vs {root}", source.name());
            compared += 1;
        }
    }
    assert!(compared > 50);
}
