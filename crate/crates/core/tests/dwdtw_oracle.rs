mod common;

use common::{point, trajectory};
use poi_rag::reranker::{decay_weights, dwdtw_weighted, rerank, GdrConfig, MEAN_EARTH_RADIUS_KM};
use poi_rag::retriever::RetrievalResult;
use poi_rag::{ContextExample, GeoPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central angle via the atan2 (Vincenty) form, independent of the
/// haversine code under test.
fn great_circle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
    let dl = (b.lon() - a.lon()).to_radians();
    let y = ((p2.cos() * dl.sin()).powi(2)
        + (p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos()).powi(2))
    .sqrt();
    let x = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    MEAN_EARTH_RADIUS_KM * y.atan2(x)
}

/// Minimum over every monotone warping path from (0, 0) to the far corner.
fn exhaustive(q: &[GeoPoint], c: &[GeoPoint], w: &[f64]) -> f64 {
    fn walk(
        i: usize,
        j: usize,
        acc: f64,
        q: &[GeoPoint],
        c: &[GeoPoint],
        w: &[f64],
        best: &mut f64,
    ) {
        let acc = acc + w[i] * great_circle_km(q[i], c[j]);
        if i == q.len() - 1 && j == c.len() - 1 {
            *best = best.min(acc);
            return;
        }
        if i + 1 < q.len() && j + 1 < c.len() {
            walk(i + 1, j + 1, acc, q, c, w, best);
        }
        if i + 1 < q.len() {
            walk(i + 1, j, acc, q, c, w, best);
        }
        if j + 1 < c.len() {
            walk(i, j + 1, acc, q, c, w, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, 0.0, q, c, w, &mut best);
    best
}

fn palette() -> [GeoPoint; 5] {
    [
        point(40.7128, -74.0060),
        point(40.7306, -73.9352),
        point(40.6782, -73.9442),
        point(40.7831, -73.9712),
        point(40.5795, -74.1502),
    ]
}

fn random_seq(rng: &mut ChaCha8Rng, pts: &[GeoPoint]) -> Vec<GeoPoint> {
    let n = rng.gen_range(1..=6);
    (0..n).map(|_| pts[rng.gen_range(0..pts.len())]).collect()
}

fn assert_rel(a: f64, b: f64) {
    let scale = a.abs().max(b.abs()).max(1e-300);
    assert!(
        (a - b).abs() / scale <= 1e-9 || (a - b).abs() < 1e-12,
        "{a} vs {b}"
    );
}

#[test]
fn dp_matches_path_enumeration() {
    let pts = palette();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..600 {
        let q = random_seq(&mut rng, &pts);
        let c = random_seq(&mut rng, &pts);
        let rho = rng.gen_range(0.05..0.99);
        let w = decay_weights(q.len(), rho);
        let dp = dwdtw_weighted(&q, &c, &w, MEAN_EARTH_RADIUS_KM).unwrap();
        assert_rel(dp.cost, exhaustive(&q, &c, &w));
        assert!(dp.path_length >= q.len().max(c.len()));
        assert!(dp.path_length < q.len() + c.len());
    }
}

#[test]
fn rerank_orders_by_oracle_cost() {
    let pts = palette();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let names = ["a", "b", "c", "d", "e"];
    let to_traj = |user: &str, seq: &[usize]| {
        let steps: Vec<(&str, GeoPoint)> = seq.iter().map(|&i| (names[i], pts[i])).collect();
        trajectory(user, &steps)
    };
    let q_idx: Vec<usize> = (0..5).map(|_| rng.gen_range(0..5)).collect();
    let q = to_traj("q", &q_idx);
    let entries: Vec<ContextExample> = (0..10)
        .map(|i| {
            let len = rng.gen_range(1..=6);
            let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(0..5)).collect();
            ContextExample {
                index: i,
                trajectory: to_traj(&format!("u{i}"), &seq),
                similarity: 1.0 - i as f64 * 0.05,
                dwdtw_cost: None,
            }
        })
        .collect();

    let cfg = GdrConfig::default();
    let w = decay_weights(q.len(), cfg.rho);
    let mut expected: Vec<(f64, usize)> = entries
        .iter()
        .map(|e| (exhaustive(&q.points(), &e.trajectory.points(), &w), e.index))
        .collect();
    expected.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let out = rerank(&q, RetrievalResult { entries }, &cfg).unwrap();
    for (got, (cost, idx)) in out.entries.iter().zip(&expected) {
        assert_rel(got.dwdtw_cost.unwrap(), *cost);
        if got.index != *idx {
            // only acceptable when the two costs coincide numerically
            let other = expected.iter().find(|e| e.1 == got.index).unwrap().0;
            assert_rel(other, *cost);
        }
    }
}

#[test]
fn alignment_with_itself_is_free() {
    let pts = palette();
    let w = decay_weights(5, 0.8);
    let a = dwdtw_weighted(&pts, &pts, &w, MEAN_EARTH_RADIUS_KM).unwrap();
    assert_eq!(a.cost, 0.0);
    assert_eq!(a.path_length, 5);
}
