//! Seeded k-means over 3D points (k-means++ init, Lloyd iterations).

use crate::geom::Vec3;
use crate::rng::{stream_rng, Rng};
use rand::RngExt;

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-9;

/// Cluster centers for `k` clusters. Deterministic for a fixed seed; empty
/// clusters keep their previous center, so duplicate centers are possible
/// on degenerate inputs.
pub fn kmeans(points: &[Vec3], k: usize, seed: u64) -> Vec<Vec3> {
    assert!(k >= 1 && points.len() >= k, "need at least k points");
    let mut rng = stream_rng(seed, 0);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assign = vec![0usize; points.len()];
    for _ in 0..MAX_ITER {
        for (i, p) in points.iter().enumerate() {
            assign[i] = nearest_center(*p, &centers).0;
        }
        let mut sums = vec![Vec3::ZERO; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assign[i]] = sums[assign[i]] + *p;
            counts[assign[i]] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] > 0 {
                let next = sums[c] / counts[c] as f64;
                shift = shift.max((next - centers[c]).norm());
                centers[c] = next;
            }
        }
        if shift < TOL {
            break;
        }
    }
    centers
}

/// Sum of squared distances to the nearest center.
pub fn objective(points: &[Vec3], centers: &[Vec3]) -> f64 {
    points.iter().map(|p| nearest_center(*p, centers).1).sum()
}

fn nearest_center(p: Vec3, centers: &[Vec3]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = (p - *center).norm_sq();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn plus_plus_init(points: &[Vec3], k: usize, rng: &mut Rng) -> Vec<Vec3> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    while centers.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest_center(*p, &centers).1).collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // All points coincide with existing centers.
            centers.push(points[rng.random_range(0..points.len())]);
            continue;
        }
        let mut pick = rng.random_range(0.0..total);
        let mut chosen = points.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            if pick < *w {
                chosen = i;
                break;
            }
            pick -= w;
        }
        centers.push(points[chosen]);
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal;

    fn two_blobs(n: usize, seed: u64) -> (Vec<Vec3>, Vec3, Vec3) {
        let a = Vec3::new(1.0, 0.0, 0.0);
        let b = Vec3::new(-1.0, 0.5, 0.2);
        let mut rng = stream_rng(seed, 0);
        let mut pts = Vec::new();
        for i in 0..n {
            let c = if i % 2 == 0 { a } else { b };
            pts.push(c + Vec3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * 0.05);
        }
        (pts, a, b)
    }

    #[test]
    fn recovers_two_separated_blobs() {
        let (pts, a, b) = two_blobs(400, 7);
        let centers = kmeans(&pts, 2, 42);
        let (da, db) = (
            centers.iter().map(|c| (*c - a).norm()).fold(f64::INFINITY, f64::min),
            centers.iter().map(|c| (*c - b).norm()).fold(f64::INFINITY, f64::min),
        );
        assert!(da < 0.02 && db < 0.02, "centers {centers:?}");
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (pts, _, _) = two_blobs(200, 8);
        assert_eq!(kmeans(&pts, 2, 5), kmeans(&pts, 2, 5));
    }

    #[test]
    fn objective_not_worse_than_init() {
        let (pts, _, _) = two_blobs(300, 9);
        let mut rng = stream_rng(3, 0);
        let init = plus_plus_init(&pts, 2, &mut rng);
        let final_centers = kmeans(&pts, 2, 3);
        assert!(objective(&pts, &final_centers) <= objective(&pts, &init) + 1e-12);
    }

    #[test]
    fn degenerate_identical_points_allowed() {
        let pts = vec![Vec3::new(0.3, 0.3, 0.3); 50];
        let centers = kmeans(&pts, 2, 11);
        assert_eq!(centers.len(), 2);
        for c in centers {
            assert!((c - Vec3::new(0.3, 0.3, 0.3)).norm() < 1e-12);
        }
    }
}
