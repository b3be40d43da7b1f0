//! Spherical K-means codebook used to turn viewpoint regression into
//! K-way classification.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Vec3;
use crate::error::{Error, Result};
use crate::text;

const MAX_ITERS: usize = 100;

/// K unit centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<Vec3>,
}

impl Codebook {
    pub fn new(centroids: Vec<Vec3>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::invalid("codebook", "no centroids"));
        }
        if let Some(i) = centroids.iter().position(|c| !c.is_unit(1e-9)) {
            return Err(Error::invalid("codebook", format!("centroid {i} is not unit")));
        }
        for i in 0..centroids.len() {
            for j in 0..i {
                if centroids[i].dist_sq(centroids[j]).sqrt() <= 1e-9 {
                    return Err(Error::invalid(
                        "codebook",
                        format!("centroids {j} and {i} coincide"),
                    ));
                }
            }
        }
        Ok(Self { centroids })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroids(&self) -> &[Vec3] {
        &self.centroids
    }

    pub fn centroid(&self, class: usize) -> Vec3 {
        self.centroids[class]
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn quantize(&self, point: Vec3) -> usize {
        nearest(&self.centroids, point).0
    }

    /// Sum of squared chord distances from each point to its nearest centroid.
    pub fn inertia(&self, points: &[Vec3]) -> f64 {
        points.iter().map(|&p| nearest(&self.centroids, p).1).sum()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ctx = path.display().to_string();
        let recs = text::read_records(path)?;
        let Some((line, head)) = recs.first() else {
            return Err(Error::parse(&ctx, 0, "empty codebook"));
        };
        let k: Vec<usize> = text::parse_tokens(&ctx, *line, head, Some(1))?;
        if recs.len() - 1 != k[0] {
            return Err(Error::parse(
                &ctx,
                *line,
                format!("header says {} centroids, found {}", k[0], recs.len() - 1),
            ));
        }
        let mut centroids = Vec::with_capacity(k[0]);
        for (line, tokens) in &recs[1..] {
            let v: Vec<f64> = text::parse_tokens(&ctx, *line, tokens, Some(3))?;
            centroids.push(Vec3::new(v[0], v[1], v[2]));
        }
        Self::new(centroids)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.len());
        for c in &self.centroids {
            let _ = writeln!(out, "{} {} {}", c.x, c.y, c.z);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        text::write_file(path.as_ref(), &self.to_text())
    }
}

fn nearest(centroids: &[Vec3], p: Vec3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = p.dist_sq(*c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Fits a K-centroid codebook with k-means++ seeding followed by Lloyd
/// iterations whose centroids are projected back to the sphere.
pub fn kmeans_fit(points: &[Vec3], k: usize, seed: u64) -> Result<Codebook> {
    kmeans_fit_traced(points, k, seed).map(|(cb, _)| cb)
}

/// Like [`kmeans_fit`] but also returns the inertia after seeding and after
/// every Lloyd iteration.
pub fn kmeans_fit_traced(points: &[Vec3], k: usize, seed: u64) -> Result<(Codebook, Vec<f64>)> {
    if points.is_empty() {
        return Err(Error::invalid("points", "no points to cluster"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "K must be positive"));
    }
    if points.len() < k {
        return Err(Error::invalid(
            "k",
            format!("K = {k} exceeds the number of points {}", points.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].normalized());
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist_sq(centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(
                "k",
                format!("only {} distinct points for K = {k}", centroids.len()),
            ));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick].normalized();
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(p.dist_sq(c));
        }
    }

    let mut history = Vec::new();
    let mut labels: Vec<usize> = points.iter().map(|&p| nearest(&centroids, p).0).collect();
    history.push(labels.iter().zip(points).map(|(&l, p)| p.dist_sq(centroids[l])).sum());
    for _ in 0..MAX_ITERS {
        let mut sums = vec![Vec3::default(); k];
        for (&l, &p) in labels.iter().zip(points) {
            sums[l] = sums[l] + p;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            // empty or cancelling clusters keep their centroid
            if s.norm() > 1e-12 {
                *c = s.normalized();
            }
        }
        let next: Vec<usize> = points.iter().map(|&p| nearest(&centroids, p).0).collect();
        history.push(next.iter().zip(points).map(|(&l, p)| p.dist_sq(centroids[l])).sum());
        let stable = next == labels;
        labels = next;
        if stable {
            break;
        }
    }
    Ok((Codebook::new(centroids)?, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalized()
            })
            .collect()
    }

    #[test]
    fn k_equal_distinct_points_gives_zero_inertia() {
        let pts = cloud(12, 1);
        let mut with_dups = pts.clone();
        with_dups.extend_from_slice(&pts[..4]);
        let cb = kmeans_fit(&with_dups, 12, 5).unwrap();
        assert!(cb.inertia(&with_dups) < 1e-20);
        for p in &pts {
            assert!(cb.centroids().iter().any(|c| c.dist_sq(*p) < 1e-20));
        }
    }

    #[test]
    fn single_cluster_is_normalized_mean() {
        let pts: Vec<Vec3> = cloud(50, 2)
            .into_iter()
            .map(|p| (p * 0.3 + Vec3::new(1.0, 0.0, 0.0)).normalized())
            .collect();
        let cb = kmeans_fit(&pts, 1, 9).unwrap();
        let mut mean = Vec3::default();
        for p in &pts {
            mean = mean + *p;
        }
        let expected = mean.normalized();
        assert!(cb.centroid(0).dist_sq(expected) < 1e-24);
    }

    #[test]
    fn fit_is_deterministic() {
        let pts = cloud(200, 3);
        let a = kmeans_fit(&pts, 8, 42).unwrap();
        let b = kmeans_fit(&pts, 8, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..5 {
            let pts = cloud(300, seed);
            let (_, hist) = kmeans_fit_traced(&pts, 10, seed).unwrap();
            for w in hist.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{hist:?}");
            }
        }
    }

    #[test]
    fn errors() {
        assert!(kmeans_fit(&[], 1, 0).is_err());
        assert!(kmeans_fit(&cloud(3, 0), 0, 0).is_err());
        let same = vec![Vec3::new(1.0, 0.0, 0.0); 4];
        assert!(kmeans_fit(&same, 2, 0).is_err());
    }

    #[test]
    fn quantize_centroid_and_ties() {
        let cb = kmeans_fit(&cloud(100, 4), 10, 1).unwrap();
        for i in 0..cb.len() {
            assert_eq!(cb.quantize(cb.centroid(i)), i);
        }
        let cb2 = Codebook::new(
            (0..8)
                .map(|i| match i {
                    2 => Vec3::new(0.0, 1.0, 0.0),
                    7 => Vec3::new(0.0, -1.0, 0.0),
                    _ => Vec3::from_lat_lon_deg(-70.0 + i as f64, 180.0),
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(cb2.quantize(Vec3::new(1.0, 0.0, 0.0)), 2);
    }

    #[test]
    fn chord_and_arc_argmin_agree() {
        let cb = kmeans_fit(&cloud(100, 6), 16, 2).unwrap();
        for p in cloud(500, 7) {
            let arc = (0..cb.len())
                .min_by(|&a, &b| {
                    let da = p.dot(cb.centroid(a)).clamp(-1.0, 1.0).acos();
                    let db = p.dot(cb.centroid(b)).clamp(-1.0, 1.0).acos();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(cb.quantize(p), arc);
        }
    }

    #[test]
    fn codebook_file_round_trip() {
        let cb = kmeans_fit(&cloud(40, 8), 5, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codebook.txt");
        cb.save(&path).unwrap();
        assert_eq!(Codebook::load(&path).unwrap(), cb);
    }
}
