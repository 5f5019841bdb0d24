//! Agglomerative clustering via the nearest-neighbour chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Linkage {
    Ward,
    Average,
    Complete,
    Single,
}

/// One dendrogram step: the clusters holding points `a` and `b` joined at `distance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Labels numbered by first appearance in input order.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

impl Clustering {
    /// Nearest centroid; ties go to the lower label.
    pub fn assign(&self, point: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (c, cen) in self.centroids.iter().enumerate() {
            let d = sq_dist(point, cen);
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.n * i - i * (i + 1) / 2 + (j - i - 1)
    }
    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

fn check(points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(0, |p| p.len());
    if points.is_empty() || dim == 0 {
        return Err(Error::InsufficientData(
            "clustering needs at least one point".into(),
        ));
    }
    if points
        .iter()
        .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid(
            "points must share one dimension and be finite",
        ));
    }
    Ok(())
}

/// Full merge sequence sorted by distance (stable on discovery order).
pub fn linkage(points: &[Vec<f64>], method: Linkage) -> Result<Vec<Merge>> {
    check(points)?;
    let n = points.len();
    let mut dist = Condensed {
        n,
        d: Vec::with_capacity(n * n.saturating_sub(1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            let d2 = sq_dist(&points[i], &points[j]);
            dist.d.push(if method == Linkage::Ward {
                d2
            } else {
                d2.sqrt()
            });
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::new();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster"));
        }
        let (a, b) = loop {
            let a = *chain.last().expect("non-empty chain");
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let mut best = (usize::MAX, f64::INFINITY);
            for k in (0..n).filter(|&k| active[k] && k != a) {
                let d = dist.get(a, k);
                if d < best.1 {
                    best = (k, d);
                }
            }
            if let Some(p) = prev {
                if dist.get(a, p) <= best.1 {
                    best = (p, dist.get(a, p));
                }
            }
            if Some(best.0) == prev {
                chain.truncate(chain.len() - 2);
                break (a, best.0);
            }
            chain.push(best.0);
        };
        let dab = dist.get(a, b);
        let (keep, gone) = (a.min(b), a.max(b));
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
            let (dak, dbk) = (dist.get(a, k), dist.get(b, k));
            let nk = size[k] as f64;
            let v = match method {
                Linkage::Ward => ((na + nk) * dak + (nb + nk) * dbk - nk * dab) / (na + nb + nk),
                Linkage::Average => (na * dak + nb * dbk) / (na + nb),
                Linkage::Complete => dak.max(dbk),
                Linkage::Single => dak.min(dbk),
            };
            dist.set(keep, k, v);
        }
        active[gone] = false;
        size[keep] += size[gone];
        merges.push(Merge {
            a: keep,
            b: gone,
            distance: if method == Linkage::Ward {
                dab.max(0.0).sqrt()
            } else {
                dab
            },
            size: size[keep],
        });
    }
    merges.sort_by(|x, y| x.distance.total_cmp(&y.distance));
    Ok(merges)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Cuts the dendrogram to `k` clusters.
pub fn agglomerative(points: &[Vec<f64>], k: usize, method: Linkage) -> Result<Clustering> {
    check(points)?;
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    let merges = linkage(points, method)?;
    let mut parent: Vec<usize> = (0..n).collect();
    for m in &merges[..n - k] {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut next = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        labels.push(label_of_root[r]);
    }
    let dim = points[0].len();
    let mut centroids = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(&labels) {
        counts[l] += 1;
        for (c, v) in centroids[l].iter_mut().zip(p) {
            *c += v;
        }
    }
    for (c, &m) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= m as f64);
    }
    Ok(Clustering {
        k,
        labels,
        centroids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn ward_one_dimensional_merge_order() {
        // Pairs (0,1) at 1, (3,4) at 2, then the singleton 2 joins {0,1}.
        let m = linkage(&pts(&[0.0, 1.0, 5.0, 9.0, 11.0]), Linkage::Ward).unwrap();
        assert_eq!((m[0].a, m[0].b), (0, 1));
        assert!((m[0].distance - 1.0).abs() < 1e-12);
        assert_eq!((m[1].a, m[1].b), (3, 4));
        assert!((m[1].distance - 2.0).abs() < 1e-12);
        // sqrt(2 n_a n_b / (n_a + n_b)) · |centroid gap|: 5 vs 0.5 beats 5 vs 10.
        assert_eq!((m[2].a, m[2].b), (0, 2));
        assert!((m[2].distance - (2.0 * 2.0 / 3.0 * 4.5f64 * 4.5).sqrt()).abs() < 1e-9);
        assert!(
            (m[3].distance - (2.0 * 3.0 * 2.0 / 5.0 * (10.0f64 - 2.0).powi(2)).sqrt()).abs() < 1e-9
        );
        assert_eq!(m.len(), 4);
    }

    #[test]
    fn extreme_cuts() {
        let p = pts(&[3.0, 1.0, 2.0]);
        let one = agglomerative(&p, 1, Linkage::Ward).unwrap();
        assert_eq!(one.labels, vec![0, 0, 0]);
        assert!((one.centroids[0][0] - 2.0).abs() < 1e-12);
        let all = agglomerative(&p, 3, Linkage::Ward).unwrap();
        assert_eq!(all.labels, vec![0, 1, 2]);
        assert_eq!(all.centroids, p);
        assert!(agglomerative(&p, 4, Linkage::Ward).is_err());
    }

    #[test]
    fn separated_blobs() {
        let mut p = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.05;
            p.push(vec![t, 1.0 - t]);
            p.push(vec![10.0 + t, 10.0 - t]);
        }
        for method in [
            Linkage::Ward,
            Linkage::Average,
            Linkage::Complete,
            Linkage::Single,
        ] {
            let c = agglomerative(&p, 2, method).unwrap();
            for (i, l) in c.labels.iter().enumerate() {
                assert_eq!(*l, i % 2);
            }
            assert_eq!(c.assign(&[0.2, 0.3]), 0);
            assert_eq!(c.assign(&[9.0, 9.0]), 1);
        }
    }
}
