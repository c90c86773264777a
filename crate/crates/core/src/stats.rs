//! Summary statistics, the rank-sum test and small geometry helpers used by
//! the experiment harness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    /// The first sample tends to be larger.
    Greater,
    /// The first sample tends to be smaller.
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSum {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Mann-Whitney rank-sum test, normal approximation with tie and continuity
/// corrections.
pub fn rank_sum_test(a: &[f64], b: &[f64], alternative: Alternative) -> RankSum {
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let mut all: Vec<(f64, usize)> = a
        .iter()
        .map(|&x| (x, 0))
        .chain(b.iter().map(|&x| (x, 1)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut ranks = vec![0.0; n];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        ranks[i..j].iter_mut().for_each(|r| *r = avg);
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let r1: f64 = all
        .iter()
        .zip(&ranks)
        .filter(|((_, g), _)| *g == 0)
        .map(|(_, r)| r)
        .sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let nt = n1 + n2;
    let var = n1 * n2 / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    if !(var > 0.0) {
        return RankSum {
            u,
            z: 0.0,
            p_value: 1.0,
        };
    }
    let sd = var.sqrt();
    let normal = Normal::standard();
    let (z, p_value) = match alternative {
        Alternative::Greater => {
            let z = (u - mu - 0.5) / sd;
            (z, normal.sf(z))
        }
        Alternative::Less => {
            let z = (u - mu + 0.5) / sd;
            (z, normal.cdf(z))
        }
        Alternative::TwoSided => {
            let z = ((u - mu).abs() - 0.5).max(0.0) / sd;
            (z * (u - mu).signum(), (2.0 * normal.sf(z)).min(1.0))
        }
    };
    RankSum { u, z, p_value }
}

/// Convex hull (counter-clockwise, no collinear points) by monotone chain.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    twice.abs() / 2.0
}

pub fn hull_area(points: &[[f64; 2]]) -> f64 {
    polygon_area(&convex_hull(points))
}

/// Mean silhouette coefficient under Euclidean distance.
///
/// Points in singleton clusters contribute 0. Returns NaN with fewer than two clusters.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return f64::NAN;
    }
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let total: f64 = points
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            if sizes[l] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (&q, &m) in points.iter().zip(labels) {
                sums[m] += dist(p, q);
            }
            let a = sums[l] / (sizes[l] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != l && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .sum();
    total / points.len() as f64
}

/// Two-means on a 2D point set, initialized from the farthest pair along the
/// principal spread. Deterministic.
pub fn two_means(points: &[[f64; 2]]) -> Vec<usize> {
    if points.len() < 2 {
        return vec![0; points.len()];
    }
    let dist2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    // farthest point from the first, then farthest from that one
    let far = |from: [f64; 2]| {
        (0..points.len())
            .max_by(|&i, &j| dist2(points[i], from).total_cmp(&dist2(points[j], from)).then(j.cmp(&i)))
            .expect("nonempty")
    };
    let a = far(points[0]);
    let b = far(points[a]);
    let mut centers = [points[a], points[b]];
    let mut labels = vec![0; points.len()];
    for _ in 0..100 {
        let next: Vec<usize> = points
            .iter()
            .map(|&p| usize::from(dist2(p, centers[1]) < dist2(p, centers[0])))
            .collect();
        let changed = next != labels;
        labels = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<[f64; 2]> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| *p)
                .collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *center = [
                    members.iter().map(|p| p[0]).sum::<f64>() / n,
                    members.iter().map(|p| p[1]).sum::<f64>() / n,
                ];
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = mean(&lx);
    let my = mean(&ly);
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn moments() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), 5.0);
        assert_abs_diff_eq!(std_dev(&xs), (32.0f64 / 7.0).sqrt(), epsilon = 1e-12);
        assert_eq!(median(&xs), 4.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn rank_sum_separated_samples() {
        let a: Vec<f64> = (0..20).map(|i| 10.0 + i as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let r = rank_sum_test(&a, &b, Alternative::Greater);
        assert_eq!(r.u, 400.0);
        assert!(r.p_value < 1e-6);
        assert!(rank_sum_test(&a, &b, Alternative::Less).p_value > 0.999);
    }

    #[test]
    fn rank_sum_identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = rank_sum_test(&a, &a, Alternative::TwoSided);
        assert_eq!(r.u, 8.0);
        assert_eq!(r.p_value, 1.0);
        let c = [5.0; 4];
        assert_eq!(rank_sum_test(&c, &c, Alternative::Greater).p_value, 1.0);
    }

    #[test]
    fn rank_sum_matches_reference_values() {
        // p-values from scipy.stats.mannwhitneyu(method="asymptotic")
        let r = rank_sum_test(&[1.0, 2.0, 3.0, 6.0, 4.5], &[5.0, 7.0, 8.0, 9.0, 10.0], Alternative::Less);
        assert_eq!(r.u, 1.0);
        assert_abs_diff_eq!(r.p_value, 0.01078587397386046, epsilon = 1e-10);
        let r = rank_sum_test(
            &[1.0, 2.0, 2.0, 3.0, 6.0, 4.5],
            &[2.0, 5.0, 7.0, 8.0, 9.0, 10.0, 3.0],
            Alternative::TwoSided,
        );
        assert_eq!(r.u, 7.5);
        assert_abs_diff_eq!(r.p_value, 0.06147952877355991, epsilon = 1e-10);
    }

    #[test]
    fn hull_of_square_with_interior() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [0.5, 0.0]];
        let h = convex_hull(&pts);
        assert_eq!(h.len(), 4);
        assert_eq!(hull_area(&pts), 1.0);
        assert_eq!(hull_area(&pts[..2]), 0.0);
    }

    #[test]
    fn two_clusters() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push([10.0 + 0.01 * i as f64, 0.0]);
            pts.push([-10.0, 0.01 * i as f64]);
        }
        let labels = two_means(&pts);
        assert!(labels.chunks(2).all(|c| c[0] != c[1]));
        assert!(silhouette(&pts, &labels) > 0.99);
        assert!(silhouette(&pts, &vec![0; pts.len()]).is_nan());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert_abs_diff_eq!(log_log_slope(&xs, &ys), 1.5, epsilon = 1e-12);
    }
}
