//! Full-covariance RGB Gaussian mixture used by GrabCut.

use rand::Rng;

pub type Color = [f64; 3];
type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Color,
    pub covariance: Mat3,
    inverse: Mat3,
    log_norm: f64,
}

impl GaussianComponent {
    /// `ln N(x | mean, cov)`.
    pub fn log_density(&self, x: &Color) -> f64 {
        let d = [
            x[0] - self.mean[0],
            x[1] - self.mean[1],
            x[2] - self.mean[2],
        ];
        let mut q = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                q += d[r] * self.inverse[r][c] * d[c];
            }
        }
        self.log_norm - 0.5 * q
    }
}

/// Mixture over the non-empty components; weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmColorModel {
    components: Vec<GaussianComponent>,
}

impl GmmColorModel {
    /// Maximum-likelihood fit given a hard component assignment per sample.
    /// Components that received no samples are dropped.
    pub fn fit(samples: &[Color], assignment: &[usize], k: usize, regularization: f64) -> Self {
        let mut count = vec![0usize; k];
        let mut sum = vec![[0.0; 3]; k];
        let mut prod = vec![[[0.0; 3]; 3]; k];
        for (x, &a) in samples.iter().zip(assignment) {
            count[a] += 1;
            for r in 0..3 {
                sum[a][r] += x[r];
                for c in 0..3 {
                    prod[a][r][c] += x[r] * x[c];
                }
            }
        }
        let total = samples.len().max(1) as f64;
        let components = (0..k)
            .filter(|&j| count[j] > 0)
            .map(|j| {
                let n = count[j] as f64;
                let mean = [sum[j][0] / n, sum[j][1] / n, sum[j][2] / n];
                let mut cov = [[0.0; 3]; 3];
                for r in 0..3 {
                    for c in 0..3 {
                        cov[r][c] = prod[j][r][c] / n - mean[r] * mean[c];
                    }
                }
                component(count[j] as f64 / total, mean, cov, regularization)
            })
            .collect();
        Self { components }
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Index of the component with the largest weighted density at `x`.
    pub fn most_likely(&self, x: &Color) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, c) in self.components.iter().enumerate() {
            let s = c.weight.ln() + c.log_density(x);
            if s > best.1 {
                best = (j, s);
            }
        }
        best.0
    }

    /// `-ln Σ_j w_j N(x | μ_j, Σ_j)`, evaluated with log-sum-exp.
    pub fn neg_log_likelihood(&self, x: &Color) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_density(x))
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return f64::INFINITY;
        }
        -(m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln())
    }
}

fn component(weight: f64, mean: Color, cov: Mat3, regularization: f64) -> GaussianComponent {
    // symmetrize, then bump the diagonal until the determinant is safely positive
    let mut reg = regularization;
    loop {
        let mut c = cov;
        for r in 0..3 {
            for s in r + 1..3 {
                let v = 0.5 * (c[r][s] + c[s][r]);
                c[r][s] = v;
                c[s][r] = v;
            }
            c[r][r] += reg;
        }
        let det = det3(&c);
        if det > 0.0 && det.is_finite() && c.iter().enumerate().all(|(i, row)| row[i] > 0.0) {
            let inverse = inv3(&c, det);
            let log_norm = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + det.ln());
            return GaussianComponent {
                weight,
                mean,
                covariance: c,
                inverse,
                log_norm,
            };
        }
        reg = if reg > 0.0 { reg * 10.0 } else { 1e-9 };
    }
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &Mat3, det: f64) -> Mat3 {
    let mut inv = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            // cofactor of (c, r)
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            inv[r][c] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    inv
}

fn dist2(a: &Color, b: &Color) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// k-means++ seeding followed by Lloyd iterations; returns a component index per sample.
pub fn kmeans_assign<R: Rng>(
    samples: &[Color],
    k: usize,
    iterations: usize,
    rng: &mut R,
) -> Vec<usize> {
    if samples.is_empty() || k == 0 {
        return vec![0; samples.len()];
    }
    let mut centers: Vec<Color> = vec![samples[rng.random_range(0..samples.len())]];
    let mut nearest: Vec<f64> = samples.iter().map(|s| dist2(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = samples.len() - 1;
        for (i, &d) in nearest.iter().enumerate() {
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = samples[pick];
        centers.push(c);
        for (n, s) in nearest.iter_mut().zip(samples) {
            *n = n.min(dist2(s, &c));
        }
    }

    let mut assignment = vec![0usize; samples.len()];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for (a, s) in assignment.iter_mut().zip(samples) {
            let best = (0..centers.len())
                .min_by(|&i, &j| dist2(s, &centers[i]).total_cmp(&dist2(s, &centers[j])))
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        let mut sum = vec![[0.0; 3]; centers.len()];
        let mut count = vec![0usize; centers.len()];
        for (s, &a) in samples.iter().zip(&assignment) {
            count[a] += 1;
            for r in 0..3 {
                sum[a][r] += s[r];
            }
        }
        for (j, c) in centers.iter_mut().enumerate() {
            if count[j] > 0 {
                let n = count[j] as f64;
                *c = [sum[j][0] / n, sum[j][1] / n, sum[j][2] / n];
            }
        }
        if !changed {
            break;
        }
    }
    assignment
}
