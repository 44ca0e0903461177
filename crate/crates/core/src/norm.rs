//! Vector norms on the parameter space and sampling helpers for norm balls.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

/// Norm selector for parameter vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Sup,
    Euclidean,
    One,
}

impl Norm {
    pub fn of(self, x: &[f64]) -> f64 {
        match self {
            Norm::Sup => x.iter().fold(0.0, |m, v| m.max(v.abs())),
            Norm::Euclidean => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::One => x.iter().map(|v| v.abs()).sum(),
        }
    }

    pub fn dist(self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self {
            Norm::Sup => x
                .iter()
                .zip(y)
                .fold(0.0, |m, (a, b)| m.max((a - b).abs())),
            Norm::Euclidean => x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            Norm::One => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
        }
    }

    /// Norm of the all-ones vector in dimension `d`.
    pub fn kappa(self, d: usize) -> f64 {
        match self {
            Norm::Sup => 1.0,
            Norm::Euclidean => (d as f64).sqrt(),
            Norm::One => d as f64,
        }
    }

    /// Uniform draw from the closed ball `{x : |x| <= radius}`.
    pub fn sample_ball<R: Rng + ?Sized>(self, dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
        match self {
            Norm::Sup => (0..dim)
                .map(|_| radius * (2.0 * rng.random::<f64>() - 1.0))
                .collect(),
            Norm::Euclidean => {
                let mut g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let n = Norm::Euclidean.of(&g).max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
                g.iter_mut().for_each(|v| *v *= r / n);
                g
            }
            Norm::One => {
                // Exponential spacings give a uniform point of the simplex; the
                // extra coordinate absorbs the slack to fill the interior.
                let e: Vec<f64> = (0..=dim).map(|_| Exp1.sample(rng)).collect();
                let total: f64 = e.iter().sum();
                (0..dim)
                    .map(|i| {
                        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        s * radius * e[i] / total
                    })
                    .collect()
            }
        }
    }

    /// Extreme points of the ball used to seed maximisations of convex
    /// functionals. For the sup-norm ball at most `max_points` corners are
    /// returned (all of them when `2^dim <= max_points`, random ones otherwise).
    pub fn ball_vertices<R: Rng + ?Sized>(
        self,
        dim: usize,
        radius: f64,
        max_points: usize,
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        match self {
            Norm::Sup => {
                if dim < 20 && (1usize << dim) <= max_points {
                    for mask in 0..(1usize << dim) {
                        out.push(
                            (0..dim)
                                .map(|k| if mask >> k & 1 == 1 { radius } else { -radius })
                                .collect(),
                        );
                    }
                } else {
                    for _ in 0..max_points {
                        out.push(
                            (0..dim)
                                .map(|_| if rng.random::<bool>() { radius } else { -radius })
                                .collect(),
                        );
                    }
                }
            }
            Norm::Euclidean | Norm::One => {
                for k in 0..dim {
                    for s in [radius, -radius] {
                        let mut v = vec![0.0; dim];
                        v[k] = s;
                        out.push(v);
                    }
                }
                if self == Norm::Euclidean {
                    let c = radius / (dim as f64).sqrt();
                    out.push(vec![c; dim]);
                    out.push(vec![-c; dim]);
                }
                out.truncate(max_points.max(1));
            }
        }
        out
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::Sup => "sup",
            Norm::Euclidean => "euclidean",
            Norm::One => "one",
        })
    }
}

impl std::str::FromStr for Norm {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sup" | "inf" | "max" => Ok(Norm::Sup),
            "euclidean" | "l2" | "2" => Ok(Norm::Euclidean),
            "one" | "l1" | "1" => Ok(Norm::One),
            other => Err(crate::Error::Parse(format!("unknown norm `{other}`"))),
        }
    }
}
