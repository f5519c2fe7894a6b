//! Procedural phantoms. Kinds cycle through disk, bars, gradient with
//! disk, point sources and piecewise-constant rectangles; each phantom
//! draws its jitter from its own child seed.

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub name: String,
    pub data: Tensor,
    pub peak: f64,
}

const KINDS: [&str; 5] = ["disk", "bars", "gradient_disk", "points", "rects"];

/// A 2-D scene evaluated at continuous coordinates so it can be translated.
enum Scene {
    Disk { cy: f64, cx: f64, r: f64, r_in: f64 },
    Bars { period: f64, phase: f64, vertical: bool, lo: f64, hi: f64 },
    GradientDisk { angle: f64, cy: f64, cx: f64, r: f64 },
    Points { pts: Vec<(f64, f64, f64)> },
    Rects { rects: Vec<(f64, f64, f64, f64, f64)> },
}

impl Scene {
    fn random(kind: usize, n: f64, rng: &mut Rng) -> Scene {
        let c = (n - 1.0) / 2.0;
        match kind {
            0 => Scene::Disk {
                cy: c + rng.uniform_in(-0.08, 0.08) * n,
                cx: c + rng.uniform_in(-0.08, 0.08) * n,
                r: rng.uniform_in(0.25, 0.35) * n,
                r_in: rng.uniform_in(0.08, 0.14) * n,
            },
            1 => Scene::Bars {
                period: rng.uniform_in(3.0, 5.0),
                phase: rng.uniform_in(0.0, 1.0),
                vertical: rng.bernoulli(0.5),
                lo: rng.uniform_in(0.1, 0.25),
                hi: rng.uniform_in(0.75, 0.95),
            },
            2 => Scene::GradientDisk {
                angle: rng.uniform_in(0.0, std::f64::consts::TAU),
                cy: c + rng.uniform_in(-0.15, 0.15) * n,
                cx: c + rng.uniform_in(-0.15, 0.15) * n,
                r: rng.uniform_in(0.15, 0.25) * n,
            },
            3 => {
                let k = 3 + rng.below(4);
                Scene::Points {
                    pts: (0..k)
                        .map(|_| (rng.uniform_in(0.15, 0.85) * n, rng.uniform_in(0.15, 0.85) * n, rng.uniform_in(0.6, 1.0)))
                        .collect(),
                }
            }
            _ => {
                let k = 3;
                Scene::Rects {
                    rects: (0..k)
                        .map(|_| {
                            let (y0, x0) = (rng.uniform_in(0.05, 0.55) * n, rng.uniform_in(0.05, 0.55) * n);
                            let (h, w) = (rng.uniform_in(0.2, 0.45) * n, rng.uniform_in(0.2, 0.45) * n);
                            (y0, x0, y0 + h, x0 + w, rng.uniform_in(0.25, 1.0))
                        })
                        .collect(),
                }
            }
        }
    }

    fn at(&self, y: f64, x: f64, n: f64) -> f64 {
        match self {
            Scene::Disk { cy, cx, r, r_in } => {
                let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                if d <= *r_in {
                    0.5
                } else if d <= *r {
                    0.9
                } else {
                    0.1
                }
            }
            Scene::Bars { period, phase, vertical, lo, hi } => {
                let t = if *vertical { x } else { y };
                if ((t / period + phase).floor() as i64).rem_euclid(2) == 0 {
                    *lo
                } else {
                    *hi
                }
            }
            Scene::GradientDisk { angle, cy, cx, r } => {
                let t = ((x * angle.cos() + y * angle.sin()) / n + 1.0) / 2.0;
                let g = 0.1 + 0.5 * t.clamp(0.0, 1.0);
                if (y - cy).powi(2) + (x - cx).powi(2) <= r * r {
                    0.95
                } else {
                    g
                }
            }
            Scene::Points { pts } => {
                let v: f64 = pts
                    .iter()
                    .map(|(py, px, a)| a * (-((y - py).powi(2) + (x - px).powi(2)) / (2.0 * 0.8 * 0.8)).exp())
                    .sum();
                (0.05 + v).min(1.0)
            }
            Scene::Rects { rects } => {
                let mut v: f64 = 0.05;
                for &(y0, x0, y1, x1, a) in rects {
                    if y >= y0 && y < y1 && x >= x0 && x < x1 {
                        v = v.max(a);
                    }
                }
                v
            }
        }
    }

    fn render(&self, n: usize, dy: f64, dx: f64) -> Vec<f64> {
        let nf = n as f64;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.at(i as f64 - dy, j as f64 - dx, nf).clamp(0.0, 1.0));
            }
        }
        out
    }
}

/// Smooth spectral signature indexed by band position in [0, 1].
fn spectrum(t: f64, centre: f64, width: f64) -> f64 {
    0.2 + 0.8 * (-(t - centre).powi(2) / (2.0 * width * width)).exp()
}

/// Deterministic structured phantoms shaped for the modality's input.
pub fn make_phantoms(modality: &str, size: usize, n: usize, seed: u64) -> Result<Vec<Phantom>> {
    make_phantoms_with(Registry::builtin(), modality, size, n, seed)
}

pub fn make_phantoms_with(registry: &Registry, modality: &str, size: usize, n: usize, seed: u64) -> Result<Vec<Phantom>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one phantom".into()));
    }
    if size < 2 {
        return Err(Error::InvalidArgument(format!("phantom size {size} too small")));
    }
    let entry = registry.template(modality)?;
    let m = entry.modality.as_str();
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let mut rng = Rng::child(seed, idx as u64);
        let kind = idx % KINDS.len();
        let scene = Scene::random(kind, size as f64, &mut rng);
        let name = format!("{}_{idx}", KINDS[kind]);
        let (shape, data, peak) = match m {
            "cassi" => {
                let bands = entry.default_or("bands", 4.0) as usize;
                // second component with a different spectrum so bands are not proportional
                let other = Scene::random((kind + 2) % KINDS.len(), size as f64, &mut rng);
                let (a, b) = (scene.render(size, 0.0, 0.0), other.render(size, 0.0, 0.0));
                let (ca, cb) = (rng.uniform_in(0.1, 0.4), rng.uniform_in(0.6, 0.9));
                let mut v = vec![0.0; size * size * bands];
                for p in 0..size * size {
                    for l in 0..bands {
                        let t = l as f64 / (bands - 1) as f64;
                        v[p * bands + l] = (0.7 * a[p] * spectrum(t, ca, 0.3) + 0.3 * b[p] * spectrum(t, cb, 0.3)).min(1.0);
                    }
                }
                (vec![size, size, bands], v, 1.0)
            }
            "cacti" => {
                let frames = entry.default_or("frames", 4.0) as usize;
                let (vy, vx) = (rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0));
                let per: Vec<Vec<f64>> =
                    (0..frames).map(|t| scene.render(size, vy * t as f64, vx * t as f64)).collect();
                let mut v = vec![0.0; size * size * frames];
                for p in 0..size * size {
                    for t in 0..frames {
                        v[p * frames + t] = per[t][p];
                    }
                }
                (vec![size, size, frames], v, 1.0)
            }
            _ => {
                let peak = if m == "spc" { entry.default_or("peak", 255.0) } else { 1.0 };
                let v = scene.render(size, 0.0, 0.0).into_iter().map(|x| x * peak).collect();
                (vec![size, size], v, peak)
            }
        };
        out.push(Phantom { name, data: Tensor::real(shape, data)?, peak });
    }
    Ok(out)
}
