use crate::error::{Error, Result};

const GRID_POINTS: usize = 512;
const GOLDEN_ITERATIONS: usize = 3;

/// Silverman's rule of thumb, `1.06·σ̂·n^(−1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

fn density(samples: &[f64], bandwidth: f64, x: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let u = (x - s) / bandwidth;
            (-0.5 * u * u).exp()
        })
        .sum()
}

/// Mode of a Gaussian-kernel density estimate: best of a 512-point grid over
/// `[min, max]`, refined by golden-section steps between its neighbours.
pub fn kde_mode(samples: &[f64]) -> Result<f64> {
    if samples.len() < 10 {
        return Err(Error::Usage(format!("kde_mode needs at least 10 samples, got {}", samples.len())));
    }
    if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
        return Err(Error::Domain(format!("kde_mode received non-finite sample {bad}")));
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bandwidth = silverman_bandwidth(samples);
    if lo == hi || !(bandwidth > 0.0) {
        return Ok(lo);
    }

    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid = |i: usize| lo + step * i as f64;
    let (best_i, mut best_f) = (0..GRID_POINTS)
        .map(|i| (i, density(samples, bandwidth, grid(i))))
        .fold((0, f64::NEG_INFINITY), |acc, (i, f)| if f > acc.1 { (i, f) } else { acc });
    let mut best_x = grid(best_i);

    let mut a = grid(best_i.saturating_sub(1));
    let mut b = grid((best_i + 1).min(GRID_POINTS - 1));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..GOLDEN_ITERATIONS {
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        let fc = density(samples, bandwidth, c);
        let fd = density(samples, bandwidth, d);
        for (x, f) in [(c, fc), (d, fd)] {
            if f > best_f {
                best_f = f;
                best_x = x;
            }
        }
        if fc >= fd {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(best_x)
}
