//! Trapezoid rule on a uniform grid with local refinement.

const MAX_UNIFORM_NODES: usize = 4_000_001;
const BUMP_HALF_WIDTH_SDS: f64 = 10.0;
const BUMP_NODES_PER_SD: f64 = 4.0;

/// Structure of an integrand the uniform grid might step over.
#[derive(Debug, Clone, Default)]
pub(crate) struct Features {
    /// Points where the integrand jumps.
    pub breaks: Vec<f64>,
    /// `(centre, sd)` of Gaussian bumps.
    pub bumps: Vec<(f64, f64)>,
    /// Required spacing everywhere (kernel estimates).
    pub min_spacing: Option<f64>,
}

pub(crate) fn nodes(a: f64, b: f64, grid_points: usize, features: &[Features]) -> Vec<f64> {
    debug_assert!(a < b && grid_points >= 2);
    let span = b - a;
    let mut n = grid_points;
    if let Some(s) = features
        .iter()
        .filter_map(|f| f.min_spacing)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.min(s))))
    {
        let needed = (span / s).ceil() as usize + 1;
        n = n.max(needed.min(MAX_UNIFORM_NODES));
    }
    let dx = span / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| a + dx * i as f64).collect();
    out[n - 1] = b;
    for f in features {
        for &(centre, sd) in &f.bumps {
            if sd >= 2.0 * dx {
                continue;
            }
            let step = sd / BUMP_NODES_PER_SD;
            let half = (BUMP_HALF_WIDTH_SDS * BUMP_NODES_PER_SD) as i64;
            for i in -half..=half {
                let x = centre + step * i as f64;
                if x > a && x < b {
                    out.push(x);
                }
            }
        }
        out.extend(f.breaks.iter().copied().filter(|&x| x > a && x < b));
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

pub(crate) fn trapezoid(nodes: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    let mut prev_x = nodes[0];
    let mut prev_f = f(prev_x);
    for &x in &nodes[1..] {
        let fx = f(x);
        total += 0.5 * (x - prev_x) * (prev_f + fx);
        prev_x = x;
        prev_f = fx;
    }
    total
}
