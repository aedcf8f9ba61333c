//! Composite Gauss–Legendre rules and the node-doubling driver used for
//! every integral over transmittance.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Points per Gauss–Legendre panel.
pub const PANEL_ORDER: usize = 16;

/// Largest panel count tried by [`refine`] before giving up.
pub const MAX_PANELS: usize = 4096;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

/// Composite rule on `[lo, hi]` split into `panels` equal panels. Appends
/// `(x, w)` pairs to `out`.
pub fn composite(lo: f64, hi: f64, panels: usize, out: &mut Vec<(f64, f64)>) {
    if hi <= lo || panels == 0 {
        return;
    }
    let (nodes, weights) = panel_rule();
    let h = (hi - lo) / panels as f64;
    for p in 0..panels {
        let a = lo + p as f64 * h;
        let half = 0.5 * h;
        let mid = a + half;
        for (x, w) in nodes.iter().zip(weights) {
            out.push((mid + half * x, half * w));
        }
    }
}

/// Integrate `f` on `[lo, hi]` with a composite rule.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let mut rule = Vec::new();
    composite(lo, hi, panels, &mut rule);
    rule.iter().map(|&(x, w)| w * f(x)).sum()
}

/// Node-doubling driver. `eval(panels)` computes an approximation at the
/// given resolution and `distance` compares two successive approximations.
/// Panels double from `start` until the distance drops below `tol`.
pub fn refine<T>(
    start: usize,
    tol: f64,
    mut eval: impl FnMut(usize) -> Result<T>,
    distance: impl Fn(&T, &T) -> f64,
) -> Result<T> {
    let mut panels = start.max(1);
    let mut prev = eval(panels)?;
    let mut residual = f64::INFINITY;
    while panels < MAX_PANELS {
        panels *= 2;
        let next = eval(panels)?;
        residual = distance(&prev, &next);
        if residual < tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureFailed { residual })
}

/// Adaptive scalar integral on `[lo, hi]`.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    refine(1, tol, |p| Ok(integrate(&f, lo, hi, p)), |a, b| (a - b).abs())
}
