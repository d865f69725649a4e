//! Adaptive Simpson quadrature on bounded panels.

/// Integrate `f` over `[a, b]`, splitting the interval into panels no wider
/// than `max_step` and refining each adaptively to relative tolerance `tol`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, max_step: f64, tol: f64) -> f64
where
    F: FnMut(f64) -> f64,
{
    if b <= a {
        return 0.0;
    }
    let panels = ((b - a) / max_step).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + i as f64 * h;
        let hi = if i + 1 == panels { b } else { lo + h };
        total += adaptive_simpson(&mut f, lo, hi, tol, 24);
    }
    total
}

pub fn adaptive_simpson<F>(f: &mut F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64
where
    F: FnMut(f64) -> f64,
{
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(f: &mut F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64
where
    F: FnMut(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    let scale = (left.abs() + right.abs()).max(f64::MIN_POSITIVE);
    if depth == 0 || delta.abs() <= 15.0 * tol * scale {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, tol, depth - 1)
}
