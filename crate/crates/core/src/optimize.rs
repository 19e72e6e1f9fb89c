//! One-dimensional maximization (Brent's method: golden section with
//! parabolic interpolation).

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMax {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
}

/// Maximize `f` on `[lo, hi]` to absolute tolerance `tol` in `x`.
pub fn brent_max(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> ScalarMax {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    // Work with -f so the textbook minimization logic applies unchanged.
    let mut fx = -f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut evaluations = 1;
    let (mut d, mut e) = (0.0_f64, 0.0_f64);

    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = tol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = -f(u);
        evaluations += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    ScalarMax {
        x,
        fx: -fx,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum() {
        let r = brent_max(|x| -(x - 1.3).powi(2) + 2.0, -5.0, 5.0, 1e-8);
        assert!((r.x - 1.3).abs() < 1e-7);
        assert!((r.fx - 2.0).abs() < 1e-12);
        let r = brent_max(|x: f64| x.ln() - x, 0.01, 10.0, 1e-9);
        assert!((r.x - 1.0).abs() < 1e-7);
    }

    #[test]
    fn maximum_at_edge() {
        let r = brent_max(|x| x, 0.0, 1.0, 1e-8);
        assert!(r.x > 1.0 - 1e-6);
    }
}
