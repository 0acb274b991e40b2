//! Shared helpers for the integration tests: an eigenvalue oracle that goes
//! through the characteristic polynomial (independent of the library's
//! closed forms) and small numeric utilities.

#![allow(dead_code)]

use imexopt::stability::Matrix3;
use num_complex::Complex64;

// Double-double (pair-of-f64) arithmetic. The characteristic polynomial of a
// near-identity matrix has clustered roots whose sensitivity amplifies plain
// f64 coefficient noise to ~1e-9; forming and evaluating the polynomial in
// roughly 32-digit precision keeps the oracle below the 1e-10 comparison
// tolerance.
#[derive(Debug, Clone, Copy)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    Dd { hi: s, lo: err }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    let err = a.mul_add(b, -p);
    Dd { hi: p, lo: err }
}

pub fn dd_add(a: Dd, b: Dd) -> Dd {
    let s = two_sum(a.hi, b.hi);
    let lo = s.lo + a.lo + b.lo;
    let t = two_sum(s.hi, lo);
    Dd { hi: t.hi, lo: t.lo }
}

pub fn dd_sub(a: Dd, b: Dd) -> Dd {
    dd_add(a, Dd { hi: -b.hi, lo: -b.lo })
}

pub fn dd_mul(a: Dd, b: Dd) -> Dd {
    let p = two_prod(a.hi, b.hi);
    let lo = p.lo + a.hi * b.lo + a.lo * b.hi;
    let t = two_sum(p.hi, lo);
    Dd { hi: t.hi, lo: t.lo }
}

pub fn dd_div(a: Dd, b: Dd) -> Dd {
    let q1 = a.hi / b.hi;
    let r = dd_sub(a, dd_mul(Dd::from(q1), b));
    let q2 = r.hi / b.hi;
    let r2 = dd_sub(r, dd_mul(Dd::from(q2), b));
    let q3 = r2.hi / b.hi;
    dd_add(dd_add(Dd::from(q1), Dd::from(q2)), Dd::from(q3))
}

pub fn dd_sqrt(a: Dd) -> Dd {
    if a.hi <= 0.0 {
        return Dd::from(a.hi.sqrt());
    }
    // One Newton refinement of the f64 square root in dd arithmetic.
    let x = Dd::from(a.hi.sqrt());
    let half = Dd { hi: 0.5, lo: 0.0 };
    dd_mul(half, dd_add(x, dd_div(a, x)))
}

/// Monic cubic coefficients (x^3 + a2 x^2 + a1 x + a0) in dd precision.
struct Cubic {
    a2: Dd,
    a1: Dd,
    a0: Dd,
}

impl Cubic {
    fn eval(&self, x: Dd) -> Dd {
        let mut acc = dd_add(x, self.a2);
        acc = dd_add(dd_mul(acc, x), self.a1);
        dd_add(dd_mul(acc, x), self.a0)
    }

    fn eval_derivative(&self, x: Dd) -> Dd {
        // 3x^2 + 2 a2 x + a1
        let three_x = dd_mul(Dd::from(3.0), x);
        let acc = dd_add(three_x, dd_mul(Dd::from(2.0), self.a2));
        dd_add(dd_mul(acc, x), self.a1)
    }

    /// One real root: f64 bisection on a Cauchy-bound bracket, polished by
    /// dd Newton.
    fn real_root(&self) -> Dd {
        let bound =
            1.0 + self.a2.hi.abs().max(self.a1.hi.abs()).max(self.a0.hi.abs());
        let (mut lo, mut hi) = (-bound, bound);
        let f = |x: f64| self.eval(Dd::from(x)).to_f64();
        // p(-B) < 0 < p(B) for a monic cubic with roots inside the bracket.
        if f(lo) > 0.0 || f(hi) < 0.0 {
            // fall back to widening; the Cauchy bound should prevent this
            lo *= 2.0;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut x = Dd::from(0.5 * (lo + hi));
        for _ in 0..8 {
            let d = self.eval_derivative(x);
            if d.to_f64() == 0.0 {
                break;
            }
            x = dd_sub(x, dd_div(self.eval(x), d));
        }
        x
    }
}

/// All three roots: deflate the real root, then the quadratic formula in dd.
fn cubic_roots_dd(cubic: &Cubic) -> [Complex64; 3] {
    let r0 = cubic.real_root();
    // Synthetic division by (x - r0): x^2 + b1 x + b0.
    let b1 = dd_add(cubic.a2, r0);
    let b0 = dd_add(cubic.a1, dd_mul(b1, r0));

    let disc = dd_sub(dd_mul(b1, b1), dd_mul(Dd::from(4.0), b0));
    if disc.to_f64() >= 0.0 {
        let sq = dd_sqrt(disc);
        // q = -(b1 + sign(b1) sqrt(disc)) / 2 avoids cancellation.
        let q = if b1.to_f64() >= 0.0 {
            dd_mul(Dd::from(-0.5), dd_add(b1, sq))
        } else {
            dd_mul(Dd::from(-0.5), dd_sub(b1, sq))
        };
        let r1 = q;
        let r2 = if q.to_f64() != 0.0 { dd_div(b0, q) } else { Dd::from(0.0) };
        [
            Complex64::new(r0.to_f64(), 0.0),
            Complex64::new(r1.to_f64(), 0.0),
            Complex64::new(r2.to_f64(), 0.0),
        ]
    } else {
        let re = dd_mul(Dd::from(-0.5), b1).to_f64();
        let im = dd_mul(Dd::from(0.5), dd_sqrt(dd_sub(Dd::from(0.0), disc))).to_f64();
        [
            Complex64::new(r0.to_f64(), 0.0),
            Complex64::new(re, im),
            Complex64::new(re, -im),
        ]
    }
}

/// Eigenvalues of a 3x3 matrix via its characteristic polynomial
/// det(xI - M) = x^3 - tr x^2 + m2 x - det, formed and solved in dd
/// arithmetic.
pub fn char_poly_eigenvalues(m: &Matrix3) -> [Complex64; 3] {
    let a = &m.0;
    let e = |i: usize, j: usize| Dd::from(a[i][j]);
    let minor = |i: usize, j: usize, k: usize, l: usize| {
        dd_sub(dd_mul(e(i, j), e(k, l)), dd_mul(e(i, l), e(k, j)))
    };

    let tr = dd_add(dd_add(e(0, 0), e(1, 1)), e(2, 2));
    let m2 = dd_add(dd_add(minor(0, 0, 1, 1), minor(0, 0, 2, 2)), minor(1, 1, 2, 2));
    let det = dd_add(
        dd_sub(dd_mul(e(0, 0), minor(1, 1, 2, 2)), dd_mul(e(0, 1), minor(1, 0, 2, 2))),
        dd_mul(e(0, 2), minor(1, 0, 2, 1)),
    );

    let cubic = Cubic {
        a2: Dd { hi: -tr.hi, lo: -tr.lo },
        a1: m2,
        a0: Dd { hi: -det.hi, lo: -det.lo },
    };
    let mut roots = cubic_roots_dd(&cubic);
    sort_eigs(&mut roots);
    roots
}

/// Same ordering the library uses: real part descending, ties broken by
/// imaginary part descending.
pub fn sort_eigs(eigs: &mut [Complex64; 3]) {
    eigs.sort_by(|x, y| {
        y.re.partial_cmp(&x.re).unwrap().then(y.im.partial_cmp(&x.im).unwrap())
    });
}

/// Agreement of two eigenvalue triples: absolute tolerance for O(1)
/// magnitudes, graded by the spectrum scale beyond that (f64 cannot hold
/// 1e-10 absolute on 1e12-sized eigenvalues).
pub fn eigs_agree(a: &[Complex64; 3], b: &[Complex64; 3], tol: f64) -> bool {
    let scale = a
        .iter()
        .chain(b.iter())
        .map(|e| e.norm())
        .fold(1.0f64, f64::max);
    // Greedy match: for each of a, find the closest remaining of b.
    let mut used = [false; 3];
    for ea in a {
        let mut best: Option<(usize, f64)> = None;
        for (j, eb) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (ea - eb).norm();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let (j, d) = best.unwrap();
        if d > tol * scale {
            return false;
        }
        used[j] = true;
    }
    true
}

// --- extended-precision reference for the convergence study -----------------

#[derive(Clone, Copy)]
struct DdVec3([Dd; 3]);

/// Right-hand side of the linear test problem (grad L = theta, unit rates):
/// (-m / sqrt(v + eps), theta - m, theta^2 - v), in dd arithmetic.
fn linear_rhs_dd(y: &DdVec3, eps: Dd) -> DdVec3 {
    let [theta, m, v] = y.0;
    let denom = dd_sqrt(dd_add(v, eps));
    DdVec3([
        dd_sub(Dd::from(0.0), dd_div(m, denom)),
        dd_sub(theta, m),
        dd_sub(dd_mul(theta, theta), v),
    ])
}

/// Classical RK4 on the linear test problem from (1, 0, 1) to t = 1 at step
/// `h_ref`, carried in double-double precision. An f64 run of this length
/// accumulates ~1e-13 of roundoff, which would swamp the fourth-order
/// method's own error at the smallest step sizes under comparison.
pub fn rk4_reference_linear_dd(h_ref: f64, eps: f64) -> [f64; 3] {
    let steps = (1.0 / h_ref).round() as usize;
    let h = Dd::from(h_ref);
    let half_h = dd_mul(Dd::from(0.5), h);
    let sixth_h = dd_div(h, Dd::from(6.0));
    let eps = Dd::from(eps);

    let axpy = |y: &DdVec3, s: Dd, k: &DdVec3| {
        DdVec3([
            dd_add(y.0[0], dd_mul(s, k.0[0])),
            dd_add(y.0[1], dd_mul(s, k.0[1])),
            dd_add(y.0[2], dd_mul(s, k.0[2])),
        ])
    };

    let mut y = DdVec3([Dd::from(1.0), Dd::from(0.0), Dd::from(1.0)]);
    for _ in 0..steps {
        let k1 = linear_rhs_dd(&y, eps);
        let k2 = linear_rhs_dd(&axpy(&y, half_h, &k1), eps);
        let k3 = linear_rhs_dd(&axpy(&y, half_h, &k2), eps);
        let k4 = linear_rhs_dd(&axpy(&y, h, &k3), eps);
        for i in 0..3 {
            let sum = dd_add(
                dd_add(k1.0[i], k4.0[i]),
                dd_mul(Dd::from(2.0), dd_add(k2.0[i], k3.0[i])),
            );
            y.0[i] = dd_add(y.0[i], dd_mul(sixth_h, sum));
        }
    }
    [y.0[0].to_f64(), y.0[1].to_f64(), y.0[2].to_f64()]
}

/// Least-squares slope of ln(err) against ln(h).
pub fn loglog_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let den: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    num / den
}

#[derive(Clone, Copy)]
pub struct SplitMix(pub u64);

/// Tiny deterministic generator for test parameter sampling.
impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Log-uniform over [lo, hi].
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        (lo.ln() + self.uniform() * (hi.ln() - lo.ln())).exp()
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.uniform() * (hi - lo)
    }
}
