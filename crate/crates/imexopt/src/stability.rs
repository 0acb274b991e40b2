//! Linearized stability analysis of the forward Euler and IMEX Euler
//! discretizations around the origin of the Adam ODE, with the gradient
//! linearized as grad L ~ Lambda * theta.
//!
//! Both one-step update matrices decouple into a 2x2 (theta, m) block and the
//! scalar velocity factor 1 - h q, so eigenvalues come from the block
//! quadratic plus the diagonal entry; no general eigensolver is involved.
//! Region scans evaluate the same closed forms, in complex arithmetic when an
//! imaginary part of Lambda is scanned.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Parameters of the linearized one-step map: step size, ODE rates, gradient
/// linearization coefficient Lambda, and the square-root floor epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityParams {
    pub h: f64,
    pub d: f64,
    pub r: f64,
    pub p: f64,
    pub q: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl StabilityParams {
    pub fn new(h: f64, d: f64, r: f64, p: f64, q: f64, lambda: f64, epsilon: f64) -> Result<Self> {
        for (name, x) in
            [("h", h), ("d", d), ("r", r), ("p", p), ("q", q), ("lambda", lambda)]
        {
            if !x.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite, got {x}")));
            }
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { h, d, r, p, q, lambda, epsilon })
    }

    /// The nominal parameter point: h = 1e-4 with the rates implied by
    /// beta1 = 0.9, beta2 = 0.999 (d = r = 1053.6..., p = q = 10.005...).
    pub fn nominal() -> Self {
        let h = 1e-4;
        let r = -(0.9f64).ln() / h;
        let q = -(0.999f64).ln() / h;
        StabilityParams { h, d: r, r, p: q, q, lambda: 1.0, epsilon: 1e-8 }
    }
}

/// Row-major 3x3 real matrix over the state ordering (theta, m, v).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix3(pub [[f64; 3]; 3]);

/// One-step matrix of the linearized forward Euler scheme:
///
/// ```text
/// [ 1          -h/sqrt(eps)   0     ]
/// [ h d Lambda  1 - h r       0     ]
/// [ 0           0             1-h q ]
/// ```
pub fn fe_stability_matrix(sp: &StabilityParams) -> Matrix3 {
    let se = sp.epsilon.sqrt();
    Matrix3([
        [1.0, -sp.h / se, 0.0],
        [sp.h * sp.d * sp.lambda, 1.0 - sp.h * sp.r, 0.0],
        [0.0, 0.0, 1.0 - sp.h * sp.q],
    ])
}

/// One-step matrix of the linearized IMEX Euler scheme:
///
/// ```text
/// [ 1 - d h^2 Lambda/sqrt(eps)   -h(1 - h r)/sqrt(eps)   0     ]
/// [ d h Lambda                    1 - h r                0     ]
/// [ 0                             0                      1-h q ]
/// ```
pub fn imex_euler_stability_matrix(sp: &StabilityParams) -> Matrix3 {
    let se = sp.epsilon.sqrt();
    Matrix3([
        [
            1.0 - sp.d * sp.h * sp.h * sp.lambda / se,
            -sp.h * (1.0 - sp.h * sp.r) / se,
            0.0,
        ],
        [sp.d * sp.h * sp.lambda, 1.0 - sp.h * sp.r, 0.0],
        [0.0, 0.0, 1.0 - sp.h * sp.q],
    ])
}

/// The larger-magnitude quadratic root by direct formula, the other by the
/// Vieta product; avoids the cancellation the naive +/- formula hits when the
/// roots differ widely in size.
fn quadratic_roots(half_sum: Complex64, quarter_disc: Complex64, product: Complex64) -> (Complex64, Complex64) {
    let root = quarter_disc.sqrt();
    let big = if (half_sum + root).norm() >= (half_sum - root).norm() {
        half_sum + root
    } else {
        half_sum - root
    };
    if big.norm() == 0.0 {
        return (big, big);
    }
    (big, product / big)
}

/// Eigenvalues of the forward Euler (theta, m) block for a possibly complex
/// Lambda: 1 - h r/2 +/- sqrt(h^2 r^2 eps - 4 d h^2 Lambda sqrt(eps)) / (2 sqrt(eps)).
fn fe_block_eigenvalues(sp: &StabilityParams, lambda: Complex64) -> (Complex64, Complex64) {
    let se = sp.epsilon.sqrt();
    // radicand / (4 eps) = (h r / 2)^2 - d h^2 lambda / sqrt(eps)
    let quarter_disc = Complex64::new((sp.h * sp.r / 2.0).powi(2), 0.0)
        - sp.d * sp.h * sp.h / se * lambda;
    let half_sum = Complex64::new(1.0 - sp.h * sp.r / 2.0, 0.0);
    let det = Complex64::new(1.0 - sp.h * sp.r, 0.0) + sp.d * sp.h * sp.h / se * lambda;
    quadratic_roots(half_sum, quarter_disc, det)
}

/// Eigenvalues of the IMEX Euler (theta, m) block for a possibly complex
/// Lambda:
///
/// ```text
/// (-d h^2 L sqrt(eps) - h r eps + 2 eps
///   +/- sqrt((d h^2 L sqrt(eps) + h r eps - 2 eps)^2 - 4 (eps^2 - h r eps^2)))
/// / (2 eps)
/// ```
///
/// The radicand is evaluated in the algebraically identical form
/// (d h^2 L sqrt(eps) + h r eps)^2 - 4 d h^2 L eps^(3/2), which does not
/// cancel the 4 eps^2 terms against each other.
fn imex_block_eigenvalues(sp: &StabilityParams, lambda: Complex64) -> (Complex64, Complex64) {
    let eps = sp.epsilon;
    let se = eps.sqrt();
    let u = sp.d * sp.h * sp.h * se * lambda;
    let w = sp.h * sp.r * eps;
    let uw = u + Complex64::new(w, 0.0);
    let radicand = uw * uw - 4.0 * eps * u;
    // half-sum of the roots = (2 eps - u - w) / (2 eps); quarter-discriminant
    // scaled the same way; product of the roots = det = 1 - h r.
    let half_sum = (Complex64::new(2.0 * eps - w, 0.0) - u) / (2.0 * eps);
    let quarter_disc = radicand / Complex64::new(4.0 * eps * eps, 0.0);
    let det = Complex64::new(1.0 - sp.h * sp.r, 0.0);
    quadratic_roots(half_sum, quarter_disc, det)
}

fn sorted_triple(block: (Complex64, Complex64), third: f64) -> [Complex64; 3] {
    let mut eigs = [block.0, block.1, Complex64::new(third, 0.0)];
    eigs.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    eigs
}

/// Closed-form eigenvalues of the forward Euler stability matrix, sorted by
/// real part descending (ties by imaginary part).
pub fn fe_eigenvalues(sp: &StabilityParams) -> [Complex64; 3] {
    sorted_triple(
        fe_block_eigenvalues(sp, Complex64::new(sp.lambda, 0.0)),
        1.0 - sp.h * sp.q,
    )
}

/// Closed-form eigenvalues of the IMEX Euler stability matrix, same ordering.
pub fn imex_euler_eigenvalues(sp: &StabilityParams) -> [Complex64; 3] {
    sorted_triple(
        imex_block_eigenvalues(sp, Complex64::new(sp.lambda, 0.0)),
        1.0 - sp.h * sp.q,
    )
}

/// Maximum eigenvalue modulus of a block-triangular matrix of the shape the
/// two schemes produce (decoupled (3,3) entry): the 2x2 block quadratic plus
/// the diagonal term.
pub fn spectral_radius(m: &Matrix3) -> f64 {
    let a = m.0[0][0];
    let b = m.0[0][1];
    let c = m.0[1][0];
    let d = m.0[1][1];
    let half_tr = Complex64::new((a + d) / 2.0, 0.0);
    let det = a * d - b * c;
    let disc = half_tr * half_tr - Complex64::new(det, 0.0);
    let root = disc.sqrt();
    let l1 = (half_tr + root).norm();
    let l2 = (half_tr - root).norm();
    l1.max(l2).max(m.0[2][2].abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Fe,
    ImexEuler,
}

impl Scheme {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "fe" => Ok(Scheme::Fe),
            "imex-euler" => Ok(Scheme::ImexEuler),
            other => Err(Error::Config(format!("unknown scheme '{other}' (fe | imex-euler)"))),
        }
    }
}

/// A scannable member of [`StabilityParams`]. `lambda` is the real part of
/// the linearization coefficient; `lambda_im` scans its imaginary part (the
/// block eigenvalues are then evaluated in complex arithmetic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisParam {
    H,
    D,
    R,
    P,
    Q,
    Lambda,
    LambdaIm,
}

impl AxisParam {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "h" => Ok(AxisParam::H),
            "d" => Ok(AxisParam::D),
            "r" => Ok(AxisParam::R),
            "p" => Ok(AxisParam::P),
            "q" => Ok(AxisParam::Q),
            "lambda" => Ok(AxisParam::Lambda),
            "lambda_im" => Ok(AxisParam::LambdaIm),
            other => Err(Error::Axis(format!(
                "unknown parameter '{other}' (h | d | r | p | q | lambda | lambda_im)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AxisParam::H => "h",
            AxisParam::D => "d",
            AxisParam::R => "r",
            AxisParam::P => "p",
            AxisParam::Q => "q",
            AxisParam::Lambda => "lambda",
            AxisParam::LambdaIm => "lambda_im",
        }
    }
}

/// One scan axis: which parameter to vary and the inclusive value range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub param: AxisParam,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.count <= 1 {
            return vec![self.min];
        }
        (0..self.count)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

/// One cell of a stability scan grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanCell {
    pub x: f64,
    pub y: f64,
    pub spectral_radius: f64,
}

fn radius_at(scheme: Scheme, sp: &StabilityParams, lambda_im: f64) -> f64 {
    let lambda = Complex64::new(sp.lambda, lambda_im);
    let (l1, l2) = match scheme {
        Scheme::Fe => fe_block_eigenvalues(sp, lambda),
        Scheme::ImexEuler => imex_block_eigenvalues(sp, lambda),
    };
    l1.norm().max(l2.norm()).max((1.0 - sp.h * sp.q).abs())
}

/// Spectral radius of the scheme's linearized map over a 2-D parameter grid.
/// The two axes must name distinct parameters. The grid is row-major with
/// axis1 as the outer (row) index; stable cells are those with radius <= 1.
pub fn stability_region_scan(
    scheme: Scheme,
    base: &StabilityParams,
    axis1: &Axis,
    axis2: &Axis,
) -> Result<Vec<ScanCell>> {
    if axis1.param == axis2.param {
        return Err(Error::Axis(format!(
            "axes must name distinct parameters, both are '{}'",
            axis1.param.name()
        )));
    }
    if axis1.count == 0 || axis2.count == 0 {
        return Err(Error::Axis("axis counts must be at least 1".into()));
    }

    let apply = |sp: &mut StabilityParams, lambda_im: &mut f64, param: AxisParam, value: f64| {
        match param {
            AxisParam::H => sp.h = value,
            AxisParam::D => sp.d = value,
            AxisParam::R => sp.r = value,
            AxisParam::P => sp.p = value,
            AxisParam::Q => sp.q = value,
            AxisParam::Lambda => sp.lambda = value,
            AxisParam::LambdaIm => *lambda_im = value,
        }
    };

    let mut cells = Vec::with_capacity(axis1.count * axis2.count);
    for &x in &axis1.values() {
        for &y in &axis2.values() {
            let mut sp = *base;
            let mut lambda_im = 0.0;
            apply(&mut sp, &mut lambda_im, axis1.param, x);
            apply(&mut sp, &mut lambda_im, axis2.param, y);
            cells.push(ScanCell { x, y, spectral_radius: radius_at(scheme, &sp, lambda_im) });
        }
    }
    Ok(cells)
}

/// Renders a scan as CSV: `axis1,axis2,spectral_radius`, one row per cell,
/// row-major, 17-significant-digit decimals.
pub fn format_scan_csv(cells: &[ScanCell]) -> String {
    let mut out = String::from("axis1,axis2,spectral_radius\n");
    for cell in cells {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", cell.x, cell.y, cell.spectral_radius));
    }
    out
}

/// Fraction of cells with spectral radius <= 1.
pub fn stable_fraction(cells: &[ScanCell]) -> f64 {
    if cells.is_empty() {
        return 0.0;
    }
    cells.iter().filter(|c| c.spectral_radius <= 1.0).count() as f64 / cells.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(h: f64, d: f64, r: f64, p: f64, q: f64, lambda: f64, eps: f64) -> StabilityParams {
        StabilityParams::new(h, d, r, p, q, lambda, eps).unwrap()
    }

    #[test]
    fn zero_step_gives_the_identity() {
        let params = sp(0.0, 3.0, 2.0, 1.0, 5.0, -4.0, 1e-8);
        let expected = Matrix3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(fe_stability_matrix(&params), expected);
        assert_eq!(imex_euler_stability_matrix(&params), expected);
        for eig in fe_eigenvalues(&params).iter().chain(imex_euler_eigenvalues(&params).iter()) {
            assert_eq!(eig.re, 1.0);
            assert_eq!(eig.im, 0.0);
        }
        assert_eq!(spectral_radius(&fe_stability_matrix(&params)), 1.0);
    }

    #[test]
    fn fe_matrix_entries_at_the_nominal_point() {
        // h = 1e-4 with d = r = 1053.6, p = q = 10.005 (the exponential-map
        // rates for beta1 = 0.9, beta2 = 0.999): entry (3,3) is
        // 1 - 1e-4 * 10.005 = 0.9989995.
        let params = sp(1e-4, 1053.6, 1053.6, 10.005, 10.005, 1.0, 1e-8);
        let m = fe_stability_matrix(&params);
        assert!((m.0[2][2] - 0.9989995).abs() < 1e-12, "{}", m.0[2][2]);
        assert!((m.0[1][0] - 1e-4 * 1053.6).abs() < 1e-15);
    }

    #[test]
    fn fe_matrix_coupling_entry() {
        // (1,2) = -h / sqrt(eps) = -0.1 / 1e-4 = -1000 for h = 0.1, eps = 1e-8.
        let params = sp(0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 1e-8);
        let m = fe_stability_matrix(&params);
        assert!((m.0[0][1] + 1000.0).abs() < 1e-9, "{}", m.0[0][1]);
    }

    #[test]
    fn decoupled_lambda_zero_eigenvalues() {
        let params = sp(0.01, 2.0, 3.0, 4.0, 5.0, 0.0, 1e-8);
        for eigs in [fe_eigenvalues(&params), imex_euler_eigenvalues(&params)] {
            let mut re: Vec<f64> = eigs.iter().map(|e| e.re).collect();
            re.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expected = vec![1.0 - 0.01 * 5.0, 1.0 - 0.01 * 3.0, 1.0];
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (got, want) in re.iter().zip(&expected) {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
            assert!(eigs.iter().all(|e| e.im == 0.0));
        }
    }

    #[test]
    fn imex_block_determinant_is_one_minus_hr() {
        // The product of the two block eigenvalues equals det = 1 - h r for
        // any lambda, d, eps.
        for (lambda, d, eps) in [(5.0, 2.0, 1e-8), (-100.0, 7.0, 1e-4), (0.3, 0.1, 1e-2)] {
            let params = sp(0.01, d, 3.0, 1.0, 1.0, lambda, eps);
            let m = imex_euler_stability_matrix(&params);
            let det = m.0[0][0] * m.0[1][1] - m.0[0][1] * m.0[1][0];
            assert!((det - (1.0 - 0.01 * 3.0)).abs() < 1e-10, "det = {det}");
            let eigs = imex_euler_eigenvalues(&params);
            let product = eigs[0] * eigs[1] * eigs[2] / Complex64::new(1.0 - 0.01 * 1.0, 0.0);
            // dividing out the decoupled third eigenvalue leaves the block det
            assert!((product.re - det).abs() < 1e-9, "{product}");
        }
    }

    #[test]
    fn shared_velocity_eigenvalue() {
        let params = sp(0.05, 1.0, 2.0, 3.0, 4.0, 6.0, 1e-6);
        let fe = fe_stability_matrix(&params);
        let imex = imex_euler_stability_matrix(&params);
        assert_eq!(fe.0[2][2], imex.0[2][2]);
    }

    #[test]
    fn spectral_radius_of_diagonal_matrix() {
        let m = Matrix3([[0.5, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, -0.9]]);
        assert!((spectral_radius(&m) - 0.9).abs() < 1e-15);
        let id = Matrix3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(spectral_radius(&id), 1.0);
    }

    #[test]
    fn scan_single_cell_degenerates_to_one_radius() {
        let base = sp(0.01, 1.0, 1.0, 1.0, 1.0, 2.0, 1e-4);
        let axis1 = Axis { param: AxisParam::Lambda, min: 2.0, max: 2.0, count: 1 };
        let axis2 = Axis { param: AxisParam::H, min: 0.01, max: 0.01, count: 1 };
        let cells = stability_region_scan(Scheme::Fe, &base, &axis1, &axis2).unwrap();
        assert_eq!(cells.len(), 1);
        let direct = spectral_radius(&fe_stability_matrix(&base));
        assert!((cells[0].spectral_radius - direct).abs() < 1e-12);
    }

    #[test]
    fn scan_cells_match_pointwise_recomputation() {
        let base = StabilityParams::nominal();
        let axis1 = Axis { param: AxisParam::Lambda, min: -2000.0, max: 2000.0, count: 7 };
        let axis2 = Axis { param: AxisParam::H, min: 1e-5, max: 5e-3, count: 5 };
        for scheme in [Scheme::Fe, Scheme::ImexEuler] {
            let cells = stability_region_scan(scheme, &base, &axis1, &axis2).unwrap();
            assert_eq!(cells.len(), 35);
            for cell in &cells {
                let mut p = base;
                p.lambda = cell.x;
                p.h = cell.y;
                let m = match scheme {
                    Scheme::Fe => fe_stability_matrix(&p),
                    Scheme::ImexEuler => imex_euler_stability_matrix(&p),
                };
                assert!(
                    (cell.spectral_radius - spectral_radius(&m)).abs() < 1e-9,
                    "cell ({}, {})",
                    cell.x,
                    cell.y
                );
                assert!(cell.spectral_radius >= 0.0);
            }
        }
    }

    #[test]
    fn fe_velocity_eigenvalue_crosses_one_at_hq_two() {
        // Scanning q across h q = 2 must cross radius 1 there: the third
        // eigenvalue is 1 - h q and |1 - h q| = 1 at q = 2/h.
        let base = sp(0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 1e-2);
        let axis1 = Axis { param: AxisParam::Q, min: 15.0, max: 25.0, count: 11 };
        let axis2 = Axis { param: AxisParam::Lambda, min: 0.0, max: 0.0, count: 1 };
        let cells = stability_region_scan(Scheme::Fe, &base, &axis1, &axis2).unwrap();
        for cell in &cells {
            let expected = (1.0 - 0.1 * cell.x).abs().max(1.0);
            // with d = r = 0 the block eigenvalues are both exactly 1
            assert!((cell.spectral_radius - expected).abs() < 1e-12);
            if cell.x < 20.0 {
                assert!(cell.spectral_radius <= 1.0 + 1e-12);
            }
            if cell.x > 20.0 {
                assert!(cell.spectral_radius > 1.0);
            }
        }
    }

    #[test]
    fn scan_rejects_duplicate_axes() {
        let base = StabilityParams::nominal();
        let axis = Axis { param: AxisParam::H, min: 0.0, max: 1.0, count: 3 };
        assert!(matches!(
            stability_region_scan(Scheme::Fe, &base, &axis, &axis),
            Err(Error::Axis(_))
        ));
    }

    #[test]
    fn axis_param_names_round_trip() {
        for name in ["h", "d", "r", "p", "q", "lambda", "lambda_im"] {
            assert_eq!(AxisParam::from_name(name).unwrap().name(), name);
        }
        assert!(matches!(AxisParam::from_name("sigma"), Err(Error::Axis(_))));
    }

    #[test]
    fn scan_csv_format() {
        let base = StabilityParams::nominal();
        let axis1 = Axis { param: AxisParam::Lambda, min: 0.0, max: 1.0, count: 2 };
        let axis2 = Axis { param: AxisParam::H, min: 1e-4, max: 1e-3, count: 2 };
        let cells = stability_region_scan(Scheme::ImexEuler, &base, &axis1, &axis2).unwrap();
        let csv = format_scan_csv(&cells);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "axis1,axis2,spectral_radius");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 3);
    }
}
