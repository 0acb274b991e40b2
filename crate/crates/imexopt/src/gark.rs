//! GARK Butcher tableaus for two-way partitioned implicit-explicit methods:
//! representation, structural validation, order-condition checking (orders 1-2),
//! the built-in methods, and a plain-text file format.
//!
//! A tableau holds the coefficient blocks
//!
//! ```text
//! c_E | A_EE | A_EI
//! ----+------+-----
//! c_I | A_IE | A_II
//! ----+------+-----
//!     | b_E  | b_I
//! ```
//!
//! with `A_EE` strictly lower triangular (explicit part), `A_II` lower
//! triangular with diagonal allowed (diagonally implicit part), `A_EI` strictly
//! lower and `A_IE` lower triangular coupling blocks. The abscissae are always
//! derived: `c_E = A_EE 1`, `c_I = A_II 1`. Internal consistency additionally
//! requires `A_EI 1 = c_E` and `A_IE 1 = c_I`.

use crate::error::{Error, Result};

/// Absolute tolerance for coefficient comparisons (row sums, order residuals).
pub const TABLEAU_TOL: f64 = 1e-12;

/// Coefficients of a two-way partitioned (diagonally implicit) GARK method.
#[derive(Debug, Clone, PartialEq)]
pub struct GarkTableau {
    s_explicit: usize,
    s_implicit: usize,
    a_ee: Vec<Vec<f64>>,
    a_ei: Vec<Vec<f64>>,
    a_ie: Vec<Vec<f64>>,
    a_ii: Vec<Vec<f64>>,
    b_e: Vec<f64>,
    b_i: Vec<f64>,
}

impl GarkTableau {
    /// Builds a tableau from the four coupling blocks and two weight vectors.
    /// Only shapes are checked here; run [`validate_tableau`] for the
    /// structural invariants.
    pub fn new(
        a_ee: Vec<Vec<f64>>,
        a_ei: Vec<Vec<f64>>,
        a_ie: Vec<Vec<f64>>,
        a_ii: Vec<Vec<f64>>,
        b_e: Vec<f64>,
        b_i: Vec<f64>,
    ) -> Result<Self> {
        let s_e = b_e.len();
        let s_i = b_i.len();
        if s_e == 0 || s_i == 0 {
            return Err(Error::Dimension("tableau needs at least one stage per part".into()));
        }
        check_shape("A_EE", &a_ee, s_e, s_e)?;
        check_shape("A_EI", &a_ei, s_e, s_i)?;
        check_shape("A_IE", &a_ie, s_i, s_e)?;
        check_shape("A_II", &a_ii, s_i, s_i)?;
        Ok(Self { s_explicit: s_e, s_implicit: s_i, a_ee, a_ei, a_ie, a_ii, b_e, b_i })
    }

    pub fn s_explicit(&self) -> usize {
        self.s_explicit
    }

    pub fn s_implicit(&self) -> usize {
        self.s_implicit
    }

    pub fn a_ee(&self) -> &[Vec<f64>] {
        &self.a_ee
    }

    pub fn a_ei(&self) -> &[Vec<f64>] {
        &self.a_ei
    }

    pub fn a_ie(&self) -> &[Vec<f64>] {
        &self.a_ie
    }

    pub fn a_ii(&self) -> &[Vec<f64>] {
        &self.a_ii
    }

    pub fn b_e(&self) -> &[f64] {
        &self.b_e
    }

    pub fn b_i(&self) -> &[f64] {
        &self.b_i
    }

    /// Explicit abscissae c_E = A_EE 1.
    pub fn c_explicit(&self) -> Vec<f64> {
        self.a_ee.iter().map(|row| row.iter().sum()).collect()
    }

    /// Implicit abscissae c_I = A_II 1.
    pub fn c_implicit(&self) -> Vec<f64> {
        self.a_ii.iter().map(|row| row.iter().sum()).collect()
    }
}

fn check_shape(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows {
        return Err(Error::Dimension(format!("{name} has {} rows, expected {rows}", m.len())));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Dimension(format!(
                "{name} row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
    }
    Ok(())
}

/// Checks every structural invariant and returns the list of violations
/// (empty means the tableau is valid). Row-sum equalities are compared with
/// absolute tolerance [`TABLEAU_TOL`].
pub fn validate_tableau(t: &GarkTableau) -> Vec<String> {
    let mut violations = Vec::new();

    for (name, m) in
        [("A_EE", &t.a_ee), ("A_EI", &t.a_ei), ("A_IE", &t.a_ie), ("A_II", &t.a_ii)]
    {
        for (i, row) in m.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    violations.push(format!("{name}[{i}][{j}] = {x} is not finite"));
                }
            }
        }
    }
    for (name, v) in [("b_E", &t.b_e), ("b_I", &t.b_i)] {
        for (i, &x) in v.iter().enumerate() {
            if !x.is_finite() {
                violations.push(format!("{name}[{i}] = {x} is not finite"));
            }
        }
    }

    // Triangularity. A_EE and A_EI are strictly lower (zero for j >= i);
    // A_IE and A_II allow the diagonal (zero for j > i).
    for (name, m, strict) in [
        ("A_EE", &t.a_ee, true),
        ("A_EI", &t.a_ei, true),
        ("A_IE", &t.a_ie, false),
        ("A_II", &t.a_ii, false),
    ] {
        for (i, row) in m.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                let must_be_zero = if strict { j >= i } else { j > i };
                if must_be_zero && x.abs() > TABLEAU_TOL {
                    let kind = if strict { "strictly lower" } else { "lower" };
                    violations
                        .push(format!("{name} not {kind} triangular: {name}[{i}][{j}] = {x}"));
                }
            }
        }
    }

    // Internal consistency: the coupling-block row sums must reproduce the
    // abscissae of the partition they feed.
    let c_e = t.c_explicit();
    let c_i = t.c_implicit();
    for (i, row) in t.a_ei.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - c_e[i]).abs() > TABLEAU_TOL {
            violations.push(format!(
                "internal consistency A_EI*1 = c_E violated at row {i}: {sum} vs {}",
                c_e[i]
            ));
        }
    }
    for (i, row) in t.a_ie.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - c_i[i]).abs() > TABLEAU_TOL {
            violations.push(format!(
                "internal consistency A_IE*1 = c_I violated at row {i}: {sum} vs {}",
                c_i[i]
            ));
        }
    }

    violations
}

/// Order-condition report for a structurally valid tableau.
///
/// Order 1 requires `sum(b_E) = sum(b_I) = 1`; order 2, given internal
/// consistency, additionally requires `b_E . c_E = b_I . c_I = 1/2`.
/// Residuals are absolute deviations from the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub order1_satisfied: bool,
    pub order2_satisfied: bool,
    /// (condition name, |value - target|) for each checked condition.
    pub residuals: Vec<(String, f64)>,
}

impl OrderReport {
    pub fn residual(&self, name: &str) -> Option<f64> {
        self.residuals.iter().find(|(n, _)| n == name).map(|&(_, r)| r)
    }
}

/// Evaluates the order-1 and order-2 conditions. Fails with `InvalidTableau`
/// when the structural invariants do not hold (the order-2 reduction assumes
/// internal consistency).
pub fn check_order_conditions(t: &GarkTableau) -> Result<OrderReport> {
    let violations = validate_tableau(t);
    if !violations.is_empty() {
        return Err(Error::InvalidTableau(violations));
    }

    let c_e = t.c_explicit();
    let c_i = t.c_implicit();
    let sum_b_e: f64 = t.b_e.iter().sum();
    let sum_b_i: f64 = t.b_i.iter().sum();
    let be_ce: f64 = t.b_e.iter().zip(&c_e).map(|(b, c)| b * c).sum();
    let bi_ci: f64 = t.b_i.iter().zip(&c_i).map(|(b, c)| b * c).sum();

    let residuals = vec![
        ("sum_b_E".to_string(), (sum_b_e - 1.0).abs()),
        ("sum_b_I".to_string(), (sum_b_i - 1.0).abs()),
        ("bE_dot_cE".to_string(), (be_ce - 0.5).abs()),
        ("bI_dot_cI".to_string(), (bi_ci - 0.5).abs()),
    ];
    let order1_satisfied = residuals[0].1 <= TABLEAU_TOL && residuals[1].1 <= TABLEAU_TOL;
    let order2_satisfied = residuals[2].1 <= TABLEAU_TOL && residuals[3].1 <= TABLEAU_TOL;

    Ok(OrderReport { order1_satisfied, order2_satisfied, residuals })
}

/// The one-stage IMEX Euler tableau (forward Euler explicit part, backward
/// Euler implicit part). First order; applied to the Adam ODE under the
/// first-order beta map it reproduces discrete Adam.
pub fn imex_euler() -> GarkTableau {
    GarkTableau::new(
        vec![vec![0.0]],
        vec![vec![0.0]],
        vec![vec![1.0]],
        vec![vec![1.0]],
        vec![1.0],
        vec![1.0],
    )
    .expect("builtin shape")
}

/// The IMEX Trapezoidal tableau: explicit trapezoidal rule paired with the
/// implicit trapezoidal (Crank-Nicolson) rule. Second order.
pub fn imex_trapezoidal() -> GarkTableau {
    GarkTableau::new(
        vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        vec![vec![0.0, 0.0], vec![1.0, 0.0]],
        vec![vec![0.0, 0.0], vec![0.5, 0.5]],
        vec![vec![0.0, 0.0], vec![0.5, 0.5]],
        vec![0.5, 0.5],
        vec![0.5, 0.5],
    )
    .expect("builtin shape")
}

/// Three-stage pair: Shu-Osher SSPRK3 explicit part with a diagonally implicit
/// Lobatto-type companion on the abscissae {0, 1/2, 1} and Simpson weights.
///
/// `l22` and `l32` are the free coupling entries A_IE[1][1] and A_IE[2][1];
/// the remaining coupling coefficients are completed from internal consistency
/// and the second/third-order coupling conditions, which hold for every
/// (l22, l32). Defaults are l22 = 0.2, l32 = 0.1.
pub fn ssprk3_lobatto_iiic(l22: f64, l32: f64) -> GarkTableau {
    // Third-order coupling condition b_I . (A_IE c_E) = 1/6 fixes the last
    // diagonal entry; the row sum fixes the first column.
    let y33 = 2.0 - 8.0 * l22 - 2.0 * l32;
    let y31 = 1.0 - l32 - y33;
    GarkTableau::new(
        vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.25, 0.25, 0.0]],
        vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.0]],
        vec![vec![0.0, 0.0, 0.0], vec![0.5 - l22, l22, 0.0], vec![y31, l32, y33]],
        vec![
            vec![0.0, 0.0, 0.0],
            vec![0.25, 0.25, 0.0],
            vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        ],
        vec![1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    )
    .expect("builtin shape")
}

/// Four-stage pair: classical RK4 explicit part with a diagonally implicit
/// Lobatto-type companion on the abscissae {0, 1/2, 1/2, 1}.
///
/// `alpha` splits the Simpson midpoint weight across the two half-step
/// implicit stages, b_I = [1/6, alpha, 2/3 - alpha, 1/6]; orders 1-2 (and the
/// third-order coupling conditions) hold for every alpha. Default alpha = 0.5.
pub fn rk4_lobatto_iiic(alpha: f64) -> GarkTableau {
    GarkTableau::new(
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ],
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.0, 0.0],
            vec![0.0, 0.5, 0.0, 0.0],
            vec![0.0, 0.5, 0.5, 0.0],
        ],
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.25, 0.25, 0.0, 0.0],
            vec![0.25, 0.0, 0.25, 0.0],
            vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        ],
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![0.25, 0.25, 0.0, 0.0],
            vec![0.25, 0.0, 0.25, 0.0],
            vec![1.0 / 6.0, alpha, 2.0 / 3.0 - alpha, 1.0 / 6.0],
        ],
        vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        vec![1.0 / 6.0, alpha, 2.0 / 3.0 - alpha, 1.0 / 6.0],
    )
    .expect("builtin shape")
}

/// Default tunables for the higher-order builtin pairs.
pub const SSPRK3_LOBATTO_DEFAULTS: (f64, f64) = (0.2, 0.1);
pub const RK4_LOBATTO_DEFAULT_ALPHA: f64 = 0.5;

/// Looks up a builtin tableau by name. Accepted names (case-insensitive):
/// `imex-euler`, `imex-trapezoidal`, `ssprk3-lobattoiiic`, `rk4-lobattoiiic`.
/// The last two take optional tunables, e.g. `ssprk3-lobattoiiic(0.2,0.1)`
/// and `rk4-lobattoiiic(0.5)`.
pub fn builtin_tableau(name: &str) -> Result<GarkTableau> {
    let trimmed = name.trim();
    let (base, args) = match trimmed.find('(') {
        Some(open) => {
            let close = trimmed
                .rfind(')')
                .ok_or_else(|| Error::UnknownTableau(format!("{trimmed}: unclosed '('")))?;
            let args: Vec<f64> = trimmed[open + 1..close]
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::UnknownTableau(format!("{trimmed}: bad tunable '{}'", s.trim()))
                    })
                })
                .collect::<Result<_>>()?;
            (&trimmed[..open], args)
        }
        None => (trimmed, Vec::new()),
    };

    match base.to_ascii_lowercase().as_str() {
        "imex-euler" => Ok(imex_euler()),
        "imex-trapezoidal" => Ok(imex_trapezoidal()),
        "ssprk3-lobattoiiic" => match args.len() {
            0 => Ok(ssprk3_lobatto_iiic(SSPRK3_LOBATTO_DEFAULTS.0, SSPRK3_LOBATTO_DEFAULTS.1)),
            2 => Ok(ssprk3_lobatto_iiic(args[0], args[1])),
            n => Err(Error::UnknownTableau(format!(
                "ssprk3-lobattoiiic takes 0 or 2 tunables, got {n}"
            ))),
        },
        "rk4-lobattoiiic" => match args.len() {
            0 => Ok(rk4_lobatto_iiic(RK4_LOBATTO_DEFAULT_ALPHA)),
            1 => Ok(rk4_lobatto_iiic(args[0])),
            n => {
                Err(Error::UnknownTableau(format!("rk4-lobattoiiic takes 0 or 1 tunables, got {n}")))
            }
        },
        _ => Err(Error::UnknownTableau(trimmed.to_string())),
    }
}

/// Names of all builtin tableaus with default tunables, for enumeration in
/// tests and the CLI.
pub const BUILTIN_NAMES: [&str; 4] =
    ["imex-euler", "imex-trapezoidal", "ssprk3-lobattoiiic", "rk4-lobattoiiic"];

// --- file format -----------------------------------------------------------
//
//   s_explicit 2
//   s_implicit 2
//   A_EE
//   0 0
//   1 0
//   ... (A_EI, A_IE, A_II in that order)
//   b_E 0.5 0.5
//   b_I 0.5 0.5
//
// '#' starts a comment, blank lines are skipped, c vectors are never stored.

/// Renders a tableau in the file format with 17-significant-digit decimals
/// (exact round trip through [`parse_tableau_file`]).
pub fn format_tableau(t: &GarkTableau) -> String {
    let mut out = String::new();
    out.push_str(&format!("s_explicit {}\n", t.s_explicit));
    out.push_str(&format!("s_implicit {}\n", t.s_implicit));
    for (name, m) in
        [("A_EE", &t.a_ee), ("A_EI", &t.a_ei), ("A_IE", &t.a_ie), ("A_II", &t.a_ii)]
    {
        out.push_str(name);
        out.push('\n');
        for row in m.iter() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    for (name, v) in [("b_E", &t.b_e), ("b_I", &t.b_i)] {
        let cells: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
        out.push_str(&format!("{name} {}\n", cells.join(" ")));
    }
    out
}

struct Lines<'a> {
    // (1-based line number, content with comments stripped)
    items: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            last_line = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            if !content.trim().is_empty() {
                items.push((idx + 1, content.trim()));
            }
        }
        Lines { items, pos: 0, last_line }
    }

    fn next(&mut self, expected: &str) -> Result<(usize, &'a str)> {
        match self.items.get(self.pos) {
            Some(&(line, content)) => {
                self.pos += 1;
                Ok((line, content))
            }
            None => Err(Error::Parse {
                line: self.last_line + 1,
                msg: format!("unexpected end of file, expected {expected}"),
            }),
        }
    }
}

fn parse_floats(line: usize, text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Parse { line, msg: format!("bad number '{tok}' in {what}") })
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Parse {
            line,
            msg: format!("{what} has {} entries, expected {expected}", values.len()),
        });
    }
    Ok(values)
}

/// Parses the plain-text tableau format. The result is validated before
/// return; structural violations surface as `InvalidTableau`.
pub fn parse_tableau_file(text: &str) -> Result<GarkTableau> {
    let mut lines = Lines::new(text);

    let mut sizes = [0usize; 2];
    for (slot, key) in sizes.iter_mut().zip(["s_explicit", "s_implicit"]) {
        let (line, content) = lines.next(key)?;
        let mut parts = content.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => {
                *slot = v.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("bad stage count '{v}' for {key}"),
                })?;
            }
            _ => return Err(Error::Parse { line, msg: format!("expected '{key} <count>'") }),
        }
        if *slot == 0 {
            return Err(Error::Parse { line, msg: format!("{key} must be at least 1") });
        }
    }
    let (s_e, s_i) = (sizes[0], sizes[1]);

    let mut read_matrix = |name: &str, rows: usize, cols: usize| -> Result<Vec<Vec<f64>>> {
        let (line, content) = lines.next(name)?;
        if content != name {
            return Err(Error::Parse { line, msg: format!("expected section '{name}'") });
        }
        (0..rows)
            .map(|i| {
                let (line, content) = lines.next(&format!("{name} row {i}"))?;
                parse_floats(line, content, cols, &format!("{name} row {i}"))
            })
            .collect()
    };

    let a_ee = read_matrix("A_EE", s_e, s_e)?;
    let a_ei = read_matrix("A_EI", s_e, s_i)?;
    let a_ie = read_matrix("A_IE", s_i, s_e)?;
    let a_ii = read_matrix("A_II", s_i, s_i)?;

    let mut read_weights = |name: &str, len: usize| -> Result<Vec<f64>> {
        let (line, content) = lines.next(name)?;
        match content.strip_prefix(name) {
            Some(rest) if rest.starts_with(char::is_whitespace) => {
                parse_floats(line, rest, len, name)
            }
            _ => Err(Error::Parse { line, msg: format!("expected '{name} <{len} weights>'") }),
        }
    };
    let b_e = read_weights("b_E", s_e)?;
    let b_i = read_weights("b_I", s_i)?;

    if let Some(&(line, content)) = lines.items.get(lines.pos) {
        return Err(Error::Parse { line, msg: format!("unexpected trailing content '{content}'") });
    }

    let tableau = GarkTableau::new(a_ee, a_ei, a_ie, a_ii, b_e, b_i)?;
    let violations = validate_tableau(&tableau);
    if !violations.is_empty() {
        return Err(Error::InvalidTableau(violations));
    }
    Ok(tableau)
}
