//! Local-polynomial differentiation filters.
//!
//! A filter bank is an `(m+1) x N` coefficient matrix `D` whose row `d`
//! estimates the `d`-th time derivative of a signal at a fixed position
//! inside a sliding window of `N` samples. Rows are the minimum Frobenius
//! norm solution of the natural conditions `D A = B`, i.e. every row
//! differentiates polynomials of degree `< p` exactly.
//!
//! The solve is carried out in a Legendre basis on the normalized window
//! coordinate `s_k = 2 (k - i0) / (N - 1)`: the window samples are fitted by
//! least squares through a thin QR of the Legendre Vandermonde matrix and the
//! fit is differentiated at `s = 0`. This is algebraically identical to
//! `B (A^T A)^{-1} A^T` but avoids the Hilbert-like monomial normal equations.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which window columns a bank is allowed to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    Full,
    /// Window indices 1, 3, 5, ... (1-based).
    OddColumns,
    /// Window indices 2, 4, 6, ... (1-based).
    EvenColumns,
}

impl Support {
    pub fn contains(self, k: usize) -> bool {
        match self {
            Support::Full => true,
            Support::OddColumns => k % 2 == 1,
            Support::EvenColumns => k % 2 == 0,
        }
    }

    /// 1-based window indices in the support of a length-`n` window.
    pub fn indices(self, n: usize) -> Vec<usize> {
        (1..=n).filter(|&k| self.contains(k)).collect()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Support::Full => "full",
            Support::OddColumns => "odd-columns",
            Support::EvenColumns => "even-columns",
        }
    }
}

/// Design parameters of a filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Window length in samples.
    #[serde(rename = "N")]
    pub window: usize,
    /// Accuracy order: polynomials of degree `<= p - 1` are differentiated exactly.
    pub p: usize,
    /// Highest derivative order produced.
    pub m: usize,
    /// Evaluation position in 1-based window-index units (may be half-integer).
    #[serde(default)]
    pub i0: Option<f64>,
    /// Sample period.
    pub h: f64,
    #[serde(default = "default_support")]
    pub support: Support,
}

fn default_support() -> Support {
    Support::Full
}

impl FilterSpec {
    /// Centered full-support spec, `i0 = (N + 1) / 2`.
    pub fn centered(window: usize, p: usize, m: usize, h: f64) -> Self {
        FilterSpec {
            window,
            p,
            m,
            i0: None,
            h,
            support: Support::Full,
        }
    }

    pub fn with_i0(mut self, i0: f64) -> Self {
        self.i0 = Some(i0);
        self
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    /// Evaluation position, defaulting to the window center.
    pub fn eval_position(&self) -> f64 {
        self.i0.unwrap_or((self.window as f64 + 1.0) / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.window;
        if self.p <= self.m {
            return Err(Error::InvalidSpec(format!(
                "accuracy order p = {} must exceed derivative order m = {}",
                self.p, self.m
            )));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "sample period h = {} must be positive",
                self.h
            )));
        }
        let i0 = self.eval_position();
        if !(i0.is_finite() && i0 >= 1.0 && i0 <= n as f64) {
            return Err(Error::InvalidSpec(format!("i0 = {i0} outside [1, {n}]")));
        }
        match self.support {
            Support::Full if n < self.p => Err(Error::Underdetermined {
                constraints: self.p,
                support: n,
            }),
            Support::OddColumns | Support::EvenColumns if n / 2 < self.p => {
                Err(Error::Underdetermined {
                    constraints: self.p,
                    support: n / 2,
                })
            }
            _ => Ok(()),
        }
    }
}

/// Natural conditions `D A = B`.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    /// `N x p`, `A_ij = (i - i0)^j h^j / j!`. Rows outside the support are zero.
    pub a: DMatrix<f64>,
    /// `(m+1) x p`, `B_dj = delta_dj`.
    pub b: DMatrix<f64>,
    /// 1-based supported window indices.
    pub rows: Vec<usize>,
}

impl ConstraintSystem {
    /// `A` with only the supported rows.
    pub fn restricted(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.a.ncols(), |r, c| {
            self.a[(self.rows[r] - 1, c)]
        })
    }
}

pub fn build_constraints(spec: &FilterSpec) -> Result<ConstraintSystem> {
    spec.validate()?;
    let rows = spec.support.indices(spec.window);
    if rows.len() < spec.p {
        return Err(Error::Underdetermined {
            constraints: spec.p,
            support: rows.len(),
        });
    }
    let i0 = spec.eval_position();
    let mut a = DMatrix::zeros(spec.window, spec.p);
    for &i in &rows {
        let x = (i as f64 - i0) * spec.h;
        let mut term = 1.0;
        for j in 0..spec.p {
            if j > 0 {
                term *= x / j as f64;
            }
            a[(i - 1, j)] = term;
        }
    }
    let b = DMatrix::from_fn(spec.m + 1, spec.p, |d, j| if d == j { 1.0 } else { 0.0 });
    Ok(ConstraintSystem { a, b, rows })
}

/// A designed coefficient matrix together with its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub spec: FilterSpec,
    /// `(m+1) x N`; row `d` = derivative order, column `k - 1` = window index `k`.
    pub coeffs: DMatrix<f64>,
}

/// Legendre polynomials `P_0..P_{p-1}` and their derivatives up to order `m` at `s`.
/// Returns `table[d][j] = P_j^{(d)}(s)`.
pub(crate) fn legendre_table(s: f64, p: usize, m: usize) -> Vec<Vec<f64>> {
    let mut table = vec![vec![0.0; p]; m + 1];
    for d in 0..=m {
        for j in 0..p {
            table[d][j] = match j {
                0 => {
                    if d == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                1 => match d {
                    0 => s,
                    1 => 1.0,
                    _ => 0.0,
                },
                _ => {
                    // (j) P_j = (2j-1) s P_{j-1} - (j-1) P_{j-2}, differentiated d times
                    let jf = j as f64;
                    let lower = if d > 0 {
                        d as f64 * table[d - 1][j - 1]
                    } else {
                        0.0
                    };
                    ((2.0 * jf - 1.0) * (s * table[d][j - 1] + lower)
                        - (jf - 1.0) * table[d][j - 2])
                        / jf
                }
            };
        }
    }
    table
}

/// Minimum-Frobenius-norm filter bank satisfying the natural conditions.
pub fn design_filter(spec: &FilterSpec) -> Result<FilterBank> {
    let cs = build_constraints(spec)?;
    let n = spec.window;
    let p = spec.p;
    let m = spec.m;
    let i0 = spec.eval_position();
    let half = if n > 1 { (n as f64 - 1.0) / 2.0 } else { 1.0 };

    // Legendre Vandermonde on the supported samples.
    let rows = &cs.rows;
    let mut v = DMatrix::zeros(rows.len(), p);
    for (r, &k) in rows.iter().enumerate() {
        let s = (k as f64 - i0) / half;
        let t = legendre_table(s, p, 0);
        for j in 0..p {
            v[(r, j)] = t[0][j];
        }
    }
    let qr = v.qr();
    let rmat = qr.r();
    let q = qr.q();

    let diag_max = (0..p).map(|j| rmat[(j, j)].abs()).fold(0.0_f64, f64::max);
    let diag_min = (0..p)
        .map(|j| rmat[(j, j)].abs())
        .fold(f64::INFINITY, f64::min);
    let pivot = if diag_max > 0.0 {
        diag_min / diag_max
    } else {
        0.0
    };
    if !(pivot > 1e-13) {
        return Err(Error::RankDeficient { pivot });
    }

    // d/dt = (1 / (half h)) d/ds, evaluated at s = 0.
    let at_center = legendre_table(0.0, p, m);
    let mut coeffs = DMatrix::zeros(m + 1, n);
    for d in 0..=m {
        let scale = (half * spec.h).powi(-(d as i32));
        // Solve R^T w = g, then row = Q w.
        let mut w = vec![0.0; p];
        for i in 0..p {
            let mut acc = at_center[d][i] * scale;
            for (l, wl) in w.iter().enumerate().take(i) {
                acc -= rmat[(l, i)] * wl;
            }
            w[i] = acc / rmat[(i, i)];
        }
        for (r, &k) in rows.iter().enumerate() {
            let mut acc = 0.0;
            for (j, wj) in w.iter().enumerate() {
                acc += q[(r, j)] * wj;
            }
            coeffs[(d, k - 1)] = acc;
        }
    }
    Ok(FilterBank {
        spec: *spec,
        coeffs,
    })
}

/// Staggered pair `(D, D~)` sharing `N`, `p`, `m` and `i0`: `D` uses only odd
/// window indices and `D~` only even ones, so their outputs depend on disjoint
/// samples.
pub fn design_staggered_pair(spec: &FilterSpec) -> Result<(FilterBank, FilterBank)> {
    let odd = design_filter(&spec.with_support(Support::OddColumns))?;
    let even = design_filter(&spec.with_support(Support::EvenColumns))?;
    Ok((odd, even))
}

/// Smoothed state and derivative estimates at the filter times.
#[derive(Debug, Clone, PartialEq)]
pub struct JetSeries {
    /// Flattened `[j][d][l]`.
    values: Vec<f64>,
    pub times: Vec<f64>,
    pub h: f64,
    pub m: usize,
    pub d_x: usize,
}

impl JetSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Width of one jet point, `(m+1) * d_x`.
    pub fn point_width(&self) -> usize {
        (self.m + 1) * self.d_x
    }

    pub fn get(&self, j: usize, d: usize, l: usize) -> f64 {
        self.values[j * self.point_width() + d * self.d_x + l]
    }

    /// Jet at filter time `j`, laid out as `[d][l]` (extended coordinate `d * d_x + l`).
    pub fn point(&self, j: usize) -> &[f64] {
        let w = self.point_width();
        &self.values[j * w..(j + 1) * w]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.point_width())
    }

    /// Same jet, but with derivative orders above `m` dropped.
    pub fn truncated(&self, m: usize) -> JetSeries {
        assert!(m <= self.m);
        let mut values = Vec::with_capacity(self.len() * (m + 1) * self.d_x);
        for pt in self.points() {
            values.extend_from_slice(&pt[..(m + 1) * self.d_x]);
        }
        JetSeries {
            values,
            times: self.times.clone(),
            h: self.h,
            m,
            d_x: self.d_x,
        }
    }
}

impl FilterBank {
    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn window(&self) -> usize {
        self.spec.window
    }

    /// Filter `z` (`n x d_x`, one column per channel) whose first sample sits at `t_start`.
    pub fn apply(&self, z: &DMatrix<f64>, t_start: f64) -> Result<JetSeries> {
        let n = z.nrows();
        let window = self.window();
        if n < window {
            return Err(Error::SeriesTooShort { len: n, window });
        }
        let d_x = z.ncols();
        let m = self.m();
        let n_prime = n - window + 1;
        let width = (m + 1) * d_x;
        let mut values = vec![0.0; n_prime * width];

        // Sparse rows for parity-masked banks.
        let taps: Vec<Vec<(usize, f64)>> = (0..=m)
            .map(|d| {
                (0..window)
                    .filter(|&k| self.spec.support.contains(k + 1))
                    .map(|k| (k, self.coeffs[(d, k)]))
                    .collect()
            })
            .collect();
        let dense: Vec<Vec<f64>> = (0..=m)
            .map(|d| self.coeffs.row(d).iter().copied().collect())
            .collect();

        for l in 0..d_x {
            let col = z.column(l);
            let col = col.as_slice();
            for d in 0..=m {
                for j in 0..n_prime {
                    let acc = if self.spec.support == Support::Full {
                        dense[d]
                            .iter()
                            .zip(&col[j..j + window])
                            .map(|(c, x)| c * x)
                            .sum::<f64>()
                    } else {
                        taps[d].iter().map(|&(k, c)| c * col[j + k]).sum::<f64>()
                    };
                    values[j * width + d * d_x + l] = acc;
                }
            }
        }

        let h = self.spec.h;
        let offset = self.spec.eval_position() - 1.0;
        let times = (0..n_prime)
            .map(|j| t_start + (j as f64 + offset) * h)
            .collect();
        Ok(JetSeries {
            values,
            times,
            h,
            m,
            d_x,
        })
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..=self.m()).map(|d| self.coeffs.row(d).norm()).collect()
    }

    /// `d,k,coeff` rows with 1-based `k`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["d", "k", "coeff"])?;
        for d in 0..=self.m() {
            for k in 0..self.window() {
                wtr.write_record([
                    d.to_string(),
                    (k + 1).to_string(),
                    format!("{:e}", self.coeffs[(d, k)]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON sidecar with the design fields.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "N": self.spec.window,
            "p": self.spec.p,
            "m": self.spec.m,
            "i0": self.spec.eval_position(),
            "h": self.spec.h,
            "support": self.spec.support.as_str(),
        })
    }
}

pub fn apply(bank: &FilterBank, z: &DMatrix<f64>, t_start: f64) -> Result<JetSeries> {
    bank.apply(z, t_start)
}

pub fn row_norms(bank: &FilterBank) -> Vec<f64> {
    bank.row_norms()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constraints_three_point() {
        let cs = build_constraints(&FilterSpec::centered(3, 2, 1, 1.0)).unwrap();
        let expect = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(cs.a, expect);
        assert_eq!(cs.b, DMatrix::identity(2, 2));
    }

    #[test]
    fn constraints_quadratic_column() {
        let cs = build_constraints(&FilterSpec::centered(3, 3, 0, 0.5)).unwrap();
        let col: Vec<f64> = cs.a.column(2).iter().copied().collect();
        assert_eq!(col, vec![0.125, 0.0, 0.125]);
    }

    #[test]
    fn constraints_reject_underdetermined() {
        let spec = FilterSpec::centered(7, 4, 1, 1.0).with_support(Support::OddColumns);
        assert!(matches!(
            build_constraints(&spec),
            Err(Error::Underdetermined { .. })
        ));
        assert!(matches!(
            build_constraints(&FilterSpec::centered(3, 4, 1, 1.0)),
            Err(Error::Underdetermined { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(FilterSpec::centered(5, 2, 2, 1.0).validate().is_err());
        assert!(FilterSpec::centered(5, 3, 1, 0.0).validate().is_err());
        assert!(FilterSpec::centered(5, 3, 1, 1.0)
            .with_i0(0.5)
            .validate()
            .is_err());
        assert!(FilterSpec::centered(5, 3, 1, 1.0)
            .with_i0(5.0)
            .validate()
            .is_ok());
    }

    #[test]
    fn three_point_smoother_and_difference() {
        let bank = design_filter(&FilterSpec::centered(3, 2, 1, 1.0)).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(bank.coeffs[(0, k)], 1.0 / 3.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(bank.coeffs[(1, 0)], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(bank.coeffs[(1, 1)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(bank.coeffs[(1, 2)], 0.5, epsilon = 1e-14);
        let norms = bank.row_norms();
        assert_abs_diff_eq!(norms[0], 1.0 / 3f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(norms[1], 1.0 / 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn three_point_interpolation() {
        let bank = design_filter(&FilterSpec::centered(3, 3, 1, 1.0)).unwrap();
        let row0: Vec<f64> = bank.coeffs.row(0).iter().copied().collect();
        for (a, b) in row0.iter().zip([0.0, 1.0, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn staggered_four_point() {
        let spec = FilterSpec::centered(4, 2, 1, 1.0);
        let (odd, even) = design_staggered_pair(&spec).unwrap();
        let want_odd = [[0.25, 0.0, 0.75, 0.0], [-0.5, 0.0, 0.5, 0.0]];
        let want_even = [[0.0, 0.75, 0.0, 0.25], [0.0, -0.5, 0.0, 0.5]];
        for d in 0..2 {
            for k in 0..4 {
                assert_abs_diff_eq!(odd.coeffs[(d, k)], want_odd[d][k], epsilon = 1e-14);
                assert_abs_diff_eq!(even.coeffs[(d, k)], want_even[d][k], epsilon = 1e-14);
            }
        }
        // zeros outside the support are exact
        assert_eq!(odd.coeffs[(0, 1)], 0.0);
        assert_eq!(even.coeffs[(1, 2)], 0.0);
    }

    #[test]
    fn legendre_values_and_derivatives() {
        // P_3 = (5s^3 - 3s)/2, P_3' = (15 s^2 - 3)/2, P_3'' = 15 s
        let s = 0.3;
        let t = legendre_table(s, 4, 3);
        assert_abs_diff_eq!(t[0][3], (5.0 * s * s * s - 3.0 * s) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[1][3], (15.0 * s * s - 3.0) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t[2][3], 15.0 * s, epsilon = 1e-15);
        assert_abs_diff_eq!(t[3][3], 15.0, epsilon = 1e-15);
        assert_eq!(t[3][2], 0.0);
    }

    #[test]
    fn apply_reproduces_quadratic() {
        let h = 0.1;
        let spec = FilterSpec::centered(7, 3, 2, h);
        let bank = design_filter(&spec).unwrap();
        let t0 = 0.3;
        let q = |t: f64| 1.0 + 2.0 * t + 3.0 * t * t;
        let z = DMatrix::from_fn(20, 1, |i, _| q(t0 + i as f64 * h));
        let jet = bank.apply(&z, t0).unwrap();
        assert_eq!(jet.len(), 20 - 7 + 1);
        for j in 0..jet.len() {
            let t = jet.times[j];
            assert_abs_diff_eq!(t, t0 + (j as f64 + 3.0) * h, epsilon = 1e-12);
            assert_abs_diff_eq!(jet.get(j, 0, 0), q(t), epsilon = 1e-10);
            assert_abs_diff_eq!(jet.get(j, 1, 0), 2.0 + 6.0 * t, epsilon = 1e-9);
            assert_abs_diff_eq!(jet.get(j, 2, 0), 6.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn apply_constant_series() {
        let bank = design_filter(&FilterSpec::centered(9, 4, 2, 0.01)).unwrap();
        let z = DMatrix::from_element(30, 2, 2.5);
        let jet = bank.apply(&z, 0.0).unwrap();
        for pt in jet.points() {
            assert_abs_diff_eq!(pt[0], 2.5, epsilon = 1e-12);
            assert_abs_diff_eq!(pt[1], 2.5, epsilon = 1e-12);
            for v in &pt[2..] {
                assert!(v.abs() < 1e-7, "{v}");
            }
        }
    }

    #[test]
    fn apply_rejects_short_series() {
        let bank = design_filter(&FilterSpec::centered(9, 4, 2, 0.01)).unwrap();
        let z = DMatrix::zeros(8, 1);
        assert!(matches!(
            bank.apply(&z, 0.0),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn csv_export_shape() {
        let bank = design_filter(&FilterSpec::centered(5, 3, 1, 1.0)).unwrap();
        let mut buf = Vec::new();
        bank.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 5);
        assert!(text.starts_with("d,k,coeff\n"));
        let side = bank.sidecar();
        assert_eq!(side["N"], 5);
        assert_eq!(side["support"], "full");
    }
}
