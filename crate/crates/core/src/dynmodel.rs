//! Polynomial feature maps `phi(x, x', ..., x^(m-1), t)` with exact
//! gradients and Hessians.
//!
//! Extended coordinates are the jet entries `u^{l,(d)}` for channel `l` and
//! derivative order `d <= m`, flattened as `d * d_x + l`, plus time `t`
//! which is carried separately.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One extended coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Coord {
    /// Channel `l` (0-based), derivative order `d`.
    State {
        l: usize,
        d: usize,
    },
    Time,
}

impl Coord {
    fn parse(key: &str) -> Result<Coord> {
        if key == "t" {
            return Ok(Coord::Time);
        }
        let bad = || {
            Error::Model(format!(
                "bad coordinate key {key:?}, expected \"x<l>.<d>\" or \"t\""
            ))
        };
        let rest = key.strip_prefix('x').ok_or_else(bad)?;
        let (l, d) = rest.split_once('.').ok_or_else(bad)?;
        let l: usize = l.parse().map_err(|_| bad())?;
        let d: usize = d.parse().map_err(|_| bad())?;
        if l == 0 {
            return Err(bad());
        }
        Ok(Coord::State { l: l - 1, d })
    }

    fn key(&self) -> String {
        match self {
            Coord::State { l, d } => format!("x{}.{}", l + 1, d),
            Coord::Time => "t".to_string(),
        }
    }
}

/// `coeff * prod_i coord_i^power_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialTerm {
    pub coeff: f64,
    pub powers: Vec<(Coord, u32)>,
}

impl MonomialTerm {
    pub fn new(coeff: f64, powers: &[(Coord, u32)]) -> Self {
        let mut merged: BTreeMap<Coord, u32> = BTreeMap::new();
        for &(c, e) in powers {
            if e > 0 {
                *merged.entry(c).or_default() += e;
            }
        }
        MonomialTerm {
            coeff,
            powers: merged.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TermConfig {
    coeff: f64,
    #[serde(default)]
    powers: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelConfig {
    d_x: usize,
    m: usize,
    features: Vec<Vec<TermConfig>>,
}

/// A feature map given as sums of monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    pub d_x: usize,
    pub m: usize,
    pub features: Vec<Vec<MonomialTerm>>,
    pub name: Option<String>,
}

/// Parameter matrix `theta`, `d_phi x d_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix(pub DMatrix<f64>);

impl ParamMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
            return Err(Error::Dimension(
                "parameter rows must be non-empty and equal length".into(),
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Dimension("parameter entries must be finite".into()));
        }
        Ok(ParamMatrix(DMatrix::from_fn(nr, nc, |i, j| rows[i][j])))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.0
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Row-major entries.
    pub fn row_major(&self) -> Vec<f64> {
        self.rows().into_iter().flatten().collect()
    }
}

impl FeatureModel {
    pub fn new(d_x: usize, m: usize, features: Vec<Vec<MonomialTerm>>) -> Result<Self> {
        let model = FeatureModel {
            d_x,
            m,
            features,
            name: None,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.d_x == 0 || self.m == 0 {
            return Err(Error::Model("d_x and m must be positive".into()));
        }
        if self.features.is_empty() {
            return Err(Error::Model("at least one feature is required".into()));
        }
        for term in self.features.iter().flatten() {
            if !term.coeff.is_finite() {
                return Err(Error::Model("non-finite coefficient".into()));
            }
            for (c, _) in &term.powers {
                if let Coord::State { l, d } = *c {
                    if l >= self.d_x {
                        return Err(Error::Model(format!(
                            "channel x{} beyond d_x = {}",
                            l + 1,
                            self.d_x
                        )));
                    }
                    if d >= self.m {
                        return Err(Error::Model(format!(
                            "features may only use derivatives below order m = {}, found x{}.{}",
                            self.m,
                            l + 1,
                            d
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Van der Pol: `y'' = theta_1 (1 - y^2) y' + theta_2 y`.
    pub fn van_der_pol() -> Self {
        let y = Coord::State { l: 0, d: 0 };
        let yd = Coord::State { l: 0, d: 1 };
        FeatureModel {
            d_x: 1,
            m: 2,
            features: vec![
                vec![
                    MonomialTerm::new(1.0, &[(yd, 1)]),
                    MonomialTerm::new(-1.0, &[(y, 2), (yd, 1)]),
                ],
                vec![MonomialTerm::new(1.0, &[(y, 1)])],
            ],
            name: Some("vdp".into()),
        }
    }

    /// Lorenz with features `(x1, x2, x3, x1 x2, x1 x3)`.
    pub fn lorenz() -> Self {
        let x = |l| Coord::State { l, d: 0 };
        FeatureModel {
            d_x: 3,
            m: 1,
            features: vec![
                vec![MonomialTerm::new(1.0, &[(x(0), 1)])],
                vec![MonomialTerm::new(1.0, &[(x(1), 1)])],
                vec![MonomialTerm::new(1.0, &[(x(2), 1)])],
                vec![MonomialTerm::new(1.0, &[(x(0), 1), (x(1), 1)])],
                vec![MonomialTerm::new(1.0, &[(x(0), 1), (x(2), 1)])],
            ],
            name: Some("lorenz".into()),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "vdp" => Some(Self::van_der_pol()),
            "lorenz" => Some(Self::lorenz()),
            _ => None,
        }
    }

    /// Parse the JSON model config.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        let mut features = Vec::with_capacity(cfg.features.len());
        for f in cfg.features {
            let mut terms = Vec::with_capacity(f.len());
            for t in f {
                let powers = t
                    .powers
                    .iter()
                    .map(|(k, e)| Ok((Coord::parse(k)?, *e)))
                    .collect::<Result<Vec<_>>>()?;
                terms.push(MonomialTerm::new(t.coeff, &powers));
            }
            features.push(terms);
        }
        FeatureModel::new(cfg.d_x, cfg.m, features)
    }

    /// Built-in name or JSON text.
    pub fn from_name_or_json(spec: &str) -> Result<Self> {
        match Self::builtin(spec) {
            Some(m) => Ok(m),
            None => Self::from_json(spec),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let features: Vec<Vec<TermConfig>> = self
            .features
            .iter()
            .map(|f| {
                f.iter()
                    .map(|t| TermConfig {
                        coeff: t.coeff,
                        powers: t.powers.iter().map(|(c, e)| (c.key(), *e)).collect(),
                    })
                    .collect()
            })
            .collect();
        serde_json::to_value(ModelConfig {
            d_x: self.d_x,
            m: self.m,
            features,
        })
        .expect("model config serializes")
    }

    pub fn d_phi(&self) -> usize {
        self.features.len()
    }

    /// Number of extended state coordinates, `(m+1) d_x`.
    pub fn k(&self) -> usize {
        (self.m + 1) * self.d_x
    }

    fn index(&self, c: Coord) -> Option<usize> {
        match c {
            Coord::State { l, d } => Some(d * self.d_x + l),
            Coord::Time => None,
        }
    }

    fn value_of(&self, c: Coord, u: &[f64], t: f64) -> f64 {
        match self.index(c) {
            Some(i) => u[i],
            None => t,
        }
    }

    fn check_point(&self, u: &[f64]) {
        assert_eq!(
            u.len(),
            self.k(),
            "extended point must have (m+1)*d_x entries"
        );
    }

    pub fn eval_features(&self, u: &[f64], t: f64) -> DVector<f64> {
        self.check_point(u);
        DVector::from_iterator(
            self.d_phi(),
            self.features.iter().map(|f| {
                f.iter()
                    .map(|term| {
                        term.powers.iter().fold(term.coeff, |acc, &(c, e)| {
                            acc * self.value_of(c, u, t).powi(e as i32)
                        })
                    })
                    .sum::<f64>()
            }),
        )
    }

    /// `d_phi x K` Jacobian with respect to the state coordinates.
    pub fn eval_gradient(&self, u: &[f64], t: f64) -> DMatrix<f64> {
        self.check_point(u);
        let mut g = DMatrix::zeros(self.d_phi(), self.k());
        for (a, f) in self.features.iter().enumerate() {
            for term in f {
                for (i, &(ci, ei)) in term.powers.iter().enumerate() {
                    let Some(col) = self.index(ci) else { continue };
                    let mut v =
                        term.coeff * ei as f64 * self.value_of(ci, u, t).powi(ei as i32 - 1);
                    for (jj, &(cj, ej)) in term.powers.iter().enumerate() {
                        if jj != i {
                            v *= self.value_of(cj, u, t).powi(ej as i32);
                        }
                    }
                    g[(a, col)] += v;
                }
            }
        }
        g
    }

    /// One symmetric `K x K` Hessian per feature.
    pub fn eval_hessian(&self, u: &[f64], t: f64) -> Vec<DMatrix<f64>> {
        self.check_point(u);
        let k = self.k();
        self.features
            .iter()
            .map(|f| {
                let mut hess = DMatrix::zeros(k, k);
                for term in f {
                    let np = term.powers.len();
                    for i in 0..np {
                        let (ci, ei) = term.powers[i];
                        let Some(ri) = self.index(ci) else { continue };
                        // diagonal
                        if ei >= 2 {
                            let mut v = term.coeff
                                * (ei * (ei - 1)) as f64
                                * self.value_of(ci, u, t).powi(ei as i32 - 2);
                            for (jj, &(cj, ej)) in term.powers.iter().enumerate() {
                                if jj != i {
                                    v *= self.value_of(cj, u, t).powi(ej as i32);
                                }
                            }
                            hess[(ri, ri)] += v;
                        }
                        for j in (i + 1)..np {
                            let (cj, ej) = term.powers[j];
                            let Some(rj) = self.index(cj) else { continue };
                            let mut v = term.coeff
                                * ei as f64
                                * ej as f64
                                * self.value_of(ci, u, t).powi(ei as i32 - 1)
                                * self.value_of(cj, u, t).powi(ej as i32 - 1);
                            for (q, &(cq, eq)) in term.powers.iter().enumerate() {
                                if q != i && q != j {
                                    v *= self.value_of(cq, u, t).powi(eq as i32);
                                }
                            }
                            hess[(ri, rj)] += v;
                            hess[(rj, ri)] += v;
                        }
                    }
                }
                hess
            })
            .collect()
    }

    /// True when some feature has a nonzero second derivative anywhere.
    pub fn is_nonlinear(&self) -> bool {
        self.features.iter().flatten().any(|t| {
            t.powers
                .iter()
                .filter(|(c, _)| *c != Coord::Time)
                .map(|(_, e)| e)
                .sum::<u32>()
                >= 2
        })
    }

    /// `phi(u, t)^T theta`.
    pub fn rhs(&self, theta: &ParamMatrix, u: &[f64], t: f64) -> Result<DVector<f64>> {
        if theta.0.nrows() != self.d_phi() || theta.0.ncols() != self.d_x {
            return Err(Error::Dimension(format!(
                "theta is {}x{}, model needs {}x{}",
                theta.0.nrows(),
                theta.0.ncols(),
                self.d_phi(),
                self.d_x
            )));
        }
        if u.len() != self.k() {
            return Err(Error::Dimension(format!(
                "point has {} entries, model needs {}",
                u.len(),
                self.k()
            )));
        }
        let phi = self.eval_features(u, t);
        Ok(theta.0.tr_mul(&phi))
    }
}

/// Reference van der Pol parameter `(40, -400)`.
pub fn vdp_theta0() -> ParamMatrix {
    ParamMatrix(DMatrix::from_column_slice(2, 1, &[40.0, -400.0]))
}

/// Lorenz coefficient matrix for features `(x1, x2, x3, x1 x2, x1 x3)`.
pub fn lorenz_a0() -> ParamMatrix {
    ParamMatrix(DMatrix::from_row_slice(
        5,
        3,
        &[
            -10.0,
            28.0,
            0.0, //
            10.0,
            -1.0,
            0.0, //
            0.0,
            0.0,
            -8.0 / 3.0, //
            0.0,
            0.0,
            1.0, //
            0.0,
            -1.0,
            0.0,
        ],
    ))
}
