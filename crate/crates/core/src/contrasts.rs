//! Hypothesis matrices for the group × time repeated-measures design.
//!
//! With `P_n = I_n − J_n/n`:
//!
//! | effect      | matrix                     |
//! |-------------|----------------------------|
//! | Group       | `P_g ⊗ J_t/t ⊗ I_p`        |
//! | Time        | `J_g/g ⊗ P_t ⊗ I_p`        |
//! | Interaction | `P_g ⊗ P_t ⊗ I_p`          |
//!
//! All three are symmetric idempotent projectors on `R^{gpt}`.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Group,
    Time,
    Interaction,
    Custom,
}

impl Effect {
    /// The three standard effects, in reporting order.
    pub const STANDARD: [Effect; 3] = [Effect::Group, Effect::Time, Effect::Interaction];

    pub fn name(self) -> &'static str {
        match self {
            Effect::Group => "group",
            Effect::Time => "time",
            Effect::Interaction => "interaction",
            Effect::Custom => "custom",
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for Effect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "group" => Ok(Effect::Group),
            "time" => Ok(Effect::Time),
            "interaction" | "group:time" => Ok(Effect::Interaction),
            _ => Err(Error::InvalidArgument(format!("unknown effect {s:?}"))),
        }
    }
}

/// A contrast projector `T` together with the design it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisMatrix {
    pub effect: Effect,
    pub matrix: DMatrix<f64>,
    /// `(g, t, p)`
    pub dims: (usize, usize, usize),
}

impl HypothesisMatrix {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps a user-supplied contrast matrix.
    ///
    /// Returns warnings (not errors) when the matrix is not a symmetric
    /// idempotent projector; the statistic is still defined for any suitable
    /// contrast matrix.
    pub fn custom(matrix: DMatrix<f64>, dims: (usize, usize, usize)) -> Result<(Self, Vec<String>)> {
        let (g, t, p) = dims;
        let n = g * t * p;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "custom contrast must be {n}×{n}, got {}×{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let mut warnings = Vec::new();
        let asym = max_abs_diff(&matrix, &matrix.transpose());
        if asym > 1e-12 {
            warnings.push(format!("custom contrast is not symmetric (max |T−Tᵀ| = {asym:e})"));
        }
        let idem = max_abs_diff(&(&matrix * &matrix), &matrix);
        if idem > 1e-12 {
            warnings.push(format!("custom contrast is not idempotent (max |T²−T| = {idem:e})"));
        }
        Ok((
            HypothesisMatrix {
                effect: Effect::Custom,
                matrix,
                dims,
            },
            warnings,
        ))
    }
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `I_n − J_n / n`.
pub fn centering_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("centering matrix needs n ≥ 1".into()));
    }
    let off = -1.0 / n as f64;
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 + off } else { off }))
}

fn averaging_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, n, 1.0 / n as f64)
}

/// Kronecker product `A ⊗ B`; block `(i, j)` is `a_ij · B`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (q, r) = b.shape();
    DMatrix::from_fn(a.nrows() * q, a.ncols() * r, |row, col| {
        a[(row / q, col / r)] * b[(row % q, col % r)]
    })
}

/// Builds the hypothesis matrix for one of the standard effects.
pub fn hypothesis_matrix(effect: Effect, g: usize, t: usize, p: usize) -> Result<HypothesisMatrix> {
    if g < 2 && matches!(effect, Effect::Group | Effect::Interaction) {
        return Err(Error::InvalidArgument(format!(
            "{effect} effect needs at least 2 groups"
        )));
    }
    if g == 0 || t == 0 || p == 0 {
        return Err(Error::InvalidArgument("g, t and p must be positive".into()));
    }
    if t == 1 && matches!(effect, Effect::Time | Effect::Interaction) {
        return Err(Error::TimeContrastUndefined);
    }
    let ip = DMatrix::<f64>::identity(p, p);
    let (left, mid) = match effect {
        Effect::Group => (centering_matrix(g)?, averaging_matrix(t)),
        Effect::Time => (averaging_matrix(g), centering_matrix(t)?),
        Effect::Interaction => (centering_matrix(g)?, centering_matrix(t)?),
        Effect::Custom => {
            return Err(Error::InvalidArgument(
                "custom contrasts go through HypothesisMatrix::custom".into(),
            ))
        }
    };
    Ok(HypothesisMatrix {
        effect,
        matrix: kronecker(&kronecker(&left, &mid), &ip),
        dims: (g, t, p),
    })
}
