use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LossError;
use crate::autodiff::{Graph, Var};

/// Which constraints enter the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `λ·CTC + (1−λ)·ATT`
    Baseline,
    /// `λ·CTC + (1−λ)(α·ATT + (1−α)·JSD)`
    JsdOnly,
    /// `λ·CTC + (1−λ)(α·ATT + (1−α)·CD)`
    CdOnly,
    /// `λ·CTC + (1−λ)(α·ATT + (1−α)(β·JSD + (1−β)·CD))`
    Combined,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::CdOnly, Mode::JsdOnly, Mode::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::JsdOnly => "jsd_only",
            Mode::CdOnly => "cd_only",
            Mode::Combined => "combined",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode '{s}' (expected baseline, cd_only, jsd_only or combined)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// CTC weight λ.
    pub lambda: f64,
    /// Constraint gate α; α = 1 switches the constraints off.
    pub alpha: f64,
    /// JSD share β of the constraint in combined mode.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.2, alpha: 0.05, beta: 0.9 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, value) in [("lambda", self.lambda), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(LossError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Coefficients `[ctc, att, jsd, cd]` of the fused objective.
pub fn fusion_coefficients(w: &LossWeights, mode: Mode) -> [f64; 4] {
    let rest = 1.0 - w.lambda;
    let gate = 1.0 - w.alpha;
    match mode {
        Mode::Baseline => [w.lambda, rest, 0.0, 0.0],
        Mode::JsdOnly => [w.lambda, rest * w.alpha, rest * gate, 0.0],
        Mode::CdOnly => [w.lambda, rest * w.alpha, 0.0, rest * gate],
        Mode::Combined => [w.lambda, rest * w.alpha, rest * gate * w.beta, rest * gate * (1.0 - w.beta)],
    }
}

/// Fused objective on plain values.
pub fn mtl_value(l_ctc: f64, l_att: f64, l_jsd: f64, l_cd: f64, w: &LossWeights, mode: Mode) -> f64 {
    let c = fusion_coefficients(w, mode);
    [l_ctc, l_att, l_jsd, l_cd]
        .iter()
        .zip(c)
        .filter(|(_, c)| *c != 0.0)
        .map(|(l, c)| c * l)
        .sum()
}

/// Component loss nodes. Constraint nodes may be absent when their
/// coefficient is zero.
#[derive(Debug, Clone, Copy)]
pub struct ComponentLosses {
    pub ctc: Var,
    pub att: Var,
    pub jsd: Option<Var>,
    pub cd: Option<Var>,
}

/// Fused objective as a graph node. Terms with a zero coefficient are left
/// out of the graph entirely, so closing the constraint gate (α = 1)
/// reproduces the baseline objective bit for bit.
pub fn mtl_loss(g: &mut Graph, parts: &ComponentLosses, w: &LossWeights, mode: Mode) -> Result<Var, LossError> {
    w.validate()?;
    let c = fusion_coefficients(w, mode);
    let terms = [Some(parts.ctc), Some(parts.att), parts.jsd, parts.cd];
    let mut total: Option<Var> = None;
    for (i, (term, coef)) in terms.into_iter().zip(c).enumerate() {
        if coef == 0.0 {
            continue;
        }
        let Some(v) = term else {
            let name = ["ctc", "att", "jsd", "cd"][i];
            return Err(LossError::Graph(crate::autodiff::GraphError::Invalid {
                op: "mtl_loss",
                msg: format!("{mode} objective needs the {name} loss"),
            }));
        };
        let scaled = g.scale(v, coef);
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled)?,
        });
    }
    total.ok_or_else(|| {
        LossError::Graph(crate::autodiff::GraphError::Invalid { op: "mtl_loss", msg: "all coefficients are zero".into() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn lambda_one_is_ctc_only() {
        let w = LossWeights { lambda: 1.0, alpha: 0.3, beta: 0.4 };
        for mode in Mode::ALL {
            assert_eq!(mtl_value(2.5, 7.0, 9.0, 0.3, &w, mode), 2.5);
        }
    }

    #[test]
    fn closed_gate_reduces_to_baseline() {
        let w = LossWeights { lambda: 0.2, alpha: 1.0, beta: 0.9 };
        let base = mtl_value(1.3, 2.9, 0.0, 0.0, &w, Mode::Baseline);
        assert_eq!(mtl_value(1.3, 2.9, 5.0, 0.7, &w, Mode::Combined), base);
    }

    #[test]
    fn default_combined_weights_with_unit_losses() {
        let w = LossWeights { lambda: 0.2, alpha: 0.05, beta: 0.9 };
        assert!((mtl_value(1.0, 1.0, 1.0, 1.0, &w, Mode::Combined) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn graph_matches_plain_value() {
        let w = LossWeights { lambda: 0.3, alpha: 0.6, beta: 0.25 };
        for mode in Mode::ALL {
            let mut g = Graph::new();
            let vals = [0.7, 3.1, 2.2, 0.4];
            let v: Vec<Var> = vals.iter().map(|&x| g.constant(Tensor::scalar(x))).collect();
            let parts = ComponentLosses { ctc: v[0], att: v[1], jsd: Some(v[2]), cd: Some(v[3]) };
            let total = mtl_loss(&mut g, &parts, &w, mode).unwrap();
            let want = mtl_value(vals[0], vals[1], vals[2], vals[3], &w, mode);
            assert!((g.scalar_value(total) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn missing_constraint_is_reported() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1.0));
        let parts = ComponentLosses { ctc: a, att: a, jsd: None, cd: None };
        assert!(mtl_loss(&mut g, &parts, &LossWeights::default(), Mode::JsdOnly).is_err());
        assert!(mtl_loss(&mut g, &parts, &LossWeights::default(), Mode::Baseline).is_ok());
    }

    #[test]
    fn mode_round_trips_through_text() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("both".parse::<Mode>().is_err());
    }
}
