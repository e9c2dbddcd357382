//! Joint maximum-likelihood estimation of the proposed model.

use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{cholesky_in_place, sample_correlation, sample_covariance, CorrelationMatrix};
use crate::meanmodel::chi2_sf;
use crate::optim::{minimize, numerical_hessian, OptimOptions};
use crate::volcore::{
    negative_log_likelihood, run_filter, standardized_residuals, FilterState, ModelParams, Theta, VolatilityPath,
};

/// Upper bound used for every sum-to-less-than-one constraint.
const CAP: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leverage {
    Off,
    Free,
    /// `lambda3 = 1 - lambda1 - lambda2`, no free coordinate.
    Igarch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    Constant,
    Scalar,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DofSpec {
    Free,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Lambda0,
    Lambda1,
    Lambda2,
    Lambda3,
    Theta1,
    Theta2,
    Dof,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Lambda0 => "lambda0",
            ParamKind::Lambda1 => "lambda1",
            ParamKind::Lambda2 => "lambda2",
            ParamKind::Lambda3 => "lambda3",
            ParamKind::Theta1 => "theta1",
            ParamKind::Theta2 => "theta2",
            ParamKind::Dof => "dof",
        }
    }

    // decoding order: capacities of later kinds depend on earlier ones
    fn rank(self) -> u8 {
        match self {
            ParamKind::Lambda0 => 0,
            ParamKind::Lambda1 => 1,
            ParamKind::Lambda2 => 2,
            ParamKind::Lambda3 => 3,
            ParamKind::Theta2 => 4,
            ParamKind::Theta1 => 5,
            ParamKind::Dof => 6,
        }
    }
}

/// Equality constraint: the listed assets (zero-based) share one value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tie {
    pub kind: ParamKind,
    pub assets: Vec<usize>,
}

/// Structure of the model to estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub k: usize,
    /// When false the variances are constant (`lambda1 = lambda2 = 0`).
    pub garch: bool,
    pub leverage: Vec<Leverage>,
    pub correlation: CorrelationKind,
    pub dof: DofSpec,
    pub m: usize,
    pub ties: Vec<Tie>,
}

impl ModelSpec {
    /// GARCH variances without leverage, scalar correlation dynamics, free
    /// degrees of freedom, `m = k + 2`.
    pub fn new(k: usize) -> Self {
        ModelSpec {
            k,
            garch: true,
            leverage: vec![Leverage::Off; k],
            correlation: CorrelationKind::Scalar,
            dof: DofSpec::Free,
            m: k + 2,
            ties: Vec::new(),
        }
    }

    pub fn with_leverage(mut self, leverage: Vec<Leverage>) -> Self {
        self.leverage = leverage;
        self
    }

    pub fn with_tie(mut self, kind: ParamKind, assets: Vec<usize>) -> Self {
        self.ties.push(Tie { kind, assets });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let k = self.k;
        if k == 0 {
            return bad("model needs at least one asset".into());
        }
        if self.leverage.len() != k {
            return bad(format!(
                "leverage given for {} assets, model has {k}",
                self.leverage.len()
            ));
        }
        if self.m == 0 {
            return bad("correlation window m must be at least 1".into());
        }
        if !self.garch && self.leverage.iter().any(|l| *l != Leverage::Off) {
            return bad("leverage requires GARCH variances".into());
        }
        if let DofSpec::Fixed(v) = self.dof {
            if !(v > 2.0 && v.is_finite()) {
                return bad(format!("fixed degrees of freedom {v} must be finite and exceed 2"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for tie in &self.ties {
            let name = tie.kind.name();
            if tie.assets.len() < 2 {
                return bad(format!("tie on {name} needs at least two assets"));
            }
            for &a in &tie.assets {
                if a >= k {
                    return bad(format!("tie on {name} names asset {} but k = {k}", a + 1));
                }
                if !seen.insert((tie.kind, a)) {
                    return bad(format!("asset {} appears in two {name} ties", a + 1));
                }
            }
            let ok = match tie.kind {
                ParamKind::Lambda0 => true,
                ParamKind::Lambda1 | ParamKind::Lambda2 => self.garch,
                ParamKind::Lambda3 => tie.assets.iter().all(|&a| self.leverage[a] == Leverage::Free),
                ParamKind::Theta1 | ParamKind::Theta2 => self.correlation == CorrelationKind::Diagonal,
                ParamKind::Dof => false,
            };
            if !ok {
                return bad(format!("tie on {name} does not match a free parameter of this model"));
            }
        }
        Ok(())
    }

    /// Whether every model of `restricted` is also a model of `self`.
    pub fn nests(&self, restricted: &ModelSpec) -> bool {
        if self.k != restricted.k || self.m != restricted.m {
            return false;
        }
        if restricted.garch && !self.garch {
            return false;
        }
        for (f, r) in self.leverage.iter().zip(&restricted.leverage) {
            let ok = matches!(
                (f, r),
                (Leverage::Off, Leverage::Off) | (Leverage::Igarch, Leverage::Igarch) | (Leverage::Free, _)
            );
            if !ok {
                return false;
            }
        }
        let corr_ok = match (self.correlation, restricted.correlation) {
            (a, b) if a == b => true,
            (_, CorrelationKind::Constant) => true,
            (CorrelationKind::Diagonal, CorrelationKind::Scalar) => true,
            _ => false,
        };
        if !corr_ok {
            return false;
        }
        match (self.dof, restricted.dof) {
            (DofSpec::Free, _) => {}
            (DofSpec::Fixed(a), DofSpec::Fixed(b)) if a == b => {}
            _ => return false,
        }
        // every equality imposed by the full model must hold in the restricted one
        let rmap = match ParamMap::new(restricted, CorrelationMatrix::identity(restricted.k)) {
            Ok(m) => m,
            Err(_) => return false,
        };
        for tie in &self.ties {
            if !rmap
                .groups
                .iter()
                .any(|g| g.kind == tie.kind && tie.assets.iter().all(|a| g.assets.contains(a)))
            {
                // the entry may be fixed in the restricted model; then every
                // member shares the fixed value only if none of them is free
                let any_free = tie.assets.iter().any(|&a| rmap.group_of(tie.kind, a).is_some());
                if any_free {
                    return false;
                }
            }
        }
        true
    }
}

/// One free coordinate: a parameter kind and the assets sharing it (empty for
/// scalar correlation coefficients and the degrees of freedom).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub kind: ParamKind,
    pub assets: Vec<usize>,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.assets.is_empty() {
            write!(f, "{}", self.kind.name())
        } else {
            let a: Vec<String> = self.assets.iter().map(|a| (a + 1).to_string()).collect();
            write!(f, "{}[{}]", self.kind.name(), a.join(","))
        }
    }
}

/// Count of free parameters by role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterAudit {
    pub variance: usize,
    pub leverage: usize,
    pub correlation: usize,
    pub innovation: usize,
    pub total: usize,
}

impl fmt::Display for ParameterAudit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} free parameters (variance {}, leverage {}, correlation {}, innovation {})",
            self.total, self.variance, self.leverage, self.correlation, self.innovation
        )
    }
}

/// Free optimizer coordinates of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub free: Vec<f64>,
}

/// Mapping between unconstrained coordinates and [`ModelParams`] for one
/// [`ModelSpec`] and fixed `Rbar`.
#[derive(Debug, Clone)]
pub struct ParamMap {
    spec: ModelSpec,
    rbar: CorrelationMatrix,
    groups: Vec<ParamGroup>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl ParamMap {
    pub fn new(spec: &ModelSpec, rbar: CorrelationMatrix) -> Result<Self> {
        spec.validate()?;
        if rbar.dim() != spec.k {
            return Err(Error::DimensionMismatch(format!(
                "Rbar is {0}x{0}, model has k = {1}",
                rbar.dim(),
                spec.k
            )));
        }
        let k = spec.k;
        let mut kinds = vec![ParamKind::Lambda0];
        if spec.garch {
            kinds.extend([ParamKind::Lambda1, ParamKind::Lambda2]);
        }
        if spec.leverage.contains(&Leverage::Free) {
            kinds.push(ParamKind::Lambda3);
        }
        let mut groups = Vec::new();
        for kind in kinds {
            let mut done = vec![false; k];
            for i in 0..k {
                if done[i] || (kind == ParamKind::Lambda3 && spec.leverage[i] != Leverage::Free) {
                    continue;
                }
                let assets = spec
                    .ties
                    .iter()
                    .find(|t| t.kind == kind && t.assets.contains(&i))
                    .map(|t| {
                        let mut a = t.assets.clone();
                        a.sort_unstable();
                        a
                    })
                    .unwrap_or_else(|| vec![i]);
                for &a in &assets {
                    done[a] = true;
                }
                groups.push(ParamGroup { kind, assets });
            }
        }
        match spec.correlation {
            CorrelationKind::Constant => {}
            CorrelationKind::Scalar => {
                for kind in [ParamKind::Theta2, ParamKind::Theta1] {
                    groups.push(ParamGroup { kind, assets: vec![] });
                }
            }
            CorrelationKind::Diagonal => {
                for kind in [ParamKind::Theta2, ParamKind::Theta1] {
                    let mut done = vec![false; k];
                    for i in 0..k {
                        if done[i] {
                            continue;
                        }
                        let assets = spec
                            .ties
                            .iter()
                            .find(|t| t.kind == kind && t.assets.contains(&i))
                            .map(|t| {
                                let mut a = t.assets.clone();
                                a.sort_unstable();
                                a
                            })
                            .unwrap_or_else(|| vec![i]);
                        for &a in &assets {
                            done[a] = true;
                        }
                        groups.push(ParamGroup { kind, assets });
                    }
                }
            }
        }
        if spec.dof == DofSpec::Free {
            groups.push(ParamGroup {
                kind: ParamKind::Dof,
                assets: vec![],
            });
        }
        groups.sort_by_key(|g| g.kind.rank());
        Ok(ParamMap {
            spec: spec.clone(),
            rbar,
            groups,
        })
    }

    pub fn dim(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Index of the free coordinate governing `(kind, asset)`, if any.
    pub fn group_of(&self, kind: ParamKind, asset: usize) -> Option<usize> {
        self.groups
            .iter()
            .position(|g| g.kind == kind && (g.assets.is_empty() || g.assets.contains(&asset)))
    }

    pub fn audit(&self) -> ParameterAudit {
        let count = |ks: &[ParamKind]| self.groups.iter().filter(|g| ks.contains(&g.kind)).count();
        let variance = count(&[ParamKind::Lambda0, ParamKind::Lambda1, ParamKind::Lambda2]);
        let leverage = count(&[ParamKind::Lambda3]);
        let correlation = count(&[ParamKind::Theta1, ParamKind::Theta2]);
        let innovation = count(&[ParamKind::Dof]);
        ParameterAudit {
            variance,
            leverage,
            correlation,
            innovation,
            total: self.dim(),
        }
    }

    fn has_leverage(&self) -> bool {
        self.spec.leverage.iter().any(|l| *l != Leverage::Off)
    }

    pub fn decode(&self, v: &ParamVector) -> Result<ModelParams> {
        self.decode_slice(&v.free)
    }

    pub fn decode_slice(&self, x: &[f64]) -> Result<ModelParams> {
        if x.len() != self.dim() {
            return Err(Error::InvalidParams(format!(
                "expected {} free coordinates, got {}",
                self.dim(),
                x.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("free coordinate {i} is not finite")));
        }
        let k = self.spec.k;
        let diag = self.spec.correlation == CorrelationKind::Diagonal;
        let mut l0 = vec![0.0; k];
        let mut l1 = vec![0.0; k];
        let mut l2 = vec![0.0; k];
        let mut l3 = vec![0.0; k];
        let mut th1 = vec![0.0; if diag { k } else { 1 }];
        let mut th2 = th1.clone();
        let mut dof = match self.spec.dof {
            DofSpec::Fixed(v) => v,
            DofSpec::Free => f64::NAN,
        };
        let scalar_slot = |assets: &[usize]| if assets.is_empty() { vec![0] } else { assets.to_vec() };
        for (g, &xi) in self.groups.iter().zip(x) {
            let xi = xi.clamp(-500.0, 500.0);
            let s = sigmoid(xi);
            let min_over = |f: &dyn Fn(usize) -> f64| g.assets.iter().map(|&a| f(a)).fold(f64::INFINITY, f64::min);
            match g.kind {
                ParamKind::Lambda0 => g.assets.iter().for_each(|&a| l0[a] = xi.exp()),
                ParamKind::Lambda1 => g.assets.iter().for_each(|&a| l1[a] = CAP * s),
                ParamKind::Lambda2 => {
                    let avail = min_over(&|a| CAP - l1[a]);
                    g.assets.iter().for_each(|&a| l2[a] = avail * s);
                }
                ParamKind::Lambda3 => {
                    let avail = min_over(&|a| CAP - l1[a] - l2[a]);
                    g.assets.iter().for_each(|&a| l3[a] = avail * s);
                }
                ParamKind::Theta2 => {
                    let v = if diag { CAP.sqrt() * s } else { CAP * s };
                    scalar_slot(&g.assets).into_iter().for_each(|a| th2[a] = v);
                }
                ParamKind::Theta1 => {
                    let slots = scalar_slot(&g.assets);
                    let avail = slots
                        .iter()
                        .map(|&a| {
                            if diag {
                                (CAP - th2[a] * th2[a]).max(0.0).sqrt()
                            } else {
                                CAP - th2[a]
                            }
                        })
                        .fold(f64::INFINITY, f64::min);
                    slots.into_iter().for_each(|a| th1[a] = avail * s);
                }
                ParamKind::Dof => dof = 2.0 + xi.max(-30.0).exp(),
            }
        }
        for i in 0..k {
            if self.spec.leverage[i] == Leverage::Igarch {
                l3[i] = 1.0 - l1[i] - l2[i];
            }
        }
        let theta = match self.spec.correlation {
            CorrelationKind::Constant => Theta::constant(),
            CorrelationKind::Scalar => Theta::Scalar {
                theta1: th1[0],
                theta2: th2[0],
            },
            CorrelationKind::Diagonal => Theta::Diagonal {
                theta1: th1,
                theta2: th2,
            },
        };
        let p = ModelParams {
            lambda0: l0,
            lambda1: l1,
            lambda2: l2,
            lambda3: self.has_leverage().then_some(l3),
            theta,
            dof,
            m: self.spec.m,
            rbar: self.rbar.clone(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Value of every free group in model coordinates.
    pub fn values(&self, p: &ModelParams) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| {
                let a = g.assets.first().copied().unwrap_or(0);
                match g.kind {
                    ParamKind::Lambda0 => p.lambda0[a],
                    ParamKind::Lambda1 => p.lambda1[a],
                    ParamKind::Lambda2 => p.lambda2[a],
                    ParamKind::Lambda3 => p.leverage(a),
                    ParamKind::Theta1 | ParamKind::Theta2 => {
                        let first = g.kind == ParamKind::Theta1;
                        match &p.theta {
                            Theta::Scalar { theta1, theta2 } => {
                                if first {
                                    *theta1
                                } else {
                                    *theta2
                                }
                            }
                            Theta::Diagonal { theta1, theta2 } => {
                                if first {
                                    theta1[a]
                                } else {
                                    theta2[a]
                                }
                            }
                        }
                    }
                    ParamKind::Dof => p.dof,
                }
            })
            .collect()
    }

    pub fn encode(&self, p: &ModelParams) -> Result<ParamVector> {
        self.encode_inner(p, false)
    }

    /// Like [`ParamMap::encode`], but entries on or beyond the edge of the
    /// encodable interior are pulled just inside it.
    pub fn encode_interior(&self, p: &ModelParams) -> Result<ParamVector> {
        self.encode_inner(p, true)
    }

    fn encode_inner(&self, p: &ModelParams, clamp: bool) -> Result<ParamVector> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if p.k() != self.spec.k {
            return bad(format!("params have k = {}, model has k = {}", p.k(), self.spec.k));
        }
        let diag = self.spec.correlation == CorrelationKind::Diagonal;
        match (&p.theta, self.spec.correlation) {
            (Theta::Scalar { .. }, CorrelationKind::Scalar | CorrelationKind::Constant)
            | (Theta::Diagonal { .. }, CorrelationKind::Diagonal) => {}
            _ => return bad("theta shape does not match the correlation specification".into()),
        }
        let vals = self.values(p);
        let (th1, th2): (Vec<f64>, Vec<f64>) = match &p.theta {
            Theta::Scalar { theta1, theta2 } => (vec![*theta1], vec![*theta2]),
            Theta::Diagonal { theta1, theta2 } => (theta1.clone(), theta2.clone()),
        };
        let ratio = |v: f64, avail: f64, name: &str| -> Result<f64> {
            let r = v / avail;
            if clamp {
                return Ok(logit(r.clamp(1e-9, 1.0 - 1e-9)));
            }
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} = {v} is outside the encodable interior"
                )));
            }
            Ok(logit(r))
        };
        let mut free = Vec::with_capacity(self.dim());
        for (g, &v) in self.groups.iter().zip(&vals) {
            let name = g.to_string();
            // members of a tied group must agree
            if g.assets.len() > 1 {
                let member = |a: usize| match g.kind {
                    ParamKind::Lambda0 => p.lambda0[a],
                    ParamKind::Lambda1 => p.lambda1[a],
                    ParamKind::Lambda2 => p.lambda2[a],
                    ParamKind::Lambda3 => p.leverage(a),
                    ParamKind::Theta1 => th1[a],
                    ParamKind::Theta2 => th2[a],
                    ParamKind::Dof => p.dof,
                };
                if g.assets
                    .iter()
                    .any(|&a| (member(a) - v).abs() > 1e-12 * v.abs().max(1.0))
                {
                    return bad(format!("tied entries of {name} differ"));
                }
            }
            let min_over = |f: &dyn Fn(usize) -> f64| g.assets.iter().map(|&a| f(a)).fold(f64::INFINITY, f64::min);
            let x = match g.kind {
                ParamKind::Lambda0 => {
                    if !(v > 0.0) {
                        return bad(format!("{name} must be positive"));
                    }
                    v.ln()
                }
                ParamKind::Lambda1 => ratio(v, CAP, &name)?,
                ParamKind::Lambda2 => ratio(v, min_over(&|a| CAP - p.lambda1[a]), &name)?,
                ParamKind::Lambda3 => ratio(v, min_over(&|a| CAP - p.lambda1[a] - p.lambda2[a]), &name)?,
                ParamKind::Theta2 => ratio(v, if diag { CAP.sqrt() } else { CAP }, &name)?,
                ParamKind::Theta1 => {
                    let slots: Vec<usize> = if g.assets.is_empty() { vec![0] } else { g.assets.clone() };
                    let avail = slots
                        .iter()
                        .map(|&a| {
                            if diag {
                                (CAP - th2[a] * th2[a]).max(0.0).sqrt()
                            } else {
                                CAP - th2[a]
                            }
                        })
                        .fold(f64::INFINITY, f64::min);
                    ratio(v, avail, &name)?
                }
                ParamKind::Dof => {
                    if !(v > 2.0) {
                        return bad(format!("dof = {v} must exceed 2"));
                    }
                    (v - 2.0).ln()
                }
            };
            free.push(x);
        }
        Ok(ParamVector { free })
    }

    /// Default starting point.
    pub fn default_start(&self, e: &DMatrix<f64>) -> Result<ModelParams> {
        let k = self.spec.k;
        let cov = sample_covariance(e)?;
        let var: Vec<f64> = (0..k).map(|i| cov.get(i, i)).collect();
        let mut l0: Vec<f64> = var
            .iter()
            .map(|v| if self.spec.garch { 0.05 * v } else { *v })
            .collect();
        for tie in self.spec.ties.iter().filter(|t| t.kind == ParamKind::Lambda0) {
            let mean = tie.assets.iter().map(|&a| l0[a]).sum::<f64>() / tie.assets.len() as f64;
            tie.assets.iter().for_each(|&a| l0[a] = mean);
        }
        let (l1, l2) = if self.spec.garch { (0.85, 0.05) } else { (0.0, 0.0) };
        let l3: Vec<f64> = self
            .spec
            .leverage
            .iter()
            .map(|l| match l {
                Leverage::Off => 0.0,
                Leverage::Free => 0.02,
                Leverage::Igarch => 1.0 - l1 - l2,
            })
            .collect();
        let theta = match self.spec.correlation {
            CorrelationKind::Constant => Theta::constant(),
            CorrelationKind::Scalar => Theta::Scalar {
                theta1: 0.02,
                theta2: 0.90,
            },
            CorrelationKind::Diagonal => Theta::Diagonal {
                theta1: vec![0.02f64.sqrt(); k],
                theta2: vec![0.90f64.sqrt(); k],
            },
        };
        let p = ModelParams {
            lambda0: l0,
            lambda1: vec![l1; k],
            lambda2: vec![l2; k],
            lambda3: self.has_leverage().then_some(l3),
            theta,
            dof: match self.spec.dof {
                DofSpec::Free => 8.0,
                DofSpec::Fixed(v) => v,
            },
            m: self.spec.m,
            rbar: self.rbar.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Extra randomly perturbed starts besides the default one.
    pub multi_start: usize,
    pub seed: u64,
    pub std_errors: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optim: OptimOptions::default(),
            multi_start: 0,
            seed: 0,
            std_errors: true,
        }
    }
}

/// One estimated free parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub group: ParamGroup,
    pub value: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: ModelParams,
    /// Optimizer coordinates of the optimum; `None` when the optimum sits on
    /// the boundary of the parameter space.
    pub free: Option<Vec<f64>>,
    pub estimates: Vec<Estimate>,
    /// Covariance of the estimates in model coordinates.
    pub covariance: Option<DMatrix<f64>>,
    /// Why standard errors are missing, when they are.
    pub std_error_note: Option<String>,
    pub lmax: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub boundary: bool,
    /// First observation inside the likelihood.
    pub t0: usize,
    pub n_obs: usize,
    pub path: VolatilityPath,
    /// Standardized residuals for observations `t0..n_obs`.
    pub residuals_std: DMatrix<f64>,
    pub audit: ParameterAudit,
}

impl FitResult {
    /// Standard error of the entry `(kind, asset)`; tied entries share one.
    pub fn std_error(&self, kind: ParamKind, asset: usize) -> Option<f64> {
        self.estimates
            .iter()
            .find(|e| e.group.kind == kind && (e.group.assets.is_empty() || e.group.assets.contains(&asset)))
            .and_then(|e| e.std_error)
    }

    pub fn free_dim(&self) -> usize {
        self.audit.total
    }
}

struct Problem<'a> {
    map: ParamMap,
    e: &'a DMatrix<f64>,
    init: FilterState,
}

impl<'a> Problem<'a> {
    fn new(spec: &ModelSpec, e: &'a DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        if e.ncols() != spec.k {
            return Err(Error::DimensionMismatch(format!(
                "residuals have {} columns, model has k = {}",
                e.ncols(),
                spec.k
            )));
        }
        if e.nrows() <= spec.m + 1 {
            return Err(Error::TooShort {
                needed: spec.m + 2,
                got: e.nrows(),
            });
        }
        let rbar = sample_correlation(e)?;
        let map = ParamMap::new(spec, rbar)?;
        let start = map.default_start(e)?;
        let init = FilterState::initial(&start, e)?;
        Ok(Problem { map, e, init })
    }

    fn nll_params(&self, p: &ModelParams) -> f64 {
        negative_log_likelihood(p, self.e, &self.init).unwrap_or(f64::INFINITY)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        match self.map.decode_slice(x) {
            Ok(p) => self.nll_params(&p),
            Err(_) => f64::INFINITY,
        }
    }

    fn optimize(&self, starts: Vec<Vec<f64>>, opts: &OptimOptions) -> (Vec<f64>, f64, usize, bool) {
        let runs: Vec<_> = starts
            .into_par_iter()
            .map(|x0| minimize(|x| self.objective(x), &x0, opts))
            .collect();
        let best = runs
            .into_iter()
            .filter(|r| r.f.is_finite())
            .min_by(|a, b| a.f.total_cmp(&b.f));
        match best {
            Some(r) => (r.x, r.f, r.iterations, r.converged),
            None => (Vec::new(), f64::INFINITY, 0, false),
        }
    }

    fn starts(&self, options: &FitOptions) -> Result<Vec<Vec<f64>>> {
        let x0 = self.map.encode(&self.map.default_start(self.e)?)?.free;
        let mut starts = vec![x0.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let jitter = Normal::new(0.0, 0.5).expect("valid normal");
        for _ in 0..options.multi_start {
            starts.push(x0.iter().map(|v| v + jitter.sample(&mut rng)).collect());
        }
        Ok(starts)
    }

    fn finish(
        &self,
        params: ModelParams,
        free: Option<Vec<f64>>,
        n_iterations: usize,
        converged: bool,
        options: &FitOptions,
    ) -> Result<FitResult> {
        let out = run_filter(&params, self.e, &self.init).map_err(|_| Error::FilterBlowupAtOptimum)?;
        let resid = standardized_residuals(&out.path, self.e)?;
        let residuals_std = resid.rows(out.t0, self.e.nrows() - out.t0).into_owned();
        let values = self.map.values(&params);
        let (covariance, note) = match (&free, options.std_errors) {
            (_, false) => (None, Some("not requested".to_string())),
            (None, true) => (None, Some("optimum on the parameter boundary".to_string())),
            (Some(x), true) => match self.covariance(x) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            },
        };
        let estimates = self
            .map
            .groups()
            .iter()
            .zip(&values)
            .enumerate()
            .map(|(i, (g, &value))| Estimate {
                group: g.clone(),
                value,
                std_error: covariance.as_ref().map(|c| c[(i, i)].sqrt()),
            })
            .collect();
        if !converged {
            log::warn!("optimizer stopped after {n_iterations} iterations without converging");
        }
        Ok(FitResult {
            spec: self.map.spec().clone(),
            params,
            free,
            estimates,
            covariance,
            std_error_note: note,
            lmax: out.loglik,
            n_iterations,
            converged,
            boundary: false,
            t0: out.t0,
            n_obs: self.e.nrows(),
            path: out.path,
            residuals_std,
            audit: self.map.audit(),
        })
    }

    /// Delta-method covariance `J H^-1 J'` of the model-coordinate values.
    fn covariance(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = x.len();
        let h = numerical_hessian(&|z: &[f64]| self.objective(z), x).ok_or(Error::HessianNotPD)?;
        let mut l = h.clone();
        if !cholesky_in_place(&mut l) {
            return Err(Error::HessianNotPD);
        }
        let h_inv = h.try_inverse().ok_or(Error::HessianNotPD)?;
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            let step = 1e-6 * x[j].abs().max(1.0);
            xp[j] = x[j] + step;
            let up = self.map.values(&self.map.decode_slice(&xp)?);
            xp[j] = x[j] - step;
            let down = self.map.values(&self.map.decode_slice(&xp)?);
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (up[i] - down[i]) / (2.0 * step);
            }
        }
        let cov = &jac * h_inv * jac.transpose();
        if (0..n).any(|i| !(cov[(i, i)] > 0.0)) {
            return Err(Error::HessianNotPD);
        }
        Ok(cov)
    }
}

/// Maximum-likelihood fit of `spec` to the residuals `e` (`T x k`).
pub fn fit(spec: &ModelSpec, e: &DMatrix<f64>, options: &FitOptions) -> Result<FitResult> {
    let prob = Problem::new(spec, e)?;
    warn_if_short(&prob);
    let starts = prob.starts(options)?;
    let (x, f, iters, converged) = prob.optimize(starts, &options.optim);
    if !f.is_finite() {
        return Err(Error::FilterBlowupAtOptimum);
    }
    let params = prob.map.decode_slice(&x)?;
    prob.finish(params, Some(x), iters, converged, options)
}

fn warn_if_short(prob: &Problem<'_>) {
    let dim = prob.map.dim();
    if prob.e.nrows() < 10 * dim {
        log::warn!(
            "{} observations for {dim} free parameters; estimates may be unreliable",
            prob.e.nrows()
        );
    }
}

/// Fit of a model that nests an already fitted `restricted` model. Besides
/// the default start, the search starts from the restricted optimum, and the
/// restricted optimum itself (a boundary point of the larger model when it
/// pins leverage or correlation dynamics at zero) is a candidate, so the
/// returned log-likelihood is never below the restricted one.
pub fn fit_nested(
    full: &ModelSpec,
    e: &DMatrix<f64>,
    restricted: &FitResult,
    options: &FitOptions,
) -> Result<FitResult> {
    if !full.nests(&restricted.spec) {
        return Err(Error::NotNested(
            "the restricted specification is not a special case of the full one".into(),
        ));
    }
    let prob = Problem::new(full, e)?;
    warn_if_short(&prob);
    let embedded = embed(&restricted.params, &prob.map)?;
    let mut starts = prob.starts(options)?;
    starts.push(prob.map.encode_interior(&embedded)?.free);
    let (x, f, iters, converged) = prob.optimize(starts, &options.optim);
    let f_boundary = prob.nll_params(&embedded);
    if f_boundary.is_finite() && !(f <= f_boundary) {
        let mut r = prob.finish(embedded, None, iters, true, options)?;
        r.boundary = true;
        return Ok(r);
    }
    let params = prob.map.decode_slice(&x)?;
    prob.finish(params, Some(x), iters, converged, options)
}

/// Restricted parameters expressed in the full model's layout.
fn embed(p: &ModelParams, map: &ParamMap) -> Result<ModelParams> {
    let spec = map.spec();
    let k = spec.k;
    let theta = match (&p.theta, spec.correlation) {
        (Theta::Scalar { theta1, theta2 }, CorrelationKind::Diagonal) => Theta::Diagonal {
            theta1: vec![theta1.sqrt(); k],
            theta2: vec![theta2.sqrt(); k],
        },
        (t, _) => t.clone(),
    };
    let lambda3 = spec
        .leverage
        .iter()
        .any(|l| *l != Leverage::Off)
        .then(|| (0..k).map(|i| p.leverage(i)).collect());
    let q = ModelParams {
        lambda3,
        theta,
        rbar: map.rbar.clone(),
        ..p.clone()
    };
    q.validate()?;
    Ok(q)
}

/// Standard errors of the free parameters of `result` on residuals `e`.
pub fn std_errors(result: &FitResult, e: &DMatrix<f64>) -> Result<Vec<f64>> {
    let prob = Problem::new(&result.spec, e)?;
    let x = result.free.as_ref().ok_or(Error::HessianNotPD)?;
    let cov = prob.covariance(x)?;
    Ok((0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl fmt::Display for LrTestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LR = {:.2} on {} df (p = {:.4})",
            self.statistic, self.df, self.p_value
        )
    }
}

/// Likelihood-ratio test of `restricted` against `full`.
pub fn lr_test(full: &FitResult, restricted: &FitResult) -> Result<LrTestResult> {
    if full.n_obs != restricted.n_obs || full.t0 != restricted.t0 {
        return Err(Error::NotNested("fits use different data spans".into()));
    }
    if full.spec == restricted.spec {
        return Ok(LrTestResult {
            statistic: (2.0 * (full.lmax - restricted.lmax)).max(0.0),
            df: 0,
            p_value: 1.0,
        });
    }
    if !full.spec.nests(&restricted.spec) {
        return Err(Error::NotNested(
            "the restricted specification is not a special case of the full one".into(),
        ));
    }
    let (a, b) = (full.free_dim(), restricted.free_dim());
    if a <= b {
        return Err(Error::NotNested(format!(
            "full model has {a} free parameters, restricted has {b}"
        )));
    }
    let df = a - b;
    let statistic = (2.0 * (full.lmax - restricted.lmax)).max(0.0);
    Ok(LrTestResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
    })
}

/// A pair of same-kind estimates closer than one joint standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieSuggestion {
    pub first: ParamGroup,
    pub second: ParamGroup,
    pub difference: f64,
    pub joint_std_error: f64,
}

impl fmt::Display for TieSuggestion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} and {} differ by {:.4} (joint s.e. {:.4})",
            self.first, self.second, self.difference, self.joint_std_error
        )
    }
}

/// Candidate equality constraints. Never applied automatically.
pub fn suggest_ties(result: &FitResult) -> Vec<TieSuggestion> {
    let Some(cov) = &result.covariance else {
        return Vec::new();
    };
    let est = &result.estimates;
    let mut out = Vec::new();
    for i in 0..est.len() {
        for j in i + 1..est.len() {
            let (a, b) = (&est[i], &est[j]);
            if a.group.kind != b.group.kind || a.group.assets.is_empty() {
                continue;
            }
            let var = cov[(i, i)] + cov[(j, j)] - 2.0 * cov[(i, j)];
            if !(var > 0.0) {
                continue;
            }
            let se = var.sqrt();
            let d = (a.value - b.value).abs();
            if d < se {
                out.push(TieSuggestion {
                    first: a.group.clone(),
                    second: b.group.clone(),
                    difference: d,
                    joint_std_error: se,
                });
            }
        }
    }
    out
}
