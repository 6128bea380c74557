//! Dimensionless parameters as powers of ε, their limits, admissibility and
//! the choice of homogenized model.

use crate::error::{Error, Result};
use crate::microcell::Connectivity;
use num_rational::Rational64;
use num_traits::{Signed, Zero};
use std::collections::BTreeSet;
use std::fmt;

/// `c · ε^a` with `c > 0` and rational `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power {
    pub c: f64,
    pub a: Rational64,
}

impl Power {
    pub fn new(c: f64, a: Rational64) -> Result<Power> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Invalid(format!("coefficient must be strictly positive and finite, got {c}")));
        }
        Ok(Power { c, a })
    }

    pub fn one() -> Power {
        Power { c: 1.0, a: Rational64::zero() }
    }

    pub fn eps_pow(a: i64) -> Power {
        Power { c: 1.0, a: Rational64::from_integer(a) }
    }

    pub fn mul(self, o: Power) -> Power {
        Power { c: self.c * o.c, a: self.a + o.a }
    }

    pub fn div(self, o: Power) -> Power {
        Power { c: self.c / o.c, a: self.a - o.a }
    }

    pub fn limit(self) -> ExtReal {
        limit_of(self)
    }
}

impl fmt::Display for Power {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*eps^({})", self.c, self.a)
    }
}

/// Parses `2`, `-3/2`, `0.5` style exponents exactly.
pub fn parse_exponent(s: &str) -> Result<Rational64> {
    let s = s.trim();
    let bad = || Error::Invalid(format!("invalid exponent `{s}`"));
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Rational64::new(n, d));
    }
    if let Ok(n) = s.parse::<i64>() {
        return Ok(Rational64::from_integer(n));
    }
    // terminating decimal
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (ip, fp) = body.split_once('.').ok_or_else(bad)?;
    if fp.is_empty() && ip.is_empty() || fp.len() > 12 || !fp.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let ip: i64 = if ip.is_empty() { 0 } else { ip.parse().map_err(|_| bad())? };
    let den = 10i64.pow(fp.len() as u32);
    let fp: i64 = if fp.is_empty() { 0 } else { fp.parse().map_err(|_| bad())? };
    let r = Rational64::new(ip * den + fp, den);
    Ok(if neg { -r } else { r })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Zero,
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub fn finite(v: f64) -> Result<ExtReal> {
        if v > 0.0 && v.is_finite() {
            Ok(ExtReal::Finite(v))
        } else if v == 0.0 {
            Ok(ExtReal::Zero)
        } else if v == f64::INFINITY {
            Ok(ExtReal::Infinite)
        } else {
            Err(Error::Invalid(format!("extended value must be non-negative, got {v}")))
        }
    }

    pub fn is_zero(self) -> bool {
        self == ExtReal::Zero
    }

    pub fn is_infinite(self) -> bool {
        self == ExtReal::Infinite
    }

    pub fn is_finite_positive(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    /// Numeric value with `Zero ↦ 0` and `Infinite ↦ +∞`.
    pub fn value(self) -> f64 {
        match self {
            ExtReal::Zero => 0.0,
            ExtReal::Finite(v) => v,
            ExtReal::Infinite => f64::INFINITY,
        }
    }

    pub fn parse(s: &str) -> Result<ExtReal> {
        match s.trim() {
            "inf" | "infinity" | "Infinite" | "∞" => Ok(ExtReal::Infinite),
            t => {
                let v: f64 = t.parse().map_err(|_| Error::Invalid(format!("invalid value `{t}`")))?;
                ExtReal::finite(v)
            }
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Zero => write!(f, "0"),
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => write!(f, "inf"),
        }
    }
}

pub fn limit_of(p: Power) -> ExtReal {
    if p.a.is_positive() {
        ExtReal::Zero
    } else if p.a.is_zero() {
        ExtReal::Finite(p.c)
    } else {
        ExtReal::Infinite
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingSpec {
    pub alpha_tau: Power,
    pub alpha_nu: Power,
    pub alpha_mu: Power,
    pub alpha_p: Power,
    pub alpha_eta: Power,
    pub alpha_lambda: Power,
    pub rho_f: f64,
    pub rho_s: f64,
    /// Accumulated displacement re-normalization factor (1 if none).
    pub displacement_scale: Power,
}

impl ScalingSpec {
    /// All six parameters equal to one, unit densities.
    pub fn unit() -> ScalingSpec {
        ScalingSpec {
            alpha_tau: Power::one(),
            alpha_nu: Power::one(),
            alpha_mu: Power::one(),
            alpha_p: Power::one(),
            alpha_eta: Power::one(),
            alpha_lambda: Power::one(),
            rho_f: 1.0,
            rho_s: 1.0,
            displacement_scale: Power::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in self.named() {
            if !(p.c > 0.0 && p.c.is_finite()) {
                return Err(Error::Invalid(format!("coefficient of {name} must be strictly positive")));
            }
        }
        for (name, r) in [("rho_f", self.rho_f), ("rho_s", self.rho_s)] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Invalid(format!("{name} must be strictly positive")));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, Power); 6] {
        [
            ("alpha_tau", self.alpha_tau),
            ("alpha_nu", self.alpha_nu),
            ("alpha_mu", self.alpha_mu),
            ("alpha_p", self.alpha_p),
            ("alpha_eta", self.alpha_eta),
            ("alpha_lambda", self.alpha_lambda),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitSet {
    pub mu0: ExtReal,
    pub lambda0: ExtReal,
    pub tau0: ExtReal,
    pub nu0: ExtReal,
    pub p_star: ExtReal,
    pub eta0: ExtReal,
    pub mu1: ExtReal,
    pub p1: ExtReal,
    pub lambda1: ExtReal,
    pub eta1: ExtReal,
    pub eta2: ExtReal,
    pub p2: ExtReal,
}

impl LimitSet {
    pub fn named(&self) -> [(&'static str, ExtReal); 12] {
        [
            ("mu0", self.mu0),
            ("lambda0", self.lambda0),
            ("tau0", self.tau0),
            ("nu0", self.nu0),
            ("p_star", self.p_star),
            ("eta0", self.eta0),
            ("mu1", self.mu1),
            ("p1", self.p1),
            ("lambda1", self.lambda1),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("p2", self.p2),
        ]
    }
}

pub fn derive_limits(spec: &ScalingSpec) -> LimitSet {
    let eps2 = Power::eps_pow(2);
    let mu = spec.alpha_mu;
    LimitSet {
        mu0: limit_of(mu),
        lambda0: limit_of(spec.alpha_lambda),
        tau0: limit_of(spec.alpha_tau),
        nu0: limit_of(spec.alpha_nu),
        p_star: limit_of(spec.alpha_p),
        eta0: limit_of(spec.alpha_eta),
        mu1: limit_of(mu.div(eps2)),
        p1: limit_of(eps2.mul(spec.alpha_p).div(mu)),
        lambda1: limit_of(spec.alpha_lambda.mul(eps2).div(mu)),
        eta1: limit_of(spec.alpha_eta.mul(eps2).div(mu)),
        eta2: limit_of(spec.alpha_eta.div(spec.alpha_lambda)),
        p2: limit_of(spec.alpha_p.div(spec.alpha_lambda)),
    }
}

/// Violated admissibility clauses; empty when admissible.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Admissibility {
    pub violations: Vec<String>,
}

impl Admissibility {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Inadmissible(self.violations))
        }
    }
}

pub fn check_admissible(l: &LimitSet) -> Admissibility {
    let mut v = Vec::new();
    if l.p_star.is_zero() {
        v.push("p*^{-1} < ∞ fails".to_string());
    }
    if l.mu0.is_infinite() {
        v.push("μ₀ < ∞ fails".to_string());
    }
    if l.nu0.is_infinite() {
        v.push("ν₀ < ∞ fails".to_string());
    }
    if l.lambda0.is_zero() {
        v.push("λ₀^{-1} < ∞ fails".to_string());
    }
    if l.tau0.is_zero() && l.mu1.is_zero() {
        v.push("0 < τ₀ + μ₁ fails".to_string());
    }
    Admissibility { violations: v }
}

/// `w → α_τ w`: every parameter is divided by α_τ, which becomes one.
pub fn apply_tau_renormalization(spec: &ScalingSpec) -> Result<ScalingSpec> {
    if !limit_of(spec.alpha_tau).is_infinite() {
        return Err(Error::NotApplicable(format!(
            "displacement re-normalization by α_τ requires τ₀ = ∞, got τ₀ = {}",
            limit_of(spec.alpha_tau)
        )));
    }
    let t = spec.alpha_tau;
    Ok(ScalingSpec {
        alpha_tau: Power::one(),
        alpha_nu: spec.alpha_nu.div(t),
        alpha_mu: spec.alpha_mu.div(t),
        alpha_p: spec.alpha_p.div(t),
        alpha_eta: spec.alpha_eta.div(t),
        alpha_lambda: spec.alpha_lambda.div(t),
        displacement_scale: spec.displacement_scale.mul(t),
        ..*spec
    })
}

/// `w → ε⁻² α_μ w` for λ₀ = ∞, μ₁ = ∞.
pub fn apply_mu_renormalization(spec: &ScalingSpec) -> ScalingSpec {
    let eps2 = Power::eps_pow(2);
    let r = eps2.div(spec.alpha_mu);
    ScalingSpec {
        alpha_mu: eps2,
        alpha_lambda: spec.alpha_lambda.mul(r),
        alpha_tau: spec.alpha_tau.mul(r),
        alpha_nu: spec.alpha_nu.mul(r),
        alpha_p: spec.alpha_p.mul(r),
        displacement_scale: spec.displacement_scale.mul(spec.alpha_mu.div(eps2)),
        ..*spec
    }
}

/// `w → α_λ w` for the second approximation of the rigid-skeleton case.
pub fn apply_lambda_renormalization(spec: &ScalingSpec) -> ScalingSpec {
    let l = spec.alpha_lambda;
    ScalingSpec {
        alpha_eta: spec.alpha_eta.div(l),
        alpha_lambda: Power::one(),
        alpha_tau: spec.alpha_tau.div(l),
        displacement_scale: spec.displacement_scale.mul(l),
        ..*spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[allow(non_camel_case_types)]
pub enum TheoremTag {
    T2_2_I,
    T2_2_II,
    T2_3_I_F1,
    T2_3_I_F2,
    T2_3_I_F3,
    T2_3_II,
    T2_3_III,
    T2_4_visco,
    T2_4_lame_disconnected,
}

impl TheoremTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TheoremTag::T2_2_I => "T2_2_I",
            TheoremTag::T2_2_II => "T2_2_II",
            TheoremTag::T2_3_I_F1 => "T2_3_I_F1",
            TheoremTag::T2_3_I_F2 => "T2_3_I_F2",
            TheoremTag::T2_3_I_F3 => "T2_3_I_F3",
            TheoremTag::T2_3_II => "T2_3_II",
            TheoremTag::T2_3_III => "T2_3_III",
            TheoremTag::T2_4_visco => "T2_4_visco",
            TheoremTag::T2_4_lame_disconnected => "T2_4_lame_disconnected",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            TheoremTag::T2_2_I => "anisotropic Lamé system, one-velocity continuum",
            TheoremTag::T2_2_II => "Biot two-velocity poroelasticity",
            TheoremTag::T2_3_I_F1 => "filtration in a rigid skeleton, Darcy law with memory kernel",
            TheoremTag::T2_3_I_F2 => "filtration in a rigid skeleton, steady Darcy law",
            TheoremTag::T2_3_I_F3 => "filtration in a rigid skeleton, inviscid Darcy law",
            TheoremTag::T2_3_II => "second approximation: anisotropic Lamé system for the skeleton",
            TheoremTag::T2_3_III => "quasi-static Biot system with steady Darcy law",
            TheoremTag::T2_4_visco => "non-local viscoelasticity, one-velocity continuum",
            TheoremTag::T2_4_lame_disconnected => "non-local anisotropic Lamé system (isolated pores)",
        }
    }
}

impl fmt::Display for TheoremTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CellProblem {
    ElasticCell,
    SteadyStokes,
    UnsteadyStokes,
    NeumannB3,
    ViscoI,
    ViscoII,
}

impl CellProblem {
    pub fn as_str(self) -> &'static str {
        match self {
            CellProblem::ElasticCell => "elastic_cell",
            CellProblem::SteadyStokes => "steady_stokes",
            CellProblem::UnsteadyStokes => "unsteady_stokes",
            CellProblem::NeumannB3 => "neumann_B3",
            CellProblem::ViscoI => "visco_I",
            CellProblem::ViscoII => "visco_II",
        }
    }
}

/// Which form the Darcy law takes in a two-velocity or filtration regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DarcyForm {
    /// Convolution with the kernel B1 (τ₀ > 0, μ₁ > 0).
    MemoryKernel,
    /// Permeability B2 (τ₀ = 0, μ₁ > 0).
    Steady,
    /// Time integral with mI − B3 (τ₀ > 0, μ₁ = 0).
    Inviscid,
}

impl DarcyForm {
    pub fn as_str(self) -> &'static str {
        match self {
            DarcyForm::MemoryKernel => "memory_kernel",
            DarcyForm::Steady => "steady",
            DarcyForm::Inviscid => "inviscid",
        }
    }

    fn cell_problem(self) -> CellProblem {
        match self {
            DarcyForm::MemoryKernel => CellProblem::UnsteadyStokes,
            DarcyForm::Steady => CellProblem::SteadyStokes,
            DarcyForm::Inviscid => CellProblem::NeumannB3,
        }
    }
}

/// Declared class of the body force, which selects the estimate route in the
/// rigid-skeleton case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcingClass {
    /// Bounded fluid pressure, requires p* < ∞.
    BoundedPressure,
    /// Potential force with 0 < p₂.
    Potential,
    /// Force acting on the solid part only, uniformly bounded.
    SolidSupported,
}

impl ForcingClass {
    pub fn parse(s: &str) -> Result<ForcingClass> {
        match s.trim() {
            "bounded_pressure" => Ok(ForcingClass::BoundedPressure),
            "potential" => Ok(ForcingClass::Potential),
            "solid_supported" => Ok(ForcingClass::SolidSupported),
            t => Err(Error::Invalid(format!(
                "forcing_class must be bounded_pressure, potential or solid_supported, got `{t}`"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ForcingClass::BoundedPressure => "bounded_pressure",
            ForcingClass::Potential => "potential",
            ForcingClass::SolidSupported => "solid_supported",
        }
    }
}

/// Parameter values to feed the cell problems of a regime.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bindings {
    pub lambda0: Option<ExtReal>,
    pub eta0: Option<ExtReal>,
    pub mu0: Option<ExtReal>,
    pub mu1: Option<ExtReal>,
    pub tau0: Option<ExtReal>,
    pub nu0: Option<ExtReal>,
    pub p_star: Option<ExtReal>,
}

impl Bindings {
    pub fn named(&self) -> Vec<(&'static str, ExtReal)> {
        [
            ("lambda0", self.lambda0),
            ("eta0", self.eta0),
            ("mu0", self.mu0),
            ("mu1", self.mu1),
            ("tau0", self.tau0),
            ("nu0", self.nu0),
            ("p_star", self.p_star),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenormalizationStep {
    pub description: String,
    /// Factor multiplying the displacement.
    pub displacement_scale: Power,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub theorem: TheoremTag,
    pub darcy_form: Option<DarcyForm>,
    pub required_cell_problems: BTreeSet<CellProblem>,
    pub bindings: Bindings,
    /// Which parameter each binding comes from, e.g. `("eta0", "eta2")`.
    pub remaps: Vec<(&'static str, &'static str)>,
    pub renormalization: Vec<RenormalizationStep>,
    pub forcing_route: Option<ForcingClass>,
    /// Second approximation emitted alongside the filtration problem.
    pub second: Option<Box<Regime>>,
    pub notes: Vec<String>,
}

impl Regime {
    fn new(theorem: TheoremTag) -> Regime {
        Regime {
            theorem,
            darcy_form: None,
            required_cell_problems: BTreeSet::new(),
            bindings: Bindings::default(),
            remaps: Vec::new(),
            renormalization: Vec::new(),
            forcing_route: None,
            second: None,
            notes: Vec::new(),
        }
    }

    /// All cell problems needed by this regime and its second approximation.
    pub fn all_cell_problems(&self) -> BTreeSet<CellProblem> {
        let mut s = self.required_cell_problems.clone();
        if let Some(second) = &self.second {
            s.extend(second.all_cell_problems());
        }
        s
    }

    fn drop_stokes_for_isolated_pores(&mut self, conn: &Connectivity) {
        if !conn.pores_isolated {
            return;
        }
        let before = self.required_cell_problems.len();
        self.required_cell_problems.remove(&CellProblem::SteadyStokes);
        self.required_cell_problems.remove(&CellProblem::UnsteadyStokes);
        if self.required_cell_problems.len() != before {
            self.notes.push("pores are isolated: permeability kernels vanish identically, Stokes cell problems skipped".into());
        }
    }
}

fn darcy_form(tau0: ExtReal, mu1: ExtReal) -> Result<DarcyForm> {
    match (tau0.is_zero(), mu1.is_zero()) {
        (false, false) => Ok(DarcyForm::MemoryKernel),
        (true, false) => Ok(DarcyForm::Steady),
        (false, true) => Ok(DarcyForm::Inviscid),
        (true, true) => Err(Error::Inadmissible(vec!["0 < τ₀ + μ₁ fails".into()])),
    }
}

fn filtration_tag(form: DarcyForm) -> TheoremTag {
    match form {
        DarcyForm::MemoryKernel => TheoremTag::T2_3_I_F1,
        DarcyForm::Steady => TheoremTag::T2_3_I_F2,
        DarcyForm::Inviscid => TheoremTag::T2_3_I_F3,
    }
}

/// Classification from limits alone. The branch λ₀ = μ₁ = λ₁ = ∞ needs the
/// exponents for its re-normalization and is rejected here; use
/// [`classify_spec`].
pub fn classify(limits: &LimitSet, conn: &Connectivity, forcing: ForcingClass) -> Result<Regime> {
    classify_inner(limits, None, conn, forcing, 0)
}

/// Full pipeline from the exponents: τ re-normalization if τ₀ = ∞,
/// admissibility check, then classification.
pub fn classify_spec(spec: &ScalingSpec, conn: &Connectivity, forcing: ForcingClass) -> Result<Regime> {
    spec.validate()?;
    let mut steps = Vec::new();
    let mut spec = *spec;
    if limit_of(spec.alpha_tau).is_infinite() {
        let s = apply_tau_renormalization(&spec)?;
        steps.push(RenormalizationStep {
            description: "w → α_τ w (all parameters divided by α_τ)".into(),
            displacement_scale: spec.alpha_tau,
        });
        spec = s;
    }
    let limits = derive_limits(&spec);
    let mut regime = classify_inner(&limits, Some(&spec), conn, forcing, 0)?;
    steps.append(&mut regime.renormalization);
    regime.renormalization = steps;
    Ok(regime)
}

fn classify_inner(
    l: &LimitSet,
    spec: Option<&ScalingSpec>,
    conn: &Connectivity,
    forcing: ForcingClass,
    depth: usize,
) -> Result<Regime> {
    check_admissible(l).into_result()?;
    if l.tau0.is_infinite() {
        return Err(Error::OutsideCoverage("τ₀ = ∞ requires the displacement re-normalization by α_τ".into()));
    }
    match l.lambda0 {
        ExtReal::Finite(_) if l.mu0.is_zero() => {
            if l.mu1.is_infinite() || conn.pores_isolated {
                let mut r = Regime::new(TheoremTag::T2_2_I);
                r.required_cell_problems.insert(CellProblem::ElasticCell);
                r.bindings = Bindings { lambda0: Some(l.lambda0), eta0: Some(l.eta0), tau0: Some(l.tau0), nu0: Some(l.nu0), p_star: Some(l.p_star), ..Default::default() };
                if conn.pores_isolated && !l.mu1.is_infinite() {
                    r.notes.push("isolated pores: one-velocity limit although μ₁ < ∞".into());
                }
                Ok(r)
            } else {
                let form = darcy_form(l.tau0, l.mu1)?;
                let mut r = Regime::new(TheoremTag::T2_2_II);
                r.darcy_form = Some(form);
                r.required_cell_problems.insert(CellProblem::ElasticCell);
                r.required_cell_problems.insert(form.cell_problem());
                r.bindings = Bindings {
                    lambda0: Some(l.lambda0),
                    eta0: Some(l.eta0),
                    mu1: Some(l.mu1),
                    tau0: Some(l.tau0),
                    nu0: Some(l.nu0),
                    p_star: Some(l.p_star),
                    ..Default::default()
                };
                Ok(r)
            }
        }
        ExtReal::Finite(_) => {
            // 0 < μ₀ < ∞ (μ₀ = ∞ was rejected as inadmissible)
            let tag = if conn.pores_isolated { TheoremTag::T2_4_lame_disconnected } else { TheoremTag::T2_4_visco };
            let mut r = Regime::new(tag);
            r.required_cell_problems.insert(CellProblem::ViscoI);
            r.required_cell_problems.insert(CellProblem::ViscoII);
            r.bindings = Bindings {
                lambda0: Some(l.lambda0),
                eta0: Some(l.eta0),
                mu0: Some(l.mu0),
                tau0: Some(l.tau0),
                nu0: Some(l.nu0),
                p_star: Some(l.p_star),
                ..Default::default()
            };
            Ok(r)
        }
        ExtReal::Zero => unreachable!("rejected by admissibility"),
        ExtReal::Infinite => {
            if !l.mu1.is_infinite() {
                return classify_rigid_skeleton(l, spec, conn, forcing);
            }
            match l.lambda1 {
                ExtReal::Zero => Err(Error::OutsideCoverage("λ₀ = ∞, μ₁ = ∞: hypothesis 0 < λ₁ fails".into())),
                ExtReal::Finite(_) => {
                    let mut failed = Vec::new();
                    if l.p1.is_zero() {
                        failed.push("p₁^{-1} < ∞");
                    }
                    if l.eta1.is_zero() {
                        failed.push("η₁^{-1} < ∞");
                    }
                    if !failed.is_empty() {
                        return Err(Error::OutsideCoverage(format!(
                            "λ₀ = ∞, μ₁ = ∞, 0 < λ₁ < ∞: hypothesis {} fails",
                            failed.join(" and ")
                        )));
                    }
                    let mut r = Regime::new(TheoremTag::T2_3_III);
                    r.darcy_form = Some(DarcyForm::Steady);
                    r.required_cell_problems.insert(CellProblem::ElasticCell);
                    r.required_cell_problems.insert(CellProblem::SteadyStokes);
                    r.bindings = Bindings {
                        lambda0: Some(l.lambda1),
                        eta0: Some(l.eta1),
                        mu1: Some(ExtReal::Finite(1.0)),
                        tau0: Some(ExtReal::Zero),
                        nu0: Some(ExtReal::Zero),
                        p_star: Some(l.p1),
                        ..Default::default()
                    };
                    r.remaps = vec![("lambda0", "lambda1"), ("eta0", "eta1"), ("p_star", "p1")];
                    r.renormalization.push(RenormalizationStep {
                        description: "w → ε⁻² α_μ w".into(),
                        displacement_scale: spec.map(|s| s.alpha_mu.div(Power::eps_pow(2))).unwrap_or(Power::one()),
                    });
                    r.drop_stokes_for_isolated_pores(conn);
                    Ok(r)
                }
                ExtReal::Infinite => {
                    let spec = spec.ok_or_else(|| {
                        Error::OutsideCoverage(
                            "λ₀ = μ₁ = λ₁ = ∞: the re-normalization w → ε⁻² α_μ w needs the parameter exponents, not only their limits".into(),
                        )
                    })?;
                    if depth > 4 {
                        return Err(Error::OutsideCoverage("re-normalization does not terminate".into()));
                    }
                    let renorm = apply_mu_renormalization(spec);
                    let mut r = classify_inner(&derive_limits(&renorm), Some(&renorm), conn, forcing, depth + 1)?;
                    r.renormalization.insert(
                        0,
                        RenormalizationStep {
                            description: "w → ε⁻² α_μ w with α_μ → ε², α_λ, α_τ, α_ν, α_p → ε² (·)/α_μ".into(),
                            displacement_scale: spec.alpha_mu.div(Power::eps_pow(2)),
                        },
                    );
                    Ok(r)
                }
            }
        }
    }
}

fn classify_rigid_skeleton(l: &LimitSet, spec: Option<&ScalingSpec>, conn: &Connectivity, forcing: ForcingClass) -> Result<Regime> {
    match forcing {
        ForcingClass::BoundedPressure if l.p_star.is_infinite() => {
            return Err(Error::OutsideCoverage(
                "λ₀ = ∞, μ₁ < ∞ with bounded-pressure forcing: hypothesis p* < ∞ fails".into(),
            ))
        }
        ForcingClass::Potential if l.p2.is_zero() => {
            return Err(Error::OutsideCoverage("λ₀ = ∞, μ₁ < ∞ with potential forcing: hypothesis 0 < p₂ fails".into()))
        }
        _ => {}
    }
    let form = darcy_form(l.tau0, l.mu1)?;
    let mut r = Regime::new(filtration_tag(form));
    r.darcy_form = Some(form);
    r.forcing_route = Some(forcing);
    r.required_cell_problems.insert(form.cell_problem());
    r.bindings = Bindings {
        mu1: Some(l.mu1),
        tau0: Some(l.tau0),
        nu0: Some(l.nu0),
        p_star: Some(l.p_star),
        ..Default::default()
    };
    r.drop_stokes_for_isolated_pores(conn);
    if forcing == ForcingClass::Potential {
        let mut second = Regime::new(TheoremTag::T2_3_II);
        second.required_cell_problems.insert(CellProblem::ElasticCell);
        second.bindings = Bindings { lambda0: Some(ExtReal::Finite(1.0)), eta0: Some(l.eta2), ..Default::default() };
        second.remaps = vec![("eta0", "eta2"), ("lambda0", "1")];
        second.renormalization.push(RenormalizationStep {
            description: "w → α_λ w with α_η → α_η/α_λ, α_λ → 1, α_τ → α_τ/α_λ".into(),
            displacement_scale: spec.map(|s| s.alpha_lambda).unwrap_or(Power::one()),
        });
        second.notes.push("the pressure q is taken from the filtration problem".into());
        r.second = Some(Box::new(second));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    fn connected() -> Connectivity {
        Connectivity {
            fluid_connected: true,
            solid_connected: true,
            pores_isolated: false,
            fluid_wraps: [true; 3],
            fluid_components: 1,
            solid_components: 1,
        }
    }

    fn isolated() -> Connectivity {
        Connectivity { fluid_connected: false, pores_isolated: true, fluid_wraps: [false; 3], ..connected() }
    }

    fn spec_with(a_mu: Rational64, a_lambda: Rational64) -> ScalingSpec {
        ScalingSpec {
            alpha_mu: Power { c: 1.0, a: a_mu },
            alpha_lambda: Power { c: 1.0, a: a_lambda },
            ..ScalingSpec::unit()
        }
    }

    #[test]
    fn limit_of_examples() {
        assert_eq!(limit_of(Power { c: 2.0, a: r(1, 1) }), ExtReal::Zero);
        assert_eq!(limit_of(Power { c: 3.5, a: r(0, 1) }), ExtReal::Finite(3.5));
        assert_eq!(limit_of(Power { c: 1.0, a: r(-3, 2) }), ExtReal::Infinite);
    }

    #[test]
    fn derive_limits_examples() {
        let l = derive_limits(&spec_with(r(2, 1), r(0, 1)));
        assert_eq!((l.mu0, l.mu1, l.lambda0), (ExtReal::Zero, ExtReal::Finite(1.0), ExtReal::Finite(1.0)));
        let l = derive_limits(&spec_with(r(1, 2), r(-3, 2)));
        assert_eq!((l.lambda0, l.mu1, l.lambda1), (ExtReal::Infinite, ExtReal::Infinite, ExtReal::Finite(1.0)));
        let l = derive_limits(&spec_with(r(0, 1), r(0, 1)));
        assert_eq!((l.mu0, l.lambda0), (ExtReal::Finite(1.0), ExtReal::Finite(1.0)));
    }

    #[test]
    fn coefficients_combine_in_ratios() {
        let spec = ScalingSpec {
            alpha_mu: Power { c: 4.0, a: r(2, 1) },
            alpha_p: Power { c: 6.0, a: r(0, 1) },
            alpha_lambda: Power { c: 3.0, a: r(0, 1) },
            alpha_eta: Power { c: 9.0, a: r(0, 1) },
            ..ScalingSpec::unit()
        };
        let l = derive_limits(&spec);
        assert_eq!(l.mu1, ExtReal::Finite(4.0));
        assert_eq!(l.p1, ExtReal::Finite(1.5));
        assert_eq!(l.lambda1, ExtReal::Finite(0.75));
        assert_eq!(l.eta2, ExtReal::Finite(3.0));
        assert_eq!(l.p2, ExtReal::Finite(2.0));
    }

    #[test]
    fn admissibility_clauses() {
        let ok = LimitSet {
            mu0: ExtReal::Zero,
            lambda0: ExtReal::Finite(1.0),
            tau0: ExtReal::Finite(1.0),
            nu0: ExtReal::Zero,
            p_star: ExtReal::Infinite,
            eta0: ExtReal::Finite(1.0),
            mu1: ExtReal::Finite(1.0),
            p1: ExtReal::Finite(1.0),
            lambda1: ExtReal::Finite(1.0),
            eta1: ExtReal::Finite(1.0),
            eta2: ExtReal::Finite(1.0),
            p2: ExtReal::Finite(1.0),
        };
        assert!(check_admissible(&ok).is_ok());
        let bad = LimitSet { lambda0: ExtReal::Zero, ..ok };
        assert_eq!(check_admissible(&bad).violations, vec!["λ₀^{-1} < ∞ fails"]);
        let bad = LimitSet { tau0: ExtReal::Zero, mu1: ExtReal::Zero, ..ok };
        assert_eq!(check_admissible(&bad).violations, vec!["0 < τ₀ + μ₁ fails"]);
    }

    #[test]
    fn tau_renormalization() {
        let spec = ScalingSpec { alpha_tau: Power { c: 1.0, a: r(-1, 1) }, ..ScalingSpec::unit() };
        let s = apply_tau_renormalization(&spec).unwrap();
        assert!(!derive_limits(&s).tau0.is_infinite());
        assert_eq!(s.displacement_scale, Power { c: 1.0, a: r(-1, 1) });
        assert_eq!(s.alpha_mu, Power { c: 1.0, a: r(1, 1) });

        let spec = ScalingSpec { alpha_tau: Power { c: 2.0, a: r(-2, 1) }, ..ScalingSpec::unit() };
        assert_eq!(apply_tau_renormalization(&spec).unwrap().displacement_scale, Power { c: 2.0, a: r(-2, 1) });

        assert!(matches!(apply_tau_renormalization(&ScalingSpec::unit()), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn classifier_examples() {
        let reg = classify_spec(&spec_with(r(2, 1), r(0, 1)), &connected(), ForcingClass::BoundedPressure).unwrap();
        assert_eq!(reg.theorem, TheoremTag::T2_2_II);
        assert_eq!(reg.darcy_form, Some(DarcyForm::MemoryKernel));
        assert!(reg.required_cell_problems.contains(&CellProblem::UnsteadyStokes));

        let intro = ScalingSpec {
            alpha_p: Power { c: 1.0, a: r(-2, 1) },
            alpha_eta: Power { c: 1.0, a: r(-2, 1) },
            ..spec_with(r(1, 2), r(-3, 2))
        };
        let reg = classify_spec(&intro, &connected(), ForcingClass::BoundedPressure).unwrap();
        assert_eq!(reg.theorem, TheoremTag::T2_3_III);
        assert_eq!(reg.bindings.lambda0, Some(ExtReal::Finite(1.0)));
        assert_eq!(reg.bindings.mu1, Some(ExtReal::Finite(1.0)));

        let reg = classify_spec(&spec_with(r(0, 1), r(0, 1)), &isolated(), ForcingClass::BoundedPressure).unwrap();
        assert_eq!(reg.theorem, TheoremTag::T2_4_lame_disconnected);
    }

    #[test]
    fn p1_zero_is_outside_coverage() {
        // α_p = 1 gives p₁ = lim ε^{3/2} = 0
        let err = classify_spec(&spec_with(r(1, 2), r(-3, 2)), &connected(), ForcingClass::BoundedPressure).unwrap_err();
        assert!(matches!(err, Error::OutsideCoverage(ref m) if m.contains("p₁")), "{err}");
    }

    #[test]
    fn potential_forcing_emits_second_approximation() {
        let spec = ScalingSpec {
            alpha_eta: Power { c: 2.0, a: r(-1, 1) },
            alpha_p: Power { c: 3.0, a: r(-1, 1) },
            ..spec_with(r(2, 1), r(-1, 1))
        };
        let reg = classify_spec(&spec, &connected(), ForcingClass::Potential).unwrap();
        assert_eq!(reg.theorem, TheoremTag::T2_3_I_F1);
        let second = reg.second.unwrap();
        assert_eq!(second.theorem, TheoremTag::T2_3_II);
        assert_eq!(second.bindings.eta0, Some(ExtReal::Finite(2.0)));
        assert_eq!(second.bindings.lambda0, Some(ExtReal::Finite(1.0)));

        // p* = ∞ here, so the bounded-pressure route is not available
        assert!(matches!(classify_spec(&spec, &connected(), ForcingClass::BoundedPressure), Err(Error::OutsideCoverage(_))));
        let reg = classify_spec(&spec, &connected(), ForcingClass::SolidSupported).unwrap();
        assert!(reg.second.is_none());
    }

    #[test]
    fn recursion_after_mu_renormalization() {
        // a_λ = -2, a_μ = 1 gives λ₁ = ∞; after re-normalization p* = lim ε^0 is finite
        let spec = ScalingSpec { alpha_p: Power { c: 1.0, a: r(-1, 1) }, ..spec_with(r(1, 1), r(-2, 1)) };
        let reg = classify_spec(&spec, &connected(), ForcingClass::BoundedPressure).unwrap();
        assert_eq!(reg.theorem, TheoremTag::T2_3_I_F2);
        assert_eq!(reg.renormalization.len(), 1);
        assert_eq!(reg.renormalization[0].displacement_scale, Power { c: 1.0, a: r(-1, 1) });
        // the limits-only entry point cannot re-normalize
        let l = derive_limits(&spec);
        assert!(matches!(classify(&l, &connected(), ForcingClass::BoundedPressure), Err(Error::OutsideCoverage(_))));
    }

    #[test]
    fn isolated_pores_never_need_stokes() {
        let spec = ScalingSpec { alpha_p: Power { c: 1.0, a: r(-1, 1) }, ..spec_with(r(1, 1), r(-2, 1)) };
        let reg = classify_spec(&spec, &isolated(), ForcingClass::BoundedPressure).unwrap();
        assert!(!reg.all_cell_problems().contains(&CellProblem::SteadyStokes));
    }

    #[test]
    fn parse_exponents() {
        assert_eq!(parse_exponent("-3/2").unwrap(), r(-3, 2));
        assert_eq!(parse_exponent("0.5").unwrap(), r(1, 2));
        assert_eq!(parse_exponent("-1.25").unwrap(), r(-5, 4));
        assert_eq!(parse_exponent("2").unwrap(), r(2, 1));
        assert!(parse_exponent("1/0").is_err());
        assert!(parse_exponent("abc").is_err());
    }

    const LATTICE: [(i64, i64); 7] = [(-2, 1), (-3, 2), (-1, 1), (0, 1), (1, 2), (1, 1), (2, 1)];

    fn lattice_point(ix: [usize; 6]) -> ScalingSpec {
        let p = |k: usize| Power { c: 1.0, a: r(LATTICE[ix[k]].0, LATTICE[ix[k]].1) };
        ScalingSpec {
            alpha_tau: p(0),
            alpha_nu: p(1),
            alpha_mu: p(2),
            alpha_p: p(3),
            alpha_eta: p(4),
            alpha_lambda: p(5),
            ..ScalingSpec::unit()
        }
    }

    #[test]
    fn classifier_is_total_on_the_lattice() {
        let conns = [connected(), isolated()];
        let forcings = [ForcingClass::BoundedPressure, ForcingClass::Potential, ForcingClass::SolidSupported];
        let mut counts = [0usize; 3];
        for n in 0..7usize.pow(6) {
            let ix: [usize; 6] = std::array::from_fn(|k| (n / 7usize.pow(k as u32)) % 7);
            let spec = lattice_point(ix);
            for conn in &conns {
                for &f in &forcings {
                    match classify_spec(&spec, conn, f) {
                        Ok(reg) => {
                            counts[0] += 1;
                            if conn.pores_isolated {
                                let all = reg.all_cell_problems();
                                assert!(!all.contains(&CellProblem::SteadyStokes) && !all.contains(&CellProblem::UnsteadyStokes));
                            }
                        }
                        Err(Error::OutsideCoverage(_)) => counts[1] += 1,
                        Err(Error::Inadmissible(_)) => counts[2] += 1,
                        Err(e) => panic!("unexpected error {e}"),
                    }
                }
            }
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn tree_branches_are_exclusive() {
        // every admissible (λ₀, μ₀) pair lands in exactly one family
        for lam in [ExtReal::Finite(1.0), ExtReal::Infinite] {
            for mu0 in [ExtReal::Zero, ExtReal::Finite(1.0)] {
                let fam = match (lam, mu0) {
                    (ExtReal::Finite(_), ExtReal::Zero) => 0,
                    (ExtReal::Finite(_), ExtReal::Finite(_)) => 2,
                    (ExtReal::Infinite, _) => 1,
                    _ => unreachable!(),
                };
                let hits = [
                    lam.is_finite_positive() && mu0.is_zero(),
                    lam.is_infinite(),
                    lam.is_finite_positive() && mu0.is_finite_positive(),
                ];
                assert_eq!(hits.iter().filter(|&&h| h).count(), 1);
                assert!(hits[fam]);
            }
        }
    }

    proptest! {
        #[test]
        fn case_tag_is_coefficient_independent(
            ix in proptest::array::uniform6(0usize..7),
            k in 0usize..6,
            scale in 0.01f64..100.0,
        ) {
            let base = lattice_point(ix);
            let mut scaled = base;
            let target = match k {
                0 => &mut scaled.alpha_tau,
                1 => &mut scaled.alpha_nu,
                2 => &mut scaled.alpha_mu,
                3 => &mut scaled.alpha_p,
                4 => &mut scaled.alpha_eta,
                _ => &mut scaled.alpha_lambda,
            };
            prop_assume!(!target.a.is_zero());
            target.c *= scale;
            let a = classify_spec(&base, &connected(), ForcingClass::Potential);
            let b = classify_spec(&scaled, &connected(), ForcingClass::Potential);
            match (a, b) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x.theorem, y.theorem),
                (Err(x), Err(y)) => prop_assert_eq!(std::mem::discriminant(&x), std::mem::discriminant(&y)),
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x.map(|r| r.theorem), y.map(|r| r.theorem)),
            }
        }

        #[test]
        fn tau_renormalization_yields_finite_tau(a in -8i64..0, d in 1i64..4, c in 0.1f64..10.0) {
            let spec = ScalingSpec { alpha_tau: Power { c, a: r(a, d) }, ..ScalingSpec::unit() };
            let s = apply_tau_renormalization(&spec).unwrap();
            prop_assert!(!derive_limits(&s).tau0.is_infinite());
        }
    }
}
