//! Property suites over a seeded battery of random arm models.
//!
//! Each suite checks one structural property of the single-arm problem
//! against the grid oracle: closed-form/oracle index agreement, the
//! single-threshold structure, indexability, Lipschitz and subsidy-derivative
//! bounds, and the vanishing-discount limit.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{subsidy_bounds, ArmKind, ArmModel, Belief, Criterion};
use crate::index::{index_average, index_discounted, index_oracle_with, indexability_audit, OracleOptions};
use crate::value::{switch_tolerance, ValueSolver};

pub const BATTERY_BETAS: [f64; 3] = [0.5, 0.9, 0.99];
pub const VANISHING_BETAS: [f64; 4] = [0.9, 0.99, 0.999, 0.9999];

pub fn battery_beliefs() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    BaseA,
    BaseB,
    DualA,
    DualB,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::BaseA, Family::BaseB, Family::DualA, Family::DualB];

    pub fn kind(self) -> ArmKind {
        match self {
            Family::BaseA | Family::DualA => ArmKind::TypeA,
            Family::BaseB | Family::DualB => ArmKind::TypeB,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::BaseA => "Base-A",
            Family::BaseB => "Base-B",
            Family::DualA => "Dual-A",
            Family::DualB => "Dual-B",
        })
    }
}

/// Draws one model of a family: `p` in [0.05, 0.45], `q` in
/// [0.05, 1 - p - 0.05], `rho0` in [0.02, 0.3], `rho1` in [0.5, 0.95].
pub fn random_model<R: Rng>(family: Family, rng: &mut R) -> ArmModel {
    let p = rng.gen_range(0.05..=0.45);
    let rho0 = rng.gen_range(0.02..=0.3);
    let rho1 = rng.gen_range(0.5..=0.95);
    let model = match family {
        Family::BaseA | Family::BaseB => ArmModel::base(family.kind(), p, rho0, rho1),
        Family::DualA | Family::DualB => {
            let q = rng.gen_range(0.05..=(1.0 - p - 0.05));
            ArmModel::dual_speed(family.kind(), p, q, rho0, rho1)
        }
    };
    model.expect("battery ranges satisfy the model invariants")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub family: Family,
    pub id: usize,
    pub model: ArmModel,
}

/// `per_family` models of each family, in family order, from one seed.
pub fn battery(per_family: usize, seed: u64) -> Vec<BatteryModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Family::ALL
        .iter()
        .flat_map(|&family| (0..per_family).map(move |id| (family, id)))
        .map(|(family, id)| BatteryModel { family, id, model: random_model(family, &mut rng) })
        .collect()
}

/// Settings shared by every suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub models_per_family: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub value_tol: f64,
    pub oracle: OracleOptions,
    pub index_tolerance: f64,
    pub threshold_lambdas: usize,
    pub audit_lambdas: usize,
    pub lipschitz_lambdas: usize,
    pub derivative_step: f64,
    pub vanishing_tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            models_per_family: 50,
            seed: 2017,
            grid_size: 2001,
            value_tol: 1e-10,
            oracle: OracleOptions::default(),
            index_tolerance: 5e-3,
            threshold_lambdas: 20,
            audit_lambdas: 50,
            lipschitz_lambdas: 5,
            derivative_step: 1e-3,
            vanishing_tolerance: 5e-2,
        }
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn lambdas_in(model: &ArmModel, beta: f64, count: usize) -> Vec<f64> {
    let r = subsidy_bounds(model, Criterion::Discounted(beta));
    if count == 1 {
        return vec![0.5 * (r.lambda_low + r.lambda_high)];
    }
    let step = (r.lambda_high - r.lambda_low) / (count - 1) as f64;
    (0..count).map(|i| r.lambda_low + step * i as f64).collect()
}

/// Largest closed-form/oracle gap found for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyGap {
    pub family: Family,
    pub max_gap: f64,
    pub worst: Option<GapWitness>,
    pub failures: usize,
    pub evaluated: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapWitness {
    pub model: ArmModel,
    pub beta: f64,
    pub pi: f64,
    pub closed_form: f64,
    pub oracle: f64,
}

/// Closed-form discounted index against the bisection oracle at every
/// battery model, discount factor and belief.
pub fn oracle_agreement(models: &[BatteryModel], cfg: &VerifyConfig) -> Vec<FamilyGap> {
    let beliefs = battery_beliefs();
    let per_model: Vec<(Family, Vec<Result<GapWitness, String>>)> = models
        .par_iter()
        .flat_map_iter(|bm| BATTERY_BETAS.iter().map(move |&beta| (bm, beta)))
        .map(|(bm, beta)| {
            let outcomes = match ValueSolver::new(bm.model, beta, cfg.oracle.grid_size) {
                Err(e) => vec![Err(e.to_string())],
                Ok(solver) => beliefs
                    .iter()
                    .map(|&pi| {
                        let b = Belief::new(pi).expect("lattice beliefs are valid");
                        let closed = index_discounted(&bm.model, beta, b).map_err(|e| e.to_string())?;
                        let oracle = index_oracle_with(&solver, b, &cfg.oracle).map_err(|e| e.to_string())?;
                        Ok(GapWitness { model: bm.model, beta, pi, closed_form: closed.w, oracle: oracle.w })
                    })
                    .collect(),
            };
            (bm.family, outcomes)
        })
        .collect();

    Family::ALL
        .iter()
        .filter_map(|&family| {
            let mut gap = FamilyGap {
                family,
                max_gap: 0.0,
                worst: None,
                failures: 0,
                evaluated: 0,
                errors: Vec::new(),
            };
            let mut seen = false;
            for (_, outcomes) in per_model.iter().filter(|(f, _)| *f == family) {
                seen = true;
                for outcome in outcomes {
                    match outcome {
                        Ok(w) => {
                            gap.evaluated += 1;
                            let g = (w.closed_form - w.oracle).abs();
                            if g > cfg.index_tolerance {
                                gap.failures += 1;
                            }
                            if g > gap.max_gap || gap.worst.is_none() {
                                gap.max_gap = g.max(gap.max_gap);
                                gap.worst = Some(*w);
                            }
                        }
                        Err(e) => {
                            gap.failures += 1;
                            gap.errors.push(e.clone());
                        }
                    }
                }
            }
            seen.then_some(gap)
        })
        .collect()
}

pub fn oracle_suite(models: &[BatteryModel], cfg: &VerifyConfig) -> Vec<CheckOutcome> {
    oracle_agreement(models, cfg)
        .into_iter()
        .map(|g| {
            let mut detail = format!(
                "max |closed - oracle| = {:.3e} over {} points (tolerance {:.0e}, grid {}, lambda-tol {:.0e}), {} failures",
                g.max_gap, g.evaluated, cfg.index_tolerance, cfg.oracle.grid_size, cfg.oracle.lambda_tol, g.failures
            );
            if let Some(w) = g.worst.filter(|_| g.failures > 0) {
                detail.push_str(&format!(
                    "; worst at beta={} pi={} closed={:.6} oracle={:.6} model={:?}",
                    w.beta, w.pi, w.closed_form, w.oracle, w.model
                ));
            }
            if let Some(e) = g.errors.first() {
                detail.push_str(&format!("; first error: {e}"));
            }
            CheckOutcome { name: format!("oracle/{}", g.family), passed: g.failures == 0, detail }
        })
        .collect()
}

/// Sign pattern of play-minus-idle switches at most once, from play to idle,
/// at `threshold_lambdas` subsidies spanning `[lambda_low, lambda_high]`.
pub fn threshold_suite(models: &[BatteryModel], cfg: &VerifyConfig) -> Vec<CheckOutcome> {
    per_family(models, |bm| {
        let mut violations = Vec::new();
        let mut checked = 0usize;
        for &beta in &BATTERY_BETAS {
            let solver = match ValueSolver::new(bm.model, beta, cfg.grid_size) {
                Ok(s) => s,
                Err(e) => return (0, vec![e.to_string()]),
            };
            let mut warm: Option<Vec<f64>> = None;
            for lambda in lambdas_in(&bm.model, beta, cfg.threshold_lambdas) {
                match solver.solve_policy_iteration(lambda, cfg.value_tol, warm.as_deref()) {
                    Ok(sol) => {
                        let table = solver.table(lambda, &sol.v);
                        let s = table.sign_switches(switch_tolerance(cfg.value_tol));
                        checked += 1;
                        if s.count > 1 || s.idle_to_play {
                            violations.push(format!(
                                "model {:?} beta {beta} lambda {lambda}: {} switches",
                                bm.model, s.count
                            ));
                        }
                        warm = Some(sol.v);
                    }
                    Err(e) => violations.push(e.to_string()),
                }
            }
        }
        (checked, violations)
    })
    .into_iter()
    .map(|(family, checked, violations)| CheckOutcome {
        name: format!("threshold/{family}"),
        passed: violations.is_empty(),
        detail: summarize(checked, "value tables", &violations),
    })
    .collect()
}

/// `pi_T(lambda)` non-increasing over an `audit_lambdas`-point sweep.
pub fn indexability_suite(models: &[BatteryModel], cfg: &VerifyConfig) -> Vec<CheckOutcome> {
    per_family(models, |bm| {
        let mut violations = Vec::new();
        let mut checked = 0usize;
        for &beta in &BATTERY_BETAS {
            match indexability_audit(&bm.model, beta, cfg.audit_lambdas, cfg.grid_size, cfg.value_tol) {
                Ok(report) => {
                    checked += 1;
                    if !report.pass {
                        violations.push(format!(
                            "model {:?} beta {beta}: increasing at sweep positions {:?}",
                            bm.model, report.violations
                        ));
                    }
                }
                Err(e) => violations.push(format!("model {:?} beta {beta}: {e}", bm.model)),
            }
        }
        (checked, violations)
    })
    .into_iter()
    .map(|(family, checked, violations)| CheckOutcome {
        name: format!("indexability/{family}"),
        passed: violations.is_empty(),
        detail: summarize(checked, "audits", &violations),
    })
    .collect()
}

/// Largest excess of `|V(a) - V(b)|` over `lipschitz |a - b|` across all grid
/// pairs, in linear time via running extrema of `V -/+ lipschitz * pi`.
pub fn lipschitz_excess(grid: &[f64], v: &[f64], lipschitz: f64) -> f64 {
    let mut best_minus = f64::NEG_INFINITY; // max over earlier i of V_i + L pi_i
    let mut best_plus = f64::INFINITY; // min over earlier i of V_i - L pi_i
    let mut excess = f64::NEG_INFINITY;
    for (&x, &y) in grid.iter().zip(v) {
        if best_minus.is_finite() {
            excess = excess.max(best_minus - (y + lipschitz * x));
            excess = excess.max((y - lipschitz * x) - best_plus);
        }
        best_minus = best_minus.max(y + lipschitz * x);
        best_plus = best_plus.min(y - lipschitz * x);
    }
    excess
}

/// Lipschitz bound in the belief and the subsidy-derivative bound, on the
/// value tables of `lipschitz_lambdas` subsidies per model and discount.
pub fn lipschitz_suite(models: &[BatteryModel], cfg: &VerifyConfig) -> Vec<CheckOutcome> {
    let results = per_family(models, |bm| {
        let mut violations = Vec::new();
        let mut checked = 0usize;
        let lip = bm.model.rho1() - bm.model.rho0();
        for &beta in &BATTERY_BETAS {
            let solver = match ValueSolver::new(bm.model, beta, cfg.grid_size) {
                Ok(s) => s,
                Err(e) => return (0, vec![e.to_string()]),
            };
            let slack = 2.0 * solver.spacing() * lip;
            let upper = 1.0 / (1.0 - beta) + 1e-6;
            let mut warm: Option<Vec<f64>> = None;
            for lambda in lambdas_in(&bm.model, beta, cfg.lipschitz_lambdas) {
                let step = cfg.derivative_step;
                let pair = solver
                    .solve_policy_iteration(lambda, cfg.value_tol, warm.as_deref())
                    .and_then(|lo| {
                        let hi = solver.solve_policy_iteration(lambda + step, cfg.value_tol, Some(&lo.v))?;
                        Ok((lo, hi))
                    });
                let (lo, hi) = match pair {
                    Ok(p) => p,
                    Err(e) => {
                        violations.push(e.to_string());
                        continue;
                    }
                };
                checked += 1;
                let t_lo = solver.table(lambda, &lo.v);
                let t_hi = solver.table(lambda + step, &hi.v);
                let excess = lipschitz_excess(&t_lo.grid, &t_lo.v, lip);
                if excess > slack {
                    violations.push(format!(
                        "model {:?} beta {beta} lambda {lambda}: Lipschitz excess {excess:.3e} > {slack:.3e}",
                        bm.model
                    ));
                }
                let branches = [
                    (&t_lo.v, &t_hi.v),
                    (&t_lo.v_play, &t_hi.v_play),
                    (&t_lo.v_idle, &t_hi.v_idle),
                ];
                for (name, (a, b)) in ["V", "V_play", "V_idle"].iter().zip(branches) {
                    let (min_d, max_d) = a.iter().zip(b.iter()).fold(
                        (f64::INFINITY, f64::NEG_INFINITY),
                        |(mn, mx), (x, y)| {
                            let d = (y - x) / step;
                            (mn.min(d), mx.max(d))
                        },
                    );
                    // value tolerance turns into a derivative error of 2 tol / step
                    let fd_noise = 2.0 * cfg.value_tol / step;
                    if min_d < -fd_noise || max_d > upper + fd_noise {
                        violations.push(format!(
                            "model {:?} beta {beta} lambda {lambda}: d{name}/dlambda in [{min_d:.6}, {max_d:.6}] outside [0, {upper:.6}]",
                            bm.model
                        ));
                    }
                }
                warm = Some(hi.v);
            }
        }
        (checked, violations)
    });
    results
        .into_iter()
        .map(|(family, checked, violations)| CheckOutcome {
            name: format!("lipschitz/{family}"),
            passed: violations.is_empty(),
            detail: summarize(checked, "value-table pairs", &violations),
        })
        .collect()
}

/// Vanishing-discount checks. Base-B: `|W_beta(pi) - rho1| = (1 - beta)
/// (rho1 - rho0) pi` to 1e-12. Base-A: `|W_0.9999 - W_avg| <= tolerance` and
/// the gap shrinks monotonically along `beta in {0.9, 0.99, 0.999, 0.9999}`.
pub fn vanishing_discount_suite(models: &[BatteryModel], cfg: &VerifyConfig) -> Vec<CheckOutcome> {
    let beliefs = battery_beliefs();
    let mut out = Vec::new();
    for family in [Family::BaseB, Family::BaseA] {
        let mut violations = Vec::new();
        let mut worst = 0.0f64;
        let mut checked = 0usize;
        for bm in models.iter().filter(|bm| bm.family == family) {
            let m = &bm.model;
            for &pi in &beliefs {
                let b = Belief::new(pi).expect("lattice beliefs are valid");
                let avg = match index_average(m, b) {
                    Ok(r) => r.w,
                    Err(e) => {
                        violations.push(e.to_string());
                        continue;
                    }
                };
                let gaps: Vec<f64> = VANISHING_BETAS
                    .iter()
                    .map(|&beta| {
                        index_discounted(m, beta, b).map(|r| r.w).unwrap_or(f64::NAN)
                    })
                    .map(|w| if family == Family::BaseB { w } else { (w - avg).abs() })
                    .collect();
                checked += 1;
                match family {
                    Family::BaseB => {
                        for (&beta, &w) in VANISHING_BETAS.iter().zip(&gaps) {
                            let lhs = (w - m.rho1()).abs();
                            let rhs = (1.0 - beta) * (m.rho1() - m.rho0()) * pi;
                            worst = worst.max((lhs - rhs).abs());
                            if !((lhs - rhs).abs() <= 1e-12) {
                                violations.push(format!(
                                    "model {m:?} beta {beta} pi {pi}: |W - rho1| = {lhs:e}, expected {rhs:e}"
                                ));
                            }
                        }
                    }
                    _ => {
                        let last = *gaps.last().unwrap();
                        worst = worst.max(last);
                        if !(last <= cfg.vanishing_tolerance) {
                            violations.push(format!(
                                "model {m:?} pi {pi}: |W_0.9999 - W_avg| = {last:.4e}"
                            ));
                        }
                        if gaps.windows(2).any(|w| !(w[1] <= w[0])) {
                            violations.push(format!(
                                "model {m:?} pi {pi}: gap not decreasing along beta: {gaps:?}"
                            ));
                        }
                    }
                }
            }
        }
        let name = format!("vanishing-discount/{family}");
        let detail = format!(
            "{}; worst {}",
            summarize(checked, "beliefs", &violations),
            if family == Family::BaseB {
                format!("identity residual {worst:.3e}")
            } else {
                format!("gap at beta=0.9999 {worst:.3e} (tolerance {:.0e})", cfg.vanishing_tolerance)
            }
        );
        out.push(CheckOutcome { name, passed: violations.is_empty(), detail });
    }
    out
}

fn summarize(checked: usize, what: &str, violations: &[String]) -> String {
    match violations.first() {
        None => format!("{checked} {what} checked, 0 violations"),
        Some(first) => format!(
            "{checked} {what} checked, {} violations; first: {first}",
            violations.len()
        ),
    }
}

fn per_family<F>(models: &[BatteryModel], check: F) -> Vec<(Family, usize, Vec<String>)>
where
    F: Fn(&BatteryModel) -> (usize, Vec<String>) + Sync,
{
    let results: Vec<(Family, usize, Vec<String>)> = models
        .par_iter()
        .map(|bm| {
            let (n, v) = check(bm);
            (bm.family, n, v)
        })
        .collect();
    Family::ALL
        .iter()
        .filter(|f| results.iter().any(|(g, _, _)| g == *f))
        .map(|&family| {
            let (n, v) = results
                .iter()
                .filter(|(f, _, _)| *f == family)
                .fold((0, Vec::new()), |(n, mut acc), (_, k, v)| {
                    acc.extend(v.iter().cloned());
                    (n + k, acc)
                });
            (family, n, v)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    Lipschitz,
    Threshold,
    Indexability,
    Oracle,
    VanishingDiscount,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] =
        ["lipschitz", "threshold", "indexability", "oracle", "vanishing-discount", "all"];
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "lipschitz" => Suite::Lipschitz,
            "threshold" => Suite::Threshold,
            "indexability" => Suite::Indexability,
            "oracle" => Suite::Oracle,
            "vanishing-discount" => Suite::VanishingDiscount,
            "all" => Suite::All,
            other => {
                return Err(format!(
                    "unknown suite `{other}`; expected one of {}",
                    Suite::NAMES.join(", ")
                ))
            }
        })
    }
}

pub fn run_suite(suite: Suite, cfg: &VerifyConfig) -> Vec<CheckOutcome> {
    let models = battery(cfg.models_per_family, cfg.seed);
    match suite {
        Suite::Lipschitz => lipschitz_suite(&models, cfg),
        Suite::Threshold => threshold_suite(&models, cfg),
        Suite::Indexability => indexability_suite(&models, cfg),
        Suite::Oracle => oracle_suite(&models, cfg),
        Suite::VanishingDiscount => vanishing_discount_suite(&models, cfg),
        Suite::All => {
            let mut out = lipschitz_suite(&models, cfg);
            out.extend(threshold_suite(&models, cfg));
            out.extend(indexability_suite(&models, cfg));
            out.extend(oracle_suite(&models, cfg));
            out.extend(vanishing_discount_suite(&models, cfg));
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_is_seeded_and_valid() {
        let a = battery(5, 9);
        let b = battery(5, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        for bm in &a {
            let m = bm.model;
            assert!((0.05..=0.45).contains(&m.p()));
            assert!((0.02..=0.3).contains(&m.rho0()));
            assert!((0.5..=0.95).contains(&m.rho1()));
            assert_eq!(m.kind(), bm.family.kind());
            if let Some(q) = m.q() {
                assert!(q >= 0.05 && q <= 1.0 - m.p() - 0.05 + 1e-12);
            }
        }
        assert_ne!(battery(5, 10), a);
    }

    #[test]
    fn lipschitz_excess_matches_brute_force() {
        let grid: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let v: Vec<f64> = grid.iter().map(|x| (3.0 * x).sin() * 0.4 - x * x).collect();
        let lip = 0.7;
        let mut brute = f64::NEG_INFINITY;
        for i in 0..grid.len() {
            for j in (i + 1)..grid.len() {
                brute = brute.max((v[i] - v[j]).abs() - lip * (grid[j] - grid[i]));
            }
        }
        let fast = lipschitz_excess(&grid, &v, lip);
        assert!((fast - brute).abs() < 1e-12, "fast {fast} brute {brute}");
    }

    #[test]
    fn suite_names_parse() {
        for name in Suite::NAMES {
            assert!(name.parse::<Suite>().is_ok());
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn small_battery_passes_structural_suites() {
        let cfg = VerifyConfig {
            models_per_family: 2,
            grid_size: 401,
            audit_lambdas: 10,
            threshold_lambdas: 6,
            lipschitz_lambdas: 2,
            ..Default::default()
        };
        let models = battery(cfg.models_per_family, cfg.seed);
        for suite in [threshold_suite(&models, &cfg), indexability_suite(&models, &cfg), lipschitz_suite(&models, &cfg)] {
            for outcome in suite {
                assert!(outcome.passed, "{outcome}");
            }
        }
    }
}
