//! Utility-cost metrics for memory: pointwise information gain in bits, its
//! density per memory token, entropy-based diagnostics and budget sweeps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DIST_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_EPSILON_FRACTION: f64 = 0.01;
pub const DEFAULT_TAU_CONF: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("instance excluded: memory has zero tokens")]
    Excluded,
    #[error("validation error: {0}")]
    Validation(String),
}

pub type EvalResult<T> = Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub p_base: f64,
    pub p_mem: f64,
    pub memory_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_dist: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_dist: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub astar_index: Option<usize>,
    /// Token budget the record was produced under; groups sweep points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

fn check_prob(name: &str, p: f64) -> EvalResult<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(EvalError::Domain(format!("{name} = {p} outside [0, 1]")));
    }
    Ok(())
}

pub fn check_dist(dist: &[f64]) -> EvalResult<()> {
    if dist.is_empty() {
        return Err(EvalError::Validation("empty distribution".into()));
    }
    if let Some(x) = dist.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(EvalError::Validation(format!(
            "component {x} is negative or not finite"
        )));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > DIST_TOLERANCE {
        return Err(EvalError::Validation(format!(
            "distribution sums to {total}, not 1"
        )));
    }
    Ok(())
}

impl EvalRecord {
    pub fn validate(&self) -> EvalResult<()> {
        check_prob("p_base", self.p_base)?;
        check_prob("p_mem", self.p_mem)?;
        match (&self.base_dist, &self.mem_dist) {
            (None, None) => {}
            (Some(b), Some(m)) => {
                check_dist(b)?;
                check_dist(m)?;
                if b.len() != m.len() {
                    return Err(EvalError::Validation(
                        "base_dist and mem_dist differ in length".into(),
                    ));
                }
                let i = self.astar_index.ok_or_else(|| {
                    EvalError::Validation("distributions need astar_index".into())
                })?;
                if i >= b.len() {
                    return Err(EvalError::Validation(format!(
                        "astar_index {i} out of range"
                    )));
                }
                if (b[i] - self.p_base).abs() > DIST_TOLERANCE
                    || (m[i] - self.p_mem).abs() > DIST_TOLERANCE
                {
                    return Err(EvalError::Validation(
                        "p_base/p_mem disagree with the a* components of the distributions".into(),
                    ));
                }
            }
            _ => {
                return Err(EvalError::Validation(
                    "base_dist and mem_dist must be given together".into(),
                ))
            }
        }
        Ok(())
    }
}

/// `log2((p_mem + eps) / (p_base + eps))`. `eps = 0` needs both
/// probabilities positive.
pub fn pmi(p_base: f64, p_mem: f64, epsilon: f64) -> EvalResult<f64> {
    check_prob("p_base", p_base)?;
    check_prob("p_mem", p_mem)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(EvalError::Domain(format!(
            "epsilon {epsilon} must be finite and >= 0"
        )));
    }
    if epsilon == 0.0 && (p_base == 0.0 || p_mem == 0.0) {
        return Err(EvalError::Domain(
            "epsilon = 0 with a zero probability".into(),
        ));
    }
    Ok(((p_mem + epsilon) / (p_base + epsilon)).log2())
}

pub fn density(pmi_bits: f64, tokens: u64) -> EvalResult<f64> {
    if tokens == 0 {
        return Err(EvalError::Excluded);
    }
    Ok(pmi_bits / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    /// Absolute smoothing constant.
    pub epsilon: f64,
    /// Records with `p_base >= tau_conf` are redundant and excluded.
    pub tau_conf: f64,
}

impl DensityConfig {
    /// `epsilon = epsilon_fraction * base_reference_score`.
    pub fn from_fraction(
        epsilon_fraction: f64,
        base_reference_score: f64,
        tau_conf: f64,
    ) -> EvalResult<Self> {
        let cfg = Self {
            epsilon: epsilon_fraction * base_reference_score,
            tau_conf,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> EvalResult<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(EvalError::Validation(format!(
                "epsilon {} must be >= 0",
                self.epsilon
            )));
        }
        if !(self.tau_conf > 0.0 && self.tau_conf <= 1.0) {
            return Err(EvalError::Validation(format!(
                "tau_conf {} outside (0, 1]",
                self.tau_conf
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub included: usize,
    /// Records with `p_base >= tau_conf`, counted whether or not they are also empty.
    pub excluded_redundant: usize,
    /// Records with zero memory tokens, counted whether or not they are also redundant.
    pub excluded_empty: usize,
    pub total_pmi: f64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalDensity {
    /// Absent when no record is in the active subset.
    pub rho: Option<f64>,
    pub report: DensityReport,
}

pub fn is_active(r: &EvalRecord, cfg: &DensityConfig) -> bool {
    r.p_base < cfg.tau_conf && r.memory_tokens > 0
}

/// Ratio of sums over the active subset.
pub fn global_density(records: &[EvalRecord], cfg: &DensityConfig) -> EvalResult<GlobalDensity> {
    if records.is_empty() {
        return Err(EvalError::Validation("no records".into()));
    }
    cfg.validate()?;
    let mut report = DensityReport::default();
    for r in records {
        let redundant = r.p_base >= cfg.tau_conf;
        let empty = r.memory_tokens == 0;
        report.excluded_redundant += usize::from(redundant);
        report.excluded_empty += usize::from(empty);
        if redundant || empty {
            continue;
        }
        report.included += 1;
        report.total_pmi += pmi(r.p_base, r.p_mem, cfg.epsilon)?;
        report.total_tokens += r.memory_tokens;
    }
    let rho = (report.included > 0).then(|| report.total_pmi / report.total_tokens as f64);
    Ok(GlobalDensity { rho, report })
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> EvalResult<f64> {
    check_dist(dist)?;
    Ok(-dist
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>())
}

/// `H(base) - H(mem)`: positive when memory sharpens the action distribution.
pub fn delta_h(base: &[f64], mem: &[f64]) -> EvalResult<f64> {
    if base.len() != mem.len() {
        return Err(EvalError::Validation(format!(
            "distributions have {} and {} actions",
            base.len(),
            mem.len()
        )));
    }
    Ok(entropy(base)? - entropy(mem)?)
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sgn(pmi) * |delta_h| / tokens`, with `sgn(0) = 0`.
pub fn rho_phi(pmi_bits: f64, delta_h_bits: f64, tokens: u64) -> EvalResult<f64> {
    if tokens == 0 {
        return Err(EvalError::Excluded);
    }
    Ok(sgn(pmi_bits) * delta_h_bits.abs() / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    EfficientReasoning,
    CorrectiveCalibration,
    HallucinationTrap,
    DestructiveNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantLabel {
    pub quadrant: Quadrant,
    /// Set when either coordinate is exactly zero; zeros are folded to the
    /// positive side.
    pub boundary: bool,
}

pub fn quadrant(pmi_bits: f64, delta_h_bits: f64) -> QuadrantLabel {
    let helpful = pmi_bits >= 0.0;
    let sharper = delta_h_bits >= 0.0;
    let quadrant = match (sharper, helpful) {
        (true, true) => Quadrant::EfficientReasoning,
        (false, true) => Quadrant::CorrectiveCalibration,
        (true, false) => Quadrant::HallucinationTrap,
        (false, false) => Quadrant::DestructiveNoise,
    };
    QuadrantLabel {
        quadrant,
        boundary: pmi_bits == 0.0 || delta_h_bits == 0.0,
    }
}

/// Additive smoothing applied to both distributions before KL, then renormalized.
pub fn smooth(dist: &[f64], alpha: f64) -> Vec<f64> {
    let total: f64 = dist.iter().map(|p| p + alpha).sum();
    dist.iter().map(|p| (p + alpha) / total).collect()
}

/// `D_KL(q || p)` in bits. With `smoothing = Some(alpha)` both inputs are
/// smoothed first; otherwise `q_i > 0` with `p_i = 0` is a domain error.
pub fn kl_divergence(q: &[f64], p: &[f64], smoothing: Option<f64>) -> EvalResult<f64> {
    check_dist(q)?;
    check_dist(p)?;
    if q.len() != p.len() {
        return Err(EvalError::Validation(
            "distributions differ in length".into(),
        ));
    }
    let (q, p) = match smoothing {
        Some(a) if a > 0.0 => (smooth(q, a), smooth(p, a)),
        Some(a) if a < 0.0 => return Err(EvalError::Validation("smoothing must be >= 0".into())),
        _ => (q.to_vec(), p.to_vec()),
    };
    let mut total = 0.0;
    for (i, (qi, pi)) in q.iter().zip(&p).enumerate() {
        if *qi == 0.0 {
            continue;
        }
        if *pi == 0.0 {
            return Err(EvalError::Domain(format!("q[{i}] > 0 but p[{i}] = 0")));
        }
        total += qi * (qi / pi).log2();
    }
    Ok(total)
}

/// `D_KL(q || p_base) - D_KL(q || p_mem)`.
pub fn divergence_gain(
    q: &[f64],
    p_base: &[f64],
    p_mem: &[f64],
    smoothing: Option<f64>,
) -> EvalResult<f64> {
    Ok(kl_divergence(q, p_base, smoothing)? - kl_divergence(q, p_mem, smoothing)?)
}

pub fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub budget: u64,
    pub mean_tokens: f64,
    pub total_pmi: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    pub warnings: Vec<String>,
}

/// One point per budget computed over that group's active subset. Groups
/// with no active record are omitted with a warning.
pub fn utility_cost_sweep(
    groups: &BTreeMap<u64, Vec<EvalRecord>>,
    cfg: &DensityConfig,
) -> EvalResult<Sweep> {
    if groups.is_empty() {
        return Err(EvalError::Validation("no budget groups".into()));
    }
    let mut sweep = Sweep::default();
    for (budget, records) in groups {
        if records.is_empty() {
            sweep
                .warnings
                .push(format!("budget {budget}: empty group omitted"));
            continue;
        }
        let g = global_density(records, cfg)?;
        let Some(rho) = g.rho else {
            sweep
                .warnings
                .push(format!("budget {budget}: no active records, omitted"));
            continue;
        };
        sweep.points.push(SweepPoint {
            budget: *budget,
            mean_tokens: g.report.total_tokens as f64 / g.report.included as f64,
            total_pmi: g.report.total_pmi,
            rho,
        });
    }
    for w in &sweep.warnings {
        tracing::warn!("{w}");
    }
    Ok(sweep)
}

fn argmax_by(points: &[SweepPoint], key: impl Fn(&SweepPoint) -> f64) -> Option<u64> {
    points
        .iter()
        .fold(None::<&SweepPoint>, |best, p| match best {
            Some(b) if key(b) >= key(p) => Some(b),
            _ => Some(p),
        })
        .map(|p| p.budget)
}

/// Budget with the highest total PMI (peak utility); ties go to the smaller budget.
pub fn argmax_utility(points: &[SweepPoint]) -> Option<u64> {
    argmax_by(points, |p| p.total_pmi)
}

/// Budget with the highest density (steepest secant); ties go to the smaller budget.
pub fn argmax_density(points: &[SweepPoint]) -> Option<u64> {
    argmax_by(points, |p| p.rho)
}

/// Min-max scale to `[0, 1]`; a constant series maps to zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("budget,mean_tokens,total_pmi,rho\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.budget, p.mean_tokens, p.total_pmi, p.rho
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shift {
    PureCompression,
    PureEnhancement,
    HybridGain,
    Regression,
}

/// Classify the move from `baseline` to `ours`, both `(tokens, pmi)`.
/// Differences within `tolerance` count as zero on either axis.
pub fn classify_shift(baseline: (f64, f64), ours: (f64, f64), tolerance: f64) -> EvalResult<Shift> {
    if tolerance.is_nan() || tolerance < 0.0 {
        return Err(EvalError::Validation("tolerance must be >= 0".into()));
    }
    let dl = ours.0 - baseline.0;
    let di = ours.1 - baseline.1;
    let flat = |d: f64| d.abs() <= tolerance;
    Ok(if dl < -tolerance && flat(di) {
        Shift::PureCompression
    } else if flat(dl) && di > tolerance {
        Shift::PureEnhancement
    } else if dl < -tolerance && di > tolerance {
        Shift::HybridGain
    } else {
        Shift::Regression
    })
}

/// Mean `p_base`, the default reference score for epsilon.
pub fn mean_base_score(records: &[EvalRecord]) -> Option<f64> {
    (!records.is_empty())
        .then(|| records.iter().map(|r| r.p_base).sum::<f64>() / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantCounts {
    pub efficient_reasoning: usize,
    pub corrective_calibration: usize,
    pub hallucination_trap: usize,
    pub destructive_noise: usize,
    pub boundary: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub records: usize,
    pub epsilon: f64,
    pub tau_conf: f64,
    pub rho: Option<f64>,
    pub report: DensityReport,
    /// Mean over active records that carry distributions.
    pub mean_delta_h: Option<f64>,
    pub mean_rho_phi: Option<f64>,
    pub quadrants: Option<QuadrantCounts>,
}

pub fn summarize(records: &[EvalRecord], cfg: &DensityConfig) -> EvalResult<EvalSummary> {
    for r in records {
        r.validate()?;
    }
    let g = global_density(records, cfg)?;
    let mut dh = Vec::new();
    let mut phi = Vec::new();
    let mut q = QuadrantCounts {
        efficient_reasoning: 0,
        corrective_calibration: 0,
        hallucination_trap: 0,
        destructive_noise: 0,
        boundary: 0,
    };
    for r in records.iter().filter(|r| is_active(r, cfg)) {
        let (Some(b), Some(m)) = (&r.base_dist, &r.mem_dist) else {
            continue;
        };
        let d = delta_h(b, m)?;
        let i = pmi(r.p_base, r.p_mem, cfg.epsilon)?;
        dh.push(d);
        phi.push(rho_phi(i, d, r.memory_tokens)?);
        let label = quadrant(i, d);
        q.boundary += usize::from(label.boundary);
        match label.quadrant {
            Quadrant::EfficientReasoning => q.efficient_reasoning += 1,
            Quadrant::CorrectiveCalibration => q.corrective_calibration += 1,
            Quadrant::HallucinationTrap => q.hallucination_trap += 1,
            Quadrant::DestructiveNoise => q.destructive_noise += 1,
        }
    }
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(EvalSummary {
        records: records.len(),
        epsilon: cfg.epsilon,
        tau_conf: cfg.tau_conf,
        rho: g.rho,
        report: g.report,
        mean_delta_h: avg(&dh),
        mean_rho_phi: avg(&phi),
        quadrants: (!dh.is_empty()).then_some(q),
    })
}

/// Group records by `budget`; records without one go under budget 0.
pub fn group_by_budget(records: &[EvalRecord]) -> BTreeMap<u64, Vec<EvalRecord>> {
    let mut out: BTreeMap<u64, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.budget.unwrap_or(0))
            .or_default()
            .push(r.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(p_base: f64, p_mem: f64, tokens: u64) -> EvalRecord {
        EvalRecord {
            id: "r".into(),
            p_base,
            p_mem,
            memory_tokens: tokens,
            base_dist: None,
            mem_dist: None,
            astar_index: None,
            budget: None,
        }
    }

    const CFG0: DensityConfig = DensityConfig {
        epsilon: 0.0,
        tau_conf: 0.9,
    };

    #[test]
    fn pmi_values() {
        assert_eq!(pmi(0.5, 0.5, 0.3).unwrap(), 0.0);
        assert_eq!(pmi(0.5, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(pmi(0.0, 1.0, 0.01).unwrap(), (1.01f64 / 0.01).log2());
        assert!(matches!(pmi(0.0, 1.0, 0.0), Err(EvalError::Domain(_))));
        assert!(pmi(1.5, 1.0, 0.01).is_err());
    }

    #[test]
    fn density_values() {
        assert_eq!(density(1.0, 100).unwrap(), 0.01);
        assert_eq!(density(-2.0, 50).unwrap(), -0.04);
        assert_eq!(density(1.0, 0), Err(EvalError::Excluded));
    }

    #[test]
    fn global_density_ratio_of_sums() {
        let g = global_density(&[rec(0.5, 1.0, 100), rec(0.125, 1.0, 300)], &CFG0).unwrap();
        assert_eq!(g.rho, Some(0.01));
        assert_eq!(g.report.included, 2);
    }

    #[test]
    fn small_denominator() {
        // pmi 1 each: p 0.5 -> 1.0
        let rs = [rec(0.5, 1.0, 1), rec(0.5, 1.0, 999)];
        let g = global_density(&rs, &CFG0).unwrap();
        assert_eq!(g.rho, Some(0.002));
        let mean = (density(1.0, 1).unwrap() + density(1.0, 999).unwrap()) / 2.0;
        assert!((mean - 0.5005005).abs() < 1e-6);
    }

    #[test]
    fn exclusions_counted_independently() {
        let rs = [rec(0.95, 1.0, 10), rec(0.5, 1.0, 0), rec(0.95, 1.0, 0)];
        let g = global_density(&rs, &CFG0).unwrap();
        assert_eq!(g.rho, None);
        assert_eq!(
            (
                g.report.excluded_redundant,
                g.report.excluded_empty,
                g.report.included
            ),
            (2, 2, 0)
        );
        assert!(global_density(&[], &CFG0).is_err());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[0.25; 4]).unwrap(), 2.0);
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap(), 1.0);
        assert!(entropy(&[0.5, 0.4]).is_err());
        assert_eq!(delta_h(&[0.25; 4], &one_hot(4, 1)).unwrap(), 2.0);
        assert_eq!(delta_h(&one_hot(4, 1), &[0.25; 4]).unwrap(), -2.0);
        assert!(delta_h(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn rho_phi_values() {
        assert!((rho_phi(0.5, 2.0, 100).unwrap() - 0.02).abs() < 1e-15);
        assert!((rho_phi(-0.5, 2.0, 100).unwrap() + 0.02).abs() < 1e-15);
        assert!((rho_phi(-0.3, -1.0, 50).unwrap() + 0.02).abs() < 1e-15);
        assert_eq!(rho_phi(0.0, 2.0, 10).unwrap(), 0.0);
        assert_eq!(rho_phi(1.0, 1.0, 0), Err(EvalError::Excluded));
    }

    #[test]
    fn quadrants() {
        assert_eq!(quadrant(1.0, 1.0).quadrant, Quadrant::EfficientReasoning);
        assert_eq!(
            quadrant(1.0, -1.0).quadrant,
            Quadrant::CorrectiveCalibration
        );
        assert_eq!(quadrant(-1.0, 1.0).quadrant, Quadrant::HallucinationTrap);
        assert_eq!(quadrant(-1.0, -1.0).quadrant, Quadrant::DestructiveNoise);
        assert!(quadrant(0.0, 1.0).boundary);
        assert!(!quadrant(1.0, 1.0).boundary);
    }

    #[test]
    fn kl_values() {
        let q = [0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(&q, &q, None).unwrap(), 0.0);
        let p = [0.5, 0.25, 0.25];
        assert!((kl_divergence(&one_hot(3, 1), &p, None).unwrap() - 2.0).abs() < 1e-12);
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0], None).is_err());
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0], Some(0.01))
            .unwrap()
            .is_finite());
    }

    #[test]
    fn sweep_argmax_and_csv() {
        // I(L) = 4L - L^2 at L = 1, 2, 3: utility peaks at 2, density at 1.
        let mut groups = BTreeMap::new();
        for l in 1u64..=3 {
            let bits = (4 * l - l * l) as f64;
            // p_mem = p_base * 2^bits with p_base = 1/16.
            let r = rec(1.0 / 16.0, 2f64.powf(bits) / 16.0, l);
            groups.insert(l, vec![r]);
        }
        groups.insert(9, vec![]);
        let s = utility_cost_sweep(&groups, &CFG0).unwrap();
        assert_eq!(s.points.len(), 3);
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(argmax_utility(&s.points), Some(2));
        assert_eq!(argmax_density(&s.points), Some(1));
        assert!(sweep_csv(&s.points).starts_with("budget,mean_tokens,total_pmi,rho\n1,1,3,3\n"));
        assert_eq!(min_max_normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn shifts() {
        let t = 0.05;
        assert_eq!(
            classify_shift((1000.0, 2.0), (400.0, 2.01), t).unwrap(),
            Shift::PureCompression
        );
        assert_eq!(
            classify_shift((1000.0, 2.0), (1000.02, 3.0), t).unwrap(),
            Shift::PureEnhancement
        );
        assert_eq!(
            classify_shift((1000.0, 2.0), (400.0, 3.0), t).unwrap(),
            Shift::HybridGain
        );
        assert_eq!(
            classify_shift((1000.0, 2.0), (1400.0, 1.0), t).unwrap(),
            Shift::Regression
        );
    }

    #[test]
    fn record_validation() {
        let mut r = rec(0.25, 1.0, 5);
        r.base_dist = Some(vec![0.25; 4]);
        r.mem_dist = Some(one_hot(4, 2));
        r.astar_index = Some(2);
        assert!(r.validate().is_ok());
        r.astar_index = Some(1);
        assert!(r.validate().is_err());
        r.mem_dist = None;
        assert!(r.validate().is_err());
    }

    #[test]
    fn summary_counts_quadrants() {
        let mut r = rec(0.25, 1.0, 5);
        r.base_dist = Some(vec![0.25; 4]);
        r.mem_dist = Some(one_hot(4, 2));
        r.astar_index = Some(2);
        let s = summarize(&[r, rec(0.5, 1.0, 10)], &CFG0).unwrap();
        assert_eq!(s.mean_delta_h, Some(2.0));
        assert_eq!(s.quadrants.unwrap().efficient_reasoning, 1);
        assert_eq!(s.report.included, 2);
    }
}
