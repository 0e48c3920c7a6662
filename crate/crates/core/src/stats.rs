//! The nonparametric battery: adjusted Fisher-Pearson skewness, Spearman
//! rank correlation, Mann-Whitney tests (exact for small samples,
//! tie-corrected normal approximation otherwise), Cliff's delta effect
//! sizes, Bonferroni correction, and the awareness-by-alignment hypothesis
//! protocol. Every estimate carries the interpretation label its magnitude
//! falls under.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::alignment::AlignmentClass;

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("input has zero variance")]
    ConstantInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty sample")]
    EmptySample,
}

/// An estimate plus its interpretation under the module's threshold tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEstimate {
    pub value: f64,
    pub label: String,
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
}

fn normal_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

// ---------------------------------------------------------------------------
// Skewness

pub fn skewness_label(g1: f64) -> &'static str {
    let a = g1.abs();
    if a <= 0.5 {
        "almost symmetric"
    } else if a <= 1.0 {
        "slight skew"
    } else {
        "skew"
    }
}

/// Adjusted Fisher-Pearson standardized moment coefficient
/// `G1 = n^2 / ((n-1)(n-2)) * m3 / s^3` with sample standard deviation `s`.
/// Significance is the large-sample test of skewness (requires n >= 8;
/// smaller samples report no p-value).
pub fn skewness_g1(values: &[f64]) -> Result<LabeledEstimate, StatsError> {
    let n = values.len();
    if n < 3 {
        return Err(StatsError::TooFewObservations { needed: 3, got: n });
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    let s = (m2 * nf / (nf - 1.0)).sqrt();
    let g1_adjusted = nf * nf / ((nf - 1.0) * (nf - 2.0)) * m3 / s.powi(3);

    let (p_value, significant) = if n >= 8 {
        let b1 = m3 / m2.powf(1.5); // biased skewness feeds the test
        let y = b1 * (((nf + 1.0) * (nf + 3.0)) / (6.0 * (nf - 2.0))).sqrt();
        let beta2 = 3.0 * (nf * nf + 27.0 * nf - 70.0) * (nf + 1.0) * (nf + 3.0)
            / ((nf - 2.0) * (nf + 5.0) * (nf + 7.0) * (nf + 9.0));
        let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
        let delta = 1.0 / (0.5 * w2.ln()).sqrt();
        let alpha = (2.0 / (w2 - 1.0)).sqrt();
        let y = if y == 0.0 { 1.0 } else { y };
        let z = delta * (y / alpha + ((y / alpha).powi(2) + 1.0).sqrt()).ln();
        let p = 2.0 * (1.0 - normal_cdf(z.abs()));
        (Some(p), Some(p < DEFAULT_ALPHA))
    } else {
        (None, None)
    };

    Ok(LabeledEstimate {
        value: g1_adjusted,
        label: skewness_label(g1_adjusted).to_string(),
        p_value,
        significant,
    })
}

// ---------------------------------------------------------------------------
// Spearman

pub fn correlation_label(rho: f64) -> &'static str {
    let a = rho.abs();
    if a <= 0.10 {
        "negligible"
    } else if a <= 0.39 {
        "weak"
    } else if a <= 0.69 {
        "moderate"
    } else if a <= 0.89 {
        "strong"
    } else {
        "very strong"
    }
}

/// Average ranks (ties share the mean of the positions they occupy).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with averaged ties and a two-sided p-value
/// from the t approximation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<LabeledEstimate, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewObservations { needed: 3, got: n });
    }
    if x.iter().all(|v| v == &x[0]) || y.iter().all(|v| v == &y[0]) {
        return Err(StatsError::ConstantInput);
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    let rho = (cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0);

    let p = if (1.0 - rho.abs()) < 1e-12 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };

    Ok(LabeledEstimate {
        value: rho,
        label: correlation_label(rho).to_string(),
        p_value: Some(p),
        significant: Some(p < DEFAULT_ALPHA),
    })
}

// ---------------------------------------------------------------------------
// Mann-Whitney

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    AGreater,
    BGreater,
}

impl Alternative {
    pub fn label(&self) -> &'static str {
        match self {
            Alternative::TwoSided => "two-sided",
            Alternative::AGreater => "a-greater",
            Alternative::BGreater => "b-greater",
        }
    }
}

/// Rank-sum of sample `a` (average ranks over the pooled sample), doubled
/// so that tie-averaged ranks stay integral.
fn doubled_rank_sum_a(a: &[f64], b: &[f64]) -> u64 {
    let pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    let ranks = average_ranks(&pooled);
    let sum: f64 = ranks[..a.len()].iter().sum();
    (2.0 * sum).round() as u64
}

/// Exact null distribution of the doubled rank sum of sample `a`, as
/// `(support, weights)` with weights summing to C(n, n_a). Handles ties:
/// the DP walks distinct pooled values, choosing how many of each go to
/// sample `a`.
fn exact_rank_sum_distribution(a: &[f64], b: &[f64]) -> (Vec<u64>, Vec<f64>) {
    let n_a = a.len();
    let n = a.len() + b.len();
    let mut pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // distinct values with multiplicity and doubled average rank
    let mut groups: Vec<(u64, u64)> = Vec::new(); // (multiplicity, doubled avg rank)
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let mult = (j - i + 1) as u64;
        let doubled_avg = (i + j) as u64 + 2; // 2*((i+j)/2 + 1)
        groups.push((mult, doubled_avg));
        i = j + 1;
    }
    let max_t: u64 = groups.iter().map(|&(m, r)| m * r).sum();
    // dp[k][t] = number of ways to pick k pooled observations for sample a
    // with doubled rank sum t
    let mut dp = vec![vec![0.0f64; (max_t + 1) as usize]; n_a + 1];
    dp[0][0] = 1.0;
    for &(mult, doubled_avg) in &groups {
        // choose j of this group's copies for sample a
        let binom: Vec<f64> = {
            let mut c = vec![1.0f64];
            for j in 1..=mult {
                c.push(c[(j - 1) as usize] * (mult - j + 1) as f64 / j as f64);
            }
            c
        };
        for k in (0..=n_a).rev() {
            for t in (0..=max_t).rev() {
                let from = dp[k][t as usize];
                if from == 0.0 {
                    continue;
                }
                for j in 1..=mult.min((n_a - k) as u64) {
                    let nk = k + j as usize;
                    let nt = t + j * doubled_avg;
                    dp[nk][nt as usize] += from * binom[j as usize];
                }
            }
        }
    }
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (t, &w) in dp[n_a].iter().enumerate() {
        if w > 0.0 {
            support.push(t as u64);
            weights.push(w);
        }
    }
    (support, weights)
}

/// Exact Mann-Whitney p-value by full enumeration of the rank-sum null
/// distribution (tie-aware). Exposed so the approximation can be validated
/// against it.
pub fn mann_whitney_exact_p(a: &[f64], b: &[f64], alternative: Alternative) -> f64 {
    let t_obs = doubled_rank_sum_a(a, b);
    let (support, weights) = exact_rank_sum_distribution(a, b);
    let total: f64 = weights.iter().sum();
    let p_ge: f64 = support
        .iter()
        .zip(&weights)
        .filter(|(&t, _)| t >= t_obs)
        .map(|(_, &w)| w)
        .sum::<f64>()
        / total;
    let p_le: f64 = support
        .iter()
        .zip(&weights)
        .filter(|(&t, _)| t <= t_obs)
        .map(|(_, &w)| w)
        .sum::<f64>()
        / total;
    match alternative {
        Alternative::AGreater => p_ge,
        Alternative::BGreater => p_le,
        Alternative::TwoSided => (2.0 * p_ge.min(p_le)).min(1.0),
    }
}

/// Tie-corrected normal approximation with continuity correction. Exposed
/// so it can be validated against the exact path.
pub fn mann_whitney_approx_p(a: &[f64], b: &[f64], alternative: Alternative) -> f64 {
    let n_a = a.len() as f64;
    let n_b = b.len() as f64;
    let n = n_a + n_b;
    let u_a = u_statistic_a(a, b);
    let mu = n_a * n_b / 2.0;
    // tie correction over pooled tie groups
    let mut pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let sigma2 = n_a * n_b / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if sigma2 <= 0.0 {
        return 1.0;
    }
    let sigma = sigma2.sqrt();
    match alternative {
        Alternative::AGreater => 1.0 - normal_cdf((u_a - mu - 0.5) / sigma),
        Alternative::BGreater => normal_cdf((u_a - mu + 0.5) / sigma),
        Alternative::TwoSided => {
            let p_hi = 1.0 - normal_cdf((u_a - mu - 0.5) / sigma);
            let p_lo = normal_cdf((u_a - mu + 0.5) / sigma);
            (2.0 * p_hi.min(p_lo)).min(1.0)
        }
    }
}

/// U statistic for sample `a` from tie-averaged ranks.
pub fn u_statistic_a(a: &[f64], b: &[f64]) -> f64 {
    let n_a = a.len() as f64;
    doubled_rank_sum_a(a, b) as f64 / 2.0 - n_a * (n_a + 1.0) / 2.0
}

/// Budget above which the exact enumeration hands over to the normal
/// approximation.
pub const MW_EXACT_LIMIT: usize = 400;

/// Mann-Whitney test. Exact enumeration when `n_a * n_b <= 400`, else the
/// tie-corrected normal approximation; significant at alpha = 0.05.
pub fn mann_whitney(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
) -> Result<LabeledEstimate, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let p = if a.len() * b.len() <= MW_EXACT_LIMIT {
        mann_whitney_exact_p(a, b, alternative)
    } else {
        mann_whitney_approx_p(a, b, alternative)
    };
    let significant = p < DEFAULT_ALPHA;
    Ok(LabeledEstimate {
        value: u_statistic_a(a, b),
        label: if significant {
            "significant".to_string()
        } else {
            "not significant".to_string()
        },
        p_value: Some(p),
        significant: Some(significant),
    })
}

// ---------------------------------------------------------------------------
// Cliff's delta

pub fn cliffs_delta_label(d: f64) -> &'static str {
    let a = d.abs();
    if a < 0.147 {
        "negligible"
    } else if a < 0.330 {
        "small"
    } else if a < 0.474 {
        "medium"
    } else {
        "large"
    }
}

/// `d = (#{a_i > b_j} - #{a_i < b_j}) / (n_a * n_b)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<LabeledEstimate, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut greater = 0i64;
    let mut less = 0i64;
    for &x in a {
        for &y in b {
            if x > y {
                greater += 1;
            } else if x < y {
                less += 1;
            }
        }
    }
    let d = (greater - less) as f64 / (a.len() * b.len()) as f64;
    Ok(LabeledEstimate {
        value: d,
        label: cliffs_delta_label(d).to_string(),
        p_value: None,
        significant: None,
    })
}

// ---------------------------------------------------------------------------
// Bonferroni

/// Multiply each p-value by the size of its equivalent-comparison group,
/// capping at 1.
pub fn bonferroni(p_values: &[f64], group_size: usize) -> Vec<f64> {
    assert!(group_size >= 1, "group_size must be at least 1");
    p_values
        .iter()
        .map(|p| (p * group_size as f64).min(1.0))
        .collect()
}

// ---------------------------------------------------------------------------
// The awareness-by-alignment battery

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AwarenessMetric {
    Attraction,
    Attention,
    Agreement,
}

impl AwarenessMetric {
    pub const ALL: [AwarenessMetric; 3] = [
        AwarenessMetric::Attraction,
        AwarenessMetric::Attention,
        AwarenessMetric::Agreement,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AwarenessMetric::Attraction => "attraction",
            AwarenessMetric::Attention => "attention",
            AwarenessMetric::Agreement => "agreement",
        }
    }

    /// Fractions compare on the natural 0..1 scale; the unbounded metric
    /// compares relative to the pooled median.
    fn is_fraction(&self) -> bool {
        !matches!(self, AwarenessMetric::Attention)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    ConvergentVsDivergent,
    ConvergentVsAbsent,
    DivergentVsAbsent,
}

impl Comparison {
    pub const ALL: [Comparison; 3] = [
        Comparison::ConvergentVsDivergent,
        Comparison::ConvergentVsAbsent,
        Comparison::DivergentVsAbsent,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Comparison::ConvergentVsDivergent => "convergent-vs-divergent",
            Comparison::ConvergentVsAbsent => "convergent-vs-absent",
            Comparison::DivergentVsAbsent => "divergent-vs-absent",
        }
    }

    fn classes(&self) -> (AlignmentClass, AlignmentClass) {
        match self {
            Comparison::ConvergentVsDivergent => {
                (AlignmentClass::Convergent, AlignmentClass::Divergent)
            }
            Comparison::ConvergentVsAbsent => (AlignmentClass::Convergent, AlignmentClass::Absent),
            Comparison::DivergentVsAbsent => (AlignmentClass::Divergent, AlignmentClass::Absent),
        }
    }
}

/// One battery entry: a pairwise comparison of an awareness metric between
/// two alignment classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryResult {
    pub metric: AwarenessMetric,
    pub comparison: Comparison,
    /// None when the comparison was skipped (class too small).
    pub outcome: Option<BatteryTest>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryTest {
    pub sidedness: Alternative,
    pub median_first: f64,
    pub median_second: f64,
    pub u_statistic: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
    pub reject: bool,
    pub delta: f64,
    pub delta_label: String,
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Per-KU awareness values (undefined entries stay out of every sample)
/// plus each KU's alignment class.
pub struct BatteryInput<'a> {
    pub attraction: &'a [Option<f64>],
    pub attention: &'a [Option<f64>],
    pub agreement: &'a [Option<f64>],
    /// Class per KU index; KUs without a class are simply not listed.
    pub classes: &'a [(usize, AlignmentClass)],
}

/// Run the full protocol: for each awareness metric, the three pairwise
/// class comparisons, with sidedness picked from the observed medians
/// (two-sided when they differ by less than 5% of the comparison scale),
/// Bonferroni correction within equivalent-comparison groups, and Cliff's
/// delta for the effect size.
pub fn rq3_battery(input: &BatteryInput<'_>, alpha: f64) -> Vec<BatteryResult> {
    let values_for = |metric: AwarenessMetric| -> &[Option<f64>] {
        match metric {
            AwarenessMetric::Attraction => input.attraction,
            AwarenessMetric::Attention => input.attention,
            AwarenessMetric::Agreement => input.agreement,
        }
    };
    let class_sample = |metric: AwarenessMetric, class: AlignmentClass| -> Vec<f64> {
        let values = values_for(metric);
        input
            .classes
            .iter()
            .filter(|&&(_, c)| c == class)
            .filter_map(|&(idx, _)| values.get(idx).copied().flatten())
            .collect()
    };

    // First pass: run every feasible raw test.
    struct Raw {
        metric: AwarenessMetric,
        comparison: Comparison,
        test: Option<(Alternative, f64, f64, f64, f64, f64, String)>,
        note: Option<String>,
    }
    let mut raws: Vec<Raw> = Vec::new();
    for metric in AwarenessMetric::ALL {
        for comparison in Comparison::ALL {
            let (first_class, second_class) = comparison.classes();
            let first = class_sample(metric, first_class);
            let second = class_sample(metric, second_class);
            if first.len() < 2 || second.len() < 2 {
                raws.push(Raw {
                    metric,
                    comparison,
                    test: None,
                    note: Some(format!(
                        "skipped: {} has {} defined values, {} has {}",
                        first_class.label(),
                        first.len(),
                        second_class.label(),
                        second.len()
                    )),
                });
                continue;
            }
            let med_first = median_of(&first);
            let med_second = median_of(&second);
            let scale_threshold = if metric.is_fraction() {
                0.05
            } else {
                let pooled: Vec<f64> = first.iter().chain(second.iter()).copied().collect();
                let pooled_median = median_of(&pooled);
                if pooled_median.abs() < f64::EPSILON {
                    f64::INFINITY // no usable scale: stay two-sided
                } else {
                    0.05 * pooled_median.abs()
                }
            };
            let sidedness = if (med_first - med_second).abs() < scale_threshold {
                Alternative::TwoSided
            } else if med_first > med_second {
                Alternative::AGreater
            } else {
                Alternative::BGreater
            };
            let mw = mann_whitney(&first, &second, sidedness).expect("non-empty samples");
            let delta = cliffs_delta(&first, &second).expect("non-empty samples");
            raws.push(Raw {
                metric,
                comparison,
                test: Some((
                    sidedness,
                    med_first,
                    med_second,
                    mw.value,
                    mw.p_value.unwrap(),
                    delta.value,
                    delta.label,
                )),
                note: None,
            });
        }
    }

    // Second pass: Bonferroni within each equivalent-comparison group (the
    // same class pair across the metrics).
    let mut results = Vec::with_capacity(raws.len());
    for comparison in Comparison::ALL {
        let group_size = raws
            .iter()
            .filter(|r| r.comparison == comparison && r.test.is_some())
            .count()
            .max(1);
        for raw in raws.iter().filter(|r| r.comparison == comparison) {
            let outcome = raw.test.as_ref().map(
                |&(sidedness, med_first, med_second, u, raw_p, delta, ref delta_label)| {
                    let adjusted_p = bonferroni(&[raw_p], group_size)[0];
                    BatteryTest {
                        sidedness,
                        median_first: med_first,
                        median_second: med_second,
                        u_statistic: u,
                        raw_p,
                        adjusted_p,
                        reject: adjusted_p < alpha,
                        delta,
                        delta_label: delta_label.clone(),
                    }
                },
            );
            results.push(BatteryResult {
                metric: raw.metric,
                comparison: raw.comparison,
                outcome,
                note: raw.note.clone(),
            });
        }
    }
    results
}
