//! Rank segmentation and alignment classification: split each model's
//! per-KU metric values into high/mid/low segments at percentile cutoffs,
//! classify each KU as absent, divergent, or convergent from the segment
//! pair, and cross-tabulate classes against KU categories.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::registry::{Category, KuRegistry};

#[derive(Debug, thiserror::Error)]
pub enum AlignmentError {
    #[error("segmentation needs at least 3 defined values, got {0}")]
    TooFewValues(usize),
    #[error("percentile {0} outside (0, 100)")]
    BadPercentile(f64),
    #[error("high cutoff {high} below low cutoff {low}")]
    CutoffOrder { high: f64, low: f64 },
    #[error("input lengths disagree: {0}")]
    LengthMismatch(String),
}

/// Percentile cutoffs per model, in percent. The defaults are the reference
/// configuration: concrete 50/25, documentation 75/50.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub concrete_high: f64,
    pub concrete_low: f64,
    pub documentation_high: f64,
    pub documentation_low: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self {
            concrete_high: 50.0,
            concrete_low: 25.0,
            documentation_high: 75.0,
            documentation_low: 50.0,
        }
    }
}

impl CutoffConfig {
    pub fn validate(&self) -> Result<(), AlignmentError> {
        for p in [
            self.concrete_high,
            self.concrete_low,
            self.documentation_high,
            self.documentation_low,
        ] {
            if !(0.0 < p && p < 100.0) {
                return Err(AlignmentError::BadPercentile(p));
            }
        }
        if self.concrete_high < self.concrete_low {
            return Err(AlignmentError::CutoffOrder {
                high: self.concrete_high,
                low: self.concrete_low,
            });
        }
        if self.documentation_high < self.documentation_low {
            return Err(AlignmentError::CutoffOrder {
                high: self.documentation_high,
                low: self.documentation_low,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    High,
    Mid,
    Low,
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::High => "high",
            Segment::Mid => "mid",
            Segment::Low => "low",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentClass {
    Absent,
    Divergent,
    Convergent,
    Unclassified,
}

impl AlignmentClass {
    pub const ALL: [AlignmentClass; 4] = [
        AlignmentClass::Absent,
        AlignmentClass::Divergent,
        AlignmentClass::Convergent,
        AlignmentClass::Unclassified,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AlignmentClass::Absent => "absent",
            AlignmentClass::Divergent => "divergent",
            AlignmentClass::Convergent => "convergent",
            AlignmentClass::Unclassified => "unclassified",
        }
    }
}

impl fmt::Display for AlignmentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Nearest-rank percentile: the value at 1-based index `ceil(p/100 * n)` of
/// the ascending sort.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Segmentation output, carrying the cutoff values actually used.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    pub high_cutoff: f64,
    pub low_cutoff: f64,
    /// All values were equal; everything fell to mid.
    pub degenerate: bool,
}

/// Segment metric values: high above the high-percentile value, low below
/// the low-percentile value, mid otherwise. Boundary ties fall to mid
/// (strict comparisons on both sides).
pub fn segment(values: &[f64], high_pct: f64, low_pct: f64) -> Result<Segmentation, AlignmentError> {
    if values.len() < 3 {
        return Err(AlignmentError::TooFewValues(values.len()));
    }
    for p in [high_pct, low_pct] {
        if !(0.0 < p && p < 100.0) {
            return Err(AlignmentError::BadPercentile(p));
        }
    }
    if high_pct < low_pct {
        return Err(AlignmentError::CutoffOrder {
            high: high_pct,
            low: low_pct,
        });
    }
    let high_cutoff = nearest_rank_percentile(values, high_pct);
    let low_cutoff = nearest_rank_percentile(values, low_pct);
    let degenerate = values.iter().all(|v| v == &values[0]);
    let segments = values
        .iter()
        .map(|&v| {
            if v > high_cutoff {
                Segment::High
            } else if v < low_cutoff {
                Segment::Low
            } else {
                Segment::Mid
            }
        })
        .collect();
    Ok(Segmentation {
        segments,
        high_cutoff,
        low_cutoff,
        degenerate,
    })
}

/// Classify one KU from its segment in each model: low/low is absent,
/// high(concrete)/low(documentation) is divergent, high/high is convergent,
/// anything else is unclassified.
pub fn classify(concrete: Segment, documentation: Segment) -> AlignmentClass {
    match (concrete, documentation) {
        (Segment::Low, Segment::Low) => AlignmentClass::Absent,
        (Segment::High, Segment::Low) => AlignmentClass::Divergent,
        (Segment::High, Segment::High) => AlignmentClass::Convergent,
        _ => AlignmentClass::Unclassified,
    }
}

/// One crosstab cell: exact proportion plus the one-decimal-percent
/// rendering used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub count: u64,
    pub total: u64,
    pub percent: f64,
    pub rounded: f64,
}

impl Proportion {
    fn new(count: u64, total: u64) -> Self {
        let percent = if total == 0 {
            0.0
        } else {
            100.0 * count as f64 / total as f64
        };
        Self {
            count,
            total,
            percent,
            rounded: (percent * 10.0).round() / 10.0,
        }
    }
}

/// Both cross-tabulations: per alignment class over categories, and per
/// category over alignment classes. Every row sums to 100% up to rounding.
#[derive(Debug, Clone)]
pub struct CategoryCrosstab {
    /// class -> category -> proportion (denominator: class size)
    pub by_class: BTreeMap<AlignmentClass, BTreeMap<Category, Proportion>>,
    /// category -> class -> proportion (denominator: category size)
    pub by_category: BTreeMap<Category, BTreeMap<AlignmentClass, Proportion>>,
}

/// Cross-tabulate per-KU classes with the registry's categories. `classes`
/// holds `(unit index, class)` for every KU that received one.
pub fn category_crosstab(
    classes: &[(usize, AlignmentClass)],
    registry: &KuRegistry,
) -> CategoryCrosstab {
    let mut class_totals: BTreeMap<AlignmentClass, u64> = BTreeMap::new();
    let mut category_totals: BTreeMap<Category, u64> = BTreeMap::new();
    let mut cells: BTreeMap<(AlignmentClass, Category), u64> = BTreeMap::new();
    for &(unit_idx, class) in classes {
        let category = registry.units()[unit_idx].category;
        *class_totals.entry(class).or_insert(0) += 1;
        *category_totals.entry(category).or_insert(0) += 1;
        *cells.entry((class, category)).or_insert(0) += 1;
    }
    let mut by_class = BTreeMap::new();
    for (&class, &total) in &class_totals {
        let mut row = BTreeMap::new();
        for category in Category::ALL {
            let count = cells.get(&(class, category)).copied().unwrap_or(0);
            row.insert(category, Proportion::new(count, total));
        }
        by_class.insert(class, row);
    }
    let mut by_category = BTreeMap::new();
    for (&category, &total) in &category_totals {
        let mut row = BTreeMap::new();
        for class in AlignmentClass::ALL {
            let count = cells.get(&(class, category)).copied().unwrap_or(0);
            row.insert(class, Proportion::new(count, total));
        }
        by_category.insert(category, row);
    }
    CategoryCrosstab {
        by_class,
        by_category,
    }
}

/// 1-based descending ranks (rank 1 = largest value); ties resolve to the
/// earlier index.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap()
            .then_with(|| a.cmp(&b))
    });
    let mut ranks = vec![0; values.len()];
    for (rank, &idx) in order.iter().enumerate() {
        ranks[idx] = rank + 1;
    }
    ranks
}

/// One slope-chart record: a KU's rank in each model and the rank distance
/// the line's thickness encodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlopeRecord {
    pub ku: String,
    pub concrete_rank: usize,
    pub documentation_rank: usize,
    pub class: AlignmentClass,
    pub rank_distance: usize,
}

/// Build slope records sorted by class, then rank distance descending.
pub fn slope_data(
    ku_names: &[String],
    concrete_rank: &[usize],
    documentation_rank: &[usize],
    classes: &[AlignmentClass],
) -> Result<Vec<SlopeRecord>, AlignmentError> {
    let n = ku_names.len();
    if concrete_rank.len() != n || documentation_rank.len() != n || classes.len() != n {
        return Err(AlignmentError::LengthMismatch(format!(
            "{n} names, {} concrete ranks, {} documentation ranks, {} classes",
            concrete_rank.len(),
            documentation_rank.len(),
            classes.len()
        )));
    }
    let mut records: Vec<SlopeRecord> = (0..n)
        .map(|i| SlopeRecord {
            ku: ku_names[i].clone(),
            concrete_rank: concrete_rank[i],
            documentation_rank: documentation_rank[i],
            class: classes[i],
            rank_distance: concrete_rank[i].abs_diff(documentation_rank[i]),
        })
        .collect();
    records.sort_by(|a, b| {
        a.class
            .cmp(&b.class)
            .then_with(|| b.rank_distance.cmp(&a.rank_distance))
            .then_with(|| a.ku.cmp(&b.ku))
    });
    Ok(records)
}

/// Full alignment outcome for a set of KUs under one ranking metric.
#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    /// `(unit index, concrete segment, documentation segment, class)` for
    /// every KU with defined values in both models.
    pub classified: Vec<(usize, Segment, Segment, AlignmentClass)>,
    /// Unit indices excluded because a metric value was undefined.
    pub excluded: Vec<usize>,
    pub concrete: Segmentation,
    pub documentation: Segmentation,
}

/// Segment and classify KUs from per-unit metric values (None = undefined,
/// excluded from ranking and reported separately).
pub fn align_kus(
    concrete_values: &[Option<f64>],
    documentation_values: &[Option<f64>],
    cutoffs: &CutoffConfig,
) -> Result<AlignmentOutcome, AlignmentError> {
    if concrete_values.len() != documentation_values.len() {
        return Err(AlignmentError::LengthMismatch(format!(
            "{} concrete values vs {} documentation values",
            concrete_values.len(),
            documentation_values.len()
        )));
    }
    cutoffs.validate()?;
    let mut defined = Vec::new();
    let mut excluded = Vec::new();
    for i in 0..concrete_values.len() {
        match (concrete_values[i], documentation_values[i]) {
            (Some(c), Some(d)) => defined.push((i, c, d)),
            _ => excluded.push(i),
        }
    }
    let concrete_vals: Vec<f64> = defined.iter().map(|&(_, c, _)| c).collect();
    let doc_vals: Vec<f64> = defined.iter().map(|&(_, _, d)| d).collect();
    let concrete = segment(&concrete_vals, cutoffs.concrete_high, cutoffs.concrete_low)?;
    let documentation = segment(
        &doc_vals,
        cutoffs.documentation_high,
        cutoffs.documentation_low,
    )?;
    let classified = defined
        .iter()
        .enumerate()
        .map(|(pos, &(unit, _, _))| {
            let c_seg = concrete.segments[pos];
            let d_seg = documentation.segments[pos];
            (unit, c_seg, d_seg, classify(c_seg, d_seg))
        })
        .collect();
    Ok(AlignmentOutcome {
        classified,
        excluded,
        concrete,
        documentation,
    })
}
