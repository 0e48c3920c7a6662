//! Delimited-text renderers for every exported table and figure-data file.
//! Each renderer is a pure function from computed artifacts to file
//! content: a header row naming the columns, then one record per line,
//! UTF-8, tab-separated. Keeping the renderers pure makes byte-identical
//! reruns a property of the data, not the writer.

use std::collections::BTreeMap;

use crate::alignment::{AlignmentClass, AlignmentOutcome, CategoryCrosstab, SlopeRecord};
use crate::corex::TopicModel;
use crate::metrics::{MetricTable, TopicProbabilities};
use crate::registry::{Category, KuRegistry};
use crate::stats::{BatteryResult, LabeledEstimate};

fn fmt(value: f64) -> String {
    format!("{value}")
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(fmt).unwrap_or_else(|| "NA".to_string())
}

/// doc_id plus one probability column per topic.
pub fn doc_topics_table(table: &TopicProbabilities) -> String {
    let mut out = String::from("doc_id");
    for j in 0..table.n_topics {
        out.push_str(&format!("\ttopic_{j}"));
    }
    out.push('\n');
    for (doc_id, row) in table.doc_ids.iter().zip(&table.rows) {
        out.push_str(doc_id);
        for p in row {
            out.push('\t');
            out.push_str(&fmt(*p));
        }
        out.push('\n');
    }
    out
}

/// Per-topic total-correlation diagnostic: values in topic order plus the
/// descending rank each value holds.
pub fn topic_tc_table(model: &TopicModel, registry: &KuRegistry) -> String {
    let (in_order, sorted) = model.topic_tc_distribution();
    let mut out = String::from("topic\tku\ttc\ttc_rank\n");
    for (j, tc) in in_order.iter().enumerate() {
        let rank = sorted.iter().position(|s| s == tc).unwrap() + 1;
        let ku = registry
            .units()
            .get(j)
            .map(|u| u.name.as_str())
            .unwrap_or("");
        out.push_str(&format!("{j}\t{ku}\t{}\t{rank}\n", fmt(*tc)));
    }
    out
}

/// Per-KU metric columns for one model.
pub fn ku_metrics_table(table: &MetricTable, registry: &KuRegistry) -> String {
    let mode = table
        .awareness_mode
        .map(|m| match m {
            crate::metrics::AwarenessMode::Merged => "merged",
            crate::metrics::AwarenessMode::PerSite => "per-site",
        })
        .unwrap_or("none");
    let mut out = String::from(
        "topic\tku\tcategory\tmodel\tawareness_mode\tfrequency\tpopularity\tattraction\tattention\tagreement\n",
    );
    for (j, unit) in registry.units().iter().enumerate() {
        out.push_str(&format!(
            "{j}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            unit.name,
            unit.category,
            table.model_tag.label(),
            mode,
            table.frequency[j],
            table.popularity[j],
            fmt_opt(table.attraction[j]),
            fmt_opt(table.attention[j]),
            fmt_opt(table.agreement[j]),
        ));
    }
    out
}

/// Per-pair co-frequency and affinity for one model.
pub fn pair_metrics_table(table: &MetricTable, registry: &KuRegistry) -> String {
    let mut out = String::from("topic_a\tku_a\ttopic_b\tku_b\tmodel\tco_frequency\taffinity\n");
    for pair in &table.pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            pair.topic_a,
            registry.units()[pair.topic_a].name,
            pair.topic_b,
            registry.units()[pair.topic_b].name,
            table.model_tag.label(),
            pair.co_frequency,
            fmt_opt(pair.affinity),
        ));
    }
    out
}

/// Figure data: one row per KU per model with both prevalence metrics.
pub fn prevalence_table(
    concrete: &MetricTable,
    documentation: &MetricTable,
    registry: &KuRegistry,
) -> String {
    let mut out = String::from("ku\tmodel\tfrequency\tpopularity\n");
    for table in [concrete, documentation] {
        for (j, unit) in registry.units().iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                unit.name,
                table.model_tag.label(),
                table.frequency[j],
                table.popularity[j],
            ));
        }
    }
    out
}

/// Figure data: the per-document occurring-KU count distribution for both
/// models, plus a quartile summary block.
pub fn kus_per_document_table(
    concrete: &MetricTable,
    documentation: &MetricTable,
) -> (String, String) {
    let mut counts = String::from("model\tdoc_index\tkus_occurring\n");
    let mut summary = String::from("model\tmedian\tq1\tq3\tn_docs\n");
    for table in [concrete, documentation] {
        let dist = &table.kus_per_doc;
        for (i, c) in dist.counts.iter().enumerate() {
            counts.push_str(&format!("{}\t{i}\t{c}\n", table.model_tag.label()));
        }
        summary.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            table.model_tag.label(),
            fmt(dist.median),
            fmt(dist.q1),
            fmt(dist.q3),
            table.n_docs,
        ));
    }
    (counts, summary)
}

/// Per-KU classification outcome: segments, class, and both ranks.
pub fn classification_table(
    registry: &KuRegistry,
    outcome: &AlignmentOutcome,
    concrete_ranks: &BTreeMap<usize, usize>,
    documentation_ranks: &BTreeMap<usize, usize>,
) -> String {
    let mut out = String::from(
        "ku\tcategory\tconcrete_segment\tdocumentation_segment\tclass\tconcrete_rank\tdocumentation_rank\n",
    );
    let mut by_unit: BTreeMap<usize, (String, String, String)> = BTreeMap::new();
    for &(unit, c_seg, d_seg, class) in &outcome.classified {
        by_unit.insert(
            unit,
            (c_seg.to_string(), d_seg.to_string(), class.to_string()),
        );
    }
    for (j, unit) in registry.units().iter().enumerate() {
        let (c_seg, d_seg, class) = by_unit
            .get(&j)
            .cloned()
            .unwrap_or_else(|| ("NA".into(), "NA".into(), "excluded".into()));
        let c_rank = concrete_ranks
            .get(&j)
            .map(|r| r.to_string())
            .unwrap_or_else(|| "NA".into());
        let d_rank = documentation_ranks
            .get(&j)
            .map(|r| r.to_string())
            .unwrap_or_else(|| "NA".into());
        out.push_str(&format!(
            "{}\t{}\t{c_seg}\t{d_seg}\t{class}\t{c_rank}\t{d_rank}\n",
            unit.name, unit.category,
        ));
    }
    out
}

/// Crosstab (a): within each alignment class, the proportion per category.
pub fn crosstab_by_class_table(tab: &CategoryCrosstab) -> String {
    let mut out = String::from("class\tcategory\tcount\tclass_total\tpercent\n");
    for (class, row) in &tab.by_class {
        for category in Category::ALL {
            let cell = &row[&category];
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.1}\n",
                class, category, cell.count, cell.total, cell.rounded,
            ));
        }
    }
    out
}

/// Crosstab (b): within each category, the proportion per alignment class.
pub fn crosstab_by_category_table(tab: &CategoryCrosstab) -> String {
    let mut out = String::from("category\tclass\tcount\tcategory_total\tpercent\n");
    for (category, row) in &tab.by_category {
        for class in AlignmentClass::ALL {
            let cell = &row[&class];
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.1}\n",
                category, class, cell.count, cell.total, cell.rounded,
            ));
        }
    }
    out
}

/// Figure data: slope-chart records.
pub fn slope_table(records: &[SlopeRecord]) -> String {
    let mut out = String::from("ku\tconcrete_rank\tdocumentation_rank\tclass\trank_distance\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.ku, r.concrete_rank, r.documentation_rank, r.class, r.rank_distance,
        ));
    }
    out
}

/// Figure data: KUs ranked descending within each awareness metric,
/// annotated with their alignment class.
pub fn awareness_ranking_table(
    registry: &KuRegistry,
    concrete: &MetricTable,
    classes: &BTreeMap<usize, AlignmentClass>,
) -> String {
    let mut out = String::from("metric\trank\tku\tvalue\tclass\n");
    let metrics: [(&str, &[Option<f64>]); 3] = [
        ("attraction", &concrete.attraction),
        ("attention", &concrete.attention),
        ("agreement", &concrete.agreement),
    ];
    for (name, values) in metrics {
        let mut defined: Vec<(usize, f64)> = values
            .iter()
            .enumerate()
            .filter_map(|(j, v)| v.map(|v| (j, v)))
            .collect();
        defined.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        for (rank, (j, value)) in defined.into_iter().enumerate() {
            let class = classes.get(&j).map(|c| c.label()).unwrap_or("excluded");
            out.push_str(&format!(
                "{name}\t{}\t{}\t{}\t{class}\n",
                rank + 1,
                registry.units()[j].name,
                fmt(value),
            ));
        }
    }
    out
}

/// One labeled estimate per row (skewness and correlation tables share the
/// shape).
pub fn labeled_estimates_table(header: &str, rows: &[(String, LabeledEstimate)]) -> String {
    let mut out = format!("{header}\tvalue\tlabel\tp_value\tsignificant\n");
    for (name, est) in rows {
        out.push_str(&format!(
            "{name}\t{}\t{}\t{}\t{}\n",
            fmt(est.value),
            est.label,
            fmt_opt(est.p_value),
            est.significant
                .map(|s| s.to_string())
                .unwrap_or_else(|| "NA".into()),
        ));
    }
    out
}

/// The awareness hypothesis battery, one comparison per row.
pub fn battery_table(results: &[BatteryResult]) -> String {
    let mut out = String::from(
        "metric\tcomparison\tsidedness\tmedian_first\tmedian_second\tu\traw_p\tadjusted_p\treject\tdelta\tdelta_label\tnote\n",
    );
    for r in results {
        match &r.outcome {
            Some(t) => out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t\n",
                r.metric.label(),
                r.comparison.label(),
                t.sidedness.label(),
                fmt(t.median_first),
                fmt(t.median_second),
                fmt(t.u_statistic),
                fmt(t.raw_p),
                fmt(t.adjusted_p),
                t.reject,
                fmt(t.delta),
                t.delta_label,
            )),
            None => out.push_str(&format!(
                "{}\t{}\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\tNA\t{}\n",
                r.metric.label(),
                r.comparison.label(),
                r.note.as_deref().unwrap_or(""),
            )),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{compute_metric_table, AwarenessMode, AwarenessRecord, ModelTag};

    fn sample_tables() -> (MetricTable, MetricTable, KuRegistry) {
        let units = (0..3)
            .map(|i| crate::registry::KnowledgeUnit {
                name: format!("KU{i}"),
                category: Category::DataTypes,
                anchors: vec![format!("a{i}")],
            })
            .collect();
        let registry = KuRegistry::new("X".into(), units).unwrap();
        let probs = TopicProbabilities::new(
            3,
            vec!["d0".into(), "d1".into()],
            vec![vec![0.9, 0.2, 0.6], vec![0.1, 0.8, 0.55]],
        )
        .unwrap();
        let posts = vec![
            AwarenessRecord {
                doc_id: "d0".into(),
                n_answers: 2,
                has_accepted: true,
            },
            AwarenessRecord {
                doc_id: "d1".into(),
                n_answers: 0,
                has_accepted: false,
            },
        ];
        let concrete = compute_metric_table(
            &probs,
            Some((&posts, AwarenessMode::Merged)),
            ModelTag::Concrete,
        )
        .unwrap();
        let documentation = compute_metric_table(&probs, None, ModelTag::Documentation).unwrap();
        (concrete, documentation, registry)
    }

    #[test]
    fn prevalence_table_has_one_row_per_ku_per_model() {
        let (concrete, documentation, registry) = sample_tables();
        let table = prevalence_table(&concrete, &documentation, &registry);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "ku\tmodel\tfrequency\tpopularity");
        assert_eq!(lines.len(), 1 + 2 * 3);
    }

    #[test]
    fn every_table_declares_a_header() {
        let (concrete, documentation, registry) = sample_tables();
        for content in [
            ku_metrics_table(&concrete, &registry),
            pair_metrics_table(&concrete, &registry),
            prevalence_table(&concrete, &documentation, &registry),
        ] {
            let first = content.lines().next().unwrap();
            assert!(first.contains('\t'));
            assert!(!first.chars().next().unwrap().is_numeric());
        }
    }

    #[test]
    fn awareness_ranking_sorted_descending_within_metric() {
        let (concrete, _, registry) = sample_tables();
        let classes = BTreeMap::new();
        let table = awareness_ranking_table(&registry, &concrete, &classes);
        let mut last_value: Option<f64> = None;
        for line in table.lines().skip(1).filter(|l| l.starts_with("attention")) {
            let value: f64 = line.split('\t').nth(3).unwrap().parse().unwrap();
            if let Some(prev) = last_value {
                assert!(value <= prev);
            }
            last_value = Some(value);
        }
    }
}
