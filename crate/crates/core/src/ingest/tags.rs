//! Tag-set expansion. Candidate tags survive when they are both exclusive
//! enough (share of the tag's posts that are target posts) and significant
//! enough (target posts relative to the most popular seed tag's count).
//! Both comparisons are strict; seed tags are always retained.

use std::collections::BTreeSet;

use super::TagStats;

/// Outcome of threshold filtering over candidate tags.
#[derive(Debug)]
pub struct TagExpansion {
    /// Seed tags plus survivors, sorted.
    pub surviving: BTreeSet<String>,
    /// Candidate tags with a zero total-post count, excluded outright.
    pub zero_total: Vec<String>,
}

/// Filter `tag_stats` by the exclusivity threshold (`tet_min`) and the
/// significance threshold (`tst_min`, relative to `reference_count`, the
/// post count of the most popular seed tag). Tags failing either strict
/// inequality are dropped.
pub fn expand_tags(
    seed_tags: &BTreeSet<String>,
    tag_stats: &[TagStats],
    tet_min: f64,
    tst_min: f64,
    reference_count: u64,
) -> TagExpansion {
    assert!(reference_count > 0, "reference_count must be positive");
    assert!(
        (0.0..1.0).contains(&tet_min) && tet_min > 0.0,
        "tet_min must lie in (0, 1)"
    );
    assert!(
        (0.0..1.0).contains(&tst_min) && tst_min > 0.0,
        "tst_min must lie in (0, 1)"
    );

    let mut surviving: BTreeSet<String> = seed_tags.clone();
    let mut zero_total = Vec::new();
    for stats in tag_stats {
        if seed_tags.contains(&stats.tag) {
            continue;
        }
        if stats.n_total_posts == 0 {
            zero_total.push(stats.tag.clone());
            continue;
        }
        let tet = stats.n_target_posts as f64 / stats.n_total_posts as f64;
        let tst = stats.n_target_posts as f64 / reference_count as f64;
        if tet > tet_min && tst > tst_min {
            surviving.insert(stats.tag.clone());
        }
    }
    TagExpansion {
        surviving,
        zero_total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeds(tags: &[&str]) -> BTreeSet<String> {
        tags.iter().map(|s| s.to_string()).collect()
    }

    fn stats(tag: &str, target: u64, total: u64) -> TagStats {
        TagStats {
            tag: tag.into(),
            n_target_posts: target,
            n_total_posts: total,
        }
    }

    #[test]
    fn tag_passing_both_thresholds_is_kept() {
        let result = expand_tags(
            &seeds(&["rust"]),
            &[stats("tokio", 60, 100)],
            0.5,
            0.01,
            1000,
        );
        assert!(result.surviving.contains("tokio"));
    }

    #[test]
    fn low_exclusivity_excludes_regardless_of_significance() {
        let result = expand_tags(
            &seeds(&["rust"]),
            &[stats("generics", 400, 1000)],
            0.5,
            0.01,
            1000,
        );
        assert!(!result.surviving.contains("generics"));
    }

    #[test]
    fn thresholds_are_strict() {
        // exactly at the threshold fails: the filter removes <= cases
        let result = expand_tags(
            &seeds(&["rust"]),
            &[stats("exact-tet", 50, 100), stats("exact-tst", 10, 10)],
            0.5,
            0.01,
            1000,
        );
        assert!(!result.surviving.contains("exact-tet"));
        assert!(!result.surviving.contains("exact-tst")); // tst = 10/1000 = 0.01, not > 0.01
    }

    #[test]
    fn seed_tags_always_retained() {
        let result = expand_tags(
            &seeds(&["rust", "rust-cargo"]),
            &[stats("rust", 1, 1_000_000)],
            0.5,
            0.01,
            19_335,
        );
        assert!(result.surviving.contains("rust"));
        assert!(result.surviving.contains("rust-cargo"));
    }

    #[test]
    fn zero_total_posts_excluded_and_reported() {
        let result = expand_tags(&seeds(&["rust"]), &[stats("ghost", 0, 0)], 0.5, 0.01, 100);
        assert!(!result.surviving.contains("ghost"));
        assert_eq!(result.zero_total, vec!["ghost"]);
    }

    #[test]
    fn raising_thresholds_never_adds_tags() {
        let tag_stats: Vec<TagStats> = (0..50)
            .map(|i| stats(&format!("t{i}"), (i * 7) % 40, 40))
            .collect();
        let seeds = seeds(&["rust"]);
        let loose = expand_tags(&seeds, &tag_stats, 0.3, 0.005, 500);
        let tighter_tet = expand_tags(&seeds, &tag_stats, 0.6, 0.005, 500);
        let tighter_tst = expand_tags(&seeds, &tag_stats, 0.3, 0.05, 500);
        assert!(tighter_tet.surviving.is_subset(&loose.surviving));
        assert!(tighter_tst.surviving.is_subset(&loose.surviving));
    }
}
