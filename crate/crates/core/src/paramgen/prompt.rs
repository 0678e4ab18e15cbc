use crate::clusterstats::ClusterStats;
use crate::corpus::Qid;

/// Fixed instructions sent with every cluster. The glossary lines are generated
/// from [`Qid::description`] so the text stays in sync with the corpus module.
pub const SYSTEM_MESSAGE: &str = "\
You generate anonymization parameters for one cluster of software commits.
Return ONLY a single valid JSON object, with no prose, no markdown and no code fences.
The object must have exactly these four fields:
{
  \"cluster_id\": \"<the cluster_id from the input, copied verbatim>\",
  \"churn_mixture\": {
    \"components\": [{\"weight\": <number in (0,1]>, \"mean\": <number>, \"std\": <number > 0>}],
    \"min\": <non-negative integer>,
    \"max\": <non-negative integer >= min>
  },
  \"ratio_beta\": {\"alpha\": <number > 0>, \"beta\": <number > 0>},
  \"constraints\": {\"non_negative\": true, \"la_plus_ld_equals_churn\": true}
}
Rules:
- churn_mixture has one to three Gaussian components describing churn = la + ld in lines; component weights sum to 1.
- min and max bound the regenerated churn values.
- ratio_beta is a Beta distribution for ratio = la / churn, which lies in [0, 1].
- Regenerated la and ld are non-negative integers with la + ld = churn.
- Choose parameters that keep the cluster's typical sizes and addition balance while not reproducing any individual commit.
The input is a JSON summary of the cluster: cluster_id (<QID>|<bin_index>, bin -1 means missing or out of range),
bin_left/bin_right (interval of the primary quasi-identifier, null for bin -1), count, and the quantiles
(min, p5, p25, p50, p75, p95, max) of la (lines added), ld (lines deleted), churn and ratio.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

fn system_message() -> String {
    let mut s = String::from(SYSTEM_MESSAGE);
    s.push_str("\nQuasi-identifier glossary:");
    for q in Qid::ALL {
        s.push_str(&format!("\n- {}: {}", q, q.description()));
    }
    s
}

/// Builds the message pair for one cluster. The user message is exactly the
/// cluster's JSON summary, so identical stats give identical bytes.
pub fn build_prompt(stats: &ClusterStats) -> Prompt {
    Prompt { system: system_message(), user: stats.to_json() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::ClusterKey;
    use crate::clusterstats::QuantileSummary;

    fn stats(bin: i32) -> ClusterStats {
        let churn = QuantileSummary { min: 3.0, p5: 10.0, p25: 40.0, p50: 78.0, p75: 120.0, p95: 210.0, max: 400.0 };
        let ratio = QuantileSummary { min: 0.0, p5: 0.1, p25: 0.3, p50: 0.42, p75: 0.6, p95: 0.9, max: 1.0 };
        let bounds = (bin > 0).then_some((3.0, 5.0));
        ClusterStats {
            cluster_id: ClusterKey::new(Qid::Ndev, bin),
            bin_left: bounds.map(|b| b.0),
            bin_right: bounds.map(|b| b.1),
            count: 412,
            la: churn,
            ld: churn,
            churn,
            ratio,
        }
    }

    #[test]
    fn user_message_carries_payload() {
        let p = build_prompt(&stats(2));
        assert!(p.user.contains("\"cluster_id\":\"ndev|2\""));
        assert!(p.user.contains("\"bin_left\":3.0"));
        assert!(p.user.contains("\"bin_right\":5.0"));
        assert!(p.user.contains("\"p50\":78.0"));
        assert!(p.user.contains("\"count\":412"));
        for field in ["cluster_id", "churn_mixture", "ratio_beta", "constraints"] {
            assert!(p.system.contains(field));
        }
        assert!(p.system.contains("ndev: number of developers"));
    }

    #[test]
    fn identical_stats_identical_bytes() {
        assert_eq!(build_prompt(&stats(2)), build_prompt(&stats(2)));
    }

    #[test]
    fn out_of_range_bin_has_null_bounds() {
        let p = build_prompt(&stats(-1));
        assert!(p.user.contains("\"bin_left\":null"));
        assert!(p.user.contains("\"bin_right\":null"));
    }
}
