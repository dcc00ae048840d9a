//! Run reports: totals, latency percentiles, and the traffic comparison
//! against the direct-messaging baseline.
//!
//! Everything here is computed from the trace alone, so any tool that can
//! read the JSONL trace can reproduce these numbers independently.

use thiserror::Error;

use crate::netsim::engine::{DELEGATED_NOTE, DROPPED_NOTE};
use crate::netsim::trace::{Trace, TraceKind};
use crate::protocol::RoutingAction;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("percentile must be in (0, 100] (got {0})")]
    BadPercentile(f64),
}

/// Nearest-rank percentile of a non-empty, pre-sorted sample.
///
/// Rank = ceil(p/100 * n), 1-based: the 50th percentile of {1,2,3,4,5} is 3.
/// Returns `None` for an empty sample.
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> Result<Option<f64>, MetricsError> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(MetricsError::BadPercentile(p));
    }
    if sorted.is_empty() {
        return Ok(None);
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Ok(Some(sorted[rank.clamp(1, n) - 1]))
}

/// Aggregate accounting for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Messages that actually entered the system (dropped ones excluded).
    pub messages_sent: u64,
    pub delivered_direct: u64,
    pub llm_served: u64,
    pub forwarded: u64,
    pub held: u64,
    /// Drained holds answered by the owner in person / by their model.
    pub drained_human: u64,
    pub drained_delegated: u64,
    pub human_replies: u64,
    /// Message-plane traffic by link class.
    pub core_bytes: u64,
    pub access_bytes: u64,
    /// Model-plane traffic: payload bytes of completed transfers.
    pub model_transfer_bytes: u64,
    pub latency_mean_s: f64,
    pub latency_p50_s: f64,
    pub latency_p95_s: f64,
    /// Fraction of sent messages answered by a model (served or delegated).
    pub llm_hit_rate: f64,
    /// Interaction log records implied by the trace.
    pub log_records: u64,
}

/// Single pass over a trace.
pub fn summarize(trace: &Trace) -> RunReport {
    let mut r = RunReport {
        messages_sent: 0,
        delivered_direct: 0,
        llm_served: 0,
        forwarded: 0,
        held: 0,
        drained_human: 0,
        drained_delegated: 0,
        human_replies: 0,
        core_bytes: 0,
        access_bytes: 0,
        model_transfer_bytes: 0,
        latency_mean_s: 0.0,
        latency_p50_s: 0.0,
        latency_p95_s: 0.0,
        llm_hit_rate: 0.0,
        log_records: 0,
    };
    let mut latencies: Vec<f64> = Vec::new();
    for e in &trace.entries {
        if e.note.as_deref() == Some(DROPPED_NOTE) {
            continue;
        }
        r.core_bytes += e.core_bytes;
        r.access_bytes += e.access_bytes;
        r.model_transfer_bytes += e.model_bytes;
        match e.kind {
            TraceKind::MessageArrival => {
                r.messages_sent += 1;
                match e.action {
                    Some(RoutingAction::DeliverDirect) => r.delivered_direct += 1,
                    Some(RoutingAction::LLMServe) => r.llm_served += 1,
                    Some(RoutingAction::ForwardToRecipient) => r.forwarded += 1,
                    Some(RoutingAction::HoldInactive) => r.held += 1,
                    None => {}
                }
                if let Some(l) = e.latency_s {
                    latencies.push(l);
                }
            }
            TraceKind::Drain => {
                if e.note.as_deref() == Some(DELEGATED_NOTE) {
                    r.drained_delegated += 1;
                } else {
                    r.drained_human += 1;
                }
            }
            TraceKind::HumanReply => r.human_replies += 1,
            _ => {}
        }
    }
    latencies.sort_by(|a, b| a.total_cmp(b));
    if !latencies.is_empty() {
        r.latency_mean_s = latencies.iter().sum::<f64>() / latencies.len() as f64;
        r.latency_p50_s =
            percentile_nearest_rank(&latencies, 50.0).expect("valid percentile").unwrap();
        r.latency_p95_s =
            percentile_nearest_rank(&latencies, 95.0).expect("valid percentile").unwrap();
    }
    if r.messages_sent > 0 {
        r.llm_hit_rate = (r.llm_served + r.drained_delegated) as f64 / r.messages_sent as f64;
    }
    r.log_records = r.llm_served + r.drained_delegated;
    r
}

impl RunReport {
    pub fn to_json(&self) -> String {
        format!(
            concat!(
                "{{\"messages_sent\":{},\"delivered_direct\":{},\"llm_served\":{},",
                "\"forwarded\":{},\"held\":{},\"drained_human\":{},\"drained_delegated\":{},",
                "\"human_replies\":{},\"core_bytes\":{},\"access_bytes\":{},",
                "\"model_transfer_bytes\":{},\"latency_mean_s\":{:.6},\"latency_p50_s\":{:.6},",
                "\"latency_p95_s\":{:.6},\"llm_hit_rate\":{:.6},\"log_records\":{}}}"
            ),
            self.messages_sent,
            self.delivered_direct,
            self.llm_served,
            self.forwarded,
            self.held,
            self.drained_human,
            self.drained_delegated,
            self.human_replies,
            self.core_bytes,
            self.access_bytes,
            self.model_transfer_bytes,
            self.latency_mean_s,
            self.latency_p50_s,
            self.latency_p95_s,
            self.llm_hit_rate,
            self.log_records,
        )
    }

    pub const CSV_HEADER: &'static str = "messages_sent,delivered_direct,llm_served,forwarded,held,drained_human,drained_delegated,human_replies,core_bytes,access_bytes,model_transfer_bytes,latency_mean_s,latency_p50_s,latency_p95_s,llm_hit_rate,log_records";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.messages_sent,
            self.delivered_direct,
            self.llm_served,
            self.forwarded,
            self.held,
            self.drained_human,
            self.drained_delegated,
            self.human_replies,
            self.core_bytes,
            self.access_bytes,
            self.model_transfer_bytes,
            self.latency_mean_s,
            self.latency_p50_s,
            self.latency_p95_s,
            self.llm_hit_rate,
            self.log_records,
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.to_csv_row())
    }
}

/// Core-traffic reduction of a scenario against its baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduction {
    Pct(f64),
    /// Baseline moved zero core bytes while the scenario moved some; a
    /// percentage would divide by zero.
    UndefinedZeroBaseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub baseline_core_bytes: u64,
    pub scenario_core_bytes: u64,
    pub model_transfer_bytes: u64,
    pub include_model_transfer: bool,
    /// Scenario bytes entering the comparison (core, plus transfers if
    /// included).
    pub effective_scenario_bytes: u64,
    pub reduction: Reduction,
}

/// Compares scenario core traffic against the baseline.
///
/// With `include_model_transfer`, the one-time model shipping cost counts
/// against the scenario, which is what makes the break-even point visible.
pub fn compare(
    baseline: &RunReport,
    scenario: &RunReport,
    include_model_transfer: bool,
) -> ReductionReport {
    let baseline_total =
        baseline.core_bytes + if include_model_transfer { baseline.model_transfer_bytes } else { 0 };
    let scenario_total =
        scenario.core_bytes + if include_model_transfer { scenario.model_transfer_bytes } else { 0 };
    let reduction = if baseline_total == 0 {
        if scenario_total == 0 {
            Reduction::Pct(0.0)
        } else {
            Reduction::UndefinedZeroBaseline
        }
    } else {
        Reduction::Pct(100.0 * (1.0 - scenario_total as f64 / baseline_total as f64))
    };
    ReductionReport {
        baseline_core_bytes: baseline.core_bytes,
        scenario_core_bytes: scenario.core_bytes,
        model_transfer_bytes: scenario.model_transfer_bytes,
        include_model_transfer,
        effective_scenario_bytes: scenario_total,
        reduction,
    }
}

impl ReductionReport {
    pub fn to_json(&self) -> String {
        let (pct, reason) = match self.reduction {
            Reduction::Pct(p) => (format!("{p:.6}"), "null".to_string()),
            Reduction::UndefinedZeroBaseline => {
                ("null".to_string(), "\"zero_baseline_nonzero_scenario\"".to_string())
            }
        };
        format!(
            concat!(
                "{{\"baseline_core_bytes\":{},\"scenario_core_bytes\":{},",
                "\"model_transfer_bytes\":{},\"include_model_transfer\":{},",
                "\"effective_scenario_bytes\":{},\"reduction_pct\":{},",
                "\"reduction_undefined_reason\":{}}}"
            ),
            self.baseline_core_bytes,
            self.scenario_core_bytes,
            self.model_transfer_bytes,
            self.include_model_transfer,
            self.effective_scenario_bytes,
            pct,
            reason,
        )
    }

    pub const CSV_HEADER: &'static str = "baseline_core_bytes,scenario_core_bytes,model_transfer_bytes,include_model_transfer,effective_scenario_bytes,reduction_pct,reduction_undefined_reason";

    pub fn to_csv_row(&self) -> String {
        let (pct, reason) = match self.reduction {
            Reduction::Pct(p) => (format!("{p:.6}"), String::new()),
            Reduction::UndefinedZeroBaseline => {
                (String::new(), "zero_baseline_nonzero_scenario".to_string())
            }
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.baseline_core_bytes,
            self.scenario_core_bytes,
            self.model_transfer_bytes,
            self.include_model_transfer,
            self.effective_scenario_bytes,
            pct,
            reason,
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.to_csv_row())
    }
}
