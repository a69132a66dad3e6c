//! Measurement: statistics, Likert handling, prompt templates and the
//! steering experiment harness.

pub mod harness;
pub mod likert;
pub mod prompts;
pub mod stats;

pub use harness::{
    judge_sweep, ppl_stability, proxy_counts, proxy_sweep, render_m_table, render_ppl_table, render_sweep_table,
    run_point, stream_for, sweep_m, to_jsonl, EvalError, FrequencyProxy, Judge, JudgeOutcome, MSweepRow, PplTable,
    ProcessJudge, Prompt, SteeringFixture, SweepRow, SweepSettings,
};
pub use likert::{likert_aggregate, parse_likert, AggregateError, LikertCell, LikertRecord, ParseLikertError};
pub use prompts::{render_answer_prompt, render_judge_prompt, trait_description, PromptError};
pub use stats::{
    correlation_p_value, fractional_ranks, pearson, regularized_incomplete_beta, spearman, student_t_two_sided,
    two_proportion_test, CorrelationResult, StatsError, StdConvention, Summary,
};
