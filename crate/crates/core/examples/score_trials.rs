//! Scoring held-out trials with the generating model and a trained one.

use plda2x::em::{train_stats, TrainConfig};
use plda2x::model::ModelDims;
use plda2x::scoring::{compute_eer, score_trials, SessionPolicy};
use plda2x::stats::accumulate_stats;
use plda2x::synth::{sample_corpus, sample_eval, sample_model, EvalDesign, SynthDesign};

fn main() -> plda2x::Result<()> {
    let dims = ModelDims::new(8, 3, 2)?;
    let truth = sample_model(dims, 2024)?;
    let (ivs, labels) = sample_corpus(&truth, &SynthDesign::new(200, 4, 2, 2025))?;
    let gs = accumulate_stats(&ivs, &labels)?;
    let (trained, _) = train_stats(
        &gs,
        &TrainConfig {
            iters: 50,
            ..TrainConfig::new(dims)
        },
        |_| {},
    )?;

    // 3 enrollment utterances per model, 1 target and 10 nontarget trials each
    let (eval_ivs, trials) = sample_eval(&truth, &EvalDesign::new(200, 3, 10, 2026))?;
    for policy in [
        SessionPolicy::IndependentSessions,
        SessionPolicy::OneSession,
    ] {
        for (name, m) in [("truth", &truth), ("trained", &trained)] {
            let recs = score_trials(m, &eval_ivs, &trials, policy, None)?;
            println!(
                "{:<22} {name:<8} EER {:.2}%",
                policy.as_str(),
                100.0 * compute_eer(&recs)?
            );
        }
    }

    let recs = score_trials(
        &truth,
        &eval_ivs,
        &trials,
        SessionPolicy::IndependentSessions,
        Some(0.01),
    )?;
    let r = &recs[0];
    println!(
        "{} vs {}: llr {:.3}, posterior log odds at P_tar=0.01 {:.3}",
        r.model_id,
        r.test_id,
        r.llr,
        r.posterior_log_odds.unwrap()
    );
    Ok(())
}
