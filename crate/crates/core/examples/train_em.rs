//! EM training from a synthetic corpus, with and without the
//! minimum-divergence step.

use plda2x::em::{train_stats, TrainConfig};
use plda2x::model::ModelDims;
use plda2x::stats::accumulate_stats;
use plda2x::synth::{sample_corpus, sample_model, SynthDesign};

fn main() -> plda2x::Result<()> {
    let dims = ModelDims::new(8, 3, 2)?;
    let truth = sample_model(dims, 2024)?;
    let (ivs, labels) = sample_corpus(&truth, &SynthDesign::new(200, 4, 2, 2025))?;
    let gs = accumulate_stats(&ivs, &labels)?;

    for md_step in [false, true] {
        let cfg = TrainConfig {
            iters: 30,
            md_step,
            seed: 7,
            ..TrainConfig::new(dims)
        };
        let (_, report) = train_stats(&gs, &cfg, |ev| {
            if ev.iteration % 5 == 0 {
                println!("  iter {:>2}  objective {:.4}", ev.iteration, ev.objective);
            }
        })?;
        println!(
            "MD {}: final {:.4} after {} iterations\n",
            if md_step { "on " } else { "off" },
            report.objectives.last().unwrap(),
            report.objectives.len()
        );
    }
    Ok(())
}
