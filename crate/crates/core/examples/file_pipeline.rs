//! The full file-based workflow: write a corpus, load it back, train, save
//! the model, score trials from files and save the scores.

use plda2x::datamodel::{load_ivectors, load_labels, load_trials, save_ivectors, save_labels};
use plda2x::em::{train, TrainConfig};
use plda2x::model::{load_model, save_model, ModelDims};
use plda2x::scoring::{compute_eer, save_scores, score_trials, SessionPolicy};
use plda2x::synth::{sample_corpus, sample_eval, sample_model, EvalDesign, SynthDesign};

fn main() -> plda2x::Result<()> {
    let dir = std::env::temp_dir().join(format!("plda2x-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| plda2x::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let f = |name: &str| dir.join(name);

    let dims = ModelDims::new(6, 2, 1)?;
    let truth = sample_model(dims, 3)?;
    let (ivs, labels) = sample_corpus(&truth, &SynthDesign::new(80, 3, 2, 4))?;
    save_ivectors(f("train.ivec"), &ivs, &[])?;
    save_labels(f("train.labels"), &labels)?;
    let (eivs, trials) = sample_eval(&truth, &EvalDesign::new(40, 3, 5, 5))?;
    save_ivectors(f("eval.ivec"), &eivs, &[])?;
    std::fs::write(f("eval.enroll"), trials.enroll_text()).unwrap();
    std::fs::write(f("eval.trials"), trials.trials_text()).unwrap();

    let ivs = load_ivectors(f("train.ivec"))?;
    let labels = load_labels(f("train.labels"), &ivs)?;
    let (model, report) = train(
        &ivs,
        &labels,
        &TrainConfig {
            iters: 20,
            ..TrainConfig::new(dims)
        },
    )?;
    save_model(&model, f("model.txt"))?;
    println!("{}", report.to_json());

    let model = load_model(f("model.txt"))?;
    let eivs = load_ivectors(f("eval.ivec"))?;
    let trials = load_trials(f("eval.trials"), f("eval.enroll"), &eivs)?;
    let policy = SessionPolicy::IndependentSessions;
    let recs = score_trials(&model, &eivs, &trials, policy, None)?;
    save_scores(f("scores.txt"), &recs, policy, None)?;
    println!("EER {:.4}, files in {}", compute_eer(&recs)?, dir.display());
    Ok(())
}
