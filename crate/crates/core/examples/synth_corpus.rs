//! Draw a ground-truth model and a small training corpus from it, then write
//! both in the on-disk formats.
//!
//! ```bash
//! cargo run --example synth_corpus -- /tmp/demo
//! ```

use std::path::PathBuf;

use plda2x::datamodel::{save_ivectors, save_labels};
use plda2x::model::{save_model, ModelDims};
use plda2x::synth::{corpus_comments, sample_corpus, sample_model, Count, SynthDesign};

fn main() -> plda2x::Result<()> {
    let prefix = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("plda2x-demo"));

    let truth = sample_model(ModelDims::new(6, 2, 2)?, 42)?;
    let design = SynthDesign {
        // speakers alternate between 2 and 4 sessions; sessions between 1 and 2 channels
        sessions: Count::Cycle(vec![2, 4]),
        channels: Count::Cycle(vec![1, 2]),
        ..SynthDesign::new(50, 1, 1, 43)
    };
    let (ivs, labels) = sample_corpus(&truth, &design)?;

    let path = |ext: &str| PathBuf::from(format!("{}.{ext}", prefix.display()));
    save_ivectors(
        path("ivec"),
        &ivs,
        &corpus_comments("demo corpus", design.seed),
    )?;
    save_labels(path("labels"), &labels)?;
    save_model(&truth, path("truth"))?;

    println!(
        "{} speakers, {} sessions, {} recordings of dimension {}",
        labels.num_speakers(),
        labels.num_sessions(),
        labels.num_recordings(),
        ivs.dim()
    );
    println!("wrote {}.{{ivec,labels,truth}}", prefix.display());
    Ok(())
}
