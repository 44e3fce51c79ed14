//! Command-line front end. Exit codes: 0 success, 1 invalid input or usage,
//! 2 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::datamodel::{
    load_ivectors, load_labels, load_trial_keys, load_trials, save_ivectors, save_labels,
    write_file,
};
use crate::em::{train_stats, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{load_model, save_model, ModelDims};
use crate::oracle::{verify, VerifyConfig};
use crate::scoring::{
    attach_keys, compute_eer, load_scores, save_scores, score_trials, SessionPolicy,
};
use crate::stats::accumulate_stats;
use crate::synth::{
    corpus_comments, sample_corpus, sample_eval, sample_model, Count, EvalDesign, SynthDesign,
};

#[derive(Parser, Debug)]
#[command(
    name = "plda2x",
    version,
    about = "PLDA with speaker and channel factors"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model with EM.
    Train {
        #[arg(long)]
        ivectors: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        ny: usize,
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long, value_enum, default_value = "on")]
        md: OnOff,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        rel_tol: f64,
        #[arg(long)]
        out: PathBuf,
        /// JSON report with the per-iteration objective.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score trials with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        ivectors: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value = "independent-sessions")]
        policy: SessionPolicy,
        /// Target prior; scores become posterior log odds.
        #[arg(long)]
        ptar: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a ground-truth model and a corpus from it.
    Synth {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        ny: usize,
        #[arg(long, default_value_t = 2)]
        nx: usize,
        #[arg(long, default_value_t = 200)]
        speakers: usize,
        /// Sessions per speaker; a comma list cycles.
        #[arg(long, default_value = "4", value_delimiter = ',')]
        sessions: Vec<usize>,
        /// Channels per session; a comma list cycles.
        #[arg(long, default_value = "2", value_delimiter = ',')]
        channels: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Held-out speakers for PREFIX.eval.ivec, PREFIX.enroll and PREFIX.trials.
        #[arg(long, default_value_t = 0)]
        eval_speakers: usize,
        #[arg(long, default_value_t = 3)]
        enroll_utts: usize,
        #[arg(long, default_value_t = 10)]
        nontargets: usize,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Equal error rate of a keyed score file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
    },
    /// Compare closed-form inference against dense oracles.
    Verify {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long)]
        nx: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

/// Runs the front end on the process arguments.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Runs the front end on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn count(v: Vec<usize>) -> Count {
    if v.len() == 1 {
        Count::Const(v[0])
    } else {
        Count::Cycle(v)
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            ivectors,
            labels,
            ny,
            nx,
            iters,
            md,
            seed,
            rel_tol,
            out,
            report,
        } => {
            let ivs = load_ivectors(&ivectors)?;
            let cfg = TrainConfig {
                iters,
                md_step: matches!(md, OnOff::On),
                seed,
                rel_tol,
                dims: ModelDims::new(ivs.dim(), ny, nx)?,
            };
            cfg.validate()?;
            let labels = load_labels(&labels, &ivs)?;
            let gs = accumulate_stats(&ivs, &labels)?;
            let (model, rep) = train_stats(&gs, &cfg, |ev| {
                println!("iter {} objective {:.12e}", ev.iteration, ev.objective);
            })?;
            save_model(&model, &out)?;
            if let Some(path) = report {
                write_file(&path, &(rep.to_json() + "\n"))?;
            }
            Ok(())
        }
        Command::Score {
            model,
            ivectors,
            enroll,
            trials,
            policy,
            ptar,
            out,
        } => {
            let m = load_model(&model)?;
            let ivs = load_ivectors(&ivectors)?;
            let list = load_trials(&trials, &enroll, &ivs)?;
            let recs = score_trials(&m, &ivs, &list, policy, ptar)?;
            save_scores(&out, &recs, policy, ptar)
        }
        Command::Synth {
            dim,
            ny,
            nx,
            speakers,
            sessions,
            channels,
            seed,
            eval_speakers,
            enroll_utts,
            nontargets,
            out,
        } => {
            let dims = ModelDims::new(dim, ny, nx)?;
            let design = SynthDesign {
                speakers,
                sessions: count(sessions),
                channels: count(channels),
                seed: seed.wrapping_add(1),
                prefix: String::new(),
            };
            design.validate()?;
            let truth = sample_model(dims, seed)?;
            let (ivs, labels) = sample_corpus(&truth, &design)?;
            save_ivectors(
                with_ext(&out, "ivec"),
                &ivs,
                &corpus_comments("training corpus", seed),
            )?;
            save_labels(with_ext(&out, "labels"), &labels)?;
            save_model(&truth, with_ext(&out, "truth"))?;
            if eval_speakers > 0 {
                let ed = EvalDesign {
                    seed: seed.wrapping_add(2),
                    ..EvalDesign::new(eval_speakers, enroll_utts, nontargets, 0)
                };
                let (eivs, list) = sample_eval(&truth, &ed)?;
                save_ivectors(
                    with_ext(&out, "eval.ivec"),
                    &eivs,
                    &corpus_comments("evaluation corpus", seed),
                )?;
                write_file(&with_ext(&out, "enroll"), &list.enroll_text())?;
                write_file(&with_ext(&out, "trials"), &list.trials_text())?;
            }
            Ok(())
        }
        Command::Eval { scores, trials } => {
            let mut recs = load_scores(&scores)?;
            let keys = load_trial_keys(&trials)?;
            attach_keys(&mut recs, &keys)?;
            println!("EER {:.4}", compute_eer(&recs)?);
            Ok(())
        }
        Command::Verify {
            dim,
            ny,
            nx,
            seed,
            instances,
        } => {
            let cfg = VerifyConfig {
                dims: Some(ModelDims::new(dim, ny, nx)?),
                ..VerifyConfig::sweep(instances, seed)
            };
            let rep = verify(&cfg)?;
            for (name, dev, tol) in rep.checks() {
                let tag = if dev <= tol { "ok" } else { "FAIL" };
                println!("{name:<26} max {dev:.3e}  threshold {tol:.0e}  {tag}");
            }
            if rep.passed() {
                Ok(())
            } else {
                Err(Error::Verification("deviation above threshold".into()))
            }
        }
    }
}
