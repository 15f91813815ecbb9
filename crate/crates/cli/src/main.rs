//! Experiment CLI for the OVE-PG training objective.
//!
//! Subcommands map onto the bundled studies: `synth1d` (1D three-Gaussian
//! classification with a polynomial basis), `pretrain`/`finetune`/
//! `sweep-beta` (the image pretrain→fine-tune protocol over IDX files),
//! `pg-check` (sampler moment validation), `ove-inspect` (tensor dumps) and
//! `eval` (checkpoint accuracy).
//!
//! Exit codes: 0 success, 1 parse/usage error, 2 data error, 3 numerical
//! abort. Failures print one machine-parseable line to stderr:
//! `error code=<n> kind=<parse|data|numerical> msg="..."`.

mod config;
mod experiments;
mod runio;
mod tools;

use clap::{ArgAction, Args, Parser, Subcommand};

use config::Resolver;

/// Classified failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub msg: String,
}

impl CliError {
    pub fn parse(msg: String) -> Self {
        Self { code: 1, kind: "parse", msg }
    }

    pub fn data(msg: String) -> Self {
        Self { code: 2, kind: "data", msg }
    }

    pub fn numerical(msg: String) -> Self {
        Self { code: 3, kind: "numerical", msg }
    }

    pub fn from_core(e: ovepg_core::Error) -> Self {
        use ovepg_core::Error as E;
        match e {
            E::Parameter(_) => Self::parse(e.to_string()),
            E::Numerical(_) => Self::numerical(e.to_string()),
            E::Input(_)
            | E::Index(_)
            | E::BadMagic { .. }
            | E::Truncated { .. }
            | E::CountMismatch { .. }
            | E::LabelOutOfRange { .. }
            | E::InsufficientClassSamples { .. }
            | E::Usage(_)
            | E::Io(_) => Self::data(e.to_string()),
        }
    }
}

/// Successful command completion.
pub struct ExitOutcome(());

impl ExitOutcome {
    pub fn ok() -> Self {
        Self(())
    }
}

const AFTER_HELP: &str = "\
OUTPUT LAYOUT (per run)
  <out-dir>/<command>-<confighash8>-s<seed>/
    manifest.json   resolved config, seeds, input sha256 digests, output
                    paths, tool version; the only file carrying timestamps
                    and wall time
    metrics.jsonl   one JSON object per epoch:
                    {\"epoch\",\"mean_nll\",\"mean_kl\",\"mean_total\",\"lr\"}
    report.json     final report: config echo, per-epoch records, train/
                    test/seen/unseen accuracies (fractions in [0,1]),
                    harmonic_mean, kl_distance = sum (mu_theta - mu)^2, seed
    curves.csv      synth1d only: header x,p_class0..; softmax class
                    probabilities of the tuned model on x in [-6,6] step 0.05
    model.ovepg     pretrain only: checkpoint (magic OVEPG-MODEL-1, layer
                    header, little-endian f64 parameter block)
    summary.{json,csv}  sweep-beta only: one row per beta with seen/unseen/HM
                    (CSV columns in percent)

  The directory name hashes the resolved configuration, so reruns with the
  same config+seed reproduce metric files byte-for-byte and differing
  configs never overwrite each other.

CONFIG FILES
  --config FILE reads key=value lines ('#' comments). Keys equal the long
  flag names. Explicit flags win over file entries; the resolved merge is
  echoed in manifest.json.

DATA RESOLUTION
  Relative dataset paths that do not exist are resolved against
  $OVEPG_DATA_DIR when it is set.

EXIT CODES
  0 success; 1 parse error; 2 data error; 3 numerical abort. Errors print
  one line: error code=<n> kind=<kind> msg=\"...\"

NOTE
  The image experiments use a small MLP (784-<hidden>-C) in place of the
  original vision transformer; the training objective, not the backbone, is
  what these desk-scale studies exercise.";

#[derive(Parser)]
#[command(
    name = "ovepg",
    version,
    about = "OVE-PG: one-vs-each softmax bound with Polya-Gamma augmentation",
    after_long_help = AFTER_HELP,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonTrainFlags {
    /// Objective mode: softmax | ove | ove_pg
    #[arg(long)]
    objective: Option<String>,
    /// Prior precision alpha over logits
    #[arg(long)]
    alpha: Option<f64>,
    /// KL penalty weight beta
    #[arg(long)]
    beta: Option<f64>,
    /// Monte-Carlo chains M (1..=64)
    #[arg(long)]
    chains: Option<usize>,
    /// Base learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Schedule: constant | cosine
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Omega update: mean | sample
    #[arg(long)]
    omega_mode: Option<String>,
    /// Gamma-sum truncation depth for PG draws
    #[arg(long)]
    pg_terms: Option<usize>,
    /// Stop on training-loss plateau (<1e-5 relative over 5 epochs)
    #[arg(long, action = ArgAction::Set)]
    early_stop: Option<bool>,
    /// key=value config file; flags win
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// Root directory for run outputs
    #[arg(long)]
    out_dir: Option<String>,
}

impl CommonTrainFlags {
    fn apply(&self, r: &mut Resolver) -> Result<(), CliError> {
        if let Some(path) = &self.config {
            r.apply_file(path)?;
        }
        r.set_flag("objective", self.objective.as_ref());
        r.set_flag("alpha", self.alpha);
        r.set_flag("beta", self.beta);
        r.set_flag("chains", self.chains);
        r.set_flag("lr", self.lr);
        r.set_flag("schedule", self.schedule.as_ref());
        r.set_flag("epochs", self.epochs);
        r.set_flag("batch-size", self.batch_size);
        r.set_flag("seed", self.seed);
        r.set_flag("omega-mode", self.omega_mode.as_ref());
        r.set_flag("pg-terms", self.pg_terms);
        r.set_flag("early-stop", self.early_stop);
        r.set_flag("out-dir", self.out_dir.as_ref());
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// 1D three-Gaussian study: train a degree-3 polynomial classifier and
    /// emit class-probability curves for plotting
    Synth1d {
        #[command(flatten)]
        common: CommonTrainFlags,
        /// Samples per class (an equal held-out test set is drawn from
        /// seed+0x7e57)
        #[arg(long)]
        n_per_class: Option<usize>,
        /// Polynomial basis degree (features x, x^2, ..., x^degree)
        #[arg(long)]
        degree: Option<usize>,
    },
    /// Train the MLP "pre-trained" model on an IDX dataset and save its
    /// checkpoint
    Pretrain {
        #[command(flatten)]
        common: CommonTrainFlags,
        #[arg(long)]
        images: Option<String>,
        #[arg(long)]
        labels: Option<String>,
        #[arg(long)]
        test_images: Option<String>,
        #[arg(long)]
        test_labels: Option<String>,
        /// Images stored transposed (EMNIST layout)
        #[arg(long, action = ArgAction::Set)]
        transpose: Option<bool>,
        /// Hidden layer width
        #[arg(long)]
        hidden: Option<usize>,
        /// Hidden activation: relu | tanh
        #[arg(long)]
        activation: Option<String>,
        /// Fixed class count (labels outside 0..classes are load errors)
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Fine-tune a checkpoint against its frozen copy on a per-class subset
    Finetune {
        #[command(flatten)]
        common: CommonTrainFlags,
        #[command(flatten)]
        data: FinetuneDataFlags,
    },
    /// Finetune across a beta grid and tabulate seen/unseen/HM per beta
    SweepBeta {
        #[command(flatten)]
        common: CommonTrainFlags,
        #[command(flatten)]
        data: FinetuneDataFlags,
        /// Inclusive grid start:end:step (default 0.1:0.7:0.1)
        #[arg(long)]
        grid: Option<String>,
    },
    /// Validate PG sampler moments against the analytic mean; nonzero exit
    /// on deviation beyond --threshold
    PgCheck {
        #[arg(long)]
        draws: Option<usize>,
        /// Max relative error per (b, c) cell
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        pg_terms: Option<usize>,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
    },
    /// Dump the comparison tensor A and (given logits/labels) psi, kappa,
    /// OVE scores and softmax probabilities as JSON
    OveInspect {
        /// Class count (required without --logits)
        #[arg(long)]
        classes: Option<usize>,
        /// Logit rows "1,2,3;4,5,6"
        #[arg(long)]
        logits: Option<String>,
        /// Class labels "0,2" (one per logit row)
        #[arg(long)]
        labels: Option<String>,
        /// Add the sigma(0) diagonal factors to the scores
        #[arg(long, action = ArgAction::Set)]
        include_diagonal: Option<bool>,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
    },
    /// Accuracy of a checkpoint on an IDX dataset
    Eval {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        images: Option<String>,
        #[arg(long)]
        labels: Option<String>,
        #[arg(long, action = ArgAction::Set)]
        transpose: Option<bool>,
        #[arg(long)]
        config: Option<std::path::PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct FinetuneDataFlags {
    /// Pretrained checkpoint (model.ovepg)
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    train_images: Option<String>,
    #[arg(long)]
    train_labels: Option<String>,
    /// Test set of the pretraining distribution ("seen")
    #[arg(long)]
    seen_images: Option<String>,
    #[arg(long)]
    seen_labels: Option<String>,
    /// Test set of the fine-tune distribution ("unseen")
    #[arg(long)]
    unseen_images: Option<String>,
    #[arg(long)]
    unseen_labels: Option<String>,
    #[arg(long, action = ArgAction::Set)]
    transpose_train: Option<bool>,
    #[arg(long, action = ArgAction::Set)]
    transpose_seen: Option<bool>,
    #[arg(long, action = ArgAction::Set)]
    transpose_unseen: Option<bool>,
    /// Keep the first k samples of every class (the fine-tuning protocol)
    #[arg(long)]
    subset_per_class: Option<usize>,
}

impl FinetuneDataFlags {
    fn apply(&self, r: &mut Resolver) {
        r.set_flag("model", self.model.as_ref());
        r.set_flag("train-images", self.train_images.as_ref());
        r.set_flag("train-labels", self.train_labels.as_ref());
        r.set_flag("seen-images", self.seen_images.as_ref());
        r.set_flag("seen-labels", self.seen_labels.as_ref());
        r.set_flag("unseen-images", self.unseen_images.as_ref());
        r.set_flag("unseen-labels", self.unseen_labels.as_ref());
        r.set_flag("transpose-train", self.transpose_train);
        r.set_flag("transpose-seen", self.transpose_seen);
        r.set_flag("transpose-unseen", self.transpose_unseen);
        r.set_flag("subset-per-class", self.subset_per_class);
    }
}

fn dispatch(command: Command) -> Result<ExitOutcome, CliError> {
    match command {
        Command::Synth1d {
            common,
            n_per_class,
            degree,
        } => {
            let mut r = Resolver::new(&experiments::synth1d_defaults());
            common.apply(&mut r)?;
            r.set_flag("n-per-class", n_per_class);
            r.set_flag("degree", degree);
            experiments::run_synth1d(&r)
        }
        Command::Pretrain {
            common,
            images,
            labels,
            test_images,
            test_labels,
            transpose,
            hidden,
            activation,
            classes,
        } => {
            let mut r = Resolver::new(&experiments::pretrain_defaults());
            common.apply(&mut r)?;
            r.set_flag("images", images);
            r.set_flag("labels", labels);
            r.set_flag("test-images", test_images);
            r.set_flag("test-labels", test_labels);
            r.set_flag("transpose", transpose);
            r.set_flag("hidden", hidden);
            r.set_flag("activation", activation);
            r.set_flag("classes", classes);
            experiments::run_pretrain(&r)
        }
        Command::Finetune { common, data } => {
            let mut r = Resolver::new(&experiments::finetune_defaults());
            common.apply(&mut r)?;
            data.apply(&mut r);
            experiments::run_finetune(&r)
        }
        Command::SweepBeta { common, data, grid } => {
            let mut r = Resolver::new(&experiments::sweep_beta_defaults());
            common.apply(&mut r)?;
            data.apply(&mut r);
            r.set_flag("grid", grid);
            experiments::run_sweep_beta(&r)
        }
        Command::PgCheck {
            draws,
            threshold,
            seed,
            pg_terms,
            config,
        } => {
            let mut r = Resolver::new(&tools::pg_check_defaults());
            if let Some(path) = &config {
                r.apply_file(path)?;
            }
            r.set_flag("draws", draws);
            r.set_flag("threshold", threshold);
            r.set_flag("seed", seed);
            r.set_flag("pg-terms", pg_terms);
            tools::run_pg_check(&r)
        }
        Command::OveInspect {
            classes,
            logits,
            labels,
            include_diagonal,
            config,
        } => {
            let mut r = Resolver::new(&tools::ove_inspect_defaults());
            if let Some(path) = &config {
                r.apply_file(path)?;
            }
            r.set_flag("classes", classes);
            r.set_flag("logits", logits);
            r.set_flag("labels", labels);
            r.set_flag("include-diagonal", include_diagonal);
            tools::run_ove_inspect(&r)
        }
        Command::Eval {
            model,
            images,
            labels,
            transpose,
            config,
        } => {
            let mut r = Resolver::new(&tools::eval_defaults());
            if let Some(path) = &config {
                r.apply_file(path)?;
            }
            r.set_flag("model", model);
            r.set_flag("images", images);
            r.set_flag("labels", labels);
            r.set_flag("transpose", transpose);
            tools::run_eval(&r)
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let msg = e.to_string().replace('\n', " ").trim().to_string();
            eprintln!("error code=1 kind=parse msg={msg:?}");
            std::process::exit(1);
        }
    };
    match dispatch(cli.command) {
        Ok(_) => {}
        Err(e) => {
            eprintln!("error code={} kind={} msg={:?}", e.code, e.kind, e.msg);
            std::process::exit(e.code);
        }
    }
}
