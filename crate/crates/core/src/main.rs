use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spatial_mil::eval::{cross_validate, eval_external};
use spatial_mil::io::{
    load_cohort, read_bag, render_attention, write_bag, write_manifest, write_ppm, ManifestEntry,
    RunConfig, RunManifest,
};
use spatial_mil::models::{
    bag_features, class_weights, forward, model_grad_check, read_checkpoint, write_checkpoint,
};
use spatial_mil::synthetic::{generate_cohort, verify_cohort};
use spatial_mil::tensor::Tensor;
use spatial_mil::train::{predict_bags, write_trace_csv};
use spatial_mil::{
    augment_cohort, augment_features, Aggregator, Error, Labels, ModelConfig, ModelParams, Result,
    SlideBag,
};

#[derive(Parser)]
#[command(name = "spatial-mil", version, about = "Spatial priors for MIL over slide tile bags")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable): `--set epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.config.iter().cloned().collect()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Confounded training site.
    Default,
    /// External site: few MSI-H slides, offset independent of the label.
    External,
    /// No planted signal.
    Null,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (bags + manifest).
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "site-a")]
        site: String,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Append peripheral-distance and/or neighbourhood scalars to a bag.
    EncodePriors {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Shorthand for `--set use_pd=true`.
        #[arg(long)]
        pd: bool,
        /// Shorthand for `--set use_lin=true`.
        #[arg(long)]
        lin: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Stratified k-fold training and evaluation on a manifest.
    CrossValidate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score an external cohort with the fold checkpoints, without retraining.
    EvalExternal {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render a model's attention over one bag as a PPM image.
    RenderAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bag: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare reverse-mode and finite-difference gradients on tiny models.
    GradCheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

/// Adds the configured priors unless the bag already has the model's width.
fn fit_bag(bag: SlideBag, cfg: &RunConfig, input_dim: usize) -> Result<SlideBag> {
    if bag.feature_dim == input_dim {
        return Ok(bag);
    }
    let out = augment_features(&bag, &cfg.priors)?;
    if out.feature_dim != input_dim {
        return Err(Error::Config(format!(
            "bag {} has {} features ({} after priors), model expects {input_dim}",
            bag.slide_id, bag.feature_dim, out.feature_dim
        )));
    }
    Ok(out)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenSynthetic {
            out,
            site,
            preset,
            cfg,
        } => {
            let rc = cfg.load()?;
            let base = rc.cohort_spec();
            let spec = match preset {
                Preset::Default => base,
                Preset::External => base.external(),
                Preset::Null => base.null(),
            };
            let cohort = generate_cohort(&spec, &site)?;
            let diag = verify_cohort(&cohort, &spec)?;
            create_dir(&out.join("bags"))?;
            let mut entries = Vec::new();
            let mut manifest = RunManifest::new("gen-synthetic", &rc);
            manifest.inputs = cfg.inputs();
            for s in &cohort.slides {
                let rel = format!("bags/{}.msib", s.slide.bag.slide_id);
                write_bag(&out.join(&rel), &s.slide.bag)?;
                entries.push(ManifestEntry {
                    slide_id: s.slide.bag.slide_id.clone(),
                    path: rel,
                    msi: s.slide.labels.msi as u8,
                    hypermut: s.slide.labels.hypermut as u8,
                    site: site.clone(),
                });
            }
            write_manifest(&out.join("manifest.csv"), &entries)?;
            write_text(&out.join("diagnostics.txt"), &diag.summary())?;
            manifest.outputs = vec![out.join("manifest.csv"), out.join("diagnostics.txt")];
            manifest.write(&out.join("run_manifest.txt"))?;
            println!(
                "wrote {} slides ({} MSI-H) to {}",
                entries.len(),
                entries.iter().filter(|e| e.msi == 1).count(),
                out.display()
            );
            Ok(())
        }
        Command::EncodePriors {
            input,
            output,
            pd,
            lin,
            cfg,
        } => {
            let mut rc = cfg.load()?;
            rc.priors.use_pd |= pd;
            rc.priors.use_lin |= lin;
            rc.priors.validate()?;
            let bag = read_bag(&input)?;
            let out = augment_features(&bag, &rc.priors)?;
            write_bag(&output, &out)?;
            let mut manifest = RunManifest::new("encode-priors", &rc);
            manifest.inputs = [vec![input.clone()], cfg.inputs()].concat();
            manifest.outputs = vec![output.clone()];
            manifest.write(&sidecar(&output))?;
            println!(
                "{}: feature_dim {} -> {}",
                bag.slide_id, bag.feature_dim, out.feature_dim
            );
            Ok(())
        }
        Command::CrossValidate { manifest, out, cfg } => {
            let rc = cfg.load()?;
            let cohort = augment_cohort(&load_cohort(&manifest)?, &rc.priors)?;
            let input_dim = cohort[0].bag.feature_dim;
            let mc = rc.model_config(input_dim);
            let tc = rc.train_config();
            let name = format!(
                "{}{}",
                rc.aggregator,
                match (rc.priors.use_pd, rc.priors.use_lin) {
                    (true, true) => "+PD+LIN",
                    (true, false) => "+PD",
                    (false, true) => "+LIN",
                    (false, false) => "",
                }
            );
            let cv = cross_validate(&cohort, &mc, &tc, rc.folds, &name)?;
            create_dir(&out)?;
            let mut outputs = Vec::new();
            let report_csv = out.join("report.csv");
            let summary = out.join("summary.txt");
            cv.report.write(&report_csv, &summary)?;
            outputs.extend([report_csv, summary]);

            let mut folds_csv = String::from("slide_id,fold\n");
            let mut preds_csv = String::from(
                "fold,slide_id,msi,hypermut,msi_logit,mss_logit,hyper_logit\n",
            );
            for (f, (idx, res)) in cv.kfold.folds.iter().zip(&cv.fold_results).enumerate() {
                let val: Vec<_> = idx.iter().map(|&i| cohort[i].clone()).collect();
                for s in &val {
                    let _ = writeln!(folds_csv, "{},{f}", s.bag.slide_id);
                }
                for p in predict_bags(&res.best, &val)? {
                    let l = p.output.logits;
                    let _ = writeln!(
                        preds_csv,
                        "{f},{},{},{},{:.17e},{:.17e},{:.17e}",
                        p.slide_id, p.labels.msi as u8, p.labels.hypermut as u8, l[0], l[1], l[2]
                    );
                }
                let ckpt = out.join(format!("fold{f}.ckpt"));
                write_checkpoint(&ckpt, &res.best)?;
                let trace = out.join(format!("fold{f}_trace.csv"));
                write_trace_csv(&trace, &res.trace)?;
                outputs.extend([ckpt, trace]);
            }
            for (name, text) in [("folds.csv", folds_csv), ("predictions.csv", preds_csv)] {
                write_text(&out.join(name), &text)?;
                outputs.push(out.join(name));
            }
            let mut rm = RunManifest::new("cross-validate", &rc);
            rm.inputs = [vec![manifest.clone()], cfg.inputs()].concat();
            rm.outputs = outputs;
            rm.write(&out.join("run_manifest.txt"))?;
            print!("{}", cv.report.summary());
            Ok(())
        }
        Command::EvalExternal {
            manifest,
            checkpoints,
            out,
            cfg,
        } => {
            let rc = cfg.load()?;
            let models = checkpoints
                .iter()
                .map(|p| read_checkpoint(p))
                .collect::<Result<Vec<ModelParams>>>()?;
            let input_dim = models[0].config.input_dim;
            let cohort = load_cohort(&manifest)?
                .into_iter()
                .map(|mut s| {
                    s.bag = fit_bag(s.bag, &rc, input_dim)?;
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?;
            let report = eval_external(&models, &cohort, rc.threshold)?;
            create_dir(&out)?;
            let files = [
                ("external.csv", report.to_csv()),
                ("external_predictions.csv", report.predictions_csv()),
                ("external_summary.txt", report.summary()),
            ];
            let mut rm = RunManifest::new("eval-external", &rc);
            for (name, text) in &files {
                write_text(&out.join(name), text)?;
                rm.outputs.push(out.join(name));
            }
            rm.inputs = [vec![manifest.clone()], checkpoints.clone(), cfg.inputs()].concat();
            rm.write(&out.join("run_manifest.txt"))?;
            print!("{}", report.summary());
            Ok(())
        }
        Command::RenderAttention {
            checkpoint,
            bag,
            out,
            cfg,
        } => {
            let rc = cfg.load()?;
            let model = read_checkpoint(&checkpoint)?;
            let b = fit_bag(read_bag(&bag)?, &rc, model.config.input_dim)?;
            let output = forward(&model, &bag_features(&b)?)?;
            let image = render_attention(&b, &output.attention, rc.tile_px)?;
            write_ppm(&out, &image)?;
            let mut rm = RunManifest::new("render-attention", &rc);
            rm.inputs = [vec![checkpoint.clone(), bag.clone()], cfg.inputs()].concat();
            rm.outputs = vec![out.clone()];
            rm.write(&sidecar(&out))?;
            println!("{}x{} image written to {}", image.width, image.height, out.display());
            Ok(())
        }
        Command::GradCheck {
            eps,
            tolerance,
            cfg,
        } => {
            let rc = cfg.load()?;
            let mut worst = 0.0f64;
            for (agg, hidden, heads, n) in [
                (Aggregator::Abmil, 4, 1, 5),
                (Aggregator::ClamSb, 4, 1, 6),
                (Aggregator::TransMil, 8, 2, 5),
            ] {
                let mc = ModelConfig {
                    hidden_dim: hidden,
                    n_heads: heads,
                    clam_k: 2,
                    seed: rc.seed,
                    ..ModelConfig::new(agg, 8)
                };
                let params = ModelParams::init(mc)?;
                let x = probe_features(n, 8, rc.seed);
                let labels = [
                    Labels { msi: true, hypermut: false },
                    Labels { msi: false, hypermut: true },
                ];
                let w = class_weights(&labels);
                let err = model_grad_check(&params, &x, &labels[0], &w, rc.clam_instance_coeff, eps)?;
                println!("{agg:<9} max relative error {err:.3e}");
                worst = worst.max(err);
            }
            if worst < tolerance {
                println!("ok (tolerance {tolerance:e})");
                Ok(())
            } else {
                Err(Error::Numeric(format!(
                    "gradient check failed: {worst:.3e} >= {tolerance:e}"
                )))
            }
        }
    }
}

/// `out.ppm` -> `out.ppm.run.txt`.
fn sidecar(p: &Path) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(".run.txt");
    PathBuf::from(s)
}

fn probe_features(n: usize, d: usize, seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(n, d, data).expect("shape matches data")
}
