use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use betaboard_core::betamove::{
    beam_search, match_rate, BetaRecord, BetaSequence, HandAnnotation, SuccessParams,
    DEFAULT_BEAM_WIDTH,
};
use betaboard_core::board::{
    load_dataset, load_hold_features, HoldFeatureTable, Problem, ProblemRecord, ValidationRules,
};
use betaboard_core::deeprouteset::{
    sample_route, self_consistency_filter, tokenize, train_generator, FilterConfig, GenConfig,
    GenTrainConfig, Generator,
};
use betaboard_core::embed::{embed_sequence, EmbeddedRecord};
use betaboard_core::gradenet::{train_with_callback, GradeDistribution, GradeNet, LabeledSequence, TrainConfig};
use betaboard_core::pipeline::{evaluate, filter_dataset, ingest, render_report, split, SplitSpec};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "betaboard", version, about = "MoonBoard beta search, grading and route generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the best hand sequence for every problem.
    Beta {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed betas into the training-cache format.
    Embed {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of betas that match expert hand annotations.
    MatchRate {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Train the grade classifier on an embedded cache.
    TrainGrade {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Training configuration (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the per-epoch history.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Predict grades for problems.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the route generator on the betas of a problem set.
    TrainGen {
        #[command(flatten)]
        solve: SolveArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample new problems.
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Grade classifier used to label the generated problems.
        #[arg(long)]
        grade_model: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples drawn per requested route before giving up.
        #[arg(long, default_value_t = 200)]
        attempts: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse raw problem records, dropping unreadable ones.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        failures: Option<PathBuf>,
    },
    /// Apply the dataset filters.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Split into train/dev/test files.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        no_stratify: bool,
    },
    /// Score predictions against true grades.
    Eval {
        /// Output of `predict`.
        #[arg(long)]
        pred: PathBuf,
        /// Problems carrying their true grades.
        #[arg(long)]
        truth: PathBuf,
        /// Path prefix; writes `.txt`, `.json` and `.svg`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the bind address in the config.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problems: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BEAM_WIDTH)]
    beam: usize,
}

struct Solved {
    table: HoldFeatureTable,
    betas: Vec<BetaSequence>,
}

impl SolveArgs {
    fn table(&self) -> Result<HoldFeatureTable> {
        load_table(self.features.as_deref())
    }

    fn params(&self) -> Result<SuccessParams> {
        load_params(self.params.as_deref())
    }

    fn problems(&self) -> Result<Vec<Problem>> {
        read_problems(&self.problems)
    }

    /// Searches every problem; failures are reported and skipped.
    fn solve(&self) -> Result<Solved> {
        let table = self.table()?;
        let params = self.params()?;
        let mut betas = Vec::new();
        for p in self.problems()? {
            match beam_search(&p, &table, &params, self.beam) {
                Ok(seq) => betas.push(seq),
                Err(e) => eprintln!("skipping {}: {e}", p.id_or_empty()),
            }
        }
        Ok(Solved { table, betas })
    }
}

fn load_table(path: Option<&Path>) -> Result<HoldFeatureTable> {
    match path {
        Some(p) => load_hold_features(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(HoldFeatureTable::default()),
    }
}

fn load_params(path: Option<&Path>) -> Result<SuccessParams> {
    match path {
        Some(p) => SuccessParams::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(SuccessParams::default()),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize + ?Sized>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_problems(path: &Path) -> Result<Vec<Problem>> {
    let records = load_dataset(path).with_context(|| format!("reading {}", path.display()))?;
    records
        .iter()
        .map(|r| Problem::from_record(r).with_context(|| format!("problem {:?}", r.id)))
        .collect()
}

fn write_problems(path: &Path, problems: &[Problem]) -> Result<()> {
    let records: Vec<ProblemRecord> = problems.iter().map(Problem::to_record).collect();
    write_json(Some(path), &records)
}

#[derive(Debug, Serialize, Deserialize)]
struct Prediction {
    problem_id: String,
    predicted_grade: String,
    probs: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Generated {
    problem: ProblemRecord,
    beta: BetaRecord,
    predicted_grade: Option<String>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Beta { solve, out } => {
            let solved = solve.solve()?;
            let records: Vec<BetaRecord> = solved.betas.iter().map(BetaSequence::to_record).collect();
            write_json(out.as_deref(), &records)
        }
        Command::Embed { solve, out } => {
            let solved = solve.solve()?;
            let records: Vec<EmbeddedRecord> = solved
                .betas
                .iter()
                .map(|s| EmbeddedRecord::from_sequence(s, &solved.table))
                .collect();
            write_json(out.as_deref(), &records)
        }
        Command::MatchRate { solve, annotations } => {
            let solved = solve.solve()?;
            let refs: Vec<HandAnnotation> = read_json(&annotations)?;
            let rate = match_rate(&solved.betas, &refs)?;
            println!("{rate:.4}");
            Ok(())
        }
        Command::TrainGrade {
            data,
            dev,
            config,
            out,
            history,
        } => {
            let config: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            let load = |p: &Path| -> Result<Vec<LabeledSequence>> {
                let records: Vec<EmbeddedRecord> = read_json(p)?;
                let total = records.len();
                let kept: Vec<LabeledSequence> =
                    records.iter().filter_map(LabeledSequence::from_record).collect();
                if kept.len() < total {
                    eprintln!("{}: skipped {} records without a V4-V13 grade", p.display(), total - kept.len());
                }
                Ok(kept)
            };
            let train_set = load(&data)?;
            let dev_set = dev.as_deref().map(load).transpose()?;
            let epochs = config.epochs;
            let (model, hist) = train_with_callback(&train_set, dev_set.as_deref(), &config, |e| {
                if e.epoch % 10 == 0 || e.epoch + 1 == epochs || e.reweighted.is_some() {
                    let dev = e
                        .dev_accuracy
                        .map_or_else(String::new, |a| format!(" dev_acc {a:.4}"));
                    let mark = if e.reweighted.is_some() { " (reweighted)" } else { "" };
                    eprintln!(
                        "epoch {:>4} loss {:.4} acc {:.4}{dev}{mark}",
                        e.epoch, e.train_loss, e.train_accuracy
                    );
                }
            })?;
            model.save(&out)?;
            if let Some(h) = history {
                write_json(Some(&h), &hist)?;
            }
            Ok(())
        }
        Command::Predict { model, solve, out } => {
            let model = GradeNet::load(&model)?;
            let solved = solve.solve()?;
            let mut preds = Vec::with_capacity(solved.betas.len());
            for seq in &solved.betas {
                let (grade, dist) = model.predict(&embed_sequence(seq, &solved.table))?;
                preds.push(Prediction {
                    problem_id: seq.problem.id_or_empty().to_string(),
                    predicted_grade: grade.to_string(),
                    probs: dist.probs.to_vec(),
                });
            }
            write_json(out.as_deref(), &preds)
        }
        Command::TrainGen { solve, config, out } => {
            let config: GenTrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => GenTrainConfig::default(),
            };
            let solved = solve.solve()?;
            let corpus: Vec<_> = solved.betas.iter().filter_map(|s| tokenize(s).ok()).collect();
            eprintln!("training on {} token sequences", corpus.len());
            let (model, hist) = train_generator(&corpus, &config)?;
            if let Some(last) = hist.epoch_losses.last() {
                eprintln!("final token loss {last:.4}");
            }
            model.save(&out)?;
            Ok(())
        }
        Command::Generate {
            model,
            features,
            params,
            grade_model,
            count,
            temperature,
            seed,
            attempts,
            out,
        } => {
            let generator = Generator::load(&model)?;
            let grader = grade_model.as_deref().map(GradeNet::load).transpose()?;
            let table = load_table(features.as_deref())?;
            let params = load_params(params.as_deref())?;
            let cfg = GenConfig {
                temperature,
                seed,
                ..Default::default()
            };
            let filter = FilterConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut items = Vec::new();
            for _ in 0..count.saturating_mul(attempts) {
                if items.len() == count {
                    break;
                }
                let Ok(route) = sample_route(&generator, &cfg, &table, &params, &[], &mut rng) else {
                    continue;
                };
                if !self_consistency_filter(&route.problem, &route.beta, &table, &params, &filter).accepted {
                    continue;
                }
                let mut problem = route.problem.clone();
                problem.id = Some(format!("gen-{seed}-{}", items.len()));
                let mut beta = route.beta.clone();
                beta.problem = problem.clone();
                let predicted_grade = match &grader {
                    Some(g) => Some(g.predict(&embed_sequence(&beta, &table))?.0.to_string()),
                    None => None,
                };
                items.push(Generated {
                    problem: problem.to_record(),
                    beta: beta.to_record(),
                    predicted_grade,
                });
            }
            if items.len() < count {
                eprintln!("only {} of {count} routes passed the filter", items.len());
            }
            write_json(out.as_deref(), &items)
        }
        Command::Ingest {
            input,
            out,
            failures,
        } => {
            let records = load_dataset(&input)?;
            let (problems, failed) = ingest(&records);
            eprintln!("ingested {} problems, {} unreadable", problems.len(), failed.len());
            write_problems(&out, &problems)?;
            if let Some(f) = failures {
                write_json(Some(&f), &failed)?;
            }
            Ok(())
        }
        Command::Filter {
            input,
            out,
            report,
            rules,
        } => {
            let rules: ValidationRules = match rules {
                Some(p) => read_json(&p)?,
                None => ValidationRules::default(),
            };
            let (kept, rep) = filter_dataset(read_problems(&input)?, &rules);
            eprintln!("{}", serde_json::to_string(&rep)?);
            write_problems(&out, &kept)?;
            if let Some(r) = report {
                write_json(Some(&r), &rep)?;
            }
            Ok(())
        }
        Command::Split {
            input,
            seed,
            out_dir,
            no_stratify,
        } => {
            let spec = SplitSpec {
                seed,
                stratify: !no_stratify,
                ..Default::default()
            };
            let parts = split(&read_problems(&input)?, &spec)?;
            std::fs::create_dir_all(&out_dir)?;
            for (name, set) in [("train", &parts.train), ("dev", &parts.dev), ("test", &parts.test)] {
                write_problems(&out_dir.join(format!("{name}.json")), set)?;
                eprintln!("{name}: {}", set.len());
            }
            Ok(())
        }
        Command::Eval { pred, truth, out } => {
            let preds: Vec<Prediction> = read_json(&pred)?;
            let by_id: BTreeMap<&str, &Prediction> =
                preds.iter().map(|p| (p.problem_id.as_str(), p)).collect();
            let mut dists = Vec::new();
            let mut grades = Vec::new();
            for p in read_problems(&truth)? {
                let Some(grade) = p.grade else { continue };
                let Some(pr) = by_id.get(p.id_or_empty()) else {
                    bail!("no prediction for problem {:?}", p.id_or_empty());
                };
                if pr.probs.len() != 10 {
                    bail!("prediction for {} has {} probabilities", pr.problem_id, pr.probs.len());
                }
                let mut probs = [0.0; 10];
                probs.copy_from_slice(&pr.probs);
                dists.push(GradeDistribution { probs });
                grades.push(grade);
            }
            let report = evaluate(&dists, &grades)?;
            let rendered = render_report(&report);
            let with_ext = |ext: &str| {
                let mut s = out.clone().into_os_string();
                s.push(format!(".{ext}"));
                PathBuf::from(s)
            };
            std::fs::write(with_ext("txt"), &rendered.text)?;
            std::fs::write(with_ext("json"), &rendered.record)?;
            std::fs::write(with_ext("svg"), &rendered.svg)?;
            print!("{}", rendered.text);
            Ok(())
        }
        Command::Serve { config, bind } => {
            let mut config = match config {
                Some(p) => betaboard_service::ServiceConfig::load(&p)?,
                None => betaboard_service::ServiceConfig::default(),
            };
            if let Some(b) = bind {
                config.bind = b;
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(betaboard_service::serve(config))?;
            Ok(())
        }
    }
}
