use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use picdiar::annotation::{parse_rttm, parse_uem, Annotation};
use picdiar::metrics::ScoringOptions;
use picdiar::pipeline::{
    self, read_domain_map, read_id_list, route, run_corpus, score_corpus, Context, PipelineConfig, RunOptions,
    ScoringKind,
};
use picdiar::synthetic::{generate_corpus, write_corpus, SynthConfig};

#[derive(Parser)]
#[command(name = "picdiar", version, about = "Speaker diarization over precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    Full,
    Core,
}

#[derive(Args)]
struct SubsetArgs {
    /// Recordings entering the corpus total.
    #[arg(long, value_enum, default_value = "full")]
    subset: Subset,
    /// Recording ids of the core subset, one per line.
    #[arg(long)]
    core_list: Option<PathBuf>,
    /// `<recording> <domain>` lines for a per-domain table.
    #[arg(long)]
    domain_map: Option<PathBuf>,
}

impl SubsetArgs {
    fn run_options(&self, workers: usize) -> Result<RunOptions> {
        let subset = match (self.subset, &self.core_list) {
            (Subset::Full, _) => None,
            (Subset::Core, Some(path)) => Some(read_id_list(path)?),
            (Subset::Core, None) => bail!("--subset core needs --core-list"),
        };
        let domains = self.domain_map.as_deref().map(read_domain_map).transpose()?;
        Ok(RunOptions {
            workers,
            subset,
            domains,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the bandwidth route of every recording.
    Route {
        #[arg(long)]
        config: PathBuf,
    },
    /// Diarize every recording and score it when references are configured.
    Diarize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Worker threads; 0 picks the number of cores.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Overrides the seed recorded in the manifest.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        subset: SubsetArgs,
    },
    /// Score hypothesis RTTMs against references.
    Score {
        /// Reference RTTM.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis RTTM file or directory of RTTM files.
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        uem: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        collar: f64,
        /// Exclude frames with more than one reference speaker.
        #[arg(long)]
        skip_overlap: bool,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        subset: SubsetArgs,
    },
    /// Generate a synthetic corpus with a ready-to-run config.toml.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        recordings: usize,
        #[arg(long, default_value_t = 0)]
        nb_recordings: usize,
        #[arg(long, default_value_t = 3)]
        min_speakers: usize,
        #[arg(long, default_value_t = 5)]
        max_speakers: usize,
        #[arg(long, default_value_t = 300.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.0)]
        overlap: f64,
        #[arg(long, value_enum, default_value = "plda")]
        scoring: Scoring,
    },
    /// Re-score the hypotheses of a previous `diarize` run.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Output directory of the earlier run.
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        subset: SubsetArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scoring {
    Cosine,
    Plda,
}

fn read_rttm_file(path: &Path) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_rttm(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_hypotheses(path: &Path) -> Result<Vec<Annotation>> {
    if !path.is_dir() {
        return read_rttm_file(path);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "rttm"));
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_rttm_file(&f)?);
    }
    Ok(out)
}

fn by_id(list: Vec<Annotation>) -> BTreeMap<String, Annotation> {
    list.into_iter().map(|a| (a.recording_id().to_string(), a)).collect()
}

fn score_files(
    hyps: &[Annotation],
    refs: &BTreeMap<String, Annotation>,
    uem: Option<&Path>,
    options: &ScoringOptions,
    run: &RunOptions,
    output: &Path,
) -> Result<()> {
    let uem = match uem {
        Some(p) => parse_uem(&fs::read_to_string(p)?)?
            .into_iter()
            .map(|r| (r.recording_id().to_string(), r))
            .collect(),
        None => BTreeMap::new(),
    };
    let hyp_refs: Vec<&Annotation> = hyps.iter().collect();
    let Some(scores) = score_corpus(&hyp_refs, refs, &uem, options, run)? else {
        bail!("no hypothesis recording has a reference");
    };
    pipeline::write_reports(&scores, output)?;
    print!("{}", pipeline::format_report(&scores));
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Route { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let ctx = Context::load(&cfg)?;
            let mut any = false;
            for rec in ctx.recordings() {
                match route(&cfg, &ctx, &rec) {
                    Ok(band) => {
                        println!("{rec}\t{band}");
                        any = true;
                    }
                    Err(e) => println!("{rec}\tfailed: {e}"),
                }
            }
            Ok(any)
        }
        Command::Diarize {
            config,
            output,
            workers,
            seed,
            subset,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let options = subset.run_options(workers)?;
            let result = run_corpus(&cfg, &options)?;
            pipeline::write_outputs(&result, &output)?;
            if let Some(scores) = &result.scores {
                print!("{}", pipeline::format_report(scores));
            }
            eprintln!(
                "{} of {} recordings succeeded; outputs in {}",
                result.succeeded(),
                result.outcomes.len(),
                output.display()
            );
            Ok(result.succeeded() > 0)
        }
        Command::Score {
            reference,
            hyp,
            uem,
            collar,
            skip_overlap,
            output,
            subset,
        } => {
            let refs = by_id(read_rttm_file(&reference)?);
            let hyps = read_hypotheses(&hyp)?;
            let options = ScoringOptions {
                collar,
                score_overlap: !skip_overlap,
            };
            score_files(&hyps, &refs, uem.as_deref(), &options, &subset.run_options(0)?, &output)?;
            Ok(true)
        }
        Command::Synth {
            output,
            seed,
            recordings,
            nb_recordings,
            min_speakers,
            max_speakers,
            duration,
            overlap,
            scoring,
        } => {
            let cfg = SynthConfig {
                recordings,
                nb_recordings,
                min_speakers,
                max_speakers,
                duration,
                overlap_fraction: overlap,
                scoring: match scoring {
                    Scoring::Cosine => ScoringKind::Cosine,
                    Scoring::Plda => ScoringKind::Plda,
                },
                ..SynthConfig::default()
            };
            let corpus = generate_corpus(&cfg, seed)?;
            fs::create_dir_all(&output)?;
            write_corpus(&corpus, &cfg, seed, &output)?;
            eprintln!(
                "wrote {} recordings and {}",
                corpus.recordings.len(),
                output.join("config.toml").display()
            );
            Ok(true)
        }
        Command::Report { config, output, subset } => {
            let cfg = PipelineConfig::load(&config)?;
            let Some(reference) = &cfg.paths.reference else {
                bail!("the configuration has no reference RTTM");
            };
            let refs = by_id(read_rttm_file(reference)?);
            let hyps = read_hypotheses(&output.join("hyp"))?;
            let options = ScoringOptions {
                collar: cfg.metrics.collar,
                score_overlap: cfg.metrics.score_overlap,
            };
            let run = subset.run_options(0)?;
            score_files(&hyps, &refs, cfg.paths.uem.as_deref(), &options, &run, &output)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
