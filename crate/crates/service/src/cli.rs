use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use dial_core::assess::{assess_model_with_maps, load_refs, AssessmentReport, EvalCase};
use dial_core::dial::{
    finetune_round, generate_corpus, oracle_round, run_experiment, run_initial_round, satisfy,
    submit_corrections, CorpusSpec, CorrectionPolicy, DialConfig, ExperimentConfig,
    FinetuneOptions, LoopVerdict, Workspace,
};
use dial_core::dmmn::Checkpoint;
use dial_core::inference::segment_slide;
use dial_core::wsi::load_slide;
use dial_core::LabelMask;

use crate::app::{router, App};
use crate::backend::{assess_workspace, EngineBackend};
use crate::config::ServiceConfig;

type CliResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Parser, Debug)]
#[command(
    name = "dial",
    version,
    about = "Interactive osteosarcoma segmentation rounds"
)]
pub struct Cli {
    /// Workspace directory.
    #[arg(
        short,
        long,
        global = true,
        env = "DIAL_WORKSPACE",
        default_value = "."
    )]
    pub workspace: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Create a workspace over a generated synthetic corpus.
    Init {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        train_cases: usize,
        #[arg(long, default_value_t = 8)]
        test_cases: usize,
        #[arg(long, default_value_t = 2048)]
        slide_size: usize,
        #[arg(long, default_value_t = 0.10)]
        annotation_fraction: f64,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train the initial model on the round-0 annotation.
    Train,
    /// Segment one slide directory with a checkpoint.
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Submit correction masks (`<slide_id>.mask` files) for the current round.
    Correct {
        #[arg(long)]
        from: PathBuf,
    },
    /// Write simulated corrections where the active model disagrees with truth.
    Oracle {
        #[arg(long)]
        budget: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune on the submitted corrections.
    Finetune {
        #[arg(long)]
        weighting: CorrectionPolicy,
        /// Finetune from this model instead of the active one.
        #[arg(long)]
        parent: Option<String>,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Declare the active model good enough.
    Satisfy,
    /// Print the round state.
    Status,
    /// Assess a checkpoint on external cases, or every workspace model when
    /// no checkpoint is given.
    Assess {
        #[arg(long, requires_all = ["cases", "refs"])]
        checkpoint: Option<PathBuf>,
        /// Directory of slide directories; cases group by their manifests.
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Serve the HTTP interface.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the full closed-loop experiment in a fresh directory.
    Experiment {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_progress(fraction: f64, message: &str) {
    eprintln!("[{:5.1}%] {message}", fraction * 100.0);
}

pub fn run(cli: Cli) -> CliResult {
    let root = cli.workspace;
    match cli.command {
        Command::Init {
            seed,
            train_cases,
            test_cases,
            slide_size,
            annotation_fraction,
            workers,
        } => {
            let spec = CorpusSpec {
                train_cases,
                test_cases,
                slide_size,
                annotation_fraction,
                ..CorpusSpec::new(seed)
            };
            let mut config = DialConfig::test_scale(seed);
            if let Some(w) = workers {
                config.workers = w;
            }
            let ws = Workspace::create(&root, config, &generate_corpus(&spec)?)?;
            println!(
                "created {} with {} training and {} test slides",
                ws.root().display(),
                ws.corpus().train.len(),
                ws.corpus().test.len()
            );
        }
        Command::Train => {
            let ws = Workspace::open(&root)?;
            let state = run_initial_round(&ws, ws.load_state()?, &mut print_progress)?;
            println!("trained {}", state.active.unwrap_or_default());
        }
        Command::Segment {
            checkpoint,
            slide,
            out,
            workers,
        } => {
            let (ckpt, hash) = Checkpoint::load(&checkpoint)?;
            let slide = load_slide(&slide)?;
            let map = segment_slide(&ckpt.model, &hash, &slide, workers)?;
            map.save(&out)?;
            println!("{} {:?}", map.slide_id, map.counts());
        }
        Command::Correct { from } => {
            let ws = Workspace::open(&root)?;
            let masks = read_mask_dir(&from)?;
            let n = masks.len();
            let state = submit_corrections(&ws, ws.load_state()?, masks, false)?;
            println!(
                "submitted {n} masks for round {}",
                state.pending.unwrap_or_default()
            );
        }
        Command::Oracle { budget, out } => {
            let ws = Workspace::open(&root)?;
            let masks = oracle_round(&ws, &ws.load_state()?, budget)?;
            std::fs::create_dir_all(&out)?;
            for m in &masks {
                m.save(&out.join(format!("{}.mask", m.slide_id)))?;
            }
            let px: u64 = masks.iter().map(|m| m.labeled_count()).sum();
            println!("wrote {} masks, {px} pixels", masks.len());
        }
        Command::Finetune {
            weighting,
            parent,
            tag,
        } => {
            let ws = Workspace::open(&root)?;
            let opts = FinetuneOptions { parent, tag };
            let state =
                finetune_round(&ws, ws.load_state()?, weighting, &opts, &mut print_progress)?;
            println!("trained {}", state.active.unwrap_or_default());
        }
        Command::Satisfy => {
            let ws = Workspace::open(&root)?;
            let state = satisfy(&ws, ws.load_state()?)?;
            println!("{:?}", state.status);
        }
        Command::Status => {
            let ws = Workspace::open(&root)?;
            let state = ws.load_state()?;
            println!("status: {:?}", state.status);
            println!("round: {}", state.round_index);
            if let Some(k) = state.pending {
                println!("pending corrections: round {k}");
            }
            println!("active: {}", state.active.as_deref().unwrap_or("-"));
            for m in &state.models {
                println!(
                    "  {:<8} round {} parent {:<8} hash {}",
                    m.tag,
                    m.round,
                    m.parent.as_deref().unwrap_or("-"),
                    &m.hash[..12.min(m.hash.len())]
                );
            }
        }
        Command::Assess {
            checkpoint: Some(checkpoint),
            cases: Some(cases),
            refs: Some(refs),
            out,
            workers,
        } => {
            let (ckpt, hash) = Checkpoint::load(&checkpoint)?;
            let cases = read_case_dir(&cases)?;
            let refs = load_refs(&refs)?;
            let (report, _) = assess_model_with_maps(&ckpt.model, &hash, &cases, workers)?;
            let report = AssessmentReport::new(report.model_hash, report.cases, &refs);
            report.write(&out)?;
            println!("{}", report.to_markdown());
        }
        Command::Assess { .. } => {
            let ws = Workspace::open(&root)?;
            let cmp = assess_workspace(&ws, &ws.load_state()?, &mut print_progress)?;
            println!("{}", cmp.to_markdown());
        }
        Command::Serve { config } => serve(root, config)?,
        Command::Experiment { seed, out } => {
            let report = run_experiment(
                &out,
                &ExperimentConfig::test_scale(seed),
                &mut print_progress,
            )?;
            println!("{}", report.comparison.to_markdown());
            let v = LoopVerdict::of(&report);
            println!(
                "double helps: {}, no worse than Model1: {}",
                v.double_helps, v.no_worse_than_model1
            );
        }
    }
    Ok(())
}

fn read_mask_dir(dir: &Path) -> Result<Vec<LabelMask>, Box<dyn std::error::Error>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "mask"));
    paths.sort();
    let mut masks = Vec::new();
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or("mask file name is not UTF-8")?;
        masks.push(LabelMask::load(&p, id)?);
    }
    Ok(masks)
}

fn read_case_dir(dir: &Path) -> Result<Vec<EvalCase>, Box<dyn std::error::Error>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.join("manifest.json").exists());
    paths.sort();
    let mut by_case: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for p in paths {
        let slide = load_slide(&p)?;
        by_case
            .entry(slide.case_id.clone())
            .or_default()
            .push(slide);
    }
    if by_case.is_empty() {
        return Err(format!("no slide directories under {}", dir.display()).into());
    }
    Ok(by_case
        .into_iter()
        .map(|(case_id, slides)| EvalCase {
            case_id,
            slides,
            r_path: None,
        })
        .collect())
}

fn serve(root: PathBuf, config: Option<PathBuf>) -> CliResult {
    let mut cfg = match config {
        Some(p) => ServiceConfig::load(&p)?,
        None => ServiceConfig {
            workspace: root,
            ..ServiceConfig::default()
        },
    };
    cfg = cfg.from_env()?;
    let ws = Workspace::open(&cfg.workspace)?;
    let app = App::open(ws, Arc::new(EngineBackend))?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(cfg.http_workers.max(1))
        .enable_all()
        .build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((cfg.host.as_str(), cfg.port)).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(app))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}
