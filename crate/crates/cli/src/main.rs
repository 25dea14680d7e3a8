use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use proxsep_core::config::RunConfig;
use proxsep_core::corpus::{synthesize_corpus, CorpusIndex, Partition, SyntheticCorpusConfig};
use proxsep_core::eval::{evaluate, report, scatter_csv, EvalRecord, GroupBy};
use proxsep_core::io::{read_jsonl, write_jsonl};
use proxsep_core::model::{log_path, train, ManifestSource, TrainConfig};
use proxsep_core::pipeline::{export_rirs, separate_dataset, MaskSource, MaskSpec};
use proxsep_core::sampler::{generate_rooms, RoomRecord};
use proxsep_core::scene::{generate_dataset, ManifestRow};

/// Distance-based sound separation: simulate rooms, render reverberant
/// scenes, separate near from far speech and score the result.
#[derive(Parser)]
#[command(name = "proximity-sep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => {
                RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let seed = self.seed.unwrap_or(cfg.seed);
        Ok(cfg.with_seed(seed))
    }
}

#[derive(Args)]
struct Workers {
    /// Parallel workers; results do not depend on this.
    #[arg(long, env = "PROXSEP_WORKERS")]
    workers: Option<usize>,
}

impl Workers {
    fn get(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample rooms and source placements to a JSON Lines file.
    GenRooms {
        #[command(flatten)]
        common: Common,
        /// Near/far distance threshold in metres.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        /// Force this percentage of scenes to have a silent target.
        #[arg(long)]
        prefilter_pct: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export every source's impulse response (WAV plus JSON sidecar).
    RenderRir {
        #[command(flatten)]
        common: Common,
        /// Room records written by gen-rooms.
        #[arg(long)]
        scene: PathBuf,
        /// Only export the first N records.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        workers: Workers,
    },
    /// Render mixtures and near/far targets from room records and a corpus.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rooms: PathBuf,
        /// Corpus directory holding index.jsonl.
        #[arg(long)]
        corpus: PathBuf,
        /// Restrict speakers to one corpus partition.
        #[arg(long)]
        partition: Option<Partition>,
        /// Source presence probability.
        #[arg(long)]
        spp: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        workers: Workers,
    },
    /// Apply oracle or model masks to every mixture of a manifest.
    Separate {
        #[arg(long)]
        manifest: PathBuf,
        /// oracle-ratio, oracle-binary or model:<checkpoint>
        #[arg(long)]
        mask: MaskSpec,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        workers: Workers,
    },
    /// Train the mask estimator on a rendered dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Start from a named preset (desk or large) instead of the config.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Final checkpoint; the log and snapshots are written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score estimates against a manifest and write a bucketed report.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-target scatter of input SI-SDR against improvement.
        #[arg(long)]
        scatter: Option<PathBuf>,
        /// Per-scene records as JSON Lines.
        #[arg(long)]
        records: Option<PathBuf>,
        /// n_near, spp or none
        #[arg(long, default_value = "n_near")]
        group_by: GroupBy,
        #[command(flatten)]
        workers: Workers,
    },
    /// Rebuild a report from saved per-scene records.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "n_near")]
        group_by: GroupBy,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic speech-like corpus for testing without real data.
    SynthCorpus {
        #[command(flatten)]
        common: Common,
        /// Speakers per partition as train,validation,test.
        #[arg(long, value_delimiter = ',')]
        speakers: Option<Vec<usize>>,
        #[arg(long)]
        utterances: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenRooms {
            common,
            threshold,
            count,
            prefilter_pct,
            out,
        } => {
            let cfg = common.load()?;
            let threshold = threshold.unwrap_or(cfg.threshold);
            let records = generate_rooms(
                &cfg.sampler,
                threshold,
                count.unwrap_or(cfg.count),
                prefilter_pct.or(cfg.prefilter_pct),
            )?;
            write_jsonl(&out, &records)?;
            eprintln!("wrote {} room records to {}", records.len(), out.display());
        }
        Command::RenderRir {
            common,
            scene,
            count,
            out,
            workers,
        } => {
            let cfg = common.load()?;
            let mut records: Vec<RoomRecord> = read_jsonl(&scene)?;
            if let Some(n) = count {
                records.truncate(n);
            }
            let written = export_rirs(&records, &cfg.build.rir, &out, workers.get())?;
            eprintln!(
                "wrote {} impulse responses to {}",
                written.len(),
                out.display()
            );
        }
        Command::Render {
            common,
            rooms,
            corpus,
            partition,
            spp,
            threshold,
            count,
            out,
            workers,
        } => {
            let cfg = common.load()?;
            let records: Vec<RoomRecord> = read_jsonl(&rooms)?;
            let Some(first) = records.first() else {
                bail!("{} holds no room records", rooms.display());
            };
            let mut dataset = cfg.dataset();
            dataset.threshold = threshold.unwrap_or(first.threshold);
            dataset.spp = spp.unwrap_or(cfg.spp);
            dataset.count = count.unwrap_or(records.len());
            let index = CorpusIndex::load(&corpus)?;
            let index = match partition {
                Some(p) => index.partition(p),
                None => index,
            };
            let rows = generate_dataset(&records, &index, &dataset, &out, workers.get())?;
            eprintln!("rendered {} scenes to {}", rows.len(), out.display());
        }
        Command::Separate {
            manifest,
            mask,
            out,
            workers,
        } => {
            let rows: Vec<ManifestRow> = read_jsonl(&manifest)?;
            let source = MaskSource::resolve(&mask)?;
            let written =
                separate_dataset(&rows, &parent_dir(&manifest), &source, &out, workers.get())?;
            eprintln!(
                "wrote {} estimate pairs to {}",
                written.len(),
                out.display()
            );
        }
        Command::Train {
            common,
            manifest,
            preset,
            steps,
            batch_size,
            learning_rate,
            out,
        } => {
            let cfg = common.load()?;
            let mut tc = match preset {
                Some(name) => TrainConfig {
                    seed: cfg.train.seed,
                    ..TrainConfig::preset(&name)?
                },
                None => cfg.train.clone(),
            };
            tc.model.seed = cfg.train.model.seed;
            tc.steps = steps.unwrap_or(tc.steps);
            tc.batch_size = batch_size.unwrap_or(tc.batch_size);
            tc.learning_rate = learning_rate.unwrap_or(tc.learning_rate);
            let data = ManifestSource::open(&manifest)?;
            let outcome = train(&tc, &data, Some(&out))?;
            if let Some(last) = outcome.log.last() {
                eprintln!("step {} loss {:.4}", last.step, last.loss);
            }
            eprintln!(
                "checkpoint {} (log {})",
                out.display(),
                log_path(&out).display()
            );
        }
        Command::Eval {
            manifest,
            estimates,
            out,
            scatter,
            records,
            group_by,
            workers,
        } => {
            let rows: Vec<ManifestRow> = read_jsonl(&manifest)?;
            let recs = evaluate(&rows, &parent_dir(&manifest), &estimates, workers.get())?;
            if let Some(p) = records {
                write_jsonl(&p, &recs)?;
            }
            if let Some(p) = scatter {
                write_text(&p, &scatter_csv(&recs))?;
            }
            let table = report(&recs, group_by)?;
            write_text(&out, &table.to_csv())?;
            print!("{}", table.to_csv());
        }
        Command::Report {
            records,
            group_by,
            out,
        } => {
            let recs: Vec<EvalRecord> = read_jsonl(&records)?;
            let table = report(&recs, group_by)?;
            write_text(&out, &table.to_csv())?;
            print!("{}", table.to_csv());
        }
        Command::SynthCorpus {
            common,
            speakers,
            utterances,
            out,
        } => {
            let cfg = common.load()?;
            let mut sc: SyntheticCorpusConfig = cfg.corpus.clone();
            if let Some(s) = speakers {
                let Ok(s) = <[usize; 3]>::try_from(s.as_slice()) else {
                    bail!("--speakers takes three counts: train,validation,test");
                };
                sc.speakers = s;
            }
            sc.utterances_per_speaker = utterances.unwrap_or(sc.utterances_per_speaker);
            let corpus = synthesize_corpus(&sc)?;
            let index = corpus.write(&out)?;
            eprintln!(
                "wrote {} utterances to {}",
                index.entries.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn rejects_unknown_flag() {
        let r = Cli::try_parse_from([
            "proximity-sep",
            "report",
            "--records",
            "r",
            "--out",
            "o",
            "--bogus",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn parses_mask_and_group() {
        let cli = Cli::try_parse_from([
            "proximity-sep",
            "separate",
            "--manifest",
            "m.jsonl",
            "--mask",
            "model:x.ckpt",
            "--out",
            "est",
        ])
        .unwrap();
        match cli.command {
            Command::Separate { mask, .. } => assert_eq!(mask, MaskSpec::Model("x.ckpt".into())),
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from([
            "proximity-sep",
            "report",
            "--records",
            "r",
            "--out",
            "o",
            "--group-by",
            "x"
        ])
        .is_err());
    }
}
