use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Parser, Subcommand};

use narrative_engine::cluster::{ClusterId, Timestep};
use narrative_engine::embed::{EmbeddingCache, EmbeddingGateway, EmbeddingProvider, HashingEmbedder, HttpEmbeddingProvider};
use narrative_engine::graph::{self, EdgeRecord, Label, Partition, ReferenceGraph};
use narrative_engine::ingest;
use narrative_engine::narrative::{Decision, NarrativeDefinition};
use narrative_engine::pipeline::{run_pipeline, RunOptions, RunStatus, ThemeRecord, TrendReport, THEME_ASSIGNMENTS, THEME_DICTIONARY};
use narrative_engine::service::{self, load_view, AppState};
use narrative_engine::stats::{build_series_pair, scan_associations, NarrativePost, ScanConfig, SeriesPair};
use narrative_engine::synth::{synthetic_units, MixtureStream, TableEmbedder};
use narrative_engine::themes::{
    self, calibrate_confidence, classify_all, propose_themes, HttpClassifier, HttpGenerator, ThemeAssignment, ThemeDictionary,
};
use narrative_engine::workspace::{read_json, write_json, ReviewMode, Workspace, WorkspaceConfig};

const PROVIDER_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Parser)]
#[command(name = "narrative", version, about = "Story clustering and narrative tracking over a workspace")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Ws {
    /// Workspace directory.
    #[arg(short, long, env = "NARRATIVE_WORKSPACE", default_value = ".")]
    workspace: PathBuf,
}

impl Ws {
    fn open(&self) -> Result<Workspace> {
        Workspace::open(&self.workspace).with_context(|| format!("opening workspace {}", self.workspace.display()))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Segment and bucket a JSONL post corpus into a (new) workspace.
    Ingest {
        #[command(flatten)]
        ws: Ws,
        /// JSONL posts: {"id","channel","date","text","fwd_from","refs"}.
        posts: PathBuf,
        /// Corpus start (RFC 3339); defaults to the earliest post.
        #[arg(long)]
        start: Option<DateTime<Utc>>,
        #[arg(long, default_value_t = 7)]
        window_days: u32,
        /// Embedding provider: `hash` (offline) or `http` (EMBED_URL).
        #[arg(long, default_value = "hash")]
        provider: String,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long)]
        blocking: bool,
    },
    /// Embed every unit into the workspace cache.
    Embed {
        #[command(flatten)]
        ws: Ws,
    },
    /// Fit story clusters through a timestep and print cluster counts.
    Cluster {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        to: Option<Timestep>,
    },
    /// Print a timestep's trend report.
    Trends {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        timestep: Timestep,
        #[arg(long)]
        json: bool,
    },
    /// Define narratives and review seed candidates.
    #[command(subcommand)]
    Narrative(NarrativeCmd),
    /// Propose, classify and score themes.
    #[command(subcommand)]
    Themes(ThemesCmd),
    /// Narrative/contributor association scans.
    #[command(subcommand)]
    Stats(StatsCmd),
    /// Reference graph and community labelling.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Serve the review API.
    Serve {
        #[command(flatten)]
        ws: Ws,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Run (or resume) the full per-timestep pipeline.
    Run {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        from: Option<Timestep>,
        #[arg(long)]
        to: Option<Timestep>,
        /// Classify narrative units against the theme dictionary (CLASSIFY_URL).
        #[arg(long)]
        classify: bool,
        #[arg(long, default_value_t = 8)]
        max_in_flight: usize,
        /// Populate an empty workspace with a synthetic stream first.
        #[arg(long)]
        synthetic: bool,
        /// Seed of the synthetic stream.
        #[arg(long, default_value_t = 0, requires = "synthetic")]
        seed: u64,
        /// Points per synthetic timestep.
        #[arg(long, default_value_t = 200, requires = "synthetic")]
        per_step: usize,
    },
}

#[derive(Subcommand)]
enum NarrativeCmd {
    /// Define a narrative seeded on a story cluster.
    Init {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        id: String,
        #[arg(long)]
        seed: ClusterId,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, num_args = 2, value_names = ["LOW", "HIGH"])]
        band: Option<Vec<f64>>,
        #[arg(long)]
        attach_threshold: Option<f64>,
        #[arg(long)]
        size_weighted: bool,
    },
    /// List seed candidates (pending by default).
    Enqueue {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "pending")]
        status: String,
    },
    /// Record a decision on a candidate (`<narrative>:<cluster>`).
    Decide {
        #[command(flatten)]
        ws: Ws,
        candidate: String,
        decision: Decision,
        #[arg(long, env = "USER")]
        reviewer: String,
    },
    /// Print the clusters attached at a timestep (latest by default).
    Attach {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        id: String,
        #[arg(long)]
        timestep: Option<Timestep>,
    },
    /// Per-timestep unit counts, raw and max-normalized.
    Series {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        id: String,
    },
}

#[derive(Subcommand)]
enum ThemesCmd {
    /// Generate dictionaries from narrative samples (GENERATE_URL).
    Propose {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        id: String,
        #[arg(long, default_value_t = themes::DEFAULT_DICTIONARY_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = 50)]
        samples: usize,
        /// Score each run's dictionary (CLASSIFY_URL) and keep the best.
        #[arg(long)]
        select: bool,
    },
    /// Classify all narrative units against the dictionary (CLASSIFY_URL).
    Classify {
        #[command(flatten)]
        ws: Ws,
        #[arg(long, default_value_t = 8)]
        max_in_flight: usize,
    },
    /// Theme coverage of the stored dictionary over stored assignments.
    Tcs {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Pick a confidence threshold from a labelled TSV (score<TAB>0|1).
    Calibrate {
        labels: PathBuf,
        #[arg(long, default_value_t = themes::DEFAULT_RECALL_FLOOR)]
        recall_floor: f64,
    },
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Lagged Spearman + Granger scan of contributing channels.
    Scan {
        #[command(flatten)]
        ws: Ws,
        #[arg(long)]
        id: String,
        /// Restrict narrative posts to units carrying this theme.
        #[arg(long)]
        theme: Option<String>,
        #[arg(long, default_value_t = 1)]
        min_lag: usize,
        #[arg(long, default_value_t = 7)]
        max_lag: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Build the channel reference graph from JSONL posts.
    Build {
        posts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propagate community labels from seed channels (TSV channel<TAB>label).
    Propagate {
        edges: PathBuf,
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = graph::DEFAULT_MAX_ITERS)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Audit sample of channels from one label class.
    Sample {
        partition: PathBuf,
        #[arg(long)]
        label: Label,
        #[arg(long, default_value_t = graph::DEFAULT_AUDIT_SAMPLE)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn provider(ws: &Workspace) -> Result<Box<dyn EmbeddingProvider>> {
    let e = &ws.config().embedding;
    Ok(match e.provider.as_str() {
        "hash" => Box::new(HashingEmbedder::new(e.dim)),
        "http" => match &e.url {
            Some(url) => Box::new(HttpEmbeddingProvider::new(url.clone(), e.dim)),
            None => Box::new(HttpEmbeddingProvider::from_env(e.dim)?),
        },
        "synthetic" => Box::new(synthetic_provider(ws)?),
        other => bail!("unknown embedding provider {other:?} (expected hash or http)"),
    })
}

const SYNTH_STEPS: u32 = 15;
const SYNTH_DIM: usize = 32;

fn synthetic_batches(seed: u64, per_step: usize) -> Vec<Vec<narrative_engine::synth::SyntheticPoint>> {
    let mut stream = MixtureStream::new(5, SYNTH_DIM, 300.0, seed);
    (0..SYNTH_STEPS).map(|t| stream.batch(t, per_step)).collect()
}

/// Vectors for a synthetic workspace, regenerated from its stored units.
fn synthetic_provider(ws: &Workspace) -> Result<TableEmbedder> {
    let units = ws.read_units()?;
    let per_step = units.iter().filter(|u| u.timestep == 0).count();
    Ok(TableEmbedder::from_points(SYNTH_DIM, synthetic_batches(ws.config().seed, per_step).iter().flatten()))
}

fn init_synthetic(root: &Path, seed: u64, per_step: usize) -> Result<Workspace> {
    let start = "2022-02-24T00:00:00Z".parse()?;
    let mut cfg = WorkspaceConfig::new(start);
    cfg.embedding.provider = "synthetic".into();
    cfg.embedding.dim = SYNTH_DIM;
    cfg.seed = seed;
    let ws = Workspace::init(root, cfg)?;
    ws.write_units(&synthetic_units(&synthetic_batches(seed, per_step), start, 7))?;
    Ok(ws)
}

fn tsv(rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for r in rows {
        if let Err(e) = writeln!(out, "{}", r.join("\t")) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(e.into());
        }
    }
    Ok(())
}

fn narrative_posts(ws: &Workspace, id: &str, theme: Option<&str>) -> Result<(Vec<NarrativePost>, BTreeSet<String>, NaiveDate, NaiveDate)> {
    let view = load_view(ws)?;
    let n = view.narrative(id)?;
    let units = ws.read_units()?;
    let by_id: BTreeMap<&str, &ingest::DocUnit> = units.iter().map(|u| (u.unit_id.as_str(), u)).collect();
    let keep: Option<BTreeSet<String>> = match theme {
        None => None,
        Some(label) => {
            let dict: ThemeDictionary = read_json(&ws.path(THEME_DICTIONARY))?;
            let label = dict.get(label).with_context(|| format!("theme {label} not in dictionary"))?.label.clone();
            let records: Vec<ThemeRecord> = ws.read_jsonl(&ws.path(THEME_ASSIGNMENTS))?;
            let threshold = ws.config().theme_confidence;
            Some(
                records
                    .into_iter()
                    .filter(|r| r.scores.get(&label).is_some_and(|s| *s >= threshold))
                    .map(|r| r.unit_id)
                    .collect(),
            )
        }
    };
    let mut posts = Vec::new();
    for t in n.attached.keys() {
        for u in n.units_at(&view.state, *t) {
            if keep.as_ref().is_some_and(|k| !k.contains(u)) {
                continue;
            }
            if let Some(d) = by_id.get(u) {
                posts.push(NarrativePost {
                    post_id: d.post_id.clone(),
                    channel: d.channel_id.clone(),
                    date: d.timestamp.date_naive(),
                });
            }
        }
    }
    let channels = units.iter().map(|u| u.channel_id.clone()).collect();
    let start = units.iter().map(|u| u.timestamp.date_naive()).min().context("workspace has no units")?;
    let end = units.iter().map(|u| u.timestamp.date_naive()).max().context("workspace has no units")?;
    Ok((posts, channels, start, end))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Ingest {
            ws,
            posts,
            start,
            window_days,
            provider,
            dim,
            blocking,
        } => {
            let raw = ingest::read_posts(BufReader::new(File::open(&posts).with_context(|| posts.display().to_string())?))?;
            let start = match start {
                Some(s) => s,
                None => raw.iter().map(|p| p.timestamp).min().context("no posts")?,
            };
            let mut cfg = WorkspaceConfig::new(start);
            cfg.window_days = window_days;
            cfg.embedding.provider = provider;
            cfg.embedding.dim = dim;
            if blocking {
                cfg.review_mode = ReviewMode::Blocking;
            }
            let units = ingest::ingest(raw, start, cfg.window())?;
            let w = Workspace::init(&ws.workspace, cfg)?;
            w.write_units(&units)?;
            let steps = units.iter().map(|u| u.timestep).max().map_or(0, |m| m + 1);
            println!("{} units over {steps} timesteps → {}", units.len(), w.units_path().display());
        }
        Cmd::Embed { ws } => {
            let w = ws.open()?;
            let units = w.read_units()?;
            let gw = EmbeddingGateway::new(provider(&w)?, EmbeddingCache::open(w.embeddings_path())?)?
                .with_batch_size(w.config().embedding.batch_size);
            let texts: Vec<String> = units.into_iter().map(|u| u.text).collect();
            if !texts.is_empty() {
                gw.embed_batch(&texts)?;
            }
            gw.cache().flush()?;
            println!("{} cached vectors", gw.cache().len());
        }
        Cmd::Cluster { ws, to } => {
            let w = ws.open()?;
            let opts = RunOptions {
                to,
                max_in_flight: 1,
                ..Default::default()
            };
            run_pipeline(&w, provider(&w)?, None, &opts)?;
            let cp = w.latest_checkpoint()?.context("no timesteps processed")?;
            tsv([vec!["timestep".into(), "active".into(), "alive".into()]])?;
            tsv((0..=cp.timestep).map(|t| {
                vec![
                    t.to_string(),
                    cp.state.active().filter(|c| c.born_at <= t).count().to_string(),
                    cp.state.alive_at(t).count().to_string(),
                ]
            }))?;
        }
        Cmd::Trends { ws, timestep, json } => {
            let w = ws.open()?;
            let report: TrendReport = read_json(&w.trend_path(timestep))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                if let Some(note) = &report.note {
                    println!("# {note}");
                }
                tsv([vec!["rank".into(), "cluster".into(), "delta".into(), "growth".into(), "sample".into()]])?;
                tsv(report.trending.iter().map(|e| {
                    vec![
                        e.record.rank.to_string(),
                        e.record.cluster_id.to_string(),
                        e.record.delta.to_string(),
                        format!("{:.3}", e.record.growth),
                        e.samples.first().map(|s| s.text.clone()).unwrap_or_default(),
                    ]
                }))?;
            }
        }
        Cmd::Narrative(cmd) => narrative_cmd(cmd)?,
        Cmd::Themes(cmd) => themes_cmd(cmd)?,
        Cmd::Stats(StatsCmd::Scan {
            ws,
            id,
            theme,
            min_lag,
            max_lag,
            json,
        }) => {
            let w = ws.open()?;
            let (posts, corpus, start, end) = narrative_posts(&w, &id, theme.as_deref())?;
            let contributing: BTreeSet<&str> = posts.iter().map(|p| p.channel.as_str()).collect();
            let pairs = contributing
                .into_iter()
                .map(|ch| {
                    let (x, y) = build_series_pair(&posts, ch, &corpus, start, end)?;
                    Ok(SeriesPair {
                        theme: theme.clone(),
                        channel: ch.to_string(),
                        x,
                        y,
                    })
                })
                .collect::<narrative_engine::Result<Vec<_>>>()?;
            let cfg = ScanConfig {
                min_lag,
                max_lag,
                ..Default::default()
            };
            let report = scan_associations(&id, &pairs, &cfg);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_tsv());
            }
        }
        Cmd::Graph(cmd) => graph_cmd(cmd)?,
        Cmd::Serve { ws, addr } => {
            let w = ws.open()?;
            eprintln!("review API on http://{addr}");
            tokio::runtime::Runtime::new()?.block_on(service::serve(w, addr))?;
        }
        Cmd::Run {
            ws,
            from,
            to,
            classify,
            max_in_flight,
            synthetic,
            seed,
            per_step,
        } => {
            let w = if synthetic && !ws.workspace.join("config.json").exists() {
                init_synthetic(&ws.workspace, seed, per_step)?
            } else {
                ws.open()?
            };
            let classifier = if classify { Some(HttpClassifier::from_env(PROVIDER_TIMEOUT)?) } else { None };
            let opts = RunOptions {
                from,
                to,
                max_in_flight,
                ..Default::default()
            };
            let report = run_pipeline(&w, provider(&w)?, classifier.as_ref().map(|c| c as _), &opts)?;
            match report.status {
                RunStatus::Completed { last } => println!(
                    "processed {} timesteps (last: {})",
                    report.processed.len(),
                    last.map_or("none".into(), |t| t.to_string())
                ),
                RunStatus::Paused { at, pending } => {
                    println!("paused after timestep {at}: {pending} candidates await review")
                }
            }
        }
    }
    Ok(())
}

fn narrative_cmd(cmd: NarrativeCmd) -> Result<()> {
    match cmd {
        NarrativeCmd::Init {
            ws,
            id,
            seed,
            name,
            band,
            attach_threshold,
            size_weighted,
        } => {
            let w = ws.open()?;
            let view = load_view(&w)?;
            let cluster = view.state.cluster(seed).with_context(|| format!("no story cluster {seed}"))?;
            if !cluster.is_active() {
                bail!("cluster {seed} was merged; seed the surviving cluster instead");
            }
            let mut def = NarrativeDefinition::new(name.unwrap_or_else(|| id.clone()), seed);
            if let Some(b) = band {
                def.band = [b[0], b[1]];
            }
            if let Some(a) = attach_threshold {
                def.attach_threshold = a;
            }
            def.size_weighted = size_weighted;
            def.validate()?;
            w.save_narrative(&id, &def)?;
            println!("{}", w.narrative_path(&id).display());
        }
        NarrativeCmd::Enqueue { ws, id, status } => {
            let w = ws.open()?;
            let status: Decision = status.parse()?;
            let view = load_view(&w)?;
            let n = view.narrative(&id)?;
            tsv([vec!["candidate".into(), "discovered_at".into(), "via".into(), "similarity".into()]])?;
            tsv(n.candidates.iter().filter(|c| c.decision == status).map(|c| {
                vec![
                    c.id.clone(),
                    c.discovered_at.to_string(),
                    c.via.to_string(),
                    format!("{:.4}", c.similarity_to_frontier),
                ]
            }))?;
        }
        NarrativeCmd::Decide {
            ws,
            candidate,
            decision,
            reviewer,
        } => {
            let app = AppState::new(ws.open()?)?;
            let (record, _) = app.decide(&candidate, decision, &reviewer)?;
            println!("{}", serde_json::to_string(&record)?);
        }
        NarrativeCmd::Attach { ws, id, timestep } => {
            let w = ws.open()?;
            let view = load_view(&w)?;
            let n = view.narrative(&id)?;
            let t = timestep
                .or_else(|| n.attached.keys().next_back().copied())
                .context("no attachments yet")?;
            let set = n.attached.get(&t).with_context(|| format!("no attachments at timestep {t}"))?;
            for c in set {
                println!("{c}");
            }
        }
        NarrativeCmd::Series { ws, id } => {
            let w = ws.open()?;
            let view = load_view(&w)?;
            let series = view.narrative(&id)?.series(&view.state);
            let counts: Vec<usize> = series.iter().map(|(_, c)| *c).collect();
            let norm = narrative_engine::narrative::max_normalize(&counts);
            tsv([vec!["timestep".into(), "units".into(), "normalized".into()]])?;
            tsv(series.iter().zip(norm).map(|((t, c), n)| vec![t.to_string(), c.to_string(), format!("{n:.4}")]))?;
        }
    }
    Ok(())
}

fn narrative_texts(w: &Workspace, id: &str) -> Result<Vec<(String, String)>> {
    let view = load_view(w)?;
    let n = view.narrative(id)?;
    let units = w.read_units()?;
    let texts: BTreeMap<&str, &str> = units.iter().map(|u| (u.unit_id.as_str(), u.text.as_str())).collect();
    let mut out = Vec::new();
    for t in n.attached.keys() {
        for u in n.units_at(&view.state, *t) {
            out.push((u.to_string(), texts.get(u).copied().unwrap_or_default().to_string()));
        }
    }
    Ok(out)
}

fn themes_cmd(cmd: ThemesCmd) -> Result<()> {
    match cmd {
        ThemesCmd::Propose { ws, id, runs, samples, select } => {
            let w = ws.open()?;
            let generator = HttpGenerator::from_env(PROVIDER_TIMEOUT)?;
            let units = narrative_texts(&w, &id)?;
            if units.is_empty() {
                bail!("narrative {id} has no attached units yet");
            }
            let latest = load_view(&w)?.latest().unwrap_or(0);
            let existing: ThemeDictionary = if w.path(THEME_DICTIONARY).exists() {
                read_json(&w.path(THEME_DICTIONARY))?
            } else {
                ThemeDictionary::default()
            };
            let mut dictionaries = Vec::with_capacity(runs);
            for run in 0..runs.max(1) {
                use rand::{seq::IndexedRandom, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(w.config().seed ^ run as u64);
                let picked: Vec<String> = units.choose_multiple(&mut rng, samples).map(|(_, t)| t.clone()).collect();
                dictionaries.push(propose_themes(&generator, &picked, &existing, latest, run as u32)?);
            }
            let chosen = if select && dictionaries.len() > 1 {
                let classifier = HttpClassifier::from_env(PROVIDER_TIMEOUT)?;
                let mut union = existing.clone();
                for d in &dictionaries {
                    for th in &d.themes {
                        if union.get(&th.label).is_none() {
                            union.themes.push(th.clone());
                        }
                    }
                }
                let corpus = classify_all(&classifier, &units, &union.themes, 8)?;
                themes::select_dictionary(&dictionaries, &corpus, w.config().theme_confidence)?
            } else {
                dictionaries.remove(0)
            };
            write_json(&w.path(THEME_DICTIONARY), &chosen)?;
            println!("{} themes → {}", chosen.themes.len(), w.path(THEME_DICTIONARY).display());
        }
        ThemesCmd::Classify { ws, max_in_flight } => {
            let w = ws.open()?;
            let classifier = HttpClassifier::from_env(PROVIDER_TIMEOUT)?;
            let dict: ThemeDictionary = read_json(&w.path(THEME_DICTIONARY))?;
            let latest = load_view(&w)?.latest().unwrap_or(0);
            let path = w.path(THEME_ASSIGNMENTS);
            let done: BTreeSet<String> = w.read_jsonl::<ThemeRecord>(&path)?.into_iter().map(|r| r.unit_id).collect();
            let mut todo: BTreeMap<String, String> = BTreeMap::new();
            for (id, _) in w.narratives()? {
                todo.extend(narrative_texts(&w, &id)?.into_iter().filter(|(u, _)| !done.contains(u)));
            }
            let todo: Vec<(String, String)> = todo.into_iter().collect();
            let records: Vec<ThemeRecord> = classify_all(&classifier, &todo, &dict.themes, max_in_flight)?
                .into_iter()
                .map(|a| ThemeRecord {
                    unit_id: a.unit_id,
                    scores: a.scores,
                    classified_at: latest,
                })
                .collect();
            w.append_jsonl(&path, &records)?;
            println!("classified {} units", records.len());
        }
        ThemesCmd::Tcs { ws, threshold } => {
            let w = ws.open()?;
            let dict: ThemeDictionary = read_json(&w.path(THEME_DICTIONARY))?;
            let corpus: Vec<ThemeAssignment> = w
                .read_jsonl::<ThemeRecord>(&w.path(THEME_ASSIGNMENTS))?
                .into_iter()
                .map(|r| ThemeAssignment {
                    unit_id: r.unit_id,
                    scores: r.scores,
                })
                .collect();
            let score = themes::tcs(&dict, &corpus, threshold.unwrap_or(w.config().theme_confidence))?;
            println!("{score:.4}");
        }
        ThemesCmd::Calibrate { labels, recall_floor } => {
            let text = std::fs::read_to_string(&labels).with_context(|| labels.display().to_string())?;
            let mut labeled = Vec::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let (s, y) = line.split_once('\t').with_context(|| format!("line {}: expected score<TAB>label", i + 1))?;
                let y = match y.trim() {
                    "1" | "true" => true,
                    "0" | "false" => false,
                    other => bail!("line {}: label {other:?} is not 0/1", i + 1),
                };
                labeled.push((s.trim().parse::<f64>().with_context(|| format!("line {}", i + 1))?, y));
            }
            let candidates: Vec<f64> = (1..20).map(|i| f64::from(i) * 0.05).collect();
            let c = calibrate_confidence(&labeled, &candidates, recall_floor)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
        }
    }
    Ok(())
}

fn graph_cmd(cmd: GraphCmd) -> Result<()> {
    match cmd {
        GraphCmd::Build { posts, out } => {
            let raw = ingest::read_posts(BufReader::new(File::open(&posts).with_context(|| posts.display().to_string())?))?;
            let g = graph::build_reference_graph(&raw);
            let mut f = std::io::BufWriter::new(File::create(&out)?);
            for e in g.edge_records() {
                writeln!(f, "{}", serde_json::to_string(&e)?)?;
            }
            f.flush()?;
            println!("{} channels, {} edges → {}", g.nodes.len(), g.edges.len(), out.display());
        }
        GraphCmd::Propagate {
            edges,
            seeds,
            out,
            max_iters,
            seed,
        } => {
            let text = std::fs::read_to_string(&edges).with_context(|| edges.display().to_string())?;
            let records: Vec<EdgeRecord> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<_, _>>()?;
            let g = ReferenceGraph::from_records(&records)?;
            let mut seed_labels = BTreeMap::new();
            for line in std::fs::read_to_string(&seeds)?.lines().filter(|l| !l.trim().is_empty()) {
                let (ch, label) = line.split_once('\t').context("seed lines are channel<TAB>label")?;
                seed_labels.insert(ch.trim().to_string(), label.trim().parse::<Label>()?);
            }
            let p = graph::propagate_labels(&g, &seed_labels, max_iters, seed)?;
            write_json(&out, &p)?;
            let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
            for l in p.labels.values() {
                *counts.entry(l.label).or_default() += 1;
            }
            for (l, c) in counts {
                println!("{l}\t{c}");
            }
            if !p.converged {
                eprintln!("warning: not converged after {} rounds", p.rounds);
            }
        }
        GraphCmd::Sample { partition, label, n, seed } => {
            let p: Partition = read_json(&partition)?;
            let s = graph::partition_sample(&p, label, n, seed);
            if s.undersized {
                eprintln!("warning: class {label} has only {} channels", s.channels.len());
            }
            for c in s.channels {
                println!("{c}");
            }
        }
    }
    Ok(())
}
