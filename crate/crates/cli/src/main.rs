use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use replay_forge::buffer::{select_partition, Category, GlobalBuffer};
use replay_forge::dctg::{dctg_forward, features_from_tensor, features_to_tensor, load_params, text_from_tensor};
use replay_forge::io::{read_json, schema, vol1, write_validated_json, Dtype, Vol1Tensor};
use replay_forge::metrics::{metrics_report, ResultMatrix};
use replay_forge::modality::{assemble_input, inflate_weights, rmd_mask, LayoutDocument, WeightTensor};
use replay_forge::scoring::{ScoresDocument, ScoringConfig};
use replay_forge::stream::{evaluate_dirs, load_valid_manifest, run_stream, score_manifest, StreamConfig};
use replay_forge::synth::{synth_corpus, SynthConfig};
use replay_forge::{ChannelLayout, Error};

#[derive(Parser)]
#[command(name = "replay-forge", version, about = "Replay buffer, modality and metric tooling for continual lesion segmentation")]
struct Cli {
    /// Worker threads for per-sample work (default: all cores).
    #[arg(long, global = true, env = "REPLAY_FORGE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every sample of an episode manifest.
    Score(ScoreArgs),
    /// Select an episode partition from a scores file and merge it into the buffer.
    BufferUpdate(BufferUpdateArgs),
    /// AVG / ILM / BWT from a results matrix.
    Metrics(MetricsArgs),
    /// Mean Dice of a prediction directory against ground truth, as one results row.
    Eval(EvalArgs),
    /// Zero-pad first-layer weights to more input channels.
    Inflate(InflateArgs),
    /// Build the multi-channel input of one sample under a channel layout.
    Assemble(AssembleArgs),
    /// Print the modality-drop mask for one sample and epoch.
    Rmd(RmdArgs),
    /// Forward pass of the text-conditioned cross-attention block.
    Dctg(DctgArgs),
    /// Generate a synthetic lesion corpus and a matching stream config.
    Synth(SynthArgs),
    /// Run a full episode stream from a config file.
    RunStream(RunStreamArgs),
    /// Describe a VOL1 file.
    Dump(DumpArgs),
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Scoring config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BufferUpdateArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Existing buffer state; a fresh buffer is created when absent or missing.
    #[arg(long)]
    state: Option<PathBuf>,
    /// Capacity; must match the stored state when one is given.
    #[arg(long)]
    beta: Option<usize>,
    /// Partition candidates to select; defaults to beta.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Episode index; defaults to one past the newest stored episode.
    #[arg(long)]
    episode: Option<u32>,
    /// Manifest used to record volume paths for stored entries.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Binarisation threshold for f32 predictions (p > threshold).
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
}

#[derive(Args)]
struct InflateArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    k_max: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssembleArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    sample: String,
    #[arg(long)]
    layout: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RmdArgs {
    /// Comma-separated modality names.
    #[arg(long, value_delimiter = ',', required = true)]
    modalities: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sample_id: String,
    #[arg(long, default_value_t = 0)]
    epoch: u64,
}

#[derive(Args)]
struct DctgArgs {
    /// 4-D VOL1 `[C, H, W, D]`.
    #[arg(long)]
    features: PathBuf,
    /// 2-D VOL1 `[N_t, d_t]`.
    #[arg(long)]
    text: PathBuf,
    /// Parameter directory containing params.json.
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    episodes: usize,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// One edge length or `X,Y,Z`.
    #[arg(long, default_value = "32", value_parser = parse_dims)]
    dims: [usize; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    beta: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunStreamArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    file: PathBuf,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err("expected one edge length or X,Y,Z".into()),
    }
}

fn score(a: ScoreArgs) -> anyhow::Result<()> {
    let config: ScoringConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => ScoringConfig::default(),
    };
    config.validate()?;
    let manifest = load_valid_manifest(&a.manifest)?;
    let scored = score_manifest(&manifest, &config)?;
    let doc = ScoresDocument::new(manifest.episode.clone(), config, &scored);
    write_validated_json(&a.out, "scores", &doc, &schema::scores())?;
    println!(
        "{}: {} records, {} excluded",
        manifest.episode,
        scored.records.len(),
        scored.excluded_count()
    );
    Ok(())
}

fn buffer_update(a: BufferUpdateArgs) -> anyhow::Result<()> {
    let doc: ScoresDocument = read_json(&a.scores)?;
    doc.check_version()?;
    let mut buffer = match a.state.as_deref().filter(|p| p.exists()) {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let b = GlobalBuffer::load_state(&text)?;
            if let Some(beta) = a.beta.filter(|&beta| beta != b.beta()) {
                return Err(Error::InvalidConfig(format!(
                    "--beta {beta} differs from stored capacity {}",
                    b.beta()
                ))
                .into());
            }
            b
        }
        None => GlobalBuffer::new(a.beta.ok_or_else(|| {
            Error::InvalidConfig("--beta is required when no buffer state exists".into())
        })?)?,
    };
    let episode = a
        .episode
        .unwrap_or_else(|| buffer.latest_episode().map_or(0, |e| e + 1));
    let mut partition = select_partition(&doc.valid(), a.n.unwrap_or(buffer.beta()), episode)?;
    if let Some(m) = &a.manifest {
        let manifest = load_valid_manifest(m)?;
        partition = partition.with_refs(|id| manifest.refs(id));
    }
    let (rep, diff) = (
        partition.count(Category::Representative),
        partition.count(Category::Difficult),
    );
    let report = buffer.update(partition)?;
    if !report.parity_ok() {
        return Err(Error::InvariantViolation(format!("allocation {:?} breaks parity", report.allocation)).into());
    }
    buffer.check_invariants().map_err(Error::InvariantViolation)?;

    let state = buffer.save_state()?;
    schema::validate(&serde_json::from_str(&state)?, &schema::buffer_state())
        .map_err(|detail| Error::SchemaViolation { document: "buffer state", detail })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&a.out, state).map_err(|e| Error::io(&a.out, e))?;
    println!(
        "episode {episode}: selected {rep} representative / {diff} difficult; sizes {:?}; evicted {}; parity ok",
        buffer.sizes(),
        report.evicted.len()
    );
    Ok(())
}

fn metrics(a: MetricsArgs) -> anyhow::Result<()> {
    let results: ResultMatrix = read_json(&a.results)?;
    let report = metrics_report(&results)?;
    write_validated_json(&a.out, "metrics", &report, &schema::metrics())?;
    println!(
        "AVG {:.6} ILM {:.6} BWT {}",
        report.avg,
        report.ilm,
        report.bwt.map_or("n/a".into(), |b| format!("{b:.6}"))
    );
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let row = evaluate_dirs(&a.pred_dir, &a.gt_dir, a.threshold)?;
    write_validated_json(&a.out, "eval row", &row, &schema::eval_row())?;
    println!("DSC {:.6} over {} samples", row.dsc, row.per_sample.len());
    Ok(())
}

fn inflate(a: InflateArgs) -> anyhow::Result<()> {
    let t = vol1::read_file(&a.weights)?;
    let shape: [usize; 5] = t.dims.as_slice().try_into().map_err(|_| {
        Error::ShapeMismatch(format!("weights must be 5-D [C_out, C_in, k, k, k], got {:?}", t.dims))
    })?;
    let w = WeightTensor::new(shape, t.to_f32())?;
    let old = w.c_in();
    let out = inflate_weights(&w, a.k_max)?;
    vol1::write_file(&a.out, &Vol1Tensor::f32(out.shape().to_vec(), out.into_data()))?;
    println!("inflated input channels {old} -> {}", a.k_max);
    Ok(())
}

fn assemble(a: AssembleArgs) -> anyhow::Result<()> {
    let manifest = load_valid_manifest(&a.manifest)?;
    let entry = manifest
        .sample(&a.sample)
        .ok_or_else(|| Error::InvalidConfig(format!("sample {:?} not in manifest", a.sample)))?;
    let layout = ChannelLayout::from_document(&read_json::<LayoutDocument>(&a.layout)?)?;
    let mut volumes = BTreeMap::new();
    for (name, rel) in &entry.modalities {
        volumes.insert(name.clone(), vol1::read_file(&manifest.resolve(rel))?.to_scalar()?);
    }
    let t = assemble_input(&volumes, &layout)?;
    let mut dims = vec![t.channels];
    dims.extend_from_slice(&t.dims);
    vol1::write_file(&a.out, &Vol1Tensor::f32(dims, t.data))?;
    println!("{}: {} of {} channels filled", a.sample, volumes.len(), layout.k_max());
    Ok(())
}

fn rmd(a: RmdArgs) -> anyhow::Result<()> {
    println!("{}", rmd_mask(&a.modalities, a.seed, &a.sample_id, a.epoch)?.join(","));
    Ok(())
}

fn dctg(a: DctgArgs) -> anyhow::Result<()> {
    let f = features_from_tensor(&vol1::read_file(&a.features)?)?;
    let text = text_from_tensor(&vol1::read_file(&a.text)?)?;
    let params = load_params(&a.params)?;
    let out = dctg_forward(&f, &text, &params)?;
    vol1::write_file(&a.out, &features_to_tensor(&out))?;
    println!("{} tokens x {} channels", out.token_count(), out.channels());
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        episodes: a.episodes,
        samples: a.samples,
        dims: a.dims,
        seed: a.seed,
        beta: a.beta,
    };
    let out = synth_corpus(&cfg, &a.out)?;
    println!(
        "wrote {} episode manifests; stream config {}",
        out.manifests.len(),
        out.stream_config.display()
    );
    Ok(())
}

fn run(a: RunStreamArgs) -> anyhow::Result<()> {
    let cfg = StreamConfig::load(&a.config)?;
    let report = run_stream(&cfg)?;
    print!("{}", report.summary());
    Ok(())
}

fn dump(a: DumpArgs) -> anyhow::Result<()> {
    let header = vol1::read_header(&a.file)?;
    let t = vol1::read_file(&a.file)?;
    let values = t.to_f64();
    let dtype = match header.dtype {
        Dtype::F32 => "f32",
        Dtype::U8 => "u8",
    };
    println!("{}: {dtype} {:?}", a.file.display(), header.dims);
    if !values.is_empty() {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let nonzero = values.iter().filter(|&&v| v != 0.0).count();
        println!("min {min} max {max} mean {mean} nonzero {nonzero}/{}", values.len());
    }
    if header.dims.len() >= 2 {
        let inner: usize = header.dims[2..].iter().product();
        let n1 = header.dims[1];
        let zero: Vec<usize> = (0..n1)
            .filter(|&i| {
                values
                    .chunks(n1 * inner)
                    .all(|outer| outer[i * inner..(i + 1) * inner].iter().all(|&v| v == 0.0))
            })
            .collect();
        println!("zero slabs along axis 1: {zero:?}");
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<Error>()
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Score(a) => score(a),
        Command::BufferUpdate(a) => buffer_update(a),
        Command::Metrics(a) => metrics(a),
        Command::Eval(a) => eval(a),
        Command::Inflate(a) => inflate(a),
        Command::Assemble(a) => assemble(a),
        Command::Rmd(a) => rmd(a),
        Command::Dctg(a) => dctg(a),
        Command::Synth(a) => synth(a),
        Command::RunStream(a) => run(a),
        Command::Dump(a) => dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
