use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grade_core::backends::{Client, Role};
use grade_core::caption_filter::{self, CaptionRecord};
use grade_core::config::RunConfig;
use grade_core::extraction::{answers_by_model, distributions_by_question, estimate_all, extract_answers};
use grade_core::model::{
    read_json, read_jsonl, validate_schema, write_json, write_jsonl, Concept, ImageRecord, Schema,
};
use grade_core::reporting::{self, Format, ModelReport, Report, ReportMetadata};
use grade_core::schema_gen::{SchemaGenerator, SchemaOptions};
use grade_core::stats::PermutationConfig;
use grade_core::templates::Templates;
use grade_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_BACKEND: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "grade",
    version,
    about = "Measure attribute diversity of text-to-image models"
)]
struct Cli {
    /// JSON config file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of the response cache.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long, global = true)]
    templates_dir: Option<PathBuf>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a schema of concepts, prompts, questions and value supports.
    Schema(SchemaArgs),
    /// Generate (or pair pre-generated) images for every prompt.
    Generate(GenerateArgs),
    /// Answer every question about every image.
    Extract(ExtractArgs),
    /// Estimate distributions and score them.
    Score(ScoreArgs),
    /// Pairwise permutation tests and TVD matrices between models.
    Compare(CompareArgs),
    /// Filter training captions and compare dataset and model distributions.
    FilterCaptions(FilterArgs),
    /// Render an existing report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SchemaArgs {
    /// Language-model profile (name, `mock`, or `mock:<fixtures.jsonl>`).
    #[arg(long)]
    llm: Option<String>,
    /// Number of concepts to collect.
    #[arg(long = "concepts")]
    n_concepts: Option<usize>,
    /// Use these concepts instead of collecting them (repeatable).
    #[arg(long = "concept")]
    concepts: Vec<String>,
    #[arg(long)]
    common: Option<usize>,
    #[arg(long)]
    uncommon: Option<usize>,
    #[arg(long)]
    attributes: Option<usize>,
    /// Only validate an existing schema file.
    #[arg(long, value_name = "SCHEMA")]
    check: Option<PathBuf>,
    #[arg(long, default_value = "schema.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value = "schema.json")]
    schema: PathBuf,
    /// Image-model profile (repeatable): name, `mock[:fixtures]` or `dir:<path>`.
    #[arg(long)]
    t2i: Vec<String>,
    #[arg(long)]
    images_per_prompt: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long, default_value = "schema.json")]
    schema: PathBuf,
    /// Image manifest; defaults to `<run_dir>/manifest.jsonl`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    vqa: Option<String>,
    #[arg(long, default_value = "answers.jsonl")]
    answers: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long, default_value = "answers.jsonl")]
    answers: PathBuf,
    #[arg(long, default_value = "schema.json")]
    schema: PathBuf,
    /// Default-behavior threshold.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Also write the score table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write every distribution, keyed by question and scope.
    #[arg(long)]
    distributions: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Report (count + 1) / (N + 1) instead of count / N.
    #[arg(long)]
    add_one: bool,
    #[arg(long, default_value = "compare.json")]
    out: PathBuf,
    /// Write tvd_matrix.{json,csv} and tvd_matrix_single.{json,csv} here.
    #[arg(long)]
    matrix_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// JSONL of {caption, image_uri}.
    #[arg(long)]
    captions: PathBuf,
    #[arg(long, default_value = "schema.json")]
    schema: PathBuf,
    /// Concept id in the schema.
    #[arg(long)]
    concept: String,
    /// Question id in the schema.
    #[arg(long)]
    question: String,
    #[arg(long)]
    llm: Option<String>,
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long, default_value = "filtered.jsonl")]
    out: PathBuf,
    /// Image model for the model side of the comparison.
    #[arg(long, requires = "vqa")]
    t2i: Option<String>,
    #[arg(long, requires = "t2i")]
    vqa: Option<String>,
    #[arg(long)]
    images_per_caption: Option<usize>,
    /// Base directory for relative image_uri values.
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long, default_value = "comparison.json")]
    comparison: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
    Table,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: OutFormat,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write hist_<question_id>.svg per model under this directory.
    #[arg(long)]
    histograms: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
}

enum Failure {
    Validation(String),
    Backend(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Backend(_) | Error::Generation(_) => Failure::Backend(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Backend(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_BACKEND)
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    templates: Templates,
}

impl Ctx {
    fn client(&self, spec: Option<&String>, fallback: &Option<String>, role: Role) -> Result<Client, Failure> {
        let spec = spec
            .or(fallback.as_ref())
            .ok_or_else(|| Failure::Validation(format!("no {role} profile given (use --{role} or the config file)")))?;
        let profile = self.cfg.profile(spec, role)?;
        Ok(Client::from_profile(profile, Some(&self.cfg.cache_dir)).map_err(Error::from)?)
    }

    fn metadata(&self) -> ReportMetadata {
        ReportMetadata::new(serde_json::to_value(&self.cfg).expect("config serializes"))
    }
}

fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = cli.cache_dir {
        cfg.cache_dir = d;
    }
    if let Some(d) = cli.templates_dir {
        cfg.templates_dir = Some(d);
    }
    let templates = match &cfg.templates_dir {
        Some(dir) => Templates::from_dir(dir)?,
        None => Templates::default(),
    };
    let mut ctx = Ctx { cfg, templates };
    match cli.command {
        Command::Schema(a) => schema(&mut ctx, a),
        Command::Generate(a) => generate(&mut ctx, a),
        Command::Extract(a) => extract(&mut ctx, a),
        Command::Score(a) => score(&mut ctx, a),
        Command::Compare(a) => compare(&mut ctx, a),
        Command::FilterCaptions(a) => filter_captions(&mut ctx, a),
        Command::Report(a) => report(&mut ctx, a),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn load_schema(path: &Path) -> Result<Schema, Failure> {
    let schema = Schema::load(path)?;
    let violations = validate_schema(&schema);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{}: {v}", path.display());
        }
        return Err(Failure::Validation(format!("{} schema violation(s)", violations.len())));
    }
    Ok(schema)
}

fn schema(ctx: &mut Ctx, a: SchemaArgs) -> Outcome {
    if let Some(path) = a.check {
        load_schema(&path)?;
        println!("{}: ok", path.display());
        return Ok(());
    }
    let cfg = &mut ctx.cfg;
    set(&mut cfg.n_concepts, a.n_concepts);
    set(&mut cfg.n_common, a.common);
    set(&mut cfg.n_uncommon, a.uncommon);
    set(&mut cfg.n_attributes, a.attributes);
    cfg.validate()?;

    let client = ctx.client(a.llm.as_ref(), &ctx.cfg.llm, Role::Llm)?;
    let generator = SchemaGenerator::new(&client, &ctx.templates);
    let concepts = if a.concepts.is_empty() {
        generator.generate_concepts(ctx.cfg.n_concepts)?
    } else {
        a.concepts.iter().map(|c| Concept::from_name(c)).collect()
    };
    let opts = SchemaOptions {
        n_common: ctx.cfg.n_common,
        n_uncommon: ctx.cfg.n_uncommon,
        n_attributes: ctx.cfg.n_attributes,
    };
    let built = generator.build_schema(&concepts, &opts)?;
    for w in &built.warnings {
        log::warn!("{w}");
    }
    built.schema.save(&a.out)?;
    println!(
        "wrote {} ({} concepts, {} prompts)",
        a.out.display(),
        built.schema.concepts.len(),
        built.schema.prompts().count()
    );
    Ok(())
}

fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.run_dir.join("manifest.jsonl")
}

fn generate(ctx: &mut Ctx, a: GenerateArgs) -> Outcome {
    set(&mut ctx.cfg.images_per_prompt, a.images_per_prompt);
    set(&mut ctx.cfg.base_seed, a.base_seed);
    set(&mut ctx.cfg.run_dir, a.run_dir);
    if !a.t2i.is_empty() {
        ctx.cfg.t2i = a.t2i;
    }
    if ctx.cfg.t2i.is_empty() {
        return Err(Failure::Validation(
            "no image model given (use --t2i or the config file)".into(),
        ));
    }
    let schema = load_schema(&a.schema)?;
    let manifest = manifest_path(&ctx.cfg);
    let mut records: Vec<ImageRecord> = read_jsonl(&manifest)?;

    for spec in ctx.cfg.t2i.clone() {
        let client = ctx.client(Some(&spec), &None, Role::T2i)?;
        let model = client.profile().model_name.clone();
        let mut fresh = Vec::new();
        for prompt in schema.prompts() {
            let imgs = client
                .generate_images(prompt, ctx.cfg.images_per_prompt, ctx.cfg.base_seed, &ctx.cfg.run_dir)
                .map_err(Error::from)?;
            fresh.extend(imgs);
        }
        records.retain(|r| r.model_id != model);
        println!("{model}: {} images", fresh.len());
        records.extend(fresh);
    }
    write_jsonl(&manifest, &records)?;
    Ok(())
}

fn extract(ctx: &mut Ctx, a: ExtractArgs) -> Outcome {
    let schema = load_schema(&a.schema)?;
    let manifest = a.manifest.unwrap_or_else(|| manifest_path(&ctx.cfg));
    let images: Vec<ImageRecord> = read_jsonl(&manifest)?;
    if images.is_empty() {
        return Err(Failure::Validation(format!("{}: no images", manifest.display())));
    }
    let client = ctx.client(a.vqa.as_ref(), &ctx.cfg.vqa, Role::Vqa)?;
    let (answers, stats) = extract_answers(&schema, &images, &client, &ctx.templates, &a.answers)?;
    println!("{}", serde_json::to_string(&stats).expect("stats serialize"));
    if stats.failures > 0 {
        return Err(Failure::Backend(format!(
            "{} of {} pairs failed; rerun to retry them ({} answers on disk)",
            stats.failures,
            stats.requested,
            answers.len()
        )));
    }
    Ok(())
}

fn score(ctx: &mut Ctx, a: ScoreArgs) -> Outcome {
    set(&mut ctx.cfg.tau, a.tau);
    ctx.cfg.validate()?;
    let schema = load_schema(&a.schema)?;
    let answers = read_jsonl(&a.answers)?;
    if answers.is_empty() {
        return Err(Failure::Validation(format!("{}: no answers", a.answers.display())));
    }
    let mut models = Vec::new();
    let mut all_dists = std::collections::BTreeMap::new();
    for (model, rows) in answers_by_model(&answers) {
        let dists = estimate_all(&schema, &rows)?;
        all_dists.insert(model.clone(), distributions_by_question(&dists));
        models.push(ModelReport::build(&model, dists, &rows, ctx.cfg.tau)?);
    }
    let report = Report {
        metadata: ctx.metadata(),
        models,
    };
    reporting::emit_report(&report, Format::Json, &a.out)?;
    if let Some(path) = &a.csv {
        reporting::emit_report(&report, Format::Csv, path)?;
    }
    if let Some(path) = &a.distributions {
        write_json(path, &all_dists)?;
    }
    print!("{}", reporting::render_table(&report));
    Ok(())
}

fn compare(ctx: &mut Ctx, a: CompareArgs) -> Outcome {
    set(&mut ctx.cfg.permutations, a.permutations);
    set(&mut ctx.cfg.seed, a.seed);
    set(&mut ctx.cfg.alpha, a.alpha);
    ctx.cfg.add_one |= a.add_one;
    ctx.cfg.validate()?;
    let reports: Vec<Report> = a.reports.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let models: Vec<&ModelReport> = reports.iter().flat_map(|r| &r.models).collect();
    if models.len() < 2 {
        return Err(Failure::Validation("need at least two models to compare".into()));
    }
    let cfg = PermutationConfig {
        n_permutations: ctx.cfg.permutations,
        alpha: ctx.cfg.alpha,
        seed: ctx.cfg.seed,
        stream: 0,
        add_one: ctx.cfg.add_one,
    };
    let result = reporting::compare(&models, &cfg, ctx.metadata())?;
    write_json(&a.out, &result)?;
    if let Some(dir) = &a.matrix_dir {
        reporting::emit_pairwise_matrix(&result.tvd_multi, 100.0, dir, "tvd_matrix")?;
        reporting::emit_pairwise_matrix(&result.tvd_single, 100.0, dir, "tvd_matrix_single")?;
    }
    let significant = result.tests_multi.iter().filter(|t| t.result.significant).count();
    println!(
        "{} models, {} pairs, {significant} significant (multi-prompt, alpha {})",
        result.models.len(),
        result.tests_multi.len(),
        cfg.alpha
    );
    Ok(())
}

fn filter_captions(ctx: &mut Ctx, a: FilterArgs) -> Outcome {
    set(&mut ctx.cfg.caption_cap, a.cap);
    set(&mut ctx.cfg.images_per_caption, a.images_per_caption);
    let schema = load_schema(&a.schema)?;
    let concept = schema
        .concept(&a.concept)
        .ok_or_else(|| Failure::Validation(format!("unknown concept {}", a.concept)))?;
    let question = concept
        .questions
        .iter()
        .find(|q| q.question.id == a.question)
        .ok_or_else(|| Failure::Validation(format!("unknown question {} for {}", a.question, a.concept)))?;
    let captions: Vec<CaptionRecord> = read_jsonl(&a.captions)?;
    let llm = ctx.client(a.llm.as_ref(), &ctx.cfg.llm, Role::Llm)?;
    let outcome = caption_filter::collect_filtered(
        &llm,
        &ctx.templates,
        &captions,
        &concept.concept(),
        &question.question,
        ctx.cfg.caption_cap,
    )?;
    write_jsonl(&a.out, &outcome.kept)?;
    println!(
        "kept {} of {} captions ({} rejected, {} undecided)",
        outcome.kept.len(),
        outcome.n_seen,
        outcome.n_rejected,
        outcome.n_undecided
    );

    let (Some(t2i), Some(vqa)) = (a.t2i, a.vqa) else {
        return Ok(());
    };
    if outcome.kept.is_empty() {
        return Err(Failure::Validation("no captions kept; nothing to compare".into()));
    }
    let t2i = ctx.client(Some(&t2i), &None, Role::T2i)?;
    let vqa = ctx.client(Some(&vqa), &None, Role::Vqa)?;
    let only = |s: Schema| Schema {
        concepts: s
            .concepts
            .into_iter()
            .map(|mut c| {
                c.questions.retain(|q| q.question.id == a.question);
                c
            })
            .collect(),
    };

    let model_schema = only(caption_filter::caption_schema(concept, &outcome.kept));
    let mut model_images = Vec::new();
    for prompt in model_schema.prompts() {
        model_images.extend(
            t2i.generate_images(prompt, ctx.cfg.images_per_caption, ctx.cfg.base_seed, &ctx.cfg.run_dir)
                .map_err(Error::from)?,
        );
    }
    let dataset_schema = only(caption_filter::dataset_schema(concept));
    let dataset_images = caption_filter::dataset_images(concept, &outcome.kept, a.dataset_dir.as_deref());

    let answers_dir = a.comparison.parent().unwrap_or(Path::new("")).to_path_buf();
    let (model_answers, _) = extract_answers(
        &model_schema,
        &model_images,
        &vqa,
        &ctx.templates,
        &answers_dir.join("caption_model_answers.jsonl"),
    )?;
    let (data_answers, _) = extract_answers(
        &dataset_schema,
        &dataset_images,
        &vqa,
        &ctx.templates,
        &answers_dir.join("caption_dataset_answers.jsonl"),
    )?;
    let model_dist = estimate_all(&model_schema, &model_answers)?
        .into_iter()
        .find(|d| d.scope.is_multi())
        .ok_or_else(|| Failure::Validation("no model-side distribution".into()))?;
    let data_dist = estimate_all(&dataset_schema, &data_answers)?
        .into_iter()
        .find(|d| !d.scope.is_multi())
        .ok_or_else(|| Failure::Validation("no dataset-side distribution".into()))?;
    let comparison = caption_filter::compare_to_reference(&model_dist, &data_dist)?;
    write_json(
        &a.comparison,
        &serde_json::json!({
            "metadata": ctx.metadata(),
            "model": t2i.profile().model_name,
            "seeds_per_caption": (ctx.cfg.base_seed..ctx.cfg.base_seed + ctx.cfg.images_per_caption as u64).collect::<Vec<_>>(),
            "comparison": comparison,
            "model_distribution": model_dist,
            "dataset_distribution": data_dist,
        }),
    )?;
    println!(
        "{}",
        reporting::render_reference_row(&t2i.profile().model_name, &comparison)
    );
    Ok(())
}

fn report(ctx: &mut Ctx, a: ReportArgs) -> Outcome {
    set(&mut ctx.cfg.histogram_bins, a.bins);
    let report: Report = read_json(&a.report)?;
    let text = match a.format {
        OutFormat::Json => {
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            s
        }
        OutFormat::Csv => reporting::report_csv(&report)?,
        OutFormat::Table => reporting::render_table(&report),
    };
    match &a.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    if let Some(dir) = &a.histograms {
        for m in &report.models {
            let mut by_question = std::collections::BTreeMap::<&str, Vec<_>>::new();
            for s in &m.scores {
                by_question.entry(s.question_id.as_str()).or_default().push(s.clone());
            }
            for (q, scores) in by_question {
                let path = dir.join(&m.model).join(format!("hist_{q}.svg"));
                reporting::emit_histogram(&scores, ctx.cfg.histogram_bins, &format!("{} {q}", m.model), &path)?;
            }
            let path = dir.join(&m.model).join("hist_all.svg");
            reporting::emit_histogram(&m.scores, ctx.cfg.histogram_bins, &m.model, &path)?;
        }
    }
    Ok(())
}
