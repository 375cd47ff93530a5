//! The `xfaith` command line: estimate, inspect, and simulate explanation
//! faithfulness from trace files.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use xfaith_core::discretizers::DiscretizerSpec;
use xfaith_core::estimators::{
    estimate_global, estimate_local, expected_estimate, oracle_bounds, plug_in_bounds, Relation,
};
use xfaith_core::harness::{
    generate_world, split_populations, split_populations_inclusive, stream_rng, sweep_samples,
    sweep_threshold, SweepResult, World, WorldSpec,
};
use xfaith_core::io::{load_trace, write_jsonl, write_trace, TraceFormat};
use xfaith_core::oracle::{decoder_report, exact_global};
use xfaith_core::{discretize_trace, FiniteSystem, Label, Trace};

#[derive(Debug, Parser)]
#[command(name = "xfaith", version, about = "Consistency and sufficiency of black-box explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate global consistency and/or sufficiency of a trace
    Evaluate {
        #[command(flatten)]
        input: TraceInput,
        /// Measure to report; both (where rules permit) when omitted
        #[arg(long)]
        measure: Option<Measure>,
        /// Attach plug-in bias and MSE diagnostics
        #[arg(long)]
        bounds: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Local estimates for one record of a trace
    Local {
        #[command(flatten)]
        input: TraceInput,
        /// Instance id of the query record
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-key a trace with a discretizer
    Discretize {
        #[command(flatten)]
        input: TraceInput,
        /// original|fp:<k>|sign|rank|sign-of-top:<m>|delta|delta-sign|is-feature-modified
        #[arg(long)]
        method: String,
        /// Output trace; JSON lines on stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample traces and ground truth from a synthetic world
    Synth {
        #[command(flatten)]
        world: WorldArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Estimates as a function of sample size
    SweepSamples {
        #[command(flatten)]
        world: WorldArgs,
        /// Comma-separated sample sizes
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Explainer to evaluate, by name; the world's first when omitted
        #[arg(long)]
        explainer: Option<String>,
        #[arg(long, default_value = "consistency")]
        measure: Measure,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Anchor explanations across precision thresholds
    SweepThreshold {
        /// Trace to explain; sampled from the world when omitted
        #[arg(long, requires = "search")]
        trace: Option<PathBuf>,
        /// Trace the anchor search evaluates candidate rules on
        #[arg(long)]
        search: Option<PathBuf>,
        #[command(flatten)]
        world: WorldArgs,
        /// Evaluation records drawn from the world
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Search records drawn from the world
        #[arg(long, default_value_t = 2000)]
        search_n: usize,
        /// Comma-separated ascending thresholds in (0, 1]
        #[arg(long, value_delimiter = ',', required = true)]
        thresholds: Vec<f64>,
        #[arg(long, default_value = "sufficiency")]
        measure: Measure,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a trace into two label-skewed populations
    SplitPopulations {
        #[command(flatten)]
        input: TraceInput,
        #[arg(long)]
        positive: String,
        /// Probability that a positive record lands in population 1
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Accept p = 0 and p = 1
        #[arg(long)]
        inclusive: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Exact measures and decoder errors of a finite system
    Oracle {
        /// JSON system: {"points": [...], "applicability": {...}}
        #[arg(long)]
        system: PathBuf,
        /// Also report the estimator's expectation and bounds at this n
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TraceInput {
    #[arg(long)]
    trace: PathBuf,
    /// Trace format; guessed from the extension when omitted
    #[arg(long)]
    format: Option<Format>,
}

impl TraceInput {
    fn load(&self) -> anyhow::Result<Trace> {
        let fmt = self.format.map(Format::into).unwrap_or_else(|| TraceFormat::from_path(&self.trace));
        load_trace(&self.trace, fmt).with_context(|| format!("reading {}", self.trace.display()))
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

impl From<Format> for TraceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => TraceFormat::Jsonl,
            Format::Csv => TraceFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Measure {
    Consistency,
    Sufficiency,
}

impl From<Measure> for Relation {
    fn from(m: Measure) -> Self {
        match m {
            Measure::Consistency => Relation::Equality,
            Measure::Sufficiency => Relation::Applicability,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WorldKind {
    Tree,
    Xor,
    BalancedPair,
}

#[derive(Debug, Args)]
struct WorldArgs {
    #[arg(long, default_value = "tree")]
    kind: WorldKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tree world: number of leaves (a power of two)
    #[arg(long, default_value_t = 64)]
    leaves: usize,
    /// Tree world: per-instance label flip probability
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Tree world: dimension of the unit hypercube
    #[arg(long, default_value_t = xfaith_core::harness::TREE_DIMS)]
    dims: usize,
    /// XOR world: grid half-width
    #[arg(long, default_value_t = 2.0)]
    extent: f64,
    /// XOR world: grid spacing
    #[arg(long, default_value_t = 0.5)]
    step: f64,
    /// Balanced-pair world: finite domain size; continuous when omitted
    #[arg(long)]
    domain: Option<usize>,
}

impl WorldArgs {
    fn spec(&self) -> WorldSpec {
        match self.kind {
            WorldKind::Tree => WorldSpec::Tree {
                leaves: self.leaves,
                noise: self.noise,
                dims: self.dims,
            },
            WorldKind::Xor => WorldSpec::Xor {
                extent: self.extent,
                step: self.step,
            },
            WorldKind::BalancedPair => WorldSpec::BalancedPair { domain: self.domain },
        }
    }

    fn build(&self) -> anyhow::Result<World> {
        Ok(generate_world(self.spec(), self.seed)?)
    }
}

/// Stream used for one-off samples, apart from the world's own structure.
const SAMPLE_STREAM: u64 = 1 << 63;

fn sink<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> anyhow::Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(stdout),
    })
}

fn emit_json(value: &Value, path: &Option<PathBuf>, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let mut w = sink(path, stdout)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn emit_csv(result: &SweepResult, path: &Option<PathBuf>, stdout: &mut dyn Write) -> anyhow::Result<()> {
    let mut w = sink(path, stdout)?;
    result.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn has_rules(trace: &Trace) -> bool {
    !trace.is_empty() && trace.records().iter().all(|r| r.explanation.rule.is_some())
}

fn report(trace: &Trace, relation: Relation, bounds: bool) -> anyhow::Result<Value> {
    let mut r = estimate_global(trace, relation)?;
    if bounds {
        r.bounds = Some(plug_in_bounds(trace, relation)?);
    }
    Ok(serde_json::to_value(r)?)
}

fn execute(cmd: Command, stdout: &mut dyn Write) -> anyhow::Result<()> {
    match cmd {
        Command::Evaluate {
            input,
            measure,
            bounds,
            out,
        } => {
            let trace = input.load()?;
            let value = match measure {
                Some(m) => report(&trace, m.into(), bounds)?,
                None => {
                    let mut obj = serde_json::Map::new();
                    obj.insert("consistency".into(), report(&trace, Relation::Equality, bounds)?);
                    if has_rules(&trace) {
                        obj.insert("sufficiency".into(), report(&trace, Relation::Applicability, bounds)?);
                    }
                    Value::Object(obj)
                }
            };
            emit_json(&value, &out, stdout)
        }
        Command::Local { input, id, out } => {
            let trace = input.load()?;
            let Some(query) = trace.find(&id) else {
                return Err(xfaith_core::Error::Invalid(format!("no record with id `{id}`")).into());
            };
            let est = estimate_local(&trace, query)?;
            emit_json(&serde_json::to_value(est)?, &out, stdout)
        }
        Command::Discretize { input, method, out } => {
            let spec: DiscretizerSpec = method.parse()?;
            let trace = discretize_trace(&input.load()?, spec)?;
            match out {
                Some(p) => write_trace(&trace, &p, TraceFormat::from_path(&p))?,
                None => write_jsonl(&trace, &mut *stdout)?,
            }
            Ok(())
        }
        Command::Synth { world, n, out_dir } => {
            let w = world.build()?;
            let traces = w.sample(n, &mut stream_rng(world.seed, SAMPLE_STREAM))?;
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut written = Vec::new();
            for ((name, trace), truth) in w.explainers().into_iter().zip(&traces).zip(w.ground_truth()) {
                let path = out_dir.join(format!("{name}.jsonl"));
                write_trace(trace, &path, TraceFormat::Jsonl)?;
                let truth_path = out_dir.join(format!("{name}.truth.json"));
                fs::write(&truth_path, serde_json::to_string_pretty(&truth)? + "\n")?;
                written.push(json!({"explainer": name, "trace": path, "truth": truth_path}));
            }
            emit_json(&Value::Array(written), &None, stdout)
        }
        Command::SweepSamples {
            world,
            grid,
            reps,
            explainer,
            measure,
            out,
        } => {
            let w = world.build()?;
            let index = match &explainer {
                None => 0,
                Some(name) => match w.explainers().iter().position(|e| e == name) {
                    Some(i) => i,
                    None => bail!(xfaith_core::Error::Invalid(format!(
                        "world has no explainer `{name}`; choose from {:?}",
                        w.explainers()
                    ))),
                },
            };
            let relation = Relation::from(measure);
            let results = sweep_samples(&w, index, &grid, reps, world.seed)?;
            let Some(result) = results.iter().find(|r| r.measure == relation) else {
                bail!(xfaith_core::Error::Invalid(format!(
                    "explainer `{}` attaches no rules, so {relation} is unavailable",
                    w.explainers()[index]
                )));
            };
            emit_csv(result, &out, stdout)
        }
        Command::SweepThreshold {
            trace,
            search,
            world,
            n,
            search_n,
            thresholds,
            measure,
            out,
        } => {
            let (eval, search) = match (trace, search) {
                (Some(t), Some(s)) => (
                    load_trace(&t, TraceFormat::from_path(&t))?,
                    load_trace(&s, TraceFormat::from_path(&s))?,
                ),
                _ => {
                    let w = world.build()?;
                    let eval = w.sample(n, &mut stream_rng(world.seed, SAMPLE_STREAM))?.remove(0);
                    let search = w.sample(search_n, &mut stream_rng(world.seed, SAMPLE_STREAM + 1))?.remove(0);
                    (eval, search)
                }
            };
            let sweep = sweep_threshold(&eval, &search, &thresholds)?;
            let result = match Relation::from(measure) {
                Relation::Equality => &sweep.consistency,
                Relation::Applicability => &sweep.sufficiency,
            };
            emit_csv(result, &out, stdout)
        }
        Command::SplitPopulations {
            input,
            positive,
            p,
            seed,
            inclusive,
            out_dir,
        } => {
            let trace = input.load()?;
            let label = Label::new(positive);
            let (a, b) = if inclusive {
                split_populations_inclusive(&trace, &label, p, seed)?
            } else {
                split_populations(&trace, &label, p, seed)?
            };
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut summary = Vec::new();
            for (name, t) in [("population1", &a), ("population2", &b)] {
                let path = out_dir.join(format!("{name}.jsonl"));
                write_trace(t, &path, TraceFormat::Jsonl)?;
                summary.push(json!({"population": name, "trace": path, "n": t.len()}));
            }
            emit_json(&Value::Array(summary), &None, stdout)
        }
        Command::Oracle { system, n, out } => {
            let sys = read_system(&system)?;
            let mut value = json!({
                "consistency": exact_global(&sys, Relation::Equality),
                "sufficiency": exact_global(&sys, Relation::Applicability),
                "decoder": decoder_report(&sys),
            });
            if let Some(n) = n {
                let mut at_n = serde_json::Map::new();
                for rel in [Relation::Equality, Relation::Applicability] {
                    at_n.insert(
                        rel.measure_name().into(),
                        json!({
                            "expected_estimate": expected_estimate(&sys, rel, n),
                            "bounds": oracle_bounds(&sys, rel, n)?,
                        }),
                    );
                }
                value["at_n"] = json!({"n": n, "measures": at_n});
            }
            emit_json(&value, &out, stdout)
        }
    }
}

fn read_system(path: &Path) -> anyhow::Result<FiniteSystem> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|source| xfaith_core::Error::Json { record: 0, cause: source })
        .with_context(|| format!("reading system {}", path.display()))
}

/// Exit status for a failed command: 2 for invalid input, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<xfaith_core::Error>()) {
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

/// Runs the command line `argv` (program name first), writing results to
/// `stdout` and diagnostics to the process's stderr. Returns the exit status.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if e.use_stderr() {
                eprint!("{}", e.render());
            } else {
                let _ = write!(stdout, "{}", e.render());
            }
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
