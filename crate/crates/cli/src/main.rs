use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use viewfuse_core::bandit::BanditConfig;
use viewfuse_core::gating::{
    error_rates, kl_divergence, min_total_error, solve_threshold_detailed, sweep_thresholds,
    TruncatedGaussianPair,
};
use viewfuse_core::pipeline::{annotate_corpus, estimate_cost, PipelineConfig, Prices, ProviderSettings};
use viewfuse_core::providers::mock::{synthetic_corpus, MockQuality};
use viewfuse_core::simulate::{parse_strategies, simulate_strategies, Environment};
use viewfuse_core::Exec;

#[derive(Parser)]
#[command(name = "viewfuse", version, about = "Multi-view caption aggregation and gating")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate every manifest in a corpus directory.
    Annotate(AnnotateArgs),
    /// Gate threshold analysis.
    #[command(subcommand)]
    Threshold(ThresholdCmd),
    /// Bandit strategy tools.
    #[command(subcommand)]
    Bandit(BanditCmd),
    /// Estimate API cost for a corpus.
    Cost(CostArgs),
    /// Synthetic corpora for trying the pipeline with mock providers.
    #[command(subcommand)]
    Corpus(CorpusCmd),
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON or TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the deterministic mock providers regardless of the config.
    #[arg(long)]
    mock: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct GaussianArgs {
    #[arg(long, default_value_t = 0.65)]
    mu_pos: f64,
    #[arg(long, default_value_t = 0.35)]
    mu_neg: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma_pos: f64,
    #[arg(long, default_value_t = 0.15)]
    sigma_neg: f64,
}

impl GaussianArgs {
    fn params(self) -> Result<TruncatedGaussianPair> {
        Ok(TruncatedGaussianPair::new(self.mu_pos, self.sigma_pos, self.mu_neg, self.sigma_neg)?)
    }
}

#[derive(Subcommand)]
enum ThresholdCmd {
    /// Solve for the equal-density threshold and print the working as JSON.
    Solve(GaussianArgs),
    /// Print FNR/FPR/total error on a grid as CSV.
    Sweep {
        #[arg(long, default_value_t = 0.4)]
        from: f64,
        #[arg(long, default_value_t = 0.7)]
        to: f64,
        #[arg(long, default_value_t = 0.001)]
        step: f64,
        #[command(flatten)]
        dist: GaussianArgs,
    },
}

#[derive(Subcommand)]
enum BanditCmd {
    /// Compare strategies on a simulated environment.
    Simulate {
        /// JSON environment: {"arms": [{"kind": "bernoulli", "p": 0.9}, ...], "rounds": N}
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value = "ucb1,thompson,epsilon_greedy")]
        strategies: String,
        /// Comma-separated seeds or a half-open range `a..b`.
        #[arg(long, default_value = "0..20")]
        seeds: String,
        /// Directory for summary.csv and regret.csv; CSV goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, default_value_t = 100)]
        regret_every: usize,
    },
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    objects: u64,
    #[arg(long)]
    price_image: f64,
    /// Per 1k input tokens.
    #[arg(long)]
    price_in: f64,
    /// Per 1k output tokens.
    #[arg(long)]
    price_out: f64,
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Write `n` manifests with small point clouds.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        objects: usize,
        /// Indices whose point cloud belongs to a different category.
        #[arg(long, value_delimiter = ',')]
        mismatched: Vec<usize>,
        #[arg(long, default_value_t = 256)]
        points: usize,
    },
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a >= b {
            bail!("empty seed range {s}");
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse().with_context(|| format!("bad seed {x:?}")))
        .collect()
}

fn annotate(a: AnnotateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if a.mock && !matches!(cfg.providers, ProviderSettings::Mock { .. }) {
        cfg.providers = ProviderSettings::Mock {
            quality: MockQuality::default(),
        };
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(d) = a.cache_dir {
        cfg.cache_dir = Some(d);
    }
    let out = annotate_corpus(&a.corpus, &cfg, a.out.as_deref())?;
    let s = &out.summary;
    println!(
        "{} objects: {} annotated, {} failed, {} flagged ({:.0} ms)",
        s.objects, s.succeeded, s.failed, s.flagged, s.wall_time_ms
    );
    for f in &s.failures {
        println!("  failed {} at {}: {}", f.object_id, f.stage, f.error);
    }
    if let Some(c) = out.cache_stats {
        println!("cache: {} hits, {} misses, {} repairs", c.hits, c.misses, c.repairs);
    }
    if let Some(c) = out.provider_calls {
        println!("provider calls: {}", c.total());
    }
    Ok(())
}

fn threshold(cmd: ThresholdCmd) -> Result<()> {
    match cmd {
        ThresholdCmd::Solve(d) => {
            let p = d.params()?;
            let sol = solve_threshold_detailed(&p)?;
            let report = serde_json::json!({
                "threshold": sol.threshold,
                "rejected": sol.rejected,
                "a": sol.quadratic.a,
                "b": sol.quadratic.b,
                "c": sol.quadratic.c,
                "discriminant": sol.quadratic.discriminant,
                "errors": error_rates(&p, sol.threshold)?,
                "kl_pos_neg": kl_divergence(&p),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        ThresholdCmd::Sweep { from, to, step, dist } => {
            let rows = sweep_thresholds(&dist.params()?, from, to, step)?;
            println!("threshold,fnr,fpr,total");
            for r in &rows {
                println!("{:.6},{:.6},{:.6},{:.6}", r.threshold, r.fnr, r.fpr, r.total);
            }
            if let Some(best) = min_total_error(&rows) {
                eprintln!("minimum total error {:.6} at {:.6}", best.total, best.threshold);
            }
        }
    }
    Ok(())
}

fn bandit(cmd: BanditCmd) -> Result<()> {
    let BanditCmd::Simulate {
        env,
        strategies,
        seeds,
        out,
        workers,
        regret_every,
    } = cmd;
    let text = std::fs::read_to_string(&env).with_context(|| format!("reading {}", env.display()))?;
    let env: Environment = serde_json::from_str(&text).context("parsing environment")?;
    let strategies = parse_strategies(&strategies)?;
    let seeds = parse_seeds(&seeds)?;
    let report = simulate_strategies(&env, &strategies, &seeds, BanditConfig::default(), Exec::from_workers(workers))?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("summary.csv"), report.summary_csv())?;
            std::fs::write(dir.join("regret.csv"), report.regret_csv(regret_every))?;
            print!("{}", report.summary_csv());
        }
        None => print!("{}", report.summary_csv()),
    }
    for s in &report.strategies {
        eprintln!("{}: {:.1} ms", s.strategy, s.wall_time_ms);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Command::Annotate(a) => annotate(a)?,
        Command::Threshold(t) => threshold(t)?,
        Command::Bandit(b) => bandit(b)?,
        Command::Cost(c) => {
            let total = estimate_cost(
                c.objects,
                Prices {
                    image: c.price_image,
                    input_per_1k: c.price_in,
                    output_per_1k: c.price_out,
                },
            )?;
            println!("{total}");
        }
        Command::Corpus(CorpusCmd::Synth {
            out,
            objects,
            mismatched,
            points,
        }) => {
            for m in synthetic_corpus(objects, &mismatched, points) {
                m.write_to_dir(&out.join(&m.object_id))?;
            }
            log::info!("wrote {objects} manifests to {}", out.display());
            println!("{}", out.display());
        }
    }
    Ok(())
}
