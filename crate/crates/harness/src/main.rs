use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use hostwise::agent::{Agent, AgentOptions};
use hostwise::config::Config;
use hostwise::store::WarcReader;
use hostwise::CrawlUrl;
use hostwise_harness::audit::{check_politeness, read_trace, write_trace};
use hostwise_harness::experiments::{self, report_line, ClusterParams, FrontParams, PolitenessParams, ScalingParams, Snapshot};
use hostwise_harness::server::{ServerOptions, SynthServer};
use hostwise_harness::synth::{SynthResolver, SyntheticWeb, SyntheticWebSpec};

#[derive(Parser)]
#[command(name = "hostwise", version, about = "Polite host-wise breadth-first crawler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one crawling agent.
    Crawl {
        #[arg(long)]
        config: PathBuf,
        /// File with one seed URL per line, in addition to `agent.seeds`.
        #[arg(long)]
        seed_urls: Option<PathBuf>,
        /// Serve this synthetic web in-process and crawl it through the proxy.
        #[arg(long)]
        synth_spec: Option<PathBuf>,
        /// Stop after this many seconds; by default run until idle.
        #[arg(long)]
        duration: Option<u64>,
        /// Interval between metrics lines, in milliseconds.
        #[arg(long, default_value_t = 5000)]
        report_ms: u64,
    },
    /// Serve a synthetic web until interrupted.
    Synthweb {
        #[arg(long)]
        spec: PathBuf,
        /// Append every request to this trace file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Check a request trace for politeness violations.
    Audit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 4000)]
        host_delay_ms: u64,
        #[arg(long, default_value_t = 500)]
        ip_delay_ms: u64,
    },
    /// List the records of a WARC file.
    WarcCat { file: PathBuf },
    /// Run the experiments described in a file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    politeness: Option<PolitenessParams>,
    scaling: Option<ScalingParams>,
    front: Option<FrontParams>,
    cluster: Option<ClusterParams>,
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Crawl {
            config,
            seed_urls,
            synth_spec,
            duration,
            report_ms,
        } => crawl(&config, seed_urls.as_deref(), synth_spec.as_deref(), duration, report_ms),
        Command::Synthweb { spec, trace } => synthweb(&spec, trace.as_deref()),
        Command::Audit {
            trace,
            host_delay_ms,
            ip_delay_ms,
        } => audit(&trace, host_delay_ms, ip_delay_ms),
        Command::WarcCat { file } => warc_cat(&file),
        Command::Experiment { config } => experiment(&config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn crawl(
    config_path: &Path,
    seed_urls: Option<&Path>,
    synth_spec: Option<&Path>,
    duration: Option<u64>,
    report_ms: u64,
) -> Result<ExitCode, Failure> {
    let mut config = Config::load(config_path)?;
    let mut options = AgentOptions::default();
    let mut server = None;
    if let Some(spec) = synth_spec {
        let web = SyntheticWeb::new(SyntheticWebSpec::load(spec)?);
        let s = SynthServer::start(web.clone(), ServerOptions { threads: 2, log: false })?;
        config.fetch.proxy = Some(s.addr());
        options.resolver = Arc::new(SynthResolver::new(web));
        eprintln!("synthetic web on {}", s.addr());
        server = Some(s);
    }
    let agent = Agent::start(config, options)?;
    if let Some(path) = seed_urls {
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match CrawlUrl::parse(line, None) {
                Ok(u) => agent.seed(u),
                Err(e) => eprintln!("skipping seed {line}: {e}"),
            }
        }
    }
    if let Some(addr) = agent.control_addr() {
        eprintln!("control on {addr}");
    }
    let start = Instant::now();
    let limit = duration.map(Duration::from_secs);
    let every = Duration::from_millis(report_ms.max(100));
    let mut prev = Snapshot::take(&agent, start);
    let mut idle_checks = 0;
    loop {
        std::thread::sleep(every);
        let cur = Snapshot::take(&agent, start);
        println!("{}", report_line(agent.name(), &prev, &cur));
        prev = cur;
        if limit.is_some_and(|l| start.elapsed() >= l) {
            break;
        }
        idle_checks = if agent.is_idle() { idle_checks + 1 } else { 0 };
        if limit.is_none() && idle_checks >= 2 {
            break;
        }
    }
    agent.stop()?;
    drop(server);
    Ok(ExitCode::SUCCESS)
}

fn synthweb(spec: &Path, trace: Option<&Path>) -> Result<ExitCode, Failure> {
    let web = SyntheticWeb::new(SyntheticWebSpec::load(spec)?);
    let server = SynthServer::start(
        web,
        ServerOptions {
            threads: 2,
            log: trace.is_some(),
        },
    )?;
    println!("serving on {}", server.addr());
    let mut out = match trace {
        Some(p) => Some(BufWriter::new(File::options().create(true).append(true).open(p)?)),
        None => None,
    };
    loop {
        std::thread::sleep(Duration::from_secs(1));
        if let Some(out) = out.as_mut() {
            write_trace(&server.drain_log(), &mut *out)?;
        }
    }
}

fn audit(trace: &Path, host_delay_ms: u64, ip_delay_ms: u64) -> Result<ExitCode, Failure> {
    let log = read_trace(BufReader::new(File::open(trace)?))?;
    let r = check_politeness(&log, host_delay_ms, ip_delay_ms);
    println!(
        "requests={} hosts={} ips={} host_violations={} ip_violations={} min_host_gap_ms={} min_ip_gap_ms={}",
        r.requests,
        r.hosts,
        r.ips,
        r.host_violations.len(),
        r.ip_violations.len(),
        r.min_host_gap.map_or("-".into(), |g| g.to_string()),
        r.min_ip_gap.map_or("-".into(), |g| g.to_string()),
    );
    for v in r.host_violations.iter().take(10) {
        println!("host {} requested at {} and {}", v.key, v.previous_ms, v.at_ms);
    }
    for v in r.ip_violations.iter().take(10) {
        println!("ip {} requested at {} and {}", v.key, v.previous_ms, v.at_ms);
    }
    Ok(if r.is_clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn warc_cat(file: &Path) -> Result<ExitCode, Failure> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut bad = 0;
    for record in WarcReader::open(file)? {
        match record {
            Ok(r) => writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.record_type().unwrap_or("-"),
                r.http_status().map_or("-".into(), |s| s.to_string()),
                r.header(hostwise::store::DIGEST_HEADER).unwrap_or("-"),
                r.target_uri().unwrap_or("-"),
            )?,
            Err(e) => {
                bad += 1;
                eprintln!("{e}");
            }
        }
    }
    Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn experiment(path: &Path) -> Result<ExitCode, Failure> {
    let file: ExperimentFile = toml::from_str(&std::fs::read_to_string(path)?)?;
    if let Some(p) = &file.politeness {
        let r = experiments::politeness(p, true)?;
        println!(
            "politeness: fetched={} requests={} host_violations={} ip_violations={} min_host_gap_ms={:?} min_ip_gap_ms={:?}",
            r.fetched,
            r.report.requests,
            r.report.host_violations.len(),
            r.report.ip_violations.len(),
            r.report.min_host_gap,
            r.report.min_ip_gap
        );
    }
    if let Some(p) = &file.scaling {
        for point in experiments::thread_scaling(p, true)? {
            println!("scaling: workers={} pages_per_s={:.1}", point.workers, point.pages_per_s);
        }
    }
    if let Some(p) = &file.front {
        for point in experiments::front_sweep(p, true)? {
            println!(
                "front: ip_delay_ms={} host_delay_ms={} front={:.1} required_front={} pages_per_s={:.1}",
                point.ip_delay_ms, point.host_delay_ms, point.front, point.required_front, point.pages_per_s
            );
        }
    }
    if let Some(p) = &file.cluster {
        let r = experiments::cluster(p, true)?;
        println!(
            "cluster: agents={} requests_per_s={:.1} completed={} archetypes={} duplicates={}",
            p.agents,
            r.requests_per_s,
            r.completed,
            r.archetype_urls.len(),
            r.duplicate_urls.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}
