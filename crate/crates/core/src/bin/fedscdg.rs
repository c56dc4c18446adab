//! Command line front end: data generation, extraction, centralised and
//! federated training, and accuracy reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 protocol abort, 1 other
//! failures.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::sync::mpsc::channel;

use clap::{Parser, Subcommand};
use fedscdg::channel::{bind_address, keypair_gen, TcpEndpoint};
use fedscdg::explorer::{explore, parse_model, Budget, Strategy};
use fedscdg::fedproto::{channel_keys, client_party, run_party, LocalModel, PartyContext, ProtoError};
use fedscdg::harness::{
    generate_graphs, parse_run_config, read_dataset, report, write_csv, write_dataset, Evaluation, Experiment,
    HarnessError, RunConfig, TransportKind,
};
use fedscdg::scdg::{build_scdg, format_traces};

#[derive(Parser)]
#[command(name = "fedscdg", version, about = "Federated malware family classification over SCDGs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic families and extract their graphs.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explore a program model file and print its traces and graph.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "bfs")]
        strategy: Strategy,
        /// `<states>,<length>,<traces>`
        #[arg(long, default_value = "4096,256,64")]
        budget: Budget,
        #[arg(long)]
        traces: bool,
    },
    /// Train one model on the union of the training parts.
    TrainCentral {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Graphs written by `gen-data`; generated from the config if absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the federated protocol and write the per-round accuracy CSV.
    FedRun {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
        /// Run every party as a thread of this process.
        #[arg(long)]
        inproc: bool,
    },
    /// One party of a multi-process run.
    #[command(hide = true)]
    Party {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        id: u16,
    },
    /// Summarise an accuracy CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        /// Write gnuplot-ready columns here.
        #[arg(long)]
        gnuplot: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Abort(String),
    Other(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Parse { .. } => Failure::Config(e.to_string()),
            HarnessError::Proto(ProtoError::Config(_)) => Failure::Config(e.to_string()),
            HarnessError::Proto(_) => Failure::Abort(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<ProtoError> for Failure {
    fn from(e: ProtoError) -> Self {
        HarnessError::from(e).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(parse_run_config(&read(p)?)?),
        None => Ok(RunConfig::default()),
    }
}

fn load_experiment(rc: &RunConfig, data: Option<&Path>) -> Result<Experiment, Failure> {
    let cfg = rc.experiment.clone();
    match data {
        Some(p) => Ok(Experiment::from_graphs(cfg, &read_dataset(&read(p)?)?)?),
        None => Ok(Experiment::prepare(cfg)?),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Cmd::GenData { config, out } => {
            let rc = load_config(config.as_deref())?;
            let graphs = generate_graphs(&rc.experiment)?;
            fs::write(&out, write_dataset(&graphs))?;
            println!("{} graphs written to {}", graphs.len(), out.display());
        }
        Cmd::Extract {
            model,
            strategy,
            budget,
            traces,
        } => {
            let model = parse_model(&read(&model)?).map_err(|e| Failure::Config(e.to_string()))?;
            let found = explore(&model, strategy, budget).map_err(|e| Failure::Config(e.to_string()))?;
            if traces {
                print!("{}", format_traces(&found));
            }
            print!("{}", build_scdg(&found).serialize());
        }
        Cmd::TrainCentral { config, data } => {
            let rc = load_config(config.as_deref())?;
            let exp = load_experiment(&rc, data.as_deref())?;
            println!("accuracy {}", exp.centralized()?);
        }
        Cmd::FedRun {
            config,
            data,
            csv,
            inproc,
        } => {
            let rc = load_config(config.as_deref())?;
            let exp = load_experiment(&rc, data.as_deref())?;
            let baseline = exp.centralized()?;
            let mut file = fs::File::create(&csv)?;
            if inproc || rc.transport == TransportKind::InProc {
                let outcome = exp.federated(&rc.experiment.protocol, baseline, &mut file)?;
                let aborted = outcome.run.as_ref().map(|r| r.aborted_rounds()).unwrap_or_default();
                print!("{}", report(&read(&csv)?)?.table());
                if !aborted.is_empty() {
                    return Err(Failure::Abort(format!("rounds {aborted:?} aborted")));
                }
            } else {
                let config = config.ok_or_else(|| Failure::Config("tcp runs need --config".into()))?;
                spawn_parties(&rc, &config, data.as_deref(), baseline, &mut file)?;
                print!("{}", report(&read(&csv)?)?.table());
            }
        }
        Cmd::Party { config, data, id } => {
            let rc = load_config(Some(&config))?;
            run_tcp_party(&rc, data.as_deref(), id)?;
        }
        Cmd::Report { csv, gnuplot } => {
            let summary = report(&read(&csv)?)?;
            print!("{}", summary.table());
            if let Some(path) = gnuplot {
                fs::write(path, summary.gnuplot_data())?;
            }
        }
    }
    Ok(())
}

/// Starts the aggregator and every client as child processes and gathers
/// the accuracies the clients print.
fn spawn_parties(
    rc: &RunConfig,
    config: &Path,
    data: Option<&Path>,
    baseline: f64,
    csv: &mut dyn Write,
) -> Result<(), Failure> {
    let exe = std::env::current_exe()?;
    let n = rc.experiment.protocol.n_clients;
    let mut children = Vec::with_capacity(n + 1);
    for id in 0..=n as u16 {
        let mut cmd = Command::new(&exe);
        cmd.arg("party").arg("--config").arg(config).arg("--id").arg(id.to_string());
        if let Some(d) = data {
            cmd.arg("--data").arg(d);
        }
        cmd.env_remove(fedscdg::channel::BIND_ENV).stdout(Stdio::piped());
        children.push((id, cmd.spawn()?));
    }
    let mut rows: Vec<Evaluation> = Vec::new();
    let mut worst = 0;
    for (id, mut child) in children {
        if let Some(out) = child.stdout.take() {
            for line in BufReader::new(out).lines() {
                let line = line?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if let ["acc", round, acc] = f[..] {
                    if let (Ok(r), Ok(a)) = (round.parse(), acc.parse()) {
                        rows.push((r, id as usize - 1, Ok(a)));
                    }
                }
            }
        }
        let code = child.wait()?.code().unwrap_or(1);
        worst = worst.max(code);
    }
    rows.sort_by_key(|r| (r.0, r.1));
    write_csv(
        csv,
        &rows,
        baseline,
        rc.experiment.protocol.mode,
        rc.experiment.scheme,
        n,
    )?;
    match worst {
        0 => Ok(()),
        2 => Err(Failure::Config("a party rejected the configuration".into())),
        3 => Err(Failure::Abort("a party reported a protocol abort".into())),
        c => Err(Failure::Other(format!("a party exited with code {c}"))),
    }
}

fn run_tcp_party(rc: &RunConfig, data: Option<&Path>, id: u16) -> Result<(), Failure> {
    let proto = &rc.experiment.protocol;
    let n = proto.n_clients;
    if id as usize > n {
        return Err(Failure::Config(format!("party id {id} outside 0..={n}")));
    }
    let addr_of = |p: u16| {
        rc.parties
            .get(&p)
            .ok_or_else(|| Failure::Config(format!("missing party.{p}")))
    };
    let mut peers: HashMap<u16, SocketAddr> = HashMap::new();
    for p in (0..=n as u16).filter(|&p| p != id) {
        let a = addr_of(p)?;
        let sock = a
            .parse()
            .map_err(|_| Failure::Config(format!("party.{p} = {a} is not a socket address")))?;
        peers.insert(p, sock);
    }
    let listen = bind_address(addr_of(id)?);
    let transport = TcpEndpoint::bind(id, &listen, peers, proto.phase_timeout)
        .map_err(|e| Failure::Config(format!("bind {listen}: {e}")))?;
    let mut pins = rc.pins.clone();
    let keys = if proto.rng_seed.is_some() {
        let all = channel_keys(proto);
        for (p, k) in all.iter().enumerate() {
            pins.entry(p as u16).or_insert_with(|| k.public().key_id());
        }
        all[id as usize].clone()
    } else {
        keypair_gen(&mut rand::rngs::OsRng)
    };
    let ctx = PartyContext {
        id,
        config: proto.clone(),
        transport,
        keys,
        pins,
    };

    let party_report = if id == 0 {
        run_party(ctx, None)?
    } else {
        let exp = load_experiment(rc, data)?;
        let k = id as usize - 1;
        debug_assert_eq!(client_party(k), id);
        let (tx, rx) = channel();
        let mut model = exp.client_model(k, exp.initial_params()?, tx);
        model.round_finished(0, false);
        let result = run_party(ctx, Some(&mut model as &mut dyn LocalModel));
        drop(model);
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        for (round, _, acc) in rx {
            writeln!(out, "acc {round} {}", acc?)?;
        }
        result?
    };
    let aborted = party_report.aborted_rounds();
    if aborted.is_empty() {
        Ok(())
    } else {
        Err(Failure::Abort(format!("rounds {aborted:?} aborted")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Abort(m)) => {
            eprintln!("error: protocol abort: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
