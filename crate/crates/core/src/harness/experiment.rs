//! Centralised and federated experiments on a prepared split, with the
//! per-round accuracy CSV.

use std::io::Write;
use std::sync::mpsc::{channel, Sender};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::data::{
    exhaustive_budget, extract_graphs, family_specs, gen_programs, pool_vocabulary, split_dataset, DatasetSplit,
    LabelledGraph, SplitScheme, DEFAULT_NOISE,
};
use super::{accuracy, HarnessError};
use crate::explorer::{Budget, Strategy};
use crate::fedproto::{
    apply_update, run_protocol, select_shared_params, AggregationMode, LocalModel, ProtoError, ProtocolConfig,
    ProtocolRun,
};
use crate::neuralnet::{graph_to_paths, predict, AdamConfig, Example, ModelDims, ModelParams, Trainer, Vocabulary};

pub const CSV_HEADER: &str = "round,client,accuracy,mode,scheme";
/// Client column of the centralised baseline row.
pub const BASELINE_CLIENT: &str = "central";

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub families: usize,
    pub per_family: usize,
    pub noise_rate: f64,
    pub data_seed: u64,
    pub split_seed: u64,
    pub scheme: SplitScheme,
    /// Extraction of the single homogeneous dataset.
    pub extract_strategy: Strategy,
    pub extract_budget: Budget,
    /// Per-client extraction for the inhomogeneous scheme.
    pub client_strategies: Vec<Strategy>,
    pub client_budgets: Vec<Budget>,
    pub hidden: usize,
    pub max_paths: usize,
    pub max_len: usize,
    pub lr: f64,
    pub model_seed: u64,
    pub central_epochs: usize,
    /// Client count, rounds, local epochs, mode and HE settings.
    pub protocol: ProtocolConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            families: 5,
            per_family: 60,
            noise_rate: DEFAULT_NOISE,
            data_seed: 1,
            split_seed: 2,
            scheme: SplitScheme::Homogeneous,
            extract_strategy: Strategy::Bfs,
            extract_budget: exhaustive_budget(),
            client_strategies: vec![Strategy::Bfs, Strategy::Cbfs, Strategy::Cdfs],
            client_budgets: vec![
                Budget::new(12, 64, 8).expect("positive"),
                Budget::new(13, 64, 8).expect("positive"),
                Budget::new(9, 64, 8).expect("positive"),
            ],
            hidden: 32,
            max_paths: 8,
            max_len: 16,
            lr: 1e-3,
            model_seed: 3,
            central_epochs: 10,
            protocol: ProtocolConfig {
                security_bits: crate::he::MIN_SECURITY_BITS,
                rng_seed: Some(4),
                ..ProtocolConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.protocol.validate()?;
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.families < 2 {
            return bad(format!("need at least 2 families, got {}", self.families));
        }
        if self.hidden == 0 || self.max_paths == 0 || self.max_len == 0 {
            return bad("model dimensions must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        let n = self.protocol.n_clients;
        if self.scheme == SplitScheme::Inhomogeneous && (self.client_strategies.len() != n || self.client_budgets.len() != n) {
            return bad(format!(
                "{n} clients need {n} strategies and budgets, got {} and {}",
                self.client_strategies.len(),
                self.client_budgets.len()
            ));
        }
        Ok(())
    }

    pub fn dims(&self, vocab: &Vocabulary) -> ModelDims {
        ModelDims {
            max_paths: self.max_paths,
            max_len: self.max_len,
            ..ModelDims::new(vocab.len(), self.hidden, self.families)
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Graphs for the configured scheme: one extraction for homogeneous runs,
/// one per client (tagged by `source`) for inhomogeneous runs.
pub fn generate_graphs(cfg: &ExperimentConfig) -> Result<Vec<LabelledGraph>, HarnessError> {
    let specs = family_specs(cfg.families, cfg.per_family, cfg.noise_rate, cfg.data_seed)?;
    let programs = gen_programs(&specs, cfg.data_seed)?;
    match cfg.scheme {
        SplitScheme::Homogeneous => extract_graphs(&programs, cfg.extract_strategy, cfg.extract_budget, 0),
        SplitScheme::Inhomogeneous => {
            let mut out = Vec::new();
            for (k, (s, b)) in cfg.client_strategies.iter().zip(&cfg.client_budgets).enumerate() {
                out.extend(extract_graphs(&programs, *s, *b, k)?);
            }
            Ok(out)
        }
    }
}

pub fn to_examples(
    graphs: &[LabelledGraph],
    vocab: &Vocabulary,
    max_paths: usize,
    max_len: usize,
) -> Result<Vec<Example>, HarnessError> {
    graphs
        .iter()
        .map(|g| {
            Ok(Example {
                batch: graph_to_paths(&g.graph, vocab, max_paths, max_len)?,
                label: g.label,
            })
        })
        .collect()
}

/// Predicted families of `data` compared against the labels.
pub fn evaluate(params: &ModelParams, data: &[Example]) -> Result<f64, HarnessError> {
    let y: Vec<usize> = data.iter().map(|e| e.label).collect();
    let y_hat = data
        .iter()
        .map(|e| predict(&e.batch, params))
        .collect::<Result<Vec<_>, _>>()?;
    accuracy(&y, &y_hat)
}

/// `epochs` passes over `data`, each in a fresh seeded order.
pub fn train_epochs(trainer: &mut Trainer, data: &[Example], epochs: usize, rng: &mut ChaCha20Rng) -> Result<(), HarnessError> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            trainer.step(&data[i])?;
        }
    }
    Ok(())
}

/// A configured experiment with its split and tokenised examples.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub vocab: Vocabulary,
    pub split: DatasetSplit,
    pub train: Vec<Vec<Example>>,
    /// Evaluation set of each client.
    pub test: Vec<Vec<Example>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u32,
    /// Test accuracy of each client, in client order.
    pub accuracies: Vec<f64>,
    pub baseline: f64,
}

#[derive(Debug)]
pub struct FederatedOutcome {
    /// Round 0 holds the untrained accuracies.
    pub reports: Vec<RoundReport>,
    pub baseline: f64,
    pub run: Option<ProtocolRun>,
}

impl FederatedOutcome {
    pub fn final_accuracies(&self) -> &[f64] {
        &self.reports.last().expect("round 0 is always present").accuracies
    }
}

/// `(round, client index, test accuracy)` reported after every round.
pub type Evaluation = (u32, usize, Result<f64, HarnessError>);

/// A client's model, optimiser and data; evaluates itself on its test set
/// after every round and reports to `sink`.
pub struct ClientModel<'a> {
    index: usize,
    trainer: Trainer,
    data: &'a [Example],
    test: &'a [Example],
    rng: ChaCha20Rng,
    sink: Sender<Evaluation>,
}

impl LocalModel for ClientModel<'_> {
    fn shared_params(&self, mode: AggregationMode) -> Vec<f64> {
        select_shared_params(&self.trainer.params, mode)
    }

    fn apply_shared(&mut self, w: &[f64], mode: AggregationMode) -> Result<(), ProtoError> {
        apply_update(&mut self.trainer.params, w, mode)
    }

    fn train_local(&mut self, _round: u32, epochs: usize) -> Result<(), ProtoError> {
        train_epochs(&mut self.trainer, self.data, epochs, &mut self.rng).map_err(|e| match e {
            HarnessError::Nn(e) => ProtoError::Nn(e),
            other => ProtoError::Malformed(other.to_string()),
        })
    }

    fn round_finished(&mut self, round: u32, _applied: bool) {
        let acc = evaluate(&self.trainer.params, self.test);
        let _ = self.sink.send((round, self.index, acc));
    }
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let graphs = generate_graphs(&config)?;
        Experiment::from_graphs(config, &graphs)
    }

    /// Splits already extracted graphs as configured.
    pub fn from_graphs(config: ExperimentConfig, graphs: &[LabelledGraph]) -> Result<Self, HarnessError> {
        config.validate()?;
        if let Some(g) = graphs.iter().find(|g| g.label >= config.families) {
            return Err(HarnessError::Config(format!(
                "label {} outside the {} configured families",
                g.label, config.families
            )));
        }
        let n = config.protocol.n_clients;
        let split = split_dataset(graphs, config.scheme, n, config.split_seed)?;
        let vocab = pool_vocabulary();
        let ex = |g: &[LabelledGraph]| to_examples(g, &vocab, config.max_paths, config.max_len);
        let train = split.train.iter().map(|t| ex(t)).collect::<Result<Vec<_>, _>>()?;
        let test = (0..n).map(|k| ex(split.test_for(k))).collect::<Result<Vec<_>, _>>()?;
        Ok(Experiment {
            config,
            vocab,
            split,
            train,
            test,
        })
    }

    /// Client `k` starting from `init`, with its own shuffling stream.
    pub fn client_model(&self, k: usize, init: ModelParams, sink: Sender<Evaluation>) -> ClientModel<'_> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.config.model_seed);
        rng.set_stream(k as u64 + 1);
        ClientModel {
            index: k,
            trainer: Trainer::new(init, self.config.adam()),
            data: &self.train[k],
            test: &self.test[k],
            rng,
            sink,
        }
    }

    pub fn initial_params(&self) -> Result<ModelParams, HarnessError> {
        Ok(ModelParams::init(self.config.dims(&self.vocab), self.config.model_seed)?)
    }

    /// Union of the client evaluation sets without duplicates.
    pub fn test_union(&self) -> Vec<Example> {
        match self.config.scheme {
            SplitScheme::Homogeneous => self.test[0].clone(),
            SplitScheme::Inhomogeneous => self.test.iter().flatten().cloned().collect(),
        }
    }

    /// Trains one model on the union of the training parts.
    pub fn train_central(&self, epochs: usize) -> Result<ModelParams, HarnessError> {
        let data: Vec<Example> = self.train.iter().flatten().cloned().collect();
        let mut trainer = Trainer::new(self.initial_params()?, self.config.adam());
        let mut rng = ChaCha20Rng::seed_from_u64(self.config.model_seed);
        train_epochs(&mut trainer, &data, epochs, &mut rng)?;
        Ok(trainer.params)
    }

    pub fn centralized(&self) -> Result<f64, HarnessError> {
        let params = self.train_central(self.config.central_epochs)?;
        evaluate(&params, &self.test_union())
    }

    /// Runs the protocol with one model per client and writes every
    /// evaluation to `csv`. Rows gathered before a failure are still written.
    pub fn federated(
        &self,
        protocol: &ProtocolConfig,
        baseline: f64,
        csv: &mut dyn Write,
    ) -> Result<FederatedOutcome, HarnessError> {
        let n = self.config.protocol.n_clients;
        if protocol.n_clients != n {
            return Err(HarnessError::Config(format!(
                "protocol has {} clients, the split has {n}",
                protocol.n_clients
            )));
        }
        let init = self.initial_params()?;
        let (tx, rx) = channel();
        let mut clients: Vec<ClientModel> = (0..n).map(|k| self.client_model(k, init.clone(), tx.clone())).collect();
        drop(tx);
        for c in &mut clients {
            c.round_finished(0, false);
        }
        let result = if protocol.rounds == 0 {
            Ok(None)
        } else {
            run_protocol(protocol, &mut clients).map(Some)
        };
        drop(clients);

        let mut rows: Vec<Evaluation> = rx.into_iter().collect();
        rows.sort_by_key(|r| (r.0, r.1));
        let reports = write_csv(csv, &rows, baseline, protocol.mode, self.config.scheme, n)?;
        let run = result?;
        if let Some((_, _, Err(e))) = rows.into_iter().find(|r| r.2.is_err()) {
            return Err(e);
        }
        Ok(FederatedOutcome { reports, baseline, run })
    }
}

/// Writes the header, the baseline row and one row per successful
/// evaluation (sorted by round then client), and groups them into reports.
pub fn write_csv(
    csv: &mut dyn Write,
    rows: &[Evaluation],
    baseline: f64,
    mode: AggregationMode,
    scheme: SplitScheme,
    n_clients: usize,
) -> Result<Vec<RoundReport>, HarnessError> {
    let mode = mode.to_string();
    let scheme = scheme.to_string();
    let mut out = csv::Writer::from_writer(csv);
    out.write_record(CSV_HEADER.split(','))?;
    let row = |round: u32, client: String, acc: f64| [round.to_string(), client, acc.to_string(), mode.clone(), scheme.clone()];
    out.write_record(row(0, BASELINE_CLIENT.to_string(), baseline))?;
    let mut reports: Vec<RoundReport> = Vec::new();
    for (round, k, acc) in rows {
        let Ok(acc) = acc else { continue };
        out.write_record(row(*round, (k + 1).to_string(), *acc))?;
        if reports.last().map(|r| r.round) != Some(*round) {
            reports.push(RoundReport {
                round: *round,
                accuracies: Vec::with_capacity(n_clients),
                baseline,
            });
        }
        reports.last_mut().expect("pushed above").accuracies.push(*acc);
    }
    out.flush()?;
    Ok(reports)
}

pub fn run_centralized(cfg: &ExperimentConfig) -> Result<f64, HarnessError> {
    Experiment::prepare(cfg.clone())?.centralized()
}

/// Prepares the data, computes the centralised baseline and runs the
/// protocol configured in `cfg.protocol`.
pub fn run_federated(cfg: &ExperimentConfig, csv: &mut dyn Write) -> Result<FederatedOutcome, HarnessError> {
    let exp = Experiment::prepare(cfg.clone())?;
    let baseline = exp.centralized()?;
    exp.federated(&cfg.protocol, baseline, csv)
}
