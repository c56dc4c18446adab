//! `key = value` run configuration shared by every party of a run.
//!
//! Blank lines and `#` comments are ignored. Party addresses are given as
//! `party.<id> = host:port` and pinned channel key ids as `pin.<id> = <hex>`.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use super::experiment::ExperimentConfig;
use super::HarnessError;
use crate::channel::{KeyId, PartyId};
use crate::explorer::{Budget, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    Tcp,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub transport: TransportKind,
    pub parties: BTreeMap<PartyId, String>,
    pub pins: HashMap<PartyId, KeyId>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: ExperimentConfig::default(),
            transport: TransportKind::InProc,
            parties: BTreeMap::new(),
            pins: HashMap::new(),
        }
    }
}

fn parse_key_id(s: &str) -> Option<KeyId> {
    let mut out = [0u8; 8];
    hex::decode_to_slice(s, &mut out).ok()?;
    Some(out)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

pub fn parse_run_config(text: &str) -> Result<RunConfig, HarnessError> {
    let mut rc = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| HarnessError::Config(format!("line {}: {msg}", i + 1));
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
        let bad = || err(format!("bad value {value:?} for {key}"));
        let e = &mut rc.experiment;
        let p = &mut e.protocol;
        macro_rules! num {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "n" => p.n_clients = num!(),
            "rounds" => p.rounds = num!(),
            "mode" => p.mode = value.parse().map_err(|_| bad())?,
            "shared_seed" => p.shared_seed = num!(),
            "f" => p.fraction_bits = num!(),
            "security_param" => p.security_bits = num!(),
            "local_epochs" => p.local_epochs = num!(),
            "secure" => p.secure = parse_bool(value).ok_or_else(bad)?,
            "timeout_secs" => p.phase_timeout = Duration::from_secs_f64(value.parse().map_err(|_| bad())?),
            "weight_bound" => p.weight_bound = num!(),
            "rng_seed" => p.rng_seed = if value == "os" { None } else { Some(num!()) },
            "transport" => {
                rc.transport = match value {
                    "inproc" => TransportKind::InProc,
                    "tcp" => TransportKind::Tcp,
                    _ => return Err(bad()),
                }
            }
            "families" => e.families = num!(),
            "per_family" => e.per_family = num!(),
            "noise" => e.noise_rate = num!(),
            "data_seed" => e.data_seed = num!(),
            "split_seed" => e.split_seed = num!(),
            "scheme" => e.scheme = value.parse().map_err(|_| bad())?,
            "strategies" => {
                e.client_strategies = value
                    .split(',')
                    .map(|s| s.trim().parse::<Strategy>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?
            }
            "budgets" => {
                e.client_budgets = value
                    .split(';')
                    .map(|s| s.trim().parse::<Budget>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?
            }
            "extract_strategy" => e.extract_strategy = value.parse().map_err(|_| bad())?,
            "extract_budget" => e.extract_budget = value.parse().map_err(|_| bad())?,
            "hidden" => e.hidden = num!(),
            "max_paths" => e.max_paths = num!(),
            "max_len" => e.max_len = num!(),
            "central_epochs" => e.central_epochs = num!(),
            "lr" => e.lr = num!(),
            "model_seed" => e.model_seed = num!(),
            _ => {
                if let Some(id) = key.strip_prefix("party.") {
                    let id: PartyId = id.parse().map_err(|_| err(format!("bad party id in {key}")))?;
                    rc.parties.insert(id, value.to_string());
                } else if let Some(id) = key.strip_prefix("pin.") {
                    let id: PartyId = id.parse().map_err(|_| err(format!("bad party id in {key}")))?;
                    rc.pins.insert(id, parse_key_id(value).ok_or_else(bad)?);
                } else {
                    return Err(err(format!("unknown key {key:?}")));
                }
            }
        }
    }
    rc.experiment.validate()?;
    if rc.transport == TransportKind::Tcp {
        let n = rc.experiment.protocol.n_clients as PartyId;
        if let Some(missing) = (0..=n).find(|id| !rc.parties.contains_key(id)) {
            return Err(HarnessError::Config(format!("tcp transport needs party.{missing}")));
        }
    }
    Ok(rc)
}
