//! Independent reference implementations and random generators shared by
//! the integration and acceptance tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, VecDeque};

use fedscdg::explorer::{EmitTemplate, ProgramModel, Slot, StateId, StateNode};
use fedscdg::fedproto::{aggregate, client_encrypt_update, client_party, keyclient_finalize, LocalUpdate};
use fedscdg::he::{henc, HeKeyPair};
use fedscdg::neuralnet::{backward, total_loss, ModelDims, ModelParams, PathBatch};
use fedscdg::scdg::{CallEvent, DepKinds, ExecutionTrace, Scdg, SysCallName, Token};
use num_bigint::BigInt;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub const NAMES: [&str; 5] = ["open", "read", "write", "close", "mmap"];

fn name(s: &str) -> SysCallName {
    SysCallName::new(s).unwrap()
}

fn random_token(rng: &mut ChaCha20Rng) -> Token {
    match rng.gen_range(0..4) {
        0 => Token::Concrete(format!("c{}", rng.gen_range(0..3))),
        1 => Token::Symbolic(format!("s{}", rng.gen_range(0..3))),
        2 => Token::Address(0x1000 + rng.gen_range(0..3)),
        _ => Token::Null,
    }
}

/// A trace of up to `max_events` calls over a small alphabet, so that
/// tokens, names and call sites collide often.
pub fn random_trace(rng: &mut ChaCha20Rng, max_events: usize) -> ExecutionTrace {
    let len = rng.gen_range(0..=max_events);
    let mut seq = 0u64;
    let events = (0..len)
        .map(|_| {
            seq += rng.gen_range(1..4);
            let n_args = rng.gen_range(0..=3);
            CallEvent {
                name: name(NAMES[rng.gen_range(0..NAMES.len())]),
                args: (0..n_args).map(|_| random_token(rng)).collect(),
                ret: if rng.gen_bool(0.7) { Some(random_token(rng)) } else { None },
                call_address: 0x400000 + 0x10 * rng.gen_range(0..3),
                seq_index: seq,
            }
        })
        .collect();
    ExecutionTrace::new(events).unwrap()
}

/// Quadratic reference: every pair of events of every trace is compared
/// directly and nodes are listed in first-seen order.
pub fn brute_force_scdg(traces: &[ExecutionTrace]) -> Scdg {
    let mut nodes: Vec<(SysCallName, u64)> = Vec::new();
    let id_of = |nodes: &mut Vec<(SysCallName, u64)>, e: &CallEvent| -> usize {
        let key = (e.name.clone(), e.call_address);
        match nodes.iter().position(|n| *n == key) {
            Some(i) => i,
            None => {
                nodes.push(key);
                nodes.len() - 1
            }
        }
    };
    let mut edges = Vec::new();
    for t in traces {
        let ev = t.events();
        for e in ev {
            id_of(&mut nodes, e);
        }
        for i in 0..ev.len() {
            for j in i + 1..ev.len() {
                let (a, b) = (&ev[i], &ev[j]);
                let mut argument = false;
                for x in &a.args {
                    for y in &b.args {
                        if *x != Token::Null && x == y {
                            argument = true;
                        }
                    }
                }
                let mut address = false;
                if let Some(r) = &a.ret {
                    for y in &b.args {
                        if *r != Token::Null && r == y {
                            address = true;
                        }
                    }
                }
                if argument || address {
                    let (s, d) = (id_of(&mut nodes, a), id_of(&mut nodes, b));
                    edges.push((s, d, DepKinds { argument, address }));
                }
            }
        }
    }
    Scdg::from_parts(nodes, edges).unwrap()
}

/// Event view with symbolic variables renamed by first appearance, so that
/// traces from different fresh-variable counters can be compared.
pub type Canonical = Vec<(String, u64, Vec<String>, Option<String>)>;

pub fn canonical(events: &[CallEvent]) -> Canonical {
    let mut names: HashMap<String, usize> = HashMap::new();
    let mut rename = |t: &Token| -> String {
        match t {
            Token::Symbolic(v) => {
                let n = names.len();
                format!("s:{}", names.entry(v.clone()).or_insert(n))
            }
            other => other.to_string(),
        }
    };
    events
        .iter()
        .map(|e| {
            let args = e.args.iter().map(&mut rename).collect();
            let ret = e.ret.as_ref().map(&mut rename);
            (e.name.as_str().to_string(), e.call_address, args, ret)
        })
        .collect()
}

fn random_slot(rng: &mut ChaCha20Rng, n: u32) -> Slot {
    match rng.gen_range(0..3) {
        0 => Slot::Fresh,
        1 => Slot::Literal(format!("k{}", rng.gen_range(0..2))),
        _ => Slot::FromRet(rng.gen_range(0..n)),
    }
}

/// Acyclic model on states `0..n`: successors always have larger ids.
pub fn random_dag(rng: &mut ChaCha20Rng, max_states: u32) -> ProgramModel {
    let n = rng.gen_range(1..=max_states);
    let states = (0..n)
        .map(|id| {
            let later: Vec<StateId> = (id + 1..n).collect();
            let k = match later.len() {
                0 => 0,
                _ if rng.gen_bool(0.2) => 0,
                1 => 1,
                _ => rng.gen_range(1..=2),
            };
            let mut successors = Vec::new();
            while successors.len() < k {
                let s = later[rng.gen_range(0..later.len())];
                if !successors.contains(&s) {
                    successors.push(s);
                }
            }
            let emits = rng.gen_bool(0.75).then(|| EmitTemplate {
                name: name(NAMES[rng.gen_range(0..NAMES.len())]),
                call_address: 0x10 * rng.gen_range(1..4),
                ret: random_slot(rng, n),
                args: (0..rng.gen_range(0..=2)).map(|_| random_slot(rng, n)).collect(),
            });
            StateNode { id, emits, successors }
        })
        .collect();
    ProgramModel::new(states, 0).unwrap()
}

/// One complete path of a model.
#[derive(Debug, Clone)]
pub struct PathInfo {
    pub states: Vec<StateId>,
    /// Successor index taken at every branching step.
    pub choices: Vec<usize>,
    pub events: Canonical,
}

/// Replays the emissions along `states` with a private variable counter.
pub fn emissions(model: &ProgramModel, states: &[StateId]) -> Canonical {
    let mut counter = 0;
    let mut rets: Vec<(StateId, Token)> = Vec::new();
    let mut events = Vec::new();
    for &id in states {
        let Some(t) = &model.state(id).unwrap().emits else {
            continue;
        };
        let mut inst = |slot: &Slot, rets: &[(StateId, Token)]| match slot {
            Slot::Fresh => {
                counter += 1;
                Token::Symbolic(format!("x{counter}"))
            }
            Slot::Literal(v) => Token::Concrete(v.clone()),
            Slot::FromRet(s) => rets
                .iter()
                .rev()
                .find(|(r, _)| r == s)
                .map_or(Token::Null, |(_, t)| t.clone()),
        };
        let args: Vec<Token> = t.args.iter().map(|s| inst(s, &rets)).collect();
        let ret = inst(&t.ret, &rets);
        rets.push((id, ret.clone()));
        events.push(CallEvent {
            name: t.name.clone(),
            args,
            ret: Some(ret),
            call_address: t.call_address,
            seq_index: events.len() as u64,
        });
    }
    canonical(&events)
}

/// Every entry-to-terminal path of an acyclic model, in lexicographic order
/// of successor choices.
pub fn enumerate_paths(model: &ProgramModel) -> Vec<PathInfo> {
    fn walk(model: &ProgramModel, states: &mut Vec<StateId>, choices: &mut Vec<usize>, out: &mut Vec<PathInfo>) {
        let node = model.state(*states.last().unwrap()).unwrap();
        if node.successors.is_empty() {
            out.push(PathInfo {
                states: states.clone(),
                choices: choices.clone(),
                events: emissions(model, states),
            });
            return;
        }
        for (i, &s) in node.successors.iter().enumerate() {
            states.push(s);
            choices.push(i);
            walk(model, states, choices, out);
            choices.pop();
            states.pop();
        }
    }
    let mut out = Vec::new();
    walk(model, &mut vec![model.entry()], &mut Vec::new(), &mut out);
    out
}

/// Breadth-first completion order: by path length, then by choices.
pub fn bfs_order(model: &ProgramModel) -> Vec<Canonical> {
    let mut paths = enumerate_paths(model);
    paths.sort_by(|a, b| a.states.len().cmp(&b.states.len()).then_with(|| a.choices.cmp(&b.choices)));
    paths.into_iter().map(|p| p.events).collect()
}

/// Depth-first discovery order re-sorted by trace length, longest first.
pub fn cdfs_order(model: &ProgramModel) -> Vec<Canonical> {
    let mut paths: Vec<Canonical> = enumerate_paths(model).into_iter().map(|p| p.events).collect();
    paths.sort_by(|a, b| b.len().cmp(&a.len()));
    paths
}

/// Hop distance from the entry to every reachable state.
fn distances(model: &ProgramModel) -> BTreeMap<StateId, usize> {
    let mut dist = BTreeMap::from([(model.entry(), 0)]);
    let mut queue = VecDeque::from([model.entry()]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        for &t in &model.state(s).unwrap().successors {
            dist.entry(t).or_insert_with(|| {
                queue.push_back(t);
                d + 1
            });
        }
    }
    dist
}

/// Checks that `traces` hold exactly one shortest path to each reachable
/// terminal state.
pub fn check_cbfs(model: &ProgramModel, traces: &[ExecutionTrace]) -> Result<(), String> {
    let dist = distances(model);
    let terminals: Vec<StateId> = dist
        .keys()
        .copied()
        .filter(|&s| model.state(s).unwrap().successors.is_empty())
        .collect();
    if traces.len() != terminals.len() {
        return Err(format!("{} traces for {} terminals", traces.len(), terminals.len()));
    }
    let paths = enumerate_paths(model);
    let candidates: Vec<Vec<Canonical>> = terminals
        .iter()
        .map(|t| {
            paths
                .iter()
                .filter(|p| p.states.last() == Some(t) && p.states.len() == dist[t] + 1)
                .map(|p| p.events.clone())
                .collect()
        })
        .collect();
    let got: Vec<Canonical> = traces.iter().map(|t| canonical(t.events())).collect();

    fn assign(i: usize, got: &[Canonical], cand: &[Vec<Canonical>], used: &mut Vec<bool>) -> bool {
        if i == got.len() {
            return true;
        }
        for t in 0..cand.len() {
            if !used[t] && cand[t].contains(&got[i]) {
                used[t] = true;
                if assign(i + 1, got, cand, used) {
                    return true;
                }
                used[t] = false;
            }
        }
        false
    }
    if assign(0, &got, &candidates, &mut vec![false; terminals.len()]) {
        Ok(())
    } else {
        Err("traces are not one shortest path per terminal".into())
    }
}

/// Largest relative error between `backward` and central differences of
/// `total_loss`, with `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(dims: ModelDims, seed: u64, step: f64, floor: f64) -> f64 {
    use rand::SeedableRng;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let params = ModelParams::random(dims, seed, 0.5).unwrap();
    let paths = (0..rng.gen_range(1..=3))
        .map(|_| (0..rng.gen_range(1..=4)).map(|_| rng.gen_range(0..dims.vocab)).collect())
        .collect();
    let batch = PathBatch::new(paths);
    let label = rng.gen_range(0..dims.families);
    let (_, grad) = backward(&batch, label, &params).unwrap();
    let theta = params.flatten();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for j in 0..theta.len() {
        let mut t = theta.clone();
        t[j] = theta[j] + step;
        probe.set_flat(&t).unwrap();
        let up = total_loss(&batch, label, &probe).unwrap();
        t[j] = theta[j] - step;
        probe.set_flat(&t).unwrap();
        let down = total_loss(&batch, label, &probe).unwrap();
        let numeric = (up - down) / (2.0 * step);
        let err = (grad[j] - numeric).abs() / grad[j].abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}

/// One masked-average trial: `n` clients with `len` weights in `[-8, 8]`
/// and a random mask. Returns the largest deviation from the plain mean, in
/// units of `2^-f`.
pub fn masked_average_trial(kp: &HeKeyPair, rng: &mut ChaCha20Rng, f: u8) -> (usize, usize, f64) {
    let n = rng.gen_range(1..=5);
    let len = rng.gen_range(1..=512);
    let ws: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..len).map(|_| rng.gen_range(-8.0..=8.0)).collect())
        .collect();
    let z: u64 = rng.gen_range(1..1u64 << 32);
    let z_bar = henc(&kp.pk, &BigInt::from(z), f, rng).unwrap();
    let updates: Vec<LocalUpdate> = ws
        .iter()
        .enumerate()
        .map(|(i, w)| LocalUpdate {
            round: 1,
            sender: client_party(i),
            ciphertext: client_encrypt_update(&kp.pk, w, &z_bar, f).unwrap(),
        })
        .collect();
    let sum = aggregate(&kp.pk, &updates, 1, n).unwrap();
    let got = keyclient_finalize(&sum, &kp.sk, z, n, f).unwrap();
    let unit = 2f64.powi(-(f as i32));
    let worst = (0..len)
        .map(|j| {
            let mean = ws.iter().map(|w| w[j]).sum::<f64>() / n as f64;
            (got[j] - mean).abs() / unit
        })
        .fold(0.0, f64::max);
    (n, len, worst)
}
