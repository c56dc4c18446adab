//! Synthetic malware families, noisy program instances, extraction into
//! graphs, and stratified train/test splits.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::HarnessError;
use crate::explorer::{explore, Budget, EmitTemplate, ProgramModel, Slot, StateId, StateNode, Strategy};
use crate::neuralnet::Vocabulary;
use crate::scdg::{build_scdg, Scdg, SysCallName};

/// Windows API names every family and every noise call draws from.
pub const SYSCALL_POOL: [&str; 32] = [
    "NtCreateFile",
    "NtReadFile",
    "NtWriteFile",
    "NtClose",
    "NtOpenKey",
    "NtSetValueKey",
    "NtQueryValueKey",
    "NtDeleteKey",
    "NtAllocateVirtualMemory",
    "NtProtectVirtualMemory",
    "NtWriteVirtualMemory",
    "NtCreateThreadEx",
    "NtOpenProcess",
    "NtQueryInformationProcess",
    "NtCreateSection",
    "NtMapViewOfSection",
    "LoadLibraryA",
    "GetProcAddress",
    "GetModuleFileNameA",
    "CopyFileA",
    "CreateMutexA",
    "RegOpenKeyExA",
    "RegSetValueExA",
    "InternetOpenA",
    "InternetConnectA",
    "HttpSendRequestA",
    "CreateProcessA",
    "WinExec",
    "Sleep",
    "GetTickCount",
    "FindFirstFileA",
    "FindNextFileA",
];

pub const DEFAULT_NOISE: f64 = 0.1;
/// Distinct call names in one family motif.
pub const MOTIF_NAMES: usize = 8;
const MOTIF_CALLS: usize = 13;
const LITERALS_PER_FAMILY: usize = 3;
const CHAIN_PROB: f64 = 0.6;
const NOISE_CHAIN_PROB: f64 = 0.3;
const NOISE_ADDRESS_BASE: u64 = 0x0070_0000;

/// Budget large enough to exhaust every generated program.
pub fn exhaustive_budget() -> Budget {
    Budget::new(4096, 256, 64).expect("positive fields")
}

/// Token vocabulary over the whole pool; it carries no family information.
pub fn pool_vocabulary() -> Vocabulary {
    Vocabulary::new(SYSCALL_POOL.iter().map(|n| SysCallName::new(n).expect("valid pool name")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFamilySpec {
    pub family: usize,
    pub motif: ProgramModel,
    pub noise_rate: f64,
    pub instances: usize,
}

/// One noisy instance of a family motif.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProgram {
    pub id: usize,
    pub label: usize,
    pub model: ProgramModel,
}

/// An extracted graph with its family label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledGraph {
    /// Index of the program it was extracted from.
    pub program: usize,
    /// Which extraction produced it; per-client extractions use the client index.
    pub source: usize,
    pub label: usize,
    pub graph: Scdg,
}

fn emitting(name: &str, addr: u64, ret: Slot, args: Vec<Slot>) -> Option<EmitTemplate> {
    Some(EmitTemplate {
        name: SysCallName::new(name).expect("valid pool name"),
        call_address: addr,
        ret,
        args,
    })
}

/// Successor lists of the motif layout: emitting states `0..13`, branch states
/// 13 and 14.
///
/// ```text
/// 0 → 1 → 2 → 3 → 13 ┬→ 4 → 5 → 6
///                    └→ 7 → 8 → 9 → 14 ┬→ 10 → 11
///                                      └→ 12
/// ```
const MOTIF_SUCCESSORS: [(StateId, &[StateId]); 15] = [
    (0, &[1]),
    (1, &[2]),
    (2, &[3]),
    (3, &[13]),
    (13, &[4, 7]),
    (4, &[5]),
    (5, &[6]),
    (6, &[]),
    (7, &[8]),
    (8, &[9]),
    (9, &[14]),
    (14, &[10, 12]),
    (10, &[11]),
    (11, &[]),
    (12, &[]),
];

/// Nearest emitting ancestor in the motif layout.
fn motif_previous(id: StateId) -> Option<StateId> {
    match id {
        0 => None,
        4 | 7 => Some(3),
        10 | 12 => Some(9),
        _ => Some(id - 1),
    }
}

impl SyntheticFamilySpec {
    /// Draws the motif of `family` from `seed`; the same pair always yields
    /// the same motif.
    pub fn generate(family: usize, seed: u64, noise_rate: f64, instances: usize) -> Result<Self, HarnessError> {
        if !(0.0..1.0).contains(&noise_rate) {
            return Err(HarnessError::Config(format!("noise rate {noise_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(family as u64);
        let mut names: Vec<&str> = sample(&mut rng, SYSCALL_POOL.len(), MOTIF_NAMES)
            .into_iter()
            .map(|i| SYSCALL_POOL[i])
            .collect();
        names.shuffle(&mut rng);
        for _ in MOTIF_NAMES..MOTIF_CALLS {
            let pick = names[rng.gen_range(0..MOTIF_NAMES)];
            names.push(pick);
        }
        let literals: Vec<String> = (0..LITERALS_PER_FAMILY).map(|j| format!("h{family}_{j}")).collect();
        let base = 0x0040_1000 + 0x1000 * family as u64;

        let mut states = Vec::with_capacity(MOTIF_SUCCESSORS.len());
        for (id, succ) in MOTIF_SUCCESSORS {
            let emits = if (id as usize) < MOTIF_CALLS {
                let mut args = Vec::with_capacity(2);
                match motif_previous(id) {
                    Some(prev) if rng.gen_bool(CHAIN_PROB) => args.push(Slot::FromRet(prev)),
                    _ => args.push(Slot::Literal(literals[rng.gen_range(0..LITERALS_PER_FAMILY)].clone())),
                }
                if rng.gen_bool(0.5) {
                    args.push(Slot::Literal(literals[rng.gen_range(0..LITERALS_PER_FAMILY)].clone()));
                }
                emitting(names[id as usize], base + 0x10 * id as u64, Slot::Fresh, args)
            } else {
                None
            };
            states.push(StateNode {
                id,
                emits,
                successors: succ.to_vec(),
            });
        }
        let motif = ProgramModel::new(states, 0)?;
        Ok(SyntheticFamilySpec {
            family,
            motif,
            noise_rate,
            instances,
        })
    }

    /// The motif with a random pool call inserted before each emitting state
    /// with probability `noise_rate`.
    pub fn perturb<R: Rng>(&self, rng: &mut R) -> Result<ProgramModel, HarnessError> {
        let mut states: BTreeMap<StateId, StateNode> = self.motif.states().map(|s| (s.id, s.clone())).collect();
        let mut entry = self.motif.entry();
        let mut next_id = states.keys().next_back().map_or(0, |k| k + 1);
        let originals: Vec<StateId> = states.keys().copied().collect();
        for id in originals {
            if states[&id].emits.is_none() || !rng.gen_bool(self.noise_rate) {
                continue;
            }
            let pick = rng.gen_range(0..SYSCALL_POOL.len());
            let arg = match motif_previous(id) {
                Some(prev) if rng.gen_bool(NOISE_CHAIN_PROB) => Slot::FromRet(prev),
                _ => Slot::Fresh,
            };
            let noise = StateNode {
                id: next_id,
                emits: emitting(
                    SYSCALL_POOL[pick],
                    NOISE_ADDRESS_BASE + 0x10 * pick as u64,
                    Slot::Fresh,
                    vec![arg],
                ),
                successors: vec![id],
            };
            for s in states.values_mut() {
                for succ in s.successors.iter_mut() {
                    if *succ == id {
                        *succ = next_id;
                    }
                }
            }
            if entry == id {
                entry = next_id;
            }
            states.insert(next_id, noise);
            next_id += 1;
        }
        Ok(ProgramModel::new(states.into_values().collect(), entry)?)
    }
}

/// Family specs `0..n_families`, each with `per_family` instances.
pub fn family_specs(
    n_families: usize,
    per_family: usize,
    noise_rate: f64,
    seed: u64,
) -> Result<Vec<SyntheticFamilySpec>, HarnessError> {
    if n_families < 2 {
        return Err(HarnessError::Config(format!("need at least 2 families, got {n_families}")));
    }
    (0..n_families)
        .map(|f| SyntheticFamilySpec::generate(f, seed, noise_rate, per_family))
        .collect()
}

/// Noisy program instances, family by family.
pub fn gen_programs(specs: &[SyntheticFamilySpec], seed: u64) -> Result<Vec<SyntheticProgram>, HarnessError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut out = Vec::new();
    for spec in specs {
        for _ in 0..spec.instances {
            out.push(SyntheticProgram {
                id: out.len(),
                label: spec.family,
                model: spec.perturb(&mut rng)?,
            });
        }
    }
    Ok(out)
}

/// Explores every program; programs whose exploration records no event
/// within the budget are dropped.
pub fn extract_graphs(
    programs: &[SyntheticProgram],
    strategy: Strategy,
    budget: Budget,
    source: usize,
) -> Result<Vec<LabelledGraph>, HarnessError> {
    let mut out = Vec::with_capacity(programs.len());
    for p in programs {
        let traces = explore(&p.model, strategy, budget)?;
        let graph = build_scdg(&traces);
        if graph.node_count() == 0 {
            continue;
        }
        out.push(LabelledGraph {
            program: p.id,
            source,
            label: p.label,
            graph,
        });
    }
    Ok(out)
}

/// Default dataset: noise 0.1, exhaustive BFS extraction.
pub fn gen_synthetic_dataset(n_families: usize, per_family: usize, seed: u64) -> Result<Vec<LabelledGraph>, HarnessError> {
    let specs = family_specs(n_families, per_family, DEFAULT_NOISE, seed)?;
    let programs = gen_programs(&specs, seed)?;
    extract_graphs(&programs, Strategy::Bfs, exhaustive_budget(), 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitScheme {
    Homogeneous,
    Inhomogeneous,
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitScheme::Homogeneous => "homogeneous",
            SplitScheme::Inhomogeneous => "inhomogeneous",
        })
    }
}

impl FromStr for SplitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "homogeneous" | "homo" => Ok(SplitScheme::Homogeneous),
            "inhomogeneous" | "inhomo" => Ok(SplitScheme::Inhomogeneous),
            _ => Err(format!("unknown split scheme {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub scheme: SplitScheme,
    pub train: Vec<Vec<LabelledGraph>>,
    /// One shared set for homogeneous splits, one per client otherwise.
    pub test: Vec<Vec<LabelledGraph>>,
}

impl DatasetSplit {
    /// Evaluation set of client `k`.
    pub fn test_for(&self, k: usize) -> &[LabelledGraph] {
        match self.scheme {
            SplitScheme::Homogeneous => &self.test[0],
            SplitScheme::Inhomogeneous => &self.test[k],
        }
    }

    pub fn train_union(&self) -> Vec<LabelledGraph> {
        self.train.iter().flatten().cloned().collect()
    }

    pub fn test_union(&self) -> Vec<LabelledGraph> {
        self.test.iter().flatten().cloned().collect()
    }
}

/// Homogeneous: 10% shared test set, the rest in `n` equal training parts.
/// Inhomogeneous: `data` holds one extraction per client (`source` `0..n`),
/// each split 75/25. Both are stratified by family.
pub fn split_dataset(
    data: &[LabelledGraph],
    scheme: SplitScheme,
    n: usize,
    seed: u64,
) -> Result<DatasetSplit, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Config("need at least one client".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    match scheme {
        SplitScheme::Homogeneous => {
            let total = data.len();
            let test = (total + 5) / 10;
            let part = (total - test) / n;
            if part == 0 || test == 0 {
                return Err(HarnessError::InsufficientData(format!(
                    "{total} graphs cannot fill a test set and {n} parts"
                )));
            }
            let mut sizes = vec![test];
            sizes.extend(std::iter::repeat(part).take(n));
            let leftover = total - test - n * part;
            if leftover > 0 {
                sizes.push(leftover);
            }
            let mut groups = stratified_groups(data, &sizes, &mut rng);
            groups.truncate(n + 1);
            let test_set = groups.remove(0);
            Ok(DatasetSplit {
                scheme,
                train: groups,
                test: vec![test_set],
            })
        }
        SplitScheme::Inhomogeneous => {
            let mut train = Vec::with_capacity(n);
            let mut test = Vec::with_capacity(n);
            for k in 0..n {
                let own: Vec<LabelledGraph> = data.iter().filter(|g| g.source == k).cloned().collect();
                let t = (own.len() + 2) / 4;
                if t == 0 || t == own.len() {
                    return Err(HarnessError::InsufficientData(format!(
                        "client {k} extracted {} graphs",
                        own.len()
                    )));
                }
                let mut groups = stratified_groups(&own, &[own.len() - t, t], &mut rng);
                test.push(groups.pop().expect("two groups"));
                train.push(groups.pop().expect("two groups"));
            }
            if data.iter().any(|g| g.source >= n) {
                return Err(HarnessError::Config(format!("graph sources must lie in 0..{n}")));
            }
            Ok(DatasetSplit { scheme, train, test })
        }
    }
}

/// Splits `data` into groups of the given sizes (summing to `data.len()`)
/// so that every group holds the floor or ceiling of its proportional share
/// of each family.
fn stratified_groups<R: Rng>(data: &[LabelledGraph], sizes: &[usize], rng: &mut R) -> Vec<Vec<LabelledGraph>> {
    let total = data.len();
    debug_assert_eq!(sizes.iter().sum::<usize>(), total);
    let mut by_family: BTreeMap<usize, Vec<&LabelledGraph>> = BTreeMap::new();
    for g in data {
        by_family.entry(g.label).or_default().push(g);
    }
    let counts: Vec<usize> = by_family.values().map(Vec::len).collect();
    let alloc = controlled_rounding(sizes, &counts);

    let mut groups: Vec<Vec<LabelledGraph>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (f, members) in by_family.values_mut().enumerate() {
        members.shuffle(rng);
        let mut it = members.iter();
        for (g, group) in groups.iter_mut().enumerate() {
            group.extend(it.by_ref().take(alloc[g][f]).map(|x| (*x).clone()));
        }
    }
    for group in &mut groups {
        group.shuffle(rng);
    }
    groups
}

/// Integer matrix with row sums `rows`, column sums `cols`, and every entry
/// equal to the floor or ceiling of `rows[g] * cols[f] / total`.
///
/// Starts from the floors and distributes the remaining units by augmenting
/// paths over the cells with a fractional share.
fn controlled_rounding(rows: &[usize], cols: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = cols.iter().sum();
    let mut alloc: Vec<Vec<usize>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| r * c / total.max(1)).collect())
        .collect();
    let frac = |g: usize, f: usize| total > 0 && (rows[g] * cols[f]) % total != 0;
    let mut extra = vec![vec![false; cols.len()]; rows.len()];
    let mut row_need: Vec<usize> = rows
        .iter()
        .enumerate()
        .map(|(g, &r)| r - alloc[g].iter().sum::<usize>())
        .collect();
    let mut col_need: Vec<usize> = cols
        .iter()
        .enumerate()
        .map(|(f, &c)| c - alloc.iter().map(|row| row[f]).sum::<usize>())
        .collect();

    // bipartite b-matching: rows need row_need cells, columns col_need cells
    for g in 0..rows.len() {
        while row_need[g] > 0 {
            let mut via_row: Vec<Option<usize>> = vec![None; cols.len()];
            let mut via_col: Vec<Option<usize>> = vec![None; rows.len()];
            let mut seen_row = vec![false; rows.len()];
            seen_row[g] = true;
            let mut queue = VecDeque::from([g]);
            let mut found = None;
            'search: while let Some(r) = queue.pop_front() {
                for f in 0..cols.len() {
                    if via_row[f].is_some() || !frac(r, f) || extra[r][f] {
                        continue;
                    }
                    via_row[f] = Some(r);
                    if col_need[f] > 0 {
                        found = Some(f);
                        break 'search;
                    }
                    for (r2, row) in extra.iter().enumerate() {
                        if row[f] && !seen_row[r2] {
                            seen_row[r2] = true;
                            via_col[r2] = Some(f);
                            queue.push_back(r2);
                        }
                    }
                }
            }
            let Some(mut f) = found else { break };
            col_need[f] -= 1;
            row_need[g] -= 1;
            loop {
                let r = via_row[f].expect("column on the path");
                extra[r][f] = true;
                match via_col[r] {
                    Some(fc) => {
                        extra[r][fc] = false;
                        f = fc;
                    }
                    None => break,
                }
            }
        }
    }
    for (g, row) in alloc.iter_mut().enumerate() {
        for (f, v) in row.iter_mut().enumerate() {
            *v += extra[g][f] as usize;
        }
    }
    alloc
}

/// Text form of a labelled graph list: a `dataset v1` header, then per graph
/// a `graph <program> <source> <label>` line followed by its serialized form.
pub fn write_dataset(data: &[LabelledGraph]) -> String {
    let mut out = String::from("dataset v1\n");
    for g in data {
        out.push_str(&format!("graph {} {} {}\n", g.program, g.source, g.label));
        out.push_str(&g.graph.serialize());
    }
    out
}

pub fn read_dataset(text: &str) -> Result<Vec<LabelledGraph>, HarnessError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == "dataset v1" => {}
        Some((i, _)) => return Err(HarnessError::Parse { line: i + 1, msg: "expected `dataset v1`".into() }),
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    let mut header: Option<(usize, [usize; 3])> = None;
    let mut body = String::new();
    let mut flush = |header: Option<(usize, [usize; 3])>, body: &mut String| -> Result<(), HarnessError> {
        if let Some((line, [program, source, label])) = header {
            let graph = crate::scdg::deserialize_scdg(body).map_err(|e| HarnessError::Parse {
                line,
                msg: e.to_string(),
            })?;
            out.push(LabelledGraph {
                program,
                source,
                label,
                graph,
            });
        }
        body.clear();
        Ok(())
    };
    for (i, l) in lines {
        if let Some(rest) = l.trim().strip_prefix("graph ") {
            flush(header.take(), &mut body)?;
            let nums: Vec<usize> = rest
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| HarnessError::Parse { line: i + 1, msg: "bad graph header".into() })?;
            let [p, s, lab] = nums[..] else {
                return Err(HarnessError::Parse { line: i + 1, msg: "expected `graph <program> <source> <label>`".into() });
            };
            header = Some((i + 1, [p, s, lab]));
        } else if header.is_some() {
            body.push_str(l);
            body.push('\n');
        } else {
            return Err(HarnessError::Parse { line: i + 1, msg: "content before first graph".into() });
        }
    }
    flush(header, &mut body)?;
    Ok(out)
}
