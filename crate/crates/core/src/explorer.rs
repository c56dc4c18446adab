//! Path exploration over an abstract program model.
//!
//! A [`ProgramModel`] is a finite state graph where states optionally emit a
//! system call and fork into at most two successors. Exploring it yields
//! execution traces in the same shape a symbolic executor would record, using
//! one of three strategies:
//!
//! * `Bfs` enumerates complete paths breadth-first.
//! * `Cbfs` keeps one shortest path per terminal state (first visit wins).
//! * `Cdfs` enumerates depth-first and returns the longest paths first.
//!
//! Budgets are counts, so results are reproducible.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::scdg::{parse_hex, CallEvent, ExecutionTrace, SysCallName, Token};

pub type StateId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExploreError {
    #[error("entry state {0} does not exist")]
    EmptyModel(StateId),
    #[error("state {state} references unknown state {target}")]
    UnknownState { state: StateId, target: StateId },
    #[error("state {0} has more than two successors")]
    TooManySuccessors(StateId),
    #[error("budget fields must be strictly positive")]
    InvalidBudget,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Where an emitted token comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    /// A new symbolic variable.
    Fresh,
    Literal(String),
    /// The return token of the latest emission of that state on the current
    /// path, or `Null` if it has not been emitted yet.
    FromRet(StateId),
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Fresh => f.write_str("fresh"),
            Slot::Literal(v) => write!(f, "lit:{v}"),
            Slot::FromRet(s) => write!(f, "from:{s}.ret"),
        }
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "fresh" {
            return Ok(Slot::Fresh);
        }
        if let Some(v) = s.strip_prefix("lit:") {
            if v.is_empty() || v.contains(',') {
                return Err(format!("bad literal slot {s:?}"));
            }
            return Ok(Slot::Literal(v.to_string()));
        }
        if let Some(rest) = s.strip_prefix("from:") {
            if let Some(id) = rest.strip_suffix(".ret") {
                return id
                    .parse()
                    .map(Slot::FromRet)
                    .map_err(|_| format!("bad state id in {s:?}"));
            }
        }
        Err(format!("bad slot {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitTemplate {
    pub name: SysCallName,
    pub call_address: u64,
    pub ret: Slot,
    pub args: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateNode {
    pub id: StateId,
    pub emits: Option<EmitTemplate>,
    /// Zero successors marks a terminal state, two a conditional branch.
    pub successors: Vec<StateId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramModel {
    states: BTreeMap<StateId, StateNode>,
    entry: StateId,
}

impl ProgramModel {
    /// Checks successor arity and that every reference names a known state.
    /// The entry is checked by [`explore`].
    pub fn new(states: Vec<StateNode>, entry: StateId) -> Result<Self, ExploreError> {
        let states: BTreeMap<StateId, StateNode> = states.into_iter().map(|s| (s.id, s)).collect();
        for s in states.values() {
            if s.successors.len() > 2 {
                return Err(ExploreError::TooManySuccessors(s.id));
            }
            let from_refs = s.emits.iter().flat_map(|t| {
                std::iter::once(&t.ret)
                    .chain(t.args.iter())
                    .filter_map(|slot| match slot {
                        Slot::FromRet(id) => Some(*id),
                        _ => None,
                    })
            });
            for target in s.successors.iter().copied().chain(from_refs) {
                if !states.contains_key(&target) {
                    return Err(ExploreError::UnknownState {
                        state: s.id,
                        target,
                    });
                }
            }
        }
        Ok(ProgramModel { states, entry })
    }

    pub fn entry(&self) -> StateId {
        self.entry
    }

    pub fn state(&self, id: StateId) -> Option<&StateNode> {
        self.states.get(&id)
    }

    pub fn states(&self) -> impl Iterator<Item = &StateNode> {
        self.states.values()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Model file text, readable by [`parse_model`].
    pub fn to_text(&self) -> String {
        let mut out = format!("entry {}\n", self.entry);
        for s in self.states.values() {
            out.push_str(&format!("state {}", s.id));
            if let Some(t) = &s.emits {
                let args: Vec<String> = t.args.iter().map(Slot::to_string).collect();
                out.push_str(&format!(
                    " emit {} {:#x} ret={} args={}",
                    t.name,
                    t.call_address,
                    t.ret,
                    args.join(",")
                ));
            }
            out.push('\n');
        }
        for s in self.states.values() {
            if !s.successors.is_empty() {
                let succ: Vec<String> = s.successors.iter().map(|x| x.to_string()).collect();
                out.push_str(&format!("succ {} {}\n", s.id, succ.join(" ")));
            }
        }
        out
    }
}

/// Parses a model file.
///
/// ```text
/// entry <id>                      (optional, defaults to the first state)
/// state <id> [emit <name> <addr-hex> ret=<slot> args=<slot>,...]
/// succ <id> <id...>
/// ```
///
/// Slots are `fresh`, `lit:<value>` or `from:<state_id>.ret`.
pub fn parse_model(text: &str) -> Result<ProgramModel, ExploreError> {
    let err = |line: usize, msg: String| ExploreError::Parse { line, msg };
    let mut states: Vec<StateNode> = Vec::new();
    let mut index: BTreeMap<StateId, usize> = BTreeMap::new();
    let mut succ_lines: Vec<(usize, StateId, Vec<StateId>)> = Vec::new();
    let mut entry = None;

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let id_at = |k: usize| -> Result<StateId, ExploreError> {
            f.get(k)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(ln, "bad state id".into()))
        };
        match f[0] {
            "entry" if f.len() == 2 => entry = Some(id_at(1)?),
            "state" => {
                let id = id_at(1)?;
                let emits = match f.len() {
                    2 => None,
                    7 if f[2] == "emit" => {
                        let name = SysCallName::new(f[3]).map_err(|e| err(ln, e.to_string()))?;
                        let call_address =
                            parse_hex(f[4]).ok_or_else(|| err(ln, "bad address".into()))?;
                        let ret = f[5]
                            .strip_prefix("ret=")
                            .ok_or_else(|| err(ln, "missing ret=".into()))?
                            .parse()
                            .map_err(|e| err(ln, e))?;
                        let args = f[6]
                            .strip_prefix("args=")
                            .ok_or_else(|| err(ln, "missing args=".into()))?;
                        let args = if args.is_empty() {
                            Vec::new()
                        } else {
                            args.split(',')
                                .map(|a| a.parse().map_err(|e| err(ln, e)))
                                .collect::<Result<_, _>>()?
                        };
                        Some(EmitTemplate {
                            name,
                            call_address,
                            ret,
                            args,
                        })
                    }
                    _ => return Err(err(ln, "malformed state line".into())),
                };
                if index.insert(id, states.len()).is_some() {
                    return Err(err(ln, format!("state {id} declared twice")));
                }
                states.push(StateNode {
                    id,
                    emits,
                    successors: Vec::new(),
                });
            }
            "succ" if f.len() >= 2 => {
                let id = id_at(1)?;
                let succ = (2..f.len()).map(id_at).collect::<Result<Vec<_>, _>>()?;
                succ_lines.push((ln, id, succ));
            }
            _ => return Err(err(ln, format!("unknown directive {:?}", f[0]))),
        }
    }

    for (ln, id, succ) in succ_lines {
        let slot = *index
            .get(&id)
            .ok_or_else(|| err(ln, format!("succ for undeclared state {id}")))?;
        states[slot].successors.extend(succ);
    }
    let entry = match entry.or_else(|| states.first().map(|s| s.id)) {
        Some(e) => e,
        None => return Err(err(0, "model declares no states".into())),
    };
    ProgramModel::new(states, entry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub max_states_explored: usize,
    pub max_trace_length: usize,
    pub max_traces: usize,
}

impl Budget {
    pub fn new(
        max_states_explored: usize,
        max_trace_length: usize,
        max_traces: usize,
    ) -> Result<Self, ExploreError> {
        if max_states_explored == 0 || max_trace_length == 0 || max_traces == 0 {
            return Err(ExploreError::InvalidBudget);
        }
        Ok(Budget {
            max_states_explored,
            max_trace_length,
            max_traces,
        })
    }
}

impl FromStr for Budget {
    type Err = ExploreError;

    /// `<states>,<length>,<traces>`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| ExploreError::InvalidBudget)?;
        match parts.as_slice() {
            [a, b, c] => Budget::new(*a, *b, *c),
            _ => Err(ExploreError::InvalidBudget),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Bfs,
    Cbfs,
    Cdfs,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bfs" => Ok(Strategy::Bfs),
            "cbfs" => Ok(Strategy::Cbfs),
            "cdfs" => Ok(Strategy::Cdfs),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Bfs => "bfs",
            Strategy::Cbfs => "cbfs",
            Strategy::Cdfs => "cdfs",
        })
    }
}

/// One in-flight execution path.
#[derive(Clone)]
struct PathState {
    at: StateId,
    events: Vec<CallEvent>,
    rets: Vec<(StateId, Token)>,
}

enum Step {
    Done(Vec<CallEvent>),
    Fork(Vec<PathState>),
}

struct Explorer<'a> {
    model: &'a ProgramModel,
    budget: Budget,
    next_var: u64,
}

impl<'a> Explorer<'a> {
    fn instantiate(&mut self, slot: &Slot, rets: &[(StateId, Token)]) -> Token {
        match slot {
            Slot::Fresh => {
                let t = Token::Symbolic(format!("v{}", self.next_var));
                self.next_var += 1;
                t
            }
            Slot::Literal(v) => Token::Concrete(v.clone()),
            Slot::FromRet(id) => rets
                .iter()
                .rev()
                .find(|(s, _)| s == id)
                .map(|(_, t)| t.clone())
                .unwrap_or(Token::Null),
        }
    }

    /// Appends the emission of `state` to the path, if it emits.
    fn emit(&mut self, state: &StateNode, events: &mut Vec<CallEvent>, rets: &mut Vec<(StateId, Token)>) {
        if let Some(t) = &state.emits {
            let args = t.args.iter().map(|s| self.instantiate(s, rets)).collect();
            let ret = self.instantiate(&t.ret, rets);
            rets.push((state.id, ret.clone()));
            events.push(CallEvent {
                name: t.name.clone(),
                args,
                ret: Some(ret),
                call_address: t.call_address,
                seq_index: events.len() as u64,
            });
        }
    }

    fn step(&mut self, mut p: PathState) -> Step {
        let state = &self.model.states[&p.at];
        self.emit(state, &mut p.events, &mut p.rets);
        if state.successors.is_empty() || p.events.len() >= self.budget.max_trace_length {
            return Step::Done(p.events);
        }
        let children = state
            .successors
            .iter()
            .map(|&s| PathState {
                at: s,
                events: p.events.clone(),
                rets: p.rets.clone(),
            })
            .collect();
        Step::Fork(children)
    }

    fn root(&self) -> PathState {
        PathState {
            at: self.model.entry,
            events: Vec::new(),
            rets: Vec::new(),
        }
    }

    fn bfs(&mut self) -> Vec<Vec<CallEvent>> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([self.root()]);
        let mut explored = 0;
        while let Some(p) = queue.pop_front() {
            if explored == self.budget.max_states_explored || out.len() == self.budget.max_traces {
                break;
            }
            explored += 1;
            match self.step(p) {
                Step::Done(events) => out.push(events),
                Step::Fork(children) => queue.extend(children),
            }
        }
        out
    }

    fn cdfs(&mut self) -> Vec<Vec<CallEvent>> {
        let mut out = Vec::new();
        let mut stack = vec![self.root()];
        let mut explored = 0;
        while let Some(p) = stack.pop() {
            if explored == self.budget.max_states_explored || out.len() == self.budget.max_traces {
                break;
            }
            explored += 1;
            match self.step(p) {
                Step::Done(events) => out.push(events),
                Step::Fork(children) => stack.extend(children.into_iter().rev()),
            }
        }
        // stable: equal lengths keep depth-first discovery order
        out.sort_by(|a, b| b.len().cmp(&a.len()));
        out
    }

    fn cbfs(&mut self) -> Vec<Vec<CallEvent>> {
        let entry = self.model.entry;
        let mut parent: BTreeMap<StateId, Option<StateId>> = BTreeMap::from([(entry, None)]);
        let mut queue = VecDeque::from([entry]);
        let mut terminals = Vec::new();
        let mut explored = 0;
        while let Some(s) = queue.pop_front() {
            if explored == self.budget.max_states_explored || terminals.len() == self.budget.max_traces {
                break;
            }
            explored += 1;
            let node = &self.model.states[&s];
            if node.successors.is_empty() {
                terminals.push(s);
            }
            for &succ in &node.successors {
                if !parent.contains_key(&succ) {
                    parent.insert(succ, Some(s));
                    queue.push_back(succ);
                }
            }
        }

        let mut out = Vec::with_capacity(terminals.len());
        for t in terminals {
            let mut path = vec![t];
            while let Some(Some(p)) = parent.get(path.last().unwrap()) {
                path.push(*p);
            }
            path.reverse();
            let mut events = Vec::new();
            let mut rets = Vec::new();
            for id in path {
                self.emit(&self.model.states[&id], &mut events, &mut rets);
                if events.len() >= self.budget.max_trace_length {
                    break;
                }
            }
            out.push(events);
        }
        out
    }
}

/// Explores `model` and returns the recorded traces.
///
/// Symbolic variables are numbered from a counter local to this call, so
/// the result is a pure function of its inputs.
pub fn explore(
    model: &ProgramModel,
    strategy: Strategy,
    budget: Budget,
) -> Result<Vec<ExecutionTrace>, ExploreError> {
    if !model.states.contains_key(&model.entry) {
        return Err(ExploreError::EmptyModel(model.entry));
    }
    let mut ex = Explorer {
        model,
        budget,
        next_var: 0,
    };
    let paths = match strategy {
        Strategy::Bfs => ex.bfs(),
        Strategy::Cbfs => ex.cbfs(),
        Strategy::Cdfs => ex.cdfs(),
    };
    Ok(paths
        .into_iter()
        .map(|events| ExecutionTrace::new(events).expect("seq indices are positions"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emit(name: &str, addr: u64) -> Option<EmitTemplate> {
        Some(EmitTemplate {
            name: SysCallName::new(name).unwrap(),
            call_address: addr,
            ret: Slot::Fresh,
            args: vec![Slot::Literal("0".into())],
        })
    }

    fn node(id: StateId, emits: Option<EmitTemplate>, successors: Vec<StateId>) -> StateNode {
        StateNode {
            id,
            emits,
            successors,
        }
    }

    fn names(t: &ExecutionTrace) -> Vec<&str> {
        t.events().iter().map(|e| e.name.as_str()).collect()
    }

    fn diamond() -> ProgramModel {
        ProgramModel::new(
            vec![
                node(0, None, vec![1, 2]),
                node(1, emit("left", 0x10), vec![3]),
                node(2, emit("right", 0x20), vec![3]),
                node(3, None, vec![]),
            ],
            0,
        )
        .unwrap()
    }

    fn generous() -> Budget {
        Budget::new(10_000, 100, 1_000).unwrap()
    }

    #[test]
    fn test_diamond_bfs() {
        let traces = explore(&diamond(), Strategy::Bfs, generous()).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(names(&traces[0]), ["left"]);
        assert_eq!(names(&traces[1]), ["right"]);
    }

    #[test]
    fn test_diamond_cbfs_single_terminal() {
        // one terminal, so only the first-visit shortest path survives
        let traces = explore(&diamond(), Strategy::Cbfs, generous()).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(names(&traces[0]), ["left"]);
    }

    #[test]
    fn test_chain_all_strategies() {
        let model = ProgramModel::new(
            vec![
                node(0, emit("a", 1), vec![1]),
                node(1, emit("b", 2), vec![2]),
                node(2, emit("c", 3), vec![]),
            ],
            0,
        )
        .unwrap();
        for s in [Strategy::Bfs, Strategy::Cbfs, Strategy::Cdfs] {
            let traces = explore(&model, s, generous()).unwrap();
            assert_eq!(traces.len(), 1, "{s}");
            assert_eq!(names(&traces[0]), ["a", "b", "c"]);
        }
    }

    #[test]
    fn test_self_loop_truncates() {
        let model = ProgramModel::new(vec![node(0, emit("spin", 1), vec![0])], 0).unwrap();
        let budget = Budget::new(1_000, 5, 10).unwrap();
        for s in [Strategy::Bfs, Strategy::Cdfs] {
            let traces = explore(&model, s, budget).unwrap();
            assert_eq!(traces.len(), 1);
            assert_eq!(traces[0].len(), 5);
        }
    }

    #[test]
    fn test_cdfs_longest_first() {
        // 0 -> {1 -> 3, 2}: the second branch is shorter
        let model = ProgramModel::new(
            vec![
                node(0, emit("root", 0), vec![2, 1]),
                node(1, emit("x", 1), vec![3]),
                node(2, emit("y", 2), vec![]),
                node(3, emit("z", 3), vec![]),
            ],
            0,
        )
        .unwrap();
        let traces = explore(&model, Strategy::Cdfs, generous()).unwrap();
        assert_eq!(names(&traces[0]), ["root", "x", "z"]);
        assert_eq!(names(&traces[1]), ["root", "y"]);
    }

    #[test]
    fn test_ret_wiring_creates_address_token() {
        let model = ProgramModel::new(
            vec![
                node(
                    0,
                    Some(EmitTemplate {
                        name: SysCallName::new("CreateFileA").unwrap(),
                        call_address: 1,
                        ret: Slot::Fresh,
                        args: vec![Slot::Literal("path".into())],
                    }),
                    vec![1],
                ),
                node(
                    1,
                    Some(EmitTemplate {
                        name: SysCallName::new("WriteFile").unwrap(),
                        call_address: 2,
                        ret: Slot::Fresh,
                        args: vec![Slot::FromRet(0), Slot::Fresh],
                    }),
                    vec![],
                ),
            ],
            0,
        )
        .unwrap();
        let traces = explore(&model, Strategy::Bfs, generous()).unwrap();
        let ev = traces[0].events();
        assert_eq!(ev[1].args[0], ev[0].ret.clone().unwrap());
        assert_ne!(ev[1].args[1], ev[0].ret.clone().unwrap());
    }

    #[test]
    fn test_budget_limits() {
        let traces = explore(&diamond(), Strategy::Bfs, Budget::new(100, 100, 1).unwrap()).unwrap();
        assert_eq!(traces.len(), 1);
        // two expansions reach neither terminal
        let traces = explore(&diamond(), Strategy::Bfs, Budget::new(2, 100, 10).unwrap()).unwrap();
        assert!(traces.is_empty());
        assert_eq!(Budget::new(0, 1, 1), Err(ExploreError::InvalidBudget));
        assert_eq!("5,4,3".parse::<Budget>().unwrap(), Budget::new(5, 4, 3).unwrap());
        assert!("5,4".parse::<Budget>().is_err());
    }

    #[test]
    fn test_missing_entry_and_bad_refs() {
        let model = ProgramModel::new(vec![node(0, None, vec![])], 7).unwrap();
        assert_eq!(
            explore(&model, Strategy::Bfs, generous()),
            Err(ExploreError::EmptyModel(7))
        );
        assert_eq!(
            ProgramModel::new(vec![node(0, None, vec![4])], 0),
            Err(ExploreError::UnknownState { state: 0, target: 4 })
        );
        assert_eq!(
            ProgramModel::new(vec![node(0, None, vec![0, 0, 0])], 0),
            Err(ExploreError::TooManySuccessors(0))
        );
    }

    #[test]
    fn test_model_text_round_trip() {
        let text = "entry 0\n\
                    state 0 emit CreateFileA 0x401000 ret=fresh args=lit:path,fresh\n\
                    state 1 emit WriteFile 0x401010 ret=fresh args=from:0.ret\n\
                    state 2\n\
                    succ 0 1 2\n\
                    succ 1 2\n";
        let model = parse_model(text).unwrap();
        assert_eq!(model.len(), 3);
        assert_eq!(model.state(0).unwrap().successors, vec![1, 2]);
        assert_eq!(parse_model(&model.to_text()).unwrap(), model);
        assert_eq!(model.to_text(), text);
    }

    #[test]
    fn test_model_parse_errors() {
        assert!(matches!(
            parse_model("state 0\nsucc 0 x\n"),
            Err(ExploreError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_model("state 0 emit f 0x1 ret=bogus args=\n"),
            Err(ExploreError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_model("state 0\nstate 0\n"),
            Err(ExploreError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn test_deterministic() {
        let a = explore(&diamond(), Strategy::Cdfs, generous()).unwrap();
        let b = explore(&diamond(), Strategy::Cdfs, generous()).unwrap();
        assert_eq!(a, b);
    }
}
