//! System-call dependency graphs.
//!
//! A graph is built from one or more execution traces of the same program.
//! Nodes are call sites, keyed by `(name, call_address)`, and an edge `a -> b`
//! records that some event at `a` happened before some event at `b` in the
//! same trace and the two are data dependent: they share a non-null argument
//! token, or the return token of `a` is passed as an argument to `b`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScdgError {
    #[error("events out of order: seq {first} is not before seq {second}")]
    OrderViolation { first: u64, second: u64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
}

fn parse_err(line: usize, msg: impl Into<String>) -> ScdgError {
    ScdgError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Name of a system call, e.g. `CopyFileA`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SysCallName(Arc<str>);

impl SysCallName {
    pub fn new(name: &str) -> Result<Self, ScdgError> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(ScdgError::Invalid(format!("bad syscall name {name:?}")));
        }
        Ok(SysCallName(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SysCallName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An argument or return value observed on a call.
///
/// Two tokens are equal iff kind and value are equal. `Null` stands for an
/// absent or invalid value and never links two calls.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Token {
    Concrete(String),
    Symbolic(String),
    Address(u64),
    Null,
}

impl Token {
    pub fn is_null(&self) -> bool {
        matches!(self, Token::Null)
    }

    /// Parses the trace spelling: `c:<literal>`, `s:<var>`, `a:<hex>` or `n`.
    pub fn parse(s: &str) -> Option<Token> {
        if s == "n" {
            return Some(Token::Null);
        }
        let (kind, value) = s.split_once(':')?;
        if value.is_empty() || value.contains(|c: char| c == ',' || c.is_whitespace()) {
            return None;
        }
        match kind {
            "c" => Some(Token::Concrete(value.to_string())),
            "s" => Some(Token::Symbolic(value.to_string())),
            "a" => parse_hex(value).map(Token::Address),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Concrete(v) => write!(f, "c:{v}"),
            Token::Symbolic(v) => write!(f, "s:{v}"),
            Token::Address(a) => write!(f, "a:{a:#x}"),
            Token::Null => f.write_str("n"),
        }
    }
}

pub(crate) fn parse_hex(s: &str) -> Option<u64> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    u64::from_str_radix(digits, 16).ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallEvent {
    pub name: SysCallName,
    pub args: Vec<Token>,
    pub ret: Option<Token>,
    pub call_address: u64,
    pub seq_index: u64,
}

impl CallEvent {
    fn key(&self) -> (SysCallName, u64) {
        (self.name.clone(), self.call_address)
    }
}

/// Ordered system-call records from one execution path.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExecutionTrace {
    events: Vec<CallEvent>,
}

impl ExecutionTrace {
    pub fn new(events: Vec<CallEvent>) -> Result<Self, ScdgError> {
        for pair in events.windows(2) {
            if pair[0].seq_index >= pair[1].seq_index {
                return Err(ScdgError::OrderViolation {
                    first: pair[0].seq_index,
                    second: pair[1].seq_index,
                });
            }
        }
        Ok(ExecutionTrace { events })
    }

    pub fn events(&self) -> &[CallEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DependencyKind {
    Argument,
    Address,
}

/// Non-empty-by-construction set of dependency kinds carried by an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DepKinds {
    pub argument: bool,
    pub address: bool,
}

impl DepKinds {
    pub const ARGUMENT: DepKinds = DepKinds {
        argument: true,
        address: false,
    };
    pub const ADDRESS: DepKinds = DepKinds {
        argument: false,
        address: true,
    };

    pub fn is_empty(&self) -> bool {
        !self.argument && !self.address
    }

    pub fn contains(&self, kind: DependencyKind) -> bool {
        match kind {
            DependencyKind::Argument => self.argument,
            DependencyKind::Address => self.address,
        }
    }

    pub fn union(self, other: DepKinds) -> DepKinds {
        DepKinds {
            argument: self.argument || other.argument,
            address: self.address || other.address,
        }
    }

    /// Text tag: `A`, `D` or `AD`.
    pub fn tag(&self) -> &'static str {
        match (self.argument, self.address) {
            (true, true) => "AD",
            (true, false) => "A",
            (false, true) => "D",
            (false, false) => "",
        }
    }

    fn from_tag(tag: &str) -> Option<DepKinds> {
        match tag {
            "A" => Some(DepKinds::ARGUMENT),
            "D" => Some(DepKinds::ADDRESS),
            "AD" => Some(DepKinds::ARGUMENT.union(DepKinds::ADDRESS)),
            _ => None,
        }
    }
}

/// Dependency between two events of the same trace, `a` strictly before `b`.
///
/// Returns `Ok(None)` when the events are independent.
pub fn find_dependency(a: &CallEvent, b: &CallEvent) -> Result<Option<DepKinds>, ScdgError> {
    if a.seq_index >= b.seq_index {
        return Err(ScdgError::OrderViolation {
            first: a.seq_index,
            second: b.seq_index,
        });
    }
    let argument = a.args.iter().any(|t| !t.is_null() && b.args.contains(t));
    let address = match &a.ret {
        Some(r) if !r.is_null() => b.args.contains(r),
        _ => false,
    };
    let kinds = DepKinds { argument, address };
    Ok(if kinds.is_empty() { None } else { Some(kinds) })
}

/// A directed labelled graph `G = (V, E, L)` in canonical form.
///
/// Node ids are `0..|V|` in lexicographic `(name, call_address)` order and
/// edges are kept sorted by `(src, dst)`. Two graphs built from the same
/// behaviour therefore compare equal with `==`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Scdg {
    nodes: Vec<(SysCallName, u64)>,
    edges: BTreeMap<(usize, usize), DepKinds>,
}

impl Scdg {
    /// Builds a canonical graph from arbitrary node order and edge list.
    /// Edges referring to the same pair are merged.
    pub fn from_parts(
        nodes: Vec<(SysCallName, u64)>,
        edges: impl IntoIterator<Item = (usize, usize, DepKinds)>,
    ) -> Result<Self, ScdgError> {
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&i, &j| nodes[i].cmp(&nodes[j]));
        for pair in order.windows(2) {
            if nodes[pair[0]] == nodes[pair[1]] {
                let (name, addr) = &nodes[pair[0]];
                return Err(ScdgError::Invalid(format!(
                    "duplicate node {name} {addr:#x}"
                )));
            }
        }
        let mut new_id = vec![0usize; nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_id[old] = new;
        }
        let mut merged: BTreeMap<(usize, usize), DepKinds> = BTreeMap::new();
        for (src, dst, kinds) in edges {
            if src >= nodes.len() || dst >= nodes.len() {
                return Err(ScdgError::Invalid(format!(
                    "edge {src}->{dst} references a missing node"
                )));
            }
            if kinds.is_empty() {
                return Err(ScdgError::Invalid(format!(
                    "edge {src}->{dst} has no dependency kind"
                )));
            }
            let entry = merged.entry((new_id[src], new_id[dst])).or_default();
            *entry = entry.union(kinds);
        }
        let nodes = order.into_iter().map(|i| nodes[i].clone()).collect();
        Ok(Scdg {
            nodes,
            edges: merged,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Label `L(v)` of a node.
    pub fn label(&self, id: usize) -> &SysCallName {
        &self.nodes[id].0
    }

    pub fn nodes(&self) -> &[(SysCallName, u64)] {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, DepKinds)> + '_ {
        self.edges.iter().map(|(&(s, d), &k)| (s, d, k))
    }

    pub fn edge(&self, src: usize, dst: usize) -> Option<DepKinds> {
        self.edges.get(&(src, dst)).copied()
    }

    /// Successors of `id` in ascending node-id order.
    pub fn successors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((id, 0)..=(id, usize::MAX)).map(|(&(_, d), _)| d)
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.nodes.len()];
        for &(_, d) in self.edges.keys() {
            deg[d] += 1;
        }
        deg
    }

    /// Text form, see [`deserialize_scdg`] for the grammar.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("scdg v1\n");
        out.push_str(&format!("nodes {}\n", self.nodes.len()));
        for (id, (name, addr)) in self.nodes.iter().enumerate() {
            out.push_str(&format!("node {id} {name} {addr:#x}\n"));
        }
        out.push_str(&format!("edges {}\n", self.edges.len()));
        for (&(s, d), k) in &self.edges {
            out.push_str(&format!("edge {s} {d} {}\n", k.tag()));
        }
        out
    }
}

/// Builds one graph from all traces of a binary.
///
/// Events are merged across traces by `(name, call_address)`; only pairs
/// inside a single trace are tested for dependency.
pub fn build_scdg(traces: &[ExecutionTrace]) -> Scdg {
    let keys: BTreeSet<(SysCallName, u64)> = traces
        .iter()
        .flat_map(|t| t.events.iter().map(CallEvent::key))
        .collect();
    let nodes: Vec<(SysCallName, u64)> = keys.into_iter().collect();
    let index: BTreeMap<&(SysCallName, u64), usize> =
        nodes.iter().enumerate().map(|(i, k)| (k, i)).collect();

    let mut edges: BTreeMap<(usize, usize), DepKinds> = BTreeMap::new();
    for trace in traces {
        let ids: Vec<usize> = trace.events.iter().map(|e| index[&e.key()]).collect();
        for (i, a) in trace.events.iter().enumerate() {
            for (j, b) in trace.events.iter().enumerate().skip(i + 1) {
                // seq order is guaranteed by ExecutionTrace::new
                if let Ok(Some(kinds)) = find_dependency(a, b) {
                    let entry = edges.entry((ids[i], ids[j])).or_default();
                    *entry = entry.union(kinds);
                }
            }
        }
    }
    Scdg { nodes, edges }
}

pub fn serialize_scdg(g: &Scdg) -> String {
    g.serialize()
}

/// Parses the text form:
///
/// ```text
/// scdg v1
/// nodes <count>
/// node <id> <name> <call_address-hex>
/// edges <count>
/// edge <src> <dst> <A|D|AD>
/// ```
///
/// Nodes may appear in any order as long as ids are `0..count`; the result
/// is renumbered canonically.
pub fn deserialize_scdg(text: &str) -> Result<Scdg, ScdgError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| parse_err(0, format!("unexpected end of input, expected {what}")))
    };

    let (ln, header) = next("header")?;
    if header != "scdg v1" {
        return Err(parse_err(ln, format!("bad header {header:?}")));
    }

    let (ln, line) = next("node count")?;
    let node_count = parse_count(ln, line, "nodes")?;
    let mut slots: Vec<Option<(SysCallName, u64)>> = vec![None; node_count];
    for _ in 0..node_count {
        let (ln, line) = next("node line")?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 || f[0] != "node" {
            return Err(parse_err(ln, "expected `node <id> <name> <addr>`"));
        }
        let id: usize = f[1].parse().map_err(|_| parse_err(ln, "bad node id"))?;
        if id >= node_count || slots[id].is_some() {
            return Err(parse_err(ln, format!("node id {id} out of range or repeated")));
        }
        let name = SysCallName::new(f[2]).map_err(|e| parse_err(ln, e.to_string()))?;
        let addr = parse_hex(f[3]).ok_or_else(|| parse_err(ln, "bad call address"))?;
        slots[id] = Some((name, addr));
    }
    let nodes: Vec<(SysCallName, u64)> = slots.into_iter().map(|s| s.unwrap()).collect();

    let (ln, line) = next("edge count")?;
    let edge_count = parse_count(ln, line, "edges")?;
    let mut edges = Vec::with_capacity(edge_count);
    for _ in 0..edge_count {
        let (ln, line) = next("edge line")?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 || f[0] != "edge" {
            return Err(parse_err(ln, "expected `edge <src> <dst> <kinds>`"));
        }
        let src: usize = f[1].parse().map_err(|_| parse_err(ln, "bad edge source"))?;
        let dst: usize = f[2].parse().map_err(|_| parse_err(ln, "bad edge target"))?;
        let kinds = DepKinds::from_tag(f[3]).ok_or_else(|| parse_err(ln, "bad edge kinds"))?;
        if src >= node_count || dst >= node_count {
            return Err(parse_err(ln, "edge endpoint out of range"));
        }
        edges.push((src, dst, kinds));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing content"));
    }
    Scdg::from_parts(nodes, edges)
}

fn parse_count(ln: usize, line: &str, keyword: &str) -> Result<usize, ScdgError> {
    match line.split_whitespace().collect::<Vec<_>>().as_slice() {
        [k, n] if *k == keyword => n
            .parse()
            .map_err(|_| parse_err(ln, format!("bad {keyword} count"))),
        _ => Err(parse_err(ln, format!("expected `{keyword} <count>`"))),
    }
}

/// Parses a trace file: one `call` record per line.
///
/// ```text
/// call <seq_index> <name> <call_address-hex> ret=<token> args=<token>,<token>,...
/// ```
///
/// An empty `ret=` means the call has no return token; an empty `args=`
/// means no arguments. Blank lines and lines starting with `#` are skipped.
/// A line consisting of `end` closes the current trace so that one file can
/// hold several traces.
pub fn parse_traces(text: &str) -> Result<Vec<ExecutionTrace>, ScdgError> {
    let mut traces = Vec::new();
    let mut current: Vec<CallEvent> = Vec::new();
    let mut first_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "end" {
            traces.push(
                ExecutionTrace::new(std::mem::take(&mut current))
                    .map_err(|e| parse_err(first_line, e.to_string()))?,
            );
            continue;
        }
        if current.is_empty() {
            first_line = ln;
        }
        current.push(parse_call_line(ln, line)?);
    }
    if !current.is_empty() {
        traces.push(ExecutionTrace::new(current).map_err(|e| parse_err(first_line, e.to_string()))?);
    }
    Ok(traces)
}

fn parse_call_line(ln: usize, line: &str) -> Result<CallEvent, ScdgError> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 6 || f[0] != "call" {
        return Err(parse_err(
            ln,
            "expected `call <seq> <name> <addr> ret=<token> args=<tokens>`",
        ));
    }
    let seq_index = f[1].parse().map_err(|_| parse_err(ln, "bad seq index"))?;
    let name = SysCallName::new(f[2]).map_err(|e| parse_err(ln, e.to_string()))?;
    let call_address = parse_hex(f[3]).ok_or_else(|| parse_err(ln, "bad call address"))?;
    let ret = f[4]
        .strip_prefix("ret=")
        .ok_or_else(|| parse_err(ln, "missing ret="))?;
    let ret = if ret.is_empty() {
        None
    } else {
        Some(Token::parse(ret).ok_or_else(|| parse_err(ln, format!("bad token {ret:?}")))?)
    };
    let args = f[5]
        .strip_prefix("args=")
        .ok_or_else(|| parse_err(ln, "missing args="))?;
    let args = if args.is_empty() {
        Vec::new()
    } else {
        args.split(',')
            .map(|t| Token::parse(t).ok_or_else(|| parse_err(ln, format!("bad token {t:?}"))))
            .collect::<Result<_, _>>()?
    };
    Ok(CallEvent {
        name,
        args,
        ret,
        call_address,
        seq_index,
    })
}

/// Writes traces in the format read by [`parse_traces`], separated by `end`.
pub fn format_traces(traces: &[ExecutionTrace]) -> String {
    let mut out = String::new();
    for trace in traces {
        for e in &trace.events {
            let ret = e.ret.as_ref().map(|t| t.to_string()).unwrap_or_default();
            let args: Vec<String> = e.args.iter().map(Token::to_string).collect();
            out.push_str(&format!(
                "call {} {} {:#x} ret={} args={}\n",
                e.seq_index,
                e.name,
                e.call_address,
                ret,
                args.join(",")
            ));
        }
        out.push_str("end\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn name(s: &str) -> SysCallName {
        SysCallName::new(s).unwrap()
    }

    fn ev(seq: u64, n: &str, addr: u64, ret: Option<Token>, args: Vec<Token>) -> CallEvent {
        CallEvent {
            name: name(n),
            args,
            ret,
            call_address: addr,
            seq_index: seq,
        }
    }

    fn c(s: &str) -> Token {
        Token::Concrete(s.into())
    }

    fn s(s: &str) -> Token {
        Token::Symbolic(s.into())
    }

    fn copy_pair() -> (CallEvent, CallEvent) {
        let a = ev(0, "GetModuleFilenameA", 0x401000, None, vec![c("0"), s("m")]);
        let b = ev(1, "CopyFileA", 0x401010, None, vec![s("m"), s("m2"), c("1")]);
        (a, b)
    }

    #[test]
    fn test_argument_dependency() {
        let (a, b) = copy_pair();
        assert_eq!(find_dependency(&a, &b).unwrap(), Some(DepKinds::ARGUMENT));
    }

    #[test]
    fn test_address_dependency() {
        let a = ev(0, "CreateFileA", 1, Some(s("h")), vec![c("path")]);
        let b = ev(1, "write", 2, None, vec![s("h"), s("buf")]);
        assert_eq!(find_dependency(&a, &b).unwrap(), Some(DepKinds::ADDRESS));
    }

    #[test]
    fn test_both_kinds_and_none() {
        let a = ev(0, "f", 1, Some(s("h")), vec![s("h")]);
        let b = ev(1, "g", 2, None, vec![s("h")]);
        let k = find_dependency(&a, &b).unwrap().unwrap();
        assert_eq!(k.tag(), "AD");

        let a = ev(0, "foo", 1, None, vec![c("1")]);
        let b = ev(1, "bar", 2, None, vec![c("2")]);
        assert_eq!(find_dependency(&a, &b).unwrap(), None);
    }

    #[test]
    fn test_null_tokens_never_link() {
        let a = ev(0, "f", 1, Some(Token::Null), vec![Token::Null]);
        let b = ev(1, "g", 2, None, vec![Token::Null]);
        assert_eq!(find_dependency(&a, &b).unwrap(), None);
    }

    #[test]
    fn test_order_violation() {
        let (a, b) = copy_pair();
        assert!(matches!(
            find_dependency(&b, &a),
            Err(ScdgError::OrderViolation { .. })
        ));
        assert!(find_dependency(&a, &a).is_err());
    }

    #[test]
    fn test_build_two_call_example() {
        let (a, b) = copy_pair();
        let g = build_scdg(&[ExecutionTrace::new(vec![a, b]).unwrap()]);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        // "CopyFileA" < "GetModuleFilenameA", so the edge runs 1 -> 0
        assert_eq!(g.label(0).as_str(), "CopyFileA");
        assert_eq!(g.edge(1, 0), Some(DepKinds::ARGUMENT));
    }

    #[test]
    fn test_build_empty_and_duplicate() {
        let g = build_scdg(&[]);
        assert_eq!((g.node_count(), g.edge_count()), (0, 0));
        assert_eq!(g.serialize(), "scdg v1\nnodes 0\nedges 0\n");

        let (a, b) = copy_pair();
        let t = ExecutionTrace::new(vec![a, b]).unwrap();
        assert_eq!(build_scdg(&[t.clone()]), build_scdg(&[t.clone(), t]));
    }

    #[test]
    fn test_self_edge_for_recursive_site() {
        let a = ev(0, "RegOpenKey", 7, Some(s("k")), vec![]);
        let b = ev(1, "RegOpenKey", 7, None, vec![s("k")]);
        let g = build_scdg(&[ExecutionTrace::new(vec![a, b]).unwrap()]);
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge(0, 0), Some(DepKinds::ADDRESS));
    }

    #[test]
    fn test_trace_rejects_unordered() {
        let (a, b) = copy_pair();
        assert!(ExecutionTrace::new(vec![b, a]).is_err());
    }

    #[test]
    fn test_serialize_two_node_graph() {
        let (a, b) = copy_pair();
        let g = build_scdg(&[ExecutionTrace::new(vec![a, b]).unwrap()]);
        let text = g.serialize();
        assert_eq!(
            text,
            "scdg v1\nnodes 2\nnode 0 CopyFileA 0x401010\nnode 1 GetModuleFilenameA 0x401000\nedges 1\nedge 1 0 A\n"
        );
        assert_eq!(deserialize_scdg(&text).unwrap(), g);
    }

    #[test]
    fn test_deserialize_renumbers() {
        let text = "scdg v1\nnodes 2\nnode 0 b 0x1\nnode 1 a 0x2\nedges 1\nedge 0 1 D\n";
        let g = deserialize_scdg(text).unwrap();
        assert_eq!(g.label(0).as_str(), "a");
        assert_eq!(g.edge(1, 0), Some(DepKinds::ADDRESS));
    }

    #[test]
    fn test_deserialize_errors_carry_line() {
        let bad = "scdg v1\nnodes 1\nnode 0 a zz\nedges 0\n";
        assert_eq!(
            deserialize_scdg(bad),
            Err(ScdgError::Parse {
                line: 3,
                msg: "bad call address".into()
            })
        );
        assert!(matches!(
            deserialize_scdg("scdg v2\n"),
            Err(ScdgError::Parse { line: 1, .. })
        ));
        let bad_edge = "scdg v1\nnodes 1\nnode 0 a 0x0\nedges 1\nedge 0 3 A\n";
        assert!(matches!(
            deserialize_scdg(bad_edge),
            Err(ScdgError::Parse { line: 5, .. })
        ));
        let dup = "scdg v1\nnodes 2\nnode 0 a 0x0\nnode 1 a 0x0\nedges 0\n";
        assert!(matches!(deserialize_scdg(dup), Err(ScdgError::Invalid(_))));
    }

    #[test]
    fn test_trace_text_round_trip() {
        let text = "call 0 GetModuleFilenameA 0x401000 ret= args=c:0,s:m\n\
                    call 3 CopyFileA 0x401010 ret=a:0x10 args=s:m,s:m2,c:1\n\
                    end\n\
                    call 1 ExitProcess 0x401020 ret=n args=\n\
                    end\n";
        let traces = parse_traces(text).unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].events()[1].ret, Some(Token::Address(0x10)));
        assert!(traces[1].events()[0].args.is_empty());
        assert_eq!(format_traces(&traces), text);
    }

    #[test]
    fn test_trace_parse_errors() {
        assert!(matches!(
            parse_traces("call 0 f 0x1 ret= args=q:1\n"),
            Err(ScdgError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_traces("\ncall 0 f 0x1 args=\n"),
            Err(ScdgError::Parse { line: 2, .. })
        ));
        assert!(parse_traces("call 2 f 0x1 ret= args=\ncall 1 g 0x2 ret= args=\n").is_err());
    }
}
