//! Static analysis of subject programs: statement numbering, basic blocks
//! over each function's control-flow graph, question-site ranking and
//! program-state target selection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::sandbox::{self, ResourceLimits, SandboxError};
use crate::tracer::{ProgramState, StepEvent, Trace, VariableSnapshot};

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StmtKind {
    Assign,
    AugAssign,
    ReturnStmt,
    BranchHead,
    LoopHead,
    CallStmt,
    Other,
}

/// Syntax tree node as reported by the subject runtime's parser. Only
/// statements inside function bodies appear.
#[derive(Debug, Clone, Deserialize)]
pub struct Node {
    pub line: u32,
    pub first_line: u32,
    pub end_line: u32,
    pub text: String,
    pub kind: StmtKind,
    pub construct: String,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default)]
    pub trivial_rhs: bool,
    #[serde(default)]
    pub ret_names: Vec<String>,
    #[serde(default)]
    pub ret_const: bool,
    #[serde(default)]
    pub body: Vec<Node>,
    #[serde(default)]
    pub orelse: Vec<Node>,
    #[serde(default)]
    pub handlers: Vec<Node>,
    #[serde(default)]
    pub finalbody: Vec<Node>,
    #[serde(default)]
    pub cases: Vec<Vec<Node>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FunctionBody {
    pub name: String,
    pub qualname: String,
    pub def_line: u32,
    pub is_method: bool,
    pub body: Vec<Node>,
}

#[derive(Debug, Clone)]
pub struct ParsedProgram {
    pub functions: Vec<FunctionBody>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementEntry {
    pub stmt_index: usize,
    pub line_no: u32,
    pub text: String,
    pub kind: StmtKind,
    /// Index of the enclosing function in source order.
    pub function: usize,
    /// Variables written by the statement (assignment targets, loop
    /// variables), subscript bases and dotted attribute paths included.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub trivial_rhs: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ret_names: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ret_const: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementTable {
    pub entries: Vec<StatementEntry>,
}

impl StatementTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for a 1-based statement index.
    pub fn get(&self, stmt_index: usize) -> Option<&StatementEntry> {
        stmt_index.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn by_line(&self, line_no: u32) -> Option<&StatementEntry> {
        self.entries
            .binary_search_by_key(&line_no, |e| e.line_no)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn lines(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.line_no).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub block_id: usize,
    pub stmt_indices: Vec<usize>,
    pub terminal_stmt: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGraph {
    pub blocks: Vec<Block>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl BlockGraph {
    /// Block containing each statement index.
    pub fn block_of(&self) -> BTreeMap<usize, usize> {
        self.blocks
            .iter()
            .flat_map(|b| b.stmt_indices.iter().map(move |&s| (s, b.block_id)))
            .collect()
    }

    pub fn predecessors(&self, block_id: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |(_, to)| *to == block_id)
            .map(|(from, _)| *from)
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PspRule {
    AssignLhs,
    AugAssign,
    ReturnVar,
    NearestVar,
    ChangedNew,
    ChangedVar,
    ChangedAttr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PspTarget {
    pub stmt_index: usize,
    pub variable: String,
    pub source_rule: PspRule,
}

// ------------------------------------------------------------------ parsing

/// Parses `program` with the subject runtime's own parser.
pub fn parse_program(program: &str) -> Result<ParsedProgram, AnalyzerError> {
    let request = json!({"mode": "parse", "program": program});
    let out = sandbox::run_helper(&request, ResourceLimits::default().wall())?;
    let rec = out
        .record("parse")
        .ok_or_else(|| AnalyzerError::Parse(format!("no parse result: {}", out.stderr.trim())))?;
    if rec.get("ok").and_then(Value::as_bool) != Some(true) {
        let msg = rec.get("error").and_then(Value::as_str).unwrap_or("unknown");
        return Err(AnalyzerError::Parse(msg.to_string()));
    }
    let functions: Vec<FunctionBody> = serde_json::from_value(rec["functions"].clone())
        .map_err(|e| AnalyzerError::Parse(format!("unexpected parser output: {e}")))?;
    Ok(ParsedProgram { functions })
}

fn visit<'a>(nodes: &'a [Node], f: &mut impl FnMut(&'a Node)) {
    for n in nodes {
        f(n);
        visit(&n.body, f);
        visit(&n.orelse, f);
        for h in &n.handlers {
            f(h);
            visit(&h.body, f);
        }
        visit(&n.finalbody, f);
        for c in &n.cases {
            visit(c, f);
        }
    }
}

impl ParsedProgram {
    pub fn table(&self) -> StatementTable {
        let mut entries = Vec::new();
        for (fi, func) in self.functions.iter().enumerate() {
            visit(&func.body, &mut |n: &Node| {
                entries.push(StatementEntry {
                    stmt_index: 0,
                    line_no: n.line,
                    text: n.text.clone(),
                    kind: n.kind,
                    function: fi,
                    targets: n.targets.clone(),
                    trivial_rhs: n.trivial_rhs,
                    ret_names: n.ret_names.clone(),
                    ret_const: n.ret_const,
                });
            });
        }
        entries.sort_by_key(|e| e.line_no);
        entries.dedup_by_key(|e| e.line_no);
        for (i, e) in entries.iter_mut().enumerate() {
            e.stmt_index = i + 1;
        }
        StatementTable { entries }
    }

    pub fn blocks(&self, table: &StatementTable) -> BlockGraph {
        let index: BTreeMap<u32, usize> = table.entries.iter().map(|e| (e.line_no, e.stmt_index)).collect();
        let mut b = CfgBuilder {
            index,
            graph: BlockGraph::default(),
        };
        for func in &self.functions {
            let mut loops = Vec::new();
            b.seq(&func.body, Frontier::entry(), &mut loops);
        }
        for block in &mut b.graph.blocks {
            block.terminal_stmt = *block.stmt_indices.last().expect("blocks are never empty");
        }
        b.graph
    }
}

/// Numbers every statement of every function body in source order.
pub fn index_statements(program: &str) -> Result<StatementTable, AnalyzerError> {
    Ok(parse_program(program)?.table())
}

/// Splits each function body into basic blocks. Leaders are the function
/// entry, branch and loop heads, branch targets and join points; heads
/// always form a block of their own.
pub fn build_blocks(table: &StatementTable, program: &str) -> Result<BlockGraph, AnalyzerError> {
    Ok(parse_program(program)?.blocks(table))
}

// --------------------------------------------------------------------- CFG

struct Frontier {
    /// Blocks whose fall-through successor is the next leader.
    dangling: Vec<usize>,
    /// Block the next straight-line statement may extend.
    open: Option<usize>,
}

impl Frontier {
    fn entry() -> Self {
        Self {
            dangling: Vec::new(),
            open: None,
        }
    }

    fn closed(dangling: Vec<usize>) -> Self {
        Self { dangling, open: None }
    }

    fn extend(block: usize) -> Self {
        Self {
            dangling: vec![block],
            open: Some(block),
        }
    }
}

struct LoopCtx {
    head: usize,
    breaks: Vec<usize>,
}

struct CfgBuilder {
    index: BTreeMap<u32, usize>,
    graph: BlockGraph,
}

impl CfgBuilder {
    fn new_block(&mut self, preds: &[usize]) -> usize {
        let id = self.graph.blocks.len();
        self.graph.blocks.push(Block {
            block_id: id,
            stmt_indices: Vec::new(),
            terminal_stmt: 0,
        });
        for &p in preds {
            self.graph.edges.insert((p, id));
        }
        id
    }

    fn push(&mut self, block: usize, node: &Node) {
        let idx = self.index[&node.line];
        self.graph.blocks[block].stmt_indices.push(idx);
    }

    fn straight(&mut self, node: &Node, fr: &Frontier) -> usize {
        let block = match fr.open {
            Some(b) => b,
            None => self.new_block(&fr.dangling),
        };
        self.push(block, node);
        block
    }

    fn head(&mut self, node: &Node, fr: &Frontier) -> usize {
        let block = self.new_block(&fr.dangling);
        self.push(block, node);
        block
    }

    fn seq(&mut self, nodes: &[Node], mut fr: Frontier, loops: &mut Vec<LoopCtx>) -> Frontier {
        for n in nodes {
            fr = self.stmt(n, fr, loops);
        }
        fr
    }

    fn stmt(&mut self, n: &Node, fr: Frontier, loops: &mut Vec<LoopCtx>) -> Frontier {
        match n.construct.as_str() {
            "if" => {
                let h = self.head(n, &fr);
                let body = self.seq(&n.body, Frontier::closed(vec![h]), loops);
                let other = if n.orelse.is_empty() {
                    Frontier::closed(vec![h])
                } else {
                    self.seq(&n.orelse, Frontier::closed(vec![h]), loops)
                };
                let mut dangling = body.dangling;
                dangling.extend(other.dangling);
                Frontier::closed(dangling)
            }
            "match" => {
                let h = self.head(n, &fr);
                let mut dangling = vec![h];
                for case in &n.cases {
                    dangling.extend(self.seq(case, Frontier::closed(vec![h]), loops).dangling);
                }
                Frontier::closed(dangling)
            }
            "for" | "while" => {
                let h = self.head(n, &fr);
                loops.push(LoopCtx {
                    head: h,
                    breaks: Vec::new(),
                });
                let body = self.seq(&n.body, Frontier::closed(vec![h]), loops);
                for d in body.dangling {
                    self.graph.edges.insert((d, h));
                }
                let ctx = loops.pop().expect("loop context pushed above");
                let mut dangling = if n.orelse.is_empty() {
                    vec![h]
                } else {
                    self.seq(&n.orelse, Frontier::closed(vec![h]), loops).dangling
                };
                dangling.extend(ctx.breaks);
                Frontier::closed(dangling)
            }
            "try" => {
                let b = self.straight(n, &fr);
                let body = self.seq(&n.body, Frontier::extend(b), loops);
                let mut exits = if n.orelse.is_empty() {
                    body.dangling
                } else {
                    self.seq(&n.orelse, body, loops).dangling
                };
                for h in &n.handlers {
                    let hb = self.head(h, &Frontier::closed(vec![b]));
                    exits.extend(self.seq(&h.body, Frontier::extend(hb), loops).dangling);
                }
                if n.finalbody.is_empty() {
                    Frontier::closed(exits)
                } else {
                    self.seq(&n.finalbody, Frontier::closed(exits), loops)
                }
            }
            "with" => {
                let b = self.straight(n, &fr);
                self.seq(&n.body, Frontier::extend(b), loops)
            }
            "return" | "raise" => {
                self.straight(n, &fr);
                Frontier::closed(Vec::new())
            }
            "break" => {
                let b = self.straight(n, &fr);
                if let Some(ctx) = loops.last_mut() {
                    ctx.breaks.push(b);
                }
                Frontier::closed(Vec::new())
            }
            "continue" => {
                let b = self.straight(n, &fr);
                if let Some(ctx) = loops.last() {
                    self.graph.edges.insert((b, ctx.head));
                }
                Frontier::closed(Vec::new())
            }
            _ => {
                let b = self.straight(n, &fr);
                Frontier::extend(b)
            }
        }
    }
}

// ------------------------------------------------------------------- sites

fn is_head(table: &StatementTable, stmt: usize) -> bool {
    table
        .get(stmt)
        .is_some_and(|e| matches!(e.kind, StmtKind::BranchHead | StmtKind::LoopHead))
}

/// Ranks question sites: terminals of blocks entered from a branch or loop
/// head first, then the remaining block terminals, then executed
/// non-terminal statements. Ties go to the lowest statement index. At most
/// `budget` indices are returned.
pub fn select_sites(table: &StatementTable, graph: &BlockGraph, trace: &Trace, budget: usize) -> Vec<usize> {
    let mut branch_targets = Vec::new();
    let mut other_terminals = Vec::new();
    for block in &graph.blocks {
        let t = block.terminal_stmt;
        let entered_by_head = graph
            .predecessors(block.block_id)
            .any(|p| is_head(table, graph.blocks[p].terminal_stmt));
        if entered_by_head && !is_head(table, t) {
            branch_targets.push(t);
        } else {
            other_terminals.push(t);
        }
    }
    let terminals: BTreeSet<usize> = graph.blocks.iter().map(|b| b.terminal_stmt).collect();
    let sequential: Vec<usize> = table
        .entries
        .iter()
        .filter(|e| !terminals.contains(&e.stmt_index) && trace.executed_lines.contains(&e.line_no))
        .map(|e| e.stmt_index)
        .collect();
    branch_targets.sort_unstable();
    other_terminals.sort_unstable();
    branch_targets
        .into_iter()
        .chain(other_terminals)
        .chain(sequential)
        .take(budget)
        .collect()
}

// --------------------------------------------------------------- PSP rules

fn usable<'a>(state: &'a ProgramState, name: &str) -> Option<&'a VariableSnapshot> {
    state.get(name).filter(|s| s.representable)
}

fn nearest_variable(table: &StatementTable, entry: &StatementEntry, state: &ProgramState) -> Option<String> {
    table.entries[..entry.stmt_index - 1]
        .iter()
        .rev()
        .filter(|e| e.function == entry.function)
        .filter(|e| match e.kind {
            StmtKind::Assign => !e.trivial_rhs,
            StmtKind::AugAssign | StmtKind::LoopHead => true,
            _ => false,
        })
        .find_map(|e| e.targets.iter().find(|t| usable(state, t).is_some()).cloned())
}

fn changed_variable(before: Option<&ProgramState>, after: &ProgramState) -> Option<(String, PspRule)> {
    let empty = ProgramState::new();
    let before = before.unwrap_or(&empty);
    let mut new = None;
    let mut changed = None;
    let mut attr = None;
    for (name, snap) in after.iter().filter(|(_, s)| s.representable) {
        let prior = before.get(name);
        let is_attr = name.contains('.');
        match prior {
            Some(p) if p == snap => {}
            _ if is_attr => {
                attr.get_or_insert_with(|| name.clone());
            }
            None => {
                new.get_or_insert_with(|| name.clone());
            }
            Some(_) => {
                changed.get_or_insert_with(|| name.clone());
            }
        }
    }
    new.map(|n| (n, PspRule::ChangedNew))
        .or_else(|| changed.map(|n| (n, PspRule::ChangedVar)))
        .or_else(|| attr.map(|n| (n, PspRule::ChangedAttr)))
}

/// Picks at most one program-state question variable per executed statement,
/// judged at the statement's first execution.
pub fn select_psp_targets(table: &StatementTable, trace: &Trace) -> Vec<PspTarget> {
    let activations = trace.activations();
    let mut first_pos: BTreeMap<u32, usize> = BTreeMap::new();
    for (pos, step) in trace.steps.iter().enumerate() {
        if step.event == StepEvent::Stmt {
            first_pos.entry(step.line_no).or_insert(pos);
        }
    }
    let mut out = Vec::new();
    for entry in &table.entries {
        let Some(&pos) = first_pos.get(&entry.line_no) else {
            continue;
        };
        let state = &trace.steps[pos].state_after;
        let pick = match entry.kind {
            StmtKind::Assign if entry.trivial_rhs => None,
            StmtKind::Assign => entry
                .targets
                .iter()
                .find(|t| usable(state, t).is_some())
                .map(|t| (t.clone(), PspRule::AssignLhs)),
            StmtKind::AugAssign => entry
                .targets
                .iter()
                .find(|t| usable(state, t).is_some())
                .map(|t| (t.clone(), PspRule::AugAssign)),
            StmtKind::ReturnStmt => {
                let direct = (!entry.ret_const)
                    .then(|| entry.ret_names.iter().find(|n| usable(state, n).is_some()).cloned())
                    .flatten();
                match direct {
                    Some(v) => Some((v, PspRule::ReturnVar)),
                    None => nearest_variable(table, entry, state).map(|v| (v, PspRule::NearestVar)),
                }
            }
            _ => changed_variable(trace.state_before(pos, &activations), state),
        };
        if let Some((variable, source_rule)) = pick {
            out.push(PspTarget {
                stmt_index: entry.stmt_index,
                variable,
                source_rule,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracer::trace_execution;

    const STRAIGHT: &str = "def f(x):\n    y = x + 1\n    return y";
    const IF_ELSE: &str =
        "def g(c):\n    if c:\n        a = 1\n    else:\n        a = 2\n    b = a * 3\n    return b\n";

    fn kinds(t: &StatementTable) -> Vec<(usize, u32, StmtKind)> {
        t.entries.iter().map(|e| (e.stmt_index, e.line_no, e.kind)).collect()
    }

    #[test]
    fn indexes_straight_line() {
        let t = index_statements(STRAIGHT).unwrap();
        assert_eq!(kinds(&t), [(1, 2, StmtKind::Assign), (2, 3, StmtKind::ReturnStmt)]);
    }

    #[test]
    fn if_else_with_four_body_statements_has_five_entries() {
        let program = "def k(c):\n    if c:\n        a = 1\n        b = 2\n    else:\n        a = 3\n        b = 4\n";
        let t = index_statements(program).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.entries[0].kind, StmtKind::BranchHead);
        assert_eq!(t.lines(), BTreeSet::from([2, 3, 4, 6, 7]));
    }

    #[test]
    fn unparseable_program() {
        assert!(matches!(
            index_statements("def f(:\n  pass"),
            Err(AnalyzerError::Parse(_))
        ));
    }

    #[test]
    fn docstrings_are_not_statements() {
        let t = index_statements("def f():\n    \"\"\"doc\n    more\"\"\"\n    return 1\n").unwrap();
        assert_eq!(t.lines(), BTreeSet::from([4]));
    }

    fn graph(program: &str) -> (StatementTable, BlockGraph) {
        let parsed = parse_program(program).unwrap();
        let table = parsed.table();
        let g = parsed.blocks(&table);
        (table, g)
    }

    fn block_sets(g: &BlockGraph) -> Vec<Vec<usize>> {
        g.blocks.iter().map(|b| b.stmt_indices.clone()).collect()
    }

    #[test]
    fn straight_line_is_one_block() {
        let (_, g) = graph("def f(x):\n    a = x\n    b = a\n    return b\n");
        assert_eq!(block_sets(&g), [vec![1, 2, 3]]);
        assert_eq!(g.blocks[0].terminal_stmt, 3);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn if_else_diamond() {
        // if c: A else: B; C  (C = `b = a * 3; return b`)
        let (_, g) = graph(IF_ELSE);
        assert_eq!(block_sets(&g), [vec![1], vec![2], vec![3], vec![4, 5]]);
        assert_eq!(g.edges, BTreeSet::from([(0, 1), (0, 2), (1, 3), (2, 3)]));
    }

    #[test]
    fn while_loop_back_edge() {
        let program = "def w(n):\n    i = 0\n    while i < n:\n        i += 1\n        n -= 0\n    return i\n";
        let (_, g) = graph(program);
        assert_eq!(block_sets(&g), [vec![1], vec![2], vec![3, 4], vec![5]]);
        assert!(g.has_edge(2, 1), "body terminal loops back to head");
        assert_eq!(g.blocks[2].terminal_stmt, 4);
        assert!(g.has_edge(1, 3));
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn break_and_continue_edges() {
        let program =
            "def f(xs):\n    for x in xs:\n        if x:\n            continue\n        break\n    return 0\n";
        let (_, g) = graph(program);
        // blocks: [for] [if] [continue] [break] [return]
        assert_eq!(block_sets(&g), [vec![1], vec![2], vec![3], vec![4], vec![5]]);
        assert!(g.has_edge(2, 0), "continue returns to the loop head");
        assert!(g.has_edge(3, 4), "break jumps past the loop");
        assert!(g.has_edge(0, 4), "loop exhaustion exits");
    }

    #[test]
    fn blocks_partition_statements() {
        let program = "def f(xs):\n    t = 0\n    try:\n        for x in xs:\n            t += x\n    except TypeError:\n        t = -1\n    finally:\n        t += 0\n    with open('/dev/null') as fh:\n        u = 1\n    def inner(z):\n        return z\n    return inner(t)\n";
        let (table, g) = graph(program);
        let mut seen: Vec<usize> = g.blocks.iter().flat_map(|b| b.stmt_indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (1..=table.len()).collect::<Vec<_>>());
        for b in &g.blocks {
            assert_eq!(Some(&b.terminal_stmt), b.stmt_indices.last());
        }
    }

    #[test]
    fn site_ranking() {
        let (table, g) = graph(IF_ELSE);
        let t = trace_execution(IF_ELSE, "g(True)", &ResourceLimits::default()).unwrap();
        // branch targets A (stmt 2) and B (stmt 3): one executed, one not
        assert_eq!(select_sites(&table, &g, &t, 2), [2, 3]);
        assert!(select_sites(&table, &g, &t, 0).is_empty());

        let (table, g) = graph(STRAIGHT);
        let t = trace_execution(STRAIGHT, "f(1)", &ResourceLimits::default()).unwrap();
        assert_eq!(select_sites(&table, &g, &t, 1), [2]);
        assert_eq!(select_sites(&table, &g, &t, 5), [2, 1]);
    }

    fn targets(program: &str, call: &str) -> Vec<(u32, String, PspRule)> {
        let table = index_statements(program).unwrap();
        let trace = trace_execution(program, call, &ResourceLimits::default()).unwrap();
        select_psp_targets(&table, &trace)
            .into_iter()
            .map(|t| (table.get(t.stmt_index).unwrap().line_no, t.variable, t.source_rule))
            .collect()
    }

    #[test]
    fn psp_assignment_rules() {
        let program = "def f(n):\n    a = 0\n    l = []\n    a += 1\n    x = [n]\n    x[0] = 5\n    return a\n";
        let got = targets(program, "f(3)");
        assert_eq!(
            got,
            [
                (4, "a".to_string(), PspRule::AugAssign),
                (5, "x".to_string(), PspRule::AssignLhs),
                (6, "x".to_string(), PspRule::AssignLhs),
                (7, "a".to_string(), PspRule::ReturnVar),
            ]
        );
    }

    #[test]
    fn psp_constant_return_uses_nearest_variable() {
        let program = "def f(n):\n    total = n * 2\n    flag = n > 1\n    return True\n";
        let got = targets(program, "f(3)");
        assert_eq!(got.last().unwrap(), &(4, "flag".to_string(), PspRule::NearestVar));
    }

    #[test]
    fn psp_other_statements_prefer_new_then_changed_then_attr() {
        let program = "class C:\n    def __init__(self):\n        self.items = []\n    def run(self, xs):\n        for x in xs:\n            self.items.append(x)\n        return len(self.items)\n";
        let got = targets(program, "C().run([4])");
        assert!(got.contains(&(5, "x".to_string(), PspRule::ChangedNew)));
        assert!(got.contains(&(6, "self.items".to_string(), PspRule::ChangedAttr)));
        assert!(got.contains(&(7, "self.items".to_string(), PspRule::ReturnVar)));
    }
}
