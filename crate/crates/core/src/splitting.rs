//! Labels, common-frontier detection, splitting strategies and the
//! construction/installation of share payloads.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::engine::{ChoicePoint, CpId, Engine, EngineError, NextClause};
use crate::program::ClauseRef;
use crate::term::{Term, VarId};

/// Identifies one shared parallel choice-point across agents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Label {
    pub rank: u32,
    pub counter: u64,
    /// Position in the owner's parallel-choice-point sequence.
    pub cp_index: u32,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.rank, self.counter, self.cp_index)
    }
}

/// Labels of the parallel choice-points, bottom (oldest) first. The stack is
/// always a prefix of the parallel-choice-point sequence, so a label's
/// position equals its `cp_index`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelStack {
    labels: Vec<Label>,
    counter: u64,
}

impl Default for LabelStack {
    fn default() -> Self {
        LabelStack::new()
    }
}

impl LabelStack {
    pub fn new() -> LabelStack {
        LabelStack {
            labels: Vec::new(),
            counter: 1,
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Epoch the next labelling round will use.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn truncate(&mut self, len: usize) {
        self.labels.truncate(len);
    }

    /// Empties the stack; the counter is preserved.
    pub fn clear(&mut self) {
        self.labels.clear();
    }

    pub(crate) fn extend(&mut self, labels: &[Label]) {
        self.labels.extend_from_slice(labels);
    }
}

/// Gives every unlabelled parallel choice-point a label of the current epoch.
/// Returns the number of labels created; the counter moves on only if that
/// number is positive.
pub fn label_parallel_choicepoints(engine: &mut Engine) -> usize {
    let parallel = engine.cps.iter().filter(|cp| cp.parallel).count();
    let rank = engine.rank();
    let labels = &mut engine.labels;
    let first = labels.len();
    for i in first..parallel {
        labels.labels.push(Label {
            rank,
            counter: labels.counter,
            cp_index: i as u32,
        });
    }
    let created = parallel.saturating_sub(first);
    if created > 0 {
        labels.counter += 1;
    }
    created
}

/// Deepest label of the longest common prefix of two label stacks.
pub fn find_common_frontier(giver: &[Label], receiver: &[Label]) -> Option<Label> {
    giver
        .iter()
        .zip(receiver)
        .take_while(|(a, b)| a == b)
        .last()
        .map(|(a, _)| *a)
}

/// Synthetic garbage-collection hook: forget every label.
pub fn invalidate_labels(engine: &mut Engine) {
    engine.labels.clear();
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Horizontal,
    VerticalAlternate,
    VerticalBlock,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Horizontal,
        Strategy::VerticalAlternate,
        Strategy::VerticalBlock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Horizontal => "horizontal",
            Strategy::VerticalAlternate => "vertical_alternate",
            Strategy::VerticalBlock => "vertical_block",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Strategy> {
        Strategy::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "horizontal" => Ok(Strategy::Horizontal),
            "vertical_alternate" | "alternate" => Ok(Strategy::VerticalAlternate),
            "vertical_block" | "block" => Ok(Strategy::VerticalBlock),
            _ => Err(format!("unknown splitting strategy `{s}`")),
        }
    }
}

/// Everything that determines how a stack is divided.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub strategy: Strategy,
    /// Fraction of the parallel choice-points kept by the giver (block only).
    pub ratio: f64,
    /// Share only the oldest parallel choice-point with work.
    pub top_most: bool,
}

impl SplitSpec {
    pub fn new(strategy: Strategy) -> SplitSpec {
        SplitSpec {
            strategy,
            ratio: 0.5,
            top_most: false,
        }
    }

    fn block_style(&self) -> bool {
        self.strategy == Strategy::VerticalBlock || (self.top_most && self.strategy != Strategy::Horizontal)
    }
}

/// Number of choice-points the giver keeps under block splitting.
pub fn block_keep_count(n: usize, ratio: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let k = (ratio * n as f64 - 1e-9).ceil().max(0.0) as usize;
    // The giver always hands something over once there are two or more.
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        k.min(n)
    }
}

/// Divides the untried alternatives of `cps` (listed bottom-most first)
/// between giver and receiver. The stack grows downwards here: `cps` starts
/// with the newest choice-point. Returns `(keep, give)`, aligned with `cps`.
pub fn split(strategy: Strategy, cps: &[Vec<ClauseRef>], ratio: f64) -> (Vec<Vec<ClauseRef>>, Vec<Vec<ClauseRef>>) {
    let n = cps.len();
    let mut keep = vec![Vec::new(); n];
    let mut give = vec![Vec::new(); n];
    match strategy {
        Strategy::VerticalAlternate => {
            for (i, alts) in cps.iter().enumerate() {
                if i % 2 == 0 {
                    keep[i] = alts.clone();
                } else {
                    give[i] = alts.clone();
                }
            }
        }
        Strategy::VerticalBlock => {
            let k = block_keep_count(n, ratio);
            for (i, alts) in cps.iter().enumerate() {
                if i < k {
                    keep[i] = alts.clone();
                } else {
                    give[i] = alts.clone();
                }
            }
        }
        Strategy::Horizontal => {
            let mut giver_larger = true;
            for (i, alts) in cps.iter().enumerate() {
                let half = alts.len() / 2;
                let cut = if alts.len() % 2 == 1 {
                    let c = if giver_larger { half + 1 } else { half };
                    giver_larger = !giver_larger;
                    c
                } else {
                    half
                };
                keep[i] = alts[..cut].to_vec();
                give[i] = alts[cut..].to_vec();
            }
        }
    }
    (keep, give)
}

/// Shape of one choice-point as seen by the splitter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CpShape {
    pub parallel: bool,
    pub alternatives: Vec<ClauseRef>,
}

/// Alternative ownership after a split, indexed by choice-point depth.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitAssignment {
    pub keep: Vec<Vec<ClauseRef>>,
    pub give: Vec<Vec<ClauseRef>>,
}

impl SplitAssignment {
    pub fn gives_anything(&self) -> bool {
        self.give.iter().any(|g| !g.is_empty())
    }

    /// Parallel choice-points with work on the receiving side.
    pub fn receiver_load(&self, shapes: &[CpShape]) -> u32 {
        self.give
            .iter()
            .zip(shapes)
            .filter(|(g, s)| s.parallel && !g.is_empty())
            .count() as u32
    }
}

/// Splits a whole stack (depth 0 first). Parallel choice-points are divided
/// according to `spec`; sequential ones stay with the giver except under
/// block-style splitting, where those older than the giver's kept segment go
/// to the receiver so that all of its work lies to the right of the giver's.
pub fn assign_stack(spec: SplitSpec, shapes: &[CpShape]) -> SplitAssignment {
    let n = shapes.len();
    let mut keep: Vec<Vec<ClauseRef>> = shapes.iter().map(|s| s.alternatives.clone()).collect();
    let mut give = vec![Vec::new(); n];
    let mut work: Vec<usize> = (0..n)
        .rev()
        .filter(|&d| shapes[d].parallel && !shapes[d].alternatives.is_empty())
        .collect();
    if spec.top_most {
        work = work.last().copied().into_iter().collect();
    }
    let alts: Vec<Vec<ClauseRef>> = work.iter().map(|&d| shapes[d].alternatives.clone()).collect();
    let (k, g) = if spec.top_most && spec.strategy != Strategy::Horizontal {
        (vec![Vec::new(); alts.len()], alts)
    } else {
        split(spec.strategy, &alts, spec.ratio)
    };
    for ((&d, k), g) in work.iter().zip(k).zip(g) {
        keep[d] = k;
        give[d] = g;
    }
    if spec.block_style() {
        let cut = (0..n).find(|&d| shapes[d].parallel && !keep[d].is_empty()).unwrap_or(n);
        for d in 0..cut {
            if !shapes[d].parallel {
                give[d] = std::mem::take(&mut keep[d]);
            }
        }
    }
    SplitAssignment { keep, give }
}

/// Next-clause fields for one side of a split: alternatives where there are
/// any, `Schedule` on the choice-point just above the oldest work (or on the
/// top when there is none), `TrustFail` elsewhere.
pub fn side_next_clauses(side: &[Vec<ClauseRef>]) -> Vec<NextClause> {
    let mut next: Vec<NextClause> = side.iter().map(|a| NextClause::from_clauses(a.clone())).collect();
    match side.iter().position(|a| !a.is_empty()) {
        Some(0) => {}
        Some(d) => next[d - 1] = NextClause::Schedule,
        None => {
            if let Some(top) = next.last_mut() {
                *top = NextClause::Schedule;
            }
        }
    }
    next
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShareMode {
    Full,
    Incremental(Label),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharePayload {
    pub mode: ShareMode,
    pub spec: SplitSpec,
    /// Depth of the first shipped choice-point.
    pub base_depth: u32,
    /// Creation id of the common choice-point (incremental mode).
    pub common_id: Option<CpId>,
    pub cp_segment: Vec<ChoicePoint>,
    pub label_segment: Vec<Label>,
    /// First variable id of `heap_segment`.
    pub heap_base: u32,
    pub heap_segment: Vec<Option<Term>>,
    /// Variables of the shipped value-trail segment, oldest first.
    pub trail_vars: Vec<VarId>,
    pub binding_installs: Vec<(VarId, Term)>,
    pub nextclause_repairs: Vec<(u32, NextClause)>,
    pub split_assignment: SplitAssignment,
    pub load_after: u32,
    pub receiver_load: u32,
    /// Creation ids of every choice-point up to the common one; only filled
    /// when shadow checking is on.
    pub prefix_check: Vec<CpId>,
}

impl SharePayload {
    pub fn is_incremental(&self) -> bool {
        matches!(self.mode, ShareMode::Incremental(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("protocol corruption: {0}")]
    ProtocolCorruption(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn corrupt(msg: impl Into<String>) -> SplitError {
    SplitError::ProtocolCorruption(msg.into())
}

fn shapes_of(cps: &[ChoicePoint]) -> Vec<CpShape> {
    cps.iter()
        .map(|cp| CpShape {
            parallel: cp.parallel,
            alternatives: cp.next.remaining(),
        })
        .collect()
}

/// Depth of the choice-point carrying `label`, if the label is live.
fn depth_of_label(engine: &Engine, label: &Label) -> Option<usize> {
    if engine.labels.labels().get(label.cp_index as usize) != Some(label) {
        return None;
    }
    engine.cps.iter().position(|cp| cp.par_index == Some(label.cp_index))
}

/// Splits the giver's stack and packages the receiver's share. Labelling
/// must already have happened. Returns `None` when the split would give
/// nothing away; the giver is then left untouched.
pub fn build_share_payload(
    giver: &mut Engine,
    common: Option<Label>,
    spec: SplitSpec,
    shadow: bool,
) -> Result<Option<SharePayload>, SplitError> {
    let shapes = shapes_of(&giver.cps);
    let assignment = assign_stack(spec, &shapes);
    if !assignment.gives_anything() {
        return Ok(None);
    }
    let ch = match common {
        Some(label) => Some(
            depth_of_label(giver, &label)
                .ok_or_else(|| corrupt(format!("common label {label} not on the giver's stack")))?,
        ),
        None => None,
    };
    let receiver_next = side_next_clauses(&assignment.give);
    let giver_next = side_next_clauses(&assignment.keep);

    let top = giver.cps.last().expect("a split with work has choice-points");
    let (top_heap, top_trail) = (top.heap_mark as usize, top.trail_mark as usize);
    let (start, heap_base, trail_base) = match ch {
        Some(d) => (d + 1, giver.cps[d].heap_mark as usize, giver.cps[d].trail_mark as usize),
        None => (0, 0, 0),
    };

    // Bindings made after the top choice-point do not belong to the share.
    let late: HashSet<VarId> = giver.trail[top_trail..].iter().map(|(v, _)| *v).collect();
    let heap_segment = (heap_base..top_heap)
        .map(|v| {
            if late.contains(&(v as VarId)) {
                None
            } else {
                giver.heap[v].clone()
            }
        })
        .collect();
    let trail_segment = &giver.trail[trail_base..top_trail];
    let binding_installs = trail_segment
        .iter()
        .filter(|(v, _)| (*v as usize) < heap_base)
        .cloned()
        .collect();
    let trail_vars = trail_segment.iter().map(|(v, _)| *v).collect();

    let cp_segment = giver.cps[start..]
        .iter()
        .zip(&receiver_next[start..])
        .map(|(cp, next)| ChoicePoint {
            next: next.clone(),
            ..cp.clone()
        })
        .collect();
    let first_label = giver.cps[start..]
        .iter()
        .find_map(|cp| cp.par_index)
        .map_or(giver.labels.len(), |i| i as usize);
    let label_segment = giver.labels.labels()[first_label.min(giver.labels.len())..].to_vec();
    let nextclause_repairs = match ch {
        Some(d) => (0..=d).map(|i| (i as u32, receiver_next[i].clone())).collect(),
        None => Vec::new(),
    };
    let prefix_check = match (shadow, ch) {
        (true, Some(d)) => giver.cps[..=d].iter().map(|cp| cp.id).collect(),
        _ => Vec::new(),
    };
    let receiver_load = assignment.receiver_load(&shapes);

    for (cp, next) in giver.cps.iter_mut().zip(giver_next) {
        cp.next = next;
    }
    let payload = SharePayload {
        mode: match (common, ch) {
            (Some(l), Some(_)) => ShareMode::Incremental(l),
            _ => ShareMode::Full,
        },
        spec,
        base_depth: start as u32,
        common_id: ch.map(|d| giver.cps[d].id),
        cp_segment,
        label_segment,
        heap_base: heap_base as u32,
        heap_segment,
        trail_vars,
        binding_installs,
        nextclause_repairs,
        split_assignment: assignment,
        load_after: giver.load(),
        receiver_load,
        prefix_check,
    };
    Ok(Some(payload))
}

/// Installs a share on an idle receiver and positions it to backtrack into
/// its first assigned alternative.
pub fn install_payload(receiver: &mut Engine, payload: &SharePayload) -> Result<(), SplitError> {
    let base = payload.base_depth as usize;
    match payload.mode {
        ShareMode::Full => {
            if base != 0 || payload.heap_base != 0 || !payload.binding_installs.is_empty() {
                return Err(corrupt("full payload with a non-empty common prefix"));
            }
            receiver.reset();
        }
        ShareMode::Incremental(label) => {
            let d = depth_of_label(receiver, &label)
                .ok_or_else(|| corrupt(format!("common label {label} absent on the receiver")))?;
            if d + 1 != base || payload.common_id != Some(receiver.cps[d].id) {
                return Err(corrupt(format!("common label {label} names a different choice-point")));
            }
            if !payload.prefix_check.is_empty() {
                let mine: Vec<CpId> = receiver.cps[..=d].iter().map(|cp| cp.id).collect();
                if mine != payload.prefix_check {
                    return Err(corrupt("stacks differ above the common choice-point"));
                }
            }
            receiver.backtrack_to(d)?;
            if receiver.labels.len() != label.cp_index as usize + 1 {
                return Err(corrupt("label stack does not end at the common label"));
            }
        }
    }
    verify_assignment(receiver, payload)?;

    for (depth, next) in &payload.nextclause_repairs {
        let cp = receiver
            .cps
            .get_mut(*depth as usize)
            .ok_or_else(|| corrupt(format!("repair for missing depth {depth}")))?;
        cp.next = next.clone();
    }
    if receiver.heap.len() != payload.heap_base as usize {
        return Err(corrupt("heap mark of the common choice-point differs"));
    }
    receiver.heap.extend(payload.heap_segment.iter().cloned());
    for (v, t) in &payload.binding_installs {
        match receiver.heap.get_mut(*v as usize) {
            Some(cell @ None) => *cell = Some(t.clone()),
            _ => return Err(corrupt(format!("cannot install binding of _G{v}"))),
        }
    }
    let mut installs = payload.binding_installs.iter();
    for &v in &payload.trail_vars {
        let value = if v < payload.heap_base {
            match installs.next() {
                Some((iv, t)) if *iv == v => t.clone(),
                _ => return Err(corrupt("trail segment disagrees with binding installs")),
            }
        } else {
            match receiver.heap.get(v as usize) {
                Some(Some(t)) => t.clone(),
                _ => return Err(corrupt(format!("trailed variable _G{v} is unbound"))),
            }
        };
        receiver.trail.push((v, value));
    }
    for cp in &payload.cp_segment {
        if cp.heap_mark as usize > receiver.heap.len() || cp.trail_mark as usize > receiver.trail.len() {
            return Err(corrupt("choice-point marks beyond the shipped segment"));
        }
        receiver.cps.push(cp.clone());
    }
    let top = receiver.cps.last().ok_or_else(|| corrupt("empty share"))?;
    if top.heap_mark as usize != receiver.heap.len() || top.trail_mark as usize != receiver.trail.len() {
        return Err(corrupt("shipped segment does not end at the top choice-point"));
    }
    receiver.labels.extend(&payload.label_segment);
    for (i, l) in receiver.labels.labels().iter().enumerate() {
        if l.cp_index as usize != i {
            return Err(corrupt("label positions out of sequence"));
        }
    }
    receiver.set_parallel_count();
    for (i, cp) in receiver.cps.iter().filter(|cp| cp.parallel).enumerate() {
        if cp.par_index != Some(i as u32) {
            return Err(corrupt("parallel choice-point positions out of sequence"));
        }
    }
    receiver.resume_by_backtracking();
    Ok(())
}

/// Recomputes the split from the shipped pre-split alternatives and checks
/// that the receiver's next-clause fields are what that split assigns.
fn verify_assignment(receiver: &Engine, payload: &SharePayload) -> Result<(), SplitError> {
    let a = &payload.split_assignment;
    let base = payload.base_depth as usize;
    let depth = base + payload.cp_segment.len();
    if a.keep.len() != depth || a.give.len() != depth {
        return Err(corrupt("split assignment does not cover the stack"));
    }
    let mut shapes = Vec::with_capacity(depth);
    for d in 0..depth {
        let parallel = if d < base {
            receiver.cps[d].parallel
        } else {
            payload.cp_segment[d - base].parallel
        };
        let mut before: Vec<ClauseRef> = a.keep[d].iter().chain(&a.give[d]).copied().collect();
        before.sort_unstable();
        if before.windows(2).any(|w| w[0] == w[1]) {
            return Err(corrupt(format!("alternative assigned to both sides at depth {d}")));
        }
        shapes.push(CpShape {
            parallel,
            alternatives: before,
        });
    }
    if assign_stack(payload.spec, &shapes) != *a {
        return Err(corrupt("split assignment does not match the strategy"));
    }
    let expected = side_next_clauses(&a.give);
    for (d, next) in &payload.nextclause_repairs {
        if expected.get(*d as usize) != Some(next) {
            return Err(corrupt(format!("repair at depth {d} disagrees with the split")));
        }
    }
    for (i, cp) in payload.cp_segment.iter().enumerate() {
        if cp.next != expected[base + i] {
            return Err(corrupt("shipped next-clause field disagrees with the split"));
        }
    }
    Ok(())
}
