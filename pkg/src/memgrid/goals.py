"""Compositional goal language and its incremental evaluator.

Goals are s-expressions of the form ``(:goal <expr>)`` where ``<expr>`` is
built from three operators and three predicates::

    (Sequence <subgoal> ...)   ; ordered subgoals
    (Or <sequence> ...)        ; alternative orderings, each a Sequence
    (And <predicate> ...)      ; conjunction, one subgoal
    (On <obj> <obj>)  (In <obj> <region>)  (Lifted <obj>)

Operator heads are case-insensitive, identifiers are ``[a-z0-9_]+`` and ``;``
starts a comment that runs to the end of the line.

Evaluation is edge-triggered: a subgoal counts as newly satisfied only when
its conjunction flips from false (at the previous call, or implicitly on the
first call) to true.  Each alive Or-branch advances at most one subgoal per
call.  A branch dies when another branch fires a subgoal that conflicts with
its own pending subgoal (e.g. ``(On bowl_1 plate_3)`` fires while the branch
still needs ``(On bowl_2 plate_3)``).  Once every subgoal of some alive branch
has fired the goal is complete; any later change to a goal-relevant predicate
is an over-repetition and latches ``failed`` while the completion fraction
stays frozen.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterator, Mapping, Union

__all__ = [
    "Predicate",
    "And",
    "Sequence",
    "Or",
    "GoalExpr",
    "Subgoal",
    "GoalSyntaxError",
    "parse_goal",
    "format_goal",
    "format_subgoal",
    "normalize_goal_text",
    "goal_branches",
    "goal_predicates",
    "count_subgoals",
    "EvalProgress",
    "initial_progress",
    "eval_step",
    "subgoal_completion",
    "predicates_conflict",
    "subgoals_conflict",
]

PREDICATE_NAMES = ("on", "in", "lifted")
_IDENT_RE = re.compile(r"[a-z0-9_]+\Z")


@dataclass(frozen=True)
class Predicate:
    """Atomic relation: ``on``/``in`` take (subject, target), ``lifted`` a subject."""

    name: str
    subject: str
    target: str | None = None

    def __post_init__(self) -> None:
        if self.name not in PREDICATE_NAMES:
            raise ValueError(f"unknown predicate {self.name!r}")
        if (self.target is None) != (self.name == "lifted"):
            raise ValueError(f"wrong arity for predicate {self.name!r}")


@dataclass(frozen=True)
class And:
    children: tuple[Union["And", Predicate], ...]


@dataclass(frozen=True)
class Sequence:
    children: tuple[Union[And, Predicate], ...]


@dataclass(frozen=True)
class Or:
    children: tuple[Sequence, ...]


GoalExpr = Union[Predicate, And, Sequence, Or]

#: One subgoal, normalized to the tuple of predicates that must hold jointly.
Subgoal = tuple[Predicate, ...]


class GoalSyntaxError(ValueError):
    """Raised on malformed goal text, with line:col in the message."""


# ---------------------------------------------------------------------------
# parsing / printing


def _tokenize(text: str) -> Iterator[tuple[str, int, int]]:
    line, col = 1, 1
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
        elif ch in " \t\r":
            col += 1
            i += 1
        elif ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif ch in "()":
            yield ch, line, col
            col += 1
            i += 1
        else:
            j = i
            while j < len(text) and text[j] not in " \t\r\n();":
                j += 1
            yield text[i:j], line, col
            col += j - i
            i = j


class _Parser:
    def __init__(self, text: str):
        self.tokens = list(_tokenize(text))
        self.pos = 0

    def error(self, msg: str, tok: tuple[str, int, int] | None = None) -> GoalSyntaxError:
        if tok is None and self.pos < len(self.tokens):
            tok = self.tokens[self.pos]
        where = f" at {tok[1]}:{tok[2]}" if tok else " at end of input"
        return GoalSyntaxError(msg + where)

    def next(self) -> tuple[str, int, int]:
        if self.pos >= len(self.tokens):
            raise self.error("unexpected end of input", None)
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value: str) -> None:
        tok = self.next()
        if tok[0] != value:
            raise self.error(f"expected {value!r}, got {tok[0]!r}", tok)

    def ident(self) -> str:
        tok = self.next()
        if not _IDENT_RE.match(tok[0]):
            raise self.error(f"invalid identifier {tok[0]!r}", tok)
        return tok[0]

    def expr(self) -> GoalExpr:
        self.expect("(")
        head_tok = self.next()
        head = head_tok[0].lower()
        if head == "on" or head == "in":
            node: GoalExpr = Predicate(head, self.ident(), self.ident())
        elif head == "lifted":
            node = Predicate("lifted", self.ident())
        elif head == "and":
            kids = self.children(head_tok, allowed=("and", "on", "in", "lifted"))
            node = And(kids)  # type: ignore[arg-type]
        elif head == "sequence":
            kids = self.children(head_tok, allowed=("and", "on", "in", "lifted"))
            node = Sequence(kids)  # type: ignore[arg-type]
        elif head == "or":
            kids = self.children(head_tok, allowed=("sequence",))
            node = Or(kids)  # type: ignore[arg-type]
        else:
            raise self.error(f"unknown operator {head_tok[0]!r}", head_tok)
        self.expect(")")
        return node

    def children(self, head_tok: tuple[str, int, int], allowed: tuple[str, ...]) -> tuple[GoalExpr, ...]:
        kids: list[GoalExpr] = []
        while self.pos < len(self.tokens) and self.tokens[self.pos][0] == "(":
            peek = self.tokens[self.pos + 1][0].lower() if self.pos + 1 < len(self.tokens) else "?"
            if peek not in allowed:
                raise self.error(
                    f"operator {head_tok[0]!r} cannot contain {peek!r}",
                    self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None,
                )
            kids.append(self.expr())
        if not kids:
            raise self.error(f"operator {head_tok[0]!r} needs at least one child", head_tok)
        return tuple(kids)


def parse_goal(text: str) -> GoalExpr:
    """Parse ``(:goal <expr>)`` text into an expression tree."""
    p = _Parser(text)
    p.expect("(")
    tok = p.next()
    if tok[0].lower() != ":goal":
        raise p.error(f"expected :goal, got {tok[0]!r}", tok)
    root = p.expr()
    p.expect(")")
    if p.pos != len(p.tokens):
        raise p.error("trailing input after goal")
    return root


_CANON = {"on": "On", "in": "In", "lifted": "Lifted"}


def _format_expr(expr: GoalExpr) -> str:
    if isinstance(expr, Predicate):
        args = expr.subject if expr.target is None else f"{expr.subject} {expr.target}"
        return f"({_CANON[expr.name]} {args})"
    head = type(expr).__name__
    return "(" + " ".join([head] + [_format_expr(c) for c in expr.children]) + ")"


def format_goal(expr: GoalExpr) -> str:
    """Canonical single-line rendering; ``parse_goal(format_goal(g)) == g``."""
    return f"(:goal {_format_expr(expr)})"


def format_subgoal(sg: Subgoal) -> str:
    """Canonical text for one subgoal conjunction, e.g. ``(On bowl_1 plate_1)``."""
    return _format_expr(sg[0]) if len(sg) == 1 else _format_expr(And(sg))


def normalize_goal_text(text: str) -> str:
    """Strip comments and collapse whitespace to the canonical token spacing."""
    out: list[str] = []
    for tok, _, _ in _tokenize(text):
        after_open = bool(out) and out[-1].endswith("(")
        if tok == ")":
            out.append(")")
        elif tok == "(":
            out.append("(" if not out or after_open else " (")
        else:
            out.append(tok if after_open else " " + tok)
    return "".join(out).lstrip()


# ---------------------------------------------------------------------------
# structure queries


def _conjunction(expr: Union[And, Predicate]) -> Subgoal:
    if isinstance(expr, Predicate):
        return (expr,)
    preds: list[Predicate] = []
    for child in expr.children:
        preds.extend(_conjunction(child))
    return tuple(preds)


def goal_branches(goal: GoalExpr) -> tuple[tuple[Subgoal, ...], ...]:
    """Normalize a goal to its Or-branches, each an ordered tuple of subgoals."""
    if isinstance(goal, Or):
        return tuple(tuple(_conjunction(c) for c in seq.children) for seq in goal.children)
    if isinstance(goal, Sequence):
        return (tuple(_conjunction(c) for c in goal.children),)
    return ((_conjunction(goal),),)


def count_subgoals(goal: GoalExpr) -> tuple[int, ...]:
    """Subgoal count per Or-branch (a bare Sequence/And/leaf is one branch)."""
    return tuple(len(b) for b in goal_branches(goal))


def goal_predicates(goal: GoalExpr) -> tuple[Predicate, ...]:
    """All distinct predicates in the goal, in first-appearance order."""
    seen: dict[Predicate, None] = {}
    for branch in goal_branches(goal):
        for sg in branch:
            for p in sg:
                seen.setdefault(p)
    return tuple(seen)


# ---------------------------------------------------------------------------
# evaluation


def predicates_conflict(p: Predicate, q: Predicate) -> bool:
    """True when ``p`` holding rules out ``q`` as a *future ordered* step.

    Same-relation pairs conflict when they share exactly one slot: an object
    sits in one place (same subject, different target) and a surface hosts one
    object (same target, different subject).  ``lifted`` conflicts across
    different subjects (one gripper).
    """
    if p.name != q.name:
        return False
    if p.name == "lifted":
        return p.subject != q.subject
    return (p.subject == q.subject) != (p.target == q.target)


def subgoals_conflict(a: Subgoal, b: Subgoal) -> bool:
    return any(predicates_conflict(p, q) for p in a for q in b)


@dataclass(frozen=True)
class EvalProgress:
    """Immutable evaluation state threaded through :func:`eval_step`.

    ``prev_values`` is ``None`` only before the first call (or when priming
    was skipped); it maps every goal-relevant predicate to its value at the
    previous call, which is what makes rising edges detectable.
    """

    satisfied: tuple[int, ...]
    alive: tuple[bool, ...]
    completed: bool
    failed: bool
    prev_values: tuple[tuple[Predicate, bool], ...] | None

    def prev_map(self) -> dict[Predicate, bool] | None:
        return None if self.prev_values is None else dict(self.prev_values)


StateLike = Union[Mapping[Predicate, bool], Callable[[Predicate], bool]]


def _value_fn(state: object) -> Callable[[Predicate], bool]:
    if isinstance(state, Mapping):
        return lambda p: bool(state[p])
    if callable(state):
        return lambda p: bool(state(p))  # type: ignore[operator]
    from . import world  # env-backed evaluation, late import to avoid a cycle

    return lambda p: world.evaluate_predicate(p, state)


def initial_progress(goal: GoalExpr, state: object | None = None) -> EvalProgress:
    """Fresh progress; when ``state`` is given, prime previous-step predicate
    values from it so conditions already true at reset need a fresh rising
    edge before they count."""
    nb = len(goal_branches(goal))
    prev = None
    if state is not None:
        value = _value_fn(state)
        prev = tuple((p, value(p)) for p in goal_predicates(goal))
    return EvalProgress((0,) * nb, (True,) * nb, False, False, prev)


def eval_step(progress: EvalProgress, goal: GoalExpr, state: object) -> EvalProgress:
    """Advance goal evaluation by one observed state.

    ``state`` may be an environment state, a ``{Predicate: bool}`` mapping, or
    a callable.  Returns a new :class:`EvalProgress`; the input is not
    mutated.  ``completed`` and ``failed`` latch once set.
    """
    branches = goal_branches(goal)
    preds = goal_predicates(goal)
    value = _value_fn(state)
    now = {p: value(p) for p in preds}
    now_t = tuple(now.items())
    prev = progress.prev_map()

    if progress.failed:
        return EvalProgress(progress.satisfied, progress.alive, progress.completed, True, now_t)

    if progress.completed:
        changed = prev is not None and any(now[p] != prev[p] for p in preds)
        return EvalProgress(progress.satisfied, progress.alive, True, changed, now_t)

    satisfied = list(progress.satisfied)
    alive = list(progress.alive)
    fired: list[tuple[int, Subgoal]] = []
    for b, branch in enumerate(branches):
        if not alive[b] or satisfied[b] >= len(branch):
            continue
        sg = branch[satisfied[b]]
        conj_now = all(now[p] for p in sg)
        conj_prev = prev is not None and all(prev[p] for p in sg)
        if conj_now and not conj_prev:
            satisfied[b] += 1
            fired.append((b, sg))

    if fired:
        for b, branch in enumerate(branches):
            if not alive[b] or satisfied[b] >= len(branch):
                continue
            own = {sg for bb, sg in fired if bb == b}
            pending = branch[satisfied[b]]
            if any(sg not in own and subgoals_conflict(sg, pending) for _, sg in fired):
                alive[b] = False

    completed = any(
        alive[b] and satisfied[b] == len(branches[b]) for b in range(len(branches))
    )
    return EvalProgress(tuple(satisfied), tuple(alive), completed, False, now_t)


def subgoal_completion(progress: EvalProgress, goal: GoalExpr) -> float:
    """Partial credit: best satisfied fraction over alive branches (over all
    branches when none survive)."""
    lens = count_subgoals(goal)
    idx = [b for b in range(len(lens)) if progress.alive[b]] or list(range(len(lens)))
    return max(progress.satisfied[b] / lens[b] for b in idx)
