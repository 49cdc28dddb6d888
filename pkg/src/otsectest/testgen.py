"""State-based test generation for deterministic FSMs and EFSMs.

Machines can be written in a small line-oriented text format::

    state idle initial
    state armed
    var count 0 3 0
    trans idle -arm/ok-> armed if count < 3 do count := count + 1
    trans armed -reset-> idle

Tie-breaking everywhere is lexicographic on input tokens so that the
generated sequences are reproducible.
"""

from __future__ import annotations

import operator
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

from otsectest.errors import BudgetExceeded, FsmError, UndefinedInput, UnreachableTransition

#: Pseudo-input returning the machine to its initial state. Only emitted by
#: :func:`generate_transition_tour` when no uncovered transition is reachable.
RESET = "<reset>"

_TOKEN_RE = re.compile(r"^[^\s<>]+$")


@dataclass(frozen=True)
class Transition:
    source: str
    input: str
    target: str
    output: str | None = None


@dataclass(frozen=True)
class Fsm:
    states: tuple[str, ...]
    initial: str
    transitions: tuple[Transition, ...]
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if not self.inputs:
            object.__setattr__(self, "inputs", tuple(sorted({t.input for t in self.transitions})))
        else:
            object.__setattr__(self, "inputs", tuple(self.inputs))
        if not self.outputs:
            outs = {t.output for t in self.transitions if t.output is not None}
            object.__setattr__(self, "outputs", tuple(sorted(outs)))
        else:
            object.__setattr__(self, "outputs", tuple(self.outputs))
        states = set(self.states)
        if len(states) != len(self.states):
            raise FsmError("duplicate state id")
        if self.initial not in states:
            raise FsmError(f"initial state {self.initial!r} not declared")
        seen = set()
        for t in self.transitions:
            if t.source not in states or t.target not in states:
                raise FsmError(f"transition {t.source}-{t.input}->{t.target} uses an undeclared state")
            if t.input not in self.inputs:
                raise FsmError(f"input {t.input!r} missing from the alphabet")
            if t.input == RESET:
                raise FsmError(f"input {RESET!r} is reserved")
            if (t.source, t.input) in seen:
                raise FsmError(f"nondeterministic: two transitions on {t.input!r} from {t.source!r}")
            seen.add((t.source, t.input))

    def outgoing(self, state: str) -> list[tuple[int, Transition]]:
        """Transitions leaving ``state`` with their indices, ordered by input token."""
        return sorted(
            ((i, t) for i, t in enumerate(self.transitions) if t.source == state),
            key=lambda pair: pair[1].input,
        )

    def step(self, state: str, token: str) -> tuple[int, Transition] | None:
        for i, t in enumerate(self.transitions):
            if t.source == state and t.input == token:
                return i, t
        return None


@dataclass(frozen=True)
class TestSequence:
    inputs: tuple[str, ...]
    expected_outputs: tuple[str | None, ...]
    covered: frozenset[int] = frozenset()

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if len(self.inputs) != len(self.expected_outputs):
            raise ValueError("inputs and expected_outputs differ in length")


def _sequence(fsm: Fsm, path: Sequence[tuple[int, Transition] | None]) -> TestSequence:
    return TestSequence(
        inputs=tuple(RESET if step is None else step[1].input for step in path),
        expected_outputs=tuple(None if step is None else step[1].output for step in path),
        covered=frozenset(step[0] for step in path if step is not None),
    )


def _shortest_paths(fsm: Fsm, start: str) -> dict[str, list[tuple[int, Transition]]]:
    # BFS expanding inputs in sorted order yields, per state, the
    # lexicographically smallest among the shortest input sequences
    paths: dict[str, list[tuple[int, Transition]]] = {start: []}
    queue = deque([start])
    while queue:
        state = queue.popleft()
        for i, t in fsm.outgoing(state):
            if t.target not in paths:
                paths[t.target] = paths[state] + [(i, t)]
                queue.append(t.target)
    return paths


def generate_state_cover(fsm: Fsm) -> dict[str, TestSequence]:
    """Shortest input sequence from the initial state to every reachable state."""
    paths = _shortest_paths(fsm, fsm.initial)
    return {s: _sequence(fsm, paths[s]) for s in fsm.states if s in paths}


def generate_transition_tour(fsm: Fsm) -> TestSequence:
    """One input sequence from the initial state that fires every transition.

    Greedy: repeatedly walk to the nearest uncovered transition (shortest
    path, then smallest input sequence) and fire it. When nothing uncovered
    is reachable from the current state the tour emits :data:`RESET`.
    """
    reachable = _shortest_paths(fsm, fsm.initial)
    unreachable = [i for i, t in enumerate(fsm.transitions) if t.source not in reachable]
    if unreachable:
        raise UnreachableTransition(unreachable)

    uncovered = set(range(len(fsm.transitions)))
    walk: list[tuple[int, Transition] | None] = []
    state = fsm.initial
    while uncovered:
        paths = _shortest_paths(fsm, state)
        best = None
        for i in uncovered:
            t = fsm.transitions[i]
            if t.source not in paths:
                continue
            candidate = paths[t.source] + [(i, t)]
            key = (len(candidate), [step[1].input for step in candidate])
            if best is None or key < best[0]:
                best = (key, candidate)
        if best is None:
            walk.append(None)
            state = fsm.initial
            continue
        for i, t in best[1]:
            uncovered.discard(i)
            walk.append((i, t))
        state = best[1][-1][1].target
    return _sequence(fsm, walk)


def replay(fsm: Fsm, inputs: Iterable[str], index: int = 0) -> tuple[list[int], str]:
    """Run ``inputs`` from the initial state; returns fired transition indices and the final state."""
    state = fsm.initial
    fired = []
    for step, token in enumerate(inputs):
        if token == RESET:
            state = fsm.initial
            continue
        hit = fsm.step(state, token)
        if hit is None:
            raise UndefinedInput(index, step, token)
        fired.append(hit[0])
        state = hit[1].target
    return fired, state


def coverage(fsm: Fsm, sequences: Iterable[TestSequence]) -> float:
    """Fraction of transitions fired by replaying ``sequences``."""
    if not fsm.transitions:
        return 1.0
    covered: set[int] = set()
    for index, seq in enumerate(sequences):
        covered.update(replay(fsm, seq.inputs, index)[0])
    return len(covered) / len(fsm.transitions)


# Extended machines -----------------------------------------------------------

LinearExpr = tuple[tuple[str, int], ...]  # ((var, coef), ..., ("", const))

_CMP = {"<": operator.lt, "<=": operator.le, "=": operator.eq, "==": operator.eq,
        "!=": operator.ne, ">=": operator.ge, ">": operator.gt}


@dataclass(frozen=True)
class Variable:
    name: str
    min: int
    max: int
    init: int

    def __post_init__(self):
        if not self.min <= self.init <= self.max:
            raise FsmError(f"variable {self.name}: init {self.init} outside [{self.min}, {self.max}]")


@dataclass(frozen=True)
class GuardAtom:
    left: LinearExpr
    op: str
    right: LinearExpr


@dataclass(frozen=True)
class EfsmTransition:
    source: str
    input: str
    target: str
    output: str | None = None
    guard: tuple[GuardAtom, ...] = ()
    updates: tuple[tuple[str, LinearExpr], ...] = ()


@dataclass(frozen=True)
class Efsm:
    """Control states plus bounded integer variables, guards and linear updates.

    Several transitions may share a ``(source, input)`` pair as long as their
    guards never hold together; this is checked during unfolding.
    """

    states: tuple[str, ...]
    initial: str
    transitions: tuple[EfsmTransition, ...]
    variables: tuple[Variable, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "variables", tuple(self.variables))
        if self.initial not in self.states:
            raise FsmError(f"initial state {self.initial!r} not declared")
        names = {v.name for v in self.variables}
        if len(names) != len(self.variables):
            raise FsmError("duplicate variable")
        for t in self.transitions:
            if t.source not in self.states or t.target not in self.states:
                raise FsmError(f"transition {t.source}-{t.input}->{t.target} uses an undeclared state")
            used = {v for atom in t.guard for v, _ in atom.left + atom.right if v}
            for var, expr in t.updates:
                used.add(var)
                used.update(v for v, _ in expr if v)
            if used - names:
                raise FsmError(f"undeclared variable(s) {sorted(used - names)}")

    def initial_valuation(self) -> tuple[int, ...]:
        return tuple(v.init for v in self.variables)

    def enabled(self, state: str, valuation: Sequence[int]) -> list[tuple[EfsmTransition, tuple[int, ...]]]:
        """Transitions firable from ``(state, valuation)`` with the successor valuation.

        A transition whose updates would leave a variable's range is not enabled.
        """
        env = {v.name: x for v, x in zip(self.variables, valuation)}
        out = []
        for t in self.transitions:
            if t.source != state:
                continue
            if not all(_CMP[a.op](_eval_linear(a.left, env), _eval_linear(a.right, env)) for a in t.guard):
                continue
            new = dict(env)
            for var, expr in t.updates:
                new[var] = _eval_linear(expr, env)
            if all(v.min <= new[v.name] <= v.max for v in self.variables):
                out.append((t, tuple(new[v.name] for v in self.variables)))
        return out

    def product_id(self, state: str, valuation: Sequence[int]) -> str:
        return state + "@" + ",".join(f"{v.name}={x}" for v, x in zip(self.variables, valuation))


def _eval_linear(expr: LinearExpr, env: Mapping[str, int]) -> int:
    return sum(coef * (env[var] if var else 1) for var, coef in expr)


def unfold_efsm(efsm: Efsm, state_budget: int) -> Fsm:
    """Explicit-state product of control states and reachable valuations."""
    if state_budget < 1:
        raise ValueError("state_budget must be >= 1")
    start = (efsm.initial, efsm.initial_valuation())
    order = [start]
    seen = {start}
    transitions = []
    queue = deque([start])
    while queue:
        state, valuation = queue.popleft()
        source = efsm.product_id(state, valuation)
        fired: dict[str, EfsmTransition] = {}
        for t, nxt in sorted(efsm.enabled(state, valuation), key=lambda pair: pair[0].input):
            if t.input in fired:
                raise FsmError(f"nondeterministic: two enabled transitions on {t.input!r} in {source}")
            fired[t.input] = t
            node = (t.target, nxt)
            if node not in seen:
                if len(seen) >= state_budget:
                    raise BudgetExceeded(f"more than {state_budget} product states")
                seen.add(node)
                order.append(node)
                queue.append(node)
            transitions.append(Transition(source, t.input, efsm.product_id(*node), t.output))
    return Fsm(
        states=tuple(efsm.product_id(s, v) for s, v in order),
        initial=efsm.product_id(*start),
        transitions=tuple(transitions),
    )


# Text format -----------------------------------------------------------------

_TRANS_RE = re.compile(
    r"^trans\s+(?P<src>\S+)\s+-(?P<input>.+?)(?:/(?P<output>[^/]+?))?->\s+(?P<dst>\S+)"
    r"(?:\s+if\s+(?P<guard>.+?))?(?:\s+do\s+(?P<updates>.+))?$"
)
_LIN_TOKEN_RE = re.compile(r"\s*([+-]?)\s*(?:(\d+)\s*\*?\s*)?([A-Za-z_]\w*)?")
_GUARD_SPLIT_RE = re.compile(r"\s+AND\s+|\s*&&\s*", re.IGNORECASE)
_CMP_RE = re.compile(r"^(.+?)\s*(<=|>=|!=|==|=|<|>)\s*(.+)$")


def parse_linear(text: str) -> LinearExpr:
    """Parse ``2*x - y + 3`` into canonical ``((var, coef), ..., ("", const))`` form."""
    coefs: dict[str, int] = {}
    pos = 0
    text = text.strip()
    if not text:
        raise FsmError("empty expression")
    first = True
    while pos < len(text):
        m = _LIN_TOKEN_RE.match(text, pos)
        sign, number, var = m.groups()
        if m.end() == pos or (number is None and var is None):
            raise FsmError(f"bad linear expression {text!r}")
        if not sign and not first:
            raise FsmError(f"missing operator in {text!r}")
        coef = int(number) if number is not None else 1
        if sign == "-":
            coef = -coef
        key = var or ""
        coefs[key] = coefs.get(key, 0) + coef
        pos = m.end()
        first = False
    terms = tuple(sorted((v, c) for v, c in coefs.items() if v and c))
    const = coefs.get("", 0)
    return terms + ((("", const),) if const or not terms else ())


def format_linear(expr: LinearExpr) -> str:
    parts = []
    for var, coef in expr:
        mag = abs(coef)
        body = var if var and mag == 1 else (f"{mag}*{var}" if var else str(mag))
        if not parts:
            parts.append(("-" if coef < 0 else "") + body)
        else:
            parts.append(("- " if coef < 0 else "+ ") + body)
    return " ".join(parts) if parts else "0"


def _parse_guard(text: str) -> tuple[GuardAtom, ...]:
    atoms = []
    for piece in _GUARD_SPLIT_RE.split(text.strip()):
        m = _CMP_RE.match(piece.strip())
        if m is None:
            raise FsmError(f"bad guard {piece!r}")
        op = "=" if m.group(2) == "==" else m.group(2)
        atoms.append(GuardAtom(parse_linear(m.group(1)), op, parse_linear(m.group(3))))
    return tuple(atoms)


def _parse_updates(text: str) -> tuple[tuple[str, LinearExpr], ...]:
    updates = []
    for piece in re.split(r"[;,]", text):
        if not piece.strip():
            continue
        var, sep, expr = piece.partition(":=")
        if not sep or not re.match(r"^[A-Za-z_]\w*$", var.strip()):
            raise FsmError(f"bad update {piece!r}")
        updates.append((var.strip(), parse_linear(expr)))
    return tuple(updates)


def parse_machine(text: str) -> Union[Fsm, Efsm]:
    """Parse the machine text format; returns an :class:`Efsm` when variables or guards occur."""
    states: list[str] = []
    initial = None
    variables = []
    raw = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()[0]
        if head == "state":
            parts = line.split()
            if len(parts) not in (2, 3) or (len(parts) == 3 and parts[2] != "initial"):
                raise FsmError(f"line {lineno}: expected 'state <id> [initial]'")
            if parts[1] in states:
                raise FsmError(f"line {lineno}: duplicate state {parts[1]!r}")
            states.append(parts[1])
            if len(parts) == 3:
                if initial is not None:
                    raise FsmError(f"line {lineno}: second initial state")
                initial = parts[1]
        elif head == "var":
            parts = line.split()
            if len(parts) != 5:
                raise FsmError(f"line {lineno}: expected 'var <name> <min> <max> <init>'")
            try:
                variables.append(Variable(parts[1], int(parts[2]), int(parts[3]), int(parts[4])))
            except ValueError:
                raise FsmError(f"line {lineno}: variable bounds must be integers") from None
        elif head == "trans":
            m = _TRANS_RE.match(line)
            if m is None:
                raise FsmError(f"line {lineno}: expected 'trans <from> -<input>[/<output>]-> <to>'")
            if not _TOKEN_RE.match(m["input"]):
                raise FsmError(f"line {lineno}: bad input token {m['input']!r}")
            raw.append(EfsmTransition(
                m["src"], m["input"], m["dst"], m["output"],
                _parse_guard(m["guard"]) if m["guard"] else (),
                _parse_updates(m["updates"]) if m["updates"] else (),
            ))
        else:
            raise FsmError(f"line {lineno}: unknown directive {head!r}")
    if not states:
        raise FsmError("no states declared")
    initial = initial or states[0]
    if variables or any(t.guard or t.updates for t in raw):
        return Efsm(tuple(states), initial, tuple(raw), tuple(variables))
    return Fsm(tuple(states), initial, tuple(Transition(t.source, t.input, t.target, t.output) for t in raw))


def format_machine(machine: Union[Fsm, Efsm]) -> str:
    lines = [f"state {s} initial" if s == machine.initial else f"state {s}" for s in machine.states]
    for v in getattr(machine, "variables", ()):
        lines.append(f"var {v.name} {v.min} {v.max} {v.init}")
    for t in machine.transitions:
        arrow = f"-{t.input}/{t.output}->" if t.output is not None else f"-{t.input}->"
        line = f"trans {t.source} {arrow} {t.target}"
        if getattr(t, "guard", ()):
            line += " if " + " AND ".join(
                f"{format_linear(a.left)} {a.op} {format_linear(a.right)}" for a in t.guard)
        if getattr(t, "updates", ()):
            line += " do " + "; ".join(f"{var} := {format_linear(e)}" for var, e in t.updates)
        lines.append(line)
    return "\n".join(lines) + "\n"


def is_machine_text(text: str) -> bool:
    try:
        parse_machine(text)
    except FsmError:
        return False
    return True


def as_fsm(machine: Union[Fsm, Efsm], state_budget: int = 10_000) -> Fsm:
    return machine if isinstance(machine, Fsm) else unfold_efsm(machine, state_budget)
