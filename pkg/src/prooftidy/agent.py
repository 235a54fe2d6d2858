"""Compiler-in-the-loop refactoring session over a frozen LLM.

One session drives a single theorem: segment the current proof, retrieve
strategies per segment under the user's objective, ask the planner for a
step sequence, execute steps with the refactorer, debug failed candidates a
bounded number of rounds, and adopt a candidate only when it compiles and
is strictly shorter. Adoption triggers replanning; the loop stops on budget
exhaustion, on reaching the target length, or when the planner has nothing
left to propose.

The budget unit is one LLM call — planner, refactorer, debugger, and
corrective reparses all count; compiles are free. With scripted LLM and
compiler mocks a session is byte-deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .bank import Bank
from .compiler import CompileRequest, CompileResult, Diagnostic, Verdict
from .errors import (
    EmptyIndex,
    LLMTransportError,
    MalformedDeclaration,
    PreconditionFailed,
    StatementMutation,
    StepFailed,
)
from .prompts import (
    CORRECTIVE_SUFFIX,
    extract_fenced_block,
    extract_json_payload,
    format_history,
    format_strategies,
    render,
)
from .retrieval import ObjectiveMode, ObjectiveSpec, RankedStrategy, StrategyIndex, retrieve
from .tokenizer import proof_length, remove_comments, segment, split_declaration

REDUCTION_LEVELS = ("high", "medium", "low")


class Termination(str, Enum):
    BUDGET_EXHAUSTED = "budget_exhausted"
    TARGET_REACHED = "target_reached"
    NO_VIABLE_PLAN = "no_viable_plan"
    CONVERGED = "converged"


@dataclass(frozen=True)
class AgentConfig:
    budget: int = 30                 # LLM calls
    target_length: int = 5           # stop once the proof is this short
    max_debug_rounds: int = 3        # repair attempts per failed step
    k: int = 8                       # merged strategies passed to the planner
    objective: ObjectiveSpec = ObjectiveSpec()
    chunk_sizes: tuple[int, ...] = (5, 10, 20)
    toolchain_version: str | None = None   # None: compiler's default
    compile_timeout: float = 300.0

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.target_length <= 0 or self.k <= 0:
            raise ValueError("target_length and k must be positive")
        if self.max_debug_rounds < 0:
            raise ValueError("max_debug_rounds must be >= 0")
        if not self.chunk_sizes or any(s < 1 for s in self.chunk_sizes):
            raise ValueError("chunk_sizes must be non-empty, all >= 1")


@dataclass(frozen=True)
class PlanStep:
    line_start: int
    line_end: int
    title: str
    reduction: str
    description: str

    def to_dict(self) -> dict:
        return {
            "line_start": self.line_start,
            "line_end": self.line_end,
            "title": self.title,
            "reduction": self.reduction,
            "description": self.description,
        }


@dataclass(frozen=True)
class TraceEvent:
    kind: str
    detail: dict
    calls_used: int

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail,
                "calls_used": self.calls_used}


@dataclass
class SessionTrace:
    events: list[TraceEvent] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"events": [e.to_dict() for e in self.events]}

    @classmethod
    def from_dict(cls, data: dict) -> "SessionTrace":
        return cls(events=[TraceEvent(e["kind"], e["detail"], e["calls_used"])
                           for e in data["events"]])

    def of_kind(self, kind: str) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]


@dataclass(frozen=True)
class SessionResult:
    final_proof: str
    initial_length: int
    final_length: int
    calls_used: int
    termination: Termination
    trace: SessionTrace

    def to_dict(self) -> dict:
        return {
            "final_proof": self.final_proof,
            "initial_length": self.initial_length,
            "final_length": self.final_length,
            "calls_used": self.calls_used,
            "termination": self.termination.value,
            "trace": self.trace.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SessionResult":
        return cls(
            final_proof=data["final_proof"],
            initial_length=data["initial_length"],
            final_length=data["final_length"],
            calls_used=data["calls_used"],
            termination=Termination(data["termination"]),
            trace=SessionTrace.from_dict(data["trace"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True,
                          indent=2)


class _OutOfBudget(Exception):
    """Internal: an LLM call was requested with no budget left."""


class _BudgetedLLM:
    """Counts every attempted LLM call; transport errors retry within budget."""

    def __init__(self, inner, limit: int, trace: "_TraceWriter"):
        self.inner = inner
        self.limit = limit
        self.used = 0
        self._trace = trace

    def complete(self, messages) -> str:
        while True:
            if self.used >= self.limit:
                raise _OutOfBudget()
            self.used += 1
            try:
                return self.inner.complete(messages)
            except LLMTransportError as exc:
                self._trace.add("warning",
                                {"message": f"llm transport retry: {exc}"})


class _TraceWriter:
    def __init__(self, trace: SessionTrace, budget: int):
        self.trace = trace
        self.budget = budget
        self.billing: _BudgetedLLM | None = None

    def add(self, kind: str, detail: dict) -> None:
        used = self.billing.used if self.billing else 0
        assert used <= self.budget, "LLM call counter exceeded the budget"
        self.trace.events.append(TraceEvent(kind, detail, used))


@dataclass
class PlanResult:
    steps: list[PlanStep]
    warnings: list[str] = field(default_factory=list)


def _validate_steps(payload, proof: str) -> PlanResult:
    if not isinstance(payload, list):
        return PlanResult([], ["plan payload is not a list"])
    n_lines = max(1, len(proof.splitlines()))
    steps: list[PlanStep] = []
    warnings: list[str] = []
    for i, entry in enumerate(payload):
        if not isinstance(entry, dict):
            warnings.append(f"step {i}: not an object, dropped")
            continue
        try:
            step = PlanStep(
                line_start=int(entry["line_start"]),
                line_end=int(entry["line_end"]),
                title=str(entry["title"]),
                reduction=str(entry["reduction"]).lower(),
                description=str(entry["description"]),
            )
        except (KeyError, TypeError, ValueError):
            warnings.append(f"step {i}: malformed fields, dropped")
            continue
        if step.reduction not in REDUCTION_LEVELS:
            warnings.append(f"step {i}: unknown reduction "
                            f"{step.reduction!r}, dropped")
            continue
        if not (1 <= step.line_start <= step.line_end <= n_lines):
            warnings.append(
                f"step {i}: lines {step.line_start}-{step.line_end} outside "
                f"the proof's {n_lines} lines, dropped"
            )
            continue
        steps.append(step)
    starts = [s.line_start for s in steps]
    if starts != sorted(starts):
        warnings.append("plan not sorted top-to-bottom; keeping model order")
    return PlanResult(steps, warnings)


def plan(proof: str, retrieved: list[dict], history: list[str], llm,
         deps_context: str = "") -> PlanResult:
    """Ask the planner for refactoring steps and validate the reply.

    An unparseable reply gets one corrective reparse (a fresh LLM call); a
    second failure yields the empty plan.
    """
    prompt = render(
        "planner",
        proof=proof,
        deps=deps_context or "(none provided)",
        strategies=format_strategies(retrieved),
        history=format_history(history),
    )
    messages = [{"role": "user", "content": prompt}]
    raw = llm.complete(messages)
    payload = extract_json_payload(raw)
    if payload is None:
        retry = messages + [
            {"role": "assistant", "content": raw},
            {"role": "user", "content": CORRECTIVE_SUFFIX},
        ]
        raw = llm.complete(retry)
        payload = extract_json_payload(raw)
        if payload is None:
            return PlanResult([], ["plan unparseable after corrective retry"])
    return _validate_steps(payload, proof)


def _normalized_statement(text: str) -> str | None:
    try:
        cleaned = remove_comments(text)
        offset = split_declaration(cleaned)
    except MalformedDeclaration:
        return None
    return " ".join(cleaned[:offset].split())


def statement_preserved(original: str, candidate: str) -> bool:
    """Exact statement match modulo comments and whitespace runs."""
    a = _normalized_statement(original)
    b = _normalized_statement(candidate)
    return a is not None and a == b


def _extract_candidate(raw: str, original: str) -> str:
    candidate = extract_fenced_block(raw, "lean4")
    if candidate is None:
        candidate = extract_fenced_block(raw, "lean")
    if candidate is None:
        raise StepFailed("reply contains no fenced lean4 block")
    if not statement_preserved(original, candidate):
        raise StatementMutation("candidate altered the theorem statement")
    return candidate


def refactor_step(proof: str, step: PlanStep, llm,
                  deps_context: str = "") -> str:
    """Execute one planned step; returns the candidate proof text."""
    prompt = render(
        "refactor",
        proof=proof,
        deps=deps_context or "(none provided)",
        line_start=step.line_start,
        line_end=step.line_end,
        title=step.title,
        reduction=step.reduction,
        description=step.description,
    )
    raw = llm.complete([{"role": "user", "content": prompt}])
    return _extract_candidate(raw, proof)


def splice_error_markers(candidate: str,
                         diagnostics: list[Diagnostic]) -> str:
    """Wrap each offending span (diagnostic column to end of line) in
    <error></error> markers."""
    lines = candidate.splitlines()
    by_line: dict[int, int] = {}
    for d in diagnostics:
        if d.severity != "error":
            continue
        if 1 <= d.line <= len(lines):
            col = by_line.get(d.line)
            by_line[d.line] = d.column if col is None else min(col, d.column)
    for line_no in sorted(by_line, reverse=True):
        text = lines[line_no - 1]
        col = min(max(by_line[line_no], 0), len(text))
        lines[line_no - 1] = text[:col] + "<error>" + text[col:] + "</error>"
    return "\n".join(lines)


def debug(candidate: str, compile_result: CompileResult, step: PlanStep,
          llm, prev_round_num: int = 1, original: str | None = None) -> str:
    """One localized repair round from compiler feedback."""
    if compile_result.verdict == Verdict.TIMEOUT:
        marked = candidate
        errors_text = "compilation timed out"
    else:
        errors = compile_result.errors()
        marked = splice_error_markers(candidate, errors)
        errors_text = "\n".join(
            f"line {d.line}, column {d.column}: {d.message}" for d in errors
        ) or "compilation failed"
    prompt = render(
        "debugger",
        prev_round_num=prev_round_num,
        marked_candidate=marked,
        errors=errors_text,
    )
    raw = llm.complete([{"role": "user", "content": prompt}])
    return _extract_candidate(raw, original if original is not None else candidate)


def _merge_retrievals(
    per_span: list[tuple[RankedStrategy, "object"]], k: int
) -> list[tuple[RankedStrategy, object]]:
    """Deduplicate by strategy id (keeping the best-scoring hit), sort by
    similarity, truncate to k."""
    best: dict[str, tuple[RankedStrategy, object]] = {}
    for ranked, span in per_span:
        held = best.get(ranked.strategy_id)
        if held is None or ranked.similarity > held[0].similarity:
            best[ranked.strategy_id] = (ranked, span)
    merged = sorted(best.values(),
                    key=lambda t: (-t[0].similarity, t[0].strategy_id))
    return merged[:k]


def _strategy_entries(merged, bank: Bank) -> list[dict]:
    entries = []
    for ranked, span in merged:
        strategy = bank.strategies[ranked.strategy_id]
        entries.append({
            "title": strategy.title,
            "description": strategy.description,
            "when_to_apply": strategy.when_to_apply,
            "application_guide": list(strategy.application_guide),
            "before": strategy.abstract_example[0],
            "after": strategy.abstract_example[1],
            "potential_reduction": strategy.potential_reduction,
            "similarity": ranked.similarity,
            "line_start": span.line_start,
            "line_end": span.line_end,
            "strategy_id": ranked.strategy_id,
        })
    return entries


def run_session(
    proof: str,
    deps_context: str,
    config: AgentConfig,
    bank: Bank,
    index: StrategyIndex,
    llm,
    compiler,
) -> SessionResult:
    """Run the full refactoring loop for one theorem.

    The input proof must compile under the target toolchain; sessions are
    strictly sequential internally, but many sessions may run in parallel
    over a shared bank and index.
    """
    embedder = getattr(index, "embedder", None)
    if embedder is None:
        raise ValueError("index must be built with StrategyIndex.build "
                         "(it carries the query embedder)")
    version = config.toolchain_version or compiler.default_version
    trace = SessionTrace()
    writer = _TraceWriter(trace, config.budget)
    billing = _BudgetedLLM(llm, config.budget, writer)
    writer.billing = billing

    def compile_source(source: str) -> CompileResult:
        return compiler.check(CompileRequest(
            source=source, toolchain_version=version,
            timeout=config.compile_timeout,
        ))

    precheck = compile_source(proof)
    if not precheck.ok:
        raise PreconditionFailed(
            f"input proof does not compile under {version}: "
            f"{[d.message for d in precheck.errors()][:3]}"
        )

    initial_length = proof_length(proof)
    current = proof
    current_length = initial_length
    history: list[str] = []
    adopted_any = False
    termination: Termination
    writer.add("session_start", {
        "initial_length": initial_length,
        "toolchain_version": version,
        "objective": config.objective.mode.value,
    })

    try:
        while True:
            if billing.used >= config.budget:
                termination = Termination.BUDGET_EXHAUSTED
                break
            if current_length <= config.target_length:
                termination = (Termination.TARGET_REACHED if adopted_any
                               else Termination.CONVERGED)
                break

            spans = segment(current, list(config.chunk_sizes))
            vectors = embedder.embed([s.text for s in spans])
            hits: list[tuple[RankedStrategy, object]] = []
            for span, vector in zip(spans, vectors):
                try:
                    results = retrieve(index, bank, vector, config.objective)
                except EmptyIndex:
                    results = []
                if not results and config.objective.mode == ObjectiveMode.VERSION:
                    writer.add("warning", {
                        "message": "version filter left no strategies for a "
                                   "segment; proceeding without retrieval",
                        "span": [span.line_start, span.line_end],
                    })
                hits.extend((r, span) for r in results)
            merged = _merge_retrievals(hits, config.k)
            writer.add("retrieval", {
                "strategy_ids": [r.strategy_id for r, _ in merged],
            })

            plan_result = plan(current, _strategy_entries(merged, bank),
                               history, billing, deps_context)
            for warning in plan_result.warnings:
                writer.add("warning", {"message": warning})
            if not plan_result.steps:
                writer.add("plan_empty", {})
                termination = Termination.NO_VIABLE_PLAN
                break
            writer.add("plan_issued", {
                "steps": [s.to_dict() for s in plan_result.steps],
            })

            step_applied = False
            for step in plan_result.steps:
                writer.add("step_attempted", {"step": step.to_dict()})
                try:
                    candidate = refactor_step(current, step, billing,
                                              deps_context)
                except (StepFailed, StatementMutation) as exc:
                    writer.add("step_skipped",
                               {"reason": type(exc).__name__,
                                "message": str(exc)})
                    continue

                result = compile_source(candidate)
                writer.add("compile_result", {"verdict": result.verdict.value})
                rounds = 0
                failed_round = False
                while (result.verdict != Verdict.SUCCESS
                       and rounds < config.max_debug_rounds):
                    rounds += 1
                    try:
                        candidate = debug(candidate, result, step, billing,
                                          prev_round_num=rounds,
                                          original=current)
                    except (StepFailed, StatementMutation) as exc:
                        writer.add("step_skipped",
                                   {"reason": type(exc).__name__,
                                    "message": str(exc),
                                    "debug_rounds": rounds})
                        failed_round = True
                        break
                    writer.add("debug_round", {"round": rounds})
                    result = compile_source(candidate)
                    writer.add("compile_result",
                               {"verdict": result.verdict.value})
                if failed_round:
                    continue
                if result.verdict != Verdict.SUCCESS:
                    writer.add("step_skipped", {
                        "reason": "no compiling candidate",
                        "debug_rounds": rounds,
                    })
                    continue

                candidate_length = proof_length(candidate)
                if candidate_length < current_length:
                    current = candidate
                    current_length = candidate_length
                    adopted_any = True
                    history.append(
                        f"({step.title} @ {step.line_start}-{step.line_end}, "
                        f"Success)"
                    )
                    writer.add("adoption", {
                        "step": step.to_dict(),
                        "new_length": candidate_length,
                        "debug_rounds": rounds,
                    })
                    step_applied = True
                    break  # replan on the updated proof
                writer.add("step_skipped", {
                    "reason": "candidate not shorter",
                    "candidate_length": candidate_length,
                })

            if not step_applied:
                history.append(
                    f"(plan of {len(plan_result.steps)} steps, Failed)"
                )
                writer.add("plan_failed",
                           {"steps": len(plan_result.steps)})
    except _OutOfBudget:
        termination = Termination.BUDGET_EXHAUSTED

    writer.add("termination", {"reason": termination.value})
    assert current_length <= initial_length
    return SessionResult(
        final_proof=current,
        initial_length=initial_length,
        final_length=current_length,
        calls_used=billing.used,
        termination=termination,
        trace=trace,
    )
