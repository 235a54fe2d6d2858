"""Lean toolchain port: compile checks, profiling, heartbeats, version matrix.

The real backend shells out to ``lake env lean`` inside a registered
toolchain environment, writing each request to an isolated scratch file
that is removed afterwards. The mock backend replays scripted results from
a fixture file, keyed by source-content hash or consumed in order, which
makes the whole agent loop testable offline and byte-deterministic.

Profiling and heartbeat counting are serialized behind a measurement lock;
plain checks may run concurrently up to a configured limit.
"""

from __future__ import annotations

import hashlib
import json
import re
import shutil
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .bank import ToolchainRegistry
from .errors import (
    HeartbeatParseError,
    ProfileParseError,
    ProoftidyError,
    ScriptExhausted,
    ToolchainMissing,
)

#: Prepended (in this order) to a declaration to measure its heartbeat count.
HEARTBEAT_DIRECTIVES = (
    "set_option Elab.async false in",
    "#count_heartbeats in",
)

SCRATCH_DIR_NAME = ".refactor-scratch"

DEFAULT_TIMEOUT = 300.0
DEFAULT_PROFILE_RUNS = 5


class Verdict(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    TIMEOUT = "timeout"
    # Only produced inside cross_version_matrix entries; plain checks raise.
    ENVIRONMENT_ERROR = "environment_error"


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    severity: str
    message: str


@dataclass(frozen=True)
class CompileRequest:
    source: str
    toolchain_version: str
    want_profile: bool = False
    want_heartbeats: bool = False
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(frozen=True)
class CompileResult:
    verdict: Verdict
    diagnostics: tuple[Diagnostic, ...] = ()
    wall_time_total: float | None = None
    import_time: float | None = None
    elaboration_time: float | None = None
    heartbeats: int | None = None
    wall_samples: tuple[float, ...] | None = None
    elaboration_samples: tuple[float, ...] | None = None

    @property
    def ok(self) -> bool:
        return self.verdict == Verdict.SUCCESS

    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]


def heartbeat_wrapper(decl_source: str) -> str:
    """The measurement file for one declaration, directives byte-exact."""
    return "\n".join(HEARTBEAT_DIRECTIVES) + "\n" + decl_source


def source_hash(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()[:12]


_DIAGNOSTIC_RE = re.compile(
    r"^(?P<file>[^\s:][^:\n]*):(?P<line>\d+):(?P<col>\d+): "
    r"(?P<severity>error|warning|info): (?P<message>.*)$"
)
_PROFILE_HEADER = "cumulative profiling times:"
_PROFILE_LINE_RE = re.compile(r"^\s+(?P<name>\S[^\t]*?)\s+(?P<value>\d+(?:\.\d+)?)(?P<unit>ms|s|min)$")
_HEARTBEAT_RE = re.compile(r"[Uu]sed\s+(\d+)\s+heartbeats")

_UNIT_SECONDS = {"ms": 1e-3, "s": 1.0, "min": 60.0}


def parse_diagnostics(output: str) -> list[Diagnostic]:
    """Pull ``file:line:col: severity: message`` records out of compiler output.

    Continuation lines (not matching the pattern) extend the previous
    message, matching how Lean wraps multi-line errors.
    """
    diagnostics: list[Diagnostic] = []
    current: dict | None = None
    for line in output.splitlines():
        m = _DIAGNOSTIC_RE.match(line)
        if m:
            if current:
                diagnostics.append(Diagnostic(**current))
            current = {
                "line": int(m.group("line")),
                "column": int(m.group("col")),
                "severity": m.group("severity"),
                "message": m.group("message"),
            }
        elif current is not None and (line.startswith(" ") or line.startswith("\t")):
            current["message"] += "\n" + line
        elif current is not None:
            diagnostics.append(Diagnostic(**current))
            current = None
    if current:
        diagnostics.append(Diagnostic(**current))
    return diagnostics


def parse_profile_categories(output: str) -> dict[str, float]:
    """Category -> seconds from the profiler's cumulative section."""
    lines = output.splitlines()
    try:
        start = next(i for i, line in enumerate(lines)
                     if line.strip() == _PROFILE_HEADER)
    except StopIteration:
        raise ProfileParseError("no cumulative profiling section found",
                                raw_output=output)
    categories: dict[str, float] = {}
    for line in lines[start + 1:]:
        m = _PROFILE_LINE_RE.match(line)
        if not m:
            break
        seconds = float(m.group("value")) * _UNIT_SECONDS[m.group("unit")]
        categories[m.group("name").strip()] = seconds
    if not categories:
        raise ProfileParseError("cumulative profiling section is empty",
                                raw_output=output)
    return categories


def split_profile_times(categories: dict[str, float],
                        wall_total: float) -> tuple[float, float]:
    """(import_time, elaboration_time): import categories vs. everything else.

    Elaboration is wall total minus import, clamped at zero to absorb
    sub-tick rounding.
    """
    import_time = sum(v for k, v in categories.items()
                      if k == "import" or k.startswith("import"))
    return import_time, max(wall_total - import_time, 0.0)


def parse_heartbeats(output: str) -> int:
    m = _HEARTBEAT_RE.search(output)
    if not m:
        raise HeartbeatParseError("no heartbeat count in compiler output")
    return int(m.group(1))


class LeanCompiler:
    """Real toolchain backend driving ``lake env lean`` in scratch files."""

    def __init__(
        self,
        registry: ToolchainRegistry,
        keep_scratch: bool = False,
        max_concurrent: int = 4,
    ):
        self.registry = registry
        self.keep_scratch = keep_scratch
        self._check_slots = threading.Semaphore(max_concurrent)
        self._measurement_lock = threading.Lock()

    @property
    def default_version(self) -> str:
        return self.registry.native_version

    def _resolve_root(self, version: str) -> Path:
        root = self.registry.root_for(version)
        if not root.is_dir():
            raise ToolchainMissing(f"environment root {root} does not exist")
        return root

    def check(self, req: CompileRequest) -> CompileResult:
        with self._check_slots:
            return self._run(req)

    def _run(self, req: CompileRequest) -> CompileResult:
        root = self._resolve_root(req.toolchain_version)
        scratch = root / SCRATCH_DIR_NAME / uuid.uuid4().hex
        scratch.mkdir(parents=True, exist_ok=True)
        main = scratch / "Main.lean"
        main.write_text(req.source, encoding="utf-8")
        cmd = ["lake", "env", "lean"]
        if req.want_profile:
            cmd.append("--profile")
        cmd.append(str(main))
        started = time.monotonic()
        try:
            proc = subprocess.run(
                cmd, cwd=root, capture_output=True, text=True,
                timeout=req.timeout,
            )
        except subprocess.TimeoutExpired:
            return CompileResult(verdict=Verdict.TIMEOUT,
                                 wall_time_total=time.monotonic() - started)
        except FileNotFoundError as exc:
            raise ToolchainMissing(f"cannot invoke lake in {root}: {exc}") from exc
        finally:
            if not self.keep_scratch:
                shutil.rmtree(scratch, ignore_errors=True)
        wall = time.monotonic() - started
        output = proc.stdout + "\n" + proc.stderr
        diagnostics = tuple(parse_diagnostics(output))
        if proc.returncode == 0:
            verdict = Verdict.SUCCESS
        else:
            verdict = Verdict.FAILURE
            if not any(d.severity == "error" for d in diagnostics):
                tail = output.strip().splitlines()[-1] if output.strip() else "compiler failed"
                diagnostics = diagnostics + (Diagnostic(1, 0, "error", tail),)
        import_time = elaboration_time = None
        if req.want_profile and verdict == Verdict.SUCCESS:
            categories = parse_profile_categories(output)
            import_time, elaboration_time = split_profile_times(categories, wall)
        heartbeats = None
        if req.want_heartbeats:
            heartbeats = parse_heartbeats(output)
        return CompileResult(
            verdict=verdict,
            diagnostics=diagnostics,
            wall_time_total=wall,
            import_time=import_time,
            elaboration_time=elaboration_time,
            heartbeats=heartbeats,
        )

    def profile(self, req: CompileRequest,
                runs: int = DEFAULT_PROFILE_RUNS) -> CompileResult:
        """Serialized repeated profiling; samples back mean/std reporting."""
        req = replace(req, want_profile=True)
        with self._measurement_lock:
            walls: list[float] = []
            elaborations: list[float] = []
            imports: list[float] = []
            last: CompileResult | None = None
            for _ in range(runs):
                result = self._run(req)
                if result.verdict != Verdict.SUCCESS:
                    return result
                walls.append(result.wall_time_total)
                elaborations.append(result.elaboration_time)
                imports.append(result.import_time)
                last = result
            return replace(
                last,
                wall_time_total=sum(walls) / len(walls),
                import_time=sum(imports) / len(imports),
                elaboration_time=sum(elaborations) / len(elaborations),
                wall_samples=tuple(walls),
                elaboration_samples=tuple(elaborations),
            )

    def count_heartbeats(self, decl_source: str,
                         req: CompileRequest) -> CompileResult:
        wrapped = replace(req, source=heartbeat_wrapper(decl_source),
                          want_heartbeats=True)
        with self._measurement_lock:
            return self._run(wrapped)

    def cross_version_matrix(
        self, source: str, versions: Sequence[str],
        timeout: float = DEFAULT_TIMEOUT,
    ) -> dict[str, Verdict]:
        """One check per version; a broken environment never aborts the rest."""
        matrix: dict[str, Verdict] = {}
        for version in versions:
            req = CompileRequest(source=source, toolchain_version=version,
                                 timeout=timeout)
            try:
                matrix[version] = self.check(req).verdict
            except (ProoftidyError, OSError):
                matrix[version] = Verdict.ENVIRONMENT_ERROR
        return matrix


# --- scripted mock ------------------------------------------------------------

MOCK_SCRIPT_FORMAT_VERSION = 1


def _result_from_script(entry: dict) -> CompileResult:
    diagnostics = tuple(
        Diagnostic(line=d[0], column=d[1], severity=d[2], message=d[3])
        for d in entry.get("diagnostics", [])
    )
    wall = entry.get("wall_time_total")
    import_time = entry.get("import_time")
    elaboration = None
    if wall is not None and import_time is not None:
        elaboration = max(wall - import_time, 0.0)
    return CompileResult(
        verdict=Verdict(entry["verdict"]),
        diagnostics=diagnostics,
        wall_time_total=wall,
        import_time=import_time,
        elaboration_time=elaboration,
        heartbeats=entry.get("heartbeats"),
    )


@dataclass
class MockScript:
    """Fixture-backed script: hash-keyed entries plus an ordered fallback.

    File format (format_version 1)::

        {
          "format_version": 1,
          "default_version": "v4.24.0",
          "by_hash": {"<source_hash(source)>": {result}, ...},
          "by_version": {"<version>": {"<hash>": {result}}, ...},
          "sequence": [{result}, ...]
        }

    where a result object is ``{"verdict": "success"|"failure"|"timeout",
    "diagnostics": [[line, col, severity, message], ...],
    "wall_time_total": s, "import_time": s, "heartbeats": n}``.
    """

    default_version: str = "v4.24.0"
    by_hash: dict[str, dict] = field(default_factory=dict)
    by_version: dict[str, dict[str, dict]] = field(default_factory=dict)
    sequence: list[dict] = field(default_factory=list)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockScript":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        version = data.get("format_version")
        if version != MOCK_SCRIPT_FORMAT_VERSION:
            raise ValueError(f"unsupported mock script format {version!r}")
        return cls(
            default_version=data.get("default_version", "v4.24.0"),
            by_hash=data.get("by_hash", {}),
            by_version=data.get("by_version", {}),
            sequence=list(data.get("sequence", [])),
        )


class MockCompiler:
    """Deterministic scripted stand-in for the Lean toolchain.

    Hash-keyed entries replay as pure functions of the source; the ordered
    ``sequence`` serves requests with no hash entry. A request beyond the
    script raises ScriptExhausted — fixtures must cover their scenario.
    """

    def __init__(self, script: MockScript):
        self.script = script
        self._cursor = 0
        self.calls: list[tuple[str, str]] = []  # (version, source hash)

    @property
    def default_version(self) -> str:
        return self.script.default_version

    def _lookup(self, source: str, version: str) -> CompileResult:
        digest = source_hash(source)
        self.calls.append((version, digest))
        versioned = self.script.by_version.get(version, {})
        if digest in versioned:
            return _result_from_script(versioned[digest])
        if digest in self.script.by_hash:
            return _result_from_script(self.script.by_hash[digest])
        if self._cursor < len(self.script.sequence):
            entry = self.script.sequence[self._cursor]
            self._cursor += 1
            return _result_from_script(entry)
        raise ScriptExhausted(
            f"no scripted result for source {digest} under {version}"
        )

    def check(self, req: CompileRequest) -> CompileResult:
        return self._lookup(req.source, req.toolchain_version)

    def profile(self, req: CompileRequest,
                runs: int = DEFAULT_PROFILE_RUNS) -> CompileResult:
        results = [self._lookup(req.source, req.toolchain_version)
                   for _ in range(runs)]
        bad = next((r for r in results if r.verdict != Verdict.SUCCESS), None)
        if bad is not None:
            return bad
        walls = tuple(r.wall_time_total for r in results)
        elaborations = tuple(r.elaboration_time for r in results)
        return replace(
            results[-1],
            wall_time_total=sum(walls) / len(walls),
            elaboration_time=sum(elaborations) / len(elaborations),
            wall_samples=walls,
            elaboration_samples=elaborations,
        )

    def count_heartbeats(self, decl_source: str,
                         req: CompileRequest) -> CompileResult:
        # The mock keys on the declaration itself; the wrapper text is a pure
        # function tested separately.
        return self._lookup(decl_source, req.toolchain_version)

    def cross_version_matrix(
        self, source: str, versions: Sequence[str],
        timeout: float = DEFAULT_TIMEOUT,
    ) -> dict[str, Verdict]:
        matrix: dict[str, Verdict] = {}
        for version in versions:
            try:
                req = CompileRequest(source=source, toolchain_version=version,
                                     timeout=timeout)
                matrix[version] = self.check(req).verdict
            except (ProoftidyError, OSError):
                matrix[version] = Verdict.ENVIRONMENT_ERROR
        return matrix
