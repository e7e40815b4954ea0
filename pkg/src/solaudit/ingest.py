"""Repository ingestion: classify Solidity files, resolve remappings, and build
a concatenated, line-attributable audit source."""

from __future__ import annotations

import logging
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

ROLES = ("source", "test", "script", "interface", "library")

_PRAGMA_RE = re.compile(r"pragma\s+solidity\s+([^;]+);")
_DECL_RE = re.compile(r"^\s*(abstract\s+)?(contract|interface|library)\s+([A-Za-z_]\w*)", re.M)


class IngestError(Exception):
    """Raised when the repository cannot be ingested at all."""


@dataclass(frozen=True)
class SourceFile:
    path: str          # relative, posix-style
    role: str          # one of ROLES
    text: str


@dataclass(frozen=True)
class Segment:
    path: str
    start: int         # first line in concatenation space (1-based, inclusive)
    end: int           # last line in concatenation space (inclusive)
    orig_start: int    # line in the original file that `start` maps to


@dataclass(frozen=True)
class OffsetMap:
    segments: tuple[Segment, ...]
    _starts: tuple[int, ...] = field(default=(), repr=False)

    @staticmethod
    def build(segments: list[Segment]) -> "OffsetMap":
        return OffsetMap(tuple(segments), tuple(s.start for s in segments))

    @property
    def total_lines(self) -> int:
        return self.segments[-1].end if self.segments else 0


@dataclass(frozen=True)
class AuditSource:
    text: str
    offsets: OffsetMap
    scope: tuple[str, ...]              # in-scope contract names
    remappings: tuple[tuple[str, str], ...]
    pragmas: dict[str, str] = field(default_factory=dict)  # path -> pragma version expr


def classify_files(root: str | Path) -> list[SourceFile]:
    """Walk `root` and classify every .sol file by role.

    Path heuristics run first (test/, script/, lib/, mocks/, .t.sol, .s.sol);
    declaration-only content heuristics decide interface/library roles for the
    rest. Non-UTF-8 files are skipped with a warning, never fatally.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"input path is not a readable directory: {root}")
    out: list[SourceFile] = []
    for path in sorted(root.rglob("*.sol")):
        rel = path.relative_to(root).as_posix()
        try:
            text = path.read_text(encoding="utf-8")
        except UnicodeDecodeError:
            log.warning("skipping non-UTF-8 file: %s", rel)
            continue
        except OSError as exc:
            log.warning("skipping unreadable file %s: %s", rel, exc)
            continue
        out.append(SourceFile(path=rel, role=_role_for(rel, text), text=text))
    return out


def _role_for(rel: str, text: str) -> str:
    parts = rel.lower().split("/")
    name = parts[-1]
    if any(p in ("test", "tests", "mocks", "mock") for p in parts[:-1]) or name.endswith(".t.sol"):
        return "test"
    if any(p in ("script", "scripts") for p in parts[:-1]) or name.endswith(".s.sol"):
        return "script"
    if any(p in ("lib", "node_modules") for p in parts[:-1]):
        return "library"
    kinds = {m.group(2) for m in _DECL_RE.finditer(text)}
    if kinds == {"interface"}:
        return "interface"
    if kinds == {"library"}:
        return "library"
    return "source"


def resolve_remappings(root: str | Path) -> list[tuple[str, str]]:
    """Collect import remappings from remappings.txt and foundry.toml.

    remappings.txt entries win over foundry.toml on duplicate prefixes.
    Malformed lines are skipped with a warning.
    """
    root = Path(root)
    primary = _parse_remapping_lines((root / "remappings.txt").read_text(encoding="utf-8").splitlines()) \
        if (root / "remappings.txt").is_file() else []
    secondary = _foundry_remappings(root / "foundry.toml")
    seen = {p for p, _ in primary}
    merged = list(primary)
    for prefix, repl in secondary:
        if prefix not in seen:
            merged.append((prefix, repl))
            seen.add(prefix)
    return merged


def _parse_remapping_lines(lines) -> list[tuple[str, str]]:
    out = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            log.warning("malformed remapping line skipped: %r", line)
            continue
        prefix, repl = line.split("=", 1)
        if not prefix:
            log.warning("malformed remapping line skipped: %r", line)
            continue
        out.append((prefix, repl))
    return out


def _foundry_remappings(path: Path) -> list[tuple[str, str]]:
    if not path.is_file():
        return []
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        log.warning("cannot read %s: %s", path, exc)
        return []
    try:  # tomllib is 3.11+; tomli may be present on 3.10
        import tomllib as toml_mod  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        try:
            import tomli as toml_mod  # type: ignore[import-not-found]
        except ModuleNotFoundError:
            toml_mod = None
    entries: list[str] = []
    if toml_mod is not None:
        try:
            data = toml_mod.loads(text)
        except Exception as exc:
            log.warning("malformed foundry.toml skipped: %s", exc)
            return []
        entries = _find_remapping_arrays(data)
    else:
        # minimal fallback: pull the remappings = [ ... ] array textually
        m = re.search(r"remappings\s*=\s*\[(.*?)\]", text, re.S)
        if m:
            entries = re.findall(r"[\"']([^\"']+)[\"']", m.group(1))
    return _parse_remapping_lines(entries)


def _find_remapping_arrays(data) -> list[str]:
    found: list[str] = []
    if isinstance(data, dict):
        for key, value in data.items():
            if key == "remappings" and isinstance(value, list):
                found.extend(str(v) for v in value)
            else:
                found.extend(_find_remapping_arrays(value))
    return found


def build_audit_source(
    files: list[SourceFile],
    scope_override: list[str] | None = None,
    remappings: list[tuple[str, str]] | None = None,
) -> AuditSource:
    """Concatenate role=source files (lexicographic by path) into one audit
    source with a line-accurate offset map and the in-scope contract list."""
    selected = sorted((f for f in files if f.role == "source"), key=lambda f: f.path)
    segments: list[Segment] = []
    chunks: list[str] = []
    pragmas: dict[str, str] = {}
    cursor = 1
    for f in selected:
        lines = f.text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            log.warning("empty source file skipped: %s", f.path)
            continue
        segments.append(Segment(path=f.path, start=cursor, end=cursor + len(lines) - 1, orig_start=1))
        chunks.append("\n".join(lines))
        m = _PRAGMA_RE.search(f.text)
        if m:
            pragmas[f.path] = m.group(1).strip()
        cursor += len(lines)
    text = "\n".join(chunks)
    declared = [m.group(3) for m in _DECL_RE.finditer(text)
                if m.group(2) == "contract"]
    if scope_override:
        unknown = [n for n in scope_override if n not in declared]
        if unknown:
            raise IngestError(f"scope override names unknown contracts: {', '.join(sorted(unknown))}")
        scope = tuple(n for n in declared if n in set(scope_override))
    else:
        scope = tuple(declared)
    return AuditSource(
        text=text,
        offsets=OffsetMap.build(segments),
        scope=scope,
        remappings=tuple(remappings or ()),
        pragmas=pragmas,
    )


def map_line(offsets: OffsetMap, line: int) -> tuple[str, int]:
    """Map a concatenation line number back to (file path, original line)."""
    if line < 1 or line > offsets.total_lines:
        raise ValueError(f"line {line} outside concatenation range 1..{offsets.total_lines}")
    idx = bisect_right(offsets._starts, line) - 1
    seg = offsets.segments[idx]
    return seg.path, seg.orig_start + (line - seg.start)


def pragma_ge_08(expr: str | None) -> bool:
    """True when a pragma version expression pins solc at or above 0.8."""
    if not expr:
        return False
    m = re.search(r"(\d+)\.(\d+)", expr)
    if not m:
        return False
    return (int(m.group(1)), int(m.group(2))) >= (0, 8)
