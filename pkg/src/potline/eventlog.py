"""Local append-only run log for potline invocations.

Design contract (see docs/decisions/0001-run-log.md):
- One JSONL file under $XDG_STATE_HOME/potline/events.jsonl.
- One `RunEvent` line per CLI invocation.
- Stdlib only. No remote telemetry.
- Logging failure must never crash a run; all I/O wrapped and swallowed.
- argv_hash captures invocation *shape* (subcommand + flag names), never values.
- Rotation: stat-before-open, rollover at 10 MB to events.jsonl.1 (one backup).
- Line size cap: 4 KB (PIPE_BUF) so concurrent appends stay atomic.
- The log lives outside the output directory; artifacts stay byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

SCHEMA_VERSION = 2
ROTATE_BYTES = 10 * 1024 * 1024  # 10 MB
LINE_CAP = 4096  # PIPE_BUF on Linux
TS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
# Flags whose following token is a value; only the flag name is hashed.
_VALUE_FLAGS = {
    "-c", "--config", "--seed", "--out", "-j", "--jobs", "--shape",
    "-d", "-n", "-L", "--since", "--group",
}


def state_dir() -> Path:
    """XDG state dir for potline. Honors $XDG_STATE_HOME; falls back to ~/.local/state."""
    base = os.environ.get("XDG_STATE_HOME") or str(Path.home() / ".local" / "state")
    return Path(base) / "potline"


def log_path() -> Path:
    return state_dir() / "events.jsonl"


def argv_skeleton_hash(argv: list[str]) -> str:
    """SHA-256 of the argv skeleton: subcommand and flag names only.

    Values after value flags become '<v>', positionals become '<p>'.
    """
    skel: list[str] = []
    i = 0
    args = argv[1:] if argv else []
    while i < len(args):
        tok = args[i]
        if tok.startswith("-") and not _is_number(tok):
            if "=" in tok:
                tok = tok.split("=", 1)[0]
            skel.append(tok)
            if tok in _VALUE_FLAGS and "=" not in args[i] and i + 1 < len(args):
                skel.append("<v>")
                i += 2
                continue
        else:
            skel.append("<p>")
        i += 1
    return hashlib.sha256("\0".join(skel).encode("utf-8")).hexdigest()[:16]


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


@dataclass
class RunEvent:
    """One potline invocation: what ran, on which experiment, and what it produced.

    Commands fill the experiment and count fields they know about; the rest
    stay None and are left out of the log line.
    """

    cmd: str
    argv_hash: str = ""
    source: str = "user"
    ts: str = ""
    exit: int = 0
    dur_ms: int = 0
    v: int = SCHEMA_VERSION
    # experiment identity, set by commands that load a config
    config_hash: Optional[str] = None
    seed: Optional[int] = None
    out: Optional[str] = None
    # simulate
    series_written: Optional[int] = None
    series_redrawn: Optional[int] = None
    # train
    models_trained: Optional[int] = None
    pruned_fraction_mean: Optional[float] = None
    # analyze
    groups_analyzed: Optional[int] = None
    # evaluate
    models_evaluated: Optional[int] = None
    diverged: Optional[int] = None
    truncated: bool = False
    _t0: float = field(default=0.0, repr=False, compare=False)

    @classmethod
    def start(cls, cmd: str, argv: list[str]) -> "RunEvent":
        return cls(
            cmd=cmd,
            argv_hash=argv_skeleton_hash(argv),
            source=os.environ.get("POTLINE_INVOCATION", "user"),
            ts=datetime.now(timezone.utc).strftime(TS_FORMAT),
            _t0=time.perf_counter(),
        )

    def finish(self, exit_code: int) -> "RunEvent":
        self.exit = exit_code
        self.dur_ms = int((time.perf_counter() - self._t0) * 1000)
        return self

    def to_dict(self) -> dict[str, Any]:
        d = {k: v for k, v in asdict(self).items() if v is not None and k != "_t0"}
        if not self.truncated:
            d.pop("truncated")
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunEvent":
        """Unknown keys (older schema lines) are ignored."""
        known = {f.name for f in fields(cls)} - {"_t0"}
        return cls(**{k: v for k, v in d.items() if k in known})

    def timestamp(self) -> Optional[float]:
        try:
            return datetime.strptime(self.ts, TS_FORMAT).replace(tzinfo=timezone.utc).timestamp()
        except (TypeError, ValueError):
            return None


def _maybe_rotate(p: Path) -> None:
    """Rotate if size >= ROTATE_BYTES. One backup only (.1), overwritten."""
    try:
        if p.exists() and p.stat().st_size >= ROTATE_BYTES:
            os.replace(p, p.with_suffix(p.suffix + ".1"))
    except OSError:
        pass


def write_event(event: RunEvent) -> None:
    """Append one event line. Never raises."""
    try:
        line = json.dumps(event.to_dict(), ensure_ascii=False, separators=(",", ":"))
        if len(line.encode("utf-8")) > LINE_CAP:
            # only the output path is unbounded
            small = event.to_dict()
            small.pop("out", None)
            small["truncated"] = True
            line = json.dumps(small, ensure_ascii=False, separators=(",", ":"))

        p = log_path()
        _maybe_rotate(p)
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "a", encoding="utf-8") as f:
            f.write(line + "\n")
    except Exception:
        pass


def read_events(since_days: Optional[int] = None) -> list[RunEvent]:
    """Read events. Malformed lines skipped. Returns [] on missing file."""
    p = log_path()
    if not p.exists():
        return []
    cutoff = None if since_days is None else time.time() - since_days * 86400
    out: list[RunEvent] = []
    try:
        with open(p, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    evt = RunEvent.from_dict(json.loads(line))
                except (json.JSONDecodeError, TypeError, AttributeError):
                    continue
                if cutoff is not None:
                    ts = evt.timestamp()
                    if ts is None or ts < cutoff:
                        continue
                out.append(evt)
    except OSError:
        return []
    return out
