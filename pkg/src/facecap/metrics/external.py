"""Adapters for metrics computed by external tools (METEOR, SPICE).

The tool is a child process configured through ``FACECAP_METEOR_CMD`` /
``FACECAP_SPICE_CMD`` (or passed explicitly). It receives
``{"candidates": {id: str}, "references": {id: [str]}}`` as JSON on stdin and
must print ``{"score": float, "per_image": {...}, "subcategories": {...}}``
on stdout; the last two keys are optional.
"""

import json
import os
import shlex
import subprocess
from dataclasses import dataclass, field

from ..errors import InputError

ENV_VARS = {"meteor": "FACECAP_METEOR_CMD", "spice": "FACECAP_SPICE_CMD"}


@dataclass
class ExternalResult:
    metric: str
    status: str  # "ok", "unavailable" or "error"
    score: float = None
    per_image: dict = field(default_factory=dict)
    subcategories: dict = field(default_factory=dict)
    message: str = ""

    @property
    def available(self):
        return self.status == "ok"

    def to_dict(self):
        out = {"status": self.status, "score": self.score}
        if self.per_image:
            out["per_image"] = self.per_image
        if self.subcategories:
            out["subcategories"] = self.subcategories
        if self.message:
            out["message"] = self.message
        return out


def adapter_command(metric, command=None):
    if metric not in ENV_VARS:
        raise InputError(f"no external adapter for {metric!r}")
    command = command or os.environ.get(ENV_VARS[metric])
    if not command:
        return None
    return shlex.split(command) if isinstance(command, str) else list(command)


def external_metric(metric, candidates, references, command=None, timeout=600):
    """Run an adapter; a missing adapter yields status "unavailable", never a zero score."""
    argv = adapter_command(metric, command)
    if argv is None:
        return ExternalResult(metric, "unavailable", message=f"set {ENV_VARS[metric]} to enable {metric}")
    payload = json.dumps({"candidates": candidates, "references": references})
    try:
        proc = subprocess.run(argv, input=payload, capture_output=True, text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as exc:
        return ExternalResult(metric, "unavailable", message=str(exc))
    if proc.returncode != 0:
        return ExternalResult(metric, "error", message=proc.stderr.strip()[-500:])
    try:
        blob = json.loads(proc.stdout)
        score = float(blob["score"])
    except (ValueError, KeyError, TypeError) as exc:
        return ExternalResult(metric, "error", message=f"unparseable adapter output: {exc}")
    return ExternalResult(metric, "ok", score, blob.get("per_image") or {}, blob.get("subcategories") or {})
