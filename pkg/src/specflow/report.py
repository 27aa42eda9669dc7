"""Check verdicts and the aggregated run report."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any

SCHEMA_VERSION = 1


def _clean(value):
    # JSON has no inf/nan; numpy scalars are unwrapped
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float | None = None
    details: dict[str, Any] = field(default_factory=dict)
    runtime: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return _clean(asdict(self))

    def line(self) -> str:
        margin = "" if self.margin is None else f" margin={self.margin:.3e}"
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}{margin}"


@dataclass
class Report:
    scenario: str
    checks: list[CheckResult] = field(default_factory=list)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        return check

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "passed": self.passed,
            "runtime": round(self.runtime, 6),
            "checks": [c.to_dict() for c in self.checks],
        }
