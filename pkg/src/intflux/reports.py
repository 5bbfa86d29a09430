"""Shared audit report container."""

from dataclasses import dataclass, field


@dataclass
class AuditReport:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "metrics": self.metrics,
            "failures": self.failures,
            "config": self.config,
        }
