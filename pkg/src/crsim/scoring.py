"""Competition scoring: accuracy and time multipliers, per-item points, totals."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .domain import ScoreComponents, ScoreInputs

POINTS = {"POV": 2.0, "Patch": 6.0, "Sarif": 1.0, "Bundle": 1.0}


class Kind(str, enum.Enum):
    POV = "POV"
    PATCH = "Patch"
    SARIF = "Sarif"
    BUNDLE = "Bundle"


def accuracy_ratio(acc: int, inacc: int) -> float:
    """Fraction of accurate submissions; 1.0 before anything was submitted."""
    if acc < 0 or inacc < 0:
        raise ValueError("submission counts must be non-negative")
    if acc + inacc == 0:
        return 1.0
    return acc / (acc + inacc)


def accuracy_multiplier(r: float) -> float:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"accuracy ratio {r} outside [0, 1]")
    return 1.0 - (1.0 - r) / 4.0


def time_multiplier(time_rem: int, time_window: int) -> float:
    if time_window <= 0:
        raise ValueError("time_window must be positive")
    if not 0 <= time_rem <= time_window:
        raise ValueError(f"time_rem {time_rem} outside [0, {time_window}]")
    return 0.5 + time_rem / (2.0 * time_window)


def time_remaining(submitted_at: int, received_at: int, time_window: int) -> int:
    """Remaining window at ``submitted_at``, clamped to [0, time_window]."""
    return max(0, min(time_window, time_window - (submitted_at - received_at)))


def component_points(kind: Kind | str, passed: bool, tau: float) -> float:
    if not 0.5 <= tau <= 1.0:
        raise ValueError(f"time multiplier {tau} outside [0.5, 1]")
    if not passed:
        return 0.0
    return POINTS[Kind(kind).value] * tau


def challenge_score(
    vds: float = 0.0,
    prs: float = 0.0,
    sas: float = 0.0,
    bdl: float = 0.0,
    *,
    inputs: ScoreInputs,
) -> ScoreComponents:
    am = accuracy_multiplier(accuracy_ratio(inputs.acc, inputs.inacc))
    return ScoreComponents(vds=vds, prs=prs, sas=sas, bdl=bdl, am=am, total=am * (vds + prs + sas + bdl))


def leaderboard_score(pov_count: int, patch_count: int) -> int:
    if pov_count < 0 or patch_count < 0:
        raise ValueError("counts must be non-negative")
    return 2 * pov_count + 6 * patch_count


@dataclass(frozen=True)
class TaskScore:
    """Sum over the vulnerabilities of a challenge; AM is shared."""

    am: float
    vds: float
    prs: float
    sas: float
    bdl: float
    total: float
    vulnerabilities: dict[str, ScoreComponents] = field(default_factory=dict)


def score_ledger(doc: dict) -> TaskScore:
    """Score a ledger document (see ``SubmissionService.ledger_document``).

    Within one vulnerability group the earliest passed item of each kind
    earns the points; every POV, patch and SARIF assessment that came back
    from the competition counts toward the accuracy ratio.
    """
    window = int(doc["time_window"])
    received = int(doc.get("received_at", 0))
    events = sorted(doc.get("events", []), key=lambda e: (e["submitted_at"], e["id"]))
    acc = int(doc.get("acc", sum(1 for e in events if e["kind"] != "Bundle" and e["status"] == "Passed")))
    inacc = int(doc.get("inacc", sum(1 for e in events if e["kind"] != "Bundle" and e["status"] == "Failed")))
    inputs = ScoreInputs(acc=acc, inacc=inacc, time_rem=window, time_window=window)

    per_group: dict[str, dict[str, float]] = {}
    for e in events:
        if e["status"] != "Passed":
            continue
        slot = per_group.setdefault(e["group"], {})
        kind = Kind(e["kind"])
        tau = time_multiplier(time_remaining(int(e["submitted_at"]), received, window), window)
        # bundles are resubmitted as they grow; the latest form counts
        if kind is Kind.BUNDLE or kind.value not in slot:
            slot[kind.value] = component_points(kind, True, tau)

    vulns = {
        g: challenge_score(
            s.get("POV", 0.0), s.get("Patch", 0.0), s.get("Sarif", 0.0), s.get("Bundle", 0.0), inputs=inputs
        )
        for g, s in sorted(per_group.items())
    }
    am = accuracy_multiplier(accuracy_ratio(acc, inacc))
    sums = {k: sum(getattr(c, k) for c in vulns.values()) for k in ("vds", "prs", "sas", "bdl")}
    return TaskScore(
        am=am,
        total=sum(c.total for c in vulns.values()),
        vulnerabilities=vulns,
        **sums,
    )
