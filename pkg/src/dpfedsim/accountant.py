"""Per-client privacy accounting over realized participation.

Each noised step a client performs at multiplier z grows its Renyi divergence
budget by alpha / (2 z^2) at every order alpha.  The accountant composes those
terms over a client's participation ledger and converts to (epsilon, delta)
by minimizing rho(alpha) + ln(1/delta) / (alpha - 1) over an integer alpha
grid.  A consequence of the fixed grid: epsilon can never drop below
ln(1/delta) / (alpha_max - 1) no matter how much noise is added, so
calibration refuses targets under that floor.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

from .errors import CalibrationError

__all__ = [
    "AccountantConfig",
    "LedgerEntry",
    "ParticipationLedger",
    "ClientPrivacy",
    "FinalReport",
    "rdp_per_round",
    "compose",
    "rdp_to_dp",
    "basic_composition",
    "calibrate_constant_z",
    "final_report",
    "write_ledgers",
    "read_ledgers",
]

LEDGER_HEADER = ["client_id", "round", "z", "steps"]


@dataclass(frozen=True)
class AccountantConfig:
    """Integer Renyi order grid and the target delta of the final guarantee."""

    alphas: tuple[int, ...] = tuple(range(2, 65))
    delta: float = 1e-5

    def __post_init__(self):
        if not self.alphas:
            raise ValueError("alpha grid must be non-empty")
        if any(a != int(a) or a < 2 for a in self.alphas):
            raise ValueError("alpha grid must contain integers >= 2")
        if list(self.alphas) != sorted(set(self.alphas)):
            raise ValueError("alpha grid must be strictly increasing")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def epsilon_floor(self) -> float:
        """Smallest epsilon the grid can certify, reached as z grows unbounded."""
        return math.log(1.0 / self.delta) / (self.alphas[-1] - 1)


@dataclass(frozen=True)
class LedgerEntry:
    """One round of participation: noise multiplier and noised step count."""

    round: int
    z: float
    steps: int = 1

    def __post_init__(self):
        if self.round < 0:
            raise ValueError("round must be >= 0")
        if not (math.isfinite(self.z) and self.z > 0.0):
            raise ValueError("z must be positive and finite")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass
class ParticipationLedger:
    """Append-only record of one client's noised steps, strictly increasing rounds."""

    client_id: int
    entries: list[LedgerEntry] = field(default_factory=list)

    def __post_init__(self):
        rounds = [e.round for e in self.entries]
        if any(b <= a for a, b in zip(rounds, rounds[1:])):
            raise ValueError("ledger rounds must be strictly increasing")

    def record(self, round: int, z: float, steps: int = 1) -> None:
        """Append steps for a round, merging with the last entry when rounds match."""
        if self.entries and round < self.entries[-1].round:
            raise ValueError("ledger rounds must be non-decreasing when recording")
        if self.entries and self.entries[-1].round == round:
            last = self.entries[-1]
            if last.z != z:
                raise ValueError("one round must use a single noise multiplier")
            self.entries[-1] = LedgerEntry(round, z, last.steps + steps)
        else:
            self.entries.append(LedgerEntry(round, z, steps))

    def extend(self, entries: list[LedgerEntry]) -> None:
        for e in entries:
            self.record(e.round, e.z, e.steps)


def rdp_per_round(z: float, alpha: float) -> float:
    """Renyi budget alpha / (2 z^2) of one Gaussian invocation at multiplier z."""
    if not (math.isfinite(z) and z > 0.0):
        raise ValueError("z must be positive and finite")
    if alpha <= 1.0:
        raise ValueError("alpha must be > 1")
    return alpha / (2.0 * z * z)


def compose(ledger: ParticipationLedger, alpha: float) -> float:
    """Total Renyi budget of a ledger at one order: additive over noised steps."""
    total = 0.0
    for e in ledger.entries:
        total += e.steps * rdp_per_round(e.z, alpha)
    return total


def rdp_to_dp(ledger: ParticipationLedger, config: AccountantConfig,
              empty_as_inf: bool = False) -> tuple[float, int]:
    """Convert a ledger to (epsilon, alpha_star) at the config's delta.

    Scans the whole alpha grid; ties resolve toward the smaller alpha.  An
    empty ledger yields the penalty term alone, minimized at the largest
    alpha, unless ``empty_as_inf`` asks for infinity instead.
    """
    if not ledger.entries and empty_as_inf:
        return math.inf, config.alphas[-1]
    penalty_num = math.log(1.0 / config.delta)
    best_eps, best_alpha = math.inf, config.alphas[0]
    for alpha in config.alphas:
        eps = compose(ledger, alpha) + penalty_num / (alpha - 1)
        if eps < best_eps:
            best_eps, best_alpha = eps, alpha
    return best_eps, best_alpha


def basic_composition(per_round_epsilons: list[float], delta_per_round: float) -> tuple[float, float]:
    """Loose linear composition: epsilons add, deltas add."""
    if any(not (math.isfinite(e) and e > 0.0) for e in per_round_epsilons):
        raise ValueError("per-round epsilons must be positive and finite")
    if not 0.0 < delta_per_round < 1.0:
        raise ValueError("delta_per_round must lie in (0, 1)")
    return math.fsum(per_round_epsilons), len(per_round_epsilons) * delta_per_round


def _uniform_ledger_eps(z: float, rounds: int, steps: int, config: AccountantConfig) -> float:
    ledger = ParticipationLedger(client_id=0, entries=[
        LedgerEntry(t, z, steps) for t in range(rounds)
    ])
    return rdp_to_dp(ledger, config)[0]


def calibrate_constant_z(target_eps: float, expected_rounds: int, steps_per_round: int,
                         config: AccountantConfig) -> float:
    """Smallest constant z whose uniform ledger accounts to at most target_eps.

    Monotone bisection to 1e-6 relative width; the returned z always satisfies
    the target, and continuity of the conversion puts the accounted epsilon
    within [0.999 * target, target].  Targets at or below the grid's epsilon
    floor are unreachable and raise a CalibrationError.
    """
    if not (math.isfinite(target_eps) and target_eps > 0.0):
        raise ValueError("target_eps must be positive and finite")
    if expected_rounds < 1 or steps_per_round < 1:
        raise ValueError("expected_rounds and steps_per_round must be >= 1")
    floor = config.epsilon_floor
    if target_eps <= floor:
        raise CalibrationError(
            f"target epsilon {target_eps:.6g} is at or below the floor {floor:.6g} "
            f"imposed by delta={config.delta:g} and alpha_max={config.alphas[-1]}; "
            "no noise multiplier can reach it")

    def eps_at(z: float) -> float:
        return _uniform_ledger_eps(z, expected_rounds, steps_per_round, config)

    z_hi = 1.0
    for _ in range(400):
        if eps_at(z_hi) <= target_eps:
            break
        z_hi *= 2.0
    else:
        raise CalibrationError(
            f"could not bracket target epsilon {target_eps:.6g}: even z={z_hi:.3g} "
            f"accounts to {eps_at(z_hi):.6g}")
    z_lo = z_hi / 2.0
    while eps_at(z_lo) <= target_eps:
        z_lo /= 2.0
        if z_lo < 1e-12:
            raise CalibrationError("bracket collapsed; target epsilon is degenerate")
    while z_hi - z_lo > 1e-6 * z_hi:
        mid = 0.5 * (z_lo + z_hi)
        if eps_at(mid) <= target_eps:
            z_hi = mid
        else:
            z_lo = mid
    return z_hi


@dataclass(frozen=True)
class ClientPrivacy:
    client_id: int
    epsilon: float
    alpha_star: int


@dataclass(frozen=True)
class FinalReport:
    """Per-client realized guarantees plus distribution summary."""

    clients: tuple[ClientPrivacy, ...]
    delta: float
    eps_min: float
    eps_median: float
    eps_max: float


def final_report(ledgers: list[ParticipationLedger], config: AccountantConfig) -> FinalReport:
    """Account every client ledger and summarize the epsilon distribution.

    The median is the lower middle value for even counts.
    """
    if not ledgers:
        raise ValueError("final_report needs at least one ledger")
    clients = []
    for ledger in ledgers:
        eps, alpha = rdp_to_dp(ledger, config)
        clients.append(ClientPrivacy(ledger.client_id, eps, alpha))
    eps_sorted = sorted(c.epsilon for c in clients)
    return FinalReport(
        clients=tuple(clients),
        delta=config.delta,
        eps_min=eps_sorted[0],
        eps_median=eps_sorted[(len(eps_sorted) - 1) // 2],
        eps_max=eps_sorted[-1],
    )


def write_ledgers(ledgers: list[ParticipationLedger], path: str) -> None:
    """Write ledgers as CSV lines (client_id, round, z, steps), full precision z."""
    rows = []
    for ledger in ledgers:
        for e in ledger.entries:
            rows.append((ledger.client_id, e.round, e.z, e.steps))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LEDGER_HEADER)
        for cid, rnd, z, steps in rows:
            writer.writerow([cid, rnd, repr(z), steps])


def read_ledgers(path: str) -> list[ParticipationLedger]:
    """Read ledgers from CSV; an empty body yields an empty list."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return []
    if rows[0] != LEDGER_HEADER:
        raise ValueError(f"{path}: expected header {','.join(LEDGER_HEADER)}")
    by_client: dict[int, list[LedgerEntry]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 columns")
        try:
            cid, rnd, z, steps = int(row[0]), int(row[1]), float(row[2]), int(row[3])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value ({exc})") from None
        by_client.setdefault(cid, []).append(LedgerEntry(rnd, z, steps))
    ledgers = []
    for cid in sorted(by_client):
        entries = sorted(by_client[cid], key=lambda e: e.round)
        ledgers.append(ParticipationLedger(client_id=cid, entries=entries))
    return ledgers
