"""Federated training loop with record-level DP local updates.

Each round samples K of N clients uniformly without replacement.  A sampled
client runs E noised SGD steps on its own data (clip per example, average,
add Gaussian noise scaled by its personal multiplier) and uploads only its
perturbed parameters; raw or clipped-but-unnoised gradients never leave
``local_update``.  The server averages uploads weighted by dataset size,
renormalized over the sampled set by default.  Every noised step lands in the
client's participation ledger, and each client draws from a dedicated stream
keyed by (client id, round, step), so results do not depend on the order
clients are simulated in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .accountant import AccountantConfig, LedgerEntry, ParticipationLedger, calibrate_constant_z
from .data import LocalDataset, merge
from .mechanism import NoiseSpec, average_clipped, gaussian_perturb
from .models import ModelSpec, accuracy, dataset_loss, init_model, param_count, per_example_gradients
from .schedule import ScheduleParams, round_scale
from .streams import stream

if TYPE_CHECKING:
    from .curvefit import FitResult

__all__ = [
    "FixedClipPolicy",
    "BudgetClipPolicy",
    "QuantileClipPolicy",
    "quantile_policy_update",
    "ClientProfile",
    "FederationConfig",
    "LocalUpdateResult",
    "RoundRecord",
    "TrainingResult",
    "CommunicationReport",
    "sample_clients",
    "make_clients",
    "local_update",
    "aggregate",
    "run_training",
    "communication_report",
]

POLICY_NAMES = ("pacdp", "fixed", "quantile")


class FixedClipPolicy:
    """One constant clip bound for every client and round."""

    name = "fixed"

    def __init__(self, clip: float):
        if not (math.isfinite(clip) and clip > 0.0):
            raise ValueError("clip must be positive and finite")
        self.clip = clip

    def bound(self, eps_target: float, t: int) -> float:
        return self.clip


class BudgetClipPolicy:
    """Clip bound from a fitted budget-to-threshold curve times the round schedule.

    The bound depends only on the client's budget and the round index, never on
    data observed during the run.
    """

    name = "pacdp"

    def __init__(self, fit: "FitResult", schedule: ScheduleParams):
        self.fit = fit
        self.schedule = schedule

    def bound(self, eps_target: float, t: int) -> float:
        return self.fit.value_at(eps_target) * round_scale(t, self.schedule)


class QuantileClipPolicy:
    """Server-side quantile tracker: one shared clip bound nudged each round.

    The bound moves by C <- C * exp(-lr * (fraction_below - q)) using the
    per-example gradient norms observed at participating clients.  This
    baseline consumes norm statistics that the budget-curve policy never
    looks at.
    """

    name = "quantile"

    def __init__(self, target_quantile: float, clip_init: float, lr: float):
        if not 0.0 < target_quantile < 1.0:
            raise ValueError("target_quantile must lie in (0, 1)")
        if not (math.isfinite(clip_init) and clip_init > 0.0):
            raise ValueError("clip_init must be positive and finite")
        if not (math.isfinite(lr) and lr > 0.0):
            raise ValueError("lr must be positive and finite")
        self.target_quantile = target_quantile
        self.clip = clip_init
        self.lr = lr

    def bound(self, eps_target: float, t: int) -> float:
        return self.clip

    def observe(self, norms: np.ndarray) -> None:
        self.clip = quantile_policy_update(self.clip, norms, self.target_quantile, self.lr)


def quantile_policy_update(clip: float, norms: np.ndarray, target_quantile: float,
                           lr: float) -> float:
    """Multiplicative quantile step; empty observations leave the bound unchanged."""
    norms = np.asarray(norms, dtype=np.float64)
    if norms.size == 0:
        return clip
    frac_below = float(np.mean(norms <= clip))
    return clip * math.exp(-lr * (frac_below - target_quantile))


@dataclass
class ClientProfile:
    """One client: data shard, privacy budget, calibrated multiplier, weight."""

    client_id: int
    dataset: LocalDataset
    eps_target: float
    z: float
    weight: float
    ledger: ParticipationLedger = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not (math.isfinite(self.eps_target) and self.eps_target > 0.0):
            raise ValueError("eps_target must be positive and finite")
        if not (math.isfinite(self.z) and self.z > 0.0):
            raise ValueError("z must be positive and finite")
        if not (math.isfinite(self.weight) and self.weight > 0.0):
            raise ValueError("weight must be positive and finite")
        if self.ledger is None:
            self.ledger = ParticipationLedger(client_id=self.client_id)


@dataclass(frozen=True)
class FederationConfig:
    """Scalar knobs of one federated run."""

    model: ModelSpec
    num_clients: int
    sample_size: int
    rounds: int
    local_steps: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1
    delta: float = 1e-5
    master_seed: int = 0
    renormalize_weights: bool = True

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not 1 <= self.sample_size <= self.num_clients:
            raise ValueError("sample_size must lie in [1, num_clients]")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0.0):
            raise ValueError("learning_rate must be positive and finite")


def expected_participations(config: FederationConfig) -> int:
    """Rounds a client expects to join: ceil(T * K / N), the calibration basis."""
    return math.ceil(config.rounds * config.sample_size / config.num_clients)


def make_clients(datasets: list[LocalDataset], eps_targets: list[float],
                 config: FederationConfig,
                 acct: AccountantConfig | None = None) -> list[ClientProfile]:
    """Build client profiles: size-proportional weights and upfront constant z.

    Each client's z is the smallest constant multiplier whose expected
    participation ledger accounts to at most its budget.  Calibration results
    are cached per distinct budget.
    """
    if len(datasets) != config.num_clients or len(eps_targets) != config.num_clients:
        raise ValueError("need one dataset and one budget per client")
    acct = acct or AccountantConfig(delta=config.delta)
    total = sum(len(d) for d in datasets)
    rounds = expected_participations(config)
    z_cache: dict[float, float] = {}
    clients = []
    for cid, (ds, eps) in enumerate(zip(datasets, eps_targets)):
        if eps not in z_cache:
            z_cache[eps] = calibrate_constant_z(eps, rounds, config.local_steps, acct)
        clients.append(ClientProfile(
            client_id=cid,
            dataset=ds,
            eps_target=eps,
            z=z_cache[eps],
            weight=len(ds) / total,
        ))
    return clients


def sample_clients(num_clients: int, sample_size: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Uniform without-replacement sample of client ids, returned sorted."""
    if not 1 <= sample_size <= num_clients:
        raise ValueError("sample_size must lie in [1, num_clients]")
    return np.sort(rng.choice(num_clients, size=sample_size, replace=False))


@dataclass
class LocalUpdateResult:
    """Outcome of one client round; ``failed`` marks a non-finite update."""

    client_id: int
    params: np.ndarray | None
    ledger_delta: list[LedgerEntry]
    observed_norms: np.ndarray
    clip_used: float
    failed: bool = False


def local_update(client: ClientProfile, global_params: np.ndarray, policy,
                 t: int, config: FederationConfig) -> LocalUpdateResult:
    """Run E noised SGD steps on one client's shard.

    Each step samples min(B, n_i) examples without replacement, clips their
    gradients to the round's bound, averages, perturbs with scale
    z * C / batch (the realized batch size), and applies the step.  The
    ledger delta holds one entry per noised step; only perturbed parameters
    and scalar gradient norms appear in the result.  A non-finite parameter
    vector aborts the remaining steps and flags the client as failed, keeping
    the entries for noise already spent.
    """
    clip = policy.bound(client.eps_target, t)
    if not (math.isfinite(clip) and clip > 0.0):
        raise ValueError(f"policy produced a non-positive clip bound {clip}")
    params = np.array(global_params, dtype=np.float64)
    n_local = len(client.dataset)
    batch = min(config.batch_size, n_local)
    noise = NoiseSpec(z=client.z, clip=clip, batch_size=batch)
    delta: list[LedgerEntry] = []
    norms: list[np.ndarray] = []
    for step in range(config.local_steps):
        rng = stream(config.master_seed, "client", client.client_id, t, step)
        idx = rng.choice(n_local, size=batch, replace=False)
        grads = per_example_gradients(config.model, params,
                                      client.dataset.features[idx],
                                      client.dataset.labels[idx])
        norms.append(np.linalg.norm(grads, axis=1))
        noised = gaussian_perturb(average_clipped(grads, clip), noise, rng)
        # overflow lands in the non-finite check below, not in a warning
        with np.errstate(over="ignore", invalid="ignore"):
            params = params - config.learning_rate * noised
        delta.append(LedgerEntry(round=t, z=client.z, steps=1))
        if not np.all(np.isfinite(params)):
            return LocalUpdateResult(client.client_id, None, delta,
                                     np.concatenate(norms), clip, failed=True)
    return LocalUpdateResult(client.client_id, params, delta,
                             np.concatenate(norms), clip)


def aggregate(updates: list[tuple[float, np.ndarray]],
              renormalize: bool = True) -> np.ndarray:
    """Weighted average of parameter uploads.

    With ``renormalize`` the weights are rescaled to sum to 1 over the given
    subset (a single upload passes through exactly); without it the raw
    weights apply, shrinking the combination when they sum below 1.
    """
    if not updates:
        raise ValueError("aggregate needs at least one update")
    weights = np.array([w for w, _ in updates], dtype=np.float64)
    if np.any(weights <= 0.0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be positive and finite")
    if renormalize:
        weights = weights / weights.sum()
    stacked = np.stack([p for _, p in updates])
    return weights @ stacked


@dataclass(frozen=True)
class RoundRecord:
    """Telemetry for one round; messages count every sampled client."""

    round: int
    sampled: tuple[int, ...]
    clip_bounds: tuple[float, ...]
    loss: float
    accuracy: float
    update_norm: float
    messages: int
    payload_floats: int
    failed_clients: tuple[int, ...] = ()


@dataclass
class TrainingResult:
    params: np.ndarray
    history: list[RoundRecord]
    ledgers: list[ParticipationLedger]


@dataclass(frozen=True)
class CommunicationReport:
    total_messages: int
    total_floats: int
    mean_messages_per_round: float
    mean_floats_per_round: float


def run_training(config: FederationConfig, clients: list[ClientProfile],
                 policy, eval_data: LocalDataset | None = None) -> TrainingResult:
    """Full federated run: T rounds of sample, local update, aggregate.

    Telemetry is measured on ``eval_data`` (default: the union of client
    shards); accuracy is NaN for model kinds without a classification readout.
    Rounds where every sampled client fails carry the parameters over
    unchanged and list the failures in the round record.
    """
    if len(clients) != config.num_clients:
        raise ValueError("client list must match config.num_clients")
    if eval_data is None:
        eval_data = merge([c.dataset for c in clients])
    params = init_model(config.model, config.master_seed)
    dim = param_count(config.model)
    history: list[RoundRecord] = []
    classification = config.model.kind not in ("linear-regression", "quadratic")
    for t in range(config.rounds):
        sampled = sample_clients(config.num_clients, config.sample_size,
                                 stream(config.master_seed, "sample", t))
        results = [local_update(clients[cid], params, policy, t, config)
                   for cid in sampled]
        for res in results:
            clients[res.client_id].ledger.extend(res.ledger_delta)
        ok = [res for res in results if not res.failed]
        previous = params
        if ok:
            params = aggregate([(clients[r.client_id].weight, r.params) for r in ok],
                               renormalize=config.renormalize_weights)
        if isinstance(policy, QuantileClipPolicy):
            policy.observe(np.concatenate([r.observed_norms for r in results]))
        acc = accuracy(config.model, params, eval_data) if classification else math.nan
        history.append(RoundRecord(
            round=t,
            sampled=tuple(int(c) for c in sampled),
            clip_bounds=tuple(r.clip_used for r in results),
            loss=dataset_loss(config.model, params, eval_data),
            accuracy=acc,
            update_norm=float(np.linalg.norm(params - previous)),
            messages=len(sampled),
            payload_floats=len(sampled) * dim,
            failed_clients=tuple(r.client_id for r in results if r.failed),
        ))
    return TrainingResult(params=params, history=history,
                          ledgers=[c.ledger for c in clients])


def communication_report(history: list[RoundRecord]) -> CommunicationReport:
    """Totals and per-round means of messages and payload floats."""
    if not history:
        return CommunicationReport(0, 0, 0.0, 0.0)
    msgs = sum(r.messages for r in history)
    floats = sum(r.payload_floats for r in history)
    return CommunicationReport(msgs, floats, msgs / len(history), floats / len(history))
