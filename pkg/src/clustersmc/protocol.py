"""Round orchestration for FedAvg, Gaussian-noise DP and cluster SMC.

One round: the server sends the global weights to every hospital, each
hospital trains locally, then uploads according to the strategy:

* ``fedavg``: raw weights (``client_weights``); server takes the plain mean.
* ``dp``: weights plus i.i.d. Gaussian noise (``client_weights``); plain mean.
* ``smc``: hospitals exchange shares inside their cluster (``share``), then
  each uploads its masked sum (``masked_sum``); server averages the sums.

The mean is unweighted (every hospital counts once regardless of data size).

Randomness
----------
All randomness is drawn from :func:`substream`, which seeds a numpy
``Generator`` with ``SeedSequence(master_seed, spawn_key=(crc32(purpose),
*keys))``. Purposes in use: ``init``, ``cluster``, ``train`` (client, round),
``coeff`` (client, round), ``dp`` (client, round). Training streams do not
depend on the strategy, so two strategies run with the same seed see identical
local-training randomness.
"""

from __future__ import annotations

import hashlib
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Literal, Sequence

import numpy as np

from . import metrics
from .data import ClientDataset, DataConfig, default_data_config, generate_clients
from .errors import ConfigError, LogParseError, ProtocolError, UsageError
from .model import ClientOptimizer, ModelSpec, OptimizerSpec, init_weights, local_training
from .model import loss as model_loss
from .model import predict
from .params import WeightVector, vec_mean
from .sharing import (
    MaskedSum,
    Share,
    accumulate_shares,
    make_shares,
    reconstruct_mean,
    sample_coefficients,
)

logger = logging.getLogger(__name__)

Strategy = Literal["fedavg", "dp", "smc"]
STRATEGIES: tuple[str, ...] = ("fedavg", "dp", "smc")
METHOD_NAMES = {"fedavg": "FedAvg", "dp": "DP", "smc": "SMC"}

SERVER = "server"
HEADER_BYTES = 32
MESSAGE_KINDS = ("broadcast_weights", "share", "masked_sum", "client_weights")
LOG_FIELDS = ("round", "sender", "receiver", "kind", "byte_size", "payload_digest")


def substream(master_seed: int, purpose: str, *keys: int) -> np.random.Generator:
    code = zlib.crc32(purpose.encode("ascii"))
    seq = np.random.SeedSequence(master_seed, spawn_key=(code, *map(int, keys)))
    return np.random.default_rng(seq)


# ---------------------------------------------------------------------------
# Clusters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterAssignment:
    """``members[c]`` is the sorted hospital list of cluster ``c + 1``."""

    members: tuple[tuple[int, ...], ...]

    @property
    def M(self) -> int:
        return len(self.members)

    @property
    def N(self) -> int:
        return len(self.members[0])

    def cluster_of(self, k: int) -> int:
        for c, group in enumerate(self.members, start=1):
            if k in group:
                return c
        raise UsageError(f"hospital {k} is in no cluster")

    def roster(self, c: int) -> tuple[int, ...]:
        return self.members[c - 1]


def assign_clusters(K: int, M: int, rng: np.random.Generator) -> ClusterAssignment:
    """Random equal-size partition of hospitals ``1..K`` into ``M`` clusters."""
    if M < 1 or K < 1:
        raise ConfigError("M", "K and M must be positive")
    if K % M:
        raise ConfigError("M", f"K={K} is not divisible by M={M}; clusters must be equal-size")
    perm = rng.permutation(K) + 1
    n = K // M
    return ClusterAssignment(
        tuple(tuple(sorted(int(k) for k in perm[c * n:(c + 1) * n])) for c in range(M))
    )


# ---------------------------------------------------------------------------
# Messages and the simulated network
# ---------------------------------------------------------------------------


def payload_digest(payload: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(payload, dtype="<f8").tobytes()).hexdigest()


@dataclass
class Message:
    round: int
    sender: int | str
    receiver: int | str
    kind: str
    payload: WeightVector | None
    byte_size: int
    payload_digest: str

    @classmethod
    def create(cls, round: int, sender, receiver, kind: str, payload: WeightVector) -> "Message":
        if kind not in MESSAGE_KINDS:
            raise UsageError(f"unknown message kind {kind!r}")
        return cls(
            round=round,
            sender=sender,
            receiver=receiver,
            kind=kind,
            payload=payload,
            byte_size=len(payload) * 8 + HEADER_BYTES,
            payload_digest=payload_digest(payload),
        )

    def record(self) -> dict:
        return {k: getattr(self, k) for k in LOG_FIELDS}


class MessageLog:
    """Append-only record of every simulated transmission.

    Payloads are retained only when ``keep_payloads`` is set; digests and
    sizes are always kept.
    """

    def __init__(self, keep_payloads: bool = False) -> None:
        self.keep_payloads = keep_payloads
        self._messages: list[Message] = []

    def append(self, msg: Message) -> None:
        if not self.keep_payloads:
            msg = replace(msg, payload=None)
        self._messages.append(msg)

    def __iter__(self) -> Iterator[Message]:
        return iter(self._messages)

    def __len__(self) -> int:
        return len(self._messages)

    def __getitem__(self, i: int) -> Message:
        return self._messages[i]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(m.record()) + "\n" for m in self._messages)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    def write_payloads(self, path: str | Path, true_weights: dict | None = None) -> None:
        """Save retained payloads (row ``i`` = message ``i``) and optional true weights."""
        if not self.keep_payloads:
            raise UsageError("log was recorded without payloads")
        arrays = {"payloads": np.stack([m.payload for m in self._messages])}
        if true_weights:
            keys = sorted(true_weights)
            arrays["true_keys"] = np.array(keys, dtype=np.int64)
            arrays["true_weights"] = np.stack([true_weights[k] for k in keys])
        np.savez(path, **arrays)

    @classmethod
    def from_records(cls, records: Iterable[dict], payloads: np.ndarray | None = None) -> "MessageLog":
        log = cls(keep_payloads=payloads is not None)
        for i, r in enumerate(records):
            p = None if payloads is None else payloads[i]
            log._messages.append(Message(payload=p, **r))
        return log


def parse_record(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogParseError(lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise LogParseError(lineno, "record is not an object")
    missing = [f for f in LOG_FIELDS if f not in rec]
    if missing:
        raise LogParseError(lineno, f"missing fields {missing}")
    if not isinstance(rec["round"], int) or rec["round"] < 0:
        raise LogParseError(lineno, "round must be a non-negative integer")
    if rec["kind"] not in MESSAGE_KINDS:
        raise LogParseError(lineno, f"unknown kind {rec['kind']!r}")
    for end in ("sender", "receiver"):
        v = rec[end]
        if not (v == SERVER or (isinstance(v, int) and not isinstance(v, bool) and v >= 1)):
            raise LogParseError(lineno, f"bad {end} {v!r}")
    if not isinstance(rec["byte_size"], int) or rec["byte_size"] < HEADER_BYTES:
        raise LogParseError(lineno, "byte_size must be an integer >= header size")
    return {f: rec[f] for f in LOG_FIELDS}


def read_log(path: str | Path, payloads_path: str | Path | None = None):
    """Load a ``messages.log`` file, plus payloads and true weights if given.

    Returns ``(log, true_weights)``; ``true_weights`` is ``None`` without a
    payload file.
    """
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                records.append(parse_record(line, lineno))
    if payloads_path is None:
        return MessageLog.from_records(records), None
    with np.load(payloads_path) as z:
        payloads = z["payloads"]
        true = None
        if "true_keys" in z:
            true = {
                (int(t), int(k)): w for (t, k), w in zip(z["true_keys"], z["true_weights"])
            }
    if len(payloads) != len(records):
        raise UsageError(f"{len(payloads)} payloads for {len(records)} log records")
    return MessageLog.from_records(records, payloads), true


class SimNetwork:
    """In-memory synchronous network with per-receiver inboxes.

    ``drop`` may be set to a predicate that silently discards matching
    messages, to exercise the missing-message checks.
    """

    def __init__(self, log: MessageLog | None = None, drop: Callable[[Message], bool] | None = None):
        self.log = log if log is not None else MessageLog()
        self.drop = drop
        self._inbox: dict[object, list[Message]] = {}

    def send(self, round: int, sender, receiver, kind: str, payload: WeightVector) -> None:
        msg = Message.create(round, sender, receiver, kind, payload)
        self.log.append(msg)
        if self.drop is not None and self.drop(msg):
            return
        self._inbox.setdefault(receiver, []).append(msg)

    def collect(self, receiver, round: int, kind: str, senders: Sequence) -> dict:
        """Take exactly one ``kind`` message from each of ``senders``."""
        box = self._inbox.get(receiver, [])
        got: dict = {}
        rest = []
        for m in box:
            if m.round == round and m.kind == kind and m.sender in senders:
                if m.sender in got:
                    raise ProtocolError(
                        f"round {round}: duplicate {kind} from {m.sender} to {receiver}"
                    )
                got[m.sender] = m.payload
            else:
                rest.append(m)
        self._inbox[receiver] = rest
        for s in senders:
            if s not in got:
                raise ProtocolError(
                    f"round {round}: missing {kind} from {_who(s)} to {_who(receiver)}"
                )
        return got


def _who(x) -> str:
    return "server" if x == SERVER else f"hospital {x}"


# ---------------------------------------------------------------------------
# Differential privacy baseline
# ---------------------------------------------------------------------------


def dp_perturb(w: WeightVector, sigma: float, rng: np.random.Generator) -> WeightVector:
    """Add i.i.d. ``N(0, sigma^2)`` noise to every coordinate."""
    if not sigma >= 0:
        raise UsageError(f"sigma must be non-negative, got {sigma}")
    w = np.asarray(w, dtype=np.float64)
    if sigma == 0:
        return w.copy()
    return w + rng.normal(0.0, sigma, size=w.shape)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    K: int = 6
    M: int = 2
    T: int = 300
    E: int = 1
    B: int = 32
    strategy: str = "smc"
    dp_sigma: float = 0.03
    master_seed: int = 0
    repeats: int = 5
    allow_degenerate: bool = False
    model: ModelSpec = field(default_factory=ModelSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    data: DataConfig | None = None

    @property
    def N(self) -> int:
        return self.K // self.M

    def resolved_data(self) -> DataConfig:
        if self.data is not None:
            return self.data
        return default_data_config(self.K, input_dim=self.model.input_dim)

    def validate(self) -> "RunConfig":
        for name in ("K", "M", "T", "E", "B", "repeats"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if self.K % self.M:
            raise ConfigError(
                "M", f"K={self.K} is not divisible by M={self.M}; clusters must be equal-size"
            )
        if self.strategy not in STRATEGIES:
            raise ConfigError("strategy", f"must be one of {STRATEGIES}, got {self.strategy!r}")
        if not (self.dp_sigma >= 0 and np.isfinite(self.dp_sigma)):
            raise ConfigError("dp_sigma", "must be a finite non-negative number")
        if self.strategy == "smc" and self.N == 1 and not self.allow_degenerate:
            raise ConfigError(
                "M",
                "cluster size K/M = 1 hands raw weights to the server; "
                "set allow_degenerate to run it anyway",
            )
        data = self.resolved_data()
        if data.K != self.K:
            raise ConfigError("data.K", f"data describes {data.K} clients but K={self.K}")
        if data.input_dim != self.model.input_dim:
            raise ConfigError("model.input_dim", "must equal data.input_dim")
        data.validate()
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"] = asdict(self.resolved_data())
        d["data"]["sizes"] = list(d["data"]["sizes"])
        d["data"]["label_fracs"] = list(d["data"]["label_fracs"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        try:
            if "model" in d:
                d["model"] = ModelSpec(**d["model"])
            if "optimizer" in d:
                d["optimizer"] = OptimizerSpec(**d["optimizer"])
            if d.get("data") is not None:
                d["data"] = DataConfig(**d["data"])
        except TypeError as exc:
            raise ConfigError("config", str(exc)) from None
        except UsageError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("config", str(exc)) from None
        return cls(**d)


# ---------------------------------------------------------------------------
# Rounds
# ---------------------------------------------------------------------------

Trainer = Callable[..., WeightVector]


@dataclass
class Federation:
    """Static context of one run: config, client data and cluster layout."""

    cfg: RunConfig
    clients: list[ClientDataset]
    assignment: ClusterAssignment

    @property
    def hospitals(self) -> list[int]:
        return [c.client_id for c in self.clients]


@dataclass
class RoundState:
    round: int
    weights: WeightVector
    optimizers: dict[int, ClientOptimizer]


def run_round(
    state: RoundState,
    fed: Federation,
    network: SimNetwork,
    trainer: Trainer = local_training,
) -> tuple[RoundState, dict[int, WeightVector]]:
    """Execute one synchronous round.

    Returns the next state and each hospital's post-training weights (kept
    for auditing; they never leave the hospital under ``smc``).
    """
    cfg = fed.cfg
    t = state.round
    if t >= cfg.T:
        raise UsageError(f"round {t} is past T={cfg.T}")
    seed = cfg.master_seed
    hospitals = fed.hospitals

    for k in hospitals:
        network.send(t, SERVER, k, "broadcast_weights", state.weights.copy())

    local: dict[int, WeightVector] = {}
    for client in fed.clients:
        k = client.client_id
        w_t = network.collect(k, t, "broadcast_weights", [SERVER])[SERVER]
        local[k] = trainer(
            cfg.model,
            client.X_train,
            client.y_train,
            w_t,
            state.optimizers[k],
            cfg.E,
            cfg.B,
            substream(seed, "train", k, t),
        )

    if cfg.strategy in ("fedavg", "dp"):
        for k in hospitals:
            payload = local[k]
            if cfg.strategy == "dp":
                payload = dp_perturb(payload, cfg.dp_sigma, substream(seed, "dp", k, t))
            network.send(t, k, SERVER, "client_weights", payload)
        received = network.collect(SERVER, t, "client_weights", hospitals)
        new_w = vec_mean([received[k] for k in sorted(received)])
    else:
        new_w = _smc_aggregate(t, fed, local, network)

    return RoundState(t + 1, new_w, state.optimizers), local


def _smc_aggregate(t: int, fed: Federation, local: dict, network: SimNetwork) -> WeightVector:
    seed = fed.cfg.master_seed
    kept = {}
    for c, roster in enumerate(fed.assignment.members, start=1):
        for i in roster:
            coeffs = sample_coefficients(
                len(roster), substream(seed, "coeff", i, t), owner=i, cluster=c, members=roster
            )
            for share in make_shares(local[i], coeffs, t):
                if share.target == i:
                    # Self-share stays local and is not a network message.
                    kept[i] = share
                else:
                    network.send(t, i, share.target, "share", share.payload)

    sums = []
    for c, roster in enumerate(fed.assignment.members, start=1):
        for k in roster:
            neighbours = [i for i in roster if i != k]
            got = network.collect(k, t, "share", neighbours)
            shares = [kept[k]] + [Share(i, k, t, p) for i, p in got.items()]
            masked = accumulate_shares(shares, roster, cluster=c)
            network.send(t, k, SERVER, "masked_sum", masked.payload)

    received = network.collect(SERVER, t, "masked_sum", fed.hospitals)
    for k in fed.hospitals:
        sums.append(MaskedSum(k, fed.assignment.cluster_of(k), t, received[k]))
    return reconstruct_mean(sums, fed.cfg.K)


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


@dataclass
class TrainingResult:
    final_weights: WeightVector
    report: metrics.EvalReport
    log: MessageLog
    assignment: ClusterAssignment
    true_weights: dict[tuple[int, int], WeightVector] | None = None


def _init_seed(master_seed: int) -> int:
    seq = np.random.SeedSequence(master_seed, spawn_key=(zlib.crc32(b"init"),))
    return int(seq.generate_state(1)[0])


def _evaluate(spec: ModelSpec, w: WeightVector, clients: Sequence[ClientDataset]):
    accs, losses = [], []
    for c in clients:
        accs.append(metrics.accuracy(predict(spec, w, c.X_test), c.y_test))
        losses.append(model_loss(spec, w, c.X_train, c.y_train))
    return float(np.mean(accs)), float(np.mean(losses))


def run_training(
    cfg: RunConfig,
    clients: list[ClientDataset] | None = None,
    *,
    keep_payloads: bool = False,
    trainer: Trainer = local_training,
) -> TrainingResult:
    """Run ``cfg.T`` rounds of ``cfg.strategy`` from the seeded initial weights."""
    cfg.validate()
    if clients is None:
        clients = generate_clients(cfg.resolved_data())
    if len(clients) != cfg.K:
        raise ConfigError("K", f"{len(clients)} client datasets for K={cfg.K}")
    seed = cfg.master_seed
    assignment = assign_clusters(cfg.K, cfg.M, substream(seed, "cluster"))
    fed = Federation(cfg, clients, assignment)
    w0 = init_weights(cfg.model, _init_seed(seed))
    state = RoundState(
        0, w0, {c.client_id: ClientOptimizer(cfg.optimizer, len(w0)) for c in clients}
    )
    network = SimNetwork(MessageLog(keep_payloads=keep_payloads))
    true_weights: dict | None = {} if keep_payloads else None

    curve_acc, curve_loss = [], []
    for _ in range(cfg.T):
        t = state.round
        state, local = run_round(state, fed, network, trainer)
        if true_weights is not None:
            for k, w in local.items():
                true_weights[(t, k)] = w
        acc, loss_value = _evaluate(cfg.model, state.weights, clients)
        curve_acc.append(acc)
        curve_loss.append(loss_value)
    logger.debug("%s seed=%d finished %d rounds", cfg.strategy, seed, cfg.T)

    scores = []
    for c in clients:
        pred = predict(cfg.model, state.weights, c.X_test)
        scores.append(
            metrics.ClientScore(
                c.client_id, metrics.accuracy(pred, c.y_test), metrics.f1_score(pred, c.y_test)
            )
        )
    report = metrics.EvalReport(
        method=METHOD_NAMES[cfg.strategy],
        clients=scores,
        curve_test_acc=curve_acc,
        curve_train_loss=curve_loss,
    )
    return TrainingResult(state.weights, report, network.log, assignment, true_weights)


def run_repeats(cfg: RunConfig, clients: list[ClientDataset] | None = None) -> list[TrainingResult]:
    """Run ``cfg.repeats`` realizations with seeds ``master_seed + r`` on shared data."""
    cfg.validate()
    if clients is None:
        clients = generate_clients(cfg.resolved_data())
    return [
        run_training(replace(cfg, master_seed=cfg.master_seed + r), clients)
        for r in range(cfg.repeats)
    ]
