"""Two-stage training at desk scale: span-weighted SFT, then preference tuning.

The policy is a table of categorical logits indexed by (context, position,
token) over a fixed-length sequence, so the softmax NLL is convex and all
gradients are closed-form. Sequences mimic the planner output layout:
a short reasoning span, two meta-action tokens, then twelve trajectory
tokens (x/y bin pairs for six waypoints) drawn from ``TrajTokenizer``.

Preference tuning samples K full responses per context from a frozen
reference at temperature tau, scores each decoded trajectory by its mean
1 Hz displacement from ground truth, pairs the best against the worst and
descends the logistic preference loss

    -log sigmoid(beta * ((lp_theta+ - lp_theta-) - (lp_ref+ - lp_ref-)))

computed in overflow-free form. Runs are bit-reproducible: every sampling
call derives its generator from (run seed, step, context index).
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Trajectory, Waypoint, subsample_1hz
from .synthetic import rollout_kinematic

__all__ = [
    "SpanTag",
    "TrajTokenizer",
    "TokenDecodeError",
    "ToyPolicy",
    "ToyContext",
    "SampledResponse",
    "PreferencePair",
    "TpoConfig",
    "SftConfig",
    "SftExample",
    "TpoStepMetrics",
    "default_span_layout",
    "score_displacement",
    "sample_responses",
    "build_pair",
    "dpo_loss",
    "dpo_loss_and_grad",
    "sft_loss",
    "sft_example_loss_grad",
    "sft_batch_loss_grad",
    "train_sft",
    "train_tpo",
    "grad_check",
    "evaluate_greedy_displacement",
    "make_toy_task",
    "save_policy",
    "load_policy",
]

logger = logging.getLogger(__name__)


class SpanTag(enum.Enum):
    REASON = "REASON"
    TRAJ = "TRAJ"
    META = "META"
    UNTRAINED = "UNTRAINED"


class TokenDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class TrajTokenizer:
    """Uniform-bin waypoint discretizer with three structural specials.

    Each in-range waypoint encodes to exactly two tokens (an x bin then a
    y bin); decoding returns bin centers, so the round-trip error is at
    most half a bin per axis.
    """

    bin_width: float = 0.25
    x_range: tuple[float, float] = (-8.0, 8.0)
    y_range: tuple[float, float] = (-2.0, 62.0)

    def __post_init__(self) -> None:
        for lo, hi in (self.x_range, self.y_range):
            span = hi - lo
            if span <= 0 or abs(span / self.bin_width - round(span / self.bin_width)) > 1e-9:
                raise ValueError("range must be a positive whole number of bins")

    @property
    def n_x_bins(self) -> int:
        return round((self.x_range[1] - self.x_range[0]) / self.bin_width)

    @property
    def n_y_bins(self) -> int:
        return round((self.y_range[1] - self.y_range[0]) / self.bin_width)

    @property
    def vocab_size(self) -> int:
        return self.n_x_bins + self.n_y_bins + 3

    @property
    def bos_id(self) -> int:
        return self.n_x_bins + self.n_y_bins

    @property
    def eos_id(self) -> int:
        return self.bos_id + 1

    @property
    def sep_id(self) -> int:
        return self.bos_id + 2

    def encode_waypoint(self, w: Waypoint) -> tuple[int, int]:
        tx = min(max(math.floor((w.x - self.x_range[0]) / self.bin_width), 0), self.n_x_bins - 1)
        ty = min(max(math.floor((w.y - self.y_range[0]) / self.bin_width), 0), self.n_y_bins - 1)
        return (tx, self.n_x_bins + ty)

    def decode_waypoint(self, tx: int, ty: int) -> Waypoint:
        if not 0 <= tx < self.n_x_bins:
            raise TokenDecodeError(f"token {tx} is not an x bin")
        if not self.n_x_bins <= ty < self.n_x_bins + self.n_y_bins:
            raise TokenDecodeError(f"token {ty} is not a y bin")
        x = self.x_range[0] + (tx + 0.5) * self.bin_width
        y = self.y_range[0] + (ty - self.n_x_bins + 0.5) * self.bin_width
        return Waypoint(x, y)

    def encode_trajectory(self, traj: Trajectory) -> tuple[int, ...]:
        out: list[int] = []
        for w in traj.waypoints:
            out.extend(self.encode_waypoint(w))
        return tuple(out)

    def decode_trajectory(self, tokens: Sequence[int]) -> Trajectory:
        if len(tokens) != 12:
            raise TokenDecodeError(f"trajectory decoding expects 12 tokens, got {len(tokens)}")
        points = [
            self.decode_waypoint(int(tokens[2 * i]), int(tokens[2 * i + 1])) for i in range(6)
        ]
        return Trajectory(tuple(points))


def default_span_layout() -> tuple[SpanTag, ...]:
    """Two reasoning tokens, two meta tokens, then six (x, y) bin pairs."""
    return (SpanTag.REASON,) * 2 + (SpanTag.META,) * 2 + (SpanTag.TRAJ,) * 12


def traj_positions(spans: Sequence[SpanTag]) -> list[int]:
    return [i for i, s in enumerate(spans) if s is SpanTag.TRAJ]


class ToyPolicy:
    """Table-parameterized autoregressive token policy.

    ``logits[g, t]`` are unnormalized log-probabilities over the vocabulary
    for position ``t`` under context row ``g``; they do not depend on the
    sampled prefix, which keeps the NLL convex while preserving the
    left-to-right factorization.
    """

    def __init__(self, n_contexts: int, seq_len: int, vocab_size: int, logits: Optional[np.ndarray] = None):
        if logits is None:
            logits = np.zeros((n_contexts, seq_len, vocab_size), dtype=np.float64)
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (n_contexts, seq_len, vocab_size):
            raise ValueError(f"logit table shape {logits.shape} != {(n_contexts, seq_len, vocab_size)}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        self.logits = logits

    @property
    def n_contexts(self) -> int:
        return self.logits.shape[0]

    @property
    def seq_len(self) -> int:
        return self.logits.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.logits.shape[2]

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(self.n_contexts, self.seq_len, self.vocab_size, self.logits.copy())

    def log_probs(self, context_index: int, temperature: float = 1.0) -> np.ndarray:
        """Log-softmax over the vocabulary at every position, [seq_len, vocab]."""
        scaled = self.logits[context_index] / temperature
        shifted = scaled - scaled.max(axis=-1, keepdims=True)
        with np.errstate(under="ignore"):  # tail mass may underflow to 0
            return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def sequence_logprob(self, context_index: int, tokens: Sequence[int]) -> float:
        lp = self.log_probs(context_index)
        idx = np.asarray(tokens, dtype=np.int64)
        if idx.shape != (self.seq_len,):
            raise ValueError(f"token sequence must have length {self.seq_len}")
        return float(lp[np.arange(self.seq_len), idx].sum())

    def grad_sequence_logprob(self, context_index: int, tokens: Sequence[int]) -> np.ndarray:
        """d log p(tokens) / d logits[context]: one-hot minus softmax, [seq_len, vocab]."""
        with np.errstate(under="ignore"):
            probs = np.exp(self.log_probs(context_index))
        grad = -probs
        grad[np.arange(self.seq_len), np.asarray(tokens, dtype=np.int64)] += 1.0
        return grad

    def sample_tokens(
        self,
        context_index: int,
        k: int,
        temperature: float,
        rng: np.random.Generator,
        greedy: bool = False,
    ) -> np.ndarray:
        """k token sequences, [k, seq_len]; greedy ignores temperature and rng."""
        if greedy:
            return np.tile(self.greedy_tokens(context_index), (k, 1))
        with np.errstate(under="ignore"):
            probs = np.exp(self.log_probs(context_index, temperature))
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random((k, self.seq_len))
        idx = (u[:, :, None] > cdf[None, :, :]).sum(axis=-1)
        return np.minimum(idx, self.vocab_size - 1)

    def greedy_tokens(self, context_index: int) -> np.ndarray:
        return self.logits[context_index].argmax(axis=-1)


@dataclass(frozen=True)
class ToyContext:
    """One training context: an index into the policy table plus its target."""

    index: int
    gt_trajectory: Trajectory
    start_speed: float = 0.0
    turn_rate_dps: float = 0.0  # curvature proxy
    accel: float = 0.0


@dataclass(frozen=True)
class SampledResponse:
    tokens: tuple[int, ...]
    trajectory: Optional[Trajectory]
    logprob_policy: float  # log-prob under the policy that sampled it
    displacement: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.logprob_policy > 0.0 or math.isnan(self.logprob_policy):
            raise ValueError("sequence log-probability must be <= 0")
        if self.displacement < 0.0 or math.isnan(self.displacement):
            raise ValueError("displacement must be non-negative (inf marks invalid decodes)")


@dataclass(frozen=True)
class PreferencePair:
    context_id: int
    preferred: SampledResponse
    dispreferred: SampledResponse

    def __post_init__(self) -> None:
        if not self.preferred.displacement <= self.dispreferred.displacement:
            raise ValueError("preferred response must not displace more than dispreferred")


@dataclass(frozen=True)
class TpoConfig:
    beta: float = 0.1
    K: int = 16
    temperature: float = 1.5
    learning_rate: float = 60.0
    steps: int = 80
    seed: int = 0
    score_all_waypoints: bool = False  # default scores the three 1 Hz waypoints

    def __post_init__(self) -> None:
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class SftConfig:
    lambda_weight: float = 1.2
    learning_rate: float = 0.15
    steps: int = 600
    seed: int = 0
    span_labels: Optional[tuple[SpanTag, ...]] = None  # fallback layout for span-less examples

    def __post_init__(self) -> None:
        if self.lambda_weight < 0.0:
            raise ValueError("lambda_weight must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class SftExample:
    context_index: int
    target_tokens: tuple[int, ...]
    spans: Optional[tuple[SpanTag, ...]] = None


def score_displacement(resp: Trajectory, gt: Trajectory, all_waypoints: bool = False) -> float:
    """Mean Euclidean error of the 1 Hz waypoints (or all six with the switch)."""
    if resp.n_steps != gt.n_steps:
        raise ValueError(f"trajectory lengths differ: {resp.n_steps} vs {gt.n_steps}")
    if all_waypoints:
        pairs = list(zip(resp.waypoints, gt.waypoints))
    else:
        pairs = list(zip(subsample_1hz(resp), subsample_1hz(gt)))
    return math.fsum(a.distance_to(b) for a, b in pairs) / len(pairs)


def sample_responses(
    policy: ToyPolicy,
    context: ToyContext,
    cfg: TpoConfig,
    rng: Optional[np.random.Generator] = None,
    greedy: bool = False,
    tokenizer: Optional[TrajTokenizer] = None,
    spans: Optional[tuple[SpanTag, ...]] = None,
) -> list[SampledResponse]:
    """Sample K full sequences, decode and score each against the context GT.

    Sequences that place a non-bin token in a trajectory position are kept
    with ``displacement = inf`` so they can only ever be dispreferred.
    Deterministic for a fixed generator state.
    """
    tokenizer = tokenizer or TrajTokenizer()
    spans = spans or default_span_layout()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    token_block = policy.sample_tokens(context.index, cfg.K, cfg.temperature, rng, greedy=greedy)
    positions = traj_positions(spans)
    lp = policy.log_probs(context.index)
    arange = np.arange(policy.seq_len)
    out = []
    for row in token_block:
        tokens = tuple(int(t) for t in row)
        logprob = float(lp[arange, row].sum())
        try:
            traj = tokenizer.decode_trajectory([tokens[i] for i in positions])
            disp = score_displacement(traj, context.gt_trajectory, cfg.score_all_waypoints)
        except TokenDecodeError:
            traj = None
            disp = math.inf
        out.append(SampledResponse(tokens, traj, logprob, disp))
    return out


def build_pair(responses: Sequence[SampledResponse], context_id: int = 0) -> Optional[PreferencePair]:
    """Pair the min- against the max-displacement response; ties take the lowest index.

    Returns None (skip) when there is no preference signal: all
    displacements equal, which also covers the all-invalid case.
    """
    if len(responses) < 2:
        raise ValueError("need at least 2 responses to build a pair")
    best = min(range(len(responses)), key=lambda i: (responses[i].displacement, i))
    worst = max(range(len(responses)), key=lambda i: (responses[i].displacement, -i))
    if responses[best].displacement == responses[worst].displacement:
        return None
    return PreferencePair(context_id, responses[best], responses[worst])


def dpo_loss(
    lp_theta_pos: float,
    lp_theta_neg: float,
    lp_ref_pos: float,
    lp_ref_neg: float,
    beta: float,
) -> float:
    """-log sigmoid(beta * (delta_theta - delta_ref)), overflow-free.

    Evaluated as softplus(-u); stays exact for |u| up to 1e4 and beyond,
    and is strictly positive everywhere.
    """
    for v in (lp_theta_pos, lp_theta_neg, lp_ref_pos, lp_ref_neg):
        if not math.isfinite(v):
            raise ValueError("log-probabilities must be finite")
    u = beta * ((lp_theta_pos - lp_theta_neg) - (lp_ref_pos - lp_ref_neg))
    with np.errstate(under="ignore"):  # graceful underflow to 0 at huge margins
        return float(np.logaddexp(0.0, -u))


def _dpo_pair_row_grad(
    policy: ToyPolicy, pair: PreferencePair, beta: float
) -> tuple[float, np.ndarray]:
    """Loss and d loss / d logits[context] for one pair, [seq_len, vocab].

    Reference log-probs are the ones stored on the responses (they were
    sampled from the frozen reference). The softmax terms of the two
    log-prob gradients cancel because both sequences share the context
    row, leaving +-coef at the preferred/dispreferred token entries.
    """
    g = pair.context_id
    lp = policy.log_probs(g)
    arange = np.arange(policy.seq_len)
    pos_idx = np.asarray(pair.preferred.tokens, dtype=np.int64)
    neg_idx = np.asarray(pair.dispreferred.tokens, dtype=np.int64)
    lp_pos = float(lp[arange, pos_idx].sum())
    lp_neg = float(lp[arange, neg_idx].sum())
    loss = dpo_loss(lp_pos, lp_neg, pair.preferred.logprob_policy, pair.dispreferred.logprob_policy, beta)
    u = beta * (
        (lp_pos - lp_neg)
        - (pair.preferred.logprob_policy - pair.dispreferred.logprob_policy)
    )
    # dL/du = -sigmoid(-u); chain through u = beta * delta_theta.
    coef = -beta / (1.0 + math.exp(u)) if u < 500 else -beta * math.exp(-u)
    row = np.zeros((policy.seq_len, policy.vocab_size))
    row[arange, pos_idx] += coef
    row[arange, neg_idx] -= coef
    return loss, row


def dpo_loss_and_grad(
    policy: ToyPolicy, pair: PreferencePair, beta: float
) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. the full logit table for one pair."""
    loss, row = _dpo_pair_row_grad(policy, pair, beta)
    grad = np.zeros_like(policy.logits)
    grad[pair.context_id] = row
    return loss, grad


_SPAN_WEIGHT_BASE = {SpanTag.REASON: 1.0, SpanTag.UNTRAINED: 0.0}


def _span_weights(spans: Sequence[SpanTag], lambda_weight: float) -> np.ndarray:
    return np.array(
        [_SPAN_WEIGHT_BASE.get(s, lambda_weight) for s in spans], dtype=np.float64
    )


def _example_spans(example: SftExample, cfg: SftConfig) -> tuple[SpanTag, ...]:
    spans = example.spans if example.spans is not None else cfg.span_labels
    if spans is None:
        raise ValueError("example carries no spans and cfg.span_labels is unset")
    if len(spans) != len(example.target_tokens):
        raise ValueError(f"span count {len(spans)} != token count {len(example.target_tokens)}")
    return spans


def sft_loss(
    policy: ToyPolicy,
    context_index: int,
    target_tokens: Sequence[int],
    spans: Sequence[SpanTag],
    cfg: SftConfig,
) -> float:
    """Span-weighted NLL of one target sequence: reason 1, traj/meta lambda, untrained 0."""
    if len(spans) != len(target_tokens):
        raise ValueError(f"span count {len(spans)} != token count {len(target_tokens)}")
    lp = policy.log_probs(context_index)
    idx = np.asarray(target_tokens, dtype=np.int64)
    w = _span_weights(spans, cfg.lambda_weight)
    return float(-(w * lp[np.arange(len(idx)), idx]).sum())


def sft_example_loss_grad(
    policy: ToyPolicy, example: SftExample, cfg: SftConfig
) -> tuple[float, np.ndarray]:
    spans = _example_spans(example, cfg)
    g = example.context_index
    idx = np.asarray(example.target_tokens, dtype=np.int64)
    w = _span_weights(spans, cfg.lambda_weight)
    lp = policy.log_probs(g)
    loss = float(-(w * lp[np.arange(len(idx)), idx]).sum())
    grad = np.zeros_like(policy.logits)
    with np.errstate(under="ignore"):
        probs = np.exp(lp)
    row = w[:, None] * probs
    row[np.arange(len(idx)), idx] -= w
    grad[g] = row
    return loss, grad


def sft_batch_loss_grad(
    policy: ToyPolicy, dataset: Sequence[SftExample], cfg: SftConfig
) -> tuple[float, np.ndarray]:
    """Summed loss and gradient over the dataset (vectorized over contexts).

    Requires a uniform span layout across examples, which the toy task
    guarantees; ``sft_example_loss_grad`` stays fully general.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    spans = _example_spans(dataset[0], cfg)
    seq_len = policy.seq_len
    if len(spans) != seq_len:
        raise ValueError(f"span layout length {len(spans)} != policy seq_len {seq_len}")
    counts = np.zeros_like(policy.logits)
    reps = np.zeros(policy.n_contexts, dtype=np.float64)
    rows = np.arange(seq_len)
    for ex in dataset:
        if _example_spans(ex, cfg) != spans:
            raise ValueError("batch training requires a uniform span layout")
        counts[ex.context_index, rows, np.asarray(ex.target_tokens, dtype=np.int64)] += 1.0
        reps[ex.context_index] += 1.0

    w = _span_weights(spans, cfg.lambda_weight)
    with np.errstate(under="ignore"):
        shifted = policy.logits - policy.logits.max(axis=-1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        lp = shifted - logz
        loss = float(-(w[None, :, None] * counts * lp).sum())
        grad = w[None, :, None] * (reps[:, None, None] * np.exp(lp) - counts)
    return loss, grad


def train_sft(
    policy: ToyPolicy, dataset: Sequence[SftExample], cfg: SftConfig
) -> tuple[ToyPolicy, list[float]]:
    """Full-batch gradient descent on the summed SFT loss.

    Returns the trained policy and the loss measured before each step;
    deterministic (the objective has no sampling).
    """
    trained = policy.copy()
    curve = []
    for _ in range(cfg.steps):
        loss, grad = sft_batch_loss_grad(trained, dataset, cfg)
        curve.append(loss)
        trained.logits -= cfg.learning_rate * grad
    return trained, curve


@dataclass(frozen=True)
class TpoStepMetrics:
    step: int
    mean_loss: float
    greedy_displacement: float
    n_pairs: int
    n_invalid_greedy: int

    def to_record(self) -> dict:
        return {
            "kind": "tpo_step",
            "step": self.step,
            "loss": self.mean_loss,
            "greedy_displacement": self.greedy_displacement,
            "n_pairs": self.n_pairs,
            "n_invalid_greedy": self.n_invalid_greedy,
        }


def evaluate_greedy_displacement(
    policy: ToyPolicy,
    contexts: Sequence[ToyContext],
    tokenizer: Optional[TrajTokenizer] = None,
    spans: Optional[tuple[SpanTag, ...]] = None,
    all_waypoints: bool = False,
) -> tuple[float, int]:
    """Mean displacement of greedy decodes over decodable contexts.

    Returns (mean, n_invalid); the mean is inf when nothing decodes.
    """
    tokenizer = tokenizer or TrajTokenizer()
    positions = traj_positions(spans or default_span_layout())
    values = []
    invalid = 0
    for ctx in contexts:
        tokens = policy.greedy_tokens(ctx.index)
        try:
            traj = tokenizer.decode_trajectory([int(tokens[i]) for i in positions])
        except TokenDecodeError:
            invalid += 1
            continue
        values.append(score_displacement(traj, ctx.gt_trajectory, all_waypoints))
    mean = math.fsum(values) / len(values) if values else math.inf
    return mean, invalid


def train_tpo(
    policy: ToyPolicy,
    ref: ToyPolicy,
    contexts: Sequence[ToyContext],
    cfg: TpoConfig,
    tokenizer: Optional[TrajTokenizer] = None,
    spans: Optional[tuple[SpanTag, ...]] = None,
) -> tuple[ToyPolicy, list[TpoStepMetrics]]:
    """Preference tuning against a frozen reference.

    Each step samples K responses per context from ``ref`` (per-context
    generators derived from (seed, step, context index), so fanning out
    across contexts cannot change results), builds min/max displacement
    pairs and descends the mean pair loss. A step with no usable pair
    logs a degenerate-run warning and applies no update.
    """
    if ref.logits.shape != policy.logits.shape:
        raise ValueError("reference and policy tables must have identical shape")
    tokenizer = tokenizer or TrajTokenizer()
    spans = spans or default_span_layout()
    trained = policy.copy()
    metrics = []
    for step in range(cfg.steps):
        grad_total = np.zeros_like(trained.logits)
        loss_total = 0.0
        n_pairs = 0
        for ctx in contexts:
            rng = np.random.default_rng([cfg.seed, step, ctx.index])
            responses = sample_responses(ref, ctx, cfg, rng=rng, tokenizer=tokenizer, spans=spans)
            pair = build_pair(responses, context_id=ctx.index)
            if pair is None:
                continue
            loss, row = _dpo_pair_row_grad(trained, pair, cfg.beta)
            grad_total[ctx.index] += row
            loss_total += loss
            n_pairs += 1
        if n_pairs == 0:
            logger.warning("tpo step %d: every pair was skipped (degenerate sampling)", step)
            mean_loss = math.nan
        else:
            trained.logits -= cfg.learning_rate * grad_total / n_pairs
            mean_loss = loss_total / n_pairs
        disp, invalid = evaluate_greedy_displacement(
            trained, contexts, tokenizer, spans, cfg.score_all_waypoints
        )
        metrics.append(TpoStepMetrics(step, mean_loss, disp, n_pairs, invalid))
    return trained, metrics


def grad_check(
    loss_and_grad: Callable[[ToyPolicy], tuple[float, np.ndarray]],
    policy: ToyPolicy,
    epsilon: float = 1e-5,
    n_params: int = 120,
    seed: int = 0,
) -> float:
    """Max hybrid-relative error between analytic and central-difference gradients.

    Probes ``n_params`` randomly chosen table entries. The error for one
    entry is |a - n| / (|a| + |n| + 1e-3); the additive floor keeps
    round-off noise on near-zero components from masquerading as error.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    _, grad = loss_and_grad(policy)
    flat = policy.logits.reshape(-1)
    rng = np.random.default_rng(seed)
    picks = rng.choice(flat.size, size=min(n_params, flat.size), replace=False)
    worst = 0.0
    for i in picks:
        orig = flat[i]
        flat[i] = orig + epsilon
        hi, _ = loss_and_grad(policy)
        flat[i] = orig - epsilon
        lo, _ = loss_and_grad(policy)
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * epsilon)
        analytic = grad.reshape(-1)[i]
        err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-3)
        worst = max(worst, err)
    return worst


def save_policy(
    policy: ToyPolicy,
    path: str | Path,
    tokenizer: Optional[TrajTokenizer] = None,
    spans: Optional[tuple[SpanTag, ...]] = None,
) -> None:
    """Write a policy as JSONL: one header record, then one logit row per context.

    Floats render as shortest round-trip decimals, so save/load is exact.
    """
    tokenizer = tokenizer or TrajTokenizer()
    spans = spans or default_span_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": "toy_policy",
        "n_contexts": policy.n_contexts,
        "seq_len": policy.seq_len,
        "vocab_size": policy.vocab_size,
        "tokenizer": {
            "bin_width": tokenizer.bin_width,
            "x_range": list(tokenizer.x_range),
            "y_range": list(tokenizer.y_range),
        },
        "spans": [s.value for s in spans],
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for g in range(policy.n_contexts):
            rec = {"kind": "logits", "context": g, "data": policy.logits[g].tolist()}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_policy(path: str | Path) -> tuple[ToyPolicy, TrajTokenizer, tuple[SpanTag, ...]]:
    """Inverse of save_policy; raises ValueError on a malformed file."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("kind") != "toy_policy":
        raise ValueError(f"{path} is not a toy policy file")
    header = lines[0]
    tokenizer = TrajTokenizer(
        bin_width=header["tokenizer"]["bin_width"],
        x_range=tuple(header["tokenizer"]["x_range"]),
        y_range=tuple(header["tokenizer"]["y_range"]),
    )
    spans = tuple(SpanTag(s) for s in header["spans"])
    logits = np.zeros((header["n_contexts"], header["seq_len"], header["vocab_size"]))
    seen = set()
    for rec in lines[1:]:
        if rec.get("kind") != "logits":
            raise ValueError(f"unexpected record kind {rec.get('kind')!r} in policy file")
        g = int(rec["context"])
        logits[g] = np.asarray(rec["data"], dtype=np.float64)
        seen.add(g)
    if seen != set(range(header["n_contexts"])):
        raise ValueError("policy file is missing logit rows")
    return ToyPolicy(header["n_contexts"], header["seq_len"], header["vocab_size"], logits), tokenizer, spans


def make_toy_task(
    n_contexts: int,
    seed: int,
    reps: int = 4,
    noise_bins: int = 2,
    tokenizer: Optional[TrajTokenizer] = None,
    spans: Optional[tuple[SpanTag, ...]] = None,
) -> tuple[list[ToyContext], list[SftExample]]:
    """The bundled synthetic preference task (not drawn from any corpus).

    Contexts are (start speed, turn rate, acceleration) triples with
    kinematic ground-truth trajectories. SFT targets blur each trajectory
    token by uniform bin noise in [-noise_bins, +noise_bins], so pure
    cross-entropy converges to a geometrically diffuse distribution and
    leaves headroom that displacement-ranked preference pairs can close.
    """
    tokenizer = tokenizer or TrajTokenizer()
    spans = spans or default_span_layout()
    positions = traj_positions(spans)
    if len(positions) != 12:
        raise ValueError("the toy task needs exactly 12 trajectory positions in the span layout")
    rng = np.random.default_rng(seed)
    contexts = []
    examples = []
    for i in range(n_contexts):
        v0 = float(rng.uniform(2.0, 10.0))
        omega = float(rng.uniform(-6.0, 6.0))
        accel = float(rng.uniform(-1.0, 1.0))
        gt = Trajectory(tuple(rollout_kinematic(v0, accel, omega)))
        contexts.append(ToyContext(i, gt, v0, omega, accel))

        # Deterministic side-channel tokens: coarse speed/turn buckets for
        # the reason span, lateral/longitudinal buckets for the meta span.
        reason_pool = [int(v0), int(omega) + 8]
        meta_pool = [int(omega > 2.0) + 2 * int(omega < -2.0), 3 + int(accel > 0.25) + 2 * int(accel < -0.25)]
        traj_tokens = tokenizer.encode_trajectory(gt)

        clean = []
        cursor = {SpanTag.REASON: 0, SpanTag.META: 0, SpanTag.TRAJ: 0}
        pools = {SpanTag.REASON: reason_pool, SpanTag.META: meta_pool, SpanTag.TRAJ: list(traj_tokens)}
        for tag in spans:
            if tag is SpanTag.UNTRAINED:
                clean.append(tokenizer.eos_id)
                continue
            pool = pools[tag]
            clean.append(pool[cursor[tag] % len(pool)])
            cursor[tag] += 1

        for _ in range(reps):
            noisy = list(clean)
            for ti, pos in enumerate(positions):
                offset = int(rng.integers(-noise_bins, noise_bins + 1))
                if ti % 2 == 0:
                    lo, hi = 0, tokenizer.n_x_bins - 1
                else:
                    lo, hi = tokenizer.n_x_bins, tokenizer.n_x_bins + tokenizer.n_y_bins - 1
                noisy[pos] = min(max(traj_tokens[ti] + offset, lo), hi)
            examples.append(SftExample(i, tuple(noisy), spans))
    return contexts, examples
