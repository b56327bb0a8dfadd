"""Dataset ingestion, temporal splitting, batching, and the synthetic
corpus generator with a planted feedback-transition rule.

Input TSV schema: `user_id<TAB>item_id<TAB>rating_or_feedback<TAB>timestamp`,
UTF-8, optional header, `#` comment lines allowed. Ratings map to
feedback as rating > 3 -> 1 and rating < 2 -> 0; rows rated 2 or 3 are
discarded. Item ids are densified to 1..m (0 is the reserved padding
id); user ids to 0..U-1.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400

# Philox stream purposes: one root seed fans out into labeled streams so
# corpus bytes, weights, shuffles and eval sampling never interact.
STREAM_WEIGHTS = 1
STREAM_CORPUS = 2
STREAM_SHUFFLE = 3
STREAM_EVAL = 4


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Named Philox substream: key = (seed, purpose * 2^32 + index)."""
    return np.random.Generator(np.random.Philox(key=[seed, (purpose << 32) + index]))


@dataclass
class Interaction:
    user_id: int
    item_id: int
    timestamp: int
    feedback: int  # 1 positive / no-skip, 0 negative / skip


@dataclass
class FeedbackSequence:
    """One user's chronological history."""

    user_id: int
    items: list
    feedback: list
    timestamps: list

    def __post_init__(self):
        if len(self.items) != len(self.feedback):
            raise DataError("items and feedback lengths differ")
        if any(b < a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise DataError("timestamps must be non-decreasing")


@dataclass
class Example:
    """(history prefix, target item, target label) triple."""

    user_id: int
    items: np.ndarray
    feedback: np.ndarray
    target_item: int
    target_label: int
    target_time: int


@dataclass
class SplitDataset:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    item_count: int = 0
    user_count: int = 0
    item_digest: bytes = b""
    dropped_users: int = 0


@dataclass
class Batch:
    """Padded example stack; pad_mask is 1 exactly at padded suffix slots."""

    item_ids: np.ndarray      # (B, t) int64
    feedback: np.ndarray      # (B, t) int8
    pad_mask: np.ndarray      # (B, t) uint8
    target_ids: np.ndarray    # (B,) int64
    target_labels: np.ndarray  # (B,) int8
    user_ids: np.ndarray      # (B,) int64
    lengths: np.ndarray       # (B,) true history lengths

    @property
    def valid(self) -> np.ndarray:
        return (1 - self.pad_mask).astype(np.uint8)

    @property
    def size(self) -> int:
        return self.item_ids.shape[0]


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _map_rating(value: float) -> int | None:
    if value > 3:
        return 1
    if value < 2:
        return 0
    return None  # 2 and 3 are undefined by the thresholds; discard


def load_interactions(path, fmt: str = "auto") -> list[Interaction]:
    """Parse a TSV into interactions; ids come back densified.

    fmt: "rating" maps the third column through the >3 / <2 rule,
    "feedback" expects it to be binary already, "auto" sniffs: a file
    whose third column only contains 0/1 is treated as feedback.
    """
    if fmt not in ("auto", "rating", "feedback"):
        raise ConfigError(f"unknown dataset format {fmt!r}")
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split("\t")
            if lineno == 1 and parts and not _is_number(parts[0]):
                continue  # header
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
            try:
                user = int(parts[0])
                item = int(parts[1])
                value = float(parts[2])
                ts = int(parts[3])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from exc
            if user < 0 or item < 0:
                raise DataError(f"{path}:{lineno}: negative id")
            rows.append((user, item, value, ts))

    if fmt == "auto":
        fmt = "feedback" if all(v in (0.0, 1.0) for _, _, v, _ in rows) else "rating"

    interactions = []
    for user, item, value, ts in rows:
        if fmt == "feedback":
            if value not in (0.0, 1.0):
                raise DataError(f"feedback value {value} is not binary")
            fb = int(value)
        else:
            fb = _map_rating(value)
            if fb is None:
                continue
        interactions.append(Interaction(user, item, ts, fb))
    return densify_ids(interactions)


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def densify_ids(interactions: list[Interaction]) -> list[Interaction]:
    """Remap user ids to 0..U-1 and item ids to 1..m by sorted original id.

    Item id 0 is reserved for padding and never maps to a real item.
    """
    users = sorted({i.user_id for i in interactions})
    items = sorted({i.item_id for i in interactions})
    user_map = {u: n for n, u in enumerate(users)}
    item_map = {it: n + 1 for n, it in enumerate(items)}
    return [Interaction(user_map[i.user_id], item_map[i.item_id], i.timestamp,
                        i.feedback) for i in interactions]


def item_space_digest(interactions) -> bytes:
    """8-byte digest of the (densified) item id space, for checkpoints."""
    items = sorted({i.item_id for i in interactions})
    payload = ("%d:" % len(items) + ",".join(map(str, items))).encode()
    return hashlib.sha256(payload).digest()[:8]


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

SPLIT_MODES = ("last-two-days", "last-day-noon")


def temporal_split(interactions: list[Interaction], mode: str = "last-two-days",
                   last_target_only: bool = False) -> SplitDataset:
    """Partition by calendar time and build next-item examples.

    last-two-days: final day -> test, the day before -> validation.
    last-day-noon: final day before 12:00 UTC -> validation, after -> test.

    Every event with at least one earlier event becomes one example whose
    history is everything strictly before it (most recent last). With
    `last_target_only`, only each user's final train-period event yields
    a training example.
    """
    if mode not in SPLIT_MODES:
        raise ConfigError(f"split mode must be one of {SPLIT_MODES}, got {mode!r}")
    if not interactions:
        raise DataError("empty interaction set")
    stamps = {i.timestamp for i in interactions}
    if len(stamps) == 1:
        raise DataError("degenerate split: all interactions share one timestamp")

    last_day = max(i.timestamp for i in interactions) // SECONDS_PER_DAY

    def tag(ts: int) -> str:
        day = ts // SECONDS_PER_DAY
        if mode == "last-two-days":
            if day == last_day:
                return "test"
            if day == last_day - 1:
                return "validation"
            return "train"
        if day < last_day:
            return "train"
        noon = last_day * SECONDS_PER_DAY + 12 * 3600
        return "validation" if ts < noon else "test"

    by_user: dict[int, list[Interaction]] = {}
    for inter in interactions:
        by_user.setdefault(inter.user_id, []).append(inter)

    ds = SplitDataset(item_count=max(i.item_id for i in interactions),
                      user_count=len(by_user),
                      item_digest=item_space_digest(interactions))
    for user_id in sorted(by_user):
        events = sorted(by_user[user_id], key=lambda i: i.timestamp)
        if len(events) < 2:
            ds.dropped_users += 1
            continue
        items = np.array([e.item_id for e in events], dtype=np.int64)
        labels = np.array([e.feedback for e in events], dtype=np.int8)
        tags = [tag(e.timestamp) for e in events]
        train_targets = [idx for idx in range(1, len(events)) if tags[idx] == "train"]
        for idx in range(1, len(events)):
            split = tags[idx]
            if split == "train" and last_target_only and idx != train_targets[-1]:
                continue
            example = Example(user_id=user_id,
                              items=items[:idx].copy(),
                              feedback=labels[:idx].copy(),
                              target_item=int(items[idx]),
                              target_label=int(labels[idx]),
                              target_time=events[idx].timestamp)
            getattr(ds, split).append(example)
    if ds.dropped_users:
        log.warning("dropped %d users with fewer than 2 interactions", ds.dropped_users)
    if not ds.train:
        raise DataError("degenerate split: no training examples before the split days")
    return ds


# ---------------------------------------------------------------------------
# padding / batching
# ---------------------------------------------------------------------------

def pad_truncate(items: np.ndarray, feedback: np.ndarray, max_len: int):
    """Keep the most recent `max_len` events; zero-pad the suffix.

    Returns (ids, feedback, pad_mask) each of length max_len; pad_mask is
    1 exactly at the padded tail.
    """
    if max_len < 1:
        raise ConfigError("max_len must be >= 1")
    items = np.asarray(items)[-max_len:]
    feedback = np.asarray(feedback)[-max_len:]
    n = len(items)
    ids = np.zeros(max_len, dtype=np.int64)
    fb = np.zeros(max_len, dtype=np.int8)
    pad = np.ones(max_len, dtype=np.uint8)
    ids[:n] = items
    fb[:n] = feedback
    pad[:n] = 0
    return ids, fb, pad


def make_batch(examples: list[Example], max_len: int) -> Batch:
    rows = [pad_truncate(e.items, e.feedback, max_len) for e in examples]
    return Batch(
        item_ids=np.stack([r[0] for r in rows]),
        feedback=np.stack([r[1] for r in rows]),
        pad_mask=np.stack([r[2] for r in rows]),
        target_ids=np.array([e.target_item for e in examples], dtype=np.int64),
        target_labels=np.array([e.target_label for e in examples], dtype=np.int8),
        user_ids=np.array([e.user_id for e in examples], dtype=np.int64),
        lengths=np.array([min(len(e.items), max_len) for e in examples],
                         dtype=np.int64),
    )


def batch_iter(examples: list[Example], batch_size: int, max_len: int,
               rng: np.random.Generator | None = None):
    """Batches in order, or seeded-shuffled when an rng is given;
    the final partial batch is always emitted."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        yield make_batch(chunk, max_len)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    """Planted-rule corpus parameters.

    Feedback follows a first-order Markov rule on the previous event's
    label (`p_neg_given_neg`, `p_neg_given_pos`), overridden by topic
    fatigue: after `fatigue_window` consecutive positive events on one
    topic, the next event on that same topic turns negative with
    probability `fatigue_p`. The override only ever fires after a
    positive event, so the empirical neg->neg transition stays at
    `p_neg_given_neg`.
    """

    seed: int = 0
    users: int = 2000
    items: int = 400
    topics: int = 8
    days: int = 10
    events_min: int = 18
    events_max: int = 26
    p_neg_given_neg: float = 0.9
    p_neg_given_pos: float = 0.25
    topic_stay: float = 0.85
    fatigue_window: int = 3
    fatigue_p: float = 0.9

    def validate(self) -> "SynthSpec":
        for name in ("p_neg_given_neg", "p_neg_given_pos", "topic_stay", "fatigue_p"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {value}")
        if self.users < 0:
            raise ConfigError("users must be >= 0")
        if self.users and self.items < self.topics:
            raise ConfigError("need at least one item per topic")
        if self.events_min < 2 or self.events_max < self.events_min:
            raise ConfigError("need events_max >= events_min >= 2")
        if self.days < 3:
            raise ConfigError("need >= 3 days for a temporal split")
        if self.fatigue_window < 1:
            raise ConfigError("fatigue_window must be >= 1")
        return self

    @property
    def stationary_negative(self) -> float:
        # pi_n solving pi = p_nn * pi + p_np * (1 - pi)
        denom = 1.0 - self.p_neg_given_neg + self.p_neg_given_pos
        return self.p_neg_given_pos / denom if denom > 0 else 0.5


BASE_EPOCH = 1_600_000_000  # corpus timestamps start here (UTC midnight-aligned)


def synth_generate(spec: SynthSpec) -> list[Interaction]:
    """Seeded corpus; one Philox substream per user."""
    spec.validate()
    base_day = (BASE_EPOCH // SECONDS_PER_DAY) * SECONDS_PER_DAY
    per_topic = spec.items // spec.topics
    out: list[Interaction] = []
    for user in range(spec.users):
        rng = stream(spec.seed, STREAM_CORPUS, user)
        count = int(rng.integers(spec.events_min, spec.events_max + 1))
        seconds = np.sort(rng.choice(spec.days * SECONDS_PER_DAY, size=count,
                                     replace=False))
        topic = int(rng.integers(spec.topics))
        prev_label = 1 if rng.random() >= spec.stationary_negative else 0
        run_topic, run_len = -1, 0
        for ts_offset in seconds:
            if rng.random() >= spec.topic_stay:
                hop = int(rng.integers(spec.topics - 1)) if spec.topics > 1 else 0
                topic = hop if hop < topic else hop + 1
            slot = int(rng.integers(per_topic))
            item = topic * per_topic + slot + 1
            p_neg = spec.p_neg_given_neg if prev_label == 0 else spec.p_neg_given_pos
            label = 0 if rng.random() < p_neg else 1
            if run_topic == topic and run_len >= spec.fatigue_window:
                label = 0 if rng.random() < spec.fatigue_p else 1
            if label == 1:
                run_len = run_len + 1 if run_topic == topic else 1
                run_topic = topic
            else:
                run_len = 0
                run_topic = -1
            out.append(Interaction(user, item, int(base_day + ts_offset), label))
            prev_label = label
    return densify_ids(out)


def write_tsv(interactions: list[Interaction], path, spec: SynthSpec | None = None):
    """Serialize to the input TSV schema; a generator spec is echoed as
    comment lines so corpora are self-describing."""
    with open(path, "w", encoding="utf-8") as fh:
        if spec is not None:
            for key, value in sorted(vars(spec).items()):
                fh.write(f"# {key} {value}\n")
        fh.write("user_id\titem_id\tfeedback\ttimestamp\n")
        for i in interactions:
            fh.write(f"{i.user_id}\t{i.item_id}\t{i.feedback}\t{i.timestamp}\n")
