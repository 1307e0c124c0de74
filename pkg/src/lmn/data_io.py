"""File formats and dataset assembly: SubRip subtitles, plaintext subtitles,
the LMNF feature-tensor and LMNP parameter containers, the QA JSONL schema,
frame subsampling across clips, and a planted-signal synthetic generator used
by the verification harness.

Feature payloads are stored as 32-bit little-endian floats and promoted to
64-bit in memory; parameters are stored at full 64-bit width.
"""

from __future__ import annotations

import json
import os
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from .answering import NUM_CHOICES, QAItem
from .frame_encoder import ClipFeatures
from .word_memory import StaticWordMemory, embed_sentence, unit_normalize

__all__ = [
    "DataFormatError",
    "atomic_write_bytes",
    "SubtitleEntry",
    "SubtitleFile",
    "parse_srt",
    "srt_dumps",
    "load_plaintext_subtitles",
    "load_features",
    "save_features",
    "load_params",
    "save_params",
    "load_qa_jsonl",
    "save_qa_jsonl",
    "subsample_indices",
    "subsample_frames",
    "Example",
    "SyntheticSpec",
    "SyntheticDataset",
    "generate_synthetic",
    "write_synthetic",
]


class DataFormatError(ValueError):
    """Raised for malformed input files."""


# --- subtitles --------------------------------------------------------------

@dataclass(frozen=True)
class SubtitleEntry:
    start_ms: int
    end_ms: int
    text: str


@dataclass(frozen=True)
class SubtitleFile:
    entries: tuple[SubtitleEntry, ...]

    def texts(self) -> list[str]:
        return [e.text for e in self.entries]


_TIMESTAMP_RE = re.compile(
    r"^\s*(\d{2,}):(\d{2}):(\d{2}),(\d{3})\s*-->\s*(\d{2,}):(\d{2}):(\d{2}),(\d{3})\s*$"
)
_TAG_RE = re.compile(r"<[^>]*>")


def _parse_timestamp_line(line: str) -> tuple[int, int] | None:
    m = _TIMESTAMP_RE.match(line)
    if m is None:
        return None
    h1, m1, s1, ms1, h2, m2, s2, ms2 = (int(g) for g in m.groups())
    start = ((h1 * 60 + m1) * 60 + s1) * 1000 + ms1
    end = ((h2 * 60 + m2) * 60 + s2) * 1000 + ms2
    return start, end


def parse_srt(path) -> SubtitleFile:
    """Parse a SubRip file: blank-line-separated blocks of index line,
    timestamp line, and one or more text lines (joined with single spaces,
    angle-bracket markup removed). Accepts CRLF or LF and a leading BOM."""
    with open(path, "r", encoding="utf-8-sig") as fh:
        lines = fh.read().splitlines()

    blocks: list[list[str]] = []
    current: list[str] = []
    for line in lines:
        if line.strip() == "":
            if current:
                blocks.append(current)
                current = []
        else:
            current.append(line)
    if current:
        blocks.append(current)
    if not blocks:
        raise DataFormatError(f"{path}: empty subtitle file")

    entries = []
    for block_no, block in enumerate(blocks, 1):
        span = _parse_timestamp_line(block[0])
        if span is not None:
            text_lines = block[1:]
        else:
            # first line is the (ignored) index; the timestamp must follow
            if len(block) < 2:
                raise DataFormatError(
                    f"block {block_no}: malformed timestamp line: {block[0]!r}"
                )
            span = _parse_timestamp_line(block[1])
            if span is None:
                raise DataFormatError(
                    f"block {block_no}: malformed timestamp line: {block[1]!r}"
                )
            text_lines = block[2:]
        start, end = span
        if start > end:
            raise DataFormatError(f"block {block_no}: start time after end time")
        pieces = [_TAG_RE.sub("", line).strip() for line in text_lines]
        text = " ".join(p for p in pieces if p)
        entries.append(SubtitleEntry(start, end, text))
    return SubtitleFile(tuple(entries))


def _format_ms(ms: int) -> str:
    s, milli = divmod(ms, 1000)
    m, sec = divmod(s, 60)
    h, minute = divmod(m, 60)
    return f"{h:02d}:{minute:02d}:{sec:02d},{milli:03d}"


def srt_dumps(sub: SubtitleFile) -> str:
    """Serialize entries back to SubRip form (one text line per entry)."""
    blocks = [
        f"{i}\n{_format_ms(e.start_ms)} --> {_format_ms(e.end_ms)}\n{e.text}\n"
        for i, e in enumerate(sub.entries, 1)
    ]
    return "\n".join(blocks)


def load_plaintext_subtitles(path) -> SubtitleFile:
    """One sentence per nonempty line; timestamps are zero."""
    with open(path, "r", encoding="utf-8-sig") as fh:
        sentences = [line.strip() for line in fh.read().splitlines()]
    entries = tuple(SubtitleEntry(0, 0, s) for s in sentences if s)
    if not entries:
        raise DataFormatError(f"{path}: empty subtitle file")
    return SubtitleFile(entries)


# --- binary containers ------------------------------------------------------

_FEATURE_MAGIC = b"LMNF"
_PARAMS_MAGIC = b"LMNP"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")  # magic, version, then four u32 dims
_PARAMS_HEADER = struct.Struct("<4sIII")  # magic, version, d, C
_MAX_PAYLOAD_BYTES = 1 << 62


def atomic_write_bytes(path, data: bytes) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_features(clip: ClipFeatures, path) -> None:
    t, c, h, w = clip.tensor.shape
    header = _HEADER.pack(_FEATURE_MAGIC, _VERSION, t, c, h, w)
    payload = np.ascontiguousarray(clip.tensor, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def load_features(path) -> ClipFeatures:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise DataFormatError(
            f"{path}: truncated header (expected {_HEADER.size} bytes, got {len(data)})"
        )
    magic, version, t, c, h, w = _HEADER.unpack_from(data)
    if magic != _FEATURE_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if min(t, c, h, w) < 1:
        raise DataFormatError(f"{path}: zero-sized dimension in header {(t, c, h, w)}")
    count = t * c * h * w
    if count * 4 > _MAX_PAYLOAD_BYTES:
        raise DataFormatError(f"{path}: dimension overflow {(t, c, h, w)}")
    expected = _HEADER.size + count * 4
    if len(data) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes, got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size, count=count)
    return ClipFeatures(values.astype(np.float64).reshape(t, c, h, w))


def save_params(weights: np.ndarray, path) -> None:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2:
        raise ValueError(f"parameters must be 2-D (d,C), got {weights.shape}")
    d, c = weights.shape
    header = _PARAMS_HEADER.pack(_PARAMS_MAGIC, _VERSION, d, c)
    atomic_write_bytes(path, header + np.ascontiguousarray(weights, dtype="<f8").tobytes())


def load_params(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _PARAMS_HEADER.size:
        raise DataFormatError(
            f"{path}: truncated header (expected {_PARAMS_HEADER.size} bytes, got {len(data)})"
        )
    magic, version, d, c = _PARAMS_HEADER.unpack_from(data)
    if magic != _PARAMS_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if min(d, c) < 1:
        raise DataFormatError(f"{path}: zero-sized dimension in header {(d, c)}")
    expected = _PARAMS_HEADER.size + d * c * 8
    if len(data) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f8", offset=_PARAMS_HEADER.size, count=d * c)
    return values.astype(np.float64).reshape(d, c)


# --- QA dataset -------------------------------------------------------------

_REQUIRED_QA_FIELDS = ("qid", "question", "answers", "movie_id", "clip_ids")


def load_qa_jsonl(path) -> list[QAItem]:
    """One JSON object per line; see save_qa_jsonl for the schema. Violations
    are rejected with the offending 1-based line number."""
    items: list[QAItem] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {lineno}: invalid JSON: {exc}") from None
            if not isinstance(obj, dict):
                raise DataFormatError(f"line {lineno}: expected a JSON object")
            for name in _REQUIRED_QA_FIELDS:
                if name not in obj:
                    raise DataFormatError(f"line {lineno}: missing field {name!r}")
            answers = obj["answers"]
            if not isinstance(answers, list) or len(answers) != NUM_CHOICES:
                got = len(answers) if isinstance(answers, list) else type(answers).__name__
                raise DataFormatError(
                    f"line {lineno}: expected {NUM_CHOICES} answers, got {got}"
                )
            clip_ids = obj["clip_ids"]
            if not isinstance(clip_ids, list) or not clip_ids:
                raise DataFormatError(f"line {lineno}: clip_ids must be a nonempty list")
            correct = obj.get("correct_index")
            if correct is not None:
                if not isinstance(correct, int) or not 0 <= correct < NUM_CHOICES:
                    raise DataFormatError(
                        f"line {lineno}: correct_index {correct!r} out of range"
                    )
            items.append(
                QAItem(
                    qid=str(obj["qid"]),
                    question=str(obj["question"]),
                    answers=tuple(str(a) for a in answers),
                    movie_id=str(obj["movie_id"]),
                    clip_ids=tuple(str(c) for c in clip_ids),
                    correct_index=correct,
                )
            )
    return items


def save_qa_jsonl(items, path) -> None:
    rows = []
    for item in items:
        obj = {
            "qid": item.qid,
            "question": item.question,
            "answers": list(item.answers),
            "movie_id": item.movie_id,
            "clip_ids": list(item.clip_ids),
        }
        if item.correct_index is not None:
            obj["correct_index"] = item.correct_index
        rows.append(json.dumps(obj, ensure_ascii=False))
    atomic_write_bytes(path, ("\n".join(rows) + "\n").encode("utf-8"))


# --- frame subsampling ------------------------------------------------------

def subsample_indices(total: int, target: int) -> list[int]:
    """Equally spaced frame indices: floor(k*total/target) for k < target."""
    if total < 1 or target < 1:
        raise ValueError(f"need total >= 1 and target >= 1, got {total}, {target}")
    return [(k * total) // target for k in range(target)]


def subsample_frames(clips, target: int) -> ClipFeatures:
    """Concatenate the clips' frames in order and pick `target` equally spaced
    frames; short inputs repeat frames as the spacing rule dictates."""
    clips = list(clips)
    if not clips:
        raise ValueError("need at least one clip")
    shape = clips[0].tensor.shape[1:]
    for clip in clips[1:]:
        if clip.tensor.shape[1:] != shape:
            raise ValueError(
                f"clip shape mismatch: {clip.tensor.shape[1:]} vs {shape}"
            )
    stacked = np.concatenate([c.tensor for c in clips], axis=0)
    idx = subsample_indices(stacked.shape[0], target)
    return ClipFeatures(stacked[idx])


# --- dataset assembly -------------------------------------------------------

@dataclass(frozen=True)
class Example:
    """One resolved training/evaluation example."""

    item: QAItem
    features: ClipFeatures
    subtitles: tuple[str, ...] | None  # None selects video-only mode


# --- synthetic planted-signal data ------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale generator settings; every output is a pure function of the
    spec, including the seed."""

    vocab_size: int = 50
    dim: int = 16
    channels: int = 24
    frames: int = 4
    height: int = 3
    width: int = 3
    n_subtitles: int = 5
    n_train: int = 500
    n_eval: int = 200
    noise_sigma: float = 0.05
    seed: int = 1

    def __post_init__(self):
        for name in ("vocab_size", "dim", "channels", "frames", "height", "width",
                     "n_subtitles", "n_train", "n_eval"):
            if getattr(self, name) < 1:
                raise ValueError(f"SyntheticSpec.{name} must be positive")
        if self.noise_sigma < 0:
            raise ValueError("SyntheticSpec.noise_sigma must be >= 0")
        # every item draws five disjoint answer pairs plus a question pair
        if self.vocab_size < 2 * NUM_CHOICES + 2:
            raise ValueError("SyntheticSpec.vocab_size too small for disjoint word sets")


@dataclass
class SyntheticDataset:
    word_memory: StaticWordMemory
    train_items: list[QAItem]
    eval_items: list[QAItem]
    features: dict[str, ClipFeatures] = field(default_factory=dict)
    subtitles: dict[str, list[str]] = field(default_factory=dict)
    hidden_map: np.ndarray | None = None

    def examples(self, split: str) -> list[Example]:
        items = {"train": self.train_items, "eval": self.eval_items}[split]
        return [
            Example(
                item,
                self.features[item.clip_ids[0]],
                tuple(self.subtitles[item.movie_id]),
            )
            for item in items
        ]


def _random_words(rng: np.random.Generator, count: int) -> list[str]:
    words: list[str] = []
    seen: set[str] = set()
    letters = "abcdefghijklmnopqrstuvwxyz"
    while len(words) < count:
        word = "".join(letters[i] for i in rng.integers(0, 26, size=6))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _orthonormal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def _hidden_map(rng: np.random.Generator, channels: int, dim: int) -> np.ndarray:
    """Full-rank (C, d) map with singular values in [1, 3]."""
    u = _orthonormal(rng, channels)[:, :dim]
    v = _orthonormal(rng, dim)
    singulars = np.linspace(1.0, 3.0, dim)
    return (u * singulars) @ v.T


def _make_item(
    rng: np.random.Generator,
    spec: SyntheticSpec,
    mem: StaticWordMemory,
    hidden: np.ndarray,
    qid: str,
    correct: int,
) -> tuple[QAItem, ClipFeatures, list[str]]:
    picked = rng.choice(spec.vocab_size, size=2 * NUM_CHOICES + 2, replace=False)
    answer_words = [
        (mem.vocab[picked[2 * h]], mem.vocab[picked[2 * h + 1]]) for h in range(NUM_CHOICES)
    ]
    question = f"{mem.vocab[picked[-2]]} {mem.vocab[picked[-1]]}"
    answers = tuple(f"{a} {b}" for a, b in answer_words)
    target = embed_sentence(mem, answers[correct], normalize=True).vector

    regions_total = spec.frames * spec.height * spec.width
    planted = set(rng.choice(regions_total, size=regions_total // 2, replace=False).tolist())
    region_vecs = np.empty((regions_total, spec.channels))
    for r in range(regions_total):
        direction = target if r in planted else unit_normalize(rng.normal(size=spec.dim))
        region_vecs[r] = hidden @ direction + spec.noise_sigma * rng.normal(size=spec.channels)
    tensor = (
        region_vecs.reshape(spec.frames, spec.height, spec.width, spec.channels)
        .transpose(0, 3, 1, 2)
    )
    # round-trip through the on-disk width so in-memory and loaded data agree
    features = ClipFeatures(tensor.astype(np.float32).astype(np.float64))

    item_words = {mem.vocab[k] for k in picked}
    remaining = [w for w in mem.vocab if w not in item_words]
    planted_pos = int(rng.integers(0, spec.n_subtitles))
    sentences = []
    for n in range(spec.n_subtitles):
        if n == planted_pos:
            # the one relevant subtitle mentions both the correct answer's
            # words and the question's words, like dialogue that answers it;
            # answer words dominate the mean embedding 3:2
            sentences.append(f"{answers[correct]} {answers[correct]} {answers[correct]} {question} {question}")
        else:
            pair = rng.choice(len(remaining), size=2, replace=False)
            sentences.append(f"{remaining[pair[0]]} {remaining[pair[1]]}")

    item = QAItem(
        qid=qid,
        question=question,
        answers=answers,
        movie_id=qid,
        clip_ids=(f"{qid}_c0",),
        correct_index=correct,
    )
    return item, features, sentences


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Build a dataset whose correct answers are planted into the features.

    Half of each item's regions carry a hidden linear image of the correct
    answer's embedding (plus noise); exactly one subtitle repeats the correct
    answer's two words. A learner exceeds chance only by recovering an
    approximate left inverse of the hidden map.
    """
    rng = np.random.default_rng(spec.seed)
    words = _random_words(rng, spec.vocab_size)
    vectors = rng.normal(size=(spec.vocab_size, spec.dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    mem = StaticWordMemory(words, vectors)
    hidden = _hidden_map(rng, spec.channels, spec.dim)

    data = SyntheticDataset(mem, [], [], hidden_map=hidden)
    labels = {
        "train": rng.integers(0, NUM_CHOICES, size=spec.n_train),
        "eval": rng.integers(0, NUM_CHOICES, size=spec.n_eval),
    }
    for split, out in (("train", data.train_items), ("eval", data.eval_items)):
        for i, label in enumerate(labels[split]):
            qid = f"{split}{i:05d}"
            item, features, sentences = _make_item(rng, spec, mem, hidden, qid, int(label))
            out.append(item)
            data.features[item.clip_ids[0]] = features
            data.subtitles[item.movie_id] = sentences
    return data


def write_synthetic(data: SyntheticDataset, outdir) -> dict[str, str]:
    """Write a synthetic dataset in the standard on-disk layout; returns the
    paths keyed by role."""
    from .word_memory import save_word2vec_text

    outdir = str(outdir)
    feature_dir = os.path.join(outdir, "features")
    subtitle_dir = os.path.join(outdir, "subtitles")
    os.makedirs(feature_dir, exist_ok=True)
    os.makedirs(subtitle_dir, exist_ok=True)

    paths = {
        "embeddings": os.path.join(outdir, "embeddings.txt"),
        "train": os.path.join(outdir, "train.jsonl"),
        "eval": os.path.join(outdir, "eval.jsonl"),
        "features": feature_dir,
        "subtitles": subtitle_dir,
    }
    save_word2vec_text(data.word_memory, paths["embeddings"])
    save_qa_jsonl(data.train_items, paths["train"])
    save_qa_jsonl(data.eval_items, paths["eval"])
    for clip_id in sorted(data.features):
        save_features(data.features[clip_id], os.path.join(feature_dir, clip_id + ".lmnf"))
    for movie_id in sorted(data.subtitles):
        text = "\n".join(data.subtitles[movie_id]) + "\n"
        atomic_write_bytes(os.path.join(subtitle_dir, movie_id + ".txt"), text.encode("utf-8"))
    return paths
