"""Contrastive trainer: hashed n-gram features, linear head, InfoNCE losses.

The encoder is a frozen signed-hash character n-gram featurizer followed by a
trainable linear projection.  Random feature masking with inverted scaling
plays the role of dropout, so encoding the same text twice under independent
masks yields the positive pair of the unsupervised objective.  Everything is
float64 and fully deterministic for a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from syncse.seeding import derive_rng

DEFAULT_FEATURE_DIM = 4096
DEFAULT_PROJ_DIM = 128
NGRAM_SIZES = (3, 4, 5)

CHECKPOINT_MAGIC = b"SYNCSE-PROJ-1\n"


class TrainerError(Exception):
    pass


class NonFiniteLossError(TrainerError):
    def __init__(self, message: str, batch_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index


# ---------------------------------------------------------------------------
# Featurization
# ---------------------------------------------------------------------------


def _hash_gram(gram: str) -> tuple[int, int]:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    sign = 1 if value & 1 else -1
    return (value >> 1), sign


def featurize(text: str, dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """Signed-hash counts of character 3/4/5-grams, L2-normalized.

    Case-insensitive; internal whitespace is collapsed; empty or
    whitespace-only text maps to the zero vector.
    """
    vector = np.zeros(dim, dtype=np.float64)
    normalized = " ".join(text.lower().split())
    if not normalized:
        return vector
    for n in NGRAM_SIZES:
        for i in range(len(normalized) - n + 1):
            bucket, sign = _hash_gram(normalized[i : i + n])
            vector[bucket % dim] += sign
    norm = np.linalg.norm(vector)
    if norm > 0:
        vector /= norm
    return vector


def featurize_all(texts: Sequence[str], dim: int) -> np.ndarray:
    cache: dict[str, np.ndarray] = {}
    rows = []
    for text in texts:
        if text not in cache:
            cache[text] = featurize(text, dim)
        rows.append(cache[text])
    return np.stack(rows) if rows else np.zeros((0, dim))


# ---------------------------------------------------------------------------
# Parameters and encoding
# ---------------------------------------------------------------------------


@dataclass
class ProjectionParams:
    weight: np.ndarray  # (dim_in, dim_out)
    bias: np.ndarray  # (dim_out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise TrainerError("weight must be 2-D and bias 1-D")
        if self.weight.shape[1] != self.bias.shape[0]:
            raise TrainerError("weight/bias output dimensions differ")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise TrainerError("parameters contain non-finite entries")

    @property
    def dim_in(self) -> int:
        return self.weight.shape[0]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "ProjectionParams":
        return ProjectionParams(self.weight.copy(), self.bias.copy())


def init_params(dim_in: int, dim_out: int, rng: np.random.Generator) -> ProjectionParams:
    weight = rng.normal(0.0, 1.0 / np.sqrt(dim_in), size=(dim_in, dim_out))
    bias = np.zeros(dim_out)
    return ProjectionParams(weight, bias)


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.05
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 3
    keep_prob: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    feature_dim: int = DEFAULT_FEATURE_DIM
    proj_dim: int = DEFAULT_PROJ_DIM

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0 < self.keep_prob <= 1:
            raise ValueError("keep_prob must be in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def encode(
    text: str,
    params: ProjectionParams,
    *,
    keep_prob: float = 1.0,
    mask_rng: np.random.Generator | None = None,
) -> np.ndarray:
    """h = W^T (m * f(text) / p) + b; with no masking stream, m = 1 (eval mode)."""
    features = featurize(text, params.dim_in)
    if mask_rng is not None and keep_prob < 1.0:
        mask = mask_rng.random(params.dim_in) < keep_prob
        features = features * mask / keep_prob
    return params.weight.T @ features + params.bias


def encode_batch(texts: Sequence[str], params: ProjectionParams) -> np.ndarray:
    """Eval-mode encodings, one row per text."""
    return featurize_all(texts, params.dim_in) @ params.weight + params.bias


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(a @ b / (na * nb))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _check_matrix(S, name):
    S = np.asarray(S, dtype=np.float64)
    if not np.isfinite(S).all():
        raise NonFiniteLossError(f"{name} contains non-finite entries")
    return S


def _stable_rows(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp with max subtraction; returns (lse, softmax)."""
    row_max = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - row_max)
    sums = shifted.sum(axis=1, keepdims=True)
    lse = (row_max + np.log(sums)).ravel()
    return lse, shifted / sums


def info_nce_unsup(S: np.ndarray, tau: float) -> float:
    """Mean over rows of -log softmax at the diagonal (in-batch negatives)."""
    S = _check_matrix(S, "similarity matrix")
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("S must be a square matrix")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    logits = S / tau
    lse, _ = _stable_rows(logits)
    return float(np.mean(lse - np.diag(logits)))


def info_nce_sup(S_pos: np.ndarray, S_neg: np.ndarray, tau: float) -> float:
    """Eq. with hard negatives: denominator sums over positives and negatives."""
    S_pos = _check_matrix(S_pos, "positive similarity matrix")
    S_neg = _check_matrix(S_neg, "negative similarity matrix")
    if S_pos.shape != S_neg.shape:
        raise ValueError("positive/negative similarity shapes differ")
    if S_pos.ndim != 2 or S_pos.shape[0] != S_pos.shape[1]:
        raise ValueError("similarity matrices must be square")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    logits = np.concatenate([S_pos, S_neg], axis=1) / tau
    lse, _ = _stable_rows(logits)
    return float(np.mean(lse - np.diag(S_pos / tau)))


# ---------------------------------------------------------------------------
# Loss + analytic gradient
# ---------------------------------------------------------------------------


@dataclass
class ParamGrads:
    weight: np.ndarray
    bias: np.ndarray


def _masked_inputs(F: np.ndarray, keep_prob: float, rng: np.random.Generator) -> np.ndarray:
    if keep_prob >= 1.0:
        return F
    mask = rng.random(F.shape) < keep_prob
    return F * mask / keep_prob


def _normalize_rows(Z: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(Z, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise NonFiniteLossError(f"zero-norm {what} embedding", batch_index=int(bad[0]))
    return Z / norms[:, None], norms


def _loss_and_grad_arrays(
    params: ProjectionParams,
    Fa: np.ndarray,
    Fp: np.ndarray,
    Fn: np.ndarray | None,
    config: TrainConfig,
    step: int,
    want_grad: bool,
) -> tuple[float, ParamGrads | None]:
    M = Fa.shape[0]
    tau = config.temperature
    rng = derive_rng(config.seed, "mask", step)
    # Fixed draw order (anchors, positives, negatives) keeps masks stable for
    # a given (seed, step) no matter how the loss is evaluated.
    Ua = _masked_inputs(Fa, config.keep_prob, rng)
    Up = _masked_inputs(Fp, config.keep_prob, rng)
    Un = _masked_inputs(Fn, config.keep_prob, rng) if Fn is not None else None

    W, b = params.weight, params.bias
    Za = Ua @ W + b
    Zp = Up @ W + b
    Zn = Un @ W + b if Un is not None else None

    Ah, na = _normalize_rows(Za, "anchor")
    Ph, npos = _normalize_rows(Zp, "positive")
    S_pos = Ah @ Ph.T
    if Zn is not None:
        Nh, nneg = _normalize_rows(Zn, "hard negative")
        S_neg = Ah @ Nh.T
        logits = np.concatenate([S_pos, S_neg], axis=1) / tau
    else:
        Nh = None
        logits = S_pos / tau

    if not np.isfinite(logits).all():
        raise NonFiniteLossError("non-finite similarity logits")
    lse, softmax = _stable_rows(logits)
    losses = lse - np.diag(S_pos) / tau
    loss = float(np.mean(losses))
    if not np.isfinite(loss):
        raise NonFiniteLossError("non-finite loss value")
    if not want_grad:
        return loss, None

    # d loss / d logits = (softmax - onehot(diagonal)) / M; logits = S / tau.
    G = softmax.copy()
    G[np.arange(M), np.arange(M)] -= 1.0
    G /= M * tau
    G_pos = G[:, :M]
    G_neg = G[:, M:] if Nh is not None else None

    dAh = G_pos @ Ph
    dPh = G_pos.T @ Ah
    if Nh is not None:
        dAh += G_neg @ Nh
        dNh = G_neg.T @ Ah

    def unnormalize(dVh, Vh, norms):
        # v_hat = v / |v|  =>  dv = (dv_hat - (dv_hat . v_hat) v_hat) / |v|
        inner = np.sum(dVh * Vh, axis=1, keepdims=True)
        return (dVh - inner * Vh) / norms[:, None]

    dZa = unnormalize(dAh, Ah, na)
    dZp = unnormalize(dPh, Ph, npos)
    dW = Ua.T @ dZa + Up.T @ dZp
    db = dZa.sum(axis=0) + dZp.sum(axis=0)
    if Nh is not None:
        dZn = unnormalize(dNh, Nh, nneg)
        dW += Un.T @ dZn
        db += dZn.sum(axis=0)
    return loss, ParamGrads(dW, db)


def _batch_features(
    params: ProjectionParams,
    anchors: Sequence[str],
    positives: Sequence[str] | None,
    negatives: Sequence[str] | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    if not anchors:
        raise ValueError("batch is empty")
    if positives is not None and len(positives) != len(anchors):
        raise ValueError("anchors/positives lengths differ")
    if negatives is not None and len(negatives) != len(anchors):
        raise ValueError("anchors/negatives lengths differ")
    dim = params.dim_in
    Fa = featurize_all(anchors, dim)
    # With no explicit positives the anchor text is re-encoded under an
    # independent mask (the dropout-positive mechanism).
    Fp = featurize_all(positives, dim) if positives is not None else Fa.copy()
    Fn = featurize_all(negatives, dim) if negatives is not None else None
    return Fa, Fp, Fn


def loss_and_grad(
    params: ProjectionParams,
    anchors: Sequence[str],
    positives: Sequence[str] | None,
    negatives: Sequence[str] | None,
    config: TrainConfig,
    step: int = 0,
) -> tuple[float, ParamGrads]:
    """Loss and analytic gradient for one batch; masks derive from (seed, step)."""
    Fa, Fp, Fn = _batch_features(params, anchors, positives, negatives)
    loss, grads = _loss_and_grad_arrays(params, Fa, Fp, Fn, config, step, want_grad=True)
    return loss, grads


def batch_loss(
    params: ProjectionParams,
    anchors: Sequence[str],
    positives: Sequence[str] | None,
    negatives: Sequence[str] | None,
    config: TrainConfig,
    step: int = 0,
) -> float:
    """Same value as loss_and_grad, without the gradient work."""
    Fa, Fp, Fn = _batch_features(params, anchors, positives, negatives)
    loss, _ = _loss_and_grad_arrays(params, Fa, Fp, Fn, config, step, want_grad=False)
    return loss


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, params: ProjectionParams):
    """Versioned binary dump: magic, JSON header with dimensions, raw float64."""
    header = {
        "format": 1,
        "dim_in": params.dim_in,
        "dim_out": params.dim_out,
        "dtype": "<f8",
        "arrays": ["weight", "bias"],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        handle.write(np.ascontiguousarray(params.weight, dtype="<f8").tobytes())
        handle.write(np.ascontiguousarray(params.bias, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ProjectionParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise TrainerError(f"{path} is not a projection checkpoint")
    body = raw[len(CHECKPOINT_MAGIC) :]
    newline = body.index(b"\n")
    header = json.loads(body[:newline].decode("utf-8"))
    if header.get("format") != 1:
        raise TrainerError(f"unsupported checkpoint format {header.get('format')}")
    dim_in, dim_out = header["dim_in"], header["dim_out"]
    data = body[newline + 1 :]
    expected = (dim_in * dim_out + dim_out) * 8
    if len(data) != expected:
        raise TrainerError(f"checkpoint payload is {len(data)} bytes, expected {expected}")
    weight = np.frombuffer(data[: dim_in * dim_out * 8], dtype="<f8").reshape(dim_in, dim_out)
    bias = np.frombuffer(data[dim_in * dim_out * 8 :], dtype="<f8")
    return ProjectionParams(weight.copy(), bias.copy())


def checkpoint_id(path: str | Path) -> dict:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"file": Path(path).name, "sha256": digest}


# ---------------------------------------------------------------------------
# Dataset loading
# ---------------------------------------------------------------------------


def load_triplet_file(path: str | Path) -> tuple[list[str], list[str] | None, list[str] | None]:
    """Read the synthesis JSONL or a headerless sent0,sent1,hard_neg CSV."""
    path = Path(path)
    anchors: list[str] = []
    positives: list[str] = []
    negatives: list[str] = []
    has_pos = has_neg = False
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".csv":
        import csv
        import io

        for row in csv.reader(io.StringIO(text)):
            if not row:
                continue
            anchors.append(row[0])
            if len(row) > 1:
                positives.append(row[1])
                has_pos = True
            if len(row) > 2:
                negatives.append(row[2])
                has_neg = True
    else:
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TrainerError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            anchors.append(record["sent0"])
            if record.get("sent1"):
                positives.append(record["sent1"])
                has_pos = True
            if record.get("hard_neg"):
                negatives.append(record["hard_neg"])
                has_neg = True
    if not anchors:
        raise TrainerError(f"{path} contains no examples")
    if has_pos and len(positives) != len(anchors):
        raise TrainerError(f"{path}: some rows are missing sent1")
    if has_neg and len(negatives) != len(anchors):
        raise TrainerError(f"{path}: some rows are missing hard_neg")
    return anchors, positives if has_pos else None, negatives if has_neg else None


def load_embedding_file(path: str | Path) -> dict[str, np.ndarray]:
    """JSONL of {id, vector}: precomputed embeddings keyed by id."""
    table: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            table[str(record["id"])] = np.asarray(record["vector"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise TrainerError(f"{path}:{lineno}: bad embedding record: {exc}") from exc
    if not table:
        raise TrainerError(f"{path} contains no embeddings")
    dims = {v.shape for v in table.values()}
    if len(dims) != 1:
        raise TrainerError(f"{path}: inconsistent vector dimensions {sorted(dims)}")
    return table


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ProjectionParams
    log: list[dict] = field(default_factory=list)
    checkpoint_path: Path | None = None


class _Adam:
    def __init__(self, shape_w, shape_b, config: TrainConfig):
        self.config = config
        self.t = 0
        self.m_w = np.zeros(shape_w)
        self.v_w = np.zeros(shape_w)
        self.m_b = np.zeros(shape_b)
        self.v_b = np.zeros(shape_b)

    def step(self, params: ProjectionParams, grads: ParamGrads):
        c = self.config
        self.t += 1
        for value, grad, m, v in (
            (params.weight, grads.weight, self.m_w, self.v_w),
            (params.bias, grads.bias, self.m_b, self.v_b),
        ):
            m *= c.beta1
            m += (1 - c.beta1) * grad
            v *= c.beta2
            v += (1 - c.beta2) * grad * grad
            m_hat = m / (1 - c.beta1**self.t)
            v_hat = v / (1 - c.beta2**self.t)
            value -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def _resolve_embedded(texts, table, path):
    missing = [t for t in texts if t not in table]
    if missing:
        raise TrainerError(f"{path}: ids not present in embedding file: {missing[:3]}")
    return [t for t in texts]


def train(
    data_path: str | Path,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    embeddings: str | Path | None = None,
) -> TrainResult:
    """Train the projection head; writes per-epoch and final checkpoints.

    With `embeddings` set, dataset fields are ids resolved in the embedding
    file and the frozen featurizer is bypassed.
    """
    anchors, positives, negatives = load_triplet_file(data_path)
    if embeddings is not None:
        table = load_embedding_file(embeddings)
        dim_in = next(iter(table.values())).shape[0]
        lookup = lambda ts: np.stack([table[t] for t in ts])
        for group in (anchors, positives or [], negatives or []):
            _resolve_embedded(group, table, data_path)
    else:
        dim_in = config.feature_dim
        lookup = lambda ts: featurize_all(ts, dim_in)

    params = init_params(dim_in, config.proj_dim, derive_rng(config.seed, "init"))
    adam = _Adam(params.weight.shape, params.bias.shape, config)
    n = len(anchors)

    F_anchor = lookup(anchors)
    F_pos = lookup(positives) if positives is not None else F_anchor.copy()
    F_neg = lookup(negatives) if negatives is not None else None

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    log: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = derive_rng(config.seed, "shuffle", epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            try:
                loss, grads = _loss_and_grad_arrays(
                    params,
                    F_anchor[batch],
                    F_pos[batch],
                    F_neg[batch] if F_neg is not None else None,
                    config,
                    step,
                    want_grad=True,
                )
            except NonFiniteLossError as exc:
                if out_dir is not None:
                    dump = {
                        "step": step,
                        "epoch": epoch,
                        "batch_indices": [int(i) for i in batch],
                        "error": str(exc),
                    }
                    (out_dir / "state_dump.json").write_text(json.dumps(dump, indent=2) + "\n")
                raise
            adam.step(params, grads)
            log.append({"step": step, "epoch": epoch, "loss": loss})
            step += 1
        if out_dir is not None:
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.bin", params)

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = out_dir / "checkpoint_final.bin"
        save_checkpoint(checkpoint_path, params)
        with (out_dir / "train_log.jsonl").open("w", encoding="utf-8") as handle:
            for entry in log:
                handle.write(json.dumps(entry, sort_keys=True) + "\n")
    return TrainResult(params=params, log=log, checkpoint_path=checkpoint_path)
