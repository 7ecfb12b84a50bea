"""Training loop combining supervised and self-distillation workflows.

Each step runs three forward passes on one shared mini-batch:

1. student on the unmasked images (train mode) for the cross-entropy loss;
2. teacher on the unmasked images (eval mode, no caches, no gradients)
   for the embedding targets;
3. student on the masked images (train mode) for the embedding loss.

The composite gradient backpropagates through the student only; the
teacher moves exclusively via the exponential moving average after the
optimizer step. In ce_only mode the embedding loss is still computed and
logged against the frozen initial teacher, but neither its gradient nor
the EMA update is applied.

Determinism: a seed fans out into four independent streams (init, data,
mask, dropout). Per step the consumption order is fixed: batch indices,
masks, dropout for the unmasked pass, dropout for the masked pass.
Checkpoints serialize all parameters, optimizer moments, and the exact
RNG states, so a resumed run reproduces an uninterrupted one.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import LabeledCorpus, SplitSpec, stratified_split
from .ema import EmaConfig, TeacherState, ema_update, init_teacher
from .errors import (
    BadConfig,
    CheckpointWriteError,
    EmptyCorpus,
    NonFiniteLoss,
)
from .losses import (
    LossConfig,
    cross_entropy,
    cross_entropy_grad_logits,
    data2vec_grad_student,
    data2vec_loss,
    normalize_block,
    one_hot,
)
from .masking import MaskConfig, apply_mask, generate_mask
from .model import (
    ModelConfig,
    ModelParams,
    encoder_backward,
    encoder_forward,
    head_backward,
    head_forward,
    load_checkpoint,
    save_checkpoint,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MODES = ("composite", "ce_only")


@dataclass
class TrainConfig:
    """Everything a run needs; serializes field-for-field to JSON."""

    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    ema: EmaConfig = field(default_factory=EmaConfig)
    mask: MaskConfig | None = None
    batch_size: int = 16
    learning_rate: float = 1e-4
    max_steps: int = 1000
    seed: int = 0
    mode: str = "composite"
    checkpoint_interval: int = 0  # 0 = final checkpoint only

    def __post_init__(self) -> None:
        if self.mask is None:
            # Default block: 16 when it tiles the input, else the largest
            # divisor of the input size up to 16.
            size = self.model.input_size
            block = max(b for b in range(1, min(16, size) + 1) if size % b == 0)
            self.mask = MaskConfig(block_size=block, image_size=size)
        if self.mode not in MODES:
            raise BadConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise BadConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise BadConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_steps < 0:
            raise BadConfig(f"max_steps must be >= 0, got {self.max_steps}")
        if self.checkpoint_interval < 0:
            raise BadConfig(f"checkpoint_interval must be >= 0, got {self.checkpoint_interval}")
        if self.mask.image_size != self.model.input_size:
            raise BadConfig(
                f"mask image_size {self.mask.image_size} != model input_size "
                f"{self.model.input_size}"
            )

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "loss": {
                "beta": self.loss.beta,
                "lambda_weight": self.loss.lambda_weight,
                "log_epsilon": self.loss.log_epsilon,
                "normalize_targets": self.loss.normalize_targets,
            },
            "ema": {
                "tau": self.ema.tau,
                "warmup_steps": self.ema.warmup_steps,
                "tau_start": self.ema.tau_start,
            },
            "mask": {
                "block_size": self.mask.block_size,
                "mask_ratio": self.mask.mask_ratio,
                "image_size": self.mask.image_size,
            },
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "mode": self.mode,
            "checkpoint_interval": self.checkpoint_interval,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        kwargs = {}
        sections = {"loss": LossConfig, "ema": EmaConfig, "mask": MaskConfig}
        try:
            if "model" in data:
                kwargs["model"] = ModelConfig.from_dict(data.pop("model"))
            for section, section_cls in sections.items():
                if section in data:
                    kwargs[section] = section_cls(**data.pop(section))
        except TypeError as exc:
            raise BadConfig(f"bad config key: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise BadConfig(f"unknown config key(s): {', '.join(unknown)}")
        kwargs.update(data)
        return cls(**kwargs)


@dataclass
class MetricsRecord:
    """One training step's losses and wall time."""

    step: int
    ce: float
    d2v: float
    composite: float
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "ce": self.ce,
                "d2v": self.d2v,
                "composite": self.composite,
                "wall_ms": self.wall_ms,
            }
        )


class TrainState:
    """Mutable run state: models, optimizer moments, step, RNG streams."""

    def __init__(self, config: TrainConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        seqs = np.random.SeedSequence(config.seed).spawn(4)
        init_rng = np.random.default_rng(seqs[0])
        self.student = ModelParams(config.model, "student", init_rng, dtype)
        self.teacher: TeacherState = init_teacher(self.student)
        self.opt_m = {k: np.zeros_like(v) for k, v in self.student.tensors().items()}
        self.opt_v = {k: np.zeros_like(v) for k, v in self.student.tensors().items()}
        self.step = 0
        self.rng_data = np.random.default_rng(seqs[1])
        self.rng_mask = np.random.default_rng(seqs[2])
        self.rng_dropout = np.random.default_rng(seqs[3])
        self.encoder_tensor_names = set()
        for layer in self.student.encoder_layers:
            self.encoder_tensor_names.update(layer.grads().keys())

    # -- rng state (de)serialization ----------------------------------------

    def rng_states(self) -> dict:
        return {
            "data": self.rng_data.bit_generator.state,
            "mask": self.rng_mask.bit_generator.state,
            "dropout": self.rng_dropout.bit_generator.state,
        }

    def set_rng_states(self, states: dict) -> None:
        self.rng_data.bit_generator.state = states["data"]
        self.rng_mask.bit_generator.state = states["mask"]
        self.rng_dropout.bit_generator.state = states["dropout"]


def _adam_step(state: TrainState, grads: dict[str, np.ndarray]) -> None:
    """One adaptive-moment update over every student tensor, in place."""
    t = state.step + 1
    lr = state.config.learning_rate
    b1c = 1.0 - ADAM_BETA1**t
    b2c = 1.0 - ADAM_BETA2**t
    for name, param in state.student.tensors().items():
        g = grads[name].astype(param.dtype, copy=False)
        m = state.opt_m[name]
        v = state.opt_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        update = (m / b1c) / (np.sqrt(v / b2c) + ADAM_EPS)
        param -= param.dtype.type(lr) * update


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    """Accept (images, labels) arrays or a list of LabeledSample."""
    if isinstance(batch, tuple):
        return batch
    images = np.stack([s.image for s in batch])
    labels = np.array([s.family_id for s in batch], dtype=np.int64)
    return images, labels


def train_step(state: TrainState, batch, config: TrainConfig | None = None) -> MetricsRecord:
    """Run both workflows on one batch and update the student (and teacher)."""
    config = config or state.config
    images, labels = _batch_arrays(batch)
    if images.shape[0] < 1:
        raise EmptyCorpus("train_step needs a nonempty batch")
    started = time.perf_counter()
    m = images.shape[0]
    labels_1h = one_hot(labels, config.model.families)

    # Teacher targets: unmasked images, eval mode, no caches, no gradients.
    z_targets = encoder_forward(state.teacher.params, images, "eval")
    if config.loss.normalize_targets:
        z_targets = normalize_block(z_targets)

    # Masks are drawn before any dropout so the stream order is stable.
    masked = np.empty_like(images)
    for i in range(m):
        mask = generate_mask(config.mask, state.rng_mask)
        masked[i] = apply_mask(images[i], mask)

    # Workflow 1: supervised pass on unmasked images.
    emb_unmasked = encoder_forward(state.student, images, "train", state.rng_dropout)
    probs = head_forward(state.student, emb_unmasked, "train", state.rng_dropout)
    ce = cross_entropy(probs, labels_1h, config.loss)
    dlogits = cross_entropy_grad_logits(probs, labels_1h).astype(state.dtype)
    encoder_backward(state.student, head_backward(state.student, dlogits))
    grads = {k: v.copy() for k, v in state.student.grad_tensors().items()}

    # Workflow 2: masked student embeddings against the constant targets.
    z_student = encoder_forward(state.student, masked, "train", state.rng_dropout)
    d2v = data2vec_loss(z_targets, z_student, config.loss)

    if not (np.isfinite(ce) and np.isfinite(d2v)):
        raise NonFiniteLoss(state.step, ce, d2v)
    composite = ce + config.loss.lambda_weight * d2v

    optimize_d2v = config.mode == "composite" and config.loss.lambda_weight > 0.0
    if optimize_d2v:
        dz = config.loss.lambda_weight * data2vec_grad_student(z_targets, z_student, config.loss)
        encoder_backward(state.student, dz.astype(state.dtype))
        for name, grad in state.student.grad_tensors().items():
            if name in state.encoder_tensor_names:
                grads[name] = grads[name] + grad

    _adam_step(state, grads)
    if config.mode == "composite":
        ema_update(state.teacher, state.student, config.ema)
    state.step += 1

    wall_ms = (time.perf_counter() - started) * 1000.0
    return MetricsRecord(state.step, float(ce), float(d2v), float(composite), wall_ms)


# ----------------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------------


def save_state(state: TrainState, path) -> None:
    """Write student, teacher, and optimizer tensors plus run metadata."""
    tensors: dict[str, np.ndarray] = {}
    for name, arr in state.student.tensors().items():
        tensors[f"student/{name}"] = arr
    for name, arr in state.teacher.params.tensors().items():
        tensors[f"teacher/{name}"] = arr
    for name, arr in state.opt_m.items():
        tensors[f"adam_m/{name}"] = arr
    for name, arr in state.opt_v.items():
        tensors[f"adam_v/{name}"] = arr
    meta = {
        "train_config": state.config.to_dict(),
        "model_config": state.config.model.to_dict(),
        "step": state.step,
        "teacher_step": state.teacher.step,
        "rng_states": state.rng_states(),
    }
    save_checkpoint(path, tensors, meta)


def load_state(path, config: TrainConfig | None = None, dtype=np.float32) -> TrainState:
    """Rebuild a TrainState exactly as checkpointed (parameters, moments, RNG)."""
    tensors, meta = load_checkpoint(path)
    stored = TrainConfig.from_dict(meta["train_config"])
    if config is not None:
        # Run-control knobs may change on resume (train longer, checkpoint
        # more often); everything that affects the math must match.
        def _core(c: TrainConfig) -> dict:
            d = c.to_dict()
            d.pop("max_steps")
            d.pop("checkpoint_interval")
            return d

        if _core(config) != _core(stored):
            raise BadConfig("checkpoint train_config differs from the requested config")
        stored = config
    state = TrainState(stored, dtype)

    def scoped(prefix: str) -> dict[str, np.ndarray]:
        return {k[len(prefix) :]: v for k, v in tensors.items() if k.startswith(prefix)}

    state.student.set_tensors(scoped("student/"))
    state.teacher.params.set_tensors(scoped("teacher/"))
    for name, arr in scoped("adam_m/").items():
        state.opt_m[name][...] = arr
    for name, arr in scoped("adam_v/").items():
        state.opt_v[name][...] = arr
    state.step = int(meta["step"])
    state.teacher.step = int(meta["teacher_step"])
    state.set_rng_states(meta["rng_states"])
    return state


# ----------------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Accuracy, per-family accuracy, and the full confusion matrix."""

    accuracy: float
    per_family: list[float | None]
    confusion: np.ndarray
    total: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_family": self.per_family,
            "confusion": self.confusion.tolist(),
            "total": self.total,
        }


def evaluate(params: ModelParams, corpus: LabeledCorpus, batch_size: int = 64) -> EvalReport:
    """Eval-mode predictions over the corpus; no dropout, no parameter writes."""
    if len(corpus) == 0:
        raise EmptyCorpus("evaluate needs a nonempty corpus")
    families = params.config.families
    confusion = np.zeros((families, families), dtype=np.int64)
    images = corpus.images(params.dtype)
    labels = corpus.labels()
    for lo in range(0, len(corpus), batch_size):
        chunk = images[lo : lo + batch_size]
        emb = encoder_forward(params, chunk, "eval")
        probs = head_forward(params, emb, "eval")
        preds = np.argmax(probs, axis=1)
        for true, pred in zip(labels[lo : lo + batch_size], preds):
            confusion[true, pred] += 1
    correct = int(np.trace(confusion))
    per_family: list[float | None] = []
    for fid in range(families):
        row = confusion[fid]
        n = int(row.sum())
        per_family.append(float(row[fid] / n) if n else None)
    return EvalReport(
        accuracy=correct / len(corpus),
        per_family=per_family,
        confusion=confusion,
        total=len(corpus),
    )


# ----------------------------------------------------------------------------
# Full runs
# ----------------------------------------------------------------------------


@dataclass
class TrainResult:
    state: TrainState
    metrics: list[MetricsRecord]
    checkpoints: list[str]
    report: EvalReport | None


def _write_checkpoint(state: TrainState, path: Path, last_good: str | None) -> str:
    try:
        save_state(state, path)
    except OSError as exc:
        raise CheckpointWriteError(str(path), last_good, str(exc)) from exc
    return str(path)


def _trim_metrics_log(path: Path, max_step: int) -> None:
    """Drop records beyond max_step so a resumed log stays consistent."""
    if not path.is_file():
        return
    kept = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if json.loads(line)["step"] <= max_step:
                kept.append(line)
    path.write_text("".join(k + "\n" for k in kept), encoding="utf-8")


def train(
    config: TrainConfig,
    train_corpus: LabeledCorpus,
    eval_corpus: LabeledCorpus | None = None,
    run_dir=None,
    resume_from=None,
    dtype=np.float32,
    log=None,
) -> TrainResult:
    """Train for max_steps, logging metrics and checkpointing along the way.

    run_dir (optional) receives metrics.jsonl, checkpoints/, and report.json.
    resume_from restarts from a checkpoint with identical config and RNG
    streams, reproducing the uninterrupted run.
    """
    if len(train_corpus) == 0:
        raise EmptyCorpus("training corpus is empty")
    if config.batch_size > len(train_corpus):
        raise BadConfig(
            f"batch_size {config.batch_size} exceeds corpus size {len(train_corpus)}"
        )

    if resume_from is not None:
        state = load_state(resume_from, config, dtype)
    else:
        state = TrainState(config, dtype)

    metrics_path = ckpt_dir = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        ckpt_dir = run_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = run_dir / "metrics.jsonl"
        if resume_from is not None:
            _trim_metrics_log(metrics_path, state.step)
        elif metrics_path.exists():
            metrics_path.unlink()

    images = train_corpus.images(dtype)
    labels = train_corpus.labels()
    n = len(train_corpus)

    metrics: list[MetricsRecord] = []
    checkpoints: list[str] = []
    last_good: str | None = None
    metrics_fh = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    try:
        while state.step < config.max_steps:
            idx = state.rng_data.choice(n, size=config.batch_size, replace=False)
            record = train_step(state, (images[idx], labels[idx]), config)
            metrics.append(record)
            if metrics_fh:
                metrics_fh.write(record.to_json() + "\n")
                metrics_fh.flush()
            if log is not None:
                log(record)
            if (
                ckpt_dir is not None
                and config.checkpoint_interval
                and state.step % config.checkpoint_interval == 0
                and state.step < config.max_steps
            ):
                path = ckpt_dir / f"step_{state.step:06d}.bnck"
                last_good = _write_checkpoint(state, path, last_good)
                checkpoints.append(last_good)
    finally:
        if metrics_fh:
            metrics_fh.close()

    if ckpt_dir is not None:
        path = ckpt_dir / f"step_{state.step:06d}.bnck"
        last_good = _write_checkpoint(state, path, last_good)
        if last_good not in checkpoints:
            checkpoints.append(last_good)

    report = evaluate(state.student, eval_corpus) if eval_corpus is not None else None
    if run_dir is not None and report is not None:
        with open(Path(run_dir) / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return TrainResult(state, metrics, checkpoints, report)


@dataclass
class RunOutcome:
    """One (seed, mode) cell of the comparison protocol."""

    seed: int
    mode: str
    accuracy: float
    final_d2v: float
    result: TrainResult
    test_corpus: LabeledCorpus


def run_comparison(
    base_config: TrainConfig,
    corpus: LabeledCorpus,
    seeds: tuple[int, ...] = (0, 1, 2),
    modes: tuple[str, ...] = MODES,
    train_fraction: float = 0.9,
    dtype=np.float32,
    tail: int = 50,
    log=None,
) -> list[RunOutcome]:
    """Train every (seed, mode) pair on per-seed splits of one corpus.

    Per seed, the corpus is split once and shared by both modes so the
    comparison isolates the loss function. final_d2v is the mean logged
    embedding loss over the last `tail` steps.
    """
    outcomes: list[RunOutcome] = []
    for seed in seeds:
        train_set, test_set = stratified_split(corpus, SplitSpec(train_fraction, seed))
        for mode in modes:
            config = TrainConfig.from_dict(
                {**base_config.to_dict(), "seed": seed, "mode": mode}
            )
            result = train(config, train_set, eval_corpus=test_set, dtype=dtype, log=log)
            d2v_tail = [r.d2v for r in result.metrics[-tail:]] or [float("nan")]
            outcomes.append(
                RunOutcome(
                    seed=seed,
                    mode=mode,
                    accuracy=result.report.accuracy,
                    final_d2v=float(np.mean(d2v_tail)),
                    result=result,
                    test_corpus=test_set,
                )
            )
    return outcomes
