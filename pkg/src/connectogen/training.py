"""Joint optimization of all pipeline components under the composite loss.

The total objective is w_fe * L_fe + w_ldm * L_ldm + w_c * L_c, where L_fe is the
mean absolute difference between the reconstructed network and the subject's
reference network, L_ldm the noise-prediction objective on the latent, and L_c
the classifier cross-entropy on the reconstruction. One Adam step updates every
parameter group jointly; an audit verifies no group is silently excluded.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    load_state_dict_tensors,
    read_container,
    state_dict_to_tensors,
    write_container,
)
from .data import CohortSplit, ConnectivityMatrix, SubjectRecord
from .diffusion import NoiseSchedule, ldm_loss
from .errors import StateError
from .fenet import volumes_to_batch
from .gcn import ClassPrediction, classification_loss
from .pipeline import PARAMETER_GROUPS, PipelineConfig, PipelineModel, build_pipeline

LOSS_TERMS = ("fe", "ldm", "classification")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 2
    epochs: int = 1
    seed: int = 0
    schedule_T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    grad_clip: float = 1.0
    logit_token_dropout: float = 0.5
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(w < 0 for w in self.loss_weights):
            raise ValueError("loss weights must be >= 0")


@dataclass
class TrainState:
    model: PipelineModel
    optimizer: torch.optim.Adam
    schedule: NoiseSchedule
    pipeline_config: PipelineConfig
    train_config: TrainConfig
    epoch: int = 0
    step: int = 0
    np_rng: np.random.Generator = None
    torch_gen: torch.Generator = None
    loss_history: list[dict] = field(default_factory=list)
    epoch_metrics: list[dict] = field(default_factory=list)


def fe_loss(generated: ConnectivityMatrix, reference: ConnectivityMatrix) -> float:
    """Mean absolute difference over all 8100 entries."""
    return float(np.abs(generated.weights - reference.weights).mean())


def init_train_state(
    pipeline_config: PipelineConfig, train_config: TrainConfig
) -> TrainState:
    model = build_pipeline(pipeline_config, seed=train_config.seed)
    optimizer = torch.optim.Adam(
        [p for _, p in model.all_named_parameters()],
        lr=train_config.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
    )
    schedule = NoiseSchedule.linear(
        train_config.schedule_T, train_config.beta_start, train_config.beta_end
    )
    np_rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, 1]))
    torch_gen = torch.Generator()
    torch_gen.manual_seed(train_config.seed)
    return TrainState(
        model=model,
        optimizer=optimizer,
        schedule=schedule,
        pipeline_config=pipeline_config,
        train_config=train_config,
        np_rng=np_rng,
        torch_gen=torch_gen,
    )


def _batch_tensors(batch: list[SubjectRecord], dtype):
    volumes = volumes_to_batch([r.volume for r in batch], dtype=dtype)
    refs = torch.as_tensor(
        np.stack([r.reference_network.weights for r in batch]), dtype=dtype
    )
    labels = torch.as_tensor([int(r.label) for r in batch], dtype=torch.long)
    return volumes, refs, labels


def compute_loss_terms(
    model: PipelineModel,
    schedule: NoiseSchedule,
    batch: list[SubjectRecord],
    torch_gen: torch.Generator,
    use_logit_token: bool = True,
) -> dict[str, torch.Tensor]:
    """Forward passes for one batch, returning the three differentiable terms."""
    dtype = next(model.parameters()).dtype
    volumes, refs, labels = _batch_tensors(batch, dtype)
    feats = model.fenet(volumes)
    z0 = model.encoder(feats.unsqueeze(1))
    recon = model.decoder(z0)
    logits = model.classifier(recon)
    context = model.conditioner(labels, logits.detach() if use_logit_token else None)
    return {
        "fe": (recon - refs).abs().mean(),
        "ldm": ldm_loss(z0, context, schedule, model.denoiser, torch_gen),
        "classification": classification_loss(logits, labels),
    }


def total_loss(
    terms: dict[str, torch.Tensor], weights: tuple[float, float, float]
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the loss terms plus a per-term float breakdown.

    Terms with zero weight are excluded from the graph, so masked weights leave
    exactly the remaining terms.
    """
    breakdown = {}
    for name, value in terms.items():
        val = float(value.detach())
        if not math.isfinite(val):
            raise StateError(f"non-finite loss term {name!r}: {val}")
        breakdown[name] = val
    # combine at 64-bit so the logged breakdown re-sums to the total exactly
    active = [w * terms[name].double() for name, w in zip(LOSS_TERMS, weights) if w > 0]
    total = sum(active) if active else torch.zeros((), dtype=torch.float64)
    breakdown["total"] = float(total.detach())
    return total, breakdown


def _expected_groups(weights: tuple[float, float, float]) -> set[str]:
    w_fe, w_ldm, w_c = weights
    groups: set[str] = set()
    if w_fe > 0:
        groups |= {"fenet", "encoder", "decoder"}
    if w_ldm > 0:
        groups |= {"fenet", "encoder", "denoiser", "conditioner"}
    if w_c > 0:
        groups |= {"fenet", "encoder", "decoder", "classifier"}
    return groups


def _audit_gradients(
    model: PipelineModel, weights: tuple[float, float, float], logit_token_used: bool
) -> None:
    """Verify that exactly the parameter groups reachable from the active loss
    terms received gradients, and that all gradients are finite."""
    expected = _expected_groups(weights)
    for group in PARAMETER_GROUPS:
        for name, param in model.parameter_group(group):
            optional = name.startswith("conditioner.logit_proj") and not logit_token_used
            should_have = group in expected and not optional
            if should_have and param.grad is None:
                raise StateError(f"parameter {name!r} received no gradient")
            if not should_have and param.grad is not None:
                raise StateError(f"parameter {name!r} unexpectedly received a gradient")
            if param.grad is not None and not torch.isfinite(param.grad).all():
                raise StateError(f"non-finite gradient in parameter group {group!r} ({name})")


def train_step(state: TrainState, batch: list[SubjectRecord]) -> dict[str, float]:
    """One joint Adam update over all parameter groups; returns the loss breakdown."""
    cfg = state.train_config
    use_logit_token = bool(state.np_rng.random() >= cfg.logit_token_dropout)
    terms = compute_loss_terms(
        state.model, state.schedule, batch, state.torch_gen, use_logit_token
    )
    total, breakdown = total_loss(terms, cfg.loss_weights)
    state.optimizer.zero_grad(set_to_none=True)
    if total.requires_grad:
        total.backward()
    _audit_gradients(state.model, cfg.loss_weights, use_logit_token)
    if any(w > 0 for w in cfg.loss_weights) and cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(
            [p for _, p in state.model.all_named_parameters()], cfg.grad_clip
        )
    state.optimizer.step()
    state.step += 1
    row = {"epoch": state.epoch, "step": state.step, **breakdown}
    state.loss_history.append(row)
    return breakdown


def reconstruct_networks(
    model: PipelineModel, records: list[SubjectRecord], batch_size: int = 8
) -> tuple[list[ConnectivityMatrix], list[ClassPrediction]]:
    """Per-subject reconstruction B = decode(encode(features)) plus its classification."""
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    networks: list[ConnectivityMatrix] = []
    predictions: list[ClassPrediction] = []
    try:
        with torch.no_grad():
            for start in range(0, len(records), batch_size):
                chunk = records[start : start + batch_size]
                volumes, _, _ = _batch_tensors(chunk, dtype)
                recon = model.reconstruct(volumes)
                logits = model.classifier(recon)
                for i in range(len(chunk)):
                    networks.append(ConnectivityMatrix(recon[i].double().numpy()))
                    lg = logits[i].double().numpy()
                    shifted = lg - lg.max()
                    probs = np.exp(shifted) / np.exp(shifted).sum()
                    predictions.append(
                        ClassPrediction(
                            logits=lg, probabilities=probs, predicted=int(np.argmax(probs))
                        )
                    )
    finally:
        model.train(was_training)
    return networks, predictions


def train_loop(
    split: CohortSplit,
    pipeline_config: PipelineConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    state: TrainState | None = None,
) -> TrainState:
    """Epoch loop with seeded shuffling, per-epoch test evaluation, and
    periodic checkpointing. Resuming from a saved state continues bitwise."""
    from .analysis import ConfusionMatrix, compute_metrics

    if not split.train and train_config.epochs > 0:
        raise ValueError("training set is empty")
    if state is None:
        state = init_train_state(pipeline_config, train_config)
    out_dir = Path(out_dir) if out_dir is not None else None

    while state.epoch < train_config.epochs:
        state.epoch += 1
        order = state.np_rng.permutation(len(split.train))
        for start in range(0, len(order), train_config.batch_size):
            batch = [split.train[i] for i in order[start : start + train_config.batch_size]]
            train_step(state, batch)

        epoch_rows = [r for r in state.loss_history if r["epoch"] == state.epoch]
        summary = {
            "epoch": state.epoch,
            "mean_total": float(np.mean([r["total"] for r in epoch_rows])),
        }
        if split.test:
            _, preds = reconstruct_networks(state.model, split.test)
            cm = ConfusionMatrix.from_labels(
                [int(r.label) for r in split.test], [p.predicted for p in preds]
            )
            summary.update(compute_metrics(cm))
        state.epoch_metrics.append(summary)

        if (
            out_dir is not None
            and train_config.checkpoint_every > 0
            and state.epoch % train_config.checkpoint_every == 0
            and state.epoch < train_config.epochs
        ):
            save_train_state(state, out_dir / f"epoch_{state.epoch:04d}.ckpt")

    if out_dir is not None:
        save_train_state(state, out_dir / "final.ckpt")
        write_loss_history(out_dir / "loss_history.csv", state.loss_history)
    return state


def write_loss_history(path: str | Path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "fe", "ldm", "classification", "total"])
        for row in rows:
            writer.writerow(
                [row["epoch"], row["step"]]
                + [repr(row[k]) for k in ("fe", "ldm", "classification", "total")]
            )


# --- checkpointing ------------------------------------------------------------


def save_train_state(state: TrainState, path: str | Path) -> None:
    tensors = state_dict_to_tensors(state.model, prefix="model")
    tensors["schedule/beta"] = state.schedule.beta
    name_by_param = {id(p): n for n, p in state.model.all_named_parameters()}
    for param, opt_state in state.optimizer.state.items():
        pname = name_by_param[id(param)]
        for key, value in opt_state.items():
            if isinstance(value, torch.Tensor):
                tensors[f"optim/{pname}/{key}"] = value.detach().cpu().numpy()
    meta = {
        "pipeline_config": state.pipeline_config.to_dict(),
        "train_config": asdict(state.train_config),
        "epoch": state.epoch,
        "step": state.step,
        "loss_history": state.loss_history,
        "epoch_metrics": state.epoch_metrics,
        "torch_rng": state.torch_gen.get_state().numpy().tobytes().hex(),
        "numpy_rng": state.np_rng.bit_generator.state,
        "schedule_T": state.schedule.T,
    }
    write_container(path, tensors, meta)


def load_train_state(path: str | Path) -> TrainState:
    tensors, meta = read_container(path)
    pipeline_config = PipelineConfig.from_dict(meta["pipeline_config"])
    tc = dict(meta["train_config"])
    tc["loss_weights"] = tuple(tc["loss_weights"])
    train_config = TrainConfig(**tc)
    state = init_train_state(pipeline_config, train_config)
    load_state_dict_tensors(state.model, tensors, prefix="model")
    state.schedule = NoiseSchedule(tensors["schedule/beta"])

    for name, param in state.model.all_named_parameters():
        entry = {}
        for key in ("step", "exp_avg", "exp_avg_sq"):
            tname = f"optim/{name}/{key}"
            if tname in tensors:
                entry[key] = torch.from_numpy(tensors[tname].copy())
        if entry:
            state.optimizer.state[param] = entry

    state.epoch = int(meta["epoch"])
    state.step = int(meta["step"])
    state.loss_history = list(meta["loss_history"])
    state.epoch_metrics = list(meta["epoch_metrics"])
    rng_bytes = bytes.fromhex(meta["torch_rng"])
    state.torch_gen.set_state(torch.from_numpy(np.frombuffer(rng_bytes, dtype=np.uint8).copy()))
    state.np_rng.bit_generator.state = meta["numpy_rng"]
    return state


def load_model(path: str | Path) -> tuple[PipelineModel, NoiseSchedule, PipelineConfig]:
    """Load just the inference pieces from a training checkpoint."""
    state = load_train_state(path)
    state.model.eval()
    return state.model, state.schedule, state.pipeline_config
