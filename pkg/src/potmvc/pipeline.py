"""Three-stage training loop and experiment orchestration.

Stage 1 pre-trains the per-view autoencoders on reconstruction; stage 2
aligns views with the structure-guided and semantic contrastive losses;
stage 3 alternates full-dataset transport pseudo-label assignment under the
growing mass schedule with mini-batch updates of the rebalanced losses plus
the self-labeling cross-entropy term.

``run_experiment`` wires the stages together, evaluates the final labels
against the ground truth and writes a deterministic report (timing fields
aside).
"""

import dataclasses
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .datagen import GenSpec, MultiViewDataset, generate, load_dataset
from .labeling import (
    MassSchedule,
    PseudoLabels,
    assign_balanced_labels,
    assign_pot_labels,
    lambda_at,
    make_rebalance_context,
    mix_predictions,
)
from .mathops import substream
from .metrics import evaluate
from .networks import NetworkConfig, adam_step, backward, forward, init_params
from .transport import PotConfig


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    """Everything a run needs; serializes to flat key=value text."""

    # data source: a dataset directory, or the generator settings below
    dataset_path: str | None = None
    classes: int = 5
    views: int = 3
    samples: int = 1000
    ratio: float = 0.1
    view_dims: tuple = (12, 10, 8)
    separation: float = 4.0
    noise_std: float = 1.0
    # stage schedule
    stage1_epochs: int = 30
    stage2_epochs: int = 20
    stage3_epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-3
    # loss and solver knobs
    alpha: float = 0.5
    tau_f: float = 0.5
    tau_l: float = 1.0
    lambda_base: float = 0.1
    lambda_max: float = 1.0
    epsilon: float = 0.1
    beta: float = 0.5
    w_view: float = 0.8
    w_target: float = 0.2
    ce_weight: float = 1.0
    rebalance_weight: float = 1.0
    balanced_labels: bool = False
    keep_align: bool = False
    # network
    encoder_dims: tuple = (64, 32)
    projection_dim: int = 16
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        self.view_dims = tuple(int(d) for d in self.view_dims)
        self.encoder_dims = tuple(int(d) for d in self.encoder_dims)
        for name in ("stage1_epochs", "stage2_epochs", "stage3_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["view_dims"] = ",".join(map(str, self.view_dims))
        out["encoder_dims"] = ",".join(map(str, self.encoder_dims))
        return out


_CONFIG_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def parse_config_text(text, source="<config>"):
    """Parse flat key=value config text; unknown keys are rejected."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_TYPES:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse_config_value(key, value)
    return ExperimentConfig(**values)


def _parse_config_value(key, value):
    kind = _CONFIG_TYPES[key]
    if key in ("view_dims", "encoder_dims"):
        return tuple(int(x) for x in value.split(","))
    if kind in ("int", int):
        return int(value)
    if kind in ("float", float):
        return float(value)
    if kind in ("bool", bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean for {key}: {value!r}")
    if value.lower() in ("none", ""):
        return None
    return value


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def save_config(config, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in config.to_dict().items():
            fh.write(f"{key}={'' if value is None else value}\n")


@dataclass
class ExperimentReport:
    config: dict
    epochs: list = field(default_factory=list)
    metrics: dict | None = None
    predicted: list | None = None
    pseudo_class_counts: list | None = None
    true_class_counts: list | None = None
    assigned_fraction: float | None = None
    failure: str | None = None
    wall_clock_seconds: float = 0.0

    def to_dict(self):
        return dataclasses.asdict(self)


def _load_data(config):
    if config.dataset_path is not None:
        return load_dataset(config.dataset_path)
    spec = GenSpec(classes=config.classes, views=config.views,
                   samples=config.samples, ratio=config.ratio,
                   view_dims=config.view_dims,
                   separation=config.separation,
                   noise_std=config.noise_std, seed=config.seed)
    return generate(spec)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        batch = order[start: start + batch_size]
        if len(batch) >= 2:
            yield batch


def _check_finite(value, stage, epoch):
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"stage {stage} loss became non-finite at epoch {epoch}")


def train_stage1(config, data, params, report=None):
    """Reconstruction pre-training of the per-view autoencoders."""
    n = data.n_samples
    for epoch in range(1, config.stage1_epochs + 1):
        rng = substream(config.seed, f"stage1:epoch{epoch}")
        total, seen = 0.0, 0
        for batch in _batches(n, config.batch_size, rng):
            views = [x[batch] for x in data.views]
            cache = forward(views, params, with_decoder=True,
                            with_heads=False)
            loss, d_xhat = L.reconstruction_loss_grads(views, cache.xhat)
            scale = 1.0 / len(batch)
            grads = backward(params, cache,
                             d_xhat=[g * scale for g in d_xhat])
            adam_step(params, grads, lr=config.lr)
            total += loss.value
            seen += len(batch)
        mean = total / max(seen, 1)
        _check_finite(mean, 1, epoch)
        if report is not None:
            report.epochs.append({"stage": 1, "epoch": epoch,
                                  "loss_recon": mean})
    return params


def train_stage2(config, data, params, report=None):
    """Structure-guided and semantic cross-view alignment."""
    n = data.n_samples
    for epoch in range(1, config.stage2_epochs + 1):
        rng = substream(config.seed, f"stage2:epoch{epoch}")
        total, batches = 0.0, 0
        for batch in _batches(n, config.batch_size, rng):
            views = [x[batch] for x in data.views]
            cache = forward(views, params, with_decoder=False,
                            with_heads=True)
            loss, d_h, d_u, d_g, d_pv, d_p = L.align_loss_grads(
                cache.h, cache.u_proj, cache.structure, cache.p_views,
                cache.p_consensus, tau_f=config.tau_f, tau_l=config.tau_l)
            grads = backward(params, cache, d_h=d_h, d_u_proj=d_u,
                             d_structure=d_g, d_p_views=d_pv,
                             d_p_consensus=d_p)
            adam_step(params, grads, lr=config.lr)
            total += loss.value
            batches += 1
        mean = total / max(batches, 1)
        _check_finite(mean, 2, epoch)
        if report is not None:
            report.epochs.append({"stage": 2, "epoch": epoch,
                                  "loss_align": mean})
    return params


def _full_predictions(config, data, params):
    cache = forward(data.views, params, with_decoder=False, with_heads=True)
    return cache, mix_predictions(cache.p_consensus, cache.p_views,
                                  config.alpha)


def _assign_labels(config, mixed, lam):
    pot = PotConfig(epsilon=config.epsilon, beta=config.beta)
    if config.balanced_labels:
        return assign_balanced_labels(mixed, pot)
    return assign_pot_labels(mixed, lam, pot)


def _slice_labels(labels, idx):
    return PseudoLabels(
        soft=labels.soft[idx], hard=labels.hard[idx],
        row_mass=labels.row_mass[idx],
        class_counts=labels.class_counts, class_freq=labels.class_freq,
        class_weight=labels.class_weight, converged=labels.converged,
        solver_iterations=labels.solver_iterations)


def _slice_context(ctx, idx):
    return L.RebalanceContext(eta=ctx.eta[idx], assigned=ctx.assigned[idx],
                              class_weight=ctx.class_weight,
                              w_view=ctx.w_view, w_target=ctx.w_target,
                              tau_f=ctx.tau_f)


def train_stage3(config, data, params, report=None):
    """Progressive pseudo-label assignment plus rebalanced updates.

    Per epoch: grow the transported mass, solve for labels over the full
    dataset, then run mini-batch steps on the rebalanced losses and the
    weighted self-labeling cross-entropy. A failed solve skips the epoch and
    reuses the previous labels.
    """
    n = data.n_samples
    schedule = MassSchedule(lambda_base=config.lambda_base,
                            lambda_max=config.lambda_max,
                            total_steps=max(config.stage3_epochs, 1))
    labels = None
    for epoch in range(1, config.stage3_epochs + 1):
        lam = lambda_at(schedule, epoch)
        record = {"stage": 3, "epoch": epoch, "lambda": lam}
        _, mixed = _full_predictions(config, data, params)
        try:
            new_labels = _assign_labels(config, mixed, lam)
        except (ValueError, FloatingPointError, OverflowError) as exc:
            warnings.warn(f"label solve failed at epoch {epoch}: {exc}; "
                          "reusing previous labels")
            new_labels = None
        if new_labels is not None:
            labels = new_labels
            record["solver_iterations"] = labels.solver_iterations
            record["solver_converged"] = labels.converged
        else:
            record["solver_iterations"] = None
            record["solver_converged"] = False
        if labels is None:
            record["skipped"] = True
            if report is not None:
                report.epochs.append(record)
            continue
        # early small-mass epochs may assign nobody; the cross-entropy on
        # the partial soft masses still provides signal
        ctx = None
        if labels.n_assigned > 0:
            ctx = make_rebalance_context(labels, w_view=config.w_view,
                                         w_target=config.w_target,
                                         tau_f=config.tau_f)
        targets = np.clip(labels.soft * n, 0.0, 1.0)
        rng = substream(config.seed, f"stage3:epoch{epoch}")
        total_im, total_ce, batches = 0.0, 0.0, 0
        for batch in _batches(n, config.batch_size, rng):
            views = [x[batch] for x in data.views]
            cache = forward(views, params, with_decoder=False,
                            with_heads=True)
            batch_labels = _slice_labels(labels, batch)
            batch_ctx = _slice_context(ctx, batch) if ctx is not None \
                else None
            d_h = None
            d_u_proj = None
            d_g = None
            d_pv = [np.zeros_like(p) for p in cache.p_views]
            d_p = np.zeros_like(cache.p_consensus)
            if config.rebalance_weight > 0 and batch_ctx is not None \
                    and batch_ctx.assigned.any():
                im, d_h, d_u_proj, im_d_pv, im_d_p = L.imbalance_loss_grads(
                    cache.h, cache.u_proj, cache.p_views, cache.p_consensus,
                    batch_labels, batch_ctx)
                w = config.rebalance_weight
                d_h = [w * g for g in d_h]
                d_u_proj = w * d_u_proj
                for v, g in enumerate(im_d_pv):
                    d_pv[v] += w * g
                d_p += w * im_d_p
                total_im += im.value
            if config.ce_weight > 0:
                p_hat = mix_predictions(cache.p_consensus, cache.p_views,
                                        config.alpha).p_hat
                ce, d_mix = L.self_label_ce_grads(p_hat, targets[batch])
                w = config.ce_weight
                share = (1.0 - config.alpha) / len(cache.p_views)
                for v in range(len(d_pv)):
                    d_pv[v] += w * share * d_mix
                d_p += w * config.alpha * d_mix
                total_ce += ce.value
            if config.keep_align:
                _, a_dh, a_du, a_dg, a_dpv, a_dp = L.align_loss_grads(
                    cache.h, cache.u_proj, cache.structure, cache.p_views,
                    cache.p_consensus, tau_f=config.tau_f,
                    tau_l=config.tau_l)
                d_h = a_dh if d_h is None else [
                    x + y for x, y in zip(d_h, a_dh)]
                d_u_proj = a_du if d_u_proj is None else d_u_proj + a_du
                d_g = a_dg
                for v, g in enumerate(a_dpv):
                    if g is not None:
                        d_pv[v] += g
                d_p += a_dp
            grads = backward(params, cache, d_h=d_h, d_u_proj=d_u_proj,
                             d_structure=d_g, d_p_views=d_pv,
                             d_p_consensus=d_p)
            adam_step(params, grads, lr=config.lr)
            batches += 1
        if batches:
            record["loss_imbalance"] = total_im / batches
            record["loss_ce"] = total_ce / batches
            _check_finite(record["loss_imbalance"] + record["loss_ce"], 3,
                          epoch)
        if report is not None:
            report.epochs.append(record)
    # labels from the final parameters at the terminal mass fraction
    if config.stage3_epochs > 0:
        _, mixed = _full_predictions(config, data, params)
        try:
            labels = _assign_labels(config, mixed,
                                    lambda_at(schedule,
                                              schedule.total_steps))
        except (ValueError, FloatingPointError, OverflowError) as exc:
            warnings.warn(f"final label solve failed: {exc}")
    return params, labels


def predicted_labels(config, data, params, labels=None):
    """Hard labels for evaluation; unassigned rows fall back to the argmax
    of their soft transport row, and without stage-3 labels the mixed
    prediction's argmax is used."""
    if labels is None:
        _, mixed = _full_predictions(config, data, params)
        return mixed.p_hat.argmax(axis=1)
    hard = labels.hard.copy()
    missing = ~labels.assigned
    if missing.any():
        hard[missing] = labels.soft[missing].argmax(axis=1)
    return hard


def run_experiment(config, data=None):
    """Full pipeline: stages 1-3, evaluation, report (and report files)."""
    start = time.perf_counter()
    if data is None:
        data = _load_data(config)
    net_config = NetworkConfig(
        view_dims=tuple(x.shape[1] for x in data.views),
        n_classes=data.n_classes, encoder_dims=config.encoder_dims,
        projection_dim=config.projection_dim, tau_l=config.tau_l)
    params = init_params(net_config, seed=config.seed)
    report = ExperimentReport(config=config.to_dict())
    labels = None
    try:
        train_stage1(config, data, params, report)
        train_stage2(config, data, params, report)
        params, labels = train_stage3(config, data, params, report)
    except TrainingDiverged as exc:
        report.failure = str(exc)
    if report.failure is None:
        pred = predicted_labels(config, data, params, labels)
        m = evaluate(pred, data.labels)
        report.metrics = {"acc": m.acc, "nmi": m.nmi, "purity": m.purity,
                          "group_acc": m.group_acc}
        report.predicted = [int(p) for p in pred]
        counts = np.bincount(pred, minlength=data.n_classes)
        report.pseudo_class_counts = counts.tolist()
        report.true_class_counts = data.class_counts.tolist()
        if labels is not None:
            report.assigned_fraction = labels.n_assigned / data.n_samples
    report.wall_clock_seconds = time.perf_counter() - start
    if config.out_dir:
        write_report_files(report, config.out_dir)
    return report


_TIMING_FIELDS = ("wall_clock_seconds",)


def report_json(report, include_timing=True):
    payload = report.to_dict()
    if not include_timing:
        for key in _TIMING_FIELDS:
            payload.pop(key, None)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_report_files(report, out_dir):
    """report.json plus a flat per-epoch metrics.csv for plotting."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write(report_json(report))
    columns = ["stage", "epoch", "loss_recon", "loss_align",
               "loss_imbalance", "loss_ce", "lambda", "solver_iterations",
               "solver_converged"]
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in report.epochs:
            fh.write(",".join(_csv_cell(row.get(c)) for c in columns) + "\n")


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)
