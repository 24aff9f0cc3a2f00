"""Training orchestration: epoch budgets, runs, sweeps and the results store.

A run is fully described by a TrainConfig. Training evaluates on the
validation split every epoch, selects the minimum-validation-loss epoch
(earliest on ties), and computes test accuracy exactly once, on that
checkpoint. Sweeps enumerate a grid of config overrides, run each one,
and rank completed runs by the selected validation loss.

Results store layout: ``<root>/<sweep>/<config-hash>/`` holding
``config.resolved``, ``metrics.csv``, ``checkpoint.bin`` and ``status``.
"""

from __future__ import annotations

import itertools
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from .augment import make_augment_fn
from .backbones import Backbone
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, parse_flat_config, render_flat_config
from .data import BatchPlan, DatasetSplits, UnlabeledExample, iterate_batches, sample_labeled_subset
from .errors import ConfigError, TrainingDiverged
from .evaluation import evaluate_split
from .ema import ema_update, eval_params, init_teacher
from .fixmatch import loss_on_prepared, prepare_batch
from .metrics import MetricsRecord, read_metrics_csv, write_metrics_csv
from .mixmatch import compose_batch, mixmatch_loss, rampup_lambda
from .optim import OptimizerConfig, OptState, optimizer_step
from .seeding import rng_for
from .transfer import apply_regime, load_pretrained, train_supervised

RUNS_DIR_ENV = "SSLMATCH_RUNS_DIR"
SSL_METHODS = ("mixmatch", "fixmatch")


def runs_root(explicit=None) -> Path:
    """Output root: explicit argument, then the environment override, then ./runs."""
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(RUNS_DIR_ENV, "runs"))


# -- epoch budget -------------------------------------------------------------

def epochs_for_budget(n_batches: int, n_l: int, batch_size: int) -> int:
    """Epochs that spend a total budget of n_batches labeled batches.

    An epoch is n_l div batch_size labeled batches, so the count is
    round(n_batches / (n_l div batch_size)) with half-away-from-zero
    rounding.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if n_batches < 0:
        raise ConfigError(f"n_batches must be >= 0, got {n_batches}")
    per_epoch = n_l // batch_size
    if per_epoch == 0:
        raise ConfigError(
            f"n_l={n_l} gives zero batches of size {batch_size} per epoch; "
            "use a smaller batch size or more labels")
    return int(math.floor(n_batches / per_epoch + 0.5))


# -- sweep grids --------------------------------------------------------------

@dataclass
class SweepGrid:
    axes: dict[str, list]
    stage: str = "primary"

    def __post_init__(self):
        if self.stage not in ("primary", "secondary"):
            raise ConfigError(f"stage must be primary or secondary, got {self.stage!r}")
        if not self.axes:
            raise ConfigError("grid has no axes")
        for key, values in self.axes.items():
            if not isinstance(values, (list, tuple)) or len(values) == 0:
                raise ConfigError(f"axis {key!r} must be a nonempty list")

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.axes.values())


def enumerate_grid(grid: SweepGrid) -> list[dict]:
    """Cartesian product of the axes, in deterministic axis order."""
    keys = list(grid.axes)
    return [dict(zip(keys, combo))
            for combo in itertools.product(*(grid.axes[k] for k in keys))]


def mixmatch_primary_grid() -> SweepGrid:
    """Primary search grid: 2 * 1 * 2 * 4 * 4 * 5 = 320 configurations."""
    return SweepGrid(axes={
        "learning_rate": [0.01, 0.001],
        "optimizer": ["adam"],
        "epochs": [500, 1000],
        "mixmatch.temperature": [0.25, 0.5, 0.75, 0.9],
        "mixmatch.alpha": [0.25, 0.5, 0.75, 0.9],
        "mixmatch.lambda_u": [12.5, 25.0, 50.0, 100.0, 150.0],
    }, stage="primary")


def fixmatch_primary_grid() -> SweepGrid:
    """Primary search grid: 1 * 2 * 2 * 2 = 8 configurations."""
    return SweepGrid(axes={
        "learning_rate": [0.03],
        "optimizer": ["adam", "sgd_momentum"],
        "epochs": [1000, 2000],
        "fixmatch.lambda_u": [5.0, 25.0],
    }, stage="primary")


def transfer_grid() -> SweepGrid:
    """Baseline grid: learning rate x weight decay x freezing regime, 8 runs."""
    return SweepGrid(axes={
        "transfer.learning_rate": [1e-3, 5e-4],
        "transfer.weight_decay": [0.0, 1e-4],
        "transfer.regime": ["fine_tuning", "feature_extraction"],
    }, stage="primary")


def secondary_grid(method: str) -> SweepGrid:
    """Subset-size-dependent sweep: EMA decay x total batch budget.

    The explicit null epochs axis hands epoch selection back to the
    budget formula, overriding any epoch count a primary grid fixed.
    """
    budgets = {"mixmatch": [12000, 15000], "fixmatch": [24000, 30000]}
    if method not in budgets:
        raise ConfigError(f"secondary grid is defined for {tuple(budgets)}, got {method!r}")
    return SweepGrid(axes={
        "ema_decay": [0.0, 0.999],
        "n_batches": budgets[method],
        "epochs": [None],
    }, stage="secondary")


# -- single run ---------------------------------------------------------------

@dataclass
class RunResult:
    config: TrainConfig
    run_hash: str
    history: list[MetricsRecord]
    checkpoint: Checkpoint
    best_epoch: int
    best_val_loss: float
    best_val_acc: float
    test_acc: float | None
    wall_seconds: float
    run_dir: Path | None = None


def _materialize_pools(cfg: TrainConfig, splits: DatasetSplits) -> DatasetSplits:
    """Apply balanced label subsampling; the remainder becomes the unlabeled pool.

    With n_l unset (use every label) or a subset that exhausts the pool,
    SSL methods treat the whole training set, labels dropped, as unlabeled.
    """
    if cfg.n_l is None:
        labeled = list(splits.train_labeled)
        unlabeled = []
    else:
        labeled, unlabeled = sample_labeled_subset(
            splits.train_labeled, cfg.n_l, cfg.seed, splits.num_classes)
    if cfg.method in SSL_METHODS and not unlabeled:
        unlabeled = [UnlabeledExample(image=ex.image, source_index=i)
                     for i, ex in enumerate(splits.train_labeled)]
    return DatasetSplits(train_labeled=labeled, train_unlabeled=unlabeled,
                         validation=splits.validation, test=splits.test,
                         class_names=splits.class_names)


def _build_model(cfg: TrainConfig, splits: DatasetSplits) -> Backbone:
    if not splits.train_labeled:
        raise ConfigError("training split is empty")
    sample = splits.train_labeled[0].image
    use_torchvision_weights = (cfg.method == "transfer"
                               and cfg.arch == "wrn-50-2"
                               and cfg.transfer.pretrained_path is None)
    model = Backbone(cfg.arch, num_classes=splits.num_classes,
                     in_channels=int(sample.shape[0]), input_side=cfg.image_side,
                     pretrained=use_torchvision_weights, seed=cfg.seed)
    if cfg.method == "transfer" and cfg.transfer.pretrained_path is not None:
        load_pretrained(model, cfg.transfer.pretrained_path)
    return model


def _resolve_epochs(cfg: TrainConfig, n_l_effective: int) -> int:
    if cfg.epochs is not None:
        if cfg.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {cfg.epochs}")
        return cfg.epochs
    if cfg.n_batches is None:
        raise ConfigError("set either epochs or n_batches")
    return epochs_for_budget(cfg.n_batches, n_l_effective, cfg.batch_size)


def _run_ssl(cfg: TrainConfig, work: DatasetSplits, model: Backbone,
             keep_zero_ema_state: bool) -> tuple[list[MetricsRecord], Checkpoint, int, float, float]:
    n_l_eff = len(work.train_labeled)
    epochs = _resolve_epochs(cfg, n_l_eff)
    steps_per_epoch = n_l_eff // cfg.batch_size
    total_steps = epochs * steps_per_epoch

    mm_cfg = cfg.mixmatch
    if cfg.method == "mixmatch" and mm_cfg.rampup_steps is None:
        mm_cfg = replace(mm_cfg, rampup_steps=max(1, total_steps // 4))
    mu = cfg.fixmatch.mu if cfg.method == "fixmatch" else 1
    plan = BatchPlan(labeled_batch_size=cfg.batch_size, unlabeled_ratio=mu,
                     shuffle_seed=cfg.seed)
    weak_fn = make_augment_fn(cfg.weak_spec())
    strong_fn = make_augment_fn(cfg.strong_spec())
    opt_cfg = OptimizerConfig(kind=cfg.optimizer, learning_rate=cfg.learning_rate,
                              weight_decay=cfg.weight_decay)
    opt_state = OptState()
    ema_state = None
    if cfg.ema_decay > 0 or keep_zero_ema_state:
        ema_state = init_teacher(model.param_vector(), cfg.ema_decay)

    history: list[MetricsRecord] = []
    best = {"val_loss": float("inf"), "epoch": 0, "val_acc": 0.0,
            "params": model.param_vector(), "teacher": None}
    step = 0
    t0 = time.monotonic()
    for epoch in range(epochs):
        rng = rng_for(cfg.seed, "ssl-epoch", epoch)
        sums = {"total": 0.0, "sup": 0.0, "unsup": 0.0, "mask": 0.0}
        lam_u = 0.0
        for x_batch, u_batch in iterate_batches(work, plan, epoch):
            if cfg.method == "mixmatch":
                lam_u = rampup_lambda(step, mm_cfg)
                x_mixed, u_mixed = compose_batch(x_batch, u_batch, mm_cfg, model, rng, weak_fn)
                out = mixmatch_loss(model, x_mixed, u_mixed, lam_u, mm_cfg.k, len(x_batch))
                mask_rate = None
            else:
                lam_u = cfg.fixmatch.lambda_u
                prepared = prepare_batch(model, x_batch, u_batch, cfg.fixmatch,
                                         rng, weak_fn, strong_fn)
                out = loss_on_prepared(model, prepared, cfg.fixmatch)
                mask_rate = out.mask_rate
                sums["mask"] += mask_rate
            total = float(out.total.detach())
            if not math.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite training loss at epoch {epoch + 1}, step {step}",
                    record=MetricsRecord(epoch=epoch + 1, step=step, train_total=total,
                                         train_sup=float(out.supervised.detach()),
                                         train_unsup=float(out.unsupervised.detach()),
                                         lambda_u=lam_u,
                                         wall_seconds=time.monotonic() - t0))
            model.zero_grad()
            out.total.backward()
            opt_state = optimizer_step(model, model.grad_vector(), opt_state, opt_cfg)
            if ema_state is not None:
                ema_state = ema_update(ema_state, model.param_vector())
            sums["total"] += total
            sums["sup"] += float(out.supervised.detach())
            sums["unsup"] += float(out.unsupervised.detach())
            step += 1

        student = model.param_vector()
        val_loss, val_acc = evaluate_split(model, work.validation,
                                           params=eval_params(ema_state, student))
        history.append(MetricsRecord(
            epoch=epoch + 1, step=step,
            train_total=sums["total"] / steps_per_epoch,
            train_sup=sums["sup"] / steps_per_epoch,
            train_unsup=sums["unsup"] / steps_per_epoch,
            lambda_u=lam_u,
            mask_rate=(sums["mask"] / steps_per_epoch if cfg.method == "fixmatch" else None),
            val_loss=val_loss, val_acc=val_acc,
            wall_seconds=time.monotonic() - t0))
        if val_loss < best["val_loss"]:
            best.update(val_loss=val_loss, epoch=epoch + 1, val_acc=val_acc, params=student)
            best["teacher"] = (ema_state.teacher_params.copy()
                               if ema_state is not None and ema_state.beta > 0 else None)

    ckpt = Checkpoint(architecture_id=cfg.arch, num_classes=model.num_classes,
                      params=best["params"], ema_params=best["teacher"], opt_state=None,
                      epoch=best["epoch"], config=cfg.to_flat())
    return history, ckpt, best["epoch"], best["val_loss"], best["val_acc"]


def _run_baseline(cfg: TrainConfig, work: DatasetSplits, model: Backbone
                  ) -> tuple[list[MetricsRecord], Checkpoint, int, float, float]:
    tcfg = cfg.transfer
    if cfg.method == "transfer":
        apply_regime(model, tcfg.regime)
    result = train_supervised(model, work, tcfg, seed=cfg.seed, spec=cfg.weak_spec())
    ckpt = Checkpoint(architecture_id=cfg.arch, num_classes=model.num_classes,
                      params=result.best_params, ema_params=None, opt_state=None,
                      epoch=result.best_epoch, config=cfg.to_flat())
    return result.history, ckpt, result.best_epoch, result.best_val_loss, result.best_val_acc


def run_training(cfg: TrainConfig, splits: DatasetSplits, runs_dir=None,
                 sweep_name: str = "adhoc", existing: str = "error",
                 _keep_zero_ema_state: bool = False) -> RunResult:
    """Execute one run end to end and persist it to the results store.

    ``runs_dir=None`` keeps the run in memory only. ``existing`` controls
    what happens when the store already holds a completed run for this
    config hash: "error" refuses, "reuse" returns the stored result,
    "overwrite" retrains.
    """
    if existing not in ("error", "reuse", "overwrite"):
        raise ConfigError(f"existing must be error, reuse or overwrite, got {existing!r}")
    run_hash = cfg.resolved_hash()
    run_dir = None
    if runs_dir is not None:
        run_dir = runs_root(runs_dir) / sweep_name / run_hash
        status_file = run_dir / "status"
        if status_file.exists() and status_file.read_text().startswith("complete"):
            if existing == "error":
                raise ConfigError(
                    f"run {sweep_name}/{run_hash} already completed; pass force to redo it")
            if existing == "reuse":
                return load_run(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.resolved").write_text(render_flat_config(cfg.to_flat()))
        status_file.write_text("running\n")

    t0 = time.monotonic()
    try:
        work = _materialize_pools(cfg, splits)
        model = _build_model(cfg, work)
        if cfg.method in SSL_METHODS:
            history, ckpt, best_epoch, best_val_loss, best_val_acc = _run_ssl(
                cfg, work, model, _keep_zero_ema_state)
        else:
            history, ckpt, best_epoch, best_val_loss, best_val_acc = _run_baseline(
                cfg, work, model)
        test_acc = None
        if work.test:
            _, test_acc = evaluate_split(model, work.test, params=ckpt.eval_vector())
    except Exception as exc:
        if run_dir is not None:
            (run_dir / "status").write_text(f"failed: {exc}\n")
        raise
    wall = time.monotonic() - t0

    final = None
    if history:
        last = history[-1]
        final = MetricsRecord(epoch=last.epoch, step=last.step, train_total=last.train_total,
                              train_sup=last.train_sup, train_unsup=last.train_unsup,
                              lambda_u=last.lambda_u, mask_rate=last.mask_rate,
                              val_loss=best_val_loss, val_acc=best_val_acc,
                              test_acc=test_acc, wall_seconds=wall)
    result = RunResult(config=cfg, run_hash=run_hash, history=history, checkpoint=ckpt,
                       best_epoch=best_epoch, best_val_loss=best_val_loss,
                       best_val_acc=best_val_acc, test_acc=test_acc, wall_seconds=wall,
                       run_dir=run_dir)
    if run_dir is not None:
        write_metrics_csv(history, run_dir / "metrics.csv", final_record=final)
        save_checkpoint(ckpt, run_dir / "checkpoint.bin")
        (run_dir / "status").write_text("complete\n")
    return result


def load_run(run_dir) -> RunResult:
    """Rehydrate a completed run from the results store."""
    run_dir = Path(run_dir)
    cfg = TrainConfig.from_flat(parse_flat_config((run_dir / "config.resolved").read_text()))
    rows = read_metrics_csv(run_dir / "metrics.csv")
    if not rows:
        raise ConfigError(f"{run_dir} has an empty metrics.csv")
    final = rows[-1]
    history = [MetricsRecord(**row) for row in rows[:-1]]
    ckpt = load_checkpoint(run_dir / "checkpoint.bin")
    return RunResult(config=cfg, run_hash=run_dir.name, history=history, checkpoint=ckpt,
                     best_epoch=ckpt.epoch, best_val_loss=final["val_loss"],
                     best_val_acc=final["val_acc"], test_acc=final["test_acc"],
                     wall_seconds=final["wall_seconds"], run_dir=run_dir)


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepRow:
    run_hash: str
    overrides: dict
    n_l: int | None
    status: str                  # "complete" | "failed: ..."
    best_val_loss: float = float("inf")
    best_val_acc: float | None = None
    test_acc: float | None = None
    wall_seconds: float = 0.0
    run_dir: Path | None = None


@dataclass
class SweepResult:
    stage: str
    rows: list[SweepRow] = field(default_factory=list)

    def ranked(self) -> list[SweepRow]:
        """Completed runs first, by selected validation loss; config order breaks ties."""
        order = {id(row): i for i, row in enumerate(self.rows)}
        return sorted(self.rows, key=lambda r: (r.best_val_loss, order[id(r)]))


def sweep(stage: str, base_cfg: TrainConfig, grid: SweepGrid, splits: DatasetSplits,
          runs_dir=None, sweep_name: str | None = None,
          n_l_values: list[int] | None = None,
          max_configs: int | None = None) -> SweepResult:
    """Run every grid point; failures are recorded and the sweep continues.

    The primary stage pins n_l = 200; the secondary stage repeats the
    grid for each requested n_l value. ``max_configs`` truncates the
    enumeration (deterministic order), for desk-scale subgrids.
    """
    if stage != grid.stage:
        raise ConfigError(f"grid is a {grid.stage} grid, sweep called with stage={stage!r}")
    if stage == "primary":
        n_ls: list[int | None] = [200]
    else:
        if not n_l_values:
            raise ConfigError("secondary sweep needs n_l_values")
        n_ls = list(n_l_values)
    sweep_name = sweep_name or f"{base_cfg.method}-{stage}"
    deltas = enumerate_grid(grid)
    if max_configs is not None:
        deltas = deltas[:max_configs]
    result = SweepResult(stage=stage)
    for n_l in n_ls:
        for overrides in deltas:
            full = dict(overrides)
            full["n_l"] = n_l
            cfg = base_cfg.with_overrides(full)
            try:
                run = run_training(cfg, splits, runs_dir=runs_dir, sweep_name=sweep_name,
                                   existing="reuse")
                result.rows.append(SweepRow(
                    run_hash=run.run_hash, overrides=full, n_l=n_l, status="complete",
                    best_val_loss=run.best_val_loss, best_val_acc=run.best_val_acc,
                    test_acc=run.test_acc, wall_seconds=run.wall_seconds,
                    run_dir=run.run_dir))
            except Exception as exc:
                result.rows.append(SweepRow(
                    run_hash=cfg.resolved_hash(), overrides=full, n_l=n_l,
                    status=f"failed: {exc}"))
    return result


# -- EMA ablation harness ------------------------------------------------------

@dataclass
class EmaAblationReport:
    """Cells keyed by (method, n_l, beta): best test accuracy, plus run hashes."""
    betas: tuple[float, ...]
    n_l_values: list[int]
    methods: list[str]
    cells: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)


def ema_ablation(base_cfg: TrainConfig, splits: DatasetSplits,
                 n_l_values: list[int], betas=(0.0, 0.999),
                 methods: list[str] | None = None, runs_dir=None) -> EmaAblationReport:
    """Compare mean-teacher decay settings method by method.

    Produces one cell per (method, n_l, beta) holding the best test
    accuracy over that cell's runs. The transfer baseline carries no
    teacher, so only beta = 0 applies to it.
    """
    methods = methods or [base_cfg.method]
    report = EmaAblationReport(betas=tuple(betas), n_l_values=list(n_l_values),
                               methods=list(methods))
    for method in methods:
        for n_l in n_l_values:
            for beta in betas:
                if method not in SSL_METHODS and beta > 0:
                    continue
                cfg = base_cfg.with_overrides(
                    {"method": method, "n_l": n_l, "ema_decay": beta})
                run = run_training(cfg, splits, runs_dir=runs_dir,
                                   sweep_name=f"ema-ablation-{method}", existing="reuse")
                key = (method, n_l, beta)
                prev = report.cells.get(key)
                if prev is None or (run.test_acc or 0.0) > prev:
                    report.cells[key] = run.test_acc
                report.provenance.setdefault(key, []).append(run.run_hash)
    return report
