"""Experiment harness: deterministic training runs with CSV telemetry.

A run is fully described by a RunConfig and reproduces byte-identically from
its seed.  The wall_clock_s column therefore comes from a deterministic
work-proportional counter by default ("work" clock, pseudo-seconds scaled
from evaluation counts); compare runs switch to the real clock because their
stopping rule is an actual time budget.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, netcore, optimizer
from .data import (
    SamplerConfig,
    load_idx,
    split_subminibatches,
    stratified_minibatch,
    synth_gaussian,
)
from .exceptions import ConfigError, NumericError
from .netcore import Batch, LossConfig

CSV_VERSION = "subtrust-csv v1"
CSV_COLUMNS = (
    "epoch",
    "wall_clock_s",
    "full_train_loss",
    "mean_minibatch_loss",
    "train_accuracy",
    "stage1_accept_rate",
    "mean_delta1",
    "eig_min",
    "eig_max",
)
# nominal conversion from work units (one unit ~ one sample-layer sweep)
# to the pseudo-seconds written by the deterministic clock
WORK_UNIT_SECONDS = 1e-7


@dataclass
class RunConfig:
    """Everything needed to reproduce one training run."""

    arch: str = "784-50-10"
    strategy: str = "two_stage"          # strategy name or baseline method
    epochs: int = 10
    minibatch_size: int = 500
    reg_coeff: float = 1e-4
    eps0: float = 0.01
    seed: int = 0
    data_images: str | None = None
    data_labels: str | None = None
    synth: str | None = None             # "C,n,d,spread"
    train_limit: int | None = None
    out_dir: str | None = None
    time_budget: float | None = None     # real seconds; None = epoch cap only
    step_size: float = 1e-3              # baselines only
    nnz_per_unit: int = 15
    init_scale: float = 1.0
    clock: str = "work"                  # "work" (deterministic) or "real"
    label: str | None = None             # series name in CSVs/plots

    def __post_init__(self):
        known = optimizer.STRATEGIES + baselines.METHODS
        if self.strategy not in known:
            raise ConfigError(f"unknown strategy {self.strategy!r}; pick one of {known}")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be positive")
        if self.clock not in ("work", "real"):
            raise ConfigError("clock must be 'work' or 'real'")

    @property
    def series(self):
        return self.label if self.label is not None else self.strategy


@dataclass
class EpochRecord:
    epoch: int
    wall_clock_s: float
    full_train_loss: float
    mean_minibatch_loss: float
    train_accuracy: float
    stage1_accept_rate: float | None
    mean_delta1: float | None
    eig_min: float | None
    eig_max: float | None

    def csv_row(self):
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, int):
                return str(x)
            return repr(float(x))

        return ",".join(
            fmt(v)
            for v in (
                self.epoch, self.wall_clock_s, self.full_train_loss,
                self.mean_minibatch_loss, self.train_accuracy,
                self.stage1_accept_rate, self.mean_delta1,
                self.eig_min, self.eig_max,
            )
        )


@dataclass
class RunLog:
    config: RunConfig
    records: list = field(default_factory=list)
    first_batch_fingerprint: str = ""
    aborted: str | None = None           # error text when the run diverged

    @property
    def final_loss(self):
        return self.records[-1].full_train_loss if self.records else np.nan


def parse_arch(arch):
    """Layer widths from a dash-separated string like '784-50-10'."""
    try:
        sizes = [int(tok) for tok in str(arch).split("-")]
    except ValueError as exc:
        raise ConfigError(f"bad architecture string {arch!r}") from exc
    return netcore.check_sizes(sizes)


def load_dataset(cfg):
    """Dataset selected by the config: IDX pair, or the synthetic fallback."""
    if cfg.data_images and cfg.data_labels:
        ds = load_idx(cfg.data_images, cfg.data_labels)
    elif cfg.synth:
        try:
            c, n, d, spread = (tok.strip() for tok in cfg.synth.split(","))
            ds = synth_gaussian(int(c), int(n), int(d), float(spread), seed=cfg.seed)
        except ValueError as exc:
            raise ConfigError(f"bad synth spec {cfg.synth!r}; want C,n,d,spread") from exc
    else:
        raise ConfigError("no data source: give IDX paths or a synth spec")
    return ds.subset(cfg.train_limit)


def config_echo(cfg):
    fields = (
        "arch", "strategy", "epochs", "minibatch_size", "reg_coeff", "eps0",
        "seed", "train_limit", "step_size", "nnz_per_unit", "init_scale",
        "clock", "time_budget",
    )
    return " ".join(f"{name}={getattr(cfg, name)}" for name in fields)


class _Clock:
    """Real or deterministic work-based time source for one run."""

    def __init__(self, mode):
        self.mode = mode
        self.units = 0.0
        self._t0 = time.perf_counter()

    def add_work(self, units):
        self.units += units

    def elapsed(self):
        if self.mode == "real":
            return time.perf_counter() - self._t0
        return self.units * WORK_UNIT_SECONDS


def _write_csv_header(fh, cfg):
    fh.write(f"# {CSV_VERSION}\n")
    fh.write(f"# config: {config_echo(cfg)}\n")
    fh.write(",".join(CSV_COLUMNS) + "\n")
    fh.flush()


def _full_metrics(params, dataset, loss_cfg):
    batch = Batch(dataset.inputs, dataset.labels)
    loss = netcore.loss_only(params, batch, loss_cfg)
    proba = netcore.predict_proba(params, dataset.inputs)
    acc = float(np.mean(np.argmax(proba, axis=1) == dataset.labels))
    return loss, acc


def run_train(cfg, dataset=None, csv_path=None):
    """Execute one run: bootstrap (for trust-region strategies) plus
    epochs x (train_size // minibatch_size) iterations, logging one record
    per epoch and appending CSV rows as they are produced."""
    if dataset is None:
        dataset = load_dataset(cfg)
    sizes = parse_arch(cfg.arch)
    if sizes[0] != dataset.n_features:
        raise ConfigError(
            f"arch input width {sizes[0]} != dataset features {dataset.n_features}"
        )
    if sizes[-1] != dataset.n_classes:
        raise ConfigError(
            f"arch output width {sizes[-1]} != dataset classes {dataset.n_classes}"
        )
    loss_cfg = LossConfig(reg_coeff=cfg.reg_coeff)
    n_layers = len(sizes) - 1
    sampler = SamplerConfig(minibatch_size=cfg.minibatch_size, sub_count=n_layers,
                            seed=cfg.seed)
    if cfg.minibatch_size % dataset.n_classes != 0:
        raise ConfigError(
            f"minibatch_size {cfg.minibatch_size} must divide by "
            f"{dataset.n_classes} classes"
        )

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    params = netcore.init_sparse(sizes, seeds[0], nnz_per_unit=cfg.nnz_per_unit,
                                 scale=cfg.init_scale)
    rng = np.random.default_rng(seeds[1])
    batches_per_epoch = max(1, dataset.n // cfg.minibatch_size)
    is_baseline = cfg.strategy in baselines.METHODS

    log = RunLog(config=cfg)
    clock = _Clock(cfg.clock)
    fh = open(csv_path, "w", encoding="utf-8", newline="\n") if csv_path else None
    if fh:
        _write_csv_header(fh, cfg)

    state = None
    fo_state = None
    try:
        if not is_baseline:
            boot_batch = stratified_minibatch(dataset, sampler, rng)
            log.first_batch_fingerprint = _fingerprint(boot_batch)
            state = optimizer.bootstrap(params, boot_batch, cfg.eps0, loss_cfg)
            state.rng = rng
            clock.add_work(3.0 * boot_batch.n)
        else:
            fo_state = baselines.first_order_init(cfg.strategy, params,
                                                  step_size=cfg.step_size)

        budget_hit = False
        for epoch in range(1, cfg.epochs + 1):
            batch_losses = []
            accepts = []
            delta1s = []
            eig_mins = []
            eig_maxs = []
            for _ in range(batches_per_epoch):
                batch = stratified_minibatch(dataset, sampler, rng)
                if not log.first_batch_fingerprint:
                    log.first_batch_fingerprint = _fingerprint(batch)
                if is_baseline:
                    loss, trace = netcore.forward(params, batch, loss_cfg)
                    grad = netcore.backward(params, trace, batch, loss_cfg)
                    params, fo_state = baselines.first_order_step(fo_state, params, grad)
                    batch_losses.append(loss)
                    clock.add_work(3.0 * batch.n)
                else:
                    subbatches = split_subminibatches(batch, n_layers)
                    state, report = optimizer.variant_iterate(
                        cfg.strategy, state, batch, subbatches, loss_cfg
                    )
                    params = state.params
                    batch_losses.append(report.loss_before)
                    accepts.append(1.0 if report.stage1_executed else 0.0)
                    delta1s.append(state.delta1)
                    eig_mins.append(report.eig_min)
                    eig_maxs.append(report.eig_max)
                    clock.add_work(report.work_units)
                if cfg.time_budget is not None and clock.elapsed() >= cfg.time_budget:
                    budget_hit = True
                    break
            full_loss, acc = _full_metrics(params, dataset, loss_cfg)
            clock.add_work(dataset.n)
            record = EpochRecord(
                epoch=epoch,
                wall_clock_s=clock.elapsed(),
                full_train_loss=full_loss,
                mean_minibatch_loss=float(np.mean(batch_losses)) if batch_losses else np.nan,
                train_accuracy=acc,
                stage1_accept_rate=None if is_baseline else float(np.mean(accepts)) if accepts else 0.0,
                mean_delta1=None if is_baseline else float(np.mean(delta1s)) if delta1s else np.nan,
                eig_min=None if is_baseline else _nanmin(eig_mins),
                eig_max=None if is_baseline else _nanmax(eig_maxs),
            )
            log.records.append(record)
            if fh:
                fh.write(record.csv_row() + "\n")
                fh.flush()
            if budget_hit:
                break
    except NumericError as exc:
        log.aborted = str(exc)  # keep the partial log
    finally:
        if fh:
            fh.close()
    return log


def _nanmin(values):
    values = [v for v in values if np.isfinite(v)]
    return float(min(values)) if values else np.nan


def _nanmax(values):
    values = [v for v in values if np.isfinite(v)]
    return float(max(values)) if values else np.nan


def _fingerprint(batch):
    if batch.indices is None:
        return ""
    return ",".join(str(int(i)) for i in batch.indices[:16])


def run_ablation(base_cfg, strategies, out_dir=None, dataset=None):
    """One run per strategy with identical seed, data order and machinery.

    Failures are isolated: a run that errors is recorded as aborted while the
    others complete.  Returns {strategy: RunLog}.
    """
    if not strategies:
        raise ConfigError("no strategies given")
    if dataset is None:
        dataset = load_dataset(base_cfg)
    out = {}
    for strategy in strategies:
        cfg = replace(base_cfg, strategy=strategy, label=strategy)
        csv_path = None
        if out_dir is not None:
            csv_path = f"{out_dir}/ablate_{strategy}.csv"
        try:
            out[strategy] = run_train(cfg, dataset=dataset, csv_path=csv_path)
        except (ConfigError, NumericError) as exc:
            log = RunLog(config=cfg)
            log.aborted = str(exc)
            out[strategy] = log
    if out_dir is not None:
        _write_combined(f"{out_dir}/ablation_combined.csv", base_cfg, out)
    return out


def run_compare(base_cfg, methods=("two_stage", "adam", "rmsprop"),
                step_grid=(0.3, 1.0, 3.0), out_dir=None, dataset=None):
    """Equal-budget comparison runs; first-order methods fan out over the
    step-size grid.  Uses the real clock when a time budget is set."""
    if not methods:
        raise ConfigError("no methods given")
    if dataset is None:
        dataset = load_dataset(base_cfg)
    clock = "real" if base_cfg.time_budget is not None else base_cfg.clock
    out = {}
    for method in methods:
        if method in baselines.METHODS:
            for factor in step_grid:
                label = f"{method}@x{factor:g}"
                cfg = replace(
                    base_cfg, strategy=method, clock=clock, label=label,
                    step_size=base_cfg.step_size * factor,
                )
                csv_path = f"{out_dir}/compare_{method}_x{factor:g}.csv" if out_dir else None
                out[label] = run_train(cfg, dataset=dataset, csv_path=csv_path)
        else:
            cfg = replace(base_cfg, strategy=method, clock=clock, label=method)
            csv_path = f"{out_dir}/compare_{method}.csv" if out_dir else None
            out[method] = run_train(cfg, dataset=dataset, csv_path=csv_path)
    if out_dir is not None:
        _write_combined(f"{out_dir}/compare_combined.csv", base_cfg, out)
    return out


def _write_combined(path, base_cfg, logs):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {CSV_VERSION}\n")
        fh.write(f"# config: {config_echo(base_cfg)}\n")
        fh.write("series," + ",".join(CSV_COLUMNS) + "\n")
        for name in sorted(logs):
            log = logs[name]
            for rec in log.records:
                fh.write(f"{name},{rec.csv_row()}\n")
            if log.aborted:
                fh.write(f"# aborted {name}: {log.aborted}\n")
