"""Experiment harness: repetition grids over sample-size setups and missing
probabilities, and the labeled-dataset path with calibrated priors.

Outputs are three CSV files in one directory:

``long.csv``
    one row per (setup, missing_prob, method, rep) with the clustering error
    and a failure note; a pure function of the configuration and seed.
``runtimes.csv``
    wall time per row, kept apart so ``long.csv`` stays byte-identical
    across reruns.
``summary.csv``
    mean error, standard error and counts per (setup, missing_prob, method).

Random streams are derived from ``SeedSequence`` keys, never from
execution order, so the worker count does not change any result.
"""
from __future__ import annotations

import csv
import io
import math
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import (
    BaselineConfig,
    fcm_ocs,
    fuzzy_cmeans,
    gibbs_impute,
    hierarchical,
    kmeans,
    kpod,
    mean_impute,
    random_cluster,
)
from .clusterer import MAX_EXHAUSTIVE_N, ClusteringContext, InfeasibleSizeError
from .core import LabelFunction, OptclustError, Partition, PointSet, clustering_error
from .posterior import DEFAULT_MC_SAMPLES, GIWModel, ModelSpec
from .simgen import MODEL_NAMES, CalibratedPrior, calibrate_prior, generate_instance, standard_model

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "METHODS",
    "MethodSpec",
    "BaselineSettings",
    "DatasetSettings",
    "ExperimentConfig",
    "MethodOutcome",
    "RepetitionResult",
    "ExperimentResult",
    "load_config",
    "parse_config",
    "build_model",
    "run_repetition",
    "run_experiment",
    "run_dataset",
    "read_labeled_table",
    "summarize",
]

POSTERIOR_METHODS = ("Optimal", "Pmax", "Pseed")
IMPUTED_METHODS = ("KM", "FCM", "HierSi", "HierCo")
DIRECT_METHODS = ("KPOD", "FCMOCS")
OTHER_METHODS = ("KMmean", "Random")
METHODS = POSTERIOR_METHODS + IMPUTED_METHODS + DIRECT_METHODS + OTHER_METHODS
EXHAUSTIVE_METHODS = ("Optimal", "Pmax")

LONG_HEADER = ("setup", "missing_prob", "method", "rep", "error", "note")
RUNTIME_HEADER = ("setup", "missing_prob", "method", "rep", "runtime_ms")
SUMMARY_HEADER = ("setup", "missing_prob", "method", "mean_error", "se", "count", "failed")

_TAG_DATA = 1
_TAG_METHOD = 2
_TAG_POSTERIOR = 3
_TAG_GIBBS = 4


class ConfigError(OptclustError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    """One entry of the method list; ``label`` names it in the outputs."""

    name: str
    label: str
    hamming_radius: int = 1
    n_seeds: int = 5
    mc_samples: int = DEFAULT_MC_SAMPLES
    neighborhood: str = "swap"

    @property
    def key(self) -> int:
        return zlib.crc32(self.label.encode())


@dataclass(frozen=True)
class BaselineSettings:
    restarts: int = 10
    max_iters: int = 300
    tol: float = 1e-6
    fuzzifier: float = 2.0
    ocs_threshold: float = 0.2
    gibbs_sweeps: int = 500
    gibbs_burn_in: int = 100

    def config(self, seed=None) -> BaselineConfig:
        return BaselineConfig(
            k=2,
            fuzzifier=self.fuzzifier,
            max_iters=self.max_iters,
            tol=self.tol,
            restarts=self.restarts,
            seed=seed,
            ocs_threshold=self.ocs_threshold,
        )


@dataclass(frozen=True)
class DatasetSettings:
    """Labeled-file options; ``labels`` picks the two strata (order of
    first appearance when empty)."""

    label_column: str = "label"
    labels: tuple = ()
    features: tuple = ()
    calibration_columns: tuple = ()
    delimiter: str = ","


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    model: str = "fixed"
    d: int = 5
    model_overrides: dict = field(default_factory=dict)
    setups: tuple = ((10, 10),)
    missing_probs: tuple = (0.0,)
    methods: tuple = ()
    repetitions: int = 10
    seed: int = 0
    workers: int = 1
    output: str = "results"
    force: bool = False
    baselines: BaselineSettings = BaselineSettings()
    dataset: DatasetSettings | None = None

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods: at least one method is required")
        labels = [m.label for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"methods: duplicate labels in {labels}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        for p in self.missing_probs:
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"missing_probs: {p} outside [0, 1)")
        if not self.missing_probs:
            raise ConfigError("missing_probs must not be empty")
        if not self.setups:
            raise ConfigError("setups must not be empty")
        for s in self.setups:
            if len(s) != 2 or min(s) < 0 or sum(s) < 2:
                raise ConfigError(f"setups: invalid (n1, n2) = {s}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def setup_label(self, i: int) -> str:
        n1, n2 = self.setups[i]
        return f"{n1}+{n2}"

    def needs_guard(self) -> bool:
        big = max(sum(s) for s in self.setups) > MAX_EXHAUSTIVE_N
        return big and any(m.name in EXHAUSTIVE_METHODS for m in self.methods)


# ---------------------------------------------------------------- config


def _get(table: dict, key: str, kind, default, where: str):
    if key not in table:
        return default
    v = table[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, kind) or (kind is int and isinstance(v, bool)):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {v!r}")
    return v


def _check_keys(table: dict, allowed: Sequence[str], where: str):
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown keys {extra}")


_SEARCH_KEYS = ("hamming_radius", "n_seeds", "mc_samples", "neighborhood")


def _method_specs(entries, defaults: dict, sweep: dict) -> tuple:
    specs = []
    for k, entry in enumerate(entries):
        where = f"experiment.methods[{k}]"
        if isinstance(entry, str):
            entry = {"name": entry}
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError(f"{where}: expected a method name or a table with 'name'")
        _check_keys(entry, ("name", "label") + _SEARCH_KEYS, where)
        name = entry["name"]
        if name not in METHODS:
            raise ConfigError(f"{where}: unknown method {name!r}; known: {', '.join(METHODS)}")
        opts = {key: entry.get(key, defaults[key]) for key in _SEARCH_KEYS}
        spec = MethodSpec(name=name, label=str(entry.get("label", name)), **opts)
        if spec.neighborhood not in ("swap", "flip"):
            raise ConfigError(f"{where}: neighborhood must be 'swap' or 'flip'")
        if spec.hamming_radius < 0 or spec.n_seeds < 1 or spec.mc_samples < 1:
            raise ConfigError(f"{where}: invalid search settings")
        radii = sweep.get("radii")
        if radii and name in sweep.get("methods", ("Pmax", "Pseed")) and name in ("Pmax", "Pseed"):
            specs.extend(replace(spec, hamming_radius=int(r), label=f"{spec.label}(r={int(r)})") for r in radii)
        else:
            specs.append(spec)
    return tuple(specs)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from TOML text.

    Sections: ``[experiment]`` (required), ``[search]``, ``[baselines]``,
    ``[sweep]``, ``[model]`` (parameter overrides) and ``[dataset]``.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    _check_keys(doc, ("experiment", "search", "baselines", "sweep", "model", "dataset"), source)
    exp = doc.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError(f"{source}: missing [experiment] section")
    _check_keys(
        exp,
        ("name", "model", "d", "setups", "missing_probs", "methods", "repetitions", "seed", "workers", "output", "force"),
        "experiment",
    )
    search = doc.get("search", {})
    _check_keys(search, _SEARCH_KEYS, "search")
    defaults = {
        "hamming_radius": _get(search, "hamming_radius", int, 1, "search"),
        "n_seeds": _get(search, "n_seeds", int, 5, "search"),
        "mc_samples": _get(search, "mc_samples", int, DEFAULT_MC_SAMPLES, "search"),
        "neighborhood": _get(search, "neighborhood", str, "swap", "search"),
    }
    sweep = doc.get("sweep", {})
    _check_keys(sweep, ("radii", "methods"), "sweep")
    bl = doc.get("baselines", {})
    _check_keys(bl, [f for f in BaselineSettings.__dataclass_fields__], "baselines")
    base = BaselineSettings(**{
        k: _get(bl, k, type(getattr(BaselineSettings, k)), getattr(BaselineSettings, k), "baselines")
        for k in BaselineSettings.__dataclass_fields__
    })
    try:
        base.config()
    except OptclustError as exc:
        raise ConfigError(f"baselines: {exc}") from None
    if base.gibbs_burn_in >= base.gibbs_sweeps:
        raise ConfigError("baselines.gibbs_burn_in must be smaller than gibbs_sweeps")

    dataset = None
    if "dataset" in doc:
        ds = doc["dataset"]
        _check_keys(ds, ("label_column", "labels", "features", "calibration_columns", "delimiter"), "dataset")
        dataset = DatasetSettings(
            label_column=_get(ds, "label_column", str, "label", "dataset"),
            labels=tuple(str(x) for x in _get(ds, "labels", list, [], "dataset")),
            features=tuple(_get(ds, "features", list, [], "dataset")),
            calibration_columns=tuple(_get(ds, "calibration_columns", list, [], "dataset")),
            delimiter=_get(ds, "delimiter", str, ",", "dataset"),
        )
        if dataset.labels and len(dataset.labels) != 2:
            raise ConfigError("dataset.labels must name exactly two strata")

    model = _get(exp, "model", str, "fixed", "experiment")
    if dataset is None and model not in MODEL_NAMES:
        raise ConfigError(f"experiment.model: unknown model {model!r}; known: {', '.join(MODEL_NAMES)}")
    setups = _get(exp, "setups", list, [[10, 10]], "experiment")
    try:
        setups = tuple((int(a), int(b)) for a, b in setups)
    except (TypeError, ValueError):
        raise ConfigError("experiment.setups: expected a list of [n1, n2] pairs") from None
    probs = tuple(float(p) for p in _get(exp, "missing_probs", list, [0.0], "experiment"))
    methods = _method_specs(_get(exp, "methods", list, [], "experiment"), defaults, sweep)
    return ExperimentConfig(
        name=_get(exp, "name", str, Path(source).stem, "experiment"),
        model=model,
        d=_get(exp, "d", int, 5, "experiment"),
        model_overrides=dict(doc.get("model", {})),
        setups=setups,
        missing_probs=probs,
        methods=methods,
        repetitions=_get(exp, "repetitions", int, 10, "experiment"),
        seed=_get(exp, "seed", int, 0, "experiment"),
        workers=_get(exp, "workers", int, 1, "experiment"),
        output=_get(exp, "output", str, "results", "experiment"),
        force=_get(exp, "force", bool, False, "experiment"),
        baselines=base,
        dataset=dataset,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def build_model(name: str, d: int = 5, overrides: dict | None = None) -> ModelSpec:
    """A generation model with optional field overrides.

    Scalar overrides of covariance or scale fields mean ``value * I``.
    """
    model = standard_model(name, d)
    if not overrides:
        return model
    fields = {f for f in model.__dataclass_fields__}
    kw = {}
    for key, value in overrides.items():
        if key not in fields:
            raise ConfigError(f"model.{key}: not a parameter of the {name} model")
        arr = np.asarray(value, dtype=float)
        if key in ("covs", "scales") and arr.ndim == 0:
            arr = arr * np.eye(d)
        elif key in ("means", "prior_means") and arr.ndim == 0:
            arr = arr * np.ones(d)
        kw[key] = arr
    try:
        return replace(model, **kw)
    except OptclustError as exc:
        raise ConfigError(f"model: {exc}") from None


# ---------------------------------------------------------------- one instance


@dataclass(frozen=True)
class MethodOutcome:
    method: str
    error: float
    note: str
    runtime_ms: float


@dataclass(frozen=True)
class RepetitionResult:
    setup: str
    missing_prob: float
    rep: int
    outcomes: tuple

    def errors(self) -> dict:
        return {o.method: o.error for o in self.outcomes}


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


class _InstanceRunner:
    """Runs methods on one masked instance, sharing the expensive stages
    (Gibbs imputation, posterior scoring) between the methods that use them.

    Each method is charged the full time of the shared stages it depends on,
    as if it had run alone.
    """

    def __init__(self, cfg: ExperimentConfig, S: PointSet, sizes: tuple, model: ModelSpec, key: tuple):
        self.cfg = cfg
        self.S = S
        self.sizes = sizes
        self.model = model
        self.key = key
        self._stages: dict = {}

    def _stage(self, name, fn):
        if name not in self._stages:
            t0 = time.perf_counter()
            value = fn()
            self._stages[name] = (value, (time.perf_counter() - t0) * 1e3)
        return self._stages[name]

    def _gibbs(self):
        b = self.cfg.baselines
        rng = _rng(*self.key, _TAG_GIBBS)
        return self._stage("gibbs", lambda: gibbs_impute(self.S, b.gibbs_sweeps, b.gibbs_burn_in, rng))

    def _context(self, spec: MethodSpec):
        def make():
            rng = _rng(*self.key, _TAG_POSTERIOR, spec.mc_samples)
            return ClusteringContext(self.S, self.model, self.sizes, spec.mc_samples, rng)

        return self._stage(("context", spec.mc_samples), make)

    def _constrained(self, spec: MethodSpec):
        ctx, ms = self._context(spec)
        _, ms2 = self._stage(("constrained", spec.mc_samples), lambda: ctx.constrained_scores(self.cfg.force))
        return ctx, ms + ms2

    def partition(self, spec: MethodSpec) -> tuple[Partition, float]:
        rng = _rng(*self.key, _TAG_METHOD, spec.key)
        bcfg = self.cfg.baselines.config()
        t0 = time.perf_counter()
        shared = 0.0
        name = spec.name
        if name in EXHAUSTIVE_METHODS:
            ctx, shared = self._constrained(spec)
            t0 = time.perf_counter()
            res = ctx.optimal(self.cfg.force) if name == "Optimal" else ctx.pmax(spec.hamming_radius, self.cfg.force)
            part = res.partition
        elif name == "Pseed":
            ctx, shared = self._context(spec)
            t0 = time.perf_counter()
            part = ctx.pseed(spec.hamming_radius, spec.n_seeds, rng, spec.neighborhood).partition
        elif name in IMPUTED_METHODS:
            X, shared = self._gibbs()
            t0 = time.perf_counter()
            if name == "KM":
                part = kmeans(X, bcfg, rng)
            elif name == "FCM":
                part = fuzzy_cmeans(X, bcfg, rng)[0]
            else:
                part = hierarchical(X, "single" if name == "HierSi" else "complete", 2)
        elif name == "KPOD":
            part = kpod(self.S, bcfg, rng)
        elif name == "FCMOCS":
            part = fcm_ocs(self.S, bcfg, rng)
        elif name == "KMmean":
            part = kmeans(mean_impute(self.S), bcfg, rng)
        elif name == "Random":
            part = random_cluster(self.S.n, self.sizes, rng)
        else:
            raise ConfigError(f"unknown method {name!r}")
        return part, shared + (time.perf_counter() - t0) * 1e3

    def run(self, spec: MethodSpec, truth: LabelFunction) -> MethodOutcome:
        t0 = time.perf_counter()
        try:
            part, ms = self.partition(spec)
            return MethodOutcome(spec.label, clustering_error(truth, part), "", ms)
        except InfeasibleSizeError:
            raise
        except (OptclustError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            note = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            return MethodOutcome(spec.label, math.nan, note, (time.perf_counter() - t0) * 1e3)


def _sizes_for_rep(setup: tuple, rep: int) -> tuple:
    # half of the repetitions draw n1 points from the first distribution
    n1, n2 = setup
    return (n1, n2) if rep % 2 == 0 else (n2, n1)


def run_repetition(cfg: ExperimentConfig, rep_index: int, setup_index: int = 0, p_index: int = 0) -> RepetitionResult:
    """Generate, mask and cluster one synthetic instance with every method.

    The points and the uniform variates behind the mask depend only on
    ``(seed, setup_index, rep_index)``, so masks at different missing
    probabilities are nested.
    """
    model = build_model(cfg.model, cfg.d, cfg.model_overrides)
    n1, n2 = _sizes_for_rep(cfg.setups[setup_index], rep_index)
    rng = _rng(cfg.seed, _TAG_DATA, setup_index, rep_index)
    S, truth = generate_instance(model, n1, n2, rng)
    u = rng.random(S.observed.shape)
    p = cfg.missing_probs[p_index]
    S = PointSet(S.points, u >= p)
    runner = _InstanceRunner(cfg, S, (n1, n2), model, (cfg.seed, setup_index, rep_index, p_index))
    outcomes = tuple(runner.run(spec, truth) for spec in cfg.methods)
    return RepetitionResult(cfg.setup_label(setup_index), p, rep_index, outcomes)


# ---------------------------------------------------------------- dataset path


def read_labeled_table(path, settings: DatasetSettings) -> tuple[np.ndarray, np.ndarray, list]:
    """Read a delimited file with a header row.

    Empty fields and ``NA`` are missing.  Returns ``(X, labels, columns)``
    where ``X`` holds every non-label column (NaN for missing).
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh, delimiter=settings.delimiter))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    if len(rows) < 2:
        raise ConfigError(f"{path}: expected a header row and data rows")
    header = [h.strip() for h in rows[0]]
    if settings.label_column not in header:
        raise ConfigError(f"{path}: label column {settings.label_column!r} not found")
    li = header.index(settings.label_column)
    cols = [h for j, h in enumerate(header) if j != li]
    X = np.empty((len(rows) - 1, len(cols)))
    labels = []
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise ConfigError(f"{path}: line {i + 2} has {len(row)} fields, expected {len(header)}")
        labels.append(row[li].strip())
        vals = [v.strip() for j, v in enumerate(row) if j != li]
        try:
            X[i] = [math.nan if v in ("", "NA", "NaN", "nan") else float(v) for v in vals]
        except ValueError:
            raise ConfigError(f"{path}: line {i + 2} has a non-numeric feature value") from None
    return X, np.array(labels), cols


def _columns(cols: list, wanted: Sequence[str], what: str) -> np.ndarray:
    missing = [c for c in wanted if c not in cols]
    if missing:
        raise ConfigError(f"dataset.{what}: columns {missing} not in the file")
    return np.array([cols.index(c) for c in wanted], dtype=int)


@dataclass(frozen=True)
class _DatasetSource:
    X: np.ndarray
    labels: np.ndarray
    strata: tuple
    feat: np.ndarray
    calib: np.ndarray | None


def _calibrated_model(sample: np.ndarray, d: int) -> GIWModel:
    prior = calibrate_prior(sample)
    if prior.d != d:
        lo = -1.0 / (d - 1) + 1e-6 if d > 1 else -1.0
        prior = CalibratedPrior(
            m=prior.m,
            sigma2=prior.sigma2 / (prior.kappa - prior.d - 1) * (max(prior.kappa, d + 2) - d - 1),
            rho=min(max(prior.rho, lo), 1 - 1e-6),
            kappa=max(prior.kappa, d + 2.0),
            nu=prior.nu,
            d=d,
        )
    return prior.giw_model(2)


def _dataset_repetition(cfg: ExperimentConfig, src: _DatasetSource, rep: int, setup_index: int, p_index: int) -> RepetitionResult:
    n1, n2 = _sizes_for_rep(cfg.setups[setup_index], rep)
    rng = _rng(cfg.seed, _TAG_DATA, setup_index, rep)
    idx, truth = [], []
    for lab, (stratum, size) in enumerate(zip(src.strata, (n1, n2))):
        pool = np.flatnonzero(src.labels == stratum)
        if pool.size < size:
            raise ConfigError(f"stratum {stratum!r} has {pool.size} points, {size} requested")
        idx.extend(rng.choice(pool, size=size, replace=False).tolist())
        truth.extend([lab + 1] * size)
    idx = np.array(idx)
    u = rng.random((idx.size, src.feat.size))
    p = cfg.missing_probs[p_index]
    Xs = src.X[np.ix_(idx, src.feat)]
    S = PointSet(np.nan_to_num(Xs), ~np.isnan(Xs) & (u >= p))
    key = (cfg.seed, setup_index, rep, p_index)
    try:
        if src.calib is not None:
            model = _calibrated_model(src.X[np.ix_(idx, src.calib)], S.d)
        else:
            model = _calibrated_model(np.where(S.observed, S.points, np.nan), S.d)
    except OptclustError as exc:
        note = f"calibration failed: {exc}"
        outcomes = tuple(MethodOutcome(m.label, math.nan, note, 0.0) for m in cfg.methods)
        return RepetitionResult(cfg.setup_label(setup_index), p, rep, outcomes)
    runner = _InstanceRunner(cfg, S, (n1, n2), model, key)
    phi = LabelFunction(np.array(truth), 2)
    outcomes = tuple(runner.run(spec, phi) for spec in cfg.methods)
    return RepetitionResult(cfg.setup_label(setup_index), p, rep, outcomes)


# ---------------------------------------------------------------- grid + output


@dataclass(frozen=True)
class ExperimentResult:
    repetitions: tuple
    summary: tuple
    paths: dict

    def long_rows(self):
        for r in self.repetitions:
            for o in r.outcomes:
                yield r.setup, r.missing_prob, o.method, r.rep, o.error, o.note

    def summary_for(self, method: str, missing_prob: float | None = None, setup: str | None = None) -> dict:
        for row in self.summary:
            if row["method"] == method and (missing_prob is None or row["missing_prob"] == missing_prob) and (
                setup is None or row["setup"] == setup
            ):
                return row
        raise KeyError(method)


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def summarize(results: Sequence[RepetitionResult], cfg: ExperimentConfig) -> tuple:
    """Per (setup, missing_prob, method) mean, standard error and counts;
    failed repetitions (NaN) are excluded and counted."""
    groups: dict = {}
    for r in results:
        for o in r.outcomes:
            groups.setdefault((r.setup, r.missing_prob, o.method), []).append(o.error)
    out = []
    for si in range(len(cfg.setups)):
        for p in cfg.missing_probs:
            for m in cfg.methods:
                errs = np.array(groups.get((cfg.setup_label(si), p, m.label), []), dtype=float)
                ok = errs[~np.isnan(errs)]
                mean = float(ok.mean()) if ok.size else math.nan
                se = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else math.nan
                out.append({
                    "setup": cfg.setup_label(si),
                    "missing_prob": p,
                    "method": m.label,
                    "mean_error": mean,
                    "se": se,
                    "count": int(ok.size),
                    "failed": int(errs.size - ok.size),
                })
    return tuple(out)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _write_outputs(cfg: ExperimentConfig, results, summary, out_dir) -> dict:
    out = Path(out_dir)
    paths = {"long": out / "long.csv", "runtimes": out / "runtimes.csv", "summary": out / "summary.csv"}
    long_rows = [(r.setup, r.missing_prob, o.method, r.rep, o.error, o.note) for r in results for o in r.outcomes]
    rt_rows = [(r.setup, r.missing_prob, o.method, r.rep, round(o.runtime_ms, 3)) for r in results for o in r.outcomes]
    sm_rows = [tuple(s[k] for k in SUMMARY_HEADER) for s in summary]
    out.mkdir(parents=True, exist_ok=True)
    paths["long"].write_text(_csv_text(LONG_HEADER, long_rows))
    paths["runtimes"].write_text(_csv_text(RUNTIME_HEADER, rt_rows))
    paths["summary"].write_text(_csv_text(SUMMARY_HEADER, sm_rows))
    return paths


def _task(args):
    fn, cfg, extra, rep, si, pi = args
    if extra is None:
        return fn(cfg, rep, si, pi)
    return fn(cfg, extra, rep, si, pi)


def _run_grid(cfg: ExperimentConfig, fn, extra, workers: int | None, out_dir, write: bool) -> ExperimentResult:
    if cfg.needs_guard() and not cfg.force:
        raise InfeasibleSizeError(
            f"Optimal/Pmax need 2^(n-1) candidates; n > {MAX_EXHAUSTIVE_N} refused without force"
        )
    tasks = [
        (fn, cfg, extra, rep, si, pi)
        for si in range(len(cfg.setups))
        for pi in range(len(cfg.missing_probs))
        for rep in range(cfg.repetitions)
    ]
    workers = cfg.workers if workers is None else int(workers)
    if workers <= 1 or len(tasks) == 1:
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    summary = summarize(results, cfg)
    paths = _write_outputs(cfg, results, summary, out_dir if out_dir is not None else cfg.output) if write else {}
    return ExperimentResult(tuple(results), summary, paths)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None, out_dir=None, write: bool = True) -> ExperimentResult:
    """Run every (setup, missing_prob, rep) instance and write the CSVs.

    Raises :class:`InfeasibleSizeError` before any work if an exhaustive
    method is configured for n > 22 without ``force``.
    """
    build_model(cfg.model, cfg.d, cfg.model_overrides)
    return _run_grid(cfg, run_repetition, None, workers, out_dir, write)


def run_dataset(path, cfg: ExperimentConfig, workers: int | None = None, out_dir=None, write: bool = True) -> ExperimentResult:
    """Stratified-sampling experiment on a labeled delimited file.

    Labels only define the sampling strata and the error; every repetition
    calibrates a GIW prior on the sample (or on the held-out calibration
    columns) and masks entries at each configured missing probability.
    """
    settings = cfg.dataset or DatasetSettings()
    X, labels, cols = read_labeled_table(path, settings)
    if settings.labels:
        strata = settings.labels
    else:
        strata = tuple(dict.fromkeys(labels.tolist()))
        if len(strata) != 2:
            raise ConfigError(f"{path}: expected two labels, found {len(strata)}; set dataset.labels")
    for s in strata:
        if not np.any(labels == s):
            raise ConfigError(f"{path}: label {s!r} not present")
    calib = _columns(cols, settings.calibration_columns, "calibration_columns") if settings.calibration_columns else None
    if settings.features:
        feat = _columns(cols, settings.features, "features")
    else:
        held = set(settings.calibration_columns)
        feat = np.array([j for j, c in enumerate(cols) if c not in held], dtype=int)
    if feat.size == 0:
        raise ConfigError(f"{path}: no feature columns")
    for si, (n1, n2) in enumerate(cfg.setups):
        for s, need in zip(strata, (max(n1, n2), max(n1, n2))):
            have = int(np.sum(labels == s))
            if have < need:
                raise ConfigError(f"{path}: stratum {s!r} has {have} points, setup {cfg.setup_label(si)} needs {need}")
    src = _DatasetSource(X, labels, tuple(strata), feat, calib)
    return _run_grid(cfg, _dataset_repetition, src, workers, out_dir, write)
