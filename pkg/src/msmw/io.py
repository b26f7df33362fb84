"""Long-format CSV ingestion and export, run configuration, draw archives
and run manifests.

Predictors file, one row per cell::

    sample_id,source,feature,way,value
    s1,protein,P01,1,0.25

Outcomes file::

    sample_id,y
    s1,1

Axis order of the assembled ``N x P x D`` tensor: samples follow the
outcomes file, sources their first appearance in the predictors file,
features sort lexicographically within a source and ways ascend.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence

import numpy as np

from .config import FAMILIES, SOURCE_MODES, ChainSettings, ModelSpec, OutcomeVector, VariancePrior
from .errors import (
    ConfigError,
    DataLoadError,
    DuplicateKeyError,
    HeaderError,
    MissingCellError,
    NonNumericValueError,
    UnmatchedSampleError,
)
from .gibbs import PosteriorDraws
from .tensor import MultiWayPredictors, SourcePartition

log = logging.getLogger(__name__)

PREDICTOR_HEADER = ("sample_id", "source", "feature", "way", "value")
OUTCOME_HEADER = ("sample_id", "y")
MANIFEST_VERSION = 1


# ---------------------------------------------------------------- datasets

@dataclass(frozen=True)
class Axes:
    sample_ids: tuple[str, ...]
    sources: tuple[str, ...]
    features: tuple[tuple[str, ...], ...]  # per source
    ways: tuple[int, ...]

    @property
    def partition(self) -> SourcePartition:
        return SourcePartition(tuple(len(f) for f in self.features), self.sources)

    def feature_rows(self) -> list[tuple[str, str]]:
        return [(s, f) for s, feats in zip(self.sources, self.features) for f in feats]

    def same_features(self, other: "Axes") -> bool:
        return (self.sources, self.features, self.ways) == (other.sources, other.features, other.ways)

    def to_dict(self) -> dict:
        return {"sources": list(self.sources), "features": [list(f) for f in self.features],
                "ways": list(self.ways)}


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray  # P x D
    scale: np.ndarray  # P x D

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale


class Dataset(NamedTuple):
    X: MultiWayPredictors
    y: Optional[OutcomeVector]
    axes: Axes
    standardization: Optional[Standardization] = None


def _open_csv(path, expected: tuple[str, ...]):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataLoadError(f"{path}: {exc.strerror}") from exc
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != expected:
        fh.close()
        raise HeaderError(f"{path}: header must be {','.join(expected)}, got {header}")
    return fh, reader


def _parse_float(text: str, path, row: int, what: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise NonNumericValueError(f"{path} row {row}: {what} {text!r} is not a number") from None
    if not math.isfinite(v):
        raise NonNumericValueError(f"{path} row {row}: {what} {text!r} is not finite")
    return v


def read_outcomes(path, family: str) -> tuple[list[str], np.ndarray]:
    if family not in FAMILIES:
        raise ConfigError(f"unknown outcome family {family!r}")
    fh, reader = _open_csv(path, OUTCOME_HEADER)
    ids, values, seen = [], [], {}
    with fh:
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise HeaderError(f"{path} row {row_no}: expected 2 fields, got {len(row)}")
            sid = row[0].strip()
            if sid in seen:
                raise DuplicateKeyError(f"{path} row {row_no}: sample {sid!r} repeats row {seen[sid]}")
            seen[sid] = row_no
            v = _parse_float(row[1].strip(), path, row_no, "outcome")
            if family == "binary" and v not in (0.0, 1.0):
                raise NonNumericValueError(f"{path} row {row_no}: binary outcome must be 0 or 1, got {row[1]!r}")
            ids.append(sid)
            values.append(v)
    if not ids:
        raise DataLoadError(f"{path}: no samples")
    return ids, np.array(values)


def read_predictors(path, sample_ids: Optional[Sequence[str]] = None) -> tuple[np.ndarray, Axes]:
    """Assemble the tensor; ``sample_ids`` fixes the sample order (defaults
    to first appearance in the file)."""
    fh, reader = _open_csv(path, PREDICTOR_HEADER)
    cells: dict[tuple[str, str, str, int], float] = {}
    rows_of: dict[tuple, int] = {}
    sources: list[str] = []
    features: dict[str, set] = {}
    ways: set[int] = set()
    file_samples: dict[str, int] = {}
    with fh:
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise HeaderError(f"{path} row {row_no}: expected 5 fields, got {len(row)}")
            sid, src, feat, way_text, value = (c.strip() for c in row)
            try:
                way = int(way_text)
            except ValueError:
                raise NonNumericValueError(f"{path} row {row_no}: way {way_text!r} is not an integer") from None
            if way < 1:
                raise DataLoadError(f"{path} row {row_no}: way index must be >= 1, got {way}")
            key = (sid, src, feat, way)
            if key in cells:
                raise DuplicateKeyError(f"{path} row {row_no}: key {key} repeats row {rows_of[key]}")
            cells[key] = _parse_float(value, path, row_no, "value")
            rows_of[key] = row_no
            file_samples.setdefault(sid, row_no)
            if src not in features:
                sources.append(src)
                features[src] = set()
            features[src].add(feat)
            ways.add(way)
    if not cells:
        raise DataLoadError(f"{path}: no predictor rows")
    if sample_ids is None:
        sample_ids = list(file_samples)
    else:
        extra = [s for s in file_samples if s not in set(sample_ids)]
        if extra:
            raise UnmatchedSampleError(
                f"{path} row {file_samples[extra[0]]}: sample {extra[0]!r} has no outcome"
            )
        missing = [s for s in sample_ids if s not in file_samples]
        if missing:
            raise UnmatchedSampleError(f"{path}: sample {missing[0]!r} has no predictor rows")
    axes = Axes(
        sample_ids=tuple(sample_ids),
        sources=tuple(sources),
        features=tuple(tuple(sorted(features[s])) for s in sources),
        ways=tuple(sorted(ways)),
    )
    rows = axes.feature_rows()
    values = np.empty((len(sample_ids), len(rows), len(axes.ways)))
    for i, sid in enumerate(sample_ids):
        for p, (src, feat) in enumerate(rows):
            for d, way in enumerate(axes.ways):
                try:
                    values[i, p, d] = cells[(sid, src, feat, way)]
                except KeyError:
                    raise MissingCellError(
                        f"{path}: missing cell (sample={sid!r}, source={src!r}, feature={feat!r}, way={way})"
                    ) from None
    return values, axes


def standardize(values: np.ndarray) -> tuple[np.ndarray, Standardization]:
    """Per-(feature, way) centring and scaling to unit variance (``ddof=0``).
    Constant cells are centred and left unscaled."""
    mean = values.mean(axis=0)
    scale = values.std(axis=0)
    constant = scale == 0
    if constant.any():
        log.warning("%d constant (feature, way) cells are centred but not scaled", int(constant.sum()))
        scale = np.where(constant, 1.0, scale)
    st = Standardization(mean, scale)
    return st.apply(values), st


def load_dataset(predictors_csv, outcomes_csv=None, family: str = "continuous",
                 standardize_features: bool = False) -> Dataset:
    """Read the two files into ``(X, y, axes, standardization)``.

    Without ``outcomes_csv`` the sample order is that of the predictors
    file and ``y`` is ``None``.
    """
    if outcomes_csv is not None:
        ids, yv = read_outcomes(outcomes_csv, family)
        values, axes = read_predictors(predictors_csv, ids)
        y = OutcomeVector(family, yv)
    else:
        values, axes = read_predictors(predictors_csv)
        y = None
    st = None
    if standardize_features:
        values, st = standardize(values)
    return Dataset(MultiWayPredictors(values, axes.partition), y, axes, st)


def default_axes(X: MultiWayPredictors) -> Axes:
    """Zero-padded labels whose lexicographic order matches the array order."""
    width = len(str(max(X.partition.sizes)))
    sw = len(str(X.N))
    return Axes(
        sample_ids=tuple(f"s{i + 1:0{sw}d}" for i in range(X.N)),
        sources=X.partition.names,
        features=tuple(tuple(f"f{j + 1:0{width}d}" for j in range(n)) for n in X.partition.sizes),
        ways=tuple(range(1, X.D + 1)),
    )


def write_dataset(predictors_csv, outcomes_csv, X: MultiWayPredictors, y: Optional[OutcomeVector] = None,
                  axes: Optional[Axes] = None) -> Axes:
    """Write the long format; values round-trip exactly through :func:`load_dataset`."""
    axes = axes or default_axes(X)
    rows = axes.feature_rows()
    if [tuple(sorted(f)) for f in axes.features] != list(axes.features):
        raise DataLoadError("feature labels must already be in lexicographic order to round-trip")
    with open(predictors_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTOR_HEADER)
        for i, sid in enumerate(axes.sample_ids):
            for p, (src, feat) in enumerate(rows):
                for d, way in enumerate(axes.ways):
                    w.writerow([sid, src, feat, way, repr(float(X.values[i, p, d]))])
    if y is not None and outcomes_csv is not None:
        with open(outcomes_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(OUTCOME_HEADER)
            for sid, v in zip(axes.sample_ids, y.values):
                w.writerow([sid, repr(float(v)) if y.family == "continuous" else int(v)])
    return axes


# ---------------------------------------------------------------- results

def _fmt(v) -> str:
    return repr(float(v))


def write_matrix(path, header: Sequence[str], rows: Sequence[Sequence]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_matrix(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def coefficient_labels(axes: Axes) -> list[str]:
    """Column labels of the flattened ``B`` draws, column-major over ``(feature, way)``."""
    return [f"{s}:{f}:{w}" for w in axes.ways for s, f in axes.feature_rows()]


def write_coefficients(path, B: np.ndarray, axes: Axes):
    """``P x D`` matrix with source and feature label columns."""
    header = ["source", "feature"] + [f"way{w}" for w in axes.ways]
    rows = [[s, f, *B[p]] for p, (s, f) in enumerate(axes.feature_rows())]
    write_matrix(path, header, rows)


def read_coefficients(path) -> np.ndarray:
    _, rows = read_matrix(path)
    return np.array([[float(v) for v in r[2:]] for r in rows])


def draw_summary(x: np.ndarray) -> list[float]:
    q = np.quantile(x, [0.025, 0.5, 0.975])
    return [float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else math.nan, *map(float, q)]


SUMMARY_HEADER = ["parameter", "mean", "sd", "q2.5", "q50", "q97.5"]


def write_draw_archive(directory, draws: PosteriorDraws, axes: Axes):
    """One CSV per parameter group: ``B.csv`` (column-major ``vec(B)`` per
    row), ``tau.csv`` and ``sigma2.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    T = len(draws)
    flat = draws.B.transpose(0, 2, 1).reshape(T, -1)
    write_matrix(d / "B.csv", coefficient_labels(axes), flat.tolist())
    names = tau_names(draws, axes)
    write_matrix(d / "tau.csv", names, draws.tau.tolist())
    write_matrix(d / "sigma2.csv", ["sigma2"], [[v] for v in draws.sigma2.tolist()])


def tau_names(draws: PosteriorDraws, axes: Axes) -> list[str]:
    if draws.tau.shape[1] == len(axes.sources):
        return [f"tau[{s}]" for s in axes.sources]
    return ["tau[all]"]


def read_draw_archive(directory, P: int, D: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d = Path(directory)
    _, rows = read_matrix(d / "B.csv")
    flat = np.array(rows, dtype=float)
    B = flat.reshape(flat.shape[0], D, P).transpose(0, 2, 1)
    _, rows = read_matrix(d / "tau.csv")
    tau = np.array(rows, dtype=float)
    _, rows = read_matrix(d / "sigma2.csv")
    s2 = np.array(rows, dtype=float).ravel()
    return B, tau, s2


# ---------------------------------------------------------------- configuration

_DIMS_PRESETS = {"low": {"N": 100, "P1": 3, "P2": 3, "D": 5}, "high": {"N": 20, "P1": 100, "P2": 100, "D": 2}}

DEFAULTS: dict[str, Any] = {
    "data": {"predictors": None, "outcomes": None, "family": "continuous", "standardize": False},
    "model": {
        "rank": 1,
        "source_mode": "multi",
        "tau_prior": "scaled",
        "sigma2": {"alpha0": 0.001, "beta0": 0.001},
    },
    "chain": {"iterations": 5000, "burn_in": 1000},
    "seed": 0,
    "engine": "auto",
    "out": "msmw-out",
    "predict": {"model_dir": None, "predictors": None, "predictive_draws": False},
    "simulate": {"regime": "probit", "dims": "low", "replications": 100, "models": None, "workers": 1,
                 "n_test": 500},
    "cv": {"variants": "table", "tau_prior": {"alpha0": 1.0, "beta0": 0.1}},
}


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = {}
    for k in given:
        if k not in defaults:
            raise ConfigError(f"unknown config key {where}{k!r}")
    for k, default in defaults.items():
        v = given.get(k, default)
        if isinstance(default, dict) and k not in ("sigma2", "tau_prior"):
            if v is None:
                v = {}
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a mapping")
            v = _merge(default, v, f"{where}{k}.")
        out[k] = v
    return out


def _prior(value, where: str) -> VariancePrior:
    if not isinstance(value, dict) or set(value) != {"alpha0", "beta0"}:
        raise ConfigError(f"{where} must be a mapping with alpha0 and beta0")
    try:
        return VariancePrior(float(value["alpha0"]), float(value["beta0"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_int(value, where: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{where} must be an integer >= {minimum}, got {value!r}")
    return value


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully defaulted configuration. ``raw`` is the resolved
    mapping that goes into the manifest and its hash."""

    raw: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def chain(self) -> ChainSettings:
        c = self.raw["chain"]
        return ChainSettings(c["iterations"], c["burn_in"], self.seed)

    @property
    def family(self) -> str:
        return self.raw["data"]["family"]

    def tau_priors(self, partition: SourcePartition, D: int) -> tuple[VariancePrior, ...]:
        m = self.raw["model"]
        groups = partition.sizes if m["source_mode"] == "multi" else (partition.total,)
        tp = m["tau_prior"]
        if tp == "scaled":
            mult = D if m["rank"] == "full" else m["rank"]
            return tuple(VariancePrior(1.0, math.sqrt(p * mult)) for p in groups)
        if isinstance(tp, dict):
            return (_prior(tp, "model.tau_prior"),) * len(groups)
        priors = tuple(_prior(p, f"model.tau_prior[{i}]") for i, p in enumerate(tp))
        if len(priors) != len(groups):
            raise ConfigError(f"model.tau_prior lists {len(priors)} priors for {len(groups)} variance groups")
        return priors

    def model_spec(self, partition: SourcePartition, D: int) -> ModelSpec:
        m = self.raw["model"]
        s2 = m["sigma2"]
        sigma2 = float(s2) if isinstance(s2, (int, float)) else _prior(s2, "model.sigma2")
        try:
            return ModelSpec(
                rank=None if m["rank"] == "full" else m["rank"],
                source_mode=m["source_mode"],
                family=self.family,
                tau_priors=self.tau_priors(partition, D),
                sigma2=sigma2 if self.family == "continuous" else 1.0,
                chain=self.chain,
            )
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def hash(self) -> str:
        """Digest of everything that affects numeric outputs (the output
        directory is excluded)."""
        payload = {k: v for k, v in self.raw.items() if k != "out"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **overrides) -> "RunConfig":
        raw = json.loads(json.dumps(self.raw))
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = raw
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return RunConfig.from_mapping(raw)

    @classmethod
    def from_mapping(cls, given: Optional[dict]) -> "RunConfig":
        given = dict(given or {})
        if "manifest_version" in given:
            given = given["config"]
        raw = _merge(DEFAULTS, given, "")
        data, model, chain = raw["data"], raw["model"], raw["chain"]
        if data["family"] not in FAMILIES:
            raise ConfigError(f"data.family must be one of {FAMILIES}, got {data['family']!r}")
        if not isinstance(data["standardize"], bool):
            raise ConfigError("data.standardize must be true or false")
        if model["rank"] != "full":
            _check_int(model["rank"], "model.rank", 1)
        if model["source_mode"] not in SOURCE_MODES:
            raise ConfigError(f"model.source_mode must be one of {SOURCE_MODES}")
        tp = model["tau_prior"]
        if tp == "scaled":
            pass
        elif isinstance(tp, dict):
            _prior(tp, "model.tau_prior")
        elif isinstance(tp, list) and tp:
            for i, p in enumerate(tp):
                _prior(p, f"model.tau_prior[{i}]")
        else:
            raise ConfigError("model.tau_prior must be 'scaled', a prior mapping or a list of them")
        s2 = model["sigma2"]
        if isinstance(s2, bool) or not (isinstance(s2, (int, float)) and s2 > 0 or isinstance(s2, dict)):
            raise ConfigError("model.sigma2 must be a positive number or a prior mapping")
        if isinstance(s2, dict):
            _prior(s2, "model.sigma2")
        _check_int(chain["iterations"], "chain.iterations", 1)
        _check_int(chain["burn_in"], "chain.burn_in", 0)
        if chain["burn_in"] >= chain["iterations"]:
            raise ConfigError("chain.burn_in must be smaller than chain.iterations")
        _check_int(raw["seed"], "seed", 0)
        if raw["seed"] >= 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        if raw["engine"] not in ("auto", "numpy", "numba"):
            raise ConfigError("engine must be auto, numpy or numba")
        sim = raw["simulate"]
        from .simulation import REGIMES, models_for  # late import: simulation imports config

        if sim["regime"] not in REGIMES:
            raise ConfigError(f"simulate.regime must be one of {REGIMES}")
        dims = sim["dims"]
        if isinstance(dims, str):
            if dims not in _DIMS_PRESETS:
                raise ConfigError("simulate.dims must be 'low', 'high' or a mapping N, P1, P2, D")
        elif not (isinstance(dims, dict) and set(dims) == {"N", "P1", "P2", "D"}):
            raise ConfigError("simulate.dims must be 'low', 'high' or a mapping N, P1, P2, D")
        else:
            for k, v in dims.items():
                _check_int(v, f"simulate.dims.{k}", 1)
        _check_int(sim["replications"], "simulate.replications", 1)
        _check_int(sim["workers"], "simulate.workers", 1)
        _check_int(sim["n_test"], "simulate.n_test", 1)
        if sim["models"] is not None:
            if not isinstance(sim["models"], list):
                raise ConfigError("simulate.models must be a list")
            from .config import PRESET_KINDS

            bad = [m for m in sim["models"] if m not in PRESET_KINDS]
            if bad:
                raise ConfigError(f"simulate.models: unknown kinds {bad}")
        if raw["cv"]["variants"] not in ("table", "model"):
            raise ConfigError("cv.variants must be 'table' or 'model'")
        _prior(raw["cv"]["tau_prior"], "cv.tau_prior")
        if not isinstance(raw["predict"]["predictive_draws"], bool):
            raise ConfigError("predict.predictive_draws must be true or false")
        return cls(raw)

    def simulation_dims(self):
        from .simulation import Dims

        d = self.raw["simulate"]["dims"]
        return Dims(**(_DIMS_PRESETS[d] if isinstance(d, str) else d))


def load_config(path=None) -> RunConfig:
    """YAML (or JSON, or a previous run's ``manifest.json``) config file."""
    if path is None:
        return RunConfig.from_mapping({})
    import yaml

    try:
        with open(path, encoding="utf-8") as fh:
            given = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if given is not None and not isinstance(given, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_mapping(given)


# ---------------------------------------------------------------- manifest

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {
        "msmw": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


class Manifest:
    """``manifest.json`` in the output directory. Written as ``incomplete``
    before any compute and flipped to ``complete`` at the end."""

    def __init__(self, out_dir, command: str, config: RunConfig, inputs: Sequence = ()):
        self.path = Path(out_dir) / "manifest.json"
        self.doc = {
            "manifest_version": MANIFEST_VERSION,
            "command": command,
            "status": "incomplete",
            "seed": config.seed,
            "config_hash": config.hash(),
            "config": config.raw,
            "inputs": {str(p): file_digest(p) for p in inputs if p is not None},
            "versions": versions(),
            "argv": sys.argv[1:],
            "started": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": [],
        }
        self.write()

    def add_output(self, *paths):
        for p in paths:
            self.doc["outputs"].append(os.path.relpath(p, self.path.parent))

    def finish(self, status: str = "complete", error: Optional[str] = None, **extra):
        self.doc["status"] = status
        if error is not None:
            self.doc["error"] = error
        self.doc.update(extra)
        self.doc["finished"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.write()

    def write(self):
        tmp = self.path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.path)


def read_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{p}: cannot read manifest ({exc})") from exc
