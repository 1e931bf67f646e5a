"""Temperature sweeps, filter images and model summaries.

A sweep trains one stack per (kind, algorithm, temperature, run) cell.  Each
cell has its own seed derived from the master seed and the cell coordinates,
so cells can run in any order, in parallel, or across interrupted
invocations and still produce the same numbers.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from tdbm import datasets
from tdbm.deep import KINDS, TEMPERING_MODES, StackedModel, load_stack, save_stack, train_stack
from tdbm.errors import ConfigError, DataError, DimensionError, InvalidArgumentError
from tdbm.evaluation import RunResult, dataset_mse, render_table, write_results_csv
from tdbm.numerics import derive_seed, make_rng
from tdbm.trainer import ALGORITHMS, EpochMetrics, TrainConfig

log = logging.getLogger(__name__)

REFERENCE_TEMPERATURES = (0.1, 0.2, 0.5, 0.8, 1.0, 1.2, 1.5, 2.0)
MANIFEST = "manifest.jsonl"


@dataclass
class ExperimentConfig:
    dataset: str = "semeion"
    data_path: str = ""
    mnist_fraction: float = 0.02
    threshold: float = 127.5
    test_fraction: float = 0.3
    split_seed: int = 0
    architecture: list[int] = field(default_factory=lambda: [256, 50, 50, 200])
    temperatures: list[float] = field(default_factory=lambda: list(REFERENCE_TEMPERATURES))
    algorithms: list[str] = field(default_factory=lambda: ["CD", "PCD"])
    kinds: list[str] = field(default_factory=lambda: ["DBM", "DBN"])
    eta: float = 0.1
    weight_decay: float = 0.1
    momentum: float = 1e-5
    k: int = 1
    epochs: int = 10
    batch_size: int = 20
    bias_tempered: bool = True
    decay_scaled_by_eta: bool = False
    init_std: float = 0.01
    propagate_samples: bool = False
    tempering: str = "literal"
    fixed_point_iters: int = 0
    binarize_reconstruction: bool = False
    runs: int = 20
    seed: int = 0
    workers: int = 1
    alpha: float = 0.05
    filter_tiles: int = 225
    filter_cell: str = "DBM-PCD"
    output_dir: str = "results"

    def validate(self) -> ExperimentConfig:
        if self.dataset not in ("semeion", "mnist", "caltech"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if not self.temperatures or any(not (t > 0 and math.isfinite(t)) for t in self.temperatures):
            raise ConfigError(f"temperatures must be a non-empty list of positive reals, got {self.temperatures}")
        if len(set(self.temperatures)) != len(self.temperatures):
            raise ConfigError("temperatures must be distinct")
        for name, allowed in (("algorithms", ALGORITHMS), ("kinds", KINDS)):
            vals = getattr(self, name)
            if not vals or any(v not in allowed for v in vals) or len(set(vals)) != len(vals):
                raise ConfigError(f"{name} must be a non-empty subset of {allowed}, got {vals}")
        if len(self.architecture) < 2 or any(s < 1 for s in self.architecture):
            raise ConfigError(f"architecture needs an input and >= 1 hidden layer, got {self.architecture}")
        if self.tempering not in TEMPERING_MODES:
            raise ConfigError(f"tempering must be one of {TEMPERING_MODES}")
        for name in ("runs", "workers", "filter_tiles"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.fixed_point_iters < 0:
            raise ConfigError("fixed_point_iters must be >= 0")
        self.train_config(self.temperatures[0], self.algorithms[0], 0)
        return self

    def train_config(self, temperature: float, algorithm: str, seed: int) -> TrainConfig:
        return TrainConfig(
            eta=self.eta, weight_decay=self.weight_decay, momentum=self.momentum, k=self.k,
            algorithm=algorithm, epochs=self.epochs, batch_size=self.batch_size,
            temperature=temperature, bias_tempered=self.bias_tempered,
            decay_scaled_by_eta=self.decay_scaled_by_eta, init_std=self.init_std, seed=seed,
        )

    def fingerprint(self) -> str:
        """Hash of every field that influences numbers in ``results.csv``."""
        skip = {"workers", "output_dir", "filter_tiles", "filter_cell", "runs", "algorithms", "kinds"}
        d = {k: v for k, v in dataclasses.asdict(self).items() if k not in skip}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


# Desk-scale presets scale weight decay by the learning rate: with the literal
# -0.1 W per mini-batch the small stacks never leave the mean-pixel baseline.
PRESETS = {
    "semeion-small": {"dataset": "semeion", "architecture": [256, 50, 50, 200], "epochs": 10,
                      "decay_scaled_by_eta": True},
    "mnist-small": {"dataset": "mnist", "architecture": [196, 50, 50, 200], "epochs": 10,
                    "decay_scaled_by_eta": True},
    # Full-size protocol with literal weight decay; many hours of CPU time per dataset.
    "paper-full": {"dataset": "semeion", "architecture": [256, 500, 500, 2000], "epochs": 30,
                   "runs": 20, "temperatures": list(REFERENCE_TEMPERATURES)},
}


# -- config text -------------------------------------------------------------

def _field_types() -> dict[str, str]:
    return {f.name: str(f.type) for f in fields(ExperimentConfig)}


def parse_value(key: str, raw: str):
    """Convert the text form of field ``key`` to its typed value."""
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    typ, raw = types[key], raw.strip()
    try:
        if typ.startswith("list"):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            inner = typ[5:-1]
            conv = {"int": int, "float": float, "str": str}[inner]
            return [conv(x) for x in items]
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return {"int": int, "float": float, "str": str}[typ](raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            out.update(preset_values(raw))
            continue
        out[key] = parse_value(key, raw)
    return out


def preset_values(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return dict(PRESETS[name])


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if isinstance(val, list):
            val = ", ".join(map(str, val))
        elif isinstance(val, bool):
            val = str(val).lower()
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def build_config(values: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig(**values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# -- data --------------------------------------------------------------------

def load_dataset(cfg: ExperimentConfig) -> datasets.BinaryDataset:
    if not cfg.data_path:
        raise DataError(f"data_path is required for dataset {cfg.dataset!r}")
    if cfg.dataset == "semeion":
        ds = datasets.load_semeion(cfg.data_path, cfg.test_fraction, cfg.split_seed)
    elif cfg.dataset == "mnist":
        ds = datasets.load_mnist(cfg.data_path, cfg.mnist_fraction, cfg.threshold, cfg.split_seed)
    else:
        ds = datasets.load_caltech_silhouettes(cfg.data_path)
    if ds.dim != cfg.architecture[0]:
        raise ConfigError(f"architecture input {cfg.architecture[0]} != {ds.name} dimension {ds.dim}")
    return ds


# -- sweep -------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    kind: str
    algorithm: str
    temperature: float
    t_index: int
    run: int

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.algorithm}_T{self.temperature:g}_run{self.run:02d}"

    def seed(self, master: int) -> int:
        return derive_seed(master, KINDS.index(self.kind), ALGORITHMS.index(self.algorithm),
                           self.t_index, self.run)


def sweep_cells(cfg: ExperimentConfig) -> list[Cell]:
    return [Cell(kind, alg, t, ti, run)
            for kind in cfg.kinds for alg in cfg.algorithms
            for ti, t in enumerate(cfg.temperatures) for run in range(cfg.runs)]


def _write_stack_metrics(path, metrics: list[list[EpochMetrics]]) -> None:
    with open(path, "w") as f:
        f.write("layer,epoch,train_mse,mean_weight,mean_hidden_activation\n")
        for layer, rows in enumerate(metrics, 1):
            for m in rows:
                f.write(f"{layer},{m.epoch},{m.train_mse!r},{m.mean_weight!r},{m.mean_hidden_activation!r}\n")


def run_cell(cfg: ExperimentConfig, cell: Cell, train, test, out_dir) -> RunResult:
    tcfg = cfg.train_config(cell.temperature, cell.algorithm, cell.seed(cfg.seed))
    result = train_stack(train, cfg.architecture, tcfg, cell.kind, cfg.propagate_samples, cfg.tempering)
    mse = dataset_mse(result.model, test, cfg.binarize_reconstruction, cfg.fixed_point_iters)
    out_dir = Path(out_dir)
    save_stack(out_dir / f"model_{cell.name}.tdbm", result.model)
    _write_stack_metrics(out_dir / f"metrics_{cell.name}.csv", result.metrics)
    return RunResult(cell.kind, cell.algorithm, cell.temperature, cell.run, mse)


def _read_manifest(path: Path, fingerprint: str) -> dict[str, RunResult]:
    done = {}
    if not path.exists():
        return done
    with open(path) as f:
        lines = f.read().splitlines()
    for lineno, line in enumerate(lines, 1):
        try:
            rec = json.loads(line)
            if lineno > 1:
                done[rec["cell"]] = RunResult(rec["model_kind"], rec["algorithm"], float(rec["temperature"]),
                                              int(rec["run_index"]), float(rec["test_mse"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path} line {lineno} is corrupt: {exc}") from exc
        if lineno == 1 and (not isinstance(rec, dict) or rec.get("fingerprint") != fingerprint):
            raise ConfigError(f"{path} was written by a different configuration; use a fresh output_dir")
    return done


def _append_manifest(path: Path, cell: Cell, result: RunResult) -> None:
    rec = {"cell": cell.name, **dataclasses.asdict(result)}
    with open(path, "a") as f:
        f.write(json.dumps(rec) + "\n")
        f.flush()
        os.fsync(f.fileno())


def run_sweep(cfg: ExperimentConfig, progress=None) -> list[RunResult]:
    """Run every missing cell, then write ``results.csv``, ``table.txt`` and filters.

    Completed cells are recorded in ``manifest.jsonl``; a rerun skips them.
    """
    cfg.validate()
    ds = load_dataset(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / MANIFEST
    done = _read_manifest(manifest, cfg.fingerprint())
    if not manifest.exists():
        manifest.write_text(json.dumps({"fingerprint": cfg.fingerprint()}) + "\n")
    (out / "config.txt").write_text(format_config(cfg))

    cells = sweep_cells(cfg)
    todo = [c for c in cells if c.name not in done or not (out / f"model_{c.name}.tdbm").exists()]
    log.info("%d cells, %d already complete", len(cells), len(cells) - len(todo))
    train, test = ds.train.astype(np.float64), ds.test.astype(np.float64)

    def record(cell, res):
        _append_manifest(manifest, cell, res)
        done[cell.name] = res
        if progress:
            progress(cell, res)

    if cfg.workers == 1:
        for cell in todo:
            record(cell, run_cell(cfg, cell, train, test, out))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {pool.submit(run_cell, cfg, c, train, test, out): c for c in todo}
            for fut, cell in futures.items():
                record(cell, fut.result())

    results = [done[c.name] for c in cells]
    write_results_csv(out / "results.csv", results)
    title = f"Average MSE over the test set ({ds.name})"
    (out / "table.txt").write_text(render_table(results, cfg.alpha, title))
    export_sweep_filters(cfg, ds, out)
    return results


def export_sweep_filters(cfg: ExperimentConfig, ds: datasets.BinaryDataset, out: Path) -> list[Path]:
    """One first-layer filter image per temperature, from run 0 of ``filter_cell``."""
    kind, alg = cfg.filter_cell.split("-", 1) if "-" in cfg.filter_cell else ("", "")
    if kind not in cfg.kinds or alg not in cfg.algorithms:
        kind, alg = cfg.kinds[0], cfg.algorithms[0]
    paths = []
    for ti, t in enumerate(cfg.temperatures):
        cell = Cell(kind, alg, t, ti, 0)
        model = load_stack(out / f"model_{cell.name}.tdbm", cfg.bias_tempered, cfg.tempering)
        tiles = min(cfg.filter_tiles, model.layers[0].n_hidden)
        path = out / f"filters_T{t:g}.pgm"
        export_filters(model, 1, tiles, make_rng(cfg.seed, 0xF117, ti), path, ds.width, ds.height)
        paths.append(path)
    return paths


# -- filters -----------------------------------------------------------------

def filter_grid_shape(tile_count: int) -> tuple[int, int]:
    """(rows, cols) of the near-square tile grid."""
    cols = math.ceil(math.sqrt(tile_count))
    return math.ceil(tile_count / cols), cols


def tile_image(tiles: np.ndarray, height: int, width: int, separator: int = 0) -> np.ndarray:
    """Arrange min-max-normalized tiles in a grid with 1-pixel separators."""
    rows, cols = filter_grid_shape(len(tiles))
    img = np.full((rows * height + rows - 1, cols * width + cols - 1), separator, dtype=np.uint8)
    for k, t in enumerate(tiles):
        t = np.asarray(t, dtype=np.float64).reshape(height, width)
        lo, hi = t.min(), t.max()
        if hi > lo:
            px = np.rint(255 * (t - lo) / (hi - lo)).astype(np.uint8)
        else:
            px = np.full_like(t, 128, dtype=np.uint8)
        r, c = divmod(k, cols)
        img[r * (height + 1): r * (height + 1) + height, c * (width + 1): c * (width + 1) + width] = px
    return img


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise DataError(f"{path}: not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    data = parts[4]
    if len(data) != w * h:
        raise DataError(f"{path}: expected {w * h} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def export_filters(model: StackedModel, layer: int, tile_count: int, rng: np.random.Generator,
                   out_path, width: int | None = None, height: int | None = None) -> np.ndarray:
    """Write randomly chosen incoming weight columns of hidden ``layer`` (1-based) as a PGM."""
    if not 1 <= layer <= len(model.layers):
        raise InvalidArgumentError(f"layer must lie in 1..{len(model.layers)}, got {layer}")
    W = model.layers[layer - 1].W
    if not 1 <= tile_count <= W.shape[1]:
        raise InvalidArgumentError(f"tile_count must lie in 1..{W.shape[1]}, got {tile_count}")
    if width is None or height is None:
        side = math.isqrt(W.shape[0])
        width = height = side
    if width * height != W.shape[0]:
        raise DimensionError(f"tiles of {height}x{width} cannot hold {W.shape[0]} weights")
    units = rng.choice(W.shape[1], size=tile_count, replace=False)
    img = tile_image(W[:, units].T, height, width)
    write_pgm(out_path, img)
    return img


# -- inspection --------------------------------------------------------------

def describe_model(model: StackedModel) -> str:
    lines = [f"kind: {model.kind}", f"temperature: {model.temperature:g}",
             f"layers: {len(model.layers)}  sizes: {'-'.join(map(str, model.sizes))}"]
    for i, p in enumerate(model.layers, 1):
        lines.append(
            f"  layer {i}: W {p.n_visible}x{p.n_hidden}  "
            f"min {p.W.min():.6g}  mean {p.W.mean():.6g}  max {p.W.max():.6g}"
        )
    return "\n".join(lines) + "\n"


def inspect_model(path) -> str:
    return describe_model(load_stack(path))
