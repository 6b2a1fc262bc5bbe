"""Command-line front end: ``filterformer {simulate,oracle,train,eval} --config cfg.json``.

Every command reads one JSON config (file references are relative to its directory) and
writes into the output directory.  Outputs are deterministic given the config and seed;
wall-clock information goes only to ``run.log``.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .encoder import build_finite_encoder, build_pl_encoder
from .errors import ConfigError, DatasetIOError, FilterformerError
from .gaussian import Gaussian
from .model import TrainConfig, build_dataset, evaluate, init_model, load_model, save_model, train
from .oracle import run_oracle
from .paths import PLDomainSpec, read_path_csv, write_path_csv
from .sde import SimConfig, make_preset, simulate

log = logging.getLogger("filterformer")

MANIFEST = "manifest.json"


@dataclass
class SystemSpec:
    preset: str = "scalar-kalman"
    params: dict = field(default_factory=dict)


@dataclass
class SimSpec:
    T: float = 1.0
    steps: int = 256
    n_paths: int = 32
    x0_mean: list = field(default_factory=lambda: [0.0])
    x0_cov: list = field(default_factory=lambda: [[1.0]])
    y0: list = field(default_factory=lambda: [0.0])


@dataclass
class EncoderSpec:
    kind: str = "finite"  # "finite" | "pl"
    knots: list | None = None  # pl only
    max_retries: int = 64


@dataclass
class ModelSpec:
    hidden: list = field(default_factory=lambda: [64, 64])
    atoms: int = 32
    activation: str = "tanh"


@dataclass
class ExperimentConfig:
    system: SystemSpec = field(default_factory=SystemSpec)
    sim: SimSpec = field(default_factory=SimSpec)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: dict = field(default_factory=dict)  # TrainConfig fields, seed excluded
    seed: int = 0
    output: str = "out"
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
        sections = {"system": SystemSpec, "sim": SimSpec, "encoder": EncoderSpec, "model": ModelSpec}
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
        kw = {}
        for name, value in doc.items():
            if name in sections:
                kw[name] = _section(sections[name], value, name)
            else:
                kw[name] = value
        cfg = cls(**kw, base_dir=Path(base_dir))
        try:
            cfg.validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, FilterformerError):
                raise ConfigError(f"config: {exc}") from None
            raise ConfigError(f"config: bad value type: {exc}") from None
        return cfg

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError("config.seed: expected an unsigned 64-bit integer")
        make_preset(self.system.preset, self.system.params)
        if self.encoder.kind not in ("finite", "pl"):
            raise ConfigError(f"config.encoder.kind: expected 'finite' or 'pl', got {self.encoder.kind!r}")
        if self.encoder.kind == "pl" and not self.encoder.knots:
            raise ConfigError("config.encoder.knots: required for the pl encoder")
        if self.sim.n_paths < 1:
            raise ConfigError("config.sim.n_paths: must be positive")
        if self.model.atoms < 1 or any(int(h) < 1 for h in self.model.hidden):
            raise ConfigError("config.model: widths must be positive")
        self.train_config()
        self.sim_config(0)

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self.train, seed=self.seed)
        except TypeError as exc:
            raise ConfigError(f"config.train: {exc}") from None

    def sim_config(self, i: int) -> SimConfig:
        try:
            x0 = Gaussian(self.sim.x0_mean, self.sim.x0_cov)
        except FilterformerError as exc:
            raise ConfigError(f"config.sim.x0: {exc}") from None
        return SimConfig(self.sim.T, self.sim.steps, self.path_seed(i), x0, self.sim.y0)

    def path_seed(self, i: int) -> int:
        return self.seed + i

    @property
    def out_dir(self) -> Path:
        return self.base_dir / self.output


def _section(cls, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"config.{name}: expected an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"config.{name}: unknown field(s) {sorted(unknown)}")
    return cls(**value)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DatasetIOError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return ExperimentConfig.from_dict(doc, base_dir=path.parent)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


# dataset files


def _dataset_dir(cfg: ExperimentConfig) -> Path:
    return cfg.out_dir / "dataset"


def cmd_simulate(cfg: ExperimentConfig) -> Path:
    """Simulate ``n_paths`` (signal, observation) pairs and write CSVs plus a manifest."""
    coeffs = make_preset(cfg.system.preset, cfg.system.params)
    ddir = _dataset_dir(cfg)
    ddir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(cfg.sim.n_paths):
        x, y = simulate(coeffs, cfg.sim_config(i))
        obs, sig = f"obs_{i:04d}.csv", f"signal_{i:04d}.csv"
        write_path_csv(y, ddir / obs)
        write_path_csv(x, ddir / sig)
        entries.append({"seed": cfg.path_seed(i), "observation": obs, "signal": sig})
    config = cfg.to_dict()
    config.pop("output")  # keep manifests independent of where they are written
    manifest = {"schema": 1, "config": config, "samples": entries}
    (ddir / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return ddir / MANIFEST


def _load_observations(cfg: ExperimentConfig):
    ddir = _dataset_dir(cfg)
    try:
        manifest = json.loads((ddir / MANIFEST).read_text())
    except FileNotFoundError:
        raise DatasetIOError(f"no dataset at {ddir}; run 'simulate' first") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetIOError(f"cannot read {ddir / MANIFEST}: {exc}") from None
    try:
        return [read_path_csv(ddir / e["observation"]) for e in manifest["samples"]]
    except OSError as exc:
        raise DatasetIOError(str(exc)) from None


def _init_law(cfg: ExperimentConfig) -> Gaussian:
    return Gaussian(cfg.sim.x0_mean, cfg.sim.x0_cov)


def cmd_oracle(cfg: ExperimentConfig) -> list[Path]:
    """Run the exact filter on every observation path; write trajectory JSON and diagnostics CSV."""
    coeffs = make_preset(cfg.system.preset, cfg.system.params)
    tdir = cfg.out_dir / "oracle"
    tdir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, y in enumerate(_load_observations(cfg)):
        traj = run_oracle(coeffs, y, _init_law(cfg))
        traj.write_json(tdir / f"traj_{i:04d}.json")
        traj.write_diagnostics_csv(tdir / f"diag_{i:04d}.csv")
        written.append(tdir / f"traj_{i:04d}.json")
    return written


def _dataset(cfg: ExperimentConfig):
    coeffs = make_preset(cfg.system.preset, cfg.system.params)
    return build_dataset(coeffs, _load_observations(cfg), _init_law(cfg))


def _encoder(cfg: ExperimentConfig, paths):
    if cfg.encoder.kind == "finite":
        return build_finite_encoder(paths, np.random.default_rng(cfg.seed), cfg.encoder.max_retries)
    spec = PLDomainSpec(knots=tuple(cfg.encoder.knots), bound=0.0, dim=paths[0].dim)
    return build_pl_encoder(spec, paths[0].grid)


def cmd_train(cfg: ExperimentConfig) -> Path:
    """Build the frozen encoder, initialise and train the model; write ``model.json`` and ``train_log.csv``."""
    ds = _dataset(cfg)
    enc = _encoder(cfg, ds.paths)
    ds.encode(enc)
    model = init_model(enc, ds, [int(h) for h in cfg.model.hidden], cfg.model.atoms,
                       np.random.default_rng([cfg.seed, 1]), cfg.model.activation)
    trained, history = train(model, ds, cfg.train_config())
    mdir = cfg.out_dir / "model"
    mdir.mkdir(parents=True, exist_ok=True)
    save_model(trained, mdir / "model.json")
    with open(mdir / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for e, value in enumerate(history):
            w.writerow([e, repr(float(value))])
    return mdir / "model.json"


def cmd_eval(cfg: ExperimentConfig) -> dict:
    """Evaluate the trained model against oracle targets; write ``eval.csv`` and ``summary.json``."""
    mpath = cfg.out_dir / "model" / "model.json"
    if not mpath.exists():
        raise DatasetIOError(f"no model at {mpath}; run 'train' first")
    model = load_model(mpath)
    report = evaluate(model, _dataset(cfg))
    edir = cfg.out_dir / "eval"
    edir.mkdir(parents=True, exist_ok=True)
    with open(edir / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "t", "w2"])
        for i, t, gap in report.table:
            w.writerow([i, repr(t), repr(gap)])
    summary = report.summary()
    (edir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


COMMANDS = {"simulate": cmd_simulate, "oracle": cmd_oracle, "train": cmd_train, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="filterformer", description="Batch front end for filtering experiments.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="experiment JSON")
    parser.add_argument("--out", help="output directory (overrides config.output)")
    parser.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides config.seed)")
    return parser


def _side_log(out_dir: Path) -> logging.Handler | None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(out_dir / "run.log")
    except OSError:
        return None
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = None
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.output = str(Path(args.out).resolve())
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.validate()
        handler = _side_log(cfg.out_dir)
        start = time.time()
        log.info("%s started", args.command)
        COMMANDS[args.command](cfg)
        log.info("%s finished in %.2fs", args.command, time.time() - start)
        return 0
    except FilterformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DatasetIOError.exit_code
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
