"""``crnreduce simulate | reduce | validate --config <file>``.

The configuration is a flat ``key = value`` file; lists are comma separated
and ``#`` starts a comment.  Relative paths are resolved against the
directory holding the config.  Keys::

    mechanism_path   file path, or builtin:h2o2_58
    dt, T, substeps, sigma, seed
    conditions       sweep:<n> (built-in sweep), or a CSV path
    condition.<id>   inline condition, e.g. ``A:1.0, B:0.5`` (unlisted species 0)
    train_ids        ids or ranges (``0-45``); default: all but the hold-out
    holdout_ids      default: the last two conditions (none if fewer than 3)
    epsilons, solver, tolerance_mode, prune_min_count, rounding, node_limit
    output_dir

Exit codes: 0 success, 1 infeasible step or solver failure, 2 configuration
or I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import BUILTIN_MECHANISMS, h2o2_conditions
from .kinetics import (
    Condition,
    NoiseSpec,
    SimulationError,
    generate_dataset,
    read_trajectory,
    write_trajectory,
)
from .mechanism import Mechanism, MechanismError, load_mechanism, mechanism_digest, parse_mechanism
from .pipeline import (
    SOLVERS,
    MonotonicityError,
    audit_bound,
    read_result,
    sweep_epsilon,
    validate_holdout,
    write_audit,
    write_curves,
    write_result,
)
from .selection import TOLERANCE_MODES

log = logging.getLogger("crnreduce")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    """Bad configuration or missing input; maps to exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    mechanism_path: str
    dt: float = 1e-3
    T: int = 200
    substeps: int = 1
    sigma: float = 0.0
    seed: int = 0
    conditions: str = ""
    inline_conditions: tuple = ()
    train_ids: tuple[int, ...] | None = None
    holdout_ids: tuple[int, ...] | None = None
    epsilons: tuple[float, ...] = (0.05, 0.1, 0.2)
    solver: str = "relaxed"
    tolerance_mode: str = "relative"
    prune_min_count: float = 0
    rounding: str = "threshold"
    node_limit: int = 100_000
    output_dir: str = "output"
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def canonical(self) -> str:
        """Normalized text of the effective settings; hashed for provenance."""
        items = {
            "mechanism_path": self.mechanism_path,
            "dt": repr(self.dt),
            "T": self.T,
            "substeps": self.substeps,
            "sigma": repr(self.sigma),
            "seed": self.seed,
            "conditions": self.conditions,
            "inline_conditions": ";".join(f"{i}:{s}" for i, s in self.inline_conditions),
            "train_ids": "" if self.train_ids is None else ",".join(map(str, self.train_ids)),
            "holdout_ids": "" if self.holdout_ids is None else ",".join(map(str, self.holdout_ids)),
            "epsilons": ",".join(repr(e) for e in self.epsilons),
            "solver": self.solver,
            "tolerance_mode": self.tolerance_mode,
            "prune_min_count": self.prune_min_count,
            "rounding": self.rounding,
            "node_limit": self.node_limit,
        }
        return "".join(f"{k}={v}\n" for k, v in items.items())

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


_SCALARS = {
    "mechanism_path": str,
    "dt": float,
    "T": int,
    "substeps": int,
    "sigma": float,
    "seed": int,
    "conditions": str,
    "solver": str,
    "tolerance_mode": str,
    "rounding": str,
    "node_limit": int,
    "output_dir": str,
}


def _parse_id_list(text: str) -> tuple[int, ...]:
    ids: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, dash, hi = part.partition("-")
        if dash:
            ids.extend(range(int(lo), int(hi) + 1))
        else:
            ids.append(int(part))
    return tuple(ids)


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    values: dict = {}
    inline = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"config line {lineno}: expected key = value, got {raw!r}")
        try:
            if key.startswith("condition."):
                inline.append((int(key.split(".", 1)[1]), value))
            elif key in _SCALARS:
                values[key] = _SCALARS[key](value)
            elif key in ("train_ids", "holdout_ids"):
                values[key] = _parse_id_list(value)
            elif key == "epsilons":
                values[key] = tuple(float(v) for v in value.split(",") if v.strip())
            elif key == "prune_min_count":
                values[key] = math.inf if value in ("inf", "infinity") else int(value)
            else:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: bad value for {key!r}: {exc}") from None
    if "mechanism_path" not in values:
        raise ConfigError("config lacks mechanism_path")
    cfg = ExperimentConfig(**values, inline_conditions=tuple(sorted(inline)), base_dir=str(base_dir))
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def validate_config(cfg: ExperimentConfig) -> None:
    if not cfg.epsilons:
        raise ConfigError("epsilons is empty")
    if any(not e > 0 for e in cfg.epsilons) or len(set(cfg.epsilons)) != len(cfg.epsilons):
        raise ConfigError("epsilons must be positive and distinct")
    if cfg.solver not in SOLVERS:
        raise ConfigError(f"solver must be one of {SOLVERS}, got {cfg.solver!r}")
    if cfg.tolerance_mode not in TOLERANCE_MODES:
        raise ConfigError(f"tolerance_mode must be one of {TOLERANCE_MODES}, got {cfg.tolerance_mode!r}")
    if cfg.rounding not in ("threshold", "randomized"):
        raise ConfigError(f"rounding must be threshold or randomized, got {cfg.rounding!r}")
    if not cfg.dt > 0 or cfg.T < 1 or cfg.substeps < 1 or cfg.sigma < 0 or cfg.node_limit < 1:
        raise ConfigError("need dt > 0, T >= 1, substeps >= 1, sigma >= 0, node_limit >= 1")
    if cfg.prune_min_count < 0:
        raise ConfigError("prune_min_count must be >= 0")
    if cfg.train_ids is not None and cfg.holdout_ids is not None:
        both = set(cfg.train_ids) & set(cfg.holdout_ids)
        if both:
            raise ConfigError(f"condition ids {sorted(both)} are both training and hold-out")
    if not cfg.mechanism_path.startswith("builtin:") and not cfg.resolve(cfg.mechanism_path).is_file():
        raise ConfigError(f"mechanism file not found: {cfg.resolve(cfg.mechanism_path)}")
    if cfg.conditions and not cfg.conditions.startswith("sweep:") and not cfg.resolve(cfg.conditions).is_file():
        raise ConfigError(f"conditions file not found: {cfg.resolve(cfg.conditions)}")
    if not cfg.conditions and not cfg.inline_conditions:
        raise ConfigError("no conditions: set conditions or condition.<id> entries")


# -- building inputs ---------------------------------------------------------

def build_mechanism(cfg: ExperimentConfig) -> Mechanism:
    if cfg.mechanism_path.startswith("builtin:"):
        name = cfg.mechanism_path.split(":", 1)[1]
        if name not in BUILTIN_MECHANISMS:
            raise ConfigError(f"unknown built-in mechanism {name!r}; have {sorted(BUILTIN_MECHANISMS)}")
        from .benchmarks import h2o2_text
        return parse_mechanism(h2o2_text())
    path = cfg.resolve(cfg.mechanism_path)
    try:
        return load_mechanism(path)
    except OSError as exc:
        raise ConfigError(f"cannot read mechanism {path}: {exc.strerror}") from None
    except MechanismError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _species_values(mech: Mechanism, text: str, where: str) -> np.ndarray:
    x0 = np.zeros(mech.n_species)
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, sep, value = item.partition(":")
        if not sep:
            raise ConfigError(f"{where}: expected species:value, got {item!r}")
        try:
            x0[mech.index(name.strip())] = float(value)
        except KeyError:
            raise ConfigError(f"{where}: unknown species {name.strip()!r}") from None
        except ValueError:
            raise ConfigError(f"{where}: bad value {value!r}") from None
    return x0


def _conditions_csv(mech: Mechanism, path: Path) -> list[Condition]:
    """Header ``id,<species...>`` plus optional ``scale_<k>`` columns (1-based
    reaction numbers, missing ones default to 1)."""
    rows = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise ConfigError(f"{path}: empty conditions file")
    header = [h.strip() for h in rows[0].split(",")]
    if header[0] != "id":
        raise ConfigError(f"{path}: first column must be id")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        cells = [c.strip() for c in row.split(",")]
        if len(cells) != len(header):
            raise ConfigError(f"{path} line {lineno}: expected {len(header)} fields")
        x0 = np.zeros(mech.n_species)
        scale = None
        try:
            for h, c in zip(header[1:], cells[1:]):
                if h.startswith("scale_"):
                    if scale is None:
                        scale = np.ones(mech.n_reactions)
                    scale[int(h[6:]) - 1] = float(c)
                else:
                    x0[mech.index(h)] = float(c)
            out.append(Condition(int(cells[0]), x0, scale))
        except (KeyError, ValueError, IndexError) as exc:
            raise ConfigError(f"{path} line {lineno}: {exc}") from None
    return out


def build_conditions(cfg: ExperimentConfig, mech: Mechanism) -> list[Condition]:
    conds: list[Condition] = []
    if cfg.conditions.startswith("sweep:"):
        try:
            conds = h2o2_conditions(mech, int(cfg.conditions.split(":", 1)[1]))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"conditions {cfg.conditions!r}: {exc}") from None
    elif cfg.conditions:
        conds = _conditions_csv(mech, cfg.resolve(cfg.conditions))
    for cid, text in cfg.inline_conditions:
        try:
            conds.append(Condition(cid, _species_values(mech, text, f"condition.{cid}")))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    ids = [c.id for c in conds]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate condition ids")
    return sorted(conds, key=lambda c: c.id)


def split_ids(cfg: ExperimentConfig, ids) -> tuple[list[int], list[int]]:
    ids = sorted(ids)
    known = set(ids)
    if cfg.holdout_ids is not None:
        holdout = list(cfg.holdout_ids)
    else:
        holdout = ids[-2:] if len(ids) >= 3 else []
    if cfg.train_ids is not None:
        train = list(cfg.train_ids)
    else:
        train = [i for i in ids if i not in set(holdout)]
    missing = sorted((set(train) | set(holdout)) - known)
    if missing:
        raise ConfigError(f"condition ids {missing} are not defined")
    if set(train) & set(holdout):
        raise ConfigError("training and hold-out ids overlap")
    return train, holdout


# -- output helpers ----------------------------------------------------------

def _traj_dir(out: Path) -> Path:
    return out / "trajectories"


def _traj_path(out: Path, cid: int) -> Path:
    return _traj_dir(out) / f"condition_{cid}.csv"


def _eps_tag(eps: float) -> str:
    return f"{eps:g}"


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_sha256": cfg.digest}


def _setup_logging(out: Path, verbose: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger("crnreduce")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    fh = logging.FileHandler(out / "run.log", encoding="utf-8")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root.addHandler(fh)
    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(logging.DEBUG if verbose else logging.WARNING)
    sh.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(sh)


def _load_trajectories(cfg: ExperimentConfig, mech: Mechanism, ids) -> list:
    out = cfg.resolve(cfg.output_dir)
    digest = mechanism_digest(mech)
    trajs = []
    for cid in ids:
        path = _traj_path(out, cid)
        if not path.is_file():
            raise ConfigError(f"trajectory file missing: {path} (run simulate first)")
        try:
            traj = read_trajectory(path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read trajectory {path}: {exc}") from None
        if traj.meta.get("mechanism_sha256") != digest:
            raise ConfigError(f"{path} was generated with a different mechanism")
        trajs.append(traj)
    return trajs


# -- subcommands -------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, workers: int = 1) -> int:
    mech = build_mechanism(cfg)
    conds = build_conditions(cfg, mech)
    if not conds:
        raise ConfigError("no conditions defined")
    out = cfg.resolve(cfg.output_dir)
    _traj_dir(out).mkdir(parents=True, exist_ok=True)
    log.info("simulate: %d conditions, dt=%g, T=%d, substeps=%d, sigma=%g",
             len(conds), cfg.dt, cfg.T, cfg.substeps, cfg.sigma)
    try:
        trajs = generate_dataset(mech, conds, cfg.dt, cfg.T, cfg.substeps,
                                 NoiseSpec(cfg.sigma, cfg.seed), workers=workers)
    except SimulationError as exc:
        log.error("%s", exc)
        print(f"error: simulation failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    extra = {"crnreduce": __version__, **_provenance(cfg)}
    for traj in trajs:
        write_trajectory(traj, _traj_path(out, traj.condition_id), mech, extra)
    print(f"wrote {len(trajs)} trajectories to {_traj_dir(out)}")
    return EXIT_OK


def cmd_reduce(cfg: ExperimentConfig, workers: int = 1) -> int:
    mech = build_mechanism(cfg)
    conds = build_conditions(cfg, mech)
    train, _ = split_ids(cfg, [c.id for c in conds])
    if not train:
        raise ConfigError("the training set is empty")
    trajs = _load_trajectories(cfg, mech, train)
    out = cfg.resolve(cfg.output_dir)
    prov = _provenance(cfg)
    code = EXIT_OK
    try:
        sweep = sweep_epsilon(
            mech, trajs, cfg.epsilons, cfg.solver,
            prune_min_count=cfg.prune_min_count, tolerance_mode=cfg.tolerance_mode,
            workers=workers, rounding=cfg.rounding, node_limit=cfg.node_limit, seed=cfg.seed,
        )
    except MonotonicityError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        sweep, code = exc.sweep, EXIT_FAILURE
    print("epsilon  union  support  violations  steps  node_limit")
    for eps in sorted(set(cfg.epsilons)):
        if eps in sweep.errors:
            print(f"{eps:<8g} failed: {sweep.errors[eps]}")
            print(f"error: epsilon={eps:g}: {sweep.errors[eps]}", file=sys.stderr)
            code = EXIT_FAILURE
            continue
        res = sweep[eps]
        report = audit_bound(mech, trajs, res)
        write_result(res, out / f"result_eps{_eps_tag(eps)}.txt", prov)
        write_audit(report, out / f"audit_eps{_eps_tag(eps)}.csv", prov)
        limited = res.status_counts().get("node_limit", 0)
        if limited:
            print(f"warning: epsilon={eps:g}: {limited} step(s) stopped at the node limit", file=sys.stderr)
        print(f"{eps:<8g} {len(res.union):>5d}  {len(res.support):>7d}  {report.violation_count:>10d}"
              f"  {len(report):>5d}  {limited:>10d}")
        log.info("epsilon=%g union=%d support=%d violations=%d", eps, len(res.union), len(res.support),
                 report.violation_count)
    return code


def cmd_validate(cfg: ExperimentConfig, result_paths=None) -> int:
    mech = build_mechanism(cfg)
    conds = build_conditions(cfg, mech)
    train, holdout = split_ids(cfg, [c.id for c in conds])
    if not holdout:
        raise ConfigError("no hold-out conditions configured")
    out = cfg.resolve(cfg.output_dir)
    if not result_paths:
        result_paths = [out / f"result_eps{_eps_tag(e)}.txt" for e in sorted(cfg.epsilons)]
    trajs = _load_trajectories(cfg, mech, holdout)
    prov = _provenance(cfg)
    print("epsilon  holdout_steps  satisfied  violations  max_ratio")
    for path in result_paths:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"result file missing: {path} (run reduce first)")
        try:
            res = read_result(path)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if res.n_reactions != mech.n_reactions:
            raise ConfigError(f"{path}: result has {res.n_reactions} reactions, mechanism {mech.n_reactions}")
        if set(res.condition_ids) != set(train):
            raise ConfigError(f"{path}: result was trained on conditions {list(res.condition_ids)}, "
                              f"config says {train}")
        report = validate_holdout(mech, trajs, res)
        tag = _eps_tag(res.epsilon)
        write_audit(report, out / f"holdout_audit_eps{tag}.csv", prov)
        write_curves(report, out / "curves", prefix=f"curve_eps{tag}", provenance=prov)
        sat = len(report) - report.violation_count
        print(f"{res.epsilon:<8g} {len(report):>13d}  {sat:>9d}  {report.violation_count:>10d}  {report.max_ratio:>9.4f}")
        log.info("validate epsilon=%g: %d/%d hold-out steps satisfied", res.epsilon, sat, len(report))
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crnreduce", description="Reaction-network reduction by sparse selection.")
    parser.add_argument("--version", action="version", version=f"crnreduce {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "generate trajectories for every configured condition"),
        ("reduce", "select reactions for each epsilon and audit the union on the training data"),
        ("validate", "audit reduced mechanisms on the hold-out conditions"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--epsilon", type=float, action="append",
                       help="replace the configured epsilons (repeatable)")
        p.add_argument("--solver", choices=SOLVERS)
        p.add_argument("--tolerance-mode", choices=TOLERANCE_MODES)
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
        p.add_argument("--output-dir")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "validate":
            p.add_argument("--result", action="append", help="result file(s); default: one per epsilon")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.epsilon:
        changes["epsilons"] = tuple(args.epsilon)
    if args.solver:
        changes["solver"] = args.solver
    if args.tolerance_mode:
        changes["tolerance_mode"] = args.tolerance_mode
    if args.output_dir:
        changes["output_dir"] = str(Path(args.output_dir).resolve())
    cfg = replace(cfg, **changes)
    validate_config(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
        if workers < 1:
            raise ConfigError("--workers must be >= 1")
        _setup_logging(cfg.resolve(cfg.output_dir), args.verbose)
        log.info("crnreduce %s %s config_sha256=%s", __version__, args.command, cfg.digest)
        if args.command == "simulate":
            return cmd_simulate(cfg, workers)
        if args.command == "reduce":
            return cmd_reduce(cfg, workers)
        return cmd_validate(cfg, args.result)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
