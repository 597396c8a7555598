"""Command line entry point: ``mectinj <command> --config cfg.json``.

Every command validates the configuration before computing and writes a
JSON payload (plus a text table or CSV) that is byte-identical for the
same config and seed. Exit codes: 0 success, including "not found"
results; 2 configuration error; 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .atten_data import BUNDLED, MaterialSet, resolve_material
from .errors import ConfigError, DomainError, MectError, ShapeError
from .forward_model import MectSetup
from .inversion import invert, verify_unique_inversion
from .linmap_search import injectivity_constant, search_transform
from .rect_scan import CHECKS, Rectangle, ScanGrid, default_rectangle, scan, sweep_tube_potentials
from .redundant import certify_p_family
from .spectra import DEFAULT_FILTRATION_MM_AL, EnergyGrid, default_grid, kramers_spectrum, load_spectrum

CONFIG_KEYS = {
    "materials", "tube_potentials", "spectrum_model", "spectrum_files", "filtration_mm_al",
    "rectangle", "grid", "energy_grid", "seed", "budget", "strategy", "improve", "check",
    "sampling", "samples", "tp_range", "cover_splits", "y", "starts", "method", "transform",
}


@dataclass
class ExperimentConfig:
    """Experiment description read from JSON; see README for the schema."""

    materials: list
    tube_potentials: list = field(default_factory=list)
    spectrum_model: str = "kramers"
    spectrum_files: list = field(default_factory=list)
    filtration_mm_al: float = DEFAULT_FILTRATION_MM_AL
    rectangle: object = "default"
    grid: ScanGrid = field(default_factory=ScanGrid)
    energy_grid: Optional[dict] = None
    seed: int = 0
    budget: int = 1000
    strategy: str = "random"
    improve: bool = False
    check: str = "det_vanishes"
    sampling: str = "exhaustive_pairs"
    samples: int = 1000
    tp_range: tuple = (40, 150)
    cover_splits: int = 2
    y: Optional[list] = None
    starts: int = 1
    method: str = "newton"
    transform: Optional[list] = None
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(raw) - CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "materials" not in raw:
            raise ConfigError("config needs 'materials'")
        kw = dict(raw)
        g = kw.pop("grid", None)
        try:
            grid = ScanGrid(**g) if g is not None else ScanGrid()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid: {exc}") from None
        cfg = cls(grid=grid, base_dir=base_dir, **kw)
        cfg.validate()
        return cfg

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def validate(self) -> None:
        if not isinstance(self.materials, list) or not self.materials:
            raise ConfigError("'materials' must be a nonempty list")
        for mat in self.materials:
            if not isinstance(mat, str):
                raise ConfigError(f"material entries must be strings, got {mat!r}")
            if mat not in BUNDLED and not self.path(mat).is_file():
                raise ConfigError(f"unknown material or missing table file: {mat}")
        if self.spectrum_model == "kramers":
            if self.spectrum_files:
                raise ConfigError("spectrum_files given but spectrum_model is 'kramers'")
            if not all(isinstance(t, (int, float)) for t in self.tube_potentials):
                raise ConfigError("tube_potentials must be numbers")
        elif self.spectrum_model == "file":
            if not self.spectrum_files:
                raise ConfigError("spectrum_model 'file' needs spectrum_files")
            for p in self.spectrum_files:
                if not self.path(p).is_file():
                    raise ConfigError(f"spectrum file not found: {p}")
        else:
            raise ConfigError(f"spectrum_model must be 'kramers' or 'file', got {self.spectrum_model!r}")
        if self.rectangle != "default":
            r = self.rectangle
            if not (isinstance(r, dict) and set(r) == {"lower", "upper"}):
                raise ConfigError("rectangle must be 'default' or {'lower': [...], 'upper': [...]}")
            if len(r["lower"]) != len(self.materials) or len(r["upper"]) != len(self.materials):
                raise ConfigError("rectangle bounds need one entry per material")
        if self.strategy not in ("random", "adaptive"):
            raise ConfigError(f"strategy must be 'random' or 'adaptive', got {self.strategy!r}")
        if self.method not in ("newton", "gauss_seidel"):
            raise ConfigError(f"method must be 'newton' or 'gauss_seidel', got {self.method!r}")
        if self.check not in CHECKS:
            raise ConfigError(f"check must be one of {', '.join(CHECKS)}")
        if self.sampling not in ("exhaustive_pairs", "random"):
            raise ConfigError("sampling must be 'exhaustive_pairs' or 'random'")
        for name in ("budget", "samples", "cover_splits", "starts"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if len(self.tp_range) != 2:
            raise ConfigError("tp_range must be [lo, hi]")
        if self.energy_grid is not None and set(self.energy_grid) != {"lo", "hi", "step"}:
            raise ConfigError("energy_grid must be {'lo', 'hi', 'step'}")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in sorted(CONFIG_KEYS)}
        out["grid"] = self.grid.to_dict()
        out["tp_range"] = list(self.tp_range)
        return out

    @property
    def n_spectra(self) -> int:
        return len(self.spectrum_files) if self.spectrum_model == "file" else len(self.tube_potentials)

    def energy(self) -> EnergyGrid:
        if self.energy_grid is None:
            return default_grid()
        e = self.energy_grid
        return EnergyGrid.uniform(e["lo"], e["hi"], e["step"])

    def material_set(self) -> MaterialSet:
        return MaterialSet([resolve_material(m if m in BUNDLED else str(self.path(m)))
                            for m in self.materials])

    def spectra(self) -> list:
        grid = self.energy()
        if self.spectrum_model == "file":
            return [load_spectrum(self.path(p), grid) for p in self.spectrum_files]
        return [kramers_spectrum(tp, self.filtration_mm_al, grid) for tp in self.tube_potentials]

    def setup(self, square: bool = True) -> MectSetup:
        n, m = self.n_spectra, len(self.materials)
        if square and n != m:
            raise ConfigError(f"n != m: {n} spectra for {m} materials")
        if n < m:
            raise ConfigError(f"need at least as many spectra as materials, got n={n}, m={m}")
        return MectSetup(self.spectra(), self.material_set())

    def rect(self, setup: MectSetup) -> Rectangle:
        if self.rectangle == "default":
            return default_rectangle(setup)
        return Rectangle(self.rectangle["lower"], self.rectangle["upper"])


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(raw, path.parent)


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_plain) + "\n"


def _payload(command: str, cfg: ExperimentConfig, result: dict) -> dict:
    return {"metadata": {"command": command, "version": __version__}, "config": cfg.to_dict(), "result": result}


# --- commands: each returns (payload, text, csv or None) -------------------

def cmd_scan(cfg: ExperimentConfig, args):
    setup = cfg.setup()
    rect = cfg.rect(setup)
    report = scan(setup, rect, cfg.grid)
    title = "principal minors over the rectangle (rows: deleted indices)"
    return _payload("scan", cfg, report.to_dict()), report.table(title), None


def cmd_sweep(cfg: ExperimentConfig, args):
    if cfg.spectrum_model != "kramers":
        raise ConfigError("sweep builds Kramers spectra; spectrum_model must be 'kramers'")
    mats = cfg.material_set()
    if len(mats.materials) not in (2, 3, 4):
        raise ConfigError("sweep needs 2, 3 or 4 materials")
    try:
        res = sweep_tube_potentials(
            mats, tuple(cfg.tp_range), len(mats.materials), cfg.check, cfg.sampling, cfg.samples,
            cfg.seed, cfg.grid, cfg.filtration_mm_al, cfg.energy(), args.threads)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    lo, hi = res.wilson_interval()
    result = {"check": res.check, "sampling": res.sampling, "hits": res.hits, "total": len(res.rows),
              "fraction": res.fraction(), "wilson_95": [lo, hi]}
    return _payload("sweep", cfg, result), res.summary(), res.to_csv()


def cmd_search_a(cfg: ExperimentConfig, args):
    setup = cfg.setup()
    rect = cfg.rect(setup)
    cert = search_transform(setup, rect, cfg.grid, cfg.budget, cfg.strategy, cfg.seed, cfg.improve)
    if cert is None:
        result = {"found": False, "trials": cfg.budget, "strategy": cfg.strategy, "seed": cfg.seed}
        text = f"no transform found within {cfg.budget} trials ({cfg.strategy})"
    else:
        result = cert.to_dict()
        rows = "\n".join("  " + " ".join(f"{v:12.6f}" for v in row) for row in result["A"])
        text = f"found A after {cert.trials} trials ({cfg.strategy}), mu = {cert.mu:.6g}\n{rows}"
    return _payload("search-a", cfg, result), text, None


def _read_transform(cfg: ExperimentConfig, path: Optional[str]):
    raw = cfg.transform
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"transform file not found: {path}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"transform file is not valid JSON: {exc}") from None
        if isinstance(raw, dict):
            raw = raw.get("result", raw).get("A")
    if raw is None:
        return None
    A = np.asarray(raw, dtype=float)
    n = cfg.n_spectra
    if A.shape != (n, n):
        raise ConfigError(f"transform must be {n}x{n}")
    return A


def cmd_mu(cfg: ExperimentConfig, args):
    setup = cfg.setup()
    rect = cfg.rect(setup)
    A = _read_transform(cfg, args.transform)
    mu, where, report = injectivity_constant(setup, rect, cfg.grid, A, with_report=True)
    result = {
        "mu": mu,
        "A": (np.eye(setup.n) if A is None else A).tolist(),
        "argmin": None if where is None else where.tolist(),
        "p_everywhere": report.p_everywhere,
        "grid": {"kind": "grid certificate", **cfg.grid.to_dict(), **rect.to_dict()},
    }
    return _payload("mu", cfg, result), f"mu = {mu!r}", None


def cmd_invert(cfg: ExperimentConfig, args):
    setup = cfg.setup()
    rect = cfg.rect(setup)
    y = cfg.y
    if args.y is not None:
        try:
            y = [float(v) for v in args.y.split(",")]
        except ValueError:
            raise ConfigError(f"--y must be comma-separated numbers, got {args.y!r}") from None
    if y is None:
        raise ConfigError("invert needs y (--y or config 'y')")
    if len(y) != setup.n:
        raise ConfigError(f"y needs {setup.n} values")
    res = invert(setup, np.asarray(y, dtype=float), method=cfg.method, rect=rect)
    result = res.to_dict()
    text = f"x = {', '.join(repr(v) for v in result['x'])}  residual {res.residual:.3e}  converged {res.converged}"
    if cfg.starts > 1:
        try:
            uniq = verify_unique_inversion(setup, rect, cfg.starts, np.asarray(y), seed=cfg.seed, method=cfg.method)
            result["uniqueness"] = uniq.to_dict()
            text += f"\n{len(uniq.solutions)} solution cluster(s) from {uniq.converged_runs}/{cfg.starts} runs"
        except MectError as exc:
            result["uniqueness"] = {"inconclusive": str(exc)}
            text += f"\nuniqueness inconclusive: {exc}"
    return _payload("invert", cfg, result), text, None


def cmd_spectrum(cfg: ExperimentConfig, args):
    spectra = cfg.spectra()
    labels = ([f"tp_{tp:g}" for tp in cfg.tube_potentials] if cfg.spectrum_model == "kramers"
              else [Path(p).stem for p in cfg.spectrum_files])
    e = spectra[0].energies
    lines = [",".join(["energy_keV", *labels])]
    lines += [",".join([repr(float(e[k]))] + [repr(float(s.weights[k])) for s in spectra]) for k in range(e.size)]
    result = {"spectra": [{"label": lab, "total": s.total(), "mean_energy_keV": s.mean_energy()}
                          for lab, s in zip(labels, spectra)]}
    text = "\n".join(f"{r['label']}: mean energy {r['mean_energy_keV']:.3f} keV" for r in result["spectra"])
    return _payload("spectrum", cfg, result), text, "\n".join(lines) + "\n"


def cmd_family(cfg: ExperimentConfig, args):
    setup = cfg.setup(square=False)
    rect = cfg.rect(setup)
    cert = certify_p_family(setup, rect, cfg.grid, cfg.cover_splits)
    if cert is None:
        return _payload("family", cfg, {"found": False}), "no P-family certificate on this cover", None
    lines = [f"family mu = {cert.mu:.6g}, mu0 = {cert.mu0:.6g}, bound = {cert.bound:.6g}",
             f"{'cell':<6}{'subsystem':<14}{'local mu':>14}"]
    for a in cert.assignments:
        lines.append(f"{a.alpha:<6}{'{' + ','.join(map(str, a.K)) + '}':<14}{a.local_mu:>14.6g}")
    return _payload("family", cfg, cert.to_dict()), "\n".join(lines), None


COMMANDS = {
    "scan": cmd_scan,
    "sweep": cmd_sweep,
    "search-a": cmd_search_a,
    "mu": cmd_mu,
    "invert": cmd_invert,
    "spectrum": cmd_spectrum,
    "family": cmd_family,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output prefix; writes PREFIX.json plus .txt or .csv")
    common.add_argument("--threads", type=int, default=1, help="worker threads (sweep)")
    parser = argparse.ArgumentParser(prog="mectinj", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("scan", parents=[common], help="principal minor extrema on the rectangle")
    p = sub.add_parser("sweep", parents=[common], help="tube potential sweep to CSV")
    p.add_argument("--check", choices=CHECKS)
    p.add_argument("--sampling", choices=("exhaustive_pairs", "random"))
    p.add_argument("--samples", type=int)
    p = sub.add_parser("search-a", parents=[common], help="search a det-1 transform A")
    p.add_argument("--budget", type=int)
    p.add_argument("--strategy", choices=("random", "adaptive"))
    p.add_argument("--improve", action="store_true", default=None, help="keep searching after the identity passes")
    p = sub.add_parser("mu", parents=[common], help="injectivity constant of A I")
    p.add_argument("--transform", help="JSON file with a matrix or a search-a certificate")
    p = sub.add_parser("invert", parents=[common], help="numerically invert y")
    p.add_argument("--y", help="comma-separated measurement vector")
    p.add_argument("--starts", type=int)
    p.add_argument("--method", choices=("newton", "gauss_seidel"))
    p = sub.add_parser("spectrum", parents=[common], help="export the configured spectra")
    p = sub.add_parser("family", parents=[common], help="P-family certificate for n > m")
    p.add_argument("--cover-splits", type=int, dest="cover_splits")
    return parser


OVERRIDES = ("seed", "check", "sampling", "samples", "budget", "strategy", "improve", "starts", "method",
             "cover_splits")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        for name in OVERRIDES:
            v = getattr(args, name, None)
            if v is not None:
                setattr(cfg, name, v)
        cfg.validate()
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        payload, text, csv = COMMANDS[args.command](cfg, args)
    except (ConfigError, ShapeError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MectError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    body = dumps(payload)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".json").write_text(body)
        out.with_suffix(".txt").write_text(text + "\n")
        if csv is not None:
            out.with_suffix(".csv").write_text(csv)
        print(text)
    else:
        sys.stdout.write(body)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
