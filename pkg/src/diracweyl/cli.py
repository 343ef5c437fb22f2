"""Command-line front end.

Usage::

    diracweyl <command> --config job.yaml [--out DIR] [--tol name=value ...] [--n N]

Commands: ``forward``, ``inverse``, ``roundtrip``, ``verify-node``,
``asymptotics``, ``borg-marchenko``.

Exit codes: 0 success, 1 tolerance check failed, 2 non-convergence,
3 input/output or validation error, 4 admissibility failure.
"""

from __future__ import annotations

import argparse
import ast
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
import yaml

from . import asymptotics, fileio, inverse, snode
from .dirac_core import beta_gamma, jrelation_residuals, solve_dirac
from .errors import (AdmissibilityError, DiracError, IntegrationOverflowError, InvalidInputError,
                     NonConvergenceError)
from .fields import Dimensions, Grid, MatrixField, Potential
from .weyl_forward import WeylSampleSet, weyl_callable, weyl_function, weyl_function_batch

EXIT_OK, EXIT_TOL, EXIT_NONCONV, EXIT_IO, EXIT_ADMISSIBILITY = 0, 1, 2, 3, 4

COMMANDS = ("forward", "inverse", "roundtrip", "verify-node", "asymptotics", "borg-marchenko")

DEFAULT_TOLERANCES = {
    "weyl": 1e-10,
    "nonexpansive": 1e-8,
    "snap": 1e-3,
    "roundtrip_sup": 1e-2,
    "roundtrip_l2": 1e-2,
    "route_discrepancy": 1e-3,
    "representation": 1e-3,
    "admissibility_margin": 1e-12,
}

_FUNCTIONS = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sinh", "cosh", "tanh",
                 "arctan", "where", "heaviside", "minimum", "maximum", "real", "imag", "conj")
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_ALLOWED_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
                  ast.Constant, ast.Compare, ast.operator, ast.unaryop, ast.cmpop)


def compile_expression(expr: str):
    """Entry expression in ``x`` using numpy functions; no attributes, no other names."""
    try:
        tree = ast.parse(str(expr), mode="eval")
    except SyntaxError as exc:
        raise InvalidInputError(f"bad potential expression {expr!r}: {exc.msg}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise InvalidInputError(f"{type(node).__name__} not allowed in expression {expr!r}")
        if isinstance(node, ast.Name) and node.id not in _FUNCTIONS and node.id not in _CONSTANTS \
                and node.id != "x":
            raise InvalidInputError(f"unknown name {node.id!r} in expression {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCTIONS):
            raise InvalidInputError(f"only numpy functions may be called in {expr!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float, complex)):
            raise InvalidInputError(f"only numeric constants allowed in {expr!r}")
    code = compile(tree, "<potential>", "eval")

    def f(x):
        ns = dict(_FUNCTIONS, **_CONSTANTS, x=x)
        return np.broadcast_to(np.asarray(eval(code, {"__builtins__": {}}, ns), dtype=complex), x.shape)

    return f


def _resolve(path, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def parse_potential(entry, base: Path, name: str) -> Potential:
    if not isinstance(entry, dict):
        raise InvalidInputError(f"{name}: expected a mapping with 'entries' or 'file'")
    if "entries" in entry:
        rows = entry["entries"]
        if not rows or not all(isinstance(r, list) and r for r in rows):
            raise InvalidInputError(f"{name}: 'entries' must be a nested list")
        table = [[compile_expression(e) for e in r] for r in rows]
        return Potential.from_entries(table, name=name)
    if "file" in entry:
        f = fileio.read_field(_resolve(entry["file"], base))
        return Potential.from_field(f, name=name)
    raise InvalidInputError(f"{name}: expected 'entries' or 'file'")


@dataclass
class JobConfig:
    """Parsed job description."""

    command: str
    grid: Grid
    dims: Dimensions | None
    potential: Potential | None
    output_dir: Path
    phi_source: str = "computed"
    inversion: dict = field(default_factory=dict)
    z_lattice: dict | None = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    potential_b: Potential | None = None
    asymptotics: dict = field(default_factory=dict)
    borg_marchenko: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    base: Path = Path(".")

    def require_potential(self) -> Potential:
        if self.potential is None:
            raise InvalidInputError(f"command {self.command} needs a 'potential' entry")
        return self.potential

    def inversion_config(self) -> inverse.InversionConfig:
        inv = self.inversion
        return inverse.InversionConfig(
            self.grid, eta=float(inv.get("eta", 1.0)), xi_max=inv.get("xi_max"), n_xi=inv.get("n_xi"),
            snap_tol=self.tolerances["snap"], check_eta=inv.get("check_eta", 2.0))


def load_config(path, command: str, out: str | None = None, tol_overrides=(), n: int | None = None) -> JobConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidInputError(f"{path}: config must be a mapping")
    base = path.parent
    if "command" in raw and raw["command"] != command:
        raise InvalidInputError(f"config is for command {raw['command']!r}, not {command!r}")
    g = raw.get("grid") or {}
    try:
        grid = Grid(float(g.get("l", 1.0)), int(n if n is not None else g.get("n", 256)))
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"bad grid: {exc}") from exc
    tol = dict(DEFAULT_TOLERANCES)
    tol.update({k: float(v) for k, v in (raw.get("tolerances") or {}).items()})
    for item in tol_overrides:
        if "=" not in item:
            raise InvalidInputError(f"--tol expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            tol[k.strip()] = float(v)
        except ValueError as exc:
            raise InvalidInputError(f"--tol {item!r}: {exc}") from exc
    unknown = set(tol) - set(DEFAULT_TOLERANCES)
    if unknown:
        raise InvalidInputError(f"unknown tolerance names {sorted(unknown)}")
    bad = [k for k, v in tol.items() if not v > 0]
    if bad:
        raise InvalidInputError(f"tolerances must be positive: {bad}")
    pot = parse_potential(raw["potential"], base, "v") if raw.get("potential") is not None else None
    pot_b = parse_potential(raw["potential_b"], base, "v_b") if raw.get("potential_b") is not None else None
    dims = None
    if raw.get("dims"):
        dims = Dimensions(int(raw["dims"]["m1"]), int(raw["dims"]["m2"]))
        for p in (pot, pot_b):
            if p is not None and p.dims != dims:
                raise InvalidInputError(f"potential {p.name} is {p.dims.m1}x{p.dims.m2}, config dims {dims}")
    phi_source = raw.get("phi_source", "computed")
    if phi_source != "computed":
        phi_source = str(_resolve(phi_source, base))
    output_dir = Path(out) if out else _resolve(raw.get("output_dir", "out"), base)
    cfg = JobConfig(command=command, grid=grid, dims=dims or (pot.dims if pot else None),
                    potential=pot, output_dir=output_dir, phi_source=phi_source,
                    inversion=raw.get("inversion") or {}, z_lattice=raw.get("z_lattice"),
                    tolerances=tol, potential_b=pot_b, asymptotics=raw.get("asymptotics") or {},
                    borg_marchenko=raw.get("borg_marchenko") or {}, verify=raw.get("verify") or {},
                    base=base)
    _check_required(cfg)
    return cfg


def _check_required(cfg: JobConfig) -> None:
    needs_v = {"forward", "roundtrip", "verify-node", "asymptotics", "borg-marchenko"}
    if cfg.command in needs_v:
        cfg.require_potential()
    if cfg.command == "inverse" and cfg.phi_source == "computed":
        cfg.require_potential()
    if cfg.command == "borg-marchenko" and cfg.potential_b is None:
        raise InvalidInputError("borg-marchenko needs 'potential_b'")


def _lattice(cfg: JobConfig) -> np.ndarray:
    lat = cfg.z_lattice
    if lat is None:
        return cfg.inversion_config().z
    try:
        xi = np.linspace(float(lat["xi_min"]), float(lat["xi_max"]), int(lat["count"]))
        eta = float(lat["eta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"z_lattice needs eta, xi_min, xi_max, count: {exc}") from exc
    if not eta > 0:
        raise InvalidInputError("z_lattice eta must be positive")
    return xi + 1j * eta


def _sup_l2(err: np.ndarray, x: np.ndarray, upto: float) -> tuple[float, float, np.ndarray]:
    mask = x <= upto + 1e-12
    e = np.linalg.norm(err, 2, axis=(1, 2))
    xs, es = x[mask], e[mask]
    l2 = float(np.sqrt(trapezoid(es**2, xs))) if xs.size > 1 else 0.0
    return float(es.max()), l2, e


def run_forward(cfg: JobConfig, out: fileio.OutputSet) -> int:
    v = cfg.require_potential()
    z = _lattice(cfg)
    vals, errs, lens = weyl_function_batch(v, z, tol=cfg.tolerances["weyl"])
    samples = WeylSampleSet(z, vals, v.dims, provenance="computed", tol=cfg.tolerances["nonexpansive"])
    Phi1, _ = snode.phi1_from_potential(v, cfg.grid)
    out.add("weyl_samples.txt", fileio.samples_text(samples))
    out.add("phi1.txt", fileio.field_text(Phi1))
    out.add("phi1_plot.txt", fileio.plot_text(Phi1))
    out.add("forward_report.json", fileio.json_text({
        "command": "forward", "samples": int(z.size), "max_ladder_error": float(errs.max()),
        "max_truncation_length": float(lens.max()),
        "max_phi_norm": float(np.linalg.norm(vals, 2, axis=(1, 2)).max()),
        "grid": {"l": cfg.grid.l, "n": cfg.grid.n}}))
    return EXIT_OK


def _phi_for_inverse(cfg: JobConfig):
    if cfg.phi_source == "computed":
        return weyl_callable(cfg.require_potential(), tol=cfg.tolerances["weyl"]), cfg.inversion_config()
    samples = fileio.read_weyl_samples(cfg.phi_source, tol=cfg.tolerances["nonexpansive"])
    eta, lo, hi, count = samples.horizontal_line()
    d = (hi - lo) / (count - 1)
    if abs(lo + hi) > 1e-9 * max(1.0, hi):
        raise InvalidInputError("sample line must be symmetric about Re z = 0")
    icfg = inverse.InversionConfig(cfg.grid, eta=eta, xi_max=hi + d / 2, n_xi=count,
                                   snap_tol=cfg.tolerances["snap"], check_eta=None)
    return samples, icfg


def _inversion_report(res: inverse.InversionResult) -> dict:
    return {"diagnostics": res.diagnostics}


def run_inverse(cfg: JobConfig, out: fileio.OutputSet) -> int:
    phi, icfg = _phi_for_inverse(cfg)
    try:
        res = inverse.potential_from_weyl(phi, icfg)
    except AdmissibilityError as exc:
        report = {"command": "inverse", "error": str(exc), "stage": exc.stage,
                  "eigenvalue": exc.eigenvalue, "length": exc.length,
                  "diagnostics": getattr(exc, "diagnostics", {})}
        out.files.clear()
        out.add("inverse_diagnostics.json", fileio.json_text(report))
        raise
    out.add("v_hat.txt", fileio.field_text(res.v))
    out.add("v_hat_plot.txt", fileio.plot_text(res.v))
    out.add("phi1.txt", fileio.field_text(res.Phi1))
    out.add("inverse_diagnostics.json", fileio.json_text({"command": "inverse", **_inversion_report(res)}))
    return EXIT_OK


def run_roundtrip(cfg: JobConfig, out: fileio.OutputSet) -> int:
    v = cfg.require_potential()
    icfg = cfg.inversion_config()
    res = inverse.potential_from_weyl(weyl_callable(v, tol=cfg.tolerances["weyl"]), icfg)
    truth = v.sample(cfg.grid)
    upto = 0.9 * cfg.grid.l
    sup, l2, prof = _sup_l2(res.v.values - truth.values, cfg.grid.x, upto)
    ok = sup <= cfg.tolerances["roundtrip_sup"] and l2 <= cfg.tolerances["roundtrip_l2"]
    report = {"command": "roundtrip", "sup_error": sup, "l2_error": l2, "interval": [0.0, upto],
              "within_tolerance": bool(ok), "tolerances": cfg.tolerances, **_inversion_report(res)}
    out.add("roundtrip_report.json", fileio.json_text(report))
    out.add("v_hat.txt", fileio.field_text(res.v))
    out.add("phi1.txt", fileio.field_text(res.Phi1))
    out.add("roundtrip_plot.txt", fileio.plot_text({
        "x": cfg.grid.x, "error": prof,
        "abs_v": np.linalg.norm(truth.values, 2, axis=(1, 2)),
        "abs_v_hat": np.linalg.norm(res.v.values, 2, axis=(1, 2))}))
    return EXIT_OK if ok else EXIT_TOL


def run_verify_node(cfg: JobConfig, out: fileio.OutputSet) -> int:
    v = cfg.require_potential()
    grid = cfg.grid
    Phi1, _ = snode.phi1_from_potential(v, grid)
    node = snode.make_node(Phi1)
    E = snode.factor_S_inverse(node.S, grid, node.dims.m2)
    beta_ref, gamma_ref = beta_gamma(v, grid)
    gamma = snode.gamma_from_node(node, E)
    beta = inverse.recover_beta(node, E)
    x = float(cfg.verify.get("x", min(1.0, grid.l)))
    zs = [complex(z) for z in cfg.verify.get("z", ["1j", "2j", "1+1j"])]
    u0 = MatrixField(grid, solve_dirac(v, 0.0, grid).values, role="u0")
    rep = {}
    for z in zs:
        diff = snode.fundamental_from_node(node, u0, x, z) - solve_dirac(v, z, grid).at(x)
        rep[str(z)] = float(np.linalg.norm(diff, 2))
    rel = jrelation_residuals(beta, gamma)
    diag_dev = np.linalg.norm(E.diagonal_blocks() - np.eye(node.dims.m2), 2, axis=(1, 2))
    ok = max(rep.values()) <= cfg.tolerances["representation"]
    report = {
        "command": "verify-node", "grid": {"l": grid.l, "n": grid.n},
        "operator_identity_residual": snode.check_operator_identity(node),
        "factorization_residual": snode.factorization_residual(E, node.S),
        "max_diagonal_deviation": float(diag_dev.max()),
        "j_relations": {k: float(v_.max()) for k, v_ in rel.items()},
        "beta_vs_forward": float(np.abs(beta.values - beta_ref.values).max()),
        "gamma_vs_forward": float(np.abs(gamma.values - gamma_ref.values).max()),
        "representation_x": x, "representation_error": rep,
        "min_eigenvalue": snode.smallest_eigenvalue(node.S),
        "within_tolerance": bool(ok),
    }
    out.add("verify_node_report.json", fileio.json_text(report))
    out.add("phi1.txt", fileio.field_text(Phi1))
    return EXIT_OK if ok else EXIT_TOL


def run_asymptotics(cfg: JobConfig, out: fileio.OutputSet) -> int:
    v = cfg.require_potential()
    a = cfg.asymptotics
    tol = cfg.tolerances["weyl"]
    phi = weyl_callable(v, tol=tol)
    l_he = float(a.get("l", 1 / 16))
    he_grid = Grid(l_he, int(a.get("n", 512)))
    Phi1_he, _ = snode.phi1_from_potential(v, he_grid)
    he = asymptotics.high_energy_check(phi, Phi1_he, l_he, a.get("heights", [5, 10, 20, 40, 64]))
    Phi1, _ = snode.phi1_from_potential(v, cfg.grid)
    lengths = a.get("lengths") or [cfg.grid.l * k / 4 for k in (1, 2, 3, 4)]
    adm = asymptotics.admissibility_check(Phi1, lengths, cfg.tolerances["admissibility_margin"])
    repr_check = {}
    for z in a.get("z", ["3j", "1+2j"]):
        z = complex(z)
        w, tail = asymptotics.weyl_from_phi1(Phi1, z)
        repr_check[str(z)] = {"difference": float(np.linalg.norm(w - weyl_function(v, z, tol=tol).value, 2)),
                              "tail_bound": tail}
    report = {"command": "asymptotics", "high_energy": he, "admissibility": adm,
              "representation": repr_check}
    out.add("asymptotics_report.json", fileio.json_text(report))
    out.add("high_energy_plot.txt", fileio.plot_text({"x": he["heights"], "r": he["r"]}))
    return EXIT_OK if (he["bounded"] and adm["admissible"]) else EXIT_TOL


def run_borg_marchenko(cfg: JobConfig, out: fileio.OutputSet) -> int:
    bm = cfg.borg_marchenko
    tol = cfg.tolerances["weyl"]
    ray = asymptotics.RaySampling(c=float(bm.get("c", 0.0)),
                                  heights=bm.get("heights", [2, 4, 8, 16, 32, 64]))
    recon = cfg.inversion_config() if bm.get("reconstruct", False) else None
    rep = asymptotics.borg_marchenko_check(weyl_callable(cfg.require_potential(), tol=tol),
                                           weyl_callable(cfg.potential_b, tol=tol), ray, reconstruct=recon)
    pots = rep.pop("potentials", None)
    out.add("borg_marchenko_report.json", fileio.json_text({"command": "borg-marchenko", **rep}))
    out.add("borg_marchenko_plot.txt", fileio.plot_text({"x": rep["heights"], "difference": rep["differences"]}))
    if pots is not None:
        out.add("v_a.txt", fileio.field_text(pots[0]))
        out.add("v_b.txt", fileio.field_text(pots[1]))
    return EXIT_OK


HANDLERS = {
    "forward": run_forward,
    "inverse": run_inverse,
    "roundtrip": run_roundtrip,
    "verify-node": run_verify_node,
    "asymptotics": run_asymptotics,
    "borg-marchenko": run_borg_marchenko,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diracweyl", description="Weyl functions of Dirac systems: "
                                "forward map, reconstruction and verification jobs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML job description")
    p.add_argument("--out", help="output directory (overrides output_dir in the config)")
    p.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE",
                   help="tolerance override, repeatable")
    p.add_argument("--n", type=int, help="number of grid cells (overrides grid.n)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = load_config(args.config, args.command, args.out, args.tol, args.n)
        out = fileio.OutputSet(cfg.output_dir)
        code = HANDLERS[args.command](cfg, out)
        out.commit()
        return code
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except IntegrationOverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except AdmissibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if out is not None and out.files:
            out.commit()
        return EXIT_ADMISSIBILITY
    except (DiracError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
