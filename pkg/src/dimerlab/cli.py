"""Command-line front end: config parsing, pipeline orchestration, file outputs.

Config files are INI sections or nested JSON with the same section/key names;
``--set section.key=value`` overrides both. Outputs are deterministic for a
fixed config and seed (17-significant-digit CSV, sorted-key JSON, plain
two-column plot data).

Exit codes: 0 success, 1 config error, 2 solver failure, 3 validity failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import curves, feshbach, model, perturb, solve
from .errors import ConfigError, SolverError, ValidityError

ARTIFACT_VERSION = "0.1.0"


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelBlock:
    Z1: float = 1.0
    Z2: float = 1.0
    a: float = 0.4
    dimension_mode: str = model.MODE_1D
    coupling_mode: str = model.COUPLING_FULL


@dataclass(frozen=True)
class GridBlock:
    L: float = 50.0
    n: int = 101


@dataclass(frozen=True)
class WindowBlock:
    r_lo: float = 16.0
    r_hi: float = 36.0
    step: float = 1.0
    r0_policy: str = "floor-half"
    inner_frac: float = 0.28
    outer_frac: float = 0.36


@dataclass(frozen=True)
class SolverBlock:
    lanczos_tol: float = 1e-10
    cg_tol: float = 1e-10
    fixed_point_tol: float = 1e-13
    gap_min: float = 1e-8
    dense_cap: int = 4096
    seed: int = 7
    c6_nmax: int = 0
    max_dimension: int = 8_000_000


@dataclass(frozen=True)
class NewtonBlock:
    rmax: float = 8.0
    r: float = 20.0


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "."
    formats: str = "csv,json,plot"


@dataclass(frozen=True)
class RunConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    window: WindowBlock = field(default_factory=WindowBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    newton: NewtonBlock = field(default_factory=NewtonBlock)
    output: OutputBlock = field(default_factory=OutputBlock)


_BLOCKS = {"model": ModelBlock, "grid": GridBlock, "window": WindowBlock,
           "solver": SolverBlock, "newton": NewtonBlock, "output": OutputBlock}


def _coerce(block_cls, key, raw):
    spec_field = {f.name: f for f in fields(block_cls)}.get(key)
    if spec_field is None:
        raise ConfigError(f"unknown config key '{block_cls.__name__.replace('Block', '').lower()}.{key}'")
    if isinstance(raw, str):
        if spec_field.type in ("float", float):
            return float(raw)
        if spec_field.type in ("int", int):
            return int(raw)
        return raw
    if spec_field.type in ("float", float):
        return float(raw)
    if spec_field.type in ("int", int):
        if isinstance(raw, float) and not raw.is_integer():
            raise ConfigError(f"key '{key}' expects an integer, got {raw}")
        return int(raw)
    return raw


def build_config(sections: dict) -> RunConfig:
    """Assemble a RunConfig from a {section: {key: value}} mapping; strict keys."""
    kwargs = {}
    for name, raw_block in sections.items():
        if name not in _BLOCKS:
            raise ConfigError(f"unknown config section '{name}'")
        block_cls = _BLOCKS[name]
        coerced = {k: _coerce(block_cls, k, v) for k, v in raw_block.items()}
        kwargs[name] = block_cls(**coerced)
    return RunConfig(**kwargs)


def load_config(path: str | None, overrides) -> RunConfig:
    sections: dict = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        text = open(path).read()
        if path.endswith(".json"):
            data = json.loads(text)
            if not isinstance(data, dict):
                raise ConfigError("JSON config must be an object of sections")
            for name, block in data.items():
                if not isinstance(block, dict):
                    raise ConfigError(f"JSON config section '{name}' must be an object")
                sections[name] = dict(block)
        else:
            parser = configparser.ConfigParser()
            parser.read_string(text)
            for name in parser.sections():
                sections[name] = dict(parser.items(name))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got '{item}'")
        key, value = item.split("=", 1)
        if "." not in key:
            raise ConfigError(f"--set expects section.key=value, got '{item}'")
        section, k = key.split(".", 1)
        sections.setdefault(section, {})[k] = value
    return build_config(sections)


def config_hash(config: RunConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# -- derived objects ---------------------------------------------------------

def make_grid(config: RunConfig) -> model.Grid:
    return model.build_grid(config.grid.L, config.grid.n)


def make_atoms(config: RunConfig) -> tuple[model.AtomSpec, model.AtomSpec]:
    m = config.model
    a1 = model.AtomSpec(m.Z1, max(1, int(round(m.Z1))), m.a, m.dimension_mode)
    a2 = model.AtomSpec(m.Z2, max(1, int(round(m.Z2))), m.a, m.dimension_mode)
    return a1, a2


def make_dimer(config: RunConfig, r: float | None = None) -> model.DimerSpec:
    a1, a2 = make_atoms(config)
    sep = r if r is not None else config.window.r_lo
    return model.DimerSpec(a1, a2, config.model.coupling_mode, sep)


def make_options(config: RunConfig) -> solve.SolverOptions:
    s = config.solver
    return solve.SolverOptions(
        lanczos_tol=s.lanczos_tol, cg_tol=s.cg_tol,
        fixed_point_tol=s.fixed_point_tol, gap_min=s.gap_min,
        dense_cap=s.dense_cap, seed=s.seed)


def r_values(config: RunConfig, grid: model.Grid) -> list[float]:
    w = config.window
    raw = np.arange(w.r_lo, w.r_hi + 0.5 * w.step, w.step)
    return curves.snap_r_list(raw, grid)


def thread_count() -> int:
    raw = os.environ.get("DIMERLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"DIMERLAB_THREADS must be an integer, got '{raw}'")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.17g}"


def _stamp(config: RunConfig) -> str:
    return f"# dimerlab {ARTIFACT_VERSION} config={config_hash(config)}"


def write_csv(path, header, rows, config):
    lines = [_stamp(config), ",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, payload, config):
    out = {"artifact_version": ARTIFACT_VERSION,
           "config_hash": config_hash(config),
           "config": asdict(config)}
    out.update(payload)
    with open(path, "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_plotdata(path, pairs, config, label):
    lines = [_stamp(config) + f" column={label}"]
    for x, y in pairs:
        lines.append(f"{_fmt(x)} {_fmt(y)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _outdir(config: RunConfig) -> str:
    d = config.output.directory
    os.makedirs(d, exist_ok=True)
    return d


def _formats(config: RunConfig) -> set:
    return {f.strip() for f in config.output.formats.split(",") if f.strip()}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_atom(config: RunConfig) -> int:
    grid = make_grid(config)
    atom, _ = make_atoms(config)
    opts = make_options(config)
    if atom.dimension_mode == model.MODE_3D_RADIAL:
        op = model.atom_hamiltonian(atom, grid)
        res = solve.dense_oracle(op, cap=max(op.dim, opts.dense_cap))
        e1, e2 = res.values[0], res.values[1]
        state = res.vectors[0]
    else:
        spectrum = perturb.atomic_spectrum(atom, grid)
        e1, e2 = spectrum.values[0], spectrum.values[1]
        state = spectrum.vectors[0]
    decay = curves.decay_rate(state)
    report = {"E1": e1, "gap": e2 - e1, "decay_rate": decay.rate,
              "decay_r_squared": decay.r_squared,
              "mode": atom.dimension_mode, "Z": atom.Z, "a": atom.softening,
              "grid": {"L": grid.extent, "n": grid.points, "h": grid.spacing}}
    out = _outdir(config)
    if "json" in _formats(config):
        write_json(os.path.join(out, "atom.json"), {"atom": report}, config)
    text = (f"ground energy E1 = {_fmt(e1)}\n"
            f"spectral gap    = {_fmt(e2 - e1)}\n"
            f"decay rate      = {_fmt(decay.rate)} (R^2 = {decay.r_squared:.6f})\n")
    with open(os.path.join(out, "atom.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_ions(config: RunConfig) -> int:
    grid = make_grid(config)
    a1, a2 = make_atoms(config)
    opts = make_options(config)
    table = curves.dissociation_check(a1, a2, grid, options=opts)
    out = _outdir(config)
    rows = [(r.m, r.e1, r.e2, r.total) for r in table.rows]
    if "csv" in _formats(config):
        write_csv(os.path.join(out, "ions.csv"), ["m", "E1m", "E2negm", "sum"],
                  rows, config)
    if "json" in _formats(config):
        write_json(os.path.join(out, "ions.json"),
                   {"rows": [vars(r) for r in table.rows],
                    "strict_minimum_at_zero": table.strict_minimum_at_zero}, config)
    for r in table.rows:
        print(f"m={r.m:+d}  E1m={_fmt(r.e1)}  E2negm={_fmt(r.e2)}  sum={_fmt(r.total)}")
    if not table.strict_minimum_at_zero:
        print("neutral split VIOLATED: minimum is not strictly at m=0", file=sys.stderr)
        return 3
    print("strict minimum at m=0: neutral split holds")
    return 0


def _run_scan(config: RunConfig):
    grid = make_grid(config)
    spec = make_dimer(config)
    opts = make_options(config)
    rs = r_values(config, grid)
    table = curves.scan(spec, rs, grid,
                        inner_frac=config.window.inner_frac,
                        outer_frac=config.window.outer_frac,
                        options=opts, threads=thread_count(),
                        provenance=config_hash(config))
    return grid, spec, opts, table


_SCAN_COLS = ["r", "E", "W", "W1", "W2", "A", "gap", "valid"]


def _scan_rows(table):
    return [(row.r, row.E, row.W, row.W1, row.W2, row.A, row.gap, row.valid)
            for row in table.rows]


def _write_scan_outputs(config, table, stem="scan"):
    out = _outdir(config)
    formats = _formats(config)
    if "csv" in formats:
        write_csv(os.path.join(out, f"{stem}.csv"), _SCAN_COLS, _scan_rows(table), config)
    if "json" in formats:
        write_json(os.path.join(out, f"{stem}.json"),
                   {"e_inf": table.e_inf, "units": table.units,
                    "rows": [vars(r) for r in table.rows]}, config)
    if "plot" in formats:
        for col in ("W", "W1", "W2", "A", "gap"):
            pairs = [(row.r, getattr(row, col)) for row in table.rows if row.valid]
            write_plotdata(os.path.join(out, f"{stem}_{col}.dat"), pairs, config, col)


def cmd_scan(config: RunConfig) -> int:
    _, _, _, table = _run_scan(config)
    _write_scan_outputs(config, table)
    invalid = [row for row in table.rows if not row.valid]
    for row in table.rows:
        mark = "ok" if row.valid else f"INVALID ({row.error})"
        print(f"r={_fmt(row.r)}  W={_fmt(row.W)}  gap={_fmt(row.gap)}  {mark}")
    if invalid:
        print(f"warning: {len(invalid)} invalid rows", file=sys.stderr)
    return 0


def cmd_c6(config: RunConfig) -> int:
    grid = make_grid(config)
    spec = make_dimer(config)
    opts = make_options(config)
    res = perturb.c6_resolvent(spec, grid, options=opts)
    eig1 = perturb.atomic_spectrum(spec.atom1, grid)
    eig2 = perturb.atomic_spectrum(spec.atom2, grid)
    nmax = config.solver.c6_nmax or len(eig1.values)
    sos = perturb.c6_sum_over_states(eig1, eig2, nmax)
    rel = abs(res.sigma - sos.sigma) / res.sigma
    out = _outdir(config)
    payload = {"sigma_resolvent": res.sigma, "sigma_sum_over_states": sos.sigma,
               "relative_deviation": rel, "nmax": nmax,
               "resolvent_diagnostics": res.diagnostics,
               "sum_diagnostics": sos.diagnostics}
    if "json" in _formats(config):
        write_json(os.path.join(out, "c6.json"), payload, config)
    print(f"sigma (resolvent)      = {_fmt(res.sigma)}")
    print(f"sigma (sum over states)= {_fmt(sos.sigma)}  [nmax={nmax}]")
    print(f"relative deviation     = {rel:.3e}")
    if nmax <= 1:
        print("warning: nmax=1 includes no excited states; the sum is empty",
              file=sys.stderr)
    return 0


def cmd_feshbach(config: RunConfig) -> int:
    grid = make_grid(config)
    spec = make_dimer(config)
    opts = make_options(config)
    rs = r_values(config, grid)
    rows = []
    for r in rs:
        cfg = feshbach.CutoffConfig.from_separation(
            r, grid, config.window.inner_frac, config.window.outer_frac)
        rep = feshbach.solve_fixed_point(spec.at_separation(r), grid, cfg,
                                         options=opts, want_direct=True)
        rows.append(rep)
        rel = abs(rep.E - rep.E_direct) / abs(rep.E)
        print(f"r={_fmt(r)}  E={_fmt(rep.E)}  |E-E_direct|/|E|={rel:.3e}  "
              f"A*r^8={_fmt(rep.A * r ** 8)}  gap={_fmt(rep.gap)}  iters={rep.iterations}")
    out = _outdir(config)
    if "csv" in _formats(config):
        write_csv(os.path.join(out, "feshbach.csv"),
                  ["r", "E", "E_direct", "A", "A_r8", "gap", "iterations", "psi_overlap"],
                  [(rep.r, rep.E, rep.E_direct, rep.A, rep.A * rep.r ** 8, rep.gap,
                    rep.iterations, rep.psi_overlap) for rep in rows], config)
    if "json" in _formats(config):
        write_json(os.path.join(out, "feshbach.json"),
                   {"rows": [{"r": rep.r, "E": rep.E, "E_direct": rep.E_direct,
                              "A": rep.A, "gap": rep.gap,
                              "iterations": rep.iterations,
                              "psi_overlap": rep.psi_overlap, **rep.meta}
                             for rep in rows]}, config)
    return 0


def cmd_derivs(config: RunConfig) -> int:
    grid, spec, opts, table = _run_scan(config)
    table = curves.derivatives(table)
    w = config.window
    fit_lo, fit_hi = w.r_lo + 2 * w.step, w.r_hi - 2 * w.step
    sigma = perturb.c6_resolvent(spec, grid, options=opts).sigma
    fits = {}
    for column, label in (("W", "W"), ("dW", "W'"), ("d2W", "W''")):
        try:
            fit = curves.fit_power_law(table, column, (fit_lo, fit_hi))
            fits[column] = {"exponent": fit.exponent, "coefficient": fit.coefficient,
                            "rms_residual": fit.rms_residual, "n_points": fit.n_points}
            print(f"{label}: exponent {fit.exponent:+.4f}, coefficient {_fmt(fit.coefficient)}, "
                  f"rms {fit.rms_residual:.2e}")
        except (ConfigError, ValidityError) as exc:
            fits[column] = {"error": str(exc)}
            print(f"{label}: fit failed ({exc})", file=sys.stderr)
    print(f"sigma = {_fmt(sigma)}  (6 sigma = {_fmt(6 * sigma)}, 42 sigma = {_fmt(42 * sigma)})")

    # Hellmann-Feynman cross-check on dense-cap instances
    hf_report = None
    if grid.points ** spec.total_electrons <= opts.dense_cap:
        mid = table.rows[len(table.rows) // 2]
        if mid.valid and mid.dW is not None:
            spec_mid = spec.at_separation(mid.r)
            e_mid, vec = feshbach._Setup(spec_mid, grid,
                                         feshbach.CutoffConfig.from_separation(
                                             mid.r, grid, w.inner_frac, w.outer_frac),
                                         opts).direct_ground()
            state = model.QuantumState(vec, grid, spec.total_electrons)
            hf = curves.hellmann_feynman(spec_mid, state, grid)
            hf_report = {"r": mid.r, "hf": hf, "fd": mid.dW,
                         "abs_diff": abs(hf - mid.dW)}
            print(f"HF at r={_fmt(mid.r)}: {_fmt(hf)} vs FD {_fmt(mid.dW)} "
                  f"(diff {abs(hf - mid.dW):.3e})")
    out = _outdir(config)
    if "csv" in _formats(config):
        write_csv(os.path.join(out, "derivs.csv"),
                  ["r", "W", "dW", "d2W", "dW_err", "d2W_err", "valid"],
                  [(row.r, row.W, row.dW, row.d2W, row.dW_err, row.d2W_err, row.valid)
                   for row in table.rows], config)
    if "json" in _formats(config):
        write_json(os.path.join(out, "derivs.json"),
                   {"fits": fits, "sigma": sigma, "hellmann_feynman": hf_report},
                   config)
    if "plot" in _formats(config):
        for col in ("dW", "d2W"):
            pairs = [(row.r, getattr(row, col)) for row in table.rows
                     if row.valid and getattr(row, col) is not None]
            write_plotdata(os.path.join(out, f"derivs_{col}.dat"), pairs, config, col)
    return 0


def cmd_monotone(config: RunConfig) -> int:
    grid = make_grid(config)
    spec = make_dimer(config)
    opts = make_options(config)
    rs = r_values(config, grid)
    s = rs[0]
    rows = feshbach.monotonicity_witness(
        spec, s, rs, grid, inner_frac=config.window.inner_frac,
        outer_frac=config.window.outer_frac, options=opts)
    out = _outdir(config)
    if "csv" in _formats(config):
        write_csv(os.path.join(out, "monotone.csv"), ["r", "D", "E", "margin"],
                  [(r.r, r.D, r.E, r.margin) for r in rows], config)
    if "json" in _formats(config):
        write_json(os.path.join(out, "monotone.json"),
                   {"anchor": s, "rows": [vars(r) for r in rows]}, config)
    increasing = all(b.D > a.D for a, b in zip(rows, rows[1:]))
    anchored = abs(rows[0].D - rows[0].E) <= 1e-8 * max(1.0, abs(rows[0].E))
    dominating = all(r.margin >= -1e-10 for r in rows)
    for r in rows:
        print(f"r={_fmt(r.r)}  D={_fmt(r.D)}  E={_fmt(r.E)}  margin={_fmt(r.margin)}")
    print(f"D strictly increasing: {increasing};  D(s)=E(s): {anchored};  "
          f"D>=E rowwise: {dominating}")
    if not (increasing and anchored and dominating):
        return 3
    return 0


def cmd_newton(config: RunConfig) -> int:
    d1 = perturb.RadialDensity.hydrogenic(config.model.Z1, config.newton.rmax)
    d2 = perturb.RadialDensity.hydrogenic(config.model.Z2, config.newton.rmax)
    residual = perturb.newton_check(d1, d2, config.newton.r)
    point = perturb.newton_check(perturb.RadialDensity.point_charge(),
                                 perturb.RadialDensity.point_charge(),
                                 config.newton.r)
    out = _outdir(config)
    payload = {"residual": residual, "point_charge_residual": point,
               "rmax": config.newton.rmax, "r": config.newton.r}
    if "json" in _formats(config):
        write_json(os.path.join(out, "newton.json"), payload, config)
    print(f"shell-quadrature residual = {residual:.3e} (point charges: {point:.3e})")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {"atom": cmd_atom, "ions": cmd_ions, "scan": cmd_scan, "c6": cmd_c6,
             "feshbach": cmd_feshbach, "derivs": cmd_derivs,
             "monotone": cmd_monotone, "newton": cmd_newton}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dimerlab",
        description="Desk-scale laboratory for the long-range two-atom interaction energy")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="INI or JSON config file")
    parser.add_argument("--set", action="append", dest="overrides",
                        metavar="section.key=value", help="override a config entry")
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    args = parser.parse_args(argv)
    try:
        overrides = list(args.overrides or [])
        if args.out:
            overrides.append(f"output.directory={args.out}")
        config = load_config(args.config, overrides)
        return _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except ValidityError as exc:
        print(f"validity failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
