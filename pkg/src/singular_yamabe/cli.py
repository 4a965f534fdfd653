"""Command line front end: scenario configs in, CSV and JSON artifacts out.

Subcommands
    validate          run the closed-form cross-check suite
    flow CONFIG       drive the reduced flow, write series.csv + snapshots/
    yamabe CONFIG     minimize the conformal quotient for the configured model
    eigen CONFIG      first nonzero eigenvalue of the configured state
    report RUN_DIR    classify a finished (or failed) run directory

Exit codes are a stable contract: 0 success, 2 input error, 3 positivity
failure during a run (partial artifacts are kept), 4 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass

# Cap BLAS pools before the numeric stack loads; the variable is read once
# per process so this only helps when the CLI is the entry point, which is
# the case it is meant for.
_THREAD_CAP = os.environ.get("SINGULAR_YAMABE_THREADS")
if _THREAD_CAP:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _THREAD_CAP

import numpy as np
import yaml
from scipy.integrate import quad

from . import __version__
from . import diagnostics, flow, geometry, variational

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_POSITIVITY = 3
EXIT_NO_CONVERGENCE = 4


class ConfigError(ValueError):
    """A scenario file failed schema validation."""


# ---------------------------------------------------------------------------
# scenario configuration
# ---------------------------------------------------------------------------

DEFAULT_CONFIG = {
    "model": {"type": "eguchi-hanson", "a": 1.0},
    "grid": {"n_cells": 256, "grading": "uniform", "ratio": 0.97},
    "time": {"t_end": 0.02, "safety": 0.4, "renorm_every": 20,
             "snapshot_every": 0.005},
    "init": {"type": "constant", "value": None},
    "diagnostics": {"cutoffs": [0.1, 0.05], "f_p_exponents": [2, 3]},
    "output": {"dir": "runs/default"},
}


@dataclass(frozen=True)
class ScenarioConfig:
    model_type: str
    a: float
    sphere_n: int
    n_cells: int
    grading: str
    ratio: float
    t_end: float
    safety: float
    renorm_every: int
    snapshot_every: float
    init_type: str
    init_value: float | None
    init_path: str | None
    cutoffs: tuple
    f_p_exponents: tuple
    output_dir: str

    def echo(self) -> dict:
        """Resolved scenario as a plain dict, the round-trip source of truth."""
        if self.model_type == "sphere":
            model = {"type": "sphere", "n": self.sphere_n}
        else:
            model = {"type": "eguchi-hanson", "a": self.a}
        if self.init_type == "constant":
            init = {"type": "constant", "value": self.init_value}
        else:
            init = {"type": "file", "path": self.init_path}
        return {
            "model": model,
            "grid": {"n_cells": self.n_cells, "grading": self.grading,
                     "ratio": self.ratio},
            "time": {"t_end": self.t_end, "safety": self.safety,
                     "renorm_every": self.renorm_every,
                     "snapshot_every": self.snapshot_every},
            "init": init,
            "diagnostics": {"cutoffs": list(self.cutoffs),
                            "f_p_exponents": list(self.f_p_exponents)},
            "output": {"dir": self.output_dir},
        }


def _section(data: dict, name: str, allowed) -> dict:
    raw = data.get(name, {})
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown key(s) in section {name!r}: {', '.join(sorted(unknown))}")
    return raw


def _number(section: dict, key: str, where: str, default, lo=None, hi=None,
            integer=False, lo_strict=False):
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    if integer:
        if value != int(value):
            raise ConfigError(f"{where}.{key} must be an integer")
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{where}.{key} must be finite")
    if lo is not None and (value <= lo if lo_strict else value < lo):
        op = ">" if lo_strict else ">="
        raise ConfigError(f"{where}.{key} must be {op} {lo}")
    if hi is not None and value > hi:
        raise ConfigError(f"{where}.{key} must be <= {hi}")
    return value


def parse_config(data) -> ScenarioConfig:
    """Validate a parsed scenario mapping; unknown keys anywhere are errors."""
    if not isinstance(data, dict):
        raise ConfigError("the scenario file must contain a mapping at top level")
    unknown = set(data) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

    model = _section(data, "model", ("type", "a", "n"))
    model_type = model.get("type", "eguchi-hanson")
    if model_type not in ("eguchi-hanson", "sphere"):
        raise ConfigError(f"model.type must be eguchi-hanson or sphere, got {model_type!r}")
    a = 1.0
    sphere_n = 4
    if model_type == "eguchi-hanson":
        if "n" in model:
            raise ConfigError("model.n only applies to the sphere model")
        a = _number(model, "a", "model", 1.0, lo=0.0, lo_strict=True)
    else:
        if "a" in model:
            raise ConfigError("model.a only applies to the eguchi-hanson model")
        sphere_n = _number(model, "n", "model", 4, lo=3, integer=True)

    grid = _section(data, "grid", ("n_cells", "grading", "ratio"))
    n_cells = _number(grid, "n_cells", "grid", 256, lo=8, integer=True)
    grading = grid.get("grading", "uniform")
    if grading not in ("uniform", "geometric"):
        raise ConfigError(f"grid.grading must be uniform or geometric, got {grading!r}")
    ratio = _number(grid, "ratio", "grid", 0.97, lo=0.0, hi=1.0, lo_strict=True)

    time_cfg = _section(data, "time", ("t_end", "safety", "renorm_every",
                                       "snapshot_every"))
    t_end = _number(time_cfg, "t_end", "time", 0.02, lo=0.0, lo_strict=True)
    safety = _number(time_cfg, "safety", "time", 0.4, lo=0.0, hi=1.0, lo_strict=True)
    if safety >= 1.0:
        raise ConfigError("time.safety must be < 1")
    renorm_every = _number(time_cfg, "renorm_every", "time", 20, lo=0, integer=True)
    snapshot_every = _number(time_cfg, "snapshot_every", "time", 0.005, lo=0.0)

    init = _section(data, "init", ("type", "value", "path"))
    init_type = init.get("type", "constant")
    init_value = None
    init_path = None
    if init_type == "constant":
        if "path" in init:
            raise ConfigError("init.path only applies to init.type file")
        if init.get("value") is not None:
            init_value = _number(init, "value", "init", None, lo=0.0, lo_strict=True)
    elif init_type == "file":
        if "value" in init:
            raise ConfigError("init.value only applies to init.type constant")
        init_path = init.get("path")
        if not init_path or not isinstance(init_path, str):
            raise ConfigError("init.path must name a profile file")
    else:
        raise ConfigError(f"init.type must be constant or file, got {init_type!r}")

    diag = _section(data, "diagnostics", ("cutoffs", "f_p_exponents"))
    cutoffs = diag.get("cutoffs", DEFAULT_CONFIG["diagnostics"]["cutoffs"])
    if (not isinstance(cutoffs, list) or not cutoffs
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool)
                       and 0.0 < c <= 1.0 for c in cutoffs)):
        raise ConfigError("diagnostics.cutoffs must be a nonempty list in (0, 1]")
    exponents = diag.get("f_p_exponents", DEFAULT_CONFIG["diagnostics"]["f_p_exponents"])
    if (not isinstance(exponents, list) or not exponents
            or not all(isinstance(p, (int, float)) and not isinstance(p, bool)
                       and p >= 1.0 for p in exponents)):
        raise ConfigError("diagnostics.f_p_exponents must be a nonempty list of numbers >= 1")

    output = _section(data, "output", ("dir",))
    output_dir = output.get("dir", DEFAULT_CONFIG["output"]["dir"])
    if not output_dir or not isinstance(output_dir, str):
        raise ConfigError("output.dir must be a nonempty path")

    return ScenarioConfig(
        model_type=model_type, a=a, sphere_n=sphere_n,
        n_cells=n_cells, grading=grading, ratio=ratio,
        t_end=t_end, safety=safety, renorm_every=renorm_every,
        snapshot_every=snapshot_every,
        init_type=init_type, init_value=init_value, init_path=init_path,
        cutoffs=tuple(float(c) for c in cutoffs),
        f_p_exponents=tuple(float(p) for p in exponents),
        output_dir=output_dir,
    )


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from err
    return parse_config(data)


def default_config_text() -> str:
    return yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False)


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=False)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _np_default(obj):
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _write_json(path: str, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_np_default)
    _atomic_write(path, text + "\n")


def write_series_csv(path: str, records, cutoffs) -> None:
    header = "t,sigma_tilde,volume,F2,F3,v_at_x1,dt"
    header += "".join(f",mass_frac_{format(c, 'g')}" for c in cutoffs)
    lines = [header]
    for rec in records:
        cells = [_fmt(rec.t), _fmt(rec.sigma_tilde), _fmt(rec.volume),
                 _fmt(rec.f2), _fmt(rec.f3), _fmt(rec.v_at_x1), _fmt(rec.dt_used)]
        cells.extend(_fmt(rec.mass_fractions[c]) for c in cutoffs)
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def _snapshot_name(t: float, used: set) -> str:
    for digits in (10, 17):
        name = f"snap_{format(t, f'.{digits}g')}.csv"
        if name not in used:
            return name
    index = 2
    while f"snap_{format(t, '.17g')}-{index}.csv" in used:
        index += 1
    return f"snap_{format(t, '.17g')}-{index}.csv"


def write_snapshots(directory: str, snapshots, grid) -> list:
    """Write plain two-column x,v files; returns the file names in time order."""
    os.makedirs(directory, exist_ok=True)
    used: set = set()
    names = []
    for t, v in snapshots:
        name = _snapshot_name(t, used)
        used.add(name)
        lines = [f"{_fmt(x)},{_fmt(val)}" for x, val in zip(grid.cell_centers, v)]
        _atomic_write(os.path.join(directory, name), "\n".join(lines) + "\n")
        names.append(name)
    return names


def read_series_csv(path: str):
    """Parse a series file back into records; inverse of write_series_csv."""
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().strip().split(",")
        rows = [line.strip().split(",") for line in handle if line.strip()]
    fixed = ["t", "sigma_tilde", "volume", "F2", "F3", "v_at_x1", "dt"]
    if header[: len(fixed)] != fixed:
        raise ConfigError(f"unexpected series header in {path}")
    cutoffs = []
    for name in header[len(fixed):]:
        if not name.startswith("mass_frac_"):
            raise ConfigError(f"unexpected series column {name!r} in {path}")
        cutoffs.append(float(name[len("mass_frac_"):]))
    records = []
    for row in rows:
        values = [float(cell) for cell in row]
        records.append(flow.TimeSeriesRecord(
            t=values[0], sigma_tilde=values[1], volume=values[2],
            f2=values[3], f3=values[4], v_at_x1=values[5], dt_used=values[6],
            mass_fractions=dict(zip(cutoffs, values[7:])),
        ))
    return records, cutoffs


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _build_grid(cfg: ScenarioConfig):
    return geometry.build_grid(cfg.n_cells, grading=cfg.grading, ratio=cfg.ratio)


def _initial_condition(cfg: ScenarioConfig) -> flow.InitialCondition:
    if cfg.init_type == "constant":
        return flow.InitialCondition.constant(cfg.init_value)
    return flow.InitialCondition.from_file(cfg.init_path)


def _resolve_outdir(cfg: ScenarioConfig, args) -> str:
    outdir = args.output_dir or cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    return outdir


def cmd_validate(args) -> int:
    pi = math.pi
    checks = []
    checks.append(("eh_volume_a1", pi**2 / 4.0,
                   geometry.eh_volume_quadrature(1.0), 1e-8))
    for a in (0.5, 1.0, 2.0):
        checks.append((f"scalar_l2_energy_a{format(a, 'g')}", 288.0 * pi**2,
                       geometry.eh_scalar_l2_energy(a), 1e-6))
    checks.append(("scalar_at_bolt_a1", 48.0,
                   geometry.eh_scalar_curvature(0.0, 1.0), 0.0))
    from scipy.special import gamma
    dist_oracle = (math.sqrt(pi) / 4.0) * gamma(0.25) / gamma(0.75)
    checks.append(("distance_to_infinity_a1", dist_oracle,
                   geometry.eh_distance_to_infinity(1.0), 1e-8))
    for n, expected in ((4, 8.0 * math.sqrt(6.0) * pi),
                        (3, 6.0 * (2.0 * pi**2) ** (2.0 / 3.0))):
        model = geometry.build_sphere_model(n, 512)
        value = variational.yamabe_quotient_sphere(np.ones(512), model)
        checks.append((f"sphere_quotient_n{n}", expected, value, 1e-6))
    thresholds = variational.orbifold_thresholds()
    checks.append(("orbifold_local_threshold", 8.0 * math.sqrt(3.0) * pi,
                   thresholds.Y_local, 1e-12))
    small = diagnostics.small_energy_test(12.0 * math.sqrt(2.0) * pi,
                                          thresholds.Y_local)
    checks.append(("small_energy_on_initial_data", 0.0, float(small), 0.0))
    checks.append(("green_kernel_origin", 2.0,
                   geometry.green_kernel(np.array([1e-13]))[0], 1e-9))
    checks.append(("green_kernel_half", 2.0 * math.log(3.0),
                   geometry.green_kernel(np.array([0.5]))[0], 1e-12))
    moment = quad(lambda x: geometry.green_kernel(np.array([x]))[0] * x * x,
                  0.0, 1.0, limit=200)[0]
    checks.append(("green_kernel_second_moment", 1.0, moment, 1e-8))

    report = {}
    all_pass = True
    for name, expected, computed, tol in checks:
        if expected != 0.0:
            rel = abs(computed - expected) / abs(expected)
        else:
            rel = abs(computed - expected)
        ok = bool(rel <= tol)
        all_pass = all_pass and ok
        report[name] = {"expected": float(expected), "computed": float(computed),
                        "relative_error": float(rel), "pass": ok}
    payload = {"checks": report, "all_pass": all_pass}
    if not args.quiet:
        print(json.dumps(payload, indent=2, sort_keys=True))
    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        _write_json(os.path.join(args.output_dir, "validate.json"), payload)
    return EXIT_OK if all_pass else 1


def cmd_flow(args) -> int:
    cfg = load_config(args.config)
    if cfg.model_type != "eguchi-hanson":
        raise ConfigError("the flow command drives the eguchi-hanson reduction; "
                          "set model.type accordingly")
    outdir = _resolve_outdir(cfg, args)
    grid = _build_grid(cfg)
    model = geometry.EguchiHansonModel(a=cfg.a)
    flow_cfg = flow.FlowConfig(
        t_end=cfg.t_end, safety=cfg.safety, renorm_every=cfg.renorm_every,
        snapshot_every=cfg.snapshot_every,
        initial_condition=_initial_condition(cfg))
    try:
        result = flow.run(flow_cfg, model, grid, cutoffs=cfg.cutoffs)
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot start the run: {err}") from err

    write_series_csv(os.path.join(outdir, "series.csv"), result.records,
                     cfg.cutoffs)
    names = write_snapshots(os.path.join(outdir, "snapshots"), result.snapshots,
                            grid)
    final = result.records[-1]
    payload = {
        "scenario": cfg.echo(),
        "seed": args.seed,
        "package_version": __version__,
        "completed": result.completed,
        "failure": result.failure,
        "steps": len(result.records) - 1,
        "final": {"t": final.t, "sigma_tilde": final.sigma_tilde,
                  "volume": final.volume},
        "artifacts": {"series": "series.csv",
                      "snapshots": [f"snapshots/{n}" for n in names]},
    }
    _write_json(os.path.join(outdir, "report.json"), payload)
    if not result.completed:
        _atomic_write(os.path.join(outdir, "FAILED"),
                      (result.failure or "positivity failure") + "\n")
        if not args.quiet:
            print(f"flow stopped early: {result.failure}")
            print(f"partial artifacts in {outdir}")
        return EXIT_POSITIVITY
    if not args.quiet:
        print(f"flow finished: {len(result.records) - 1} steps to t={_fmt(final.t)}")
        print(f"sigma_tilde {_fmt(result.records[0].sigma_tilde)} -> {_fmt(final.sigma_tilde)}")
        print(f"artifacts in {outdir}")
    return EXIT_OK


def _init_profile(cfg: ScenarioConfig, size: int, coords) -> np.ndarray:
    """Resolve the configured initial profile on an arbitrary coordinate axis."""
    if cfg.init_type == "constant":
        return np.full(size, cfg.init_value if cfg.init_value else 1.0)
    try:
        table = np.loadtxt(cfg.init_path, delimiter=",", dtype=float, ndmin=2)
    except OSError as err:
        raise ConfigError(f"cannot read init profile: {err}") from err
    if table.ndim != 2 or table.shape[1] != 2:
        raise ConfigError(f"profile file {cfg.init_path} must have two columns")
    return np.interp(coords, table[:, 0], table[:, 1])


def cmd_yamabe(args) -> int:
    cfg = load_config(args.config)
    outdir = _resolve_outdir(cfg, args)
    if cfg.model_type == "sphere":
        model = geometry.build_sphere_model(cfg.sphere_n, cfg.n_cells)
        init = _init_profile(cfg, cfg.n_cells, model.thetas)
        initial_value = variational.yamabe_quotient_sphere(init, model)
        result = variational.minimize_quotient(model, init=init)
        reference = variational.yamabe_sphere_constant(cfg.sphere_n)
    else:
        grid = _build_grid(cfg)
        model = geometry.EguchiHansonModel(a=cfg.a)
        init = _init_profile(cfg, cfg.n_cells, grid.cell_centers)
        initial_value = variational.yamabe_quotient_eh(init, grid, a=cfg.a)
        result = variational.minimize_quotient(model, grid=grid, init=init)
        reference = variational.orbifold_thresholds().Y_local
    payload = {
        "scenario": cfg.echo(),
        "seed": args.seed,
        "package_version": __version__,
        "initial_value": float(initial_value),
        "value": float(result.value),
        "iterations": int(result.iterations),
        "gradient_norm": float(result.gradient_norm),
        "converged": bool(result.converged),
        "reference_constant": float(reference),
    }
    _write_json(os.path.join(outdir, "yamabe.json"), payload)
    if not args.quiet:
        state = "converged" if result.converged else "did not converge"
        print(f"quotient {_fmt(initial_value)} -> {_fmt(result.value)} "
              f"({state}, {result.iterations} iterations)")
        print(f"result in {outdir}/yamabe.json")
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def cmd_eigen(args) -> int:
    cfg = load_config(args.config)
    outdir = _resolve_outdir(cfg, args)
    payload = {"scenario": cfg.echo(), "seed": args.seed,
               "package_version": __version__}
    try:
        if cfg.model_type == "sphere":
            model = geometry.build_sphere_model(cfg.sphere_n, cfg.n_cells)
            result = variational.sphere_first_eigenvalue(model)
            sigma_inf = float(cfg.sphere_n * (cfg.sphere_n - 1))
            n = cfg.sphere_n
        else:
            grid = _build_grid(cfg)
            flow_cfg = flow.FlowConfig(t_end=cfg.t_end,
                                       initial_condition=_initial_condition(cfg))
            state = flow.initial_state(flow_cfg, grid)
            result = variational.first_eigenvalue(state)
            sigma_inf = state.sigma_tilde
            n = 4
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot build the eigenproblem: {err}") from err
    except flow.ConvergenceError as err:
        payload.update({"lambda1": None, "failure": str(err)})
        _write_json(os.path.join(outdir, "eigen.json"), payload)
        if not args.quiet:
            print(f"eigen solve did not converge: {err}")
        return EXIT_NO_CONVERGENCE
    criteria = variational.eigen_criteria(result.lambda1, sigma_inf, n)
    payload.update({
        "lambda1": float(result.lambda1),
        "residual": float(result.residual),
        "sigma_inf": float(sigma_inf),
        "criteria": {k: bool(v) for k, v in criteria.items()},
    })
    _write_json(os.path.join(outdir, "eigen.json"), payload)
    if not args.quiet:
        print(f"lambda1 = {_fmt(result.lambda1)} (residual {_fmt(result.residual)})")
        print(f"criteria vs sigma_inf={_fmt(sigma_inf)}: {payload['criteria']}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = args.run_dir
    series_path = os.path.join(run_dir, "series.csv")
    report_path = os.path.join(run_dir, "report.json")
    snap_dir = os.path.join(run_dir, "snapshots")
    for needed in (series_path, report_path, snap_dir):
        if not os.path.exists(needed):
            raise ConfigError(f"missing run artifact: {needed}")
    with open(report_path, encoding="utf-8") as handle:
        run_meta = json.load(handle)
    cfg = parse_config(run_meta["scenario"])
    if cfg.model_type != "eguchi-hanson":
        raise ConfigError("reports cover eguchi-hanson runs")
    records, _cutoffs = read_series_csv(series_path)
    if not records:
        raise ConfigError(f"{series_path} holds no records")
    snapshot_files = run_meta.get("artifacts", {}).get("snapshots") or []
    if not snapshot_files:
        raise ConfigError("the run report lists no snapshots")

    grid = _build_grid(cfg)
    model = geometry.EguchiHansonModel(a=cfg.a)

    def load_state(rel_name: str, t: float) -> flow.FlowState:
        table = np.loadtxt(os.path.join(run_dir, rel_name), delimiter=",",
                           dtype=float, ndmin=2)
        if table.shape != (cfg.n_cells, 2):
            raise ConfigError(f"snapshot {rel_name} does not match the grid")
        return flow.state_from_samples(grid, table[:, 1], t=t,
                                       volume_target=records[0].volume)

    initial = load_state(snapshot_files[0], records[0].t)
    final = load_state(snapshot_files[-1], records[-1].t)
    thresholds = variational.orbifold_thresholds()
    dichotomy = diagnostics.build_dichotomy_report(initial, final, thresholds)

    try:
        decay = diagnostics.decay_rate_fit(records)
        decay_payload = {"rate": None if math.isinf(decay) else decay,
                         "window_records": len(records) - len(records) // 2}
    except ValueError as err:
        decay_payload = {"rate": None, "error": str(err)}

    moments = {format(p, "g"): diagnostics.f_p(final, p)
               for p in cfg.f_p_exponents}
    sup = diagnostics.sup_bound_check(final, diagnostics.scalar_l2_bound(initial))

    bubble_payload = None
    if dichotomy.concentration_detected:
        try:
            fit = diagnostics.bubble_fit(final, model)
            ratio = None
            if dichotomy.sigma_inf_phys > 0.0:
                rigid = diagnostics.rigidity_profile_constant(dichotomy.sigma_inf_phys)
                ratio = fit.c_fit / rigid
            bubble_payload = {
                "scale_eps_lambda": fit.scale_eps_lambda,
                "c_fit": fit.c_fit,
                "residual": fit.residual,
                "window": list(fit.window),
                "c_over_rigidity_constant": ratio,
            }
        except diagnostics.BubbleFitError as err:
            bubble_payload = {"error": str(err)}

    payload = {
        "scenario": cfg.echo(),
        "completed": run_meta.get("completed"),
        "failure": run_meta.get("failure"),
        "dichotomy": {
            "small_energy_ok": dichotomy.small_energy_ok,
            "low_average_ok": dichotomy.low_average_ok,
            "max_bubble_count": dichotomy.max_bubble_count,
            "concentration_detected": dichotomy.concentration_detected,
            "concentration_cutoff_history": [
                {"t": t, "cutoff": x0, "fraction": frac}
                for t, x0, frac in dichotomy.concentration_cutoff_history],
            "s0_plus_norm": dichotomy.s0_plus_norm,
            "sigma0": dichotomy.sigma0_phys,
            "sigma_inf": dichotomy.sigma_inf_phys,
            "thresholds": {"Y": thresholds.Y, "Y_local": thresholds.Y_local,
                           "n": thresholds.n},
        },
        "alternate_flags": diagnostics.alternate_flag_variants(thresholds),
        "decay_rate_fit": decay_payload,
        "deviation_moments_final": moments,
        "green_identity_residual": diagnostics.green_identity_residual(final),
        "sup_bound": {"C": sup.C, "max_violation": sup.max_violation,
                      "monotonicity_violation": sup.monotonicity_violation},
        "bubble_fit": bubble_payload,
    }
    _write_json(os.path.join(run_dir, "dichotomy.json"), payload)
    if not args.quiet:
        d = payload["dichotomy"]
        print("dichotomy: " + " ".join(
            f"{k}={d[k]}" for k in ("small_energy_ok", "low_average_ok",
                                    "max_bubble_count", "concentration_detected")))
        rate = decay_payload.get("rate")
        print(f"decay rate estimate: {'n/a' if rate is None else _fmt(rate)}")
        print(f"report in {run_dir}/dichotomy.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="singular-yamabe",
        description="Reduced conformal flow on the compactified Eguchi-Hanson "
                    "space: runs, quotient minimization, and concentration reports.")
    parser.add_argument("--dump-default-config", action="store_true",
                        help="print the default scenario file and exit")
    subs = parser.add_subparsers(dest="command")

    def common(sub):
        sub.add_argument("--output-dir", default=None,
                         help="override the config's output directory")
        sub.add_argument("--seed", type=int, default=None,
                         help="recorded in result files for reproducibility")
        sub.add_argument("--quiet", action="store_true",
                         help="suppress progress output")

    sub = subs.add_parser("validate", help="closed-form cross-check suite")
    common(sub)
    sub.set_defaults(func=cmd_validate)

    sub = subs.add_parser("flow", help="drive the reduced flow")
    sub.add_argument("config")
    common(sub)
    sub.set_defaults(func=cmd_flow)

    sub = subs.add_parser("yamabe", help="minimize the conformal quotient")
    sub.add_argument("config")
    common(sub)
    sub.set_defaults(func=cmd_yamabe)

    sub = subs.add_parser("eigen", help="first nonzero eigenvalue")
    sub.add_argument("config")
    common(sub)
    sub.set_defaults(func=cmd_eigen)

    sub = subs.add_parser("report", help="classify a run directory")
    sub.add_argument("run_dir")
    sub.add_argument("--quiet", action="store_true")
    sub.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_default_config:
        sys.stdout.write(default_config_text())
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
