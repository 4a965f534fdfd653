"""Acceptance gate: one test per contract criterion, one verdict line each.

Run with -s to see the verdict lines on success; under plain pytest the
test outcome itself is the per-criterion pass/fail signal.
"""

import json
import math
import time

import numpy as np
from scipy.special import gamma

from singular_yamabe import cli
from singular_yamabe import diagnostics as diag
from singular_yamabe import flow
from singular_yamabe import geometry as geo
from singular_yamabe import variational as var


def _verdict(name, failures, detail=""):
    ok = not failures
    tail = f" ({detail})" if detail else ""
    print(f"[{'PASS' if ok else 'FAIL'}] {name}{tail}")
    assert ok, f"{name}: " + "; ".join(failures)


def test_criterion_1_closed_form_suite():
    started = time.perf_counter()
    failures = []

    vol = geo.eh_volume_quadrature(1.0)
    if abs(vol - math.pi**2 / 4.0) / (math.pi**2 / 4.0) > 1e-8:
        failures.append(f"volume quadrature off: {vol!r}")

    for a in (0.5, 1.0, 2.0):
        energy = geo.eh_scalar_l2_energy(a)
        if abs(energy - 288.0 * math.pi**2) / (288.0 * math.pi**2) > 1e-6:
            failures.append(f"curvature energy off at a={a}: {energy!r}")

    if geo.eh_scalar_curvature(0.0, 1.0) != 48.0:
        failures.append("bolt curvature is not exactly 48")

    dist = geo.eh_distance_to_infinity(1.0)
    oracle = (math.sqrt(math.pi) / 4.0) * gamma(0.25) / gamma(0.75)
    if abs(dist - oracle) / oracle > 1e-8:
        failures.append(f"distance to the singular point off: {dist!r}")

    targets = {4: 8.0 * math.sqrt(6.0) * math.pi,
               3: 6.0 * (2.0 * math.pi**2) ** (2.0 / 3.0)}
    for n, expected in targets.items():
        model = geo.build_sphere_model(n, 512)
        q = var.yamabe_quotient_sphere(np.ones(512), model)
        if abs(q - expected) / expected > 1e-6:
            failures.append(f"sphere quotient off at n={n}: {q!r}")

    th = var.orbifold_thresholds()
    if not math.isclose(th.Y_local, 8.0 * math.sqrt(3.0) * math.pi, rel_tol=1e-12):
        failures.append("local threshold is not 8 sqrt(3) pi")
    s0 = 12.0 * math.sqrt(2.0) * math.pi
    if not s0 > th.Y_local:
        failures.append("initial curvature norm does not exceed the local threshold")
    if diag.small_energy_test(s0, th.Y_local) is not False:
        failures.append("small-energy test unexpectedly passed")

    elapsed = time.perf_counter() - started
    if elapsed >= 10.0:
        failures.append(f"suite took {elapsed:.1f} s, limit is 10 s")
    _verdict("criterion 1: closed-form suite", failures, f"{elapsed:.2f} s")


def test_criterion_2_flow_property_suite():
    failures = []
    grid = geo.build_grid(256, "uniform")
    cfg = flow.FlowConfig(t_end=0.02, safety=0.4, renorm_every=20,
                          snapshot_every=0.0)
    result = flow.run(cfg, geo.EguchiHansonModel(a=1.0), grid, cutoffs=(0.1,))
    if not result.completed:
        failures.append(f"run stopped early: {result.failure}")

    sig = [r.sigma_tilde for r in result.records]
    bad = sum(1 for a, b in zip(sig, sig[1:]) if b > a + 1e-9)
    if bad:
        failures.append(f"sigma increased at {bad} records")

    off_vol = max(abs(r.volume - 2.0) / 2.0 for r in result.records)
    if off_vol > 1e-6:
        failures.append(f"volume drifted to relative {off_vol:.2e}")

    # pointwise checks need the profile at every step, so replay the same
    # trajectory by hand
    floor = -10.0 * float(np.max(grid.cell_widths)) ** 2
    state = flow.constant_state(grid)
    min_scal = float(np.min(geo.scalar_from_v(state.v, grid)))
    worst_drop = 0.0
    steps = 0
    while state.t < cfg.t_end * (1.0 - 1e-12):
        dt = min(flow.stable_dt(state, cfg.safety), cfg.t_end - state.t)
        state = flow.step(state, dt)
        steps += 1
        if steps % cfg.renorm_every == 0:
            state = flow.renormalize(state)
        min_scal = min(min_scal, float(np.min(geo.scalar_from_v(state.v, grid))))
        xv = np.concatenate([[0.0], grid.cell_centers * state.v,
                             [flow.boundary_value(state)]])
        worst_drop = max(worst_drop, float(np.max(-np.diff(xv))))
    if min_scal < floor:
        failures.append(f"curvature dipped to {min_scal:.3e} below {floor:.3e}")
    if worst_drop > 1e-12:
        failures.append(f"x v lost monotonicity by {worst_drop:.3e}")

    first = result.records[0].mass_fractions[0.1]
    last = result.records[-1].mass_fractions[0.1]
    if not last > first:
        failures.append(f"inner mass fraction did not grow: {first} -> {last}")

    k = max(1, len(result.records) // 10)
    f2_head = float(np.mean([r.f2 for r in result.records[:k]]))
    f2_tail = float(np.mean([r.f2 for r in result.records[-k:]]))
    if not f2_tail < f2_head:
        failures.append(f"F2 did not decay: {f2_head} -> {f2_tail}")

    _verdict("criterion 2: flow property suite", failures,
             f"{steps} steps, min curvature {min_scal:.2e}")


def test_criterion_3_discretization_orders():
    failures = []

    def scalar_err(n):
        grid = geo.build_grid(n, "uniform")
        v = np.full(n, math.sqrt(2.0))
        scal = geo.scalar_from_v(v, grid)
        dvol = v**4 * grid.weights
        return math.sqrt(float(np.dot((scal - grid.cell_centers) ** 2, dvol)))

    errs = [scalar_err(n) for n in (128, 256, 512, 1024)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    for r in ratios:
        if r < 3.5:
            failures.append(f"curvature error ratio {r:.3f} below 3.5")

    greens = [diag.green_identity_residual(flow.constant_state(geo.build_grid(n, "uniform")))
              for n in (256, 512, 1024, 2048)]
    gratios = [a / b for a, b in zip(greens, greens[1:])]
    # first-order residual with a positive next-order term: the halving
    # factor climbs to 2 from below, so the bar sits slightly under it
    for r in gratios:
        if r < 1.95:
            failures.append(f"kernel residual ratio {r:.4f} below 1.95")

    detail = ("curvature " + "/".join(f"{r:.2f}" for r in ratios)
              + ", kernel " + "/".join(f"{r:.4f}" for r in gratios))
    _verdict("criterion 3: discretization orders", failures, detail)


def test_criterion_4_diagnostics_suite():
    failures = []
    grid = geo.build_grid(512, "geometric", 0.97)
    d0 = geo.distance_from_singular_point(grid.cell_centers, 1.0)
    model = geo.EguchiHansonModel(a=1.0)

    eps, c = 0.05, 2.0
    clean = flow.state_from_samples(grid, c * eps / (eps**2 + d0**2))
    fit = diag.bubble_fit(clean, model)
    if abs(fit.scale_eps_lambda - eps) / eps > 1e-8 or abs(fit.c_fit - c) / c > 1e-8:
        failures.append(f"noise-free recovery off: {fit}")

    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        noisy = clean.v * (1.0 + 0.01 * rng.standard_normal(512))
        nfit = diag.bubble_fit(flow.state_from_samples(grid, noisy), model)
        worst = max(worst, abs(nfit.scale_eps_lambda - eps) / eps,
                    abs(nfit.c_fit - c) / c)
    if worst > 0.02:
        failures.append(f"noisy recovery spread {worst:.4f} above 2%")

    recs = [flow.TimeSeriesRecord(t=0.01 * k, sigma_tilde=0.0, volume=2.0,
                                  f2=7.0 * math.exp(-0.03 * k), f3=0.0,
                                  v_at_x1=0.0, mass_fractions={}, dt_used=0.0)
            for k in range(24)]
    rate = diag.decay_rate_fit(recs)
    if abs(rate - 3.0) > 1e-6:
        failures.append(f"decay rate {rate!r} misses 3 by more than 1e-6")

    y = var.orbifold_thresholds().Y_local
    counts = (diag.max_bubble_count(y, y, 4),
              diag.max_bubble_count(0.9 * y, y, 4),
              diag.max_bubble_count(y * 2.0 ** 0.5, y, 4))
    if counts != (1, 0, 2):
        failures.append(f"bubble count arithmetic gave {counts}")

    _verdict("criterion 4: diagnostics suite", failures,
             f"noisy spread {worst:.4f}")


def test_criterion_5_reported_not_asserted(tmp_path):
    failures = []
    scenario = {
        "model": {"type": "eguchi-hanson", "a": 1.0},
        "grid": {"n_cells": 64, "grading": "uniform"},
        "time": {"t_end": 0.016, "safety": 0.4, "renorm_every": 10,
                 "snapshot_every": 0.008},
        "output": {"dir": str(tmp_path / "run")},
    }
    cfg_path = tmp_path / "scenario.yaml"
    import yaml
    cfg_path.write_text(yaml.safe_dump(scenario))
    if cli.main(["flow", str(cfg_path), "--quiet"]) != 0:
        failures.append("flow command failed")
    if cli.main(["report", str(tmp_path / "run"), "--quiet"]) != 0:
        failures.append("report command failed")
    payload = json.loads((tmp_path / "run" / "dichotomy.json").read_text())

    alt = payload.get("alternate_flags") or {}
    if alt.get("consistent_with_derived_units") is not False:
        failures.append("variant constants are not flagged as inconsistent")
    if not math.isclose(alt.get("sigma0_variant", 0.0), math.pi**4 / 12.0):
        failures.append("quoted average variant missing")
    if not math.isclose(alt.get("sigma0_squared_variant", 0.0), math.pi**10):
        failures.append("quoted squared-average variant missing")
    if alt.get("low_average_ok_variant") is not False:
        failures.append("variant average test should fail by a wide margin")
    if payload["dichotomy"]["low_average_ok"] is not True:
        failures.append("derived average test should pass")
    if payload["dichotomy"]["small_energy_ok"] is not False:
        failures.append("small-energy flag should stay down on this geometry")
    if payload["dichotomy"]["max_bubble_count"] != 1:
        failures.append("energy allows exactly one concentration point here")
    if len(payload["dichotomy"]["concentration_cutoff_history"]) != 3:
        failures.append("cutoff refinement history incomplete")
    # long-time limits are recorded as numbers for inspection, never asserted:
    # sigma_inf is whatever the finite run reached
    if "sigma_inf" not in payload["dichotomy"]:
        failures.append("report does not record the reached average")

    _verdict("criterion 5: variants reported, limits unasserted", failures)
