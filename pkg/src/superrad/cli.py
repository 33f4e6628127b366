"""Command-line runner: one experiment per invocation, driven by a TOML config.

Keys carry their units in the name (``d_lambda0``, ``t_max_inv_gamma0``,
``omega_gamma0``...). ``superrad validate --config FILE`` runs the static
checks only. Exit codes: 0 success, 2 invalid config, 3 numerical failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .couplings import build_matrices
from .dynamics import (
    FULL_ME_CAP,
    TRUNCATED_CAP,
    Drive,
    TimeGrid,
    dicke_peak,
    dicke_reference,
    evolve_driven,
    evolve_master,
    evolve_master_truncated,
    make_setup,
    path_parity,
    run_ensemble,
    trajectory_seed,
)
from .errors import ConfigValidationError, InvalidArgumentError, SuperradError
from .geometry import DisorderSpec, apply_disorder, build_chain, build_ring
from .observables import (
    DEFAULT_DELTA_THETA,
    default_theta_grid,
    detect_burst,
    fit_decay_windows,
    g2_directional,
    g2_inverted_closed_form,
    gM_inverted,
    initial_rate_slope,
    intensity_profile,
    jump_correlator_numeric,
)
from .outputs import metadata, write_csv, write_json
from .states import coherent_spin_state, fully_inverted, ground

EXPERIMENTS = (
    "spectrum",
    "decay",
    "trajectories",
    "burst-scan",
    "intensity-map",
    "g2-map",
    "correlators",
    "fit",
    "driven",
    "dicke",
    "disorder-ensemble",
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

_KEYS = {
    "": {"experiment", "seed", "geometry", "initial_state", "time", "method", "scan",
         "detector", "fit", "drive", "ensemble", "correlators", "output"},
    "geometry": {"kind", "n_atoms", "d_lambda0", "lattice", "n_sites", "sigma_lambda0", "label"},
    "initial_state": {"kind", "phi", "k_k0", "omega_gamma0", "tau_d_inv_gamma0"},
    "time": {"t_max_inv_gamma0", "t_max_scaled", "samples"},
    "method": {"kind", "max_holes", "n_traj", "rtol", "atol", "full_max_atoms"},
    "scan": {"n_atoms", "d_min_lambda0", "d_max_lambda0", "d_step_lambda0", "d_values_lambda0"},
    "detector": {"n_theta", "delta_theta_rad", "times_inv_gamma0"},
    "fit": {"window_early_inv_gamma0", "window_late_inv_gamma0", "series"},
    "drive": {"omega_values_gamma0", "tau_d_inv_gamma0", "k_k0"},
    "ensemble": {"n_realizations"},
    "correlators": {"max_m"},
    "output": {"prefix"},
}


# ---------------------------------------------------------------- config handling


def load_config(path) -> dict:
    """Read a TOML config, or the config embedded in a previous output file."""
    path = Path(path)
    if path.suffix in (".csv", ".json"):
        from .outputs import read_meta

        return read_meta(path)["config"]
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _geometries(cfg) -> list:
    g = cfg.get("geometry", {})
    return list(g) if isinstance(g, list) else [g]


def _d_values(scan: dict) -> list:
    if "d_values_lambda0" in scan:
        return [float(x) for x in scan["d_values_lambda0"]]
    lo, hi, step = (float(scan.get(k, np.nan)) for k in ("d_min_lambda0", "d_max_lambda0", "d_step_lambda0"))
    if not (step > 0 and hi >= lo):
        return []
    count = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(count)]


def _n_values(cfg) -> list:
    scan = cfg.get("scan", {})
    if "n_atoms" in scan:
        v = scan["n_atoms"]
        return [int(x) for x in (v if isinstance(v, list) else [v])]
    return [int(_geometries(cfg)[0].get("n_atoms", 0))]


def validate(config: dict) -> list:
    """Static checks; returns every problem found (empty when valid)."""
    diags = []
    if not isinstance(config, dict):
        return ["config must be a table"]
    for block, allowed in _KEYS.items():
        tables = [config] if block == "" else (
            _geometries(config) if block == "geometry" else [config.get(block, {})]
        )
        for t in tables:
            if not isinstance(t, dict):
                diags.append(f"[{block}] must be a table")
                continue
            for key in t:
                if key not in allowed:
                    diags.append(f"unknown key {key!r} in [{block or 'top level'}]")
    kind = config.get("experiment")
    if kind not in EXPERIMENTS:
        diags.append(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {kind!r}")
    seed = config.get("seed", 0)
    if not (isinstance(seed, int) and 0 <= seed < 2**64):
        diags.append("seed must be an integer in [0, 2^64)")

    geos = _geometries(config)
    for i, g in enumerate(geos):
        if not isinstance(g, dict):
            continue
        tag = f"geometry[{i}]" if len(geos) > 1 else "geometry"
        gk = g.get("kind", "chain")
        if gk not in ("chain", "ring", "disordered"):
            diags.append(f"{tag}.kind must be chain, ring or disordered")
        n = g.get("n_atoms")
        if kind not in ("dicke",) and not (isinstance(n, int) and n >= 1):
            if not (kind in ("spectrum", "burst-scan") and "n_atoms" in config.get("scan", {})):
                diags.append(f"{tag}.n_atoms must be a positive integer")
        if isinstance(n, int) and gk == "ring" and n < 2:
            diags.append(f"{tag}: a ring needs n_atoms >= 2")
        d = g.get("d_lambda0")
        if kind not in ("dicke", "spectrum", "burst-scan") or d is not None:
            if not (isinstance(d, (int, float)) and d > 0):
                diags.append(f"{tag}.d_lambda0 must be > 0")
        if gk == "disordered" or kind == "disorder-ensemble":
            ns = g.get("n_sites")
            if not (isinstance(ns, int) and ns >= 1):
                diags.append(f"{tag}.n_sites must be a positive integer")
            elif isinstance(n, int) and n > ns:
                diags.append(f"{tag}: n_atoms={n} exceeds n_sites={ns}")
            sig = g.get("sigma_lambda0", [0.0, 0.0, 0.0])
            if not (isinstance(sig, list) and len(sig) == 3 and all(isinstance(s, (int, float)) and s >= 0 for s in sig)):
                diags.append(f"{tag}.sigma_lambda0 must be three values >= 0")
            if g.get("lattice", "chain") not in ("chain", "ring"):
                diags.append(f"{tag}.lattice must be chain or ring")

    st = config.get("initial_state", {})
    sk = st.get("kind", "inverted")
    if sk not in ("inverted", "coherent", "driven"):
        diags.append("initial_state.kind must be inverted, coherent or driven")
    if "phi" in st and not (isinstance(st["phi"], (int, float)) and 0 <= st["phi"] <= 1):
        diags.append(f"initial_state.phi={st['phi']} outside [0, 1]")
    if sk == "coherent" and "phi" not in st:
        diags.append("initial_state.phi is required for coherent states")
    for key in ("k_k0",):
        if key in st and not (isinstance(st[key], list) and len(st[key]) == 3):
            diags.append(f"initial_state.{key} must have three components")
    for key in ("omega_gamma0", "tau_d_inv_gamma0"):
        if key in st and not (isinstance(st[key], (int, float)) and st[key] >= 0):
            diags.append(f"initial_state.{key} must be >= 0")

    tm = config.get("time", {})
    needs_time = kind in ("decay", "trajectories", "intensity-map", "g2-map", "fit", "driven",
                          "dicke", "disorder-ensemble")
    if kind in ("intensity-map", "g2-map") and "times_inv_gamma0" in config.get("detector", {}):
        needs_time = False
    if needs_time and "t_max_inv_gamma0" not in tm and "t_max_scaled" not in tm:
        diags.append("time.t_max_inv_gamma0 (or time.t_max_scaled) is required")
    for key in ("t_max_inv_gamma0", "t_max_scaled"):
        if key in tm and not (isinstance(tm[key], (int, float)) and tm[key] > 0):
            diags.append(f"time.{key} must be > 0")
    if "samples" in tm and not (isinstance(tm["samples"], int) and tm["samples"] >= 2):
        diags.append("time.samples must be an integer >= 2")

    me = config.get("method", {})
    mk = me.get("kind", "full-me")
    if mk not in ("full-me", "truncated", "trajectories"):
        diags.append("method.kind must be full-me, truncated or trajectories")
    ns = [g.get("n_atoms") for g in geos if isinstance(g, dict) and isinstance(g.get("n_atoms"), int)]
    if kind in ("burst-scan",):
        ns = ns + [n for n in config.get("scan", {}).get("n_atoms", []) if isinstance(n, int)]
    if mk == "full-me" and kind != "burst-scan" and any(n > FULL_ME_CAP for n in ns):
        diags.append(f"full-me is capped at N={FULL_ME_CAP}; got N={max(ns)}")
    if mk == "truncated" and any(n > TRUNCATED_CAP for n in ns):
        diags.append(f"truncated method is capped at N={TRUNCATED_CAP}")
    if "max_holes" in me and not (isinstance(me["max_holes"], int) and me["max_holes"] >= 0):
        diags.append("method.max_holes must be an integer >= 0")
    if mk == "trajectories" and not (isinstance(me.get("n_traj", 1), int) and me.get("n_traj", 1) >= 1):
        diags.append("method.n_traj must be >= 1")
    for key in ("rtol", "atol"):
        if key in me and not (isinstance(me[key], float) and me[key] > 0):
            diags.append(f"method.{key} must be a positive float")

    scan = config.get("scan", {})
    if kind in ("spectrum", "burst-scan"):
        if not _d_values(scan):
            diags.append("scan: empty d sweep (need d_values_lambda0 or min <= max with step > 0)")
        elif min(_d_values(scan)) <= 0:
            diags.append("scan: d values must be > 0")
        if "n_atoms" in scan:
            v = scan["n_atoms"]
            v = v if isinstance(v, list) else [v]
            if not v or not all(isinstance(x, int) and x >= 1 for x in v):
                diags.append("scan.n_atoms must list positive integers")
        if kind == "burst-scan" and mk == "trajectories":
            diags.append("burst-scan needs full-me or truncated")
    if kind == "dicke" and not _n_values(config)[0] and "n_atoms" not in scan:
        diags.append("dicke needs scan.n_atoms or geometry.n_atoms")

    det = config.get("detector", {})
    if "delta_theta_rad" in det and not (isinstance(det["delta_theta_rad"], (int, float)) and det["delta_theta_rad"] > 0):
        diags.append("detector.delta_theta_rad must be > 0")
    if "n_theta" in det and not (isinstance(det["n_theta"], int) and det["n_theta"] >= 1):
        diags.append("detector.n_theta must be a positive integer")

    fit = config.get("fit", {})
    for key in ("window_early_inv_gamma0", "window_late_inv_gamma0"):
        w = fit.get(key)
        if w is not None and not (isinstance(w, list) and len(w) == 2 and w[0] < w[1]):
            diags.append(f"fit.{key} must be [t_lo, t_hi] with t_lo < t_hi")
    if fit.get("series", "rate") not in ("rate", "n_exc"):
        diags.append("fit.series must be rate or n_exc")

    drv = config.get("drive", {})
    if kind == "driven":
        om = drv.get("omega_values_gamma0")
        if not (isinstance(om, list) and om and all(isinstance(x, (int, float)) and x >= 0 for x in om)):
            diags.append("drive.omega_values_gamma0 must list values >= 0")
        if not (isinstance(drv.get("tau_d_inv_gamma0"), (int, float)) and drv["tau_d_inv_gamma0"] >= 0):
            diags.append("drive.tau_d_inv_gamma0 must be >= 0")
        if any(n > FULL_ME_CAP for n in ns):
            diags.append(f"driven runs need the full basis (N <= {FULL_ME_CAP})")
    if kind == "correlators" and any(n > 10 for n in ns):
        diags.append("correlators are limited to N <= 10")
    ens = config.get("ensemble", {})
    if kind == "disorder-ensemble" and not (isinstance(ens.get("n_realizations", 1), int) and ens.get("n_realizations", 1) >= 1):
        diags.append("ensemble.n_realizations must be >= 1")
    return diags


# ---------------------------------------------------------------- building blocks


def _array(g: dict, seed: int):
    kind = g.get("kind", "chain")
    if kind == "chain":
        return build_chain(g["n_atoms"], g["d_lambda0"])
    if kind == "ring":
        return build_ring(g["n_atoms"], g["d_lambda0"])
    builder = build_ring if g.get("lattice", "chain") == "ring" else build_chain
    lattice = builder(g["n_sites"], g["d_lambda0"])
    spec = DisorderSpec(tuple(g.get("sigma_lambda0", (0, 0, 0))), g["n_sites"], g["n_atoms"], seed)
    return apply_disorder(lattice, spec)


def _times(cfg: dict, n_atoms: int) -> np.ndarray:
    tm = cfg.get("time", {})
    if "t_max_scaled" in tm:
        t_max = tm["t_max_scaled"] / n_atoms
    else:
        t_max = tm["t_max_inv_gamma0"]
    return np.linspace(0.0, t_max, tm.get("samples", 101))


def _max_holes(cfg, n):
    me = cfg.get("method", {})
    if me.get("kind", "full-me") == "truncated":
        return min(n, me.get("max_holes", 2))
    return None


def _initial(cfg, array, basis):
    st = cfg.get("initial_state", {})
    kind = st.get("kind", "inverted")
    if kind == "coherent":
        return coherent_spin_state(st["phi"], st.get("k_k0", [0, 0, 1]), array, basis)
    if kind == "driven":
        return ground(basis)
    return fully_inverted(basis)


def _drive_of(cfg):
    st = cfg.get("initial_state", {})
    if st.get("kind") == "driven":
        return Drive(st.get("omega_gamma0", 0.0), tuple(st.get("k_k0", (0, 0, 1))),
                     st.get("tau_d_inv_gamma0", 0.0))
    return None


def _tol(cfg):
    me = cfg.get("method", {})
    return {"rtol": me.get("rtol", 1e-10), "atol": me.get("atol", 1e-12)}


def _evolve_cfg(cfg, array, times, order=1):
    n = array.n_atoms
    setup = make_setup(array, _max_holes(cfg, n), drive=_drive_of(cfg))
    psi0 = _initial(cfg, array, setup.basis)
    grid = TimeGrid(times)
    if cfg.get("method", {}).get("kind", "full-me") == "truncated":
        return setup, evolve_master_truncated(psi0, setup, grid, order=order, **_tol(cfg))
    return setup, evolve_master(psi0, setup, grid, order=order, **_tol(cfg))


def _prefix(cfg, kind):
    return cfg.get("output", {}).get("prefix", kind)


def _pool_map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------- experiments


def _spectrum_point(args):
    family, n, d = args
    arr = build_chain(n, d) if family == "chain" else build_ring(n, d)
    return np.linalg.eigvalsh(build_matrices(arr).Gamma)[::-1]


def run_spectrum(cfg, out, jobs, meta):
    family = _geometries(cfg)[0].get("kind", "chain")
    if family not in ("chain", "ring"):
        raise InvalidArgumentError("spectrum scans need chain or ring geometry")
    pts = [(family, n, d) for n in _n_values(cfg) for d in _d_values(cfg.get("scan", {}))]
    res = _pool_map(_spectrum_point, pts, jobs)
    rows = [(n, d, nu, g) for (_, n, d), w in zip(pts, res) for nu, g in enumerate(w)]
    return [write_csv(out / f"{_prefix(cfg, 'spectrum')}.csv",
                      ["n_atoms", "d_lambda0", "nu", "gamma_nu_gamma0"], rows, meta)]


def run_decay(cfg, out, jobs, meta):
    seed = cfg.get("seed", 0)
    geos = _geometries(cfg)
    columns = ["t_inv_gamma0"]
    series, summary = [], {}
    times = None
    for i, g in enumerate(geos):
        label = g.get("label", f"g{i}_{g.get('kind', 'chain')}")
        array = _array(g, seed)
        n = array.n_atoms
        t = _times(cfg, n)
        if times is None:
            times = t
        elif not np.array_equal(times, t):
            raise InvalidArgumentError("paired decay curves need a common time grid (use t_max_inv_gamma0)")
        if cfg.get("method", {}).get("kind") == "trajectories":
            setup = make_setup(array)
            ens = run_ensemble(_initial(cfg, array, setup.basis), setup, float(t[-1]),
                               cfg["method"].get("n_traj", 100), seed, t, jobs)
            cols = [ens.mean_n_exc, ens.mean_rate, ens.mean_rate / n, np.zeros_like(t)]
            summary[label] = {"n_atoms": n, "paths": ens.path_counts}
        else:
            setup, res = _evolve_cfg(cfg, array, t)
            cols = [res.n_exc, res.rate, res.rate / n, res.norm_deficit]
            summary[label] = {"n_atoms": n, "diagnostics": res.diagnostics,
                              "deficit_exceeded": res.deficit_exceeded,
                              "initial_slope": initial_rate_slope(setup.gamma)}
            if t[-1] >= 1e-4 / n:
                summary[label]["burst"] = detect_burst(t, res.rate, n).to_dict()
        columns += [f"{label}_n_exc", f"{label}_rate_gamma0", f"{label}_rate_per_atom",
                    f"{label}_norm_deficit"]
        series.extend(cols)
    rows = np.column_stack([times] + series)
    p = _prefix(cfg, "decay")
    return [write_csv(out / f"{p}.csv", columns, rows, meta),
            write_json(out / f"{p}_summary.json", summary, meta)]


def run_trajectories(cfg, out, jobs, meta):
    g = _geometries(cfg)[0]
    seed = cfg.get("seed", 0)
    array = _array(g, seed)
    setup = make_setup(array)
    t = _times(cfg, array.n_atoms)
    ens = run_ensemble(_initial(cfg, array, setup.basis), setup, float(t[-1]),
                       cfg.get("method", {}).get("n_traj", 100), seed, t, jobs)
    data = {"path_counts": ens.path_counts, "unfinished_fraction": ens.unfinished_fraction(),
            "records": [{"seed": r.seed, "jumps": r.jumps, "end_reason": r.end_reason}
                        for r in ens.records]}
    if array.is_chain:
        par = setup.jump_basis.mirror_parity()
        data["mirror_parities"] = par
        data["forbidden_path_count"] = sum(
            c for p, c in ens.path_counts.items()
            if p and len(p.split("→")) == array.n_atoms and path_parity(p, par) == -1
        )
    p = _prefix(cfg, "trajectories")
    rows = np.column_stack([t, ens.mean_n_exc, ens.sem_n_exc, ens.mean_rate])
    return [write_csv(out / f"{p}.csv", ["t_inv_gamma0", "mean_n_exc", "sem_n_exc", "mean_rate_gamma0"], rows, meta),
            write_json(out / f"{p}_paths.json", data, meta)]


def _burst_point(args):
    cfg, family, n, d = args
    arr = build_chain(n, d) if family == "chain" else build_ring(n, d)
    me = cfg.get("method", {})
    full_max = me.get("full_max_atoms", 10)
    truncated = me.get("kind") == "truncated" or n > full_max
    setup = make_setup(arr, min(n, me.get("max_holes", 2)) if truncated else None)
    grid = TimeGrid(np.linspace(0.0, 1e-4 / n, 5))
    psi = fully_inverted(setup.basis)
    res = (evolve_master_truncated if truncated else evolve_master)(psi, setup, grid, **_tol(cfg))
    rep = detect_burst(res.times, res.rate, n, slope=initial_rate_slope(setup.gamma))
    return (n, d, int(rep.burst), rep.r0, rep.r_star, rep.slope, "truncated" if truncated else "full")


def run_burst_scan(cfg, out, jobs, meta):
    family = _geometries(cfg)[0].get("kind", "chain")
    pts = [(cfg, family, n, d) for n in _n_values(cfg) for d in _d_values(cfg.get("scan", {}))]
    rows = _pool_map(_burst_point, pts, jobs)
    return [write_csv(out / f"{_prefix(cfg, 'burst_scan')}.csv",
                      ["n_atoms", "d_lambda0", "burst", "r0_gamma0", "r_star_gamma0",
                       "slope_gamma0_sq", "method"], rows, meta)]


def _detector_times(cfg, array):
    det = cfg.get("detector", {})
    if "times_inv_gamma0" in det:
        return np.array(sorted(set(float(x) for x in det["times_inv_gamma0"])))
    return _times(cfg, array.n_atoms)


def run_intensity_map(cfg, out, jobs, meta):
    g = _geometries(cfg)[0]
    array = _array(g, cfg.get("seed", 0))
    det = cfg.get("detector", {})
    thetas = default_theta_grid(det.get("n_theta", 512))
    dth = det.get("delta_theta_rad", DEFAULT_DELTA_THETA)
    t = _detector_times(cfg, array)
    _, res = _evolve_cfg(cfg, array, t)
    rows = []
    for ti, m in zip(res.times, res.moments):
        prof = intensity_profile(m, array, thetas, dth)
        rows.extend((th, ti, v) for th, v in zip(thetas, prof))
    return [write_csv(out / f"{_prefix(cfg, 'intensity_map')}.csv",
                      ["theta_rad", "t_inv_gamma0", "intensity_gamma0"], rows, meta)]


def run_g2_map(cfg, out, jobs, meta):
    g = _geometries(cfg)[0]
    array = _array(g, cfg.get("seed", 0))
    det = cfg.get("detector", {})
    thetas = default_theta_grid(det.get("n_theta", 64))
    t = _detector_times(cfg, array)
    _, res = _evolve_cfg(cfg, array, t, order=2)
    rows = []
    for ti, m in zip(res.times, res.moments):
        for t1 in thetas:
            for t2 in thetas:
                try:
                    val = g2_directional(m, array, t1, t2)
                except SuperradError:
                    val = float("nan")
                rows.append((ti, t1, t2, val))
    return [write_csv(out / f"{_prefix(cfg, 'g2_map')}.csv",
                      ["t_inv_gamma0", "theta1_rad", "theta2_rad", "g2"], rows, meta)]


def run_correlators(cfg, out, jobs, meta):
    g = _geometries(cfg)[0]
    array = _array(g, cfg.get("seed", 0))
    n = array.n_atoms
    setup = make_setup(array)
    jb = setup.jump_basis
    psi = fully_inverted(setup.basis)
    table = {}
    for nu in range(n):
        for mu in range(n):
            table[f"{nu},{mu}"] = {
                "numeric": jump_correlator_numeric(psi, jb, nu, mu),
                "closed_form_finite_chain": g2_inverted_closed_form(
                    n, nu, mu, "finite-chain", coefficients=jb.coefficients),
                "closed_form_bloch": g2_inverted_closed_form(n, nu, mu, "bloch"),
            }
    max_m = cfg.get("correlators", {}).get("max_m", 4)
    gm = [gM_inverted(n, m).to_dict() for m in range(2, max_m + 1)]
    data = {"jump_rates": jb.rates, "correlators": table, "gM": gm,
            "note": "gM 'formula' is the combinatorial counting expression; 'brute_force' is the "
                    "explicit operator expectation; they differ at finite N (e.g. M=2)."}
    return [write_json(out / f"{_prefix(cfg, 'correlators')}.json", data, meta)]


def _fit_windows(cfg):
    fit = cfg.get("fit", {})
    return (tuple(fit.get("window_early_inv_gamma0", (0.0, 4.0))),
            tuple(fit.get("window_late_inv_gamma0", (10.0, 20.0))),
            fit.get("series", "rate"))


def run_fit(cfg, out, jobs, meta):
    g = _geometries(cfg)[0]
    array = _array(g, cfg.get("seed", 0))
    t = _times(cfg, array.n_atoms)
    _, res = _evolve_cfg(cfg, array, t)
    early_w, late_w, which = _fit_windows(cfg)
    y = res.rate if which == "rate" else res.n_exc
    early, late, ratio = fit_decay_windows(res.times, y, early_w, late_w)
    p = _prefix(cfg, "fit")
    return [write_csv(out / f"{p}_series.csv", ["t_inv_gamma0", "n_exc", "rate_gamma0"],
                      np.column_stack([res.times, res.n_exc, res.rate]), meta),
            write_json(out / f"{p}.json", {"series": which, "early": early.to_dict(),
                                           "late": late.to_dict(), "ratio": ratio}, meta)]


def _driven_point(args):
    cfg, omega = args
    g = _geometries(cfg)[0]
    array = _array(g, cfg.get("seed", 0))
    drv = cfg["drive"]
    tau = float(drv["tau_d_inv_gamma0"])
    drive = Drive(float(omega), tuple(drv.get("k_k0", (0, 0, 1))), tau)
    setup = make_setup(array, drive=drive)
    t = tau + _times(cfg, array.n_atoms)
    grid = TimeGrid(np.union1d([0.0], t))
    res = evolve_driven(ground(setup.basis), setup, grid, **_tol(cfg)).series
    post = res.times >= tau
    early_w, late_w, which = _fit_windows(cfg)
    y = (res.rate if which == "rate" else res.n_exc)[post]
    tt = res.times[post] - tau
    try:
        early, late, ratio = fit_decay_windows(tt, y, early_w, late_w)
        fit = {"early": early.to_dict(), "late": late.to_dict(), "ratio": ratio}
    except SuperradError as exc:
        fit = {"error": str(exc)}
    return omega, tt, res.n_exc[post], y, fit


def run_driven(cfg, out, jobs, meta):
    pts = [(cfg, om) for om in cfg["drive"]["omega_values_gamma0"]]
    res = _pool_map(_driven_point, pts, jobs)
    rows = [(om, t, n, y) for om, tt, ne, yy, _ in res for t, n, y in zip(tt, ne, yy)]
    fits = {f"{om!r}": fit for om, *_, fit in res}
    p = _prefix(cfg, "driven")
    return [write_csv(out / f"{p}_series.csv",
                      ["omega_gamma0", "t_after_drive_inv_gamma0", "n_exc", "fit_series"], rows, meta),
            write_json(out / f"{p}_fits.json", fits, meta)]


def run_dicke(cfg, out, jobs, meta):
    ns = _n_values(cfg)
    rows, peaks = [], {}
    for n in ns:
        t = _times(cfg, n)
        dk = dicke_reference(n, t)
        rows.extend((n, ti, r) for ti, r in zip(t, dk.rate))
        tp, rp = dicke_peak(n)
        fine = dicke_reference(n, np.linspace(0, 1e-4 / n, 3))
        peaks[str(n)] = {"t_peak": tp, "r_peak": rp,
                         "burst": detect_burst(fine.times, fine.rate, n).to_dict()}
    data = {"peaks": peaks}
    big = [n for n in ns if n >= 4]
    if len(big) >= 2:
        slope = np.polyfit(np.log(big), np.log([peaks[str(n)]["r_peak"] for n in big]), 1)[0]
        data["peak_exponent"] = float(slope)
    p = _prefix(cfg, "dicke")
    return [write_csv(out / f"{p}.csv", ["n_atoms", "t_inv_gamma0", "rate_gamma0"], rows, meta),
            write_json(out / f"{p}_peaks.json", data, meta)]


def _realization(args):
    cfg, i = args
    g = dict(_geometries(cfg)[0], kind="disordered")
    seed = trajectory_seed(cfg.get("seed", 0), i)
    array = _array(g, seed)
    t = _times(cfg, array.n_atoms)
    _, res = _evolve_cfg(cfg, array, t)
    return seed, res.times, res.rate / array.n_atoms


def run_disorder_ensemble(cfg, out, jobs, meta):
    n_real = cfg.get("ensemble", {}).get("n_realizations", 10)
    res = _pool_map(_realization, [(cfg, i) for i in range(n_real)], jobs)
    t = res[0][1]
    rates = np.array([r for _, _, r in res])
    mean = rates.mean(axis=0)
    n = _geometries(cfg)[0]["n_atoms"]
    data = {"realization_seeds": [s for s, _, _ in res]}
    if t[-1] >= 1e-4 / n * (1 - 1e-12):
        data["burst_of_mean"] = detect_burst(t, mean, n).to_dict()
        data["bursting_fraction"] = float(np.mean([detect_burst(t, r, n).burst for r in rates]))
    p = _prefix(cfg, "disorder")
    std = rates.std(axis=0, ddof=1) if n_real > 1 else np.zeros_like(mean)
    return [write_csv(out / f"{p}.csv", ["t_inv_gamma0", "mean_rate_per_atom", "std_rate_per_atom"],
                      np.column_stack([t, mean, std]), meta),
            write_json(out / f"{p}_summary.json", data, meta)]


RUNNERS = {
    "spectrum": run_spectrum,
    "decay": run_decay,
    "trajectories": run_trajectories,
    "burst-scan": run_burst_scan,
    "intensity-map": run_intensity_map,
    "g2-map": run_g2_map,
    "correlators": run_correlators,
    "fit": run_fit,
    "driven": run_driven,
    "dicke": run_dicke,
    "disorder-ensemble": run_disorder_ensemble,
}


def run(config: dict, out_dir, jobs: int = 1) -> list:
    """Validate and execute one experiment; returns the written paths."""
    diags = validate(config)
    if diags:
        raise ConfigValidationError(diags)
    out = Path(out_dir)
    meta = metadata(config, config.get("seed", 0), experiment=config["experiment"])
    return RUNNERS[config["experiment"]](config, out, max(1, int(jobs)), meta)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superrad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"superrad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("validate",):
        p = sub.add_parser(name, help="static config check" if name == "validate" else f"run the {name} experiment")
        p.add_argument("--config", required=True, help="TOML config (or a previous output file)")
        if name != "validate":
            p.add_argument("--out", default=".", help="output directory")
            p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = copy.deepcopy(load_config(args.config))
    except (OSError, ValueError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_VALIDATION
    if args.seed is not None:
        config["seed"] = args.seed
    if args.command != "validate":
        config.setdefault("experiment", args.command)
        if config["experiment"] != args.command:
            print(f"error: config is a {config['experiment']!r} experiment, not {args.command!r}",
                  file=sys.stderr)
            return EXIT_VALIDATION
    diags = validate(config)
    if args.command == "validate" or diags:
        for d in diags:
            print(d, file=sys.stderr if args.command != "validate" else sys.stdout)
        if args.command == "validate" and not diags:
            print("ok")
        return EXIT_VALIDATION if diags else EXIT_OK
    try:
        paths = run(config, args.out, args.jobs)
    except ConfigValidationError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_VALIDATION
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SuperradError as exc:
        diag = getattr(exc, "diagnostics", None)
        print(f"numerical failure: {exc}", file=sys.stderr)
        if diag:
            print(json.dumps(diag, sort_keys=True, default=str), file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return EXIT_IO
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
