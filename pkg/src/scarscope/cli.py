"""Command-line driver.

Each subcommand writes one data file plus a ``<output>.meta.json`` sidecar
holding the resolved configuration, package version, wall time and
convergence diagnostics. Fields are CSV with header
``site,time,value_re,value_im,flag``; reports are JSON.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 I/O failure. Failures print a one-line JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .evolve import EvolutionError, decompose, diagonalize
from .hilbert import (OPEN, PERIODIC, BasisError, StateVector, anti_neel_config,
                      build_basis, is_legal, neel_config, parse_config,
                      product_state)
from .operators import (OperatorError, build_phenom, build_pxp, build_rydberg,
                        sample_couplings)
from .scramble import (RydbergParams, ScrambleError, ScramblingField, holevo_series,
                       otoc_series, rydberg_zz_protocol)
from .tensornet import TensorNetError

log = logging.getLogger("scarscope")

EXPERIMENTS = ("otoc", "holevo", "scars", "spectrum", "rydberg", "phenom", "xval",
               "scan-detuning")
BACKENDS = ("ed", "krylov", "tebd", "mpo")
CSV_HEADER = ["site", "time", "value_re", "value_im", "flag"]
NOMINAL_PXP_PERIOD = 4.71      # Z2 revival period of PXP in units of the coupling
XVAL_STEP = 0.5
XVAL_OTOC_TOL, XVAL_HOLEVO_TOL = 1e-3, 1e-4

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

DEFAULTS = dict(
    model="pxp", L=12, boundary=OPEN, omega=None, delta=0.0, u1=12.0, u2=0.0,
    J=1.0, seed=0, state="z2", w="z", v="z", i=None, j=None, tmax=30.0, dt=0.05,
    backend="ed", chi_max=None, cutoff=1e-10, trotter_order=None, threads=None,
    output=None, format="csv", r=7, deltas="0,0.19,0.38", threshold=None,
    prominence=0.2,
)


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


# -- configuration -----------------------------------------------------------------

def read_config_file(path):
    """Flat ``key = value`` file; keys mirror the long flag names."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, val = (x.strip() for x in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


_TYPES = dict(L=int, omega=float, delta=float, u1=float, u2=float, J=float, seed=int,
              i=int, tmax=float, dt=float, chi_max=int, cutoff=float,
              trotter_order=int, threads=int, r=int, threshold=float,
              prominence=float)


def _coerce(key, val):
    if val is None:
        return None
    typ = _TYPES.get(key)
    try:
        return typ(val) if typ else val
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot parse {val!r}") from exc


@dataclass
class RunConfig:
    experiment: str
    values: dict

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError as exc:
            raise AttributeError(key) from exc

    def as_dict(self):
        return dict(experiment=self.experiment, **self.values)


def resolve_config(experiment, file_values=None, flag_values=None):
    """defaults < config file < flags, then validate and fill derived defaults."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    vals = dict(DEFAULTS)
    for src in (file_values or {}, flag_values or {}):
        for k, v in src.items():
            if v is None:
                continue
            if k not in DEFAULTS:
                raise ConfigError(f"unknown option {k!r}")
            vals[k] = _coerce(k, v)
    _validate(experiment, vals)
    return RunConfig(experiment, vals)


def _site_list(spec, L):
    if spec is None:
        return list(range(1, L + 1))
    spec = str(spec)
    out = []
    for part in spec.split(","):
        if ":" in part:
            a, b = part.split(":")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out or min(out) < 1 or max(out) > L:
        raise ConfigError(f"site list {spec!r} outside 1..{L}")
    return out


def _validate(exp, v):
    if exp == "rydberg" or exp == "scan-detuning":
        v["model"] = "rydberg"
    if exp == "phenom":
        v["model"] = "phenom"
    if v["model"] not in ("pxp", "rydberg", "phenom"):
        raise ConfigError(f"unknown model {v['model']!r}")
    if v["boundary"] not in (OPEN, PERIODIC):
        raise ConfigError(f"unknown boundary {v['boundary']!r}")
    if v["backend"] not in BACKENDS:
        raise ConfigError(f"unknown backend {v['backend']!r}")
    if v["format"] not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    L = v["L"]
    limits = dict(pxp=31, rydberg=24, phenom=14)
    if not 3 <= L <= limits[v["model"]]:
        raise ConfigError(f"L={L} outside 3..{limits[v['model']]} for model {v['model']}")
    if v["backend"] in ("tebd", "mpo") or exp == "xval":
        if v["model"] == "phenom":
            raise ConfigError("tensor-network backends support pxp and rydberg only")
        if v["boundary"] != OPEN:
            raise ConfigError("tensor-network backends use open chains")
        if not (v["state"] in ("z2", "zero", "z2p") or v["state"].startswith("bits:")):
            raise ConfigError("tensor-network backends need a product initial state")
        if not 0 < v["dt"] <= 0.1:
            raise ConfigError("Trotter step must satisfy 0 < dt <= 0.1")
    if v["backend"] == "mpo" and exp not in ("otoc", "xval"):
        raise ConfigError("the mpo backend computes OTOCs only")
    if v["backend"] == "tebd" and exp not in ("holevo", "xval"):
        raise ConfigError("the tebd backend computes Holevo fields only")
    if v["dt"] <= 0 or v["tmax"] < 0:
        raise ConfigError("need dt > 0 and tmax >= 0")
    if v["trotter_order"] is None:
        # xval checks truncation; keep the step error well below its tolerance
        v["trotter_order"] = 4 if exp == "xval" else 2
    if v["trotter_order"] not in (2, 4):
        raise ConfigError("trotter-order must be 2 or 4")
    for ax in ("w", "v"):
        if v[ax] not in ("x", "y", "z"):
            raise ConfigError(f"--{ax} must be x, y or z")
    if v["omega"] is None:
        v["omega"] = 1.0 if v["model"] == "phenom" else 2.0
    _check_state(v["state"])
    if exp in ("holevo", "xval") and v["model"] == "pxp":
        _encode_site(v)
    if v["i"] is None:
        v["i"] = 1 if v["model"] == "phenom" else (L + 1) // 2
    if not 1 <= v["i"] <= L:
        raise ConfigError(f"site i={v['i']} outside 1..{L}")
    v["j"] = None if v["j"] is None else str(v["j"])
    _site_list(v["j"], L)
    if v["chi_max"] is None:
        v["chi_max"] = dict(otoc=300, xval=128).get(exp, 100)
    if v["chi_max"] < 1 or v["cutoff"] < 0:
        raise ConfigError("chi-max must be positive and cutoff non-negative")
    if v["threads"] is None:
        try:
            v["threads"] = max(1, int(os.environ.get("SCARSCOPE_THREADS", "1")))
        except ValueError as exc:
            raise ConfigError("SCARSCOPE_THREADS must be an integer") from exc
    if v["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if exp == "scan-detuning" and not _deltas(v["deltas"]):
        raise ConfigError("empty detuning grid")
    if exp == "phenom" and not 4 <= v["r"] <= L:
        raise ConfigError(f"r must lie in 4..{L}")


def _encode_site(v):
    """Holevo encoding needs a blockade-legal flip; default to the legal site
    nearest the centre."""
    L = v["L"]
    try:
        config = product_config(RunConfig("holevo", v))
    except BasisError as exc:
        raise ConfigError(str(exc)) from exc
    if config is None:
        return
    legal = [s for s in range(1, L + 1)
             if is_legal(config ^ (1 << (s - 1)), L, v["boundary"])]
    if v["i"] is None:
        if not legal:
            raise ConfigError("no site of the initial state can be flipped")
        c = (L + 1) // 2
        v["i"] = min(legal, key=lambda s: (abs(s - c), s))
    elif v["i"] not in legal:
        raise ConfigError(f"flipping site {v['i']} violates the blockade")


def _deltas(spec):
    return [float(x) for x in str(spec).split(",") if x.strip()]


def _check_state(state):
    if state in ("z2", "zero", "z2p", "up"):
        return
    for prefix in ("eig:", "bits:", "sup:"):
        if state.startswith(prefix):
            return
    raise ConfigError(f"unknown initial state {state!r}")


def time_grid(cfg):
    n = int(round(cfg.tmax / cfg.dt))
    if abs(n * cfg.dt - cfg.tmax) > 1e-9 * max(1.0, cfg.tmax):
        raise ConfigError("tmax must be a multiple of dt")
    return np.arange(n + 1) * cfg.dt


# -- model and state construction ----------------------------------------------------

def build_model(cfg):
    if cfg.model == "pxp":
        return build_pxp(build_basis(cfg.L, cfg.boundary))
    if cfg.model == "rydberg":
        return build_rydberg(cfg.L, cfg.omega, cfg.delta, cfg.u1, cfg.u2, +1)
    return build_phenom(cfg.L, cfg.omega, sample_couplings(cfg.L, cfg.J, cfg.seed))


def product_config(cfg):
    L = cfg.L
    s = cfg.state
    if s == "z2":
        return neel_config(L)
    if s == "z2p":
        return anti_neel_config(L)
    if s == "zero":
        return 0
    if s == "up":
        return (1 << L) - 1
    if s.startswith("bits:"):
        return parse_config(s[5:], L)
    return None


def initial_state(cfg, H, decomp=None):
    """StateVector for the configured initial state (eigenstates need ``decomp``)."""
    config = product_config(cfg)
    if config is not None:
        try:
            return product_state(H.basis, config), decomp
        except BasisError as exc:
            raise ConfigError(str(exc)) from exc
    decomp = decomp if decomp is not None else decompose(H)
    if cfg.state.startswith("eig:"):
        n = int(cfg.state[4:])
        if not 0 <= n < decomp.dim:
            raise ConfigError(f"eigenstate index {n} outside 0..{decomp.dim - 1}")
        return StateVector(np.asarray(decomp.vector(n), dtype=complex), H.basis), decomp
    # sup:n1=w1,n2=w2 superposition of eigenstates
    amps = np.zeros(decomp.dim, dtype=np.complex128)
    for part in cfg.state[4:].split(","):
        n, w = part.split("=")
        amps += float(w) * decomp.vector(int(n))
    nrm = np.linalg.norm(amps)
    if nrm == 0:
        raise ConfigError("superposition has zero norm")
    return StateVector(amps / nrm, H.basis), decomp


def _method(cfg):
    return {"ed": "spectral", "krylov": "krylov"}[cfg.backend]


def _tn_model(cfg):
    from .tensornet import pxp_model, rydberg_model
    if cfg.model == "pxp":
        return pxp_model(cfg.L)
    return rydberg_model(cfg.L, cfg.omega, cfg.delta, cfg.u1, cfg.u2, +1)


# -- serialisation ---------------------------------------------------------------------

def field_to_csv(field):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    vals = np.asarray(field.values)
    cplx = np.iscomplexobj(vals)
    for n, site in enumerate(field.sites):
        for k, t in enumerate(field.times):
            v = vals[n, k]
            im = float(v.imag) if cplx else 0.0
            w.writerow([site, repr(float(t)), repr(float(v.real)), repr(im),
                        int(bool(field.flags[n, k]))])
    return buf.getvalue()


def field_from_csv(text, kind="otoc", meta=None):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError("not a scarscope field file")
    body = rows[1:]
    sites = list(dict.fromkeys(int(r[0]) for r in body))
    times = list(dict.fromkeys(float(r[1]) for r in body))
    vals = np.zeros((len(sites), len(times)), dtype=np.complex128)
    flags = np.zeros(vals.shape, dtype=bool)
    si = {s: n for n, s in enumerate(sites)}
    ti = {t: k for k, t in enumerate(times)}
    for r in body:
        n, k = si[int(r[0])], ti[float(r[1])]
        vals[n, k] = complex(float(r[2]), float(r[3]))
        flags[n, k] = r[4] == "1"
    if kind == "holevo":
        vals = vals.real
    return ScramblingField(kind, sites, np.array(times), vals, flags, meta or {})


def field_to_json(field):
    vals = np.asarray(field.values)
    obj = dict(kind=field.kind, sites=field.sites, times=[float(t) for t in field.times],
               values_re=np.real(vals).tolist(),
               values_im=(np.imag(vals).tolist() if np.iscomplexobj(vals) else None),
               flags=field.flags.astype(int).tolist(), meta=_jsonable(field.meta))
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def field_from_json(text):
    obj = json.loads(text)
    re = np.array(obj["values_re"], dtype=float)
    vals = re if obj["values_im"] is None else re + 1j * np.array(obj["values_im"])
    return ScramblingField(obj["kind"], obj["sites"], np.array(obj["times"]), vals,
                           np.array(obj["flags"], dtype=bool), obj["meta"])


def read_field(path, kind=None):
    """Load a field written by the CLI (format inferred from the extension)."""
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        return field_from_json(text)
    meta = {}
    side = path + ".meta.json"
    if os.path.exists(side):
        with open(side) as fh:
            meta = json.load(fh).get("result_meta", {})
    return field_from_csv(text, kind or meta.get("kind", "otoc"), meta)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _write(path, text):
    try:
        d = os.path.dirname(os.path.abspath(path))
        os.makedirs(d, exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IOError(f"cannot write {path}: {exc}") from exc


# -- experiments ---------------------------------------------------------------------

def run_otoc(cfg):
    times = time_grid(cfg)
    sites = _site_list(cfg.j, cfg.L)
    if cfg.backend == "mpo":
        from .tensornet import otoc_mpo_timesplit
        f = otoc_mpo_timesplit(_tn_model(cfg), product_config(cfg), cfg.i, sites,
                               cfg.w, cfg.v, times, chi_max=cfg.chi_max, dt=cfg.dt / 2,
                               cutoff=cfg.cutoff, order=cfg.trotter_order)
        return f, f.meta
    H = build_model(cfg)
    psi, decomp = initial_state(cfg, H)
    if cfg.backend == "ed" and decomp is None:
        decomp = decompose(H)
    f = otoc_series(H, psi, cfg.i, sites, cfg.w, cfg.v, times,
                    method=_method(cfg), decomp=decomp if cfg.backend == "ed" else None,
                    threads=cfg.threads)
    f.meta["state"] = cfg.state
    return f, f.meta


def run_holevo(cfg):
    times = time_grid(cfg)
    sites = _site_list(cfg.j, cfg.L)
    if cfg.backend == "tebd":
        from .tensornet import holevo_tebd
        f = holevo_tebd(_tn_model(cfg), product_config(cfg), cfg.i, sites, times,
                        dt=cfg.dt, chi_max=cfg.chi_max, cutoff=cfg.cutoff,
                        order=cfg.trotter_order)
        return f, f.meta
    H = build_model(cfg)
    psi, decomp = initial_state(cfg, H)
    if cfg.backend == "ed" and decomp is None:
        decomp = decompose(H)
    try:
        f = holevo_series(H, psi, cfg.i, sites, times, method=_method(cfg),
                          decomp=decomp if cfg.backend == "ed" else None)
    except ScrambleError as exc:
        raise ConfigError(str(exc)) from exc
    f.meta["state"] = cfg.state
    return f, f.meta


def run_rydberg(cfg):
    if cfg.state not in ("z2", "zero"):
        raise ConfigError("the protocol needs a z2 or zero initial state")
    params = RydbergParams(cfg.L, cfg.omega, cfg.delta, cfg.u1, cfg.u2)
    f = rydberg_zz_protocol(params, cfg.state, cfg.i, _site_list(cfg.j, cfg.L),
                            time_grid(cfg))
    return f, f.meta


def run_scars(cfg):
    from .scars import classify_scars, scar_diagnostics
    if cfg.model != "pxp":
        raise ConfigError("scar census is defined for the pxp model")
    H = build_model(cfg)
    ref = product_state(H.basis, product_config(cfg) or neel_config(cfg.L))
    diag = scar_diagnostics(decompose(H), ref)
    classify_scars(diag)
    report = dict(n_states=int(np.sum(diag.multiplicity)), n_rows=len(diag),
                  n_scars=diag.n_scars, status=diag.status,
                  scars=[r for r in diag.records() if r["scar_flag"]],
                  records=diag.records())
    return report, dict(diag.meta, status=diag.status)


def run_spectrum(cfg):
    from .spectral import detect_peaks, fft_spectrum, refined_peak_frequency
    f, meta = run_otoc(cfg)
    out = []
    for n, site in enumerate(f.sites):
        spec = fft_spectrum(np.real(f.values[n]), f.dt)
        w0 = refined_peak_frequency(spec)
        out.append(dict(site=site, peak_frequency=w0, period=2 * np.pi / w0,
                        peaks=detect_peaks(spec, cfg.prominence),
                        resolution=spec.resolution))
    return dict(spectra=out, window="hann", prominence_floor=cfg.prominence), meta


def run_phenom(cfg):
    from .phenom import (dicke_tower, early_growth_check, revival_fidelity,
                         verify_scar_tower)
    H = build_model(cfg)
    decomp = diagonalize(H)
    tower = verify_scar_tower(H, dicke_tower(cfg.L), cfg.omega)
    T = 2 * np.pi / cfg.omega
    rev = revival_fidelity(H, times=[T / 2, T], decomp=decomp) if cfg.L <= 12 else None
    times = np.geomspace(1e-2, cfg.tmax if cfg.tmax > 0.01 else 10.0, 400)
    eg = early_growth_check(H, cfg.r, times, J=cfg.J, decomp=decomp)
    report = dict(tower_residuals=tower.residuals, tower_passed=tower.passed,
                  revival_fidelity_half_period=None if rev is None else rev[0],
                  revival_fidelity_period=None if rev is None else rev[1],
                  early_growth=dict(r=eg.r, a=eg.a, slope=eg.slope,
                                    leading_power_ok=eg.leading_power_ok,
                                    rms_log_residual=eg.rms_log_residual,
                                    window=[float(eg.times[eg.window][0]),
                                            float(eg.times[eg.window][-1])]))
    return report, dict(couplings_seed=cfg.seed, J=cfg.J)


def run_xval(cfg):
    """ED versus tensor-network OTOC and Holevo fields.

    Fields are compared every XVAL_STEP time units up to tmax; ``dt`` is the
    Trotter step and both fields use the configured order (4 unless set).
    """
    from .tensornet import holevo_tebd, otoc_mpo_timesplit
    if cfg.model != "pxp" or cfg.boundary != OPEN:
        raise ConfigError("xval compares the open pxp chain")
    config = product_config(cfg)
    if config is None:
        raise ConfigError("xval needs a product initial state")
    n = int(round(cfg.tmax / XVAL_STEP))
    if n < 1 or abs(n * XVAL_STEP - cfg.tmax) > 1e-9:
        raise ConfigError(f"xval needs tmax to be a positive multiple of {XVAL_STEP}")
    times = np.arange(n + 1) * XVAL_STEP
    H = build_model(cfg)
    decomp = decompose(H)
    psi = product_state(H.basis, config)
    sites = _site_list(cfg.j, cfg.L)
    ed = otoc_series(H, psi, cfg.i, sites, cfg.w, cfg.v, times, decomp=decomp)
    tn_model = _tn_model(cfg)
    mpo = otoc_mpo_timesplit(tn_model, config, cfg.i, sites, cfg.w, cfg.v, times,
                             chi_max=cfg.chi_max, dt=cfg.dt, cutoff=cfg.cutoff,
                             order=cfg.trotter_order)
    hol_ed = holevo_series(H, psi, cfg.i, sites, times, decomp=decomp)
    hol_tn = holevo_tebd(tn_model, config, cfg.i, sites, times, dt=cfg.dt,
                         chi_max=cfg.chi_max, cutoff=cfg.cutoff, order=cfg.trotter_order)
    d_otoc = float(np.max(np.abs(ed.values - mpo.values)))
    d_hol = float(np.max(np.abs(hol_ed.values - hol_tn.values)))
    report = dict(L=cfg.L, tmax=cfg.tmax, chi_max=cfg.chi_max, step=XVAL_STEP,
                  otoc_max_deviation=d_otoc, holevo_max_deviation=d_hol,
                  otoc_tolerance=XVAL_OTOC_TOL, holevo_tolerance=XVAL_HOLEVO_TOL,
                  trotter_order=cfg.trotter_order,
                  passed=bool(d_otoc <= XVAL_OTOC_TOL and d_hol <= XVAL_HOLEVO_TOL))
    return report, dict(mpo=mpo.meta, tebd=hol_tn.meta)


def oscillation_contrast(series, times, period):
    """(max - min) / (max + min) of a series over t in [T, 3T]."""
    sel = (times >= period - 1e-9) & (times <= 3 * period + 1e-9)
    if not np.any(sel):
        raise ConfigError("time grid does not cover [T, 3T]")
    hi, lo = float(np.max(series[sel])), float(np.min(series[sel]))
    den = hi + lo
    return (hi - lo) / den if den > 0 else float("inf")


def scan_detuning(cfg, deltas=None):
    """Oscillation contrast of Re F_ii at the central site for each detuning.

    Returns (table, best delta). Ties go to the smaller detuning.
    """
    deltas = _deltas(cfg.deltas) if deltas is None else [float(d) for d in deltas]
    if not deltas:
        raise ConfigError("empty detuning grid")
    period = NOMINAL_PXP_PERIOD * 2.0 / cfg.omega
    tmax = max(cfg.tmax, 3 * period)
    n = int(np.ceil(tmax / cfg.dt))
    times = np.arange(n + 1) * cfg.dt
    c = (cfg.L + 1) // 2
    table = []
    for d in deltas:
        params = RydbergParams(cfg.L, cfg.omega, d, cfg.u1, cfg.u2)
        f = rydberg_zz_protocol(params, "z2" if cfg.state not in ("zero",) else "zero",
                                c, [c], times)
        table.append(dict(delta=d, contrast=oscillation_contrast(np.real(f.values[0]),
                                                                 times, period)))
    best = sorted(table, key=lambda r: (-r["contrast"], r["delta"]))[0]["delta"]
    return table, best


def run_scan(cfg):
    table, best = scan_detuning(cfg)
    return dict(table=table, best_delta=best, site=(cfg.L + 1) // 2,
                period=NOMINAL_PXP_PERIOD * 2.0 / cfg.omega), {}


RUNNERS = {"otoc": run_otoc, "holevo": run_holevo, "rydberg": run_rydberg,
           "scars": run_scars, "spectrum": run_spectrum, "phenom": run_phenom,
           "xval": run_xval, "scan-detuning": run_scan}


def _default_output(cfg):
    ext = "csv" if cfg.experiment in ("otoc", "holevo", "rydberg") and cfg.format == "csv" else "json"
    return f"{cfg.experiment}_{cfg.model}_L{cfg.L}.{ext}"


def run(cfg):
    """Execute one experiment and write its data file and sidecar.

    Returns (exit status, output path).
    """
    t0 = time.perf_counter()
    result, meta = RUNNERS[cfg.experiment](cfg)
    out = cfg.output or _default_output(cfg)
    if isinstance(result, ScramblingField):
        text = field_to_csv(result) if cfg.format == "csv" else field_to_json(result)
        converged = bool(meta.get("converged", True))
    else:
        text = json.dumps(_jsonable(result), sort_keys=True, indent=1) + "\n"
        converged = bool(result.get("passed", True)) if isinstance(result, dict) else True
    _write(out, text)
    side = dict(config=cfg.as_dict(), version=__version__,
                wall_time_s=round(time.perf_counter() - t0, 3),
                result_meta=dict(_jsonable(meta),
                                 kind=getattr(result, "kind", cfg.experiment)),
                diagnostics=dict(converged=converged,
                                 flagged_points=int(np.sum(result.flags))
                                 if isinstance(result, ScramblingField) else 0))
    _write(out + ".meta.json", json.dumps(_jsonable(side), sort_keys=True, indent=1) + "\n")
    if cfg.experiment == "xval" and not result["passed"]:
        raise NumericalError("cross-validation deviation above tolerance")
    return EXIT_OK, out


# -- argument parsing ---------------------------------------------------------------

def _add_common(p):
    a = p.add_argument
    a("--config", help="flat key = value file; flags override it")
    a("--model", choices=["pxp", "rydberg", "phenom"])
    a("-L", type=int, dest="L")
    a("--boundary", choices=[OPEN, PERIODIC])
    a("--omega", type=float)
    a("--delta", type=float)
    a("--u1", type=float)
    a("--u2", type=float)
    a("--J", type=float, dest="J")
    a("--seed", type=int)
    a("--state", help="z2, z2p, zero, up, bits:<binary>, eig:<n> or sup:<n>=<w>,...")
    a("--w", help="W operator axis")
    a("--v", help="V operator axis")
    a("-i", type=int, dest="i", help="fixed site (encoding site for holevo)")
    a("-j", dest="j", help="probe sites, e.g. 1:16 or 3,5,7 (default all)")
    a("--tmax", type=float)
    a("--dt", type=float)
    a("--backend", choices=list(BACKENDS))
    a("--chi-max", type=int, dest="chi_max")
    a("--cutoff", type=float)
    a("--trotter-order", type=int, dest="trotter_order")
    a("--threads", type=int)
    a("-o", "--output", dest="output")
    a("--format", choices=["csv", "json"])
    a("--r", type=int, dest="r", help="distance for the early-growth check")
    a("--deltas", help="comma separated detuning grid")
    a("--prominence", type=float)
    a("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="scarscope",
                                     description="Scrambling in scarred spin chains")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        _add_common(sub.add_parser(name))
    return parser


def _error(code, kind, message):
    sys.stderr.write(json.dumps(dict(error=kind, message=str(message), exit_code=code)) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items()
             if k not in ("experiment", "config", "verbose") and v is not None}
    try:
        file_vals = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.experiment, file_vals, flags)
        code, out = run(cfg)
    except (ConfigError, BasisError, OperatorError, ScrambleError) as exc:
        return _error(EXIT_CONFIG, "config", exc)
    except (EvolutionError, NumericalError, TensorNetError, np.linalg.LinAlgError) as exc:
        return _error(EXIT_NUMERIC, "numerical", exc)
    except OSError as exc:
        return _error(EXIT_IO, "io", exc)
    print(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
