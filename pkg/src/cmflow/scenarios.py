"""Scenario configurations and their run/verify handlers.

A configuration is a TOML file with top-level scalars, an ``[initial]``
table (inline arrays, or ``initial = "random"``) and an ``[options]`` table
for model-specific settings.  Handlers return a :class:`ScenarioResult`
holding tables (CSV), a JSON summary and plot callbacks; the CLI writes
them out.
"""
import re
import sys
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import flows as fl
from . import gauge as ga
from . import kernels as K
from . import matcore as mc
from . import reach as rc
from . import reduced as rd
from . import vectorial as vc

SCENARIO_MODELS = (
    "cm-free", "cm-harmonic", "cm-constant-g", "vectorial", "extended-ef",
    "elementsum-linear", "elementsum-harmonic", "sutherland", "reach-sample",
    "rank-table", "stationarity-scan",
)
DYNAMIC = {"cm-free", "cm-harmonic", "cm-constant-g", "vectorial", "extended-ef",
           "elementsum-linear", "elementsum-harmonic", "sutherland"}
OUTPUT_KINDS = ("csv", "json", "svg")
TOL_RANGE = (1e-13, 1e-3)
TOP_KEYS = {"model", "name", "n", "seed", "t_end", "dt_out", "tol", "initial", "outputs",
            "options", "description"}

# rank sets of the sign-pattern table; rows N >= 8 read {1, N-3, N-2, N-1}
REFERENCE_RANKS = {3: {1}, 4: {1, 3}, 5: {1, 3, 4}, 6: {1, 3, 4, 5}, 7: {1, 5, 6}}


def reference_ranks(n):
    return set(REFERENCE_RANKS[n]) if n in REFERENCE_RANKS else {1, n - 3, n - 2, n - 1}


class ConfigError(ValueError):
    def __init__(self, msg, field=None, line=None, path=None):
        self.field = field
        self.line = line
        self.path = path
        super().__init__(msg)

    def diagnostic(self):
        where = str(self.path or "<config>")
        if self.line is not None:
            where += f":{self.line}"
        fld = f" field '{self.field}':" if self.field else ""
        return f"{where}:{fld} {self}"


# -- configuration --------------------------------------------------------------

def _key_lines(text):
    """Map ``section.key`` (or ``key``) to its 1-based line number."""
    out = {}
    section = ""
    for k, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[([A-Za-z0-9_.\-]+)\]$", line)
        if m:
            section = m.group(1)
            out.setdefault(section, k)
            continue
        m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", line)
        if m:
            out.setdefault(f"{section}.{m.group(1)}" if section else m.group(1), k)
    return out


@dataclass
class ScenarioConfig:
    model: str
    name: str
    n: Optional[int] = None
    seed: int = 0
    t_end: Optional[float] = None
    dt_out: Optional[float] = None
    tol: float = 1e-10
    initial: object = "random"
    outputs: Tuple[str, ...] = OUTPUT_KINDS
    options: Dict = field(default_factory=dict)
    path: Optional[str] = None
    lines: Dict[str, int] = field(default_factory=dict, repr=False)
    raw: Dict = field(default_factory=dict, repr=False)

    def error(self, msg, fld):
        line = self.lines.get(fld)
        if line is None and "." in fld:
            line = self.lines.get(fld.split(".")[0])
        raise ConfigError(msg, fld, line, self.path)

    @property
    def t_eval(self):
        m = max(int(round(self.t_end / self.dt_out)), 1)
        return np.linspace(0.0, self.t_end, m + 1)

    def opt(self, key, default=None):
        return self.options.get(key, default)

    def echo(self):
        """Configuration as resolved (with overrides), for the manifest."""
        d = {"model": self.model, "name": self.name, "n": self.n, "seed": self.seed,
             "t_end": self.t_end, "dt_out": self.dt_out, "tol": self.tol,
             "initial": self.initial, "outputs": list(self.outputs),
             "options": self.options}
        return d


def load_config(path, seed=None, tol=None) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", path=path)
    return parse_config(text, path, seed=seed, tol=tol)


def _num(cfg, d, key, kind, fld=None):
    fld = fld or key
    v = d[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            cfg.error(f"expected an integer, got {v!r}", fld)
        return int(v)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        cfg.error(f"expected a number, got {v!r}", fld)
    return float(v)


def parse_config(text, path=None, seed=None, tol=None) -> ScenarioConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        line = int(m.group(1)) if m else len(text.splitlines())
        raise ConfigError(f"syntax error: {e}", None, line, path)
    lines = _key_lines(text)
    name = raw.get("name")
    if name is None and path is not None:
        name = re.sub(r"\.[^.]*$", "", str(path).replace("\\", "/").split("/")[-1])
    cfg = ScenarioConfig(model="", name=str(name or "scenario"), path=path, lines=lines, raw=raw)
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        cfg.error(f"unknown key (allowed: {', '.join(sorted(TOP_KEYS))})", unknown[0])
    if "model" not in raw:
        cfg.error("missing required field", "model")
    if raw["model"] not in SCENARIO_MODELS:
        cfg.error(f"unknown model {raw['model']!r}; expected one of {', '.join(SCENARIO_MODELS)}",
                  "model")
    cfg.model = raw["model"]
    if not re.match(r"^[A-Za-z0-9_.\-]+$", cfg.name):
        cfg.error("name may only contain letters, digits, '_', '-', '.'", "name")
    if "n" in raw:
        cfg.n = _num(cfg, raw, "n", int)
        if cfg.n < 2:
            cfg.error("n must be at least 2", "n")
    if "seed" in raw:
        cfg.seed = _num(cfg, raw, "seed", int)
    if seed is not None:
        cfg.seed = int(seed)
    if "tol" in raw:
        cfg.tol = _num(cfg, raw, "tol", float)
    if tol is not None:
        cfg.tol = float(tol)
    if not TOL_RANGE[0] <= cfg.tol <= TOL_RANGE[1]:
        cfg.error(f"tol must lie in [{TOL_RANGE[0]:g}, {TOL_RANGE[1]:g}], got {cfg.tol:g}", "tol")
    if "t_end" in raw:
        cfg.t_end = _num(cfg, raw, "t_end", float)
        if not cfg.t_end > 0:
            cfg.error("t_end must be positive", "t_end")
    if "dt_out" in raw:
        cfg.dt_out = _num(cfg, raw, "dt_out", float)
        if not cfg.dt_out > 0:
            cfg.error("dt_out must be positive", "dt_out")
    if "outputs" in raw:
        outs = raw["outputs"]
        if not isinstance(outs, list) or any(o not in OUTPUT_KINDS for o in outs):
            cfg.error(f"outputs must be a list drawn from {list(OUTPUT_KINDS)}", "outputs")
        cfg.outputs = tuple(outs)
    opts = raw.get("options", {})
    if not isinstance(opts, dict):
        cfg.error("options must be a table", "options")
    cfg.options = dict(opts)
    init = raw.get("initial", "random")
    if not (init == "random" or isinstance(init, dict)):
        cfg.error('initial must be "random" or a table of arrays', "initial")
    cfg.initial = init
    _validate_model(cfg)
    return cfg


def _validate_model(cfg):
    m = cfg.model
    if m in DYNAMIC:
        if cfg.n is None:
            cfg.error(f"model {m} needs n", "n")
        if cfg.t_end is None:
            cfg.error(f"model {m} needs t_end", "t_end")
        if cfg.dt_out is None:
            cfg.dt_out = cfg.t_end / 100.0
        if cfg.dt_out > cfg.t_end:
            cfg.error("dt_out exceeds t_end", "dt_out")
    if m == "extended-ef" and cfg.n is not None and isinstance(cfg.initial, dict):
        if "Phi_re" not in cfg.initial and "Phi_im" not in cfg.initial:
            cfg.error("extended-ef needs Phi_re/Phi_im (or initial = \"random\")", "initial")
    if m == "reach-sample":
        if cfg.n not in (None, 3):
            cfg.error("reach-sample is defined for n = 3", "n")
        cfg.n = 3
        for key in ("l", "phi"):
            if key not in cfg.options:
                cfg.error(f"reach-sample needs options.{key}", f"options.{key}")
        l = cfg.options["l"]
        if not (isinstance(l, list) and len(l) == 3):
            cfg.error("options.l must hold three magnitudes (l12, l23, l31)", "options.l")
        if cfg.t_end is None:
            cfg.t_end = 2 * np.pi
        if cfg.dt_out is None:
            cfg.dt_out = cfg.t_end / 32
    if m == "stationarity-scan":
        if cfg.n is None:
            cfg.error("stationarity-scan needs n", "n")
        if cfg.n > 7:
            cfg.error("stationarity-scan enumerates 2^((n-1)(n-2)/2) patterns; n <= 7", "n")
    if m == "rank-table":
        lo, hi = cfg.opt("n_min", 3), cfg.opt("n_max", 8)
        if not (isinstance(lo, int) and isinstance(hi, int) and 3 <= lo <= hi):
            cfg.error("need integers 3 <= n_min <= n_max", "options.n_max")
    if m in DYNAMIC and isinstance(cfg.initial, dict):
        for key, v in cfg.initial.items():
            arr = np.asarray(v, dtype=object)
            try:
                np.asarray(v, dtype=float)
            except (TypeError, ValueError):
                if not isinstance(v, str):
                    cfg.error("expected a numeric array", f"initial.{key}")
            if key in ("x", "p") and arr.shape != (cfg.n,):
                cfg.error(f"expected {cfg.n} entries, got shape {arr.shape}", f"initial.{key}")
            if key in ("g", "phases") and not isinstance(v, (int, float)) and \
                    arr.shape != (cfg.n * (cfg.n - 1) // 2,):
                cfg.error(f"expected {cfg.n * (cfg.n - 1) // 2} entries (12, 13, ..., N-1 N)",
                          f"initial.{key}")
            if key.endswith(("_re", "_im")) and key[0] in "LXYP" and arr.shape != (cfg.n, cfg.n):
                cfg.error(f"expected an {cfg.n}x{cfg.n} matrix", f"initial.{key}")


# -- initial data ---------------------------------------------------------------

def _matrix(init, base, n, default=None):
    re_, im_ = init.get(base + "_re"), init.get(base + "_im")
    if re_ is None and im_ is None:
        return default
    M = np.zeros((n, n), dtype=complex)
    if re_ is not None:
        M += np.asarray(re_, dtype=float)
    if im_ is not None:
        M += 1j * np.asarray(im_, dtype=float)
    return M


def couplings_matrix(n, g, kind="LI", phases=None):
    """Coupling matrix from magnitudes ``g`` in (12, 13, ..., N-1 N) order.

    ``LI``: ``L_ij = i g_ij``; ``LO``: ``L_ij = sign(j - i) g_ij``;
    ``phases``: ``L_ij = i g_ij exp(i phi_ij)`` for ``i < j``.
    """
    m = n * (n - 1) // 2
    g = np.full(m, float(g)) if np.ndim(g) == 0 else np.asarray(g, dtype=float)
    iu = np.triu_indices(n, 1)
    U = np.zeros((n, n), dtype=complex)
    if kind == "LO":
        U[iu] = g
    elif kind == "LI":
        U[iu] = 1j * g
    elif kind == "phases":
        ph = np.zeros(m) if phases is None else np.asarray(phases, dtype=float)
        U[iu] = 1j * g * np.exp(1j * ph)
    else:
        raise ValueError(f"unknown couplings kind {kind!r}")
    return U - U.conj().T


def reduced_initial(cfg, rng=None):
    """``(x, p, L)`` for the reduced models."""
    n = cfg.n
    rng = rng or np.random.default_rng(cfg.seed)
    if cfg.initial == "random":
        x = rc.random_positions(n, rng)
        p = rc.random_momenta(n, rng, 1.0)
        H = mc.random_hermitian(n, rng)
        np.fill_diagonal(H, 0.0)
        return x, p, 1j * H
    init = cfg.initial
    x = np.asarray(init.get("x", np.arange(1.0, n + 1)), dtype=float)
    p = np.asarray(init.get("p", np.zeros(n)), dtype=float)
    L = _matrix(init, "L", n)
    if L is None:
        kind = init.get("couplings", "LI")
        if kind not in ("LI", "LO", "phases"):
            cfg.error("couplings must be LI, LO or phases", "initial.couplings")
        L = couplings_matrix(n, init.get("g", 1.0), kind, init.get("phases"))
    return x, p, L


def _hermitian_init(cfg, rng, name, scale=1.0):
    n = cfg.n
    if cfg.initial != "random":
        M = _matrix(cfg.initial, name, n)
        if M is not None:
            return M
    return scale * mc.random_hermitian(n, rng)


# -- results --------------------------------------------------------------------

@dataclass
class Table:
    header: List[str]
    rows: np.ndarray
    int_cols: Tuple[int, ...] = ()


@dataclass
class ScenarioResult:
    tables: Dict[str, Table] = field(default_factory=dict)
    text_tables: Dict[str, str] = field(default_factory=dict)
    data: Dict = field(default_factory=dict)
    plots: Dict[str, Callable] = field(default_factory=dict)
    drift: Dict[str, float] = field(default_factory=dict)
    checks: List[Dict] = field(default_factory=list)

    def check(self, name, value, threshold, passed, note=""):
        self.checks.append({"name": name, "value": _clean(value), "threshold": threshold,
                            "pass": bool(passed), "note": note})

    @property
    def passed(self):
        return all(c["pass"] for c in self.checks)


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# -- plotting helpers (presentation only) -------------------------------------

def _line_plot(t, Y, labels, title, ylabel, logy=False, extra=()):
    def draw(fig):
        ax = fig.add_subplot(111)
        for k in range(Y.shape[1]):
            ax.plot(t, Y[:, k], lw=1.0, label=labels[k] if labels else None)
        for tt, YY, lab, style in extra:
            for k in range(YY.shape[1]):
                ax.plot(tt, YY[:, k], style, lw=0.8, label=lab if k == 0 else None)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if labels or extra:
            ax.legend(fontsize="small")
    return draw


def _drift_plot(ledger, title):
    names = list(ledger.conserved)
    t = ledger.t
    cols = []
    for k in names:
        q = ledger.series[k]
        cols.append(np.maximum(np.abs(q - q[0]), 1e-18))
    return _line_plot(t, np.column_stack(cols), names, title, "|q(t) - q(0)|", logy=True)


# -- reduced models -------------------------------------------------------------

def _internal_model(cfg, model=None):
    model = model or cfg.model
    if model == "cm-constant-g" and cfg.opt("trap", False):
        return "cm-constant-g-harmonic"
    return model


def _period_residual(t, x):
    k = t[-1] / (2 * np.pi)
    if k >= 1 and abs(k - round(k)) < 1e-9:
        return float(np.max(np.abs(x[-1] - x[0])))
    return None


def _companion(cfg, spec, x, p, L):
    model, _, kind = spec.partition(":")
    if model not in ("cm-free", "cm-harmonic", "cm-constant-g"):
        cfg.error(f"unknown companion model {model!r}", "options.companions")
    if kind:
        g = np.abs(L)[np.triu_indices(cfg.n, 1)]
        L = couplings_matrix(cfg.n, g, kind)
    return model + (":" + kind if kind else ""), _internal_model(cfg, model), L


def run_reduced(cfg: ScenarioConfig) -> ScenarioResult:
    x, p, L = reduced_initial(cfg)
    model = _internal_model(cfg)
    s0 = rd.ReducedState(x, p, L, model)
    t = cfg.t_eval
    tr = rd.integrate(None, s0, t_eval=t, tol=cfg.tol, check_drift=cfg.opt("check_drift", True))
    res = ScenarioResult()
    n = cfg.n
    head = ["t"] + [f"x{i}" for i in range(n)] + [f"p{i}" for i in range(n)]
    res.tables["positions"] = Table(head, np.column_stack([t, tr.x, tr.p]))
    names = list(tr.ledger.series)
    res.tables["invariants"] = Table(["t"] + names, np.column_stack(
        [t] + [tr.ledger.series[k] for k in names]))
    res.drift = tr.ledger.drift_summary()
    runs = {cfg.model: {"model": model, "return_residual": _period_residual(t, tr.x),
                        "max_drift": tr.ledger.max_drift(), "n_accepted": tr.stats["n_accepted"],
                        "n_rejected": tr.stats["n_rejected"], "min_gap": tr.stats["min_gap"]}}
    extra = []
    for spec in cfg.opt("companions", []):
        label, cm, Lc = _companion(cfg, spec, x, p, L)
        trc = rd.integrate(None, rd.ReducedState(x, p, Lc, cm), t_eval=t, tol=cfg.tol,
                           check_drift=cfg.opt("check_drift", True))
        key = re.sub(r"[^A-Za-z0-9]+", "_", label)
        res.tables[f"positions_{key}"] = Table(head, np.column_stack([t, trc.x, trc.p]))
        runs[label] = {"model": cm, "return_residual": _period_residual(t, trc.x),
                       "max_drift": trc.ledger.max_drift(), "n_accepted": trc.stats["n_accepted"],
                       "n_rejected": trc.stats["n_rejected"], "min_gap": trc.stats["min_gap"]}
        for k, v in trc.ledger.drift_summary().items():
            res.drift[f"{label}/{k}"] = v
        extra.append((t, trc.x, label, "--"))
    res.data = {"runs": runs, "backend": tr.stats["backend"]}
    res.plots["positions"] = _line_plot(t, tr.x, None, f"{cfg.name}: positions ({cfg.model})",
                                        "x", extra=extra)
    res.plots["drift"] = _drift_plot(tr.ledger, f"{cfg.name}: invariant drift")
    res._traj = tr
    return res


def dynamical_time(x, p, L):
    """Shortest pair time scale, ``min(x_ij^2 / |L_ij|, |x_ij| / |p_i - p_j|)``."""
    x, p, L = np.asarray(x, dtype=float), np.asarray(p, dtype=float), np.asarray(L)
    iu = np.triu_indices(len(x), 1)
    dx = np.abs(x[:, None] - x[None, :])[iu]
    dp = np.abs(p[:, None] - p[None, :])[iu]
    with np.errstate(divide="ignore"):
        t = np.concatenate([dx ** 2 / np.abs(L[iu]), dx / dp])
    return float(np.min(t))


def taylor_fit(x0, p0, L0, times=None, tol=1e-13, floor=1e-11, min_points=8):
    """Fit ``|x_g - x_L|(t) ~ c t^k`` between frozen and dynamic couplings.

    Both runs use the free model.  The default window spans a decade at
    ``0.005..0.05`` times the dynamical time (capped at 1) and is widened
    until ``min_points`` gaps clear the integration noise ``floor``.  The
    fitted component is the one with the largest predicted cubic term, or
    the largest gap when that term vanishes.  Returns exponent, fitted
    coefficient, the ``t^3`` prediction and their ratio at the smallest time.
    """
    x0, p0 = np.asarray(x0, dtype=float), np.asarray(p0, dtype=float)
    pred, _ = rd.taylor_gap(x0, p0, L0, 1.0)
    noise = floor * max(1.0, float(np.max(np.abs(x0))))
    scale = min(1.0, dynamical_time(x0, p0, L0))
    while True:
        ts = np.geomspace(0.005, 0.05, 10) * scale if times is None else np.asarray(times, dtype=float)
        t_eval = np.concatenate([[0.0], ts])
        a = rd.integrate(None, rd.ReducedState(x0, p0, L0, "cm-constant-g"), t_eval=t_eval,
                         tol=tol, check_drift=False)
        b = rd.integrate(None, rd.ReducedState(x0, p0, L0, "cm-free"), t_eval=t_eval,
                         tol=tol, check_drift=False)
        gap = (a.x - b.x)[1:]
        cubic = np.abs(pred) * ts[-1] ** 3
        i = int(np.argmax(cubic)) if cubic.max() > 0.1 * np.max(np.abs(gap[-1])) \
            else int(np.argmax(np.abs(gap[-1])))
        y = np.abs(gap[:, i])
        keep = y > noise
        if times is not None or keep.sum() >= min_points or scale >= 1.0:
            break
        scale = min(1.0, 2.0 * scale)
    if keep.sum() < 2:
        raise ValueError("short-time gap below the integration noise floor")
    slope, icpt = np.polyfit(np.log(ts[keep]), np.log(y[keep]), 1)
    c3 = float(pred[i])
    ratio = float(gap[0, i] / (c3 * ts[0] ** 3)) if c3 != 0 else np.nan
    return {"exponent": float(slope), "coefficient": float(np.exp(icpt)), "component": i,
            "predicted_c3": c3, "ratio": ratio, "gap": gap, "times": ts}


def verify_reduced(cfg: ScenarioConfig) -> ScenarioResult:
    res = run_reduced(cfg)
    tr = res._traj
    x, p, L = reduced_initial(cfg)
    t = tr.t
    for k, v in res.drift.items():
        if "/" not in k:
            res.check(f"drift[{k}]", v, rd.DRIFT_FACTOR * cfg.tol, v <= rd.DRIFT_FACTOR * cfg.tol)
    if cfg.model in ("cm-free", "cm-harmonic"):
        pt = fl.phase_point_from_reduced(x, p, L)
        flow = fl.free_flow if cfg.model == "cm-free" else fl.harmonic_flow
        ex = np.array([np.linalg.eigvalsh(flow(pt, tt).X) for tt in t])
        gap = float(np.max(np.abs(ex - tr.x)))
        res.check("oracle_gap", gap, 1e-6, gap <= 1e-6, "reduced ODE vs eigenvalues of the matrix flow")
        res.data["oracle_gap"] = gap
        rr = _period_residual(t, tr.x)
        if cfg.model == "cm-harmonic" and rr is not None:
            res.check("return_residual", rr, 1e-5, rr <= 1e-5)
    else:
        fit = taylor_fit(x, p, L)
        res.data["taylor_fit"] = {k: v for k, v in fit.items() if k not in ("gap", "times")}
        if abs(fit["predicted_c3"]) > 1e-12:
            res.check("taylor_exponent", fit["exponent"], "3 +- 0.1", abs(fit["exponent"] - 3) <= 0.1)
            res.check("taylor_coefficient_ratio", fit["ratio"], "1 +- 0.05",
                      abs(fit["ratio"] - 1) <= 0.05)
        else:
            res.check("taylor_exponent", fit["exponent"], ">= 3.8", fit["exponent"] >= 3.8,
                      "imaginary couplings: cubic term vanishes")
    return res


# -- vectorial ------------------------------------------------------------------

def vectorial_initial(cfg, rng=None):
    n = cfg.n
    rng = rng or np.random.default_rng(cfg.seed)
    init = cfg.initial if isinstance(cfg.initial, dict) else {}
    if cfg.initial == "random":
        x = rc.random_positions(n, rng)
        p = rc.random_momenta(n, rng, 1.0)
        d = int(cfg.opt("d", 2))
        E = rng.standard_normal((d, n)) + 1j * rng.standard_normal((d, n))
        E /= np.linalg.norm(E, axis=0)
        return rd.VectorialState(x, p, E, E.conj().T)
    x = np.asarray(init.get("x", np.arange(1.0, n + 1)), dtype=float)
    p = np.asarray(init.get("p", np.zeros(n)), dtype=float)
    if "E_re" in init or "E_im" in init:
        E = np.asarray(init.get("E_re", 0.0), dtype=float) + 1j * np.asarray(init.get("E_im", 0.0))
        F = np.asarray(init.get("F_re", 0.0), dtype=float) + 1j * np.asarray(init.get("F_im", 0.0))
        return rd.VectorialState(x, p, np.atleast_2d(E), np.atleast_2d(F))
    _, _, L = reduced_initial(cfg)
    return vc.vectorial_state_from_L(x, p, L)


def run_vectorial(cfg):
    s0 = vectorial_initial(cfg)
    t = cfg.t_eval
    tr = rd.integrate(None, s0, t_eval=t, tol=cfg.tol, check_drift=cfg.opt("check_drift", True))
    res = ScenarioResult()
    n = cfg.n
    res.tables["positions"] = Table(["t"] + [f"x{i}" for i in range(n)] + [f"p{i}" for i in range(n)],
                                    np.column_stack([t, tr.x, tr.p]))
    names = list(tr.ledger.series)
    res.tables["invariants"] = Table(["t"] + names, np.column_stack(
        [t] + [tr.ledger.series[k] for k in names]))
    res.drift = tr.ledger.drift_summary()
    fe = vc.fe_to_L(s0.E, s0.F)
    res.data = {"diag_spread": fe.spread, "equal_diagonal": bool(fe),
                "backend": tr.stats["backend"]}
    res.plots["positions"] = _line_plot(t, tr.x, None, f"{cfg.name}: positions (vectorial)", "x")
    res.plots["drift"] = _drift_plot(tr.ledger, f"{cfg.name}: invariant drift")
    res._traj = tr
    return res


def verify_vectorial(cfg):
    res = run_vectorial(cfg)
    tr = res._traj
    s0 = tr.states[0]
    sT = tr.states[-1]
    fe0 = vc.fe_to_L(s0.E, s0.F)
    for k, v in res.drift.items():
        res.check(f"drift[{k}]", v, rd.DRIFT_FACTOR * cfg.tol, v <= rd.DRIFT_FACTOR * cfg.tol)
    if fe0:
        ref = rd.integrate(None, rd.ReducedState(s0.x, s0.p, fe0.L, "cm-free"), t_eval=tr.t,
                           tol=cfg.tol)
        LT = vc.fe_to_L(sT.E, sT.F).L
        Lr = ref.states[-1].L
        g1, g2 = ga.triple_sums(LT), ga.triple_sums(Lr)
        mag = float(np.max(np.abs(g1.magnitudes - g2.magnitudes)))
        ang = max([float(ga.angle_distance(g1.triples[k], g2.triples[k])) for k in g1.triples
                   if np.isfinite(g1.triples[k]) and np.isfinite(g2.triples[k])] or [0.0])
        pos = float(np.max(np.abs(tr.x - ref.x)))
        res.data.update({"L_flow_position_gap": pos, "L_flow_magnitude_gap": mag,
                         "L_flow_triple_gap": ang})
        res.check("L_flow_gauge_class", max(mag, ang, pos), 1e-6, max(mag, ang, pos) <= 1e-6)
    else:
        res.check("equal_diagonal", fe0.spread, "0", False,
                  "unequal (f_i|e_i): no L-flow counterpart")
    return res


# -- extended model -------------------------------------------------------------

def extended_initial(cfg, rng=None):
    n = cfg.n
    rng = rng or np.random.default_rng(cfg.seed)
    xi = float(cfg.opt("xi", 1.0))
    if cfg.initial == "random":
        X = np.diag(rc.random_positions(n, rng)).astype(complex)
    else:
        X = _matrix(cfg.initial, "X", n)
        if X is None:
            X = np.diag(np.asarray(cfg.initial.get("x", np.arange(1.0, n + 1)), dtype=float)).astype(complex)
    Y = _hermitian_init(cfg, rng, "Y")
    Phi = _hermitian_init(cfg, rng, "Phi", 0.5)
    return fl.ExtendedPoint.from_phi(X, Y, Phi, xi)


def run_extended(cfg):
    e0 = extended_initial(cfg)
    t = cfg.t_eval
    s0 = rd.extended_from_matrices(e0.X, e0.Y, e0.Phi, e0.xi)
    tr = rd.integrate(None, s0, t_eval=t, tol=cfg.tol, check_drift=cfg.opt("check_drift", True))
    n = cfg.n
    exact = [fl.ef_flow(e0, tt) for tt in t]
    ex = np.array([np.linalg.eigvalsh(X) for X, _, _, _ in exact])
    C0 = exact[0][3]
    cres = max(float(np.max(np.abs(C - C0))) for _, _, _, C in exact)
    res = ScenarioResult()
    res.tables["positions"] = Table(["t"] + [f"x{i}" for i in range(n)] + [f"exact_x{i}" for i in range(n)],
                                    np.column_stack([t, tr.x, ex]))
    res.drift = tr.ledger.drift_summary()
    comm = float(np.max(np.abs(mc.commutator(e0.Y, e0.Phi))))
    res.data = {"xi": e0.xi, "commutator_C_residual": cres,
                "oracle_gap": float(np.max(np.abs(ex - tr.x))), "Y0_Phi0_commutator": comm,
                "backend": tr.stats["backend"]}
    res.plots["positions"] = _line_plot(t, tr.x, None, f"{cfg.name}: eigenvalues of X (extended)",
                                        "x", extra=[(t, ex, "exact", ":")])
    res._traj = tr
    res._exact = (e0, exact)
    return res


def verify_extended(cfg):
    res = run_extended(cfg)
    e0, exact = res._exact
    gap = res.data["oracle_gap"]
    res.check("oracle_gap", gap, 1e-6, gap <= 1e-6, "reduced ODE vs closed-form flow")
    cres = res.data["commutator_C_residual"]
    res.check("C_conservation", cres, 1e-9, cres <= 1e-9)
    if cfg.n == 2:
        a = np.real(mc.pauli_decompose(e0.X)[1])
        b = np.real(mc.pauli_decompose(e0.Y)[1])
        c = np.real(mc.pauli_decompose(e0.Phi)[1])
        if np.allclose(a[:2], 0) and np.linalg.norm(b) > 0 and np.linalg.norm(c) > 0:
            err = 0.0
            for tt, (X, _, Phi, _) in zip(res._traj.t, exact):
                d, ph = fl.ef_pauli_n2(a[2], np.linalg.norm(b), b / np.linalg.norm(b),
                                       np.linalg.norm(c), c / np.linalg.norm(c), e0.xi, tt)
                dx = np.real(mc.pauli_decompose(X)[1])
                dp = np.real(mc.pauli_decompose(Phi)[1])
                err = max(err, float(np.max(np.abs(dx - d))), float(np.max(np.abs(dp - ph))))
            res.data["pauli_gap"] = err
            res.check("pauli_closed_form", err, 1e-9, err <= 1e-9)
    return res


# -- element-sum and Sutherland ------------------------------------------------

def _matrix_pair(cfg):
    rng = np.random.default_rng(cfg.seed)
    X = _hermitian_init(cfg, rng, "X")
    Y = _hermitian_init(cfg, rng, "Y")
    return fl.PhasePoint(X, Y)


def run_elementsum(cfg):
    pt = _matrix_pair(cfg)
    harmonic = cfg.model == "elementsum-harmonic"
    flow = fl.elementsum_harmonic_flow if harmonic else fl.elementsum_linear_flow
    t = cfg.t_eval
    exact = [flow(pt, tt) for tt in t]
    ev = np.array([np.linalg.eigvalsh(q.X) for q in exact])
    tr = rd.integrate(None, rd.ElementSumState(pt.X, pt.Y, harmonic), t_eval=t, tol=cfg.tol,
                      check_drift=cfg.opt("check_drift", True))
    resid = max(max(float(np.max(np.abs(s.X - q.X))), float(np.max(np.abs(s.Y - q.Y))))
                for s, q in zip(tr.states, exact))
    res = ScenarioResult()
    res.tables["eigenvalues"] = Table(["t"] + [f"x{i}" for i in range(cfg.n)],
                                      np.column_stack([t, ev]))
    res.drift = tr.ledger.drift_summary()
    res.data = {"ode_vs_closed_form": resid}
    if harmonic:
        basis = fl.OnesProjectorBasis.of(cfg.n)
        Q = basis.Q
        blocks = np.array([Q.T @ q.X @ Q for q in exact])
        res.data["complement_block_drift"] = float(np.max(np.abs(blocks - blocks[0])))
        res.data.update(block_frequencies(t, [basis.to_basis(q.X) for q in exact]))
    res.plots["eigenvalues"] = _line_plot(t, ev, None, f"{cfg.name}: eigenvalues of X", "x")
    res._traj = tr
    return res


def block_frequencies(t, Xb):
    """Dominant angular frequencies of the (0,0) and (0,1) basis entries by FFT."""
    t = np.asarray(t)
    dt = t[1] - t[0]
    out = {}
    for key, (i, j) in (("freq_00", (0, 0)), ("freq_01", (0, 1))):
        s = np.array([np.real(M[i, j]) for M in Xb])
        s = s - s.mean()
        spec = np.abs(np.fft.rfft(s))
        w = 2 * np.pi * np.fft.rfftfreq(len(s), dt)
        k = int(np.argmax(spec[1:]) + 1) if len(spec) > 1 else 0
        out[key] = float(w[k])
    out["freq_bin"] = float(2 * np.pi / (len(t) * dt))
    return out


def verify_elementsum(cfg):
    res = run_elementsum(cfg)
    r = res.data["ode_vs_closed_form"]
    res.check("ode_vs_closed_form", r, 1e-9, r <= 1e-9)
    if cfg.model == "elementsum-harmonic":
        n = cfg.n
        b = res.data["freq_bin"]
        res.check("freq_00", res.data["freq_00"], f"{n} +- {b:.3g}", abs(res.data["freq_00"] - n) <= b)
        res.check("freq_01", res.data["freq_01"], f"{n / 2} +- {b:.3g}",
                  abs(res.data["freq_01"] - n / 2) <= b)
        d = res.data["complement_block_drift"]
        res.check("complement_block_drift", d, 1e-10, d <= 1e-10)
    return res


def sutherland_initial(cfg):
    n = cfg.n
    rng = np.random.default_rng(cfg.seed)
    X0 = _matrix(cfg.initial, "X", n) if isinstance(cfg.initial, dict) else None
    if X0 is None:
        X0 = mc.random_unitary(n, rng)
    Y0 = _matrix(cfg.initial, "Y", n) if isinstance(cfg.initial, dict) else None
    if Y0 is None:
        K = -1j * mc.random_hermitian(n, rng)
        Y0 = X0.conj().T @ K
    return X0, Y0


def run_sutherland(cfg):
    X0, Y0 = sutherland_initial(cfg)
    t = cfg.t_eval
    ph = fl.sutherland_eigenphases(X0, Y0, t)
    res = ScenarioResult()
    res.tables["eigenphases"] = Table(["t"] + [f"theta{i}" for i in range(cfg.n)],
                                      np.column_stack([t, ph]))
    un, kk = 0.0, 0.0
    K0 = X0 @ Y0
    for tt in t:
        X, Y = fl.sutherland_flow(X0, Y0, tt)
        un = max(un, float(np.max(np.abs(X.conj().T @ X - np.eye(cfg.n)))))
        kk = max(kk, float(np.max(np.abs(X @ Y - K0))))
    res.data = {"unitarity_residual": un, "XY_residual": kk}
    res.plots["eigenphases"] = _line_plot(t, ph, None, f"{cfg.name}: eigenphases", "theta")
    return res


def verify_sutherland(cfg):
    res = run_sutherland(cfg)
    res.check("unitarity_residual", res.data["unitarity_residual"], 1e-10,
              res.data["unitarity_residual"] <= 1e-10)
    res.check("XY_residual", res.data["XY_residual"], 1e-10, res.data["XY_residual"] <= 1e-10)
    return res


# -- reachable sets -------------------------------------------------------------

def run_reach(cfg):
    l = np.asarray(cfg.opt("l"), dtype=float)
    phi = float(cfg.opt("phi"))
    L0 = rc.unitary_L3(l, phi)
    t_grid = np.linspace(0.0, cfg.t_end, max(int(round(cfg.t_end / cfg.dt_out)), 1) + 1)
    cloud = rc.sample_image(L0, int(cfg.opt("n_traj", 5000)), t_grid, cfg.seed,
                            model=cfg.opt("flow", "cm-harmonic"), tol=cfg.tol,
                            workers=int(cfg.opt("workers", 1)))
    spec = rc.cap_spec_from_L(L0)
    cap_tol = float(cfg.opt("cap_tol", 1e-5))
    inside = rc.cap_points_test(spec, cloud.l, cap_tol)
    res = ScenarioResult()
    res.text_tables["cloud"] = cloud.to_csv()
    res.data = {"cap": {"radius": spec.radius, "product": spec.product},
                "l0": l.tolist(), "phi123": phi, "n_samples": len(cloud),
                "n_traj": cloud.n_traj, "failures": cloud.failures,
                "outside_cap": int((~inside).sum()), "cap_tol": cap_tol,
                "opening_rad": cloud.opening, "opening_deg": float(np.degrees(cloud.opening)),
                "sphere_residual": float(np.max(np.abs(np.linalg.norm(cloud.l, axis=1) - spec.radius)))
                if len(cloud) else 0.0,
                "sampling": cloud.meta}
    res.plots["cloud"] = _cloud_plot(cloud, l, f"{cfg.name}: l(t), Phi123 = {phi:.4f}")
    res._cloud = cloud
    return res


def _cloud_plot(cloud, l0, title):
    # project onto the plane orthogonal to (1, 1, 1)
    e1 = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    e2 = np.array([1.0, 1.0, -2.0]) / np.sqrt(6)

    def draw(fig):
        ax = fig.add_subplot(111)
        P = cloud.l
        ax.scatter(P @ e1, P @ e2, s=1, c="0.4", lw=0)
        ax.plot([l0 @ e1], [l0 @ e2], "k*", ms=8)
        ax.set_aspect("equal")
        ax.set_xlabel("(l12 - l23)/sqrt2")
        ax.set_ylabel("(l12 + l23 - 2 l31)/sqrt6")
        ax.set_title(title)
    return draw


def verify_reach(cfg):
    res = run_reach(cfg)
    d = res.data
    res.check("cap_soundness", d["outside_cap"], 0, d["outside_cap"] == 0)
    res.check("sphere_residual", d["sphere_residual"], d["cap_tol"],
              d["sphere_residual"] <= d["cap_tol"])
    # exact matrix flow on a few trajectories as oracle
    l = np.asarray(cfg.opt("l"), dtype=float)
    L0 = rc.unitary_L3(l, float(cfg.opt("phi")))
    t_grid = np.linspace(0.0, cfg.t_end, 9)
    a = rc.sample_image(L0, 3, t_grid, cfg.seed, model=cfg.opt("flow", "cm-harmonic"), tol=cfg.tol)
    b = rc.sample_image(L0, 3, t_grid, cfg.seed, model=cfg.opt("flow", "cm-harmonic"),
                        method="exact")
    gap = float(np.max(np.abs(a.l - b.l))) if len(a) == len(b) else np.inf
    res.check("exact_flow_gap", gap, 1e-6, gap <= 1e-6)
    return res


# -- rank table -----------------------------------------------------------------

def run_rank_table(cfg):
    lo, hi = int(cfg.opt("n_min", 3)), int(cfg.opt("n_max", 8))
    rows = []
    for n in range(lo, hi + 1):
        c = vc.rank_census(n, g=float(cfg.opt("g", 0.5)), n_samples=int(cfg.opt("n_samples", 1_000_000)),
                           seed=cfg.seed, exhaustive_max=int(cfg.opt("exhaustive_max", 8)))
        rows.append({"N": n, "ranks": sorted(c.ranks), "counts": {str(k): v for k, v in c.counts.items()},
                     "method": c.method, "n_patterns": c.n_patterns,
                     "reference": sorted(reference_ranks(n)), "match": set(c.ranks) == reference_ranks(n)})
    res = ScenarioResult()
    res.data = {"table": rows}
    return res


def verify_rank_table(cfg):
    res = run_rank_table(cfg)
    for r in res.data["table"]:
        res.check(f"ranks[N={r['N']}]", r["ranks"], r["reference"], r["match"], r["method"])
    return res


# -- stationarity scan ----------------------------------------------------------

def stationarity_scan(n, g=1.0, draws=5, t_check=1.0, seed=0, tol=1e-11, integrate=True):
    """Second-derivative test over every gauge-fixed sign pattern.

    With ``integrate`` each pattern is also run from ``draws`` random
    (x, p) and the largest relative change of ``|L_ij|`` on ``[0, t_check]``
    is recorded.
    """
    nb = len(K.free_pairs(n))
    rng = np.random.default_rng(seed)
    starts = [(rc.random_positions(n, rng), rc.random_momenta(n, rng, 1.0)) for _ in range(draws)]
    rows = []
    for code in range(1 << nb):
        pat = vc.SignPattern(n, code)
        L = pat.matrix(g)
        row = {"code": code, "bits": "".join(str((code >> b) & 1) for b in range(nb)),
               "second_order": vc.second_derivative_stationary(pat),
               "ordinary": vc.is_ordinary_cm(L)}
        if integrate:
            worst = 0.0
            for x0, p0 in starts:
                tr = rd.integrate(None, rd.ReducedState(x0, p0, L, "cm-free"),
                                  t_eval=np.linspace(0, t_check, 21), tol=tol, check_drift=False)
                mags = np.array([np.abs(s.L) for s in tr.states])
                worst = max(worst, float(np.max(np.abs(mags - mags[0]))) / g)
            row["max_dL"] = worst
        rows.append(row)
    return rows


def run_stationarity(cfg):
    rows = stationarity_scan(cfg.n, float(cfg.opt("g", 1.0)), int(cfg.opt("draws", 5)),
                             float(cfg.opt("t_check", 1.0)), cfg.seed,
                             integrate=bool(cfg.opt("integrate", True)))
    res = ScenarioResult()
    cols = ["code", "second_order", "ordinary"] + (["max_dL"] if "max_dL" in rows[0] else [])
    res.tables["patterns"] = Table(cols, np.array([[float(r[c]) for c in cols] for r in rows]),
                                   int_cols=(0, 1, 2))
    res.data = {"patterns": rows,
                "stationary_codes": [r["code"] for r in rows if r["second_order"]],
                "ordinary_codes": [r["code"] for r in rows if r["ordinary"]]}
    return res


def verify_stationarity(cfg):
    res = run_stationarity(cfg)
    rows = res.data["patterns"]
    same = res.data["stationary_codes"] == res.data["ordinary_codes"]
    res.check("second_order_equals_ordinary_class", res.data["stationary_codes"],
              res.data["ordinary_codes"], same)
    if "max_dL" in rows[0]:
        thr = 1e-7
        const = [r["code"] for r in rows if r["max_dL"] <= thr]
        res.check("integration_constant_set", const, res.data["stationary_codes"],
                  const == res.data["stationary_codes"])
    return res


RUNNERS = {
    "cm-free": (run_reduced, verify_reduced),
    "cm-harmonic": (run_reduced, verify_reduced),
    "cm-constant-g": (run_reduced, verify_reduced),
    "vectorial": (run_vectorial, verify_vectorial),
    "extended-ef": (run_extended, verify_extended),
    "elementsum-linear": (run_elementsum, verify_elementsum),
    "elementsum-harmonic": (run_elementsum, verify_elementsum),
    "sutherland": (run_sutherland, verify_sutherland),
    "reach-sample": (run_reach, verify_reach),
    "rank-table": (run_rank_table, verify_rank_table),
    "stationarity-scan": (run_stationarity, verify_stationarity),
}
