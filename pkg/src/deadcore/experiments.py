"""Config-driven experiments with machine-readable outputs.

A config is a JSON object. :func:`parse_config` validates it and fills
defaults; :func:`run` executes it, writes ``summary.json``, CSV tables and
VTK fields into the output directory and returns an exit code: 0 when
every assertion passes, 2 when one fails, 1 on error.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dead_core import (
    blowup_rate_fit,
    compute_alpha,
    default_threshold,
    detect,
    edge_offset,
    psi_bound_check,
)
from .elliptic import DEFAULT_TOL, solve_semilinear
from .errors import DeadcoreError, HypothesisViolated, InsufficientSamples, ParseError, ValidationError
from .fields import FieldKind, ScalarField
from .geometry import domain_from_config, field_from_config
from .io import write_columns_csv, write_csv, write_field_csv, write_json, write_vtk
from .kinetics import Smoothness, growth_functions, kinetic_from_config
from .oracle_1d import blowup_constants, radial_solve, root_threshold, slab_exact_root, slab_exact_v_root
from .profiles import PowerCrossing, manufactured_source
from .shape_derivative import (gateaux_check, kinetic_perturbation_study, solve_v,
                               truncated_shape_sequence)

log = logging.getLogger(__name__)


class ExperimentKind(str, enum.Enum):
    SOLVE = "Solve"
    GATEAUX_CHECK = "GateauxCheck"
    KINETIC_PERTURBATION = "KineticPerturbation"
    TRUNCATED_SEQUENCE = "TruncatedSequence"
    DEAD_CORE_AUDIT = "DeadCoreAudit"


DEFAULT_TAU_LIST = (1e-1, 1e-2, 1e-3, 1e-4)
DEFAULT_M_LIST = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)
DEFAULT_N_LIST = (4, 8, 16, 32, 64, 128)
# the radial solver stalls near 1e-11 with a dead core; 1e-10 is its floor
RADIAL_TOL = 1e-10

DEFAULTS_HELP = """\
config defaults:
  tol               1e-10
  eps_dc            max(10 tol, Psi^-1(h)) when 1/G is integrable at 0, else max(10 tol, h^2)
  f                 0.0  (number, "beta_one", or {"type": "cubic_crossing"|"power_crossing", ...})
  theta             {"type": "dilation"}
  tau_list          [0.1, 0.01, 0.001, 0.0001]  (strictly decreasing)
  m_list            [1, 2, 4, ..., 256]  (strictly increasing)
  n_list            [4, 8, ..., 128]  (strictly increasing)
  band              1.0 on slabs and rectangles, 0.5 on disks
  slack_factor      5  (proximity-bound violation allowed: slack_factor * h)
  interior_distance 0.2
  floor_delta       1e-6
  min_slope         0.9  (Gateaux slope, smooth kinetics only)
  recovery          "flux"
  output            out/<name>
  jobs              1
"""

_FIELDS = {"name", "kind", "domain", "kinetic", "f", "theta", "tol", "eps_dc", "tau_list", "m_list",
           "n_list", "band", "slack_factor", "interior_distance", "floor_delta", "min_slope",
           "recovery", "output", "jobs"}


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: ExperimentKind
    domain: dict
    kinetic: dict
    f: object = 0.0
    theta: dict = field(default_factory=lambda: {"type": "dilation"})
    tol: float = DEFAULT_TOL
    eps_dc: float | None = None
    tau_list: tuple = DEFAULT_TAU_LIST
    m_list: tuple = DEFAULT_M_LIST
    n_list: tuple = DEFAULT_N_LIST
    band: float | None = None
    slack_factor: float = 5.0
    interior_distance: float = 0.2
    floor_delta: float = 1e-6
    min_slope: float = 0.9
    recovery: str = "flux"
    output: str | None = None
    jobs: int = 1

    @property
    def h(self) -> float:
        return float(self.domain["h"])

    @property
    def dim(self) -> int:
        return 1 if self.domain["type"] == "slab" else 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        for key in ("tau_list", "m_list", "n_list"):
            d[key] = list(d[key])
        return d


# ---------------------------------------------------------------- parsing


def _position(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _find_duplicate_key(text: str):
    """``(key, line, column)`` of the first key repeated within one object, or ``None``."""
    stack = []  # a set of keys per open object, None per open array
    expect_key = False
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "{":
            stack.append(set())
            expect_key = True
        elif ch == "[":
            stack.append(None)
            expect_key = False
        elif ch in "}]":
            if stack:
                stack.pop()
            expect_key = False
        elif ch == ",":
            expect_key = bool(stack) and stack[-1] is not None
        elif ch == '"':
            j = i + 1
            while j < n and text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            if expect_key:
                key = json.loads(text[i:j + 1])
                if key in stack[-1]:
                    return (key, *_position(text, i))
                stack[-1].add(key)
                expect_key = False
            i = j
        i += 1
    return None


class _DuplicateKey(Exception):
    pass


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise _DuplicateKey(k)
        out[k] = v
    return out


def _load_json(text: str) -> dict:
    try:
        data = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except _DuplicateKey as exc:
        loc = _find_duplicate_key(text)
        if loc is None:
            raise ParseError(f"duplicate field {exc.args[0]!r}") from None
        key, line, col = loc
        raise ParseError(f"line {line}, column {col}: duplicate field {key!r}") from None
    if not isinstance(data, dict):
        raise ParseError("line 1, column 1: top level must be a JSON object")
    return data


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _number(entry: dict, key: str, path: str, default=None, positive: bool = True) -> float:
    if key not in entry:
        if default is None:
            raise ValidationError(f"{path}{key}: required")
        return float(default)
    val = entry[key]
    if not _is_number(val):
        raise ValidationError(f"{path}{key}: must be a finite number")
    if positive and not val > 0:
        raise ValidationError(f"{path}{key}: must be positive")
    return float(val)


def _only_keys(entry: dict, allowed: set, path: str):
    extra = sorted(set(entry) - allowed)
    if extra:
        raise ValidationError(f"{path}{extra[0]}: unknown field")


def _validate_domain(entry) -> dict:
    if not isinstance(entry, dict):
        raise ValidationError("domain: must be an object")
    kind = entry.get("type")
    sizes = {"slab": ("L",), "disk": ("R",), "rectangle": ("a", "b")}
    if kind not in sizes:
        raise ValidationError(f"domain.type: must be one of {sorted(sizes)}")
    _only_keys(entry, {"type", "h", *sizes[kind]}, "domain.")
    out = {"type": kind}
    for key in sizes[kind]:
        out[key] = _number(entry, key, "domain.")
    h = out["h"] = _number(entry, "h", "domain.")
    if kind == "slab" and h >= out["L"]:
        raise ValidationError(f"domain.h: h={h} must be smaller than L={out['L']}")
    if kind == "disk" and h >= out["R"] / 2.0:
        raise ValidationError(f"domain.h: h={h} must be smaller than R/2={out['R'] / 2.0}")
    if kind == "rectangle" and h >= min(out["a"], out["b"]):
        raise ValidationError(f"domain.h: h={h} must be smaller than min(a, b)")
    return out


def _validate_kinetic(entry) -> dict:
    if not isinstance(entry, dict):
        raise ValidationError("kinetic: must be an object")
    kind = entry.get("type")
    params = {"root": ("lambda", "q"), "ramp": ("slope", "knee"), "linear": ("rate",)}
    if kind not in params:
        raise ValidationError(f"kinetic.type: must be one of {sorted(params)}")
    _only_keys(entry, {"type", "mollify_n", "truncate_m", *params[kind]}, "kinetic.")
    out = {"type": kind}
    if kind == "root":
        out["lambda"] = _number(entry, "lambda", "kinetic.", default=1.0)
        q = _number(entry, "q", "kinetic.", positive=False)
        if not 0.0 < q < 1.0:
            raise ValidationError("kinetic.q: q must lie in (0,1)")
        out["q"] = q
    elif kind == "ramp":
        out["slope"] = _number(entry, "slope", "kinetic.")
        knee = _number(entry, "knee", "kinetic.")
        if not knee < 1.0:
            raise ValidationError("kinetic.knee: knee must lie in (0,1)")
        out["knee"] = knee
    else:
        out["rate"] = _number(entry, "rate", "kinetic.", default=1.0)
    if entry.get("mollify_n") is not None:
        n = entry["mollify_n"]
        if not (isinstance(n, int) and not isinstance(n, bool) and n >= 1):
            raise ValidationError("kinetic.mollify_n: must be a positive integer")
        out["mollify_n"] = n
    if entry.get("truncate_m") is not None:
        out["truncate_m"] = _number(entry, "truncate_m", "kinetic.")
    try:
        kinetic_from_config(out)
    except (ValueError, DeadcoreError) as exc:
        raise ValidationError(f"kinetic: {exc}") from None
    return out


def _validate_source(entry, domain: dict):
    if _is_number(entry):
        return float(entry)
    if entry == "beta_one":
        return entry
    if isinstance(entry, dict):
        kind = entry.get("type")
        if kind not in ("cubic_crossing", "power_crossing"):
            raise ValidationError("f.type: must be 'cubic_crossing' or 'power_crossing'")
        _only_keys(entry, {"type", "c", "level", "bc", "exponent"}, "f.")
        out = {"type": kind, "c": _number(entry, "c", "f."),
               "level": _number(entry, "level", "f.", positive=False),
               "bc": _number(entry, "bc", "f.", default=1.0, positive=False)}
        exponent = entry.get("exponent", 3)
        if kind == "cubic_crossing" and exponent != 3:
            raise ValidationError("f.exponent: cubic_crossing has exponent 3")
        if not (isinstance(exponent, int) and exponent >= 1 and exponent % 2 == 1):
            raise ValidationError("f.exponent: must be a positive odd integer")
        out["exponent"] = exponent
        size = domain.get("L", domain.get("R"))
        if size is None:
            raise ValidationError("f: crossing profiles need a slab or disk domain")
        if not out["c"] < size:
            raise ValidationError(f"f.c: c={out['c']} must be smaller than the domain radius {size}")
        return out
    raise ValidationError("f: must be a number, 'beta_one' or a profile object")


def _validate_list(data, key, default, decreasing=False, integer=False) -> tuple:
    if key not in data:
        return tuple(default)
    vals = data[key]
    if not isinstance(vals, list) or not vals:
        raise ValidationError(f"{key}: must be a nonempty list")
    for v in vals:
        if not _is_number(v) or not v > 0 or (integer and not isinstance(v, int)):
            kind = "positive integers" if integer else "positive numbers"
            raise ValidationError(f"{key}: entries must be {kind}")
    pairs = list(zip(vals, vals[1:]))
    if decreasing and any(b >= a for a, b in pairs):
        raise ValidationError(f"{key}: must be strictly decreasing")
    if not decreasing and any(b <= a for a, b in pairs):
        raise ValidationError(f"{key}: must be strictly increasing")
    return tuple(int(v) if integer else float(v) for v in vals)


def validate_config(data: dict) -> ExperimentConfig:
    """Validate a decoded config object and fill defaults.

    Raises
    ------
    ValidationError
        Naming the offending field.
    """
    _only_keys(data, _FIELDS, "")
    name = data.get("name")
    if not isinstance(name, str) or not name.strip():
        raise ValidationError("name: required nonempty string")
    if any(c in name for c in "/\\") or name in (".", ".."):
        raise ValidationError("name: must not contain path separators")
    try:
        kind = ExperimentKind(data.get("kind"))
    except ValueError:
        raise ValidationError(f"kind: must be one of {[k.value for k in ExperimentKind]}") from None
    domain = _validate_domain(data.get("domain"))
    kinetic = _validate_kinetic(data.get("kinetic"))
    f = _validate_source(data.get("f", 0.0), domain)
    theta = data.get("theta", {"type": "dilation"})
    if not isinstance(theta, dict):
        raise ValidationError("theta: must be an object")
    try:
        field_from_config(theta, 1 if domain["type"] == "slab" else 2)
    except (ValueError, TypeError, DeadcoreError) as exc:
        raise ValidationError(f"theta: {exc}") from None
    tol = _number(data, "tol", "", default=DEFAULT_TOL)
    h = domain["h"]
    if data.get("eps_dc") is None:
        eps_dc = default_threshold(h, tol, kinetic_from_config(kinetic))
    else:
        eps_dc = _number(data, "eps_dc", "")
    band = _number(data, "band", "", default=0.5 if domain["type"] == "disk" else 1.0)
    recovery = data.get("recovery", "flux")
    if recovery not in ("flux", "average"):
        raise ValidationError("recovery: must be 'flux' or 'average'")
    output = data.get("output")
    if output is not None and not isinstance(output, str):
        raise ValidationError("output: must be a string")
    jobs = data.get("jobs", 1)
    if not (isinstance(jobs, int) and not isinstance(jobs, bool) and jobs >= 1):
        raise ValidationError("jobs: must be a positive integer")
    return ExperimentConfig(
        name=name, kind=kind, domain=domain, kinetic=kinetic, f=f, theta=dict(theta), tol=tol,
        eps_dc=float(eps_dc),
        tau_list=_validate_list(data, "tau_list", DEFAULT_TAU_LIST, decreasing=True),
        m_list=_validate_list(data, "m_list", DEFAULT_M_LIST),
        n_list=_validate_list(data, "n_list", DEFAULT_N_LIST, integer=True),
        band=band,
        slack_factor=_number(data, "slack_factor", "", default=5.0),
        interior_distance=_number(data, "interior_distance", "", default=0.2),
        floor_delta=_number(data, "floor_delta", "", default=1e-6),
        min_slope=_number(data, "min_slope", "", default=0.9, positive=False),
        recovery=recovery,
        output=output if output is not None else str(Path("out") / name),
        jobs=jobs,
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON config.

    Raises
    ------
    ParseError
        Malformed JSON or a duplicate field, with line and column.
    ValidationError
        A well-formed config with an invalid field.
    """
    return validate_config(_load_json(text))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 ({exc.reason})") from None
    try:
        return parse_config(text)
    except (ParseError, ValidationError) as exc:
        raise type(exc)(f"{path}: {exc}") from None


# ---------------------------------------------------------------- running


class _Run:
    """Mutable state of one experiment: built objects, assertions and outputs."""

    def __init__(self, config: ExperimentConfig, outdir: Path):
        self.config = config
        self.outdir = outdir
        self.assertions = []
        self.tables = []
        self.fields = []
        self.timings = {}
        self.results = {}
        with self.timed("setup"):
            self.mesh = domain_from_config(config.domain)
            self.kin = kinetic_from_config(config.kinetic)
            self.theta = field_from_config(config.theta, self.mesh.dim)
            self.f = self._source()
        self.h = self.mesh.h_max

    def _source(self):
        f = self.config.f
        if f == "beta_one":
            return self.kin.beta_one
        if isinstance(f, dict):
            size = self.config.domain.get("L", self.config.domain.get("R"))
            profile = PowerCrossing(size, f["c"], f["level"], f["bc"], f["exponent"])
            return manufactured_source(self.kin, profile)
        return float(f)

    @property
    def zero_source(self) -> bool:
        return not callable(self.f) and self.f == 0.0

    def plain(self, kind: str) -> bool:
        """Kinetic of the given type without mollification or truncation."""
        entry = self.config.kinetic
        return entry["type"] == kind and "mollify_n" not in entry and "truncate_m" not in entry

    @contextmanager
    def timed(self, label: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[label] = self.timings.get(label, 0.0) + time.perf_counter() - t0

    def check(self, name: str, passed: bool, value=None, bound=None, detail: str = ""):
        rec = {"name": name, "passed": bool(passed), "value": value, "bound": bound}
        if detail:
            rec["detail"] = detail
        self.assertions.append(rec)
        log.info("%s %s: %s (value %s, bound %s)", self.config.name, name,
                 "PASS" if passed else "FAIL", value, bound)

    def table(self, filename: str, header, rows):
        write_csv(self.outdir / filename, header, rows)
        self.tables.append(filename)

    def columns(self, filename: str, columns: dict):
        write_columns_csv(self.outdir / filename, columns)
        self.tables.append(filename)

    def report_table(self, filename: str, report):
        header, rows = report.rows()
        self.table(filename, header, rows)
        self.results["report"] = report.to_dict()
        for flag, ok in report.flags.items():
            self.check(flag, ok)

    def save_fields(self, stem: str, fields):
        write_field_csv(self.outdir / f"{stem}.csv", fields)
        write_vtk(self.outdir / f"{stem}.vtk", fields[0].mesh,
                  {f.name: f for f in fields}, title=f"{self.config.name} {stem}")
        self.tables.append(f"{stem}.csv")
        self.fields.append(f"{stem}.vtk")

    def solve(self):
        with self.timed("solve"):
            w, report = solve_semilinear(self.mesh, self.kin, self.f, tol=self.config.tol)
        self.results["solver"] = report.to_dict()
        return w


def _slab_root_oracle(run: _Run):
    """Exact slab profile when the benchmark hypotheses hold, else ``None``."""
    cfg = run.config
    if cfg.domain["type"] != "slab" or not run.plain("root") or not run.zero_source:
        return None
    lam, q, L = cfg.kinetic["lambda"], cfg.kinetic["q"], cfg.domain["L"]
    if L < root_threshold(lam, q):
        return None
    exact = slab_exact_root(lam, q, L)
    return exact if exact.rho > 0.0 else None


def _slab_linear_v(run: _Run, w):
    """Exact ``v`` for ``beta(s) = k^2 s`` on a slab with ``f = 0``."""
    L = run.config.domain["L"]
    k = math.sqrt(run.config.kinetic["rate"])
    g = k * math.tanh(k * L)  # w'(L) = -w'(-L)
    th = np.asarray(run.theta.value(np.array([[L], [-L]])), dtype=float).reshape(2)
    a, b = -g * th[0], g * th[1]
    x = run.mesh.nodes[:, 0]
    return (0.5 * (a + b) * np.cosh(k * x) / math.cosh(k * L)
            + 0.5 * (a - b) * np.sinh(k * x) / math.sinh(k * L))


def _export_region(run: _Run, region):
    """Region summary in the results, node ids as CSV, and a nodal mask field."""
    run.results["dead_core"] = {"nodes": int(region.nodes.size), "measure": region.measure,
                                "edge_radius": region.edge_radius(), "threshold": region.threshold}
    run.table("dead_core_nodes.csv", ["node_id"], ([int(i)] for i in region.nodes))
    return ScalarField(run.mesh, region.mask.astype(float), FieldKind.DERIVED, "dead_core")


def _run_solve(run: _Run):
    cfg = run.config
    w = run.solve()
    fields = [w]
    region = None
    if run.kin.smoothness is Smoothness.SINGULAR_AT_ZERO:
        region = detect(w, cfg.eps_dc, cfg.tol, run.kin)
        fields.append(_export_region(run, region))
    x = run.mesh.nodes[:, 0]
    if not callable(run.f) and run.f == run.kin.beta_one:
        dev = float(np.max(np.abs(w.values - 1.0)))
        run.results["max_deviation_from_one"] = dev
        run.check("constant_state", dev <= 10.0 * cfg.tol, dev, 10.0 * cfg.tol)
    h2 = run.h ** 2
    exact = _slab_root_oracle(run)
    if exact is not None:
        ref = exact(x)
        err = float(np.max(np.abs(w.values - ref)))
        run.check("max_error_vs_exact", err <= 25.0 * h2, err, 25.0 * h2)
        edge = abs(region.edge_radius() - exact.rho)
        run.check("dead_core_edge", edge <= 2.0 * run.h, edge, 2.0 * run.h)
        meas = abs(region.measure - 2.0 * exact.rho)
        run.check("dead_core_measure", meas <= 4.0 * run.h, meas, 4.0 * run.h)
        run.results["exact_rho"] = exact.rho
        run.columns("oracle.csv", {"node_id": np.arange(run.mesh.n_nodes), "x": x, "w": w.values,
                                   "exact": ref, "error": w.values - ref})
    if cfg.domain["type"] == "slab" and run.plain("linear") and run.zero_source:
        k = math.sqrt(cfg.kinetic["rate"])
        ref = np.cosh(k * x) / math.cosh(k * cfg.domain["L"])
        err = float(np.max(np.abs(w.values - ref)))
        run.check("max_error_vs_exact", err <= 25.0 * h2, err, 25.0 * h2)
        run.columns("oracle.csv", {"node_id": np.arange(run.mesh.n_nodes), "x": x, "w": w.values,
                                   "exact": ref, "error": w.values - ref})
    run.save_fields("solution", fields)


def _run_gateaux(run: _Run):
    cfg = run.config
    with run.timed("sequence"):
        report = gateaux_check(run.mesh, run.kin, run.f, run.theta, cfg.tau_list, tol=cfg.tol,
                               interior_distance=cfg.interior_distance,
                               floor_delta=cfg.floor_delta, jobs=cfg.jobs)
    run.report_table("gateaux.csv", report)
    if run.kin.smoothness is Smoothness.TWICE_SMOOTH:
        slope = report.slope
        run.check("slope", slope is not None and slope >= cfg.min_slope, slope, cfg.min_slope)
    if cfg.domain["type"] == "slab" and run.plain("linear") and run.zero_source:
        w = run.solve()
        v = solve_v(run.mesh, w, run.kin, run.theta, frozen=(), tol=cfg.tol, f=run.f,
                    recovery=cfg.recovery).v
        ref = _slab_linear_v(run, w)
        err = float(np.max(np.abs(v.values - ref)))
        bound = 25.0 * run.h ** 2
        run.check("v_max_error_vs_exact", err <= bound, err, bound)
        run.save_fields("derivative", [w, v])


def _run_perturbation(run: _Run):
    cfg = run.config
    with run.timed("sequence"):
        report = kinetic_perturbation_study(run.mesh, run.kin, run.f, run.theta, cfg.n_list,
                                            tol=cfg.tol, jobs=cfg.jobs)
    run.report_table("perturbation.csv", report)


def _run_truncated(run: _Run):
    cfg = run.config
    with run.timed("sequence"):
        report, members, limit, region = truncated_shape_sequence(
            run.mesh, run.kin, run.f, run.theta, cfg.m_list, tol=cfg.tol, eps_dc=cfg.eps_dc,
            jobs=cfg.jobs)
    run.report_table("sequence.csv", report)
    mask = _export_region(run, region)
    w_last, v_last = members[-1]
    exact = _slab_root_oracle(run)
    if exact is not None:
        L = cfg.domain["L"]
        th = np.asarray(run.theta.value(np.array([[L], [-L]])), dtype=float).reshape(2)
        slope_L = exact.derivative_at_L
        v_exact = slab_exact_v_root(cfg.kinetic["lambda"], cfg.kinetic["q"], L,
                                    -slope_L * th[0], slope_L * th[1])
        err = float(np.max(np.abs(limit.v.values - v_exact(run.mesh.nodes[:, 0]))))
        bound = 25.0 * run.h ** 2
        run.check("v_limit_max_error_vs_exact", err <= bound, err, bound)
    run.save_fields("sequence_fields", [limit.v.renamed("v_limit"), w_last.renamed("w_last"),
                                        v_last.renamed("v_last"), mask])


def _run_audit(run: _Run):
    cfg = run.config
    if not run.zero_source:
        raise HypothesisViolated("dead-core proximity bound requires f = 0")
    w = run.solve()
    region = detect(w, cfg.eps_dc, cfg.tol, run.kin)
    with run.timed("audit"):
        alpha = compute_alpha(w, kin=run.kin, f=run.f, recovery=cfg.recovery)
        violation, table = psi_bound_check(w, region, run.kin, alpha, cfg.band, run.f)
    run.results["alpha"] = alpha
    run.results["boundary_regularity_of_core"] = "unverified"
    mask = _export_region(run, region)
    bound = cfg.slack_factor * run.h
    run.check("proximity_bound", violation <= bound, violation, bound)
    run.columns("proximity.csv", table)
    exact = _slab_root_oracle(run)
    if exact is not None:
        d = np.linspace(0.0, cfg.domain["L"] - exact.rho, 201)
        gf = growth_functions(run.kin, 0.0)
        gap = float(np.max(np.abs(np.asarray(gf.PsiInverse(d)) - exact(exact.rho + d))))
        run.check("psi_inverse_identity", gap <= 1e-10, gap, 1e-10)
    if run.kin.smoothness is Smoothness.SINGULAR_AT_ZERO:
        bands = (cfg.band, 0.5 * cfg.band)
        run.results["blowup_edge_offset"] = edge_offset(region, run.kin)
        try:
            with run.timed("blowup_fit"):
                fits = [blowup_rate_fit(w, region, run.kin, band=b) for b in bands]
        except InsufficientSamples as exc:
            run.results["blowup"] = {"skipped": str(exc)}
            fits = None
        if fits is not None:
            run.table("blowup.csv", ["band", "exponent", "constant", "r2", "n_samples"],
                      [[b, ft.exponent, ft.constant, ft.r2, ft.n_samples] for b, ft in zip(bands, fits)])
        # only the slab profile is an exact power of d; core curvature bends the 2D fit
        if fits is not None and run.mesh.dim == 1:
            _check_blowup(run, fits, exact)
    if cfg.domain["type"] == "disk" and run.plain("root"):
        _radial_reference(run, region)
    run.save_fields("audit", [w, region.distance.renamed("distance"), mask])


def _radial_reference(run: _Run, region):
    """Fine radial profile on the same disk, reported alongside the mesh result."""
    cfg = run.config
    R = cfg.domain["R"]
    # at least ten times the mesh resolution
    n_cells = max(4000, int(math.ceil(10.0 * R / run.h)))
    with run.timed("radial_oracle"):
        prof = radial_solve(R, run.kin, dim_n=2, tol=max(cfg.tol, RADIAL_TOL), n_cells=n_cells)
    run.columns("radial_oracle.csv", {"r": prof.radii, "w": prof.values})
    info = {"dead_core_radius": prof.dead_core_radius, "derivative_at_R": prof.derivative_at_R,
            "mesh_edge_radius": region.edge_radius()}
    if prof.dead_core_radius is not None:
        lo, hi = blowup_constants(prof, run.kin, cfg.band, skip=3.0 * run.h)
        info["blowup_constant_range"] = [lo, hi]
    run.results["radial_oracle"] = info


def _check_blowup(run: _Run, fits, exact):
    cfg = run.config
    fit = fits[0]
    run.check("blowup_exponent", abs(fit.exponent + 2.0) <= 0.15, fit.exponent, [-2.15, -1.85])
    run.check("blowup_r2", fit.r2 >= 0.98, fit.r2, 0.98)
    drift = abs(fits[1].exponent - fit.exponent)
    run.check("blowup_band_drift", drift <= 0.05, drift, 0.05)
    if exact is not None:
        lam, q = cfg.kinetic["lambda"], cfg.kinetic["q"]
        target = lam * q * exact.A ** (q - 1.0)
        rel = abs(fit.constant / target - 1.0)
        run.check("blowup_constant", rel <= 0.2, fit.constant, [0.8 * target, 1.2 * target])


_RUNNERS = {
    ExperimentKind.SOLVE: _run_solve,
    ExperimentKind.GATEAUX_CHECK: _run_gateaux,
    ExperimentKind.KINETIC_PERTURBATION: _run_perturbation,
    ExperimentKind.TRUNCATED_SEQUENCE: _run_truncated,
    ExperimentKind.DEAD_CORE_AUDIT: _run_audit,
}


def run(config: ExperimentConfig, output=None) -> int:
    """Execute ``config`` and write its outputs.

    Parameters
    ----------
    output : path, optional
        Overrides ``config.output``.

    Returns
    -------
    int
        0 if every assertion passes, 2 if one fails, 1 on error.
    """
    outdir = Path(output if output is not None else config.output)
    summary = {"name": config.name, "kind": config.kind.value, "inputs": config.to_dict()}
    t0 = time.perf_counter()
    state = None
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("%s: cannot create output directory %s: %s", config.name, outdir, exc)
        return 1
    try:
        state = _Run(config, outdir)
        _RUNNERS[config.kind](state)
    except (DeadcoreError, ValueError, ArithmeticError) as exc:
        code, status = 1, "error"
        summary["reason"] = str(exc)
        summary["error_type"] = type(exc).__name__
        log.error("%s: %s: %s", config.name, type(exc).__name__, exc)
    else:
        ok = all(a["passed"] for a in state.assertions)
        code, status = (0, "pass") if ok else (2, "fail")
        if not ok:
            failed = [a["name"] for a in state.assertions if not a["passed"]]
            summary["reason"] = "assertions failed: " + ", ".join(failed)
    if state is not None:
        summary["mesh"] = state.mesh.summary()
        summary["kinetic"] = state.kin.describe()
        summary["assertions"] = state.assertions
        summary["results"] = state.results
        summary["tables"] = state.tables
        summary["fields"] = state.fields
        summary["timings"] = dict(state.timings)
    else:
        summary["assertions"] = []
        summary["timings"] = {}
    summary["timings"]["total"] = time.perf_counter() - t0
    summary["status"] = status
    summary["exit_code"] = code
    write_json(outdir / "summary.json", summary)
    return code


def with_output(config: ExperimentConfig, output) -> ExperimentConfig:
    return replace(config, output=str(output))


def with_jobs(config: ExperimentConfig, jobs: int) -> ExperimentConfig:
    return replace(config, jobs=int(jobs))
