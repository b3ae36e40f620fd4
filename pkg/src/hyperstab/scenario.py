"""Flat-file scenario configuration and its resolution into runnable specs.

A scenario is a text file of ``key = value`` lines with dotted section keys,
for example::

    name = s3
    system.n = 3
    system.m = 2
    speed.1 = constant:-2
    speed.2 = constant:-1
    speed.3 = constant:1
    q.1.1 = 1
    q.1.2 = 1
    g.2.1 = constant:1
    g.3.1 = constant:1
    g.3.2 = constant:1
    dynamics = gamma_target
    feedback = fredholm
    grid.cells = 200
    scheme = integer_shift
    dt = 1*dx
    t_final = 3.0
    init.1 = bump

Blank lines and ``#`` comments are ignored.  Profile values take the forms
``constant:c``, ``affine:a,b``, ``poly:c0,c1[,c2,c3]`` or ``table:path``
(one sample per line, uniform nodes); speeds accept every form but
``poly``.  Initial data presets are ``constant:v``, ``bump[:amp]`` (a
sine-squared arch), ``random[:amp]`` (seeded, uniform node noise) or
``table:path``.  ``dt`` is a float or ``K*dx`` so sweeps can rescale it
with the grid.  Random presets draw from one generator seeded by
``init.seed``, consumed in ascending component order, which makes every
resolved scenario deterministic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import CascadeMatrix, TargetSource, build_z_source, gamma_source
from .system_model import Grid, HyperbolicSystem, Profile, StateVector, validate_system

__all__ = ["Scenario", "ScenarioError", "load_scenario", "DEFAULT_TOLERANCES"]

DEFAULT_TOLERANCES = {
    "vanish_rel": 1e-2,
    "vanish_slack_steps": 5.0,
    "upwind_vanish_slack_frac": 0.25,
    "kernel_gap": 0.05,
    "kernel_interior_coeff": 25.0,
    "commutation_rel": 0.05,
    "roundtrip": 1e-12,
    "inverse_identity": 1e-10,
}

_DYNAMICS = ("plant", "gamma_target", "z_target")
_SCHEMES = ("upwind", "integer_shift")
_FEEDBACKS = ("zero", "riesz", "fredholm")


class ScenarioError(Exception):
    """Parse or schema failure; ``violations`` lists every offending field."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass
class Scenario:
    """A fully parsed scenario, still parameterized over the grid size."""

    name: str
    n: int
    m: int
    speeds: dict[int, Profile]
    q: np.ndarray
    g_entries: dict[tuple[int, int], Profile]
    sigma_entries: dict[tuple[int, int], Profile]
    dynamics: str
    feedback_kind: str
    riesz_path: Path | None
    grid_cells: int
    scheme: str
    dt_spec: tuple[str, float] | None  # ("abs", v) or ("dx", k)
    t_final: float
    init_specs: dict[int, tuple]
    seed: int
    snapshot_stride: int
    tolerances: dict[str, float] = field(default_factory=dict)
    base_dir: Path = Path(".")

    def tol(self, key: str) -> float:
        return self.tolerances.get(key, DEFAULT_TOLERANCES[key])

    def grid(self, n_cells: int | None = None) -> Grid:
        return Grid(n_cells if n_cells is not None else self.grid_cells)

    def resolve_dt(self, grid: Grid) -> float | None:
        if self.dt_spec is None:
            return None
        kind, v = self.dt_spec
        return v * grid.dx if kind == "dx" else v

    def system(self) -> HyperbolicSystem:
        speeds = tuple(self.speeds[i] for i in range(1, self.n + 1))
        sigma = self.sigma_entries or None
        return HyperbolicSystem(self.n, self.m, speeds, self.q, sigma)

    def cascade(self) -> CascadeMatrix:
        return CascadeMatrix(self.n, self.m, dict(self.g_entries))

    def target_source(self) -> TargetSource | None:
        if self.dynamics == "gamma_target":
            return gamma_source(self.cascade())
        if self.dynamics == "z_target":
            return build_z_source(self.cascade())
        return None

    def initial_state(self, grid: Grid) -> StateVector:
        rng = np.random.default_rng(self.seed)
        x = grid.nodes
        data = np.zeros((self.n, grid.n_nodes))
        for i in range(1, self.n + 1):
            spec = self.init_specs.get(i, ("constant", 0.0))
            kind = spec[0]
            if kind == "constant":
                data[i - 1] = spec[1]
            elif kind == "bump":
                data[i - 1] = spec[1] * np.sin(np.pi * x) ** 2
            elif kind == "random":
                data[i - 1] = rng.uniform(-spec[1], spec[1], grid.n_nodes)
            elif kind == "table":
                samples = _read_samples(spec[1])
                t = np.linspace(0.0, 1.0, len(samples))
                data[i - 1] = np.interp(x, t, samples)
        return StateVector(grid, self.m, data)

    def load_riesz_tables(self, grid: Grid) -> np.ndarray:
        tables = np.zeros((self.m, self.n, grid.n_nodes))
        if self.riesz_path is None:
            return tables
        import csv as _csv

        with open(self.riesz_path, newline="") as fh:
            rd = _csv.reader(fh)
            header = next(rd)
            if header != ["i", "j", "y", "value"]:
                raise ScenarioError(
                    [f"feedback: riesz file {self.riesz_path} has header {header}, "
                     "expected i,j,y,value"]
                )
            for row in rd:
                i, j = int(row[0]), int(row[1])
                q = int(round(float(row[2]) * grid.n_cells))
                tables[i - 1, j - 1, q] = float(row[3])
        return tables


def _read_samples(path: Path) -> np.ndarray:
    vals = [float(line) for line in Path(path).read_text().split()]
    if len(vals) < 2:
        raise ScenarioError([f"table {path} needs at least two samples"])
    return np.asarray(vals)


def _parse_profile(value: str, base: Path, allow_poly: bool, where: str,
                   bad: list[str]) -> Profile | None:
    head, _, rest = value.partition(":")
    try:
        if head == "constant":
            return Profile.constant(float(rest))
        if head == "affine":
            a, b = (float(v) for v in rest.split(","))
            return Profile.affine(a, b)
        if head == "poly" and allow_poly:
            return Profile.poly(*(float(v) for v in rest.split(",")))
        if head == "table":
            return Profile.tabulated(_read_samples(base / rest))
    except (ValueError, OSError, ScenarioError) as exc:
        bad.append(f"{where}: cannot build {head!r} profile ({exc})")
        return None
    bad.append(f"{where}: unknown profile form {value!r}")
    return None


def _parse_init(value: str, base: Path, where: str, bad: list[str]):
    head, _, rest = value.partition(":")
    try:
        if head == "constant":
            return ("constant", float(rest))
        if head == "bump":
            return ("bump", float(rest) if rest else 1.0)
        if head == "random":
            return ("random", float(rest) if rest else 1.0)
        if head == "table":
            return ("table", base / rest)
    except ValueError as exc:
        bad.append(f"{where}: {exc}")
        return None
    bad.append(f"{where}: unknown initial-data form {value!r}")
    return None


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate one scenario file.

    Raises :class:`ScenarioError` carrying every parse problem (with line
    numbers) or schema violation (with field paths).
    """
    path = Path(path)
    base = path.parent
    bad: list[str] = []
    kv: dict[str, str] = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([f"{path}: {exc}"]) from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            bad.append(f"line {lineno}: expected 'key = value', got {raw!r}")
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in kv:
            bad.append(f"line {lineno}: duplicate key {key!r}")
        kv[key] = value
    if bad:
        raise ScenarioError(bad)

    def take_int(key, default=None, required=False):
        if key not in kv:
            if required:
                bad.append(f"{key}: required field missing")
            return default
        raw = kv.pop(key)
        try:
            return int(raw)
        except ValueError:
            bad.append(f"{key}: not an integer ({raw!r})")
            return default

    def take_float(key, default=None, required=False):
        if key not in kv:
            if required:
                bad.append(f"{key}: required field missing")
            return default
        raw = kv.pop(key)
        try:
            return float(raw)
        except ValueError:
            bad.append(f"{key}: not a number ({raw!r})")
            return default

    name = kv.pop("name", path.stem)
    n = take_int("system.n", required=True)
    m = take_int("system.m", required=True)
    if n is not None and n < 2:
        bad.append(f"system.n: need n >= 2, got {n}")
    if n is not None and m is not None and not 1 <= m <= n - 1:
        bad.append(f"system.m: need 1 <= m <= n-1 = {n - 1}, got {m}")

    speeds: dict[int, Profile] = {}
    g_entries: dict[tuple[int, int], Profile] = {}
    sigma_entries: dict[tuple[int, int], Profile] = {}
    q_entries: dict[tuple[int, int], float] = {}
    init_specs: dict[int, tuple] = {}

    for key in sorted(kv):
        value = kv[key]
        if m_ := re.fullmatch(r"speed\.(\d+)", key):
            prof = _parse_profile(value, base, allow_poly=False, where=key, bad=bad)
            if prof is not None:
                speeds[int(m_.group(1))] = prof
        elif m_ := re.fullmatch(r"g\.(\d+)\.(\d+)", key):
            prof = _parse_profile(value, base, allow_poly=True, where=key, bad=bad)
            if prof is not None:
                g_entries[(int(m_.group(1)), int(m_.group(2)))] = prof
        elif m_ := re.fullmatch(r"sigma\.(\d+)\.(\d+)", key):
            prof = _parse_profile(value, base, allow_poly=True, where=key, bad=bad)
            if prof is not None:
                sigma_entries[(int(m_.group(1)), int(m_.group(2)))] = prof
        elif m_ := re.fullmatch(r"q\.(\d+)\.(\d+)", key):
            try:
                q_entries[(int(m_.group(1)), int(m_.group(2)))] = float(value)
            except ValueError:
                bad.append(f"{key}: not a number ({value!r})")
        elif m_ := re.fullmatch(r"init\.(\d+)", key):
            spec = _parse_init(value, base, where=key, bad=bad)
            if spec is not None:
                init_specs[int(m_.group(1))] = spec
        else:
            continue
        kv.pop(key)

    dynamics = kv.pop("dynamics", None)
    if dynamics is None:
        bad.append("dynamics: required field missing")
    elif dynamics not in _DYNAMICS:
        bad.append(f"dynamics: expected one of {_DYNAMICS}, got {dynamics!r}")

    scheme = kv.pop("scheme", "upwind")
    if scheme not in _SCHEMES:
        bad.append(f"scheme: expected one of {_SCHEMES}, got {scheme!r}")

    feedback_value = kv.pop("feedback", "zero")
    riesz_path: Path | None = None
    if feedback_value.startswith("riesz:"):
        feedback_kind = "riesz"
        riesz_path = base / feedback_value.partition(":")[2]
        if not riesz_path.exists():
            bad.append(f"feedback: riesz table file {riesz_path} not found")
    else:
        feedback_kind = feedback_value
        if feedback_kind == "riesz":
            bad.append("feedback: riesz needs a file, use riesz:<csv path>")
        elif feedback_kind not in _FEEDBACKS:
            bad.append(f"feedback: expected one of {_FEEDBACKS}, got {feedback_value!r}")

    grid_cells = take_int("grid.cells", required=True)
    if grid_cells is not None and grid_cells < 8:
        bad.append(f"grid.cells: need at least 8 cells, got {grid_cells}")
    t_final = take_float("t_final", required=True)
    if t_final is not None and t_final <= 0:
        bad.append(f"t_final: must be positive, got {t_final}")

    dt_spec: tuple[str, float] | None = None
    if "dt" in kv:
        raw = kv.pop("dt")
        m_dx = re.fullmatch(r"([0-9.eE+-]+)\s*\*\s*dx", raw)
        try:
            if m_dx:
                dt_spec = ("dx", float(m_dx.group(1)))
            else:
                dt_spec = ("abs", float(raw))
            if dt_spec[1] <= 0:
                bad.append(f"dt: must be positive, got {raw!r}")
        except ValueError:
            bad.append(f"dt: expected a number or 'K*dx', got {raw!r}")
    elif scheme == "integer_shift":
        bad.append("dt: required when scheme = integer_shift")

    seed_given = "init.seed" in kv
    seed = take_int("init.seed", default=0)
    stride = take_int("snapshot.stride", default=10)
    if stride is not None and stride < 1:
        bad.append(f"snapshot.stride: must be >= 1, got {stride}")

    tolerances: dict[str, float] = {}
    for key in [k for k in kv if k.startswith("tol.")]:
        short = key[4:]
        if short not in DEFAULT_TOLERANCES:
            bad.append(f"{key}: unknown tolerance (choose from "
                       f"{sorted(DEFAULT_TOLERANCES)})")
            kv.pop(key)
            continue
        raw = kv.pop(key)
        try:
            tolerances[short] = float(raw)
        except ValueError:
            bad.append(f"{key}: not a number ({raw!r})")

    for key in kv:
        bad.append(f"{key}: unknown field")

    if n is not None and m is not None and not bad:
        for i in range(1, n + 1):
            if i not in speeds:
                bad.append(f"speed.{i}: required field missing")
        for (i, j) in q_entries:
            if not (1 <= i <= n - m and 1 <= j <= m):
                bad.append(f"q.{i}.{j}: outside the {(n - m)}x{m} coupling shape")
        for (i, j) in sorted(g_entries):
            if not (1 <= j <= m and 2 <= i <= n) or (i <= m and j >= i):
                bad.append(f"g.{i}.{j}: outside the strictly-lower cascade band")
        for (i, j) in sorted(sigma_entries):
            if not (1 <= i <= n and 1 <= j <= n):
                bad.append(f"sigma.{i}.{j}: outside the {n}x{n} matrix")
        if sigma_entries and dynamics in ("gamma_target", "z_target"):
            bad.append("sigma: target dynamics carry no interior coupling")
        for i in init_specs:
            if not 1 <= i <= n:
                bad.append(f"init.{i}: component outside 1..{n}")
        if any(spec[0] == "random" for spec in init_specs.values()) and not seed_given:
            bad.append("init.seed: required when any component uses a random preset")
        if dynamics == "z_target" and feedback_kind != "zero":
            bad.append("feedback: the z target system pins zero boundary feedback")

    if bad:
        raise ScenarioError(bad)

    q = np.zeros((n - m, m))
    for (i, j), v in q_entries.items():
        q[i - 1, j - 1] = v

    scn = Scenario(
        name=name,
        n=n,
        m=m,
        speeds=speeds,
        q=q,
        g_entries=g_entries,
        sigma_entries=sigma_entries,
        dynamics=dynamics,
        feedback_kind=feedback_kind,
        riesz_path=riesz_path,
        grid_cells=grid_cells,
        scheme=scheme,
        dt_spec=dt_spec,
        t_final=t_final,
        init_specs=init_specs,
        seed=seed,
        snapshot_stride=stride,
        tolerances=tolerances,
        base_dir=base,
    )

    # the assembled objects enforce the structural invariants; surface any
    # failure as schema violations rather than tracebacks
    try:
        system = scn.system()
        scn.cascade()
    except ValueError as exc:
        raise ScenarioError([str(exc)]) from exc
    report = validate_system(system, scn.grid())
    if not report.ok:
        raise ScenarioError(
            [f"speeds: {v.message} (node {v.node})" for v in report.violations[:8]]
        )
    return scn
