"""Experiment configuration: TOML parsing, defaults and line-precise validation."""

import copy
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .validation import ConfigurationError

FC_ALGORITHMS = ("coop", "indalloc", "independent")
FB_ALGORITHMS = ("coop", "indalloc", "independent", "uniform")

DEFAULTS = {
    "experiment": {
        "name": "experiment",
        "mode": "fc",
        "seed": 0,
        "runs": 50,
        "algorithms": list(FC_ALGORITHMS),
    },
    "instance": {
        "V": 5,
        "d": 4,
        "n": 6,
        "arm_set": "paper-grid",
        "task_regimes": ["ones", "block", "identity"],
        "n_blocks": 2,
        "block_coupling": 0.0,
        "arm_kernel": "linear",
        "bandwidth": 1.0,
        "noise_std": 1.0,
        "theta_start": 0.1,
        "delta_min": 0.02,
        "instance_seed": 0,
    },
    "sweep": {},
    "fc": {"delta": 0.005, "eps": 0.1, "max_samples": 100_000_000},
    "fb": {"xi_star": "auto", "eps": 0.1, "max_samples": 100_000_000},
    "solver": {"max_iter": 2000, "tol": 1e-6, "patience": 300, "step_scale": 0.1,
               "restarts": 0, "seed": 0},
    "diagnostics": {"enabled": True, "xi_star": "auto"},
}

# keys that may be absent from DEFAULTS but are still legal
OPTIONAL = {
    "instance": {"task_table"},
    "sweep": {"delta_min", "T"},
    "fc": {"B"},
    "fb": {"B"},
}


def _line_of(text, section, key=None):
    """1-based line of ``[section]`` or of ``key`` inside it (0 if not found)."""
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
    assign = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*=")
    for no, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section:
            m = assign.match(line)
            if m and m.group(1) == key:
                return no
    return 0


@dataclass
class ExperimentConfig:
    data: Dict
    source: str = "<memory>"
    text: str = ""

    def section(self, name):
        return self.data[name]

    @property
    def mode(self):
        return self.data["experiment"]["mode"]

    @property
    def grid_param(self):
        return "delta_min" if self.mode == "fc" else "T"

    def grid_values(self):
        return list(self.data["sweep"][self.grid_param])

    def seeds(self):
        base = int(self.data["experiment"]["seed"])
        return [base + k for k in range(int(self.data["experiment"]["runs"]))]

    def points(self):
        """(regime, grid value) pairs in a fixed order."""
        return [(r, v) for r in self.data["instance"]["task_regimes"]
                for v in self.grid_values()]


class _Checker:
    def __init__(self, text, source):
        self.text = text
        self.source = source

    def fail(self, section, key, message):
        line = _line_of(self.text, section, key) or _line_of(self.text, section)
        where = f"{self.source}:{line}" if line else self.source
        label = f"[{section}]" + (f" {key}" if key else "")
        raise ConfigurationError(f"{where}: {label}: {message}")

    def number(self, data, section, key, lo=None, hi=None, integer=False, open_lo=False,
               open_hi=False):
        v = data[section][key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(section, key, f"expected a number, got {v!r}")
        if integer and v != int(v):
            self.fail(section, key, f"expected an integer, got {v!r}")
        if lo is not None and (v < lo or (open_lo and v == lo)):
            self.fail(section, key, f"must be {'>' if open_lo else '>='} {lo}, got {v!r}")
        if hi is not None and (v > hi or (open_hi and v == hi)):
            self.fail(section, key, f"must be {'<' if open_hi else '<='} {hi}, got {v!r}")
        return int(v) if integer else float(v)

    def choice(self, data, section, key, options):
        v = data[section][key]
        if v not in options:
            self.fail(section, key, f"must be one of {list(options)}, got {v!r}")
        return v


def _expand_grid(chk, data, key, integer):
    spec = data["sweep"][key]
    if isinstance(spec, dict):
        extra = set(spec) - {"min", "max", "num"}
        if extra or not {"min", "max", "num"} <= set(spec):
            chk.fail("sweep", key, "range table needs exactly min, max and num")
        lo, hi, num = spec["min"], spec["max"], spec["num"]
        if not (isinstance(num, int) and num >= 1) or not (0 < lo <= hi):
            chk.fail("sweep", key, "range needs 0 < min <= max and integer num >= 1")
        values = np.geomspace(lo, hi, num)
        values = [int(round(x)) for x in values] if integer else [float(repr_round(x)) for x in values]
    elif isinstance(spec, list) and spec:
        values = spec
    else:
        chk.fail("sweep", key, "expected a nonempty list or a {min, max, num} table")
    for x in values:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or x <= 0:
            chk.fail("sweep", key, f"grid values must be positive numbers, got {x!r}")
        if integer and x != int(x):
            chk.fail("sweep", key, f"budget values must be integers, got {x!r}")
    return [int(x) for x in values] if integer else [float(x) for x in values]


def repr_round(x, digits=6):
    return float(f"{x:.{digits}g}")


def validate(data, text="", source="<memory>"):
    """Merge ``data`` over the defaults and check every entry.

    Raises :class:`ConfigurationError` whose message starts with
    ``source:line:``.
    """
    chk = _Checker(text, source)
    merged = copy.deepcopy(DEFAULTS)
    for sec, body in data.items():
        if sec not in DEFAULTS:
            chk.fail(sec, None, "unknown section")
        if not isinstance(body, dict):
            chk.fail(sec, None, "expected a table")
        allowed = set(DEFAULTS[sec]) | OPTIONAL.get(sec, set())
        for key, value in body.items():
            if key not in allowed:
                chk.fail(sec, key, "unknown key")
            merged[sec][key] = value
    if "mode" in data.get("experiment", {}) and "algorithms" not in data.get("experiment", {}):
        if merged["experiment"]["mode"] == "fb":
            merged["experiment"]["algorithms"] = list(FB_ALGORITHMS)

    exp = merged["experiment"]
    if not isinstance(exp["name"], str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", exp["name"]):
        chk.fail("experiment", "name", "must be a simple identifier")
    mode = chk.choice(merged, "experiment", "mode", ("fc", "fb"))
    chk.number(merged, "experiment", "seed", lo=0, integer=True)
    chk.number(merged, "experiment", "runs", lo=1, integer=True)
    algos = exp["algorithms"]
    allowed = FC_ALGORITHMS if mode == "fc" else FB_ALGORITHMS
    if not isinstance(algos, list) or not algos or any(a not in allowed for a in algos):
        chk.fail("experiment", "algorithms", f"must be a nonempty subset of {list(allowed)}")

    inst = merged["instance"]
    chk.number(merged, "instance", "V", lo=1, integer=True)
    chk.number(merged, "instance", "d", lo=2, integer=True)
    chk.number(merged, "instance", "n", lo=1, integer=True)
    chk.choice(merged, "instance", "arm_set", ("paper-grid", "random-sphere"))
    chk.choice(merged, "instance", "arm_kernel", ("linear", "rbf"))
    chk.number(merged, "instance", "bandwidth", lo=0, open_lo=True)
    chk.number(merged, "instance", "noise_std", lo=0)
    chk.number(merged, "instance", "theta_start", lo=0)
    chk.number(merged, "instance", "delta_min", lo=0, open_lo=True)
    chk.number(merged, "instance", "n_blocks", lo=1, hi=inst["V"], integer=True)
    chk.number(merged, "instance", "block_coupling", lo=0, hi=1, open_hi=True)
    chk.number(merged, "instance", "instance_seed", lo=0, integer=True)
    regimes = inst["task_regimes"]
    if not isinstance(regimes, list) or not regimes or any(
            r not in ("ones", "block", "identity", "table") for r in regimes):
        chk.fail("instance", "task_regimes",
                 "must be a nonempty list drawn from ones, block, identity, table")
    if "table" in regimes:
        from .protocol import check_task_table
        try:
            check_task_table(inst.get("task_table"), inst["V"])
        except ConfigurationError as exc:
            chk.fail("instance", "task_table", str(exc))
    if inst["n"] > inst["d"] and inst["d"] < 3 and inst["arm_set"] == "paper-grid":
        chk.fail("instance", "d", "paper-grid needs d >= 3 when n > d")

    key = "delta_min" if mode == "fc" else "T"
    if key not in merged["sweep"]:
        chk.fail("sweep", None, f"mode {mode!r} needs a '{key}' sweep")
    merged["sweep"] = {key: _expand_grid(chk, merged, key, integer=(key == "T"))}

    chk.number(merged, "fc", "delta", lo=0, hi=1, open_lo=True, open_hi=True)
    chk.number(merged, "fc", "eps", lo=0, open_lo=True)
    chk.number(merged, "fc", "max_samples", lo=1, integer=True)
    if "B" in merged["fc"]:
        chk.number(merged, "fc", "B", lo=0, open_lo=True)
    if merged["fb"]["xi_star"] != "auto":
        chk.number(merged, "fb", "xi_star", lo=0, open_lo=True)
    chk.number(merged, "fb", "eps", lo=0, open_lo=True)
    chk.number(merged, "fb", "max_samples", lo=1, integer=True)
    if "B" in merged["fb"]:
        chk.number(merged, "fb", "B", lo=0, open_lo=True)

    for k in ("max_iter", "patience"):
        chk.number(merged, "solver", k, lo=1, integer=True)
    chk.number(merged, "solver", "restarts", lo=0, integer=True)
    chk.number(merged, "solver", "seed", lo=0, integer=True)
    chk.number(merged, "solver", "tol", lo=0)
    chk.number(merged, "solver", "step_scale", lo=0, open_lo=True)

    if not isinstance(merged["diagnostics"]["enabled"], bool):
        chk.fail("diagnostics", "enabled", "expected true or false")
    if merged["diagnostics"]["xi_star"] != "auto":
        chk.number(merged, "diagnostics", "xi_star", lo=0, open_lo=True)
    return ExperimentConfig(merged, source, text)


def load_config(path, overrides: Optional[Dict] = None):
    """Read, merge and validate a TOML experiment file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = m.group(1) if m else "?"
        raise ConfigurationError(f"{path}:{line}: TOML syntax error: {exc}") from exc
    for sec, body in (overrides or {}).items():
        data.setdefault(sec, {}).update(body)
    return validate(data, text, str(path))


def dump_config(cfg):
    import tomli_w
    return tomli_w.dumps(cfg.data)


def bundled_config(name):
    """Path of a config file shipped with the package."""
    return Path(__file__).parent / "configs" / name
