"""INI run configuration with strict key checking.

Precedence, lowest first: built-in defaults, the config file, command-line
overrides.  Unknown sections or keys are errors reported with the line
number where they appear.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .benchmarks import Scheme
from .channel import SystemParams
from .metrics import Metric

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_angle", "parse_complex",
           "DEFAULT_TEXT"]


class ConfigError(ValueError):
    pass


def parse_angle(text: str) -> float:
    """Radians; a trailing ``pi`` multiplies, so ``-0.2803pi`` is accepted."""
    t = text.strip().replace(" ", "").lower()
    m = re.fullmatch(r"([-+]?[0-9.eE+-]*)\*?pi", t)
    if m:
        coef = m.group(1)
        c = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
        return c * math.pi
    return float(t)


def parse_complex(text: str) -> complex:
    return complex(text.strip().replace(" ", "").replace("i", "j"))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> Optional[float]:
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else float(t)


def _scenarios(text: str) -> List[Metric]:
    return [Metric.parse(s) for s in re.split(r"[,\s]+", text.strip()) if s]


# section -> key -> parser
SCHEMA = {
    "system": {
        "m_tx": int, "n_rx_sense": int, "n_rx_comm": int, "cpi_len": int,
        "power": float, "noise_comm": float, "noise_sense": float,
        "reflect_coeff": parse_complex, "target_angle": parse_angle,
        "rician_k": float, "seed": int, "theta_rx": parse_angle, "theta_tx": parse_angle,
    },
    "scenario": {
        "scenarios": _scenarios, "gamma_point": float, "gamma_trace": float,
        "gamma_maxeig": float, "ln_gamma_logdet": float, "eps": float,
    },
    "sweep": {"n_points": int, "spacing": str, "gamma_lo": _opt_float, "gamma_hi": _opt_float},
    "benchmarks": {"time_switch": _bool, "split_ep": _bool, "split_sem": _bool,
                   "knob_points": int},
    "snr": {"snr_lo": float, "snr_hi": float, "n_points": int},
    "oracle": {"instances": int, "tolerance": float, "perturb": float, "steps": int},
    "output": {"out_dir": str, "plot": _bool},
}

DEFAULT_TEXT = """\
[system]
m_tx = 8
n_rx_sense = 12
n_rx_comm = 6
cpi_len = 200
power = 800
noise_comm = 1
noise_sense = 1
reflect_coeff = 1e-3
target_angle = -0.2803pi
rician_k = 100
seed = 0
theta_rx = 0.16666666666666666pi
theta_tx = 0.16666666666666666pi

[scenario]
scenarios = point, trace, maxeig, logdet
gamma_point = 0.01
gamma_trace = 0.0152
gamma_maxeig = 8e-4
ln_gamma_logdet = -900
eps = 1e-6

[sweep]
n_points = 50
spacing = log
gamma_lo = auto
gamma_hi = auto

[benchmarks]
time_switch = true
split_ep = true
split_sem = true
knob_points = 101

[snr]
snr_lo = 0
snr_hi = 40
n_points = 41

[oracle]
instances = 20
tolerance = 1e-3
perturb = 0
steps = 40

[output]
out_dir = out
plot = true
"""


@dataclass
class RunConfig:
    params: SystemParams
    theta_rx: float
    theta_tx: float
    scenarios: List[Metric]
    gammas: Dict[Metric, float]
    eps: float
    n_points: int
    spacing: str
    gamma_lo: Optional[float]
    gamma_hi: Optional[float]
    schemes: List[Scheme]
    knob_points: int
    snr_lo: float
    snr_hi: float
    snr_points: int
    oracle_instances: int
    oracle_tolerance: float
    oracle_perturb: float
    oracle_steps: int
    out_dir: Path
    plot: bool
    resolved: Dict[str, Dict[str, str]] = field(default_factory=dict)

    def config_hash(self) -> str:
        lines = [f"{s}.{k}={v}" for s in sorted(self.resolved)
                 for k, v in sorted(self.resolved[s].items())]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """Map (section, key) and (section, '') to 1-based line numbers."""
    idx: Dict[Tuple[str, str], int] = {}
    section = ""
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            idx.setdefault((section, ""), n)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m:
            idx.setdefault((section, m.group(1).strip().lower()), n)
    return idx


def _read(text: str, origin: str, store: Dict[str, Dict[str, str]],
          lines: Dict[Tuple[str, str], str]):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    where = _line_index(text)
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{origin}:{where.get((sec, ''), '?')}: unknown section [{sec}]")
        for key, val in cp.items(sec):
            loc = f"{origin}:{where.get((sec, key), '?')}"
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{loc}: unknown key '{key}' in section [{sec}]")
            store.setdefault(sec, {})[key] = val
            lines[(sec, key)] = loc


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None
                ) -> RunConfig:
    """Build a :class:`RunConfig`; ``overrides`` maps ``section.key`` to text."""
    store: Dict[str, Dict[str, str]] = {}
    lines: Dict[Tuple[str, str], str] = {}
    _read(DEFAULT_TEXT, "<defaults>", store, lines)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        _read(text, str(path), store, lines)
    for dotted, val in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        store[sec][key] = str(val)
        lines[(sec, key)] = f"<command line --{key.replace('_', '-')}>"
    vals: Dict[str, Dict[str, object]] = {}
    for sec, keys in store.items():
        for key, text in keys.items():
            try:
                vals.setdefault(sec, {})[key] = SCHEMA[sec][key](text)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{lines[(sec, key)]}: bad value for {key}: {exc}") from None
    s = vals["system"]
    try:
        params = SystemParams(**{k: s[k] for k in (
            "m_tx", "n_rx_sense", "n_rx_comm", "cpi_len", "power", "noise_comm",
            "noise_sense", "reflect_coeff", "target_angle", "rician_k", "seed")})
    except ValueError as exc:
        raise ConfigError(f"[system]: {exc}") from None
    sc, sw, bm, sn, orc, out = (vals[k] for k in
                                ("scenario", "sweep", "benchmarks", "snr", "oracle", "output"))
    if sw["spacing"] not in ("log", "linear"):
        raise ConfigError(f"{lines[('sweep', 'spacing')]}: spacing must be log or linear")
    for sec, key in (("sweep", "n_points"), ("snr", "n_points"), ("benchmarks", "knob_points")):
        if vals[sec][key] < 2:
            raise ConfigError(f"{lines[(sec, key)]}: {key} must be at least 2")
    if not sc["scenarios"]:
        raise ConfigError(f"{lines[('scenario', 'scenarios')]}: no scenario selected")
    schemes = [Scheme.TIME_SWITCH] * bm["time_switch"] + [Scheme.SPLIT_EP] * bm["split_ep"] \
        + [Scheme.SPLIT_SEM] * bm["split_sem"]
    return RunConfig(
        params=params, theta_rx=s["theta_rx"], theta_tx=s["theta_tx"],
        scenarios=list(dict.fromkeys(sc["scenarios"])),
        gammas={Metric.POINT_ANGLE: sc["gamma_point"], Metric.TRACE: sc["gamma_trace"],
                Metric.MAX_EIG: sc["gamma_maxeig"], Metric.LOG_DET: sc["ln_gamma_logdet"]},
        eps=sc["eps"], n_points=sw["n_points"], spacing=sw["spacing"],
        gamma_lo=sw["gamma_lo"], gamma_hi=sw["gamma_hi"], schemes=schemes,
        knob_points=bm["knob_points"], snr_lo=sn["snr_lo"], snr_hi=sn["snr_hi"],
        snr_points=sn["n_points"], oracle_instances=orc["instances"],
        oracle_tolerance=orc["tolerance"], oracle_perturb=orc["perturb"],
        oracle_steps=orc["steps"], out_dir=Path(out["out_dir"]), plot=out["plot"],
        resolved={k: dict(v) for k, v in store.items() if k != "output"},
    )
