"""
Run configuration: flat ``key=value`` files read with python-dotenv, merged with
``--key=value`` command-line overrides (flags win) and validated into a ``RunConfig``.

An optional ``.env`` in the application folder may supply defaults for ``out``,
``jobs`` and ``cache_dir``.
"""

import math
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

from dotenv import dotenv_values

from core.utils import fmt_value, get_app_dir
from core.workers import default_jobs

APP_DIR = Path(get_app_dir())
ENV_PATH = APP_DIR / ".env"

EXPERIMENTS = (
    "minimize",
    "extremal",
    "scaling",
    "fn",
    "variance",
    "ergodic",
    "gap",
    "diagnostics",
)

# keys an application-level .env may set
APP_DEFAULT_KEYS = ("out", "jobs", "cache_dir")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _optional(parse):
    def parser(text: str):
        if text.strip().lower() in ("", "none", "auto"):
            return None
        return parse(text)

    return parser


def _list(parse):
    def parser(text: str):
        items = [t for t in text.replace(" ", "").split(",") if t]
        if not items:
            raise ValueError("expected a nonempty comma-separated list")
        return tuple(parse(t) for t in items)

    return parser


PARSERS = {
    "config": str,
    "experiment": str,
    "d": _int,
    "s": _float,
    "s_list": _list(_float),
    "theta": _float,
    "c0": _float,
    "delta0": _float,
    "bridge": str,
    "dist": str,
    "k": _optional(_float),
    "n": _list(_int),
    "m": _int,
    "pad": _optional(_int),
    "resamples": _int,
    "realizations": _int,
    "seed": _int,
    "site": _list(_int),
    "h_list": _list(_float),
    "exterior": _optional(_float),
    "init": str,
    "method": str,
    "tol": _float,
    "max_iter": _int,
    "multistart": _int,
    "summation": str,
    "bias_check": _bool,
    "k_gap": _bool,
    "bins": _list(_int),
    "samples": _int,
    "out": str,
    "jobs": _int,
    "overwrite": _bool,
    "quiet": _bool,
    "cache_dir": _optional(str),
}


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "minimize"
    d: int = 1
    s: float = 0.5
    s_list: Optional[Tuple[float, ...]] = None
    theta: float = 1.0
    c0: float = 1.0
    delta0: float = 0.5
    bridge: str = "quartic"
    dist: str = "uniform"
    k: Optional[float] = None
    n: Tuple[int, ...] = (64,)
    m: int = 1
    pad: Optional[int] = None
    resamples: int = 20
    realizations: int = 30
    seed: int = 0
    site: Optional[Tuple[int, ...]] = None
    h_list: Tuple[float, ...] = (1e-2, 1e-3)
    exterior: Optional[float] = None
    init: str = "plus"
    method: str = "pgd"
    tol: float = 1e-8
    max_iter: int = 20000
    multistart: int = 1
    summation: str = "auto"
    bias_check: bool = False
    k_gap: bool = False
    bins: Tuple[int, ...] = (4, 8, 16)
    samples: int = 20
    out: str = "results"
    jobs: int = 0
    overwrite: bool = False
    quiet: bool = False
    cache_dir: Optional[str] = None

    @property
    def stem(self) -> str:
        """``{experiment}_{d}d_s{s}_theta{θ}_n{n}`` with n-lists joined by '-'."""
        n = "-".join(str(v) for v in self.n)
        return f"{self.experiment}_{self.d}d_s{self.s:g}_theta{self.theta:g}_n{n}"

    @property
    def workers(self) -> int:
        return self.jobs if self.jobs > 0 else default_jobs()

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def validate(cfg: RunConfig) -> RunConfig:
    """Range checks; raises ConfigError naming the first offending key."""
    checks = [
        ("experiment", cfg.experiment in EXPERIMENTS, f"must be one of {', '.join(EXPERIMENTS)}"),
        ("d", cfg.d in (1, 2), "must be 1 or 2"),
        ("s", 0.0 < cfg.s < 1.0, "must lie in (0, 1)"),
        ("s_list", cfg.s_list is None or all(0.0 < s < 1.0 for s in cfg.s_list),
         "entries must lie in (0, 1)"),
        ("theta", cfg.theta >= 0.0, "must be >= 0"),
        ("c0", cfg.c0 > 0.0, "must be > 0"),
        ("delta0", 0.0 < cfg.delta0 < 1.0, "must lie in (0, 1)"),
        ("bridge", cfg.bridge in ("quartic", "cosine"), "must be quartic or cosine"),
        ("dist", cfg.dist in ("uniform", "triangular"), "must be uniform or triangular"),
        ("k", cfg.k is None or cfg.k > 0, "must be > 0"),
        ("n", all(v >= 2 and v % 2 == 0 for v in cfg.n), "entries must be even and >= 2"),
        ("m", cfg.m >= 1, "must be >= 1"),
        ("pad", cfg.pad is None or cfg.pad >= 0, "must be >= 0"),
        ("resamples", cfg.resamples >= 2, "must be >= 2"),
        ("realizations", cfg.realizations >= 1, "must be >= 1"),
        ("site", cfg.site is None or len(cfg.site) == cfg.d, "needs one entry per dimension"),
        ("h_list", all(h > 0 for h in cfg.h_list), "entries must be > 0"),
        ("init", cfg.init in ("plus", "minus", "random"), "must be plus, minus or random"),
        ("method", cfg.method in ("pgd", "lbfgs"), "must be pgd or lbfgs"),
        ("tol", cfg.tol > 0, "must be > 0"),
        ("max_iter", cfg.max_iter >= 1, "must be >= 1"),
        ("multistart", cfg.multistart >= 1, "must be >= 1"),
        ("summation", cfg.summation in ("auto", "dense", "fft"), "must be auto, dense or fft"),
        ("bins", all(b >= 2 for b in cfg.bins), "entries must be >= 2"),
        ("samples", cfg.samples >= 1, "must be >= 1"),
        ("jobs", cfg.jobs >= 0, "must be >= 0 (0 = all cores)"),
        ("out", bool(cfg.out), "must name a directory"),
    ]
    for key, ok, message in checks:
        if not ok:
            raise ConfigError(key, message)
    if cfg.experiment in ("variance", "ergodic") and cfg.realizations < 30:
        raise ConfigError("realizations", f"{cfg.experiment} needs at least 30")
    if cfg.experiment == "scaling" and len(cfg.n) < 3:
        raise ConfigError("n", "scaling needs at least 3 sizes")
    return cfg


def _normalize(raw: Dict[str, Optional[str]], source: str) -> Dict[str, str]:
    out = {}
    for key, value in raw.items():
        name = key.strip().lower().lstrip("-").replace("-", "_")
        if name not in PARSERS:
            raise ConfigError(name, f"unknown key (from {source})")
        out[name] = "" if value is None else str(value)
    return out


def parse_flags(args: Iterable[str]) -> Dict[str, str]:
    """``--key=value`` tokens to a dict; a bare ``--flag`` means true."""
    flags = {}
    for token in args:
        if not token.startswith("--"):
            raise ConfigError(token, "expected --key=value")
        key, sep, value = token[2:].partition("=")
        flags[key] = value if sep else "true"
    return flags


def app_defaults() -> Dict[str, str]:
    """Defaults for out/jobs/cache_dir from the application .env, when present."""
    if not ENV_PATH.exists():
        return {}
    values = _normalize(
        {k: v for k, v in dotenv_values(ENV_PATH).items()
         if k.strip().lower() in APP_DEFAULT_KEYS},
        str(ENV_PATH),
    )
    return values


def parse_config(path=None, flags=None, use_app_defaults: bool = True) -> RunConfig:
    """
    Build a validated RunConfig.

    Args:
        path: Flat key=value config file; None to use flags only.
        flags (dict | list): Overrides, either a dict or ``--key=value`` tokens.
        use_app_defaults: Read ``out``/``jobs``/``cache_dir`` from the application .env.

    Raises:
        ConfigError: Unknown key, unparsable value or out-of-range value.
        FileNotFoundError: ``path`` does not exist.
    """
    merged: Dict[str, str] = dict(app_defaults()) if use_app_defaults else {}
    if path is not None:
        if not Path(path).exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        merged.update(_normalize(dotenv_values(path), str(path)))
    if flags:
        if not isinstance(flags, dict):
            flags = parse_flags(flags)
        merged.update(_normalize(flags, "flags"))
    merged.pop("config", None)

    values = {}
    for key, text in merged.items():
        try:
            values[key] = PARSERS[key](text)
        except (TypeError, ValueError) as e:
            raise ConfigError(key, str(e)) from None
    known = {f.name for f in fields(RunConfig)}
    return validate(RunConfig(**{k: v for k, v in values.items() if k in known}))


def write_config(cfg: RunConfig, path):
    """Write ``cfg`` back as a flat key=value file."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, value in cfg.to_dict().items():
            if value is None:
                continue
            f.write(f"{key}={fmt_value(value)}\n")
    return path
