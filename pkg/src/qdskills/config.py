"""Declarative run configuration: INI sections, typed defaults, env-var overrides."""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field
from importlib import resources

from . import envs
from .evaluation import MetaConfig
from .qd import QD_METHODS, AuroraConfig, QdConfig, Td3Config, default_batch_size
from .skills import SHAPING_MODES, SKILL_METHODS, SacConfig, ShapingConfig, SkillConfig, default_beta
from .variation import VariationConfig

SCHEMA_VERSION = 1
ENV_PREFIX = "QDSKILLS_"
METHODS = QD_METHODS + SKILL_METHODS
AUTO = "auto"
DESCRIPTOR_SPACES = {"final-xy": ("point-maze", "point-trap", "point-omni", "point-hurdle"),
                     "foot-contact": ("point-gait",)}


class ConfigError(ValueError):
    """Validation failure; ``errors`` lists one message per offending key."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _fields_of(instance, skip=()) -> dict:
    return {f.name: getattr(instance, f.name) for f in dataclasses.fields(instance) if f.name not in skip}


RUN_DEFAULTS = dict(schema_version=SCHEMA_VERSION, method="map-elites", env="point-maze", seed=0,
                    iterations=500, env_steps=0, wall_seconds=0.0, checkpoint_every=50,
                    metrics_every=1, workers=1, out="runs/default")

# Every key a run can consume, grouped by section, with its default.
SCHEMA: dict[str, dict] = {
    "run": RUN_DEFAULTS,
    "env": {},   # filled from the chosen layout; any EnvSpec field may be overridden
    "qd": dict(_fields_of(QdConfig(), skip=("method", "variation", "td3", "aurora")), descriptor_space=""),
    "variation": dict(_fields_of(VariationConfig()), batch_size=AUTO),
    "td3": _fields_of(Td3Config()),
    "aurora": _fields_of(AuroraConfig()),
    "skills": _fields_of(SkillConfig(), skip=("method", "sac", "shaping")),
    "sac": _fields_of(SacConfig()),
    "shaping": dict(mode=AUTO, beta=AUTO, target_return=0.0, epsilon=AUTO),
    "meta": _fields_of(MetaConfig()),
    "hier": dict(budget_env_steps=2_000_000),
    "adapt": dict(kind="dynamics-scale", grid_size=20, n_eval=100, channels="", targets=10),
    "sweep": dict(seeds_per_cell=5, param_a=AUTO, values_a="", param_b=AUTO, values_b=""),
}

ENV_FIELDS = {f.name: f.default for f in dataclasses.fields(envs.EnvSpec) if f.name not in ("kind", "name")}
_FLOAT_TUPLES = {"arena", "target", "dynamics_scale", "drift"}


def _parse(key: str, text, default):
    """Coerce ``text`` to the type of ``default``."""
    if not isinstance(text, str):
        return text
    text = text.strip()
    if isinstance(default, str) and default == AUTO and text == AUTO:
        return AUTO
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(float(text)) if float(text).is_integer() else _bad_int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple) or key in _FLOAT_TUPLES:
        parts = text.replace(",", " ").split()
        cast = float if key in _FLOAT_TUPLES or (default and isinstance(default[0], float)) else int
        return tuple(cast(p) for p in parts)
    if key == "beta" or key == "epsilon":
        return float(text)
    if key == "batch_size" and default == AUTO:
        return _parse(key, text, 0)
    return text


def _bad_int(text):
    raise ValueError(f"expected an integer, got {text!r}")


def _format(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "\n".join(" ".join(repr(v) for v in w) for w in value)
        return " ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


@dataclass
class RunConfig:
    sections: dict[str, dict] = field(default_factory=dict)

    def __getattr__(self, name):
        run = self.__dict__.get("sections", {}).get("run", {})
        if name in run:
            return run[name]
        raise AttributeError(name)

    # -- derived typed configs -----------------------------------------------------
    def env_spec(self) -> envs.EnvSpec:
        ov = dict(self.sections.get("env", {}))
        if isinstance(ov.get("walls"), str):
            ov["walls"] = envs.parse_walls(ov["walls"])
        return envs.get_env(self.sections["run"]["env"], **ov)

    def qd_config(self) -> QdConfig:
        s = self.sections
        qd = {k: v for k, v in s["qd"].items() if k != "descriptor_space"}
        return QdConfig(method=self.method, variation=self.variation_config(),
                        td3=Td3Config(**s["td3"]), aurora=AuroraConfig(**s["aurora"]), **qd)

    def variation_config(self) -> VariationConfig:
        v = dict(self.sections["variation"])
        if v["batch_size"] == AUTO:
            v["batch_size"] = default_batch_size(self.method)
        return VariationConfig(**v)

    def shaping_config(self, kind: str) -> ShapingConfig:
        sh = self.sections["shaping"]
        mode = sh["mode"]
        if mode == AUTO:
            mode = "none" if self.method == "sac" else "smerl-gate" if self.method.startswith("smerl") else "sum"
        beta = default_beta(kind) if sh["beta"] == AUTO else float(sh["beta"])
        target = float(sh["target_return"])
        eps = 0.1 * abs(target) if sh["epsilon"] == AUTO else float(sh["epsilon"])
        return ShapingConfig(mode, beta, target, eps)

    def skill_config(self) -> SkillConfig:
        s = self.sections
        return SkillConfig(method=self.method, sac=SacConfig(**s["sac"]),
                           shaping=self.shaping_config(self.env_spec().kind), **s["skills"])

    def meta_config(self) -> MetaConfig:
        return MetaConfig(**self.sections["meta"])

    @property
    def is_qd(self) -> bool:
        return self.method in QD_METHODS

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for sec, values in self.sections.items():
            cp[sec] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _apply(sections: dict, source: str, sec: str, key: str, raw, errors: list[str]) -> None:
    if sec not in SCHEMA:
        errors.append(f"{source}: unknown section [{sec}]")
        return
    known = ENV_FIELDS if sec == "env" else SCHEMA[sec]
    if key not in known:
        errors.append(f"{source}: unknown key {sec}.{key}")
        return
    try:
        if sec == "env" and key == "walls":
            sections[sec][key] = raw
        else:
            sections[sec][key] = _parse(key, raw, known[key])
    except (TypeError, ValueError) as exc:
        errors.append(f"{source}: {sec}.{key}: {exc}")


def _validate(cfg: RunConfig, errors: list[str]) -> None:
    run = cfg.sections["run"]
    if run["schema_version"] != SCHEMA_VERSION:
        errors.append(f"run.schema_version: expected {SCHEMA_VERSION}, got {run['schema_version']}")
    if run["method"] not in METHODS:
        errors.append(f"run.method: unknown method {run['method']!r} (choose from {', '.join(METHODS)})")
    if run["env"] not in envs.load_env_specs():
        errors.append(f"run.env: unknown environment {run['env']!r}")
    for key in ("iterations", "env_steps", "checkpoint_every", "metrics_every", "workers"):
        lo = 1 if key in ("checkpoint_every", "metrics_every", "workers") else 0
        if run[key] < lo:
            errors.append(f"run.{key}: must be >= {lo}")
    if cfg.sections["shaping"]["mode"] not in SHAPING_MODES + (AUTO,):
        errors.append(f"shaping.mode: unknown mode {cfg.sections['shaping']['mode']!r}")
    space = cfg.sections["qd"]["descriptor_space"]
    if space:
        if run["method"].endswith("aurora"):
            errors.append(f"qd.descriptor_space: {run['method']} learns its own descriptors; remove this key")
        elif space not in DESCRIPTOR_SPACES:
            errors.append(f"qd.descriptor_space: unknown space {space!r}")
        elif run["env"] in envs.load_env_specs() and \
                envs.get_env(run["env"]).kind not in DESCRIPTOR_SPACES[space]:
            errors.append(f"qd.descriptor_space: {space!r} does not apply to {run['env']}")
    s = cfg.sections
    kind = None
    checks = [("env", lambda: cfg.env_spec()),
              ("variation", lambda: cfg.variation_config()),
              ("td3", lambda: Td3Config(**s["td3"])),
              ("aurora", lambda: AuroraConfig(**s["aurora"])),
              ("sac", lambda: SacConfig(**s["sac"])),
              ("meta", lambda: MetaConfig(**s["meta"])),
              ("shaping", lambda: cfg.shaping_config(kind)),
              ("run", lambda: cfg.qd_config() if cfg.is_qd else cfg.skill_config())]
    for sec, check in checks:
        if sec == "run" and errors:
            break
        try:
            out = check()
            if sec == "env":
                kind = out.kind
        except (TypeError, ValueError, KeyError) as exc:
            errors.append(f"{sec}: {exc}")
            if sec == "env":
                return


def load_config(path=None, overrides: dict | None = None, environ=None,
                base: RunConfig | None = None) -> RunConfig:
    """Defaults (or ``base``), then the INI file, then ``QDSKILLS_<SECTION>__<KEY>``
    variables, then ``overrides``.

    ``overrides`` maps ``"section.key"`` to a value. Raises :class:`ConfigError`
    listing every offending key.
    """
    start = base.sections if base is not None else SCHEMA
    sections = {sec: dict(vals) for sec, vals in start.items()}
    errors: list[str] = []
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        with open(path) as f:
            cp.read_file(f)
        for sec in cp.sections():
            for key, raw in cp[sec].items():
                _apply(sections, str(path), sec, key, raw, errors)
    environ = os.environ if environ is None else environ
    for name, raw in sorted(environ.items()):
        if name.startswith(ENV_PREFIX) and "__" in name:
            sec, key = name[len(ENV_PREFIX):].split("__", 1)
            _apply(sections, name, sec.lower(), key.lower(), raw, errors)
    for dotted, raw in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        _apply(sections, "override", sec, key, raw, errors)
    cfg = RunConfig(sections)
    _validate(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def defaults_text() -> str:
    """The shipped, commented defaults file."""
    return resources.files("qdskills").joinpath("data/defaults.ini").read_text()
