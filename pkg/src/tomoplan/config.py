"""Pipeline configuration: INI-style file with one section per module.

Keys follow the parameter symbol names (snake_case). Unknown sections or keys
are rejected so that typos never silently fall back to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .simplify import DEFAULT_EPS_E
from .trajectory import OptConfig
from .traversability import TravParams


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "tomogram": {"d_s": float, "r_g": float},
    "traversability": {
        "d_min": float, "d_ref": float, "theta_b": float, "theta_s": float,
        "theta_p": float, "c_barrier": float, "alpha_d": float, "alpha_b": float,
        "alpha_s": float, "d_inf": float, "d_sm": float, "r_c": float,
        "step_patch_radius": int,
    },
    "simplify": {"eps_e": float},
    "trajectory": {
        "w_z": float, "w_t": float, "c_safe": float, "v_max": float, "a_max": float,
        "heading_rate_max": float, "penalty_cost": float, "penalty_kin": float,
        "penalty_band": float, "samples_per_piece": int, "max_iter": int,
        "grad_tol": float, "tol_cost": float, "tol_kin": float, "tol_band": float,
        "segment_length": float, "min_speed_heading": float, "z_ref_ceiling_margin": float,
        "ceiling_erosion": float, "ceiling_skirt_slope": float, "band_safety": float,
        "cost_safety": float,
    },
    "runtime": {"threads": int},
}


@dataclass
class PipelineConfig:
    d_s: float = 0.50
    r_g: float = 0.10
    eps_e: float = DEFAULT_EPS_E
    threads: int = 1
    trav: TravParams = None
    opt: OptConfig = None

    def __post_init__(self):
        if self.d_s <= 0 or self.r_g <= 0:
            raise ConfigError("d_s and r_g must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.trav is None:
            self.trav = TravParams()
        if self.opt is None:
            self.opt = OptConfig(d_min=self.trav.d_min, d_ref=self.trav.d_ref,
                                 c_barrier=self.trav.c_barrier)


def _coerce(section: str, key: str, raw: str):
    schema = _SCHEMA.get(section)
    if schema is None:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in schema:
        raise ConfigError(f"unknown key '{key}' in section [{section}]")
    try:
        return schema[key](raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _build(values: dict[str, dict]) -> PipelineConfig:
    tomo = values.get("tomogram", {})
    trav_kw = values.get("traversability", {})
    simp = values.get("simplify", {})
    traj_kw = values.get("trajectory", {})
    runtime = values.get("runtime", {})
    try:
        trav = TravParams(**trav_kw)
        opt = OptConfig(d_min=trav.d_min, d_ref=trav.d_ref, c_barrier=trav.c_barrier,
                        **traj_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return PipelineConfig(
        d_s=tomo.get("d_s", 0.50),
        r_g=tomo.get("r_g", 0.10),
        eps_e=simp.get("eps_e", DEFAULT_EPS_E),
        threads=runtime.get("threads", 1),
        trav=trav,
        opt=opt,
    )


def load_config(path=None, overrides: list[str] | None = None) -> PipelineConfig:
    """Parse the config file, then apply 'section.key=value' overrides."""
    values: dict[str, dict] = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as f:
                parser.read_file(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                values.setdefault(section, {})[key] = _coerce(section, key, raw)
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override '{item}' must look like section.key=value")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        values.setdefault(section, {})[key] = _coerce(section, key, raw)
    return _build(values)


def write_default_config(path):
    """Write a config file holding the defaults, as a starting point."""
    cfg = PipelineConfig()
    lines = ["[tomogram]", f"d_s = {cfg.d_s}", f"r_g = {cfg.r_g}", "", "[traversability]"]
    for f in fields(TravParams):
        val = getattr(cfg.trav, f.name)
        if val is not None:
            lines.append(f"{f.name} = {val}")
    lines += ["", "[simplify]", f"eps_e = {cfg.eps_e}", "", "[trajectory]"]
    for name in _SCHEMA["trajectory"]:
        lines.append(f"{name} = {getattr(cfg.opt, name)}")
    lines += ["", "[runtime]", f"threads = {cfg.threads}", ""]
    with open(path, "w") as f:
        f.write("\n".join(lines))
