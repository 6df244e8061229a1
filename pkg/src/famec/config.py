"""Scenario and experiment configuration.

All physical constants live in :class:`ScenarioConfig`; powers are stored in
Watts.  Config files are YAML with one optional mapping per section::

    scenario:   physical constants (powers may be given as *_dbm or *_w)
    game:       pricing-game constants
    csnet:      channel-estimator architecture and training
    drl:        agent architecture and training
    experiment: sweep definition (see ExperimentSpec)

An empty file yields the default simulation parameters.  Unknown keys, wrong types and
out-of-range values raise :class:`ConfigError` carrying the line number.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid configuration; ``field`` and ``line`` locate the problem."""

    def __init__(self, message, field=None, line=None):
        self.message = message
        self.field = field
        self.line = line
        loc = f"line {line}: " if line is not None else ""
        name = f"{field}: " if field is not None else ""
        super().__init__(f"{loc}{name}{message}")


def dbm_to_watt(dbm):
    return 10.0 ** (dbm / 10.0) / 1000.0


def watt_to_dbm(watt):
    return 10.0 * math.log10(watt * 1000.0)


@dataclass(frozen=True)
class GameParams:
    nu: float = 5.0           # order-of-magnitude constant for vartheta
    phi_c: float = 1.0        # exponent in the gamma factor
    tol: float = 1e-6         # power-iteration stopping tolerance (W)
    max_iter: int = 100


@dataclass(frozen=True)
class CSParams:
    ratio: float = 0.1        # sampling ratio r
    block: int = 32           # block size B_k
    kernel: int = 3           # f
    features: int = 64        # d
    n_res: int = 5            # residual blocks n
    eta: float = 1e-2         # IB trade-off
    gamma: float = 1e-4       # importance regulariser
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    snapshots: int = 64       # T, image width
    ig_hidden: int = 0        # 0 -> same width as the measurement vector
    use_importance: bool = True

    @property
    def n_measurements(self):
        return int(round(self.ratio * self.block * self.block))


@dataclass(frozen=True)
class DRLParams:
    hidden: tuple = (64, 128, 64)
    lr: float = 1e-4
    discount: float = 0.8
    grad_clip: float = 0.25
    eps_start: float = 1.0
    eps_end: float = 0.02
    eps_decay_epochs: int = 800
    noise_start: float = 1.0   # TBA exploration std at episode 0
    noise_end: float = 0.05
    tau: float = 0.005
    buffer_size: int = 10000
    batch_size: int = 64
    warmup_steps: int = 200
    updates_per_step: int = 1
    episodes: int = 300
    slots: int = 20
    reward_delta: float = 100.0
    lambda_scale: float = 6.907755278982137   # ln(1000): raw=+-1 -> lambda=1e+-3
    beta_scale: float = 2.0    # softmax temperature for MEC shares
    action_cap: int = 512
    shared_dua: bool = True
    td3_extras: bool = True   # target smoothing + delayed actor updates
    dueling_mode: str = "identifiable"
    redraw_positions: bool = True   # new user geometry every episode
    reward_samples: int = 200       # random-policy draws for reward thresholds


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 3
    n_ports: int = 32            # M candidate ports
    n_elements: int = 4          # N_p radiating elements per FA
    fa_length: float = 16.0      # W, in wavelengths
    wavelength: float = 0.1      # l (m)
    bandwidth: float = 1e9       # B (Hz)
    noise_power: float = dbm_to_watt(-84.0)
    p_max: float = dbm_to_watt(17.0)
    local_cpu: float = 1e6       # f_l (cycles/s)
    mec_cpu: float = 1e8         # F_max (cycles/s)
    task_size: float = 1e6       # C_n (bits, also cycles)
    bs_height: float = 15.0      # h (m)
    n_paths: int = 3             # L
    pathloss_exp: float = 2.7
    min_distance: float = 50.0   # horizontal user distance range (m)
    max_distance: float = 200.0
    time_corr: float = 0.9       # slot-to-slot correlation of path gains
    sinr_convention: str = "printed"
    seed: int = 0
    game: GameParams = field(default_factory=GameParams)
    cs: CSParams = field(default_factory=CSParams)
    drl: DRLParams = field(default_factory=DRLParams)

    @property
    def port_spacing(self):
        return self.fa_length * self.wavelength / (self.n_ports - 1)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def validate(self):
        """Raise ConfigError on the first violated invariant."""
        for name in ("n_users", "n_ports", "n_elements", "n_paths"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", field=name)
        for name in ("fa_length", "wavelength", "bandwidth", "noise_power", "p_max",
                     "local_cpu", "mec_cpu", "task_size", "bs_height", "min_distance",
                     "max_distance", "pathloss_exp"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be > 0", field=name)
        if self.n_ports < 2:
            raise ConfigError("need at least two candidate ports", field="n_ports")
        if self.n_ports < self.n_elements:
            raise ConfigError("M must be >= N_p", field="n_ports")
        if self.min_distance > self.max_distance:
            raise ConfigError("min_distance exceeds max_distance", field="min_distance")
        if not 0.0 <= self.time_corr <= 1.0:
            raise ConfigError("must lie in [0, 1]", field="time_corr")
        if self.sinr_convention not in ("printed", "conventional"):
            raise ConfigError("expected 'printed' or 'conventional'", field="sinr_convention")
        if self.game.nu <= 0 or self.game.phi_c <= 0 or self.game.tol <= 0:
            raise ConfigError("game constants must be positive", field="game")
        if self.game.max_iter < 1:
            raise ConfigError("must be >= 1", field="game.max_iter")
        cs = self.cs
        if not 0 < cs.ratio <= 1:
            raise ConfigError("must lie in (0, 1]", field="csnet.ratio")
        for name in ("block", "kernel", "features", "n_res", "batch_size", "snapshots"):
            if getattr(cs, name) < 1:
                raise ConfigError("must be >= 1", field=f"csnet.{name}")
        if cs.n_measurements < 1:
            raise ConfigError("ratio * block^2 rounds to zero measurements", field="csnet.ratio")
        drl = self.drl
        if not 0 <= drl.discount < 1:
            raise ConfigError("must lie in [0, 1)", field="drl.discount")
        if not 0 < drl.tau <= 1:
            raise ConfigError("must lie in (0, 1]", field="drl.tau")
        if drl.reward_delta <= 0:
            raise ConfigError("must be > 0", field="drl.reward_delta")
        if drl.dueling_mode not in ("identifiable", "plain"):
            raise ConfigError("expected 'identifiable' or 'plain'", field="drl.dueling_mode")
        if drl.episodes < 1 or drl.slots < 1:
            raise ConfigError("episodes and slots must be >= 1", field="drl")
        return self


SWEEP_VARS = ("fa_length", "n_users", "port_spacing", "port_count")
SCHEMES = ("proposed", "fpa", "fp", "zf", "maddpg", "oracle", "ibm-ccs", "ccs")


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "experiment"
    sweep_var: str = "fa_length"
    sweep_values: tuple = (16.0,)
    schemes: tuple = ("proposed",)
    seeds: tuple = (0,)
    output_dir: str = "runs/experiment"
    csi: str = "perfect"
    eval_slots: int = 50

    def validate(self):
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigError(f"expected one of {SWEEP_VARS}", field="experiment.sweep_var")
        if len(self.sweep_values) == 0:
            raise ConfigError("sweep values must be nonempty", field="experiment.sweep_values")
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed", field="experiment.seeds")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}", field="experiment.schemes")
        if self.csi not in ("perfect", "estimated"):
            raise ConfigError("expected 'perfect' or 'estimated'", field="experiment.csi")
        return self


# --- parsing -----------------------------------------------------------------

_SECTIONS = {
    "scenario": ScenarioConfig,
    "game": GameParams,
    "csnet": CSParams,
    "drl": DRLParams,
    "experiment": ExperimentSpec,
}
_NESTED = {"game": "game", "csnet": "cs", "drl": "drl"}
_DBM_FIELDS = ("noise_power", "p_max")


def _hints(cls):
    return typing.get_type_hints(cls)


def _coerce(value, hint, name, line):
    origin = typing.get_origin(hint)
    if hint is bool:
        if isinstance(value, bool):
            return value
    elif hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif hint is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif hint is str:
        if isinstance(value, str):
            return value
    elif hint is tuple or origin is tuple:
        if isinstance(value, (list, tuple)):
            return tuple(value)
    raise ConfigError(f"expected {getattr(hint, '__name__', hint)}, got {type(value).__name__}",
                      field=name, line=line)


def _scalar(node):
    return yaml.safe_load(yaml.serialize(node))


def _read_section(node, cls, section):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("section must be a mapping", field=section,
                          line=node.start_mark.line + 1)
    hints = _hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(_NESTED.values())
    out = {}
    for key_node, val_node in node.value:
        key = key_node.value
        line = key_node.start_mark.line + 1
        value = _scalar(val_node)
        qual = f"{section}.{key}"
        if cls is ScenarioConfig and (key.endswith("_dbm") or key.endswith("_w")):
            base = key.rsplit("_", 1)[0]
            if base in _DBM_FIELDS:
                if base in out:
                    raise ConfigError("power given twice", field=qual, line=line)
                v = _coerce(value, float, qual, line)
                out[base] = dbm_to_watt(v) if key.endswith("_dbm") else v
                continue
        if key not in names:
            raise ConfigError("unknown key", field=qual, line=line)
        if key in _DBM_FIELDS:
            raise ConfigError(f"give {key}_dbm or {key}_w", field=qual, line=line)
        out[key] = _coerce(value, hints[key], qual, line)
    return out


def parse_config(source):
    """Parse a config file path (or YAML text) into (ScenarioConfig, ExperimentSpec)."""
    if isinstance(source, Path) or (isinstance(source, str) and source and "\n" not in source
                                    and Path(source).is_file()):
        text = Path(source).read_text()
    else:
        text = source
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}", line=mark.line + 1 if mark else None)
    sections = {}
    if root is not None:
        if not isinstance(root, yaml.MappingNode):
            raise ConfigError("top level must be a mapping", line=root.start_mark.line + 1)
        for key_node, val_node in root.value:
            name = key_node.value
            if name not in _SECTIONS:
                raise ConfigError("unknown section", field=name, line=key_node.start_mark.line + 1)
            sections[name] = (_read_section(val_node, _SECTIONS[name], name),
                              key_node.start_mark.line + 1)

    def build(name):
        values, line = sections.get(name, ({}, None))
        try:
            return _SECTIONS[name](**values)
        except TypeError as exc:
            raise ConfigError(str(exc), field=name, line=line)

    nested = {attr: build(sec) for sec, attr in _NESTED.items()}
    cfg = dataclasses.replace(build("scenario"), **nested)
    spec = build("experiment")
    line_of = {name: line for name, (_, line) in sections.items()}
    try:
        cfg.validate()
        spec.validate()
    except ConfigError as exc:
        if exc.line is not None:
            raise
        section = (exc.field or "scenario").split(".")[0]
        line = line_of.get(section, line_of.get("scenario"))
        raise ConfigError(exc.message, field=exc.field, line=line) from None
    return cfg, spec


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def emit_config(cfg, spec=None):
    """Serialise to YAML text that parse_config maps back to equal objects."""
    scenario = {}
    for f in dataclasses.fields(ScenarioConfig):
        if f.name in _NESTED.values():
            continue
        value = getattr(cfg, f.name)
        key = f"{f.name}_w" if f.name in _DBM_FIELDS else f.name
        scenario[key] = _plain(value)
    doc = {"scenario": scenario}
    for section, attr in _NESTED.items():
        obj = getattr(cfg, attr)
        doc[section] = {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if spec is not None:
        doc["experiment"] = {f.name: _plain(getattr(spec, f.name)) for f in dataclasses.fields(spec)}
    return yaml.safe_dump(doc, sort_keys=False)
