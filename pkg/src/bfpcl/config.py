"""Experiment configuration: a strict INI file with JSON-typed values.

Example::

    [dataset]
    kind = "mnist-subset"
    classes_per_task = 2

    [methods]
    names = ["ER", "ER w/ BFP"]

    [run]
    seeds = [0, 1]
    output = "results/er"

Every value is a JSON literal (numbers, ``true``/``false``, quoted strings,
lists).  Unknown sections or keys, duplicate keys, wrong types and invalid
values are rejected with the offending line number.  See
``docs/formats.md`` for the full key table.
"""

import configparser
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, InvalidInputError
from .trainer import MethodSpec, TrainConfig

DATASET_KINDS = ("mnist-subset", "idx", "gaussian")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "mnist-subset"
    classes_per_task: int = 2
    tasks: int = 5  # gaussian only; MNIST-style sets use class_count / classes_per_task
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    class_count: int = 10
    dim: int = 20
    separation: float = 4.0
    n_per_class: int = 100
    seed: int = 0


@dataclass(frozen=True)
class MethodsConfig:
    names: list = field(default_factory=lambda: ["FT"])
    gamma: list = field(default_factory=lambda: [1.0])
    er_alpha: float = 1.0
    der_alpha: float = 0.1
    der_beta: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    seeds: list = field(default_factory=lambda: [0])
    output: str = "results"
    workers: int = 1


@dataclass(frozen=True)
class AnalysisConfig:
    spectrum: bool = False
    spectrum_center: bool = False
    spectrum_eval: str = "seen"  # "seen": test data of tasks 1..t; "current": task t only
    cka: bool = False
    probe_fractions: list = field(default_factory=list)
    probe_seed: int = 0
    dump_features: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = DatasetConfig()
    training: TrainConfig = TrainConfig()
    methods: MethodsConfig = MethodsConfig()
    run: RunConfig = RunConfig()
    analysis: AnalysisConfig = AnalysisConfig()
    base_dir: str = "."  # relative paths resolve against this

    def method_specs(self):
        """``[(MethodSpec, gamma)]``: projector methods once per gamma, others once."""
        m = self.methods
        out = []
        for name in m.names:
            kw = dict(er_alpha=m.er_alpha, der_alpha=m.der_alpha, der_beta=m.der_beta)
            probe = MethodSpec.parse(name, **kw)
            if probe.projector is None:
                out.append((probe, None))
            else:
                out += [(MethodSpec.parse(name, gamma=g, **kw), g) for g in m.gamma]
        return out

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def as_dict(self):
        d = {name: asdict(getattr(self, name)) for name in SECTIONS}
        d["training"]["hidden"] = list(d["training"]["hidden"])
        return d


SECTIONS = {
    "dataset": DatasetConfig,
    "training": TrainConfig,
    "methods": MethodsConfig,
    "run": RunConfig,
    "analysis": AnalysisConfig,
}

# expected JSON type per field: int, float, bool, str, or ("list", elem)
_TYPES = {
    "hidden": ("list", int),
    "names": ("list", str),
    "gamma": ("list", float),
    "seeds": ("list", int),
    "probe_fractions": ("list", float),
}


def _expected(cls, name):
    if name in _TYPES:
        return _TYPES[name]
    default = next(f for f in fields(cls) if f.name == name).default
    return type(default)


def _check_type(value, expected):
    if isinstance(expected, tuple):
        return isinstance(value, list) and all(_check_type(v, expected[1]) for v in value)
    if expected is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, expected)


def _coerce(value, expected):
    if isinstance(expected, tuple):
        return [_coerce(v, expected[1]) for v in value]
    return float(value) if expected is float else value


def _line_index(text):
    """``{(section, key): line}`` and ``{section: line}`` from the raw text."""
    keys, sections, section = {}, {}, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            sections.setdefault(section, lineno)
        elif s and not s.startswith(("#", ";")) and "=" in s and section is not None:
            keys.setdefault((section, s.split("=", 1)[0].strip().lower()), lineno)
    return keys, sections


def _validate(cfg: ExperimentConfig, lines):
    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", lines.get((section, key)))

    d, m, r, a = cfg.dataset, cfg.methods, cfg.run, cfg.analysis
    if d.kind not in DATASET_KINDS:
        fail("dataset", "kind", f"must be one of {DATASET_KINDS}, got {d.kind!r}")
    for key in ("classes_per_task", "tasks", "class_count", "dim", "n_per_class"):
        if getattr(d, key) <= 0:
            fail("dataset", key, "must be positive")
    if d.separation < 0:
        fail("dataset", "separation", "must be >= 0")
    if d.kind == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(d, key):
                fail("dataset", key, "required when kind is \"idx\"")
    if not m.names:
        fail("methods", "names", "at least one method is required")
    if not m.gamma or any(g < 0 for g in m.gamma):
        fail("methods", "gamma", "needs at least one value, all >= 0")
    for key in ("er_alpha", "der_alpha", "der_beta"):
        if getattr(m, key) < 0:
            fail("methods", key, "must be >= 0")
    try:
        cfg.method_specs()
    except InvalidInputError as exc:
        fail("methods", "names", str(exc))
    if not r.seeds:
        fail("run", "seeds", "at least one seed is required")
    if len(set(r.seeds)) != len(r.seeds):
        fail("run", "seeds", "seeds must be distinct")
    if r.workers <= 0:
        fail("run", "workers", "must be positive")
    if a.spectrum_eval not in ("seen", "current"):
        fail("analysis", "spectrum_eval", f"must be \"seen\" or \"current\", got {a.spectrum_eval!r}")
    if any(not 0 < f <= 1 for f in a.probe_fractions):
        fail("analysis", "probe_fractions", "fractions must lie in (0, 1]")


def parse_config(text, base_dir=".") -> ExperimentConfig:
    parser = configparser.ConfigParser(strict=True, interpolation=None, empty_lines_in_values=False)
    try:
        parser.read_string(text)
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message.split(": ", 1)[-1], exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno) from None
    lines, section_lines = _line_index(text)

    built = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", section_lines.get(section))
        cls = SECTIONS[section]
        known = {f.name for f in fields(cls)}
        values = {}
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                raise ConfigError(f"[{section}] {key}: value {raw!r} is not a JSON literal", line) from None
            expected = _expected(cls, key)
            if not _check_type(value, expected):
                name = f"list of {expected[1].__name__}" if isinstance(expected, tuple) else expected.__name__
                raise ConfigError(f"[{section}] {key}: expected {name}, got {raw}", line)
            values[key] = _coerce(value, expected)
        if section == "training" and "hidden" in values:
            values["hidden"] = tuple(values["hidden"])
        try:
            built[section] = cls(**values)
        except InvalidInputError as exc:
            key = next((k for k in values if k in str(exc)), None)
            raise ConfigError(f"[{section}] {exc}", lines.get((section, key))) from None
    cfg = ExperimentConfig(**built, base_dir=str(base_dir))
    _validate(cfg, lines)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), base_dir=path.parent)
