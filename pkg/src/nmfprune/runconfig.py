"""Run configuration: the key=value config file format and its parser.

The format is line oriented with ``[section]`` headers. Blank lines and lines
starting with ``#`` are ignored; ``layer`` may repeat inside ``[model]``, all
other keys appear at most once per section. Exactly one of a fixed
``gamma`` under ``[threshold]`` or a ``[gamma_search]`` section must be
present: the first pins the threshold scale, the second searches for it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .datasets import CsvSource, DatasetSpec, IdxSource, SyntheticBlobs
from .masking import GammaSearchConfig, ThresholdConfig
from .network import Conv2d, Flatten, LayerSpec, Linear, ReLU
from .nmf import NmfConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MagnitudeScorer:
    """Baseline scorer: a weight's importance is its absolute value."""


ScorerSpec = Union[NmfConfig, MagnitudeScorer]


@dataclass
class RunConfig:
    model: list[LayerSpec]
    dataset: DatasetSpec
    scorer: ScorerSpec
    threshold: ThresholdConfig
    gamma_search: GammaSearchConfig | None
    train: TrainConfig
    output_dir: Path
    seed: int = 0
    checkpoint_every: int | None = None  # periodic checkpoints, in epochs

    @property
    def target_mode(self) -> bool:
        """True when a sparsity target drives the gamma search."""
        return self.gamma_search is not None


def _parse_sections(text: str, source: str) -> dict[str, list[tuple[int, str, str]]]:
    sections: dict[str, list[tuple[int, str, str]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            sections.setdefault(current, [])
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        sections[current].append((lineno, key.strip().lower(), value.strip()))
    return sections


class _Section:
    def __init__(self, name: str, entries: list[tuple[int, str, str]], source: str):
        self.name = name
        self.source = source
        self.entries = entries
        self.kv: dict[str, tuple[int, str]] = {}
        for lineno, key, value in entries:
            if key == "layer":
                continue
            if key in self.kv:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} in [{name}]")
            self.kv[key] = (lineno, value)

    def layers(self) -> list[tuple[int, str]]:
        return [(lineno, value) for lineno, key, value in self.entries if key == "layer"]

    def _raw(self, key: str, default=None, required: bool = False):
        if key in self.kv:
            return self.kv[key]
        if required:
            raise ConfigError(f"{self.source}: [{self.name}] is missing required key {key!r}")
        return None, default

    def get(self, key: str, default: str | None = None, required: bool = False) -> str | None:
        _, value = self._raw(key, default, required)
        return value

    def get_int(self, key: str, default: int | None = None, required: bool = False) -> int | None:
        lineno, value = self._raw(key, default, required)
        if lineno is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{self.source}:{lineno}: {key} must be an integer") from None

    def get_float(
        self, key: str, default: float | None = None, required: bool = False
    ) -> float | None:
        lineno, value = self._raw(key, default, required)
        if lineno is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{self.source}:{lineno}: {key} must be a number") from None

    def has(self, key: str) -> bool:
        return key in self.kv


def _parse_bool(token: str, context: str) -> bool:
    if token.lower() in ("true", "1", "yes"):
        return True
    if token.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"{context}: expected a boolean, got {token!r}")


def _parse_layer(lineno: int, value: str, source: str) -> LayerSpec:
    ctx = f"{source}:{lineno}"
    tokens = value.split()
    if not tokens:
        raise ConfigError(f"{ctx}: empty layer definition")
    kind, args = tokens[0].lower(), tokens[1:]
    positional = [t for t in args if "=" not in t]
    options = dict(t.split("=", 1) for t in args if "=" in t)

    prunable: bool | None = None
    if "prunable" in options:
        prunable = _parse_bool(options.pop("prunable"), ctx)
    try:
        if kind == "linear":
            if len(positional) != 2:
                raise ConfigError(f"{ctx}: linear takes <in> <out>")
            if options:
                raise ConfigError(f"{ctx}: unknown linear options {sorted(options)}")
            return Linear(int(positional[0]), int(positional[1]), prunable)
        if kind == "conv2d":
            if len(positional) != 4:
                raise ConfigError(f"{ctx}: conv2d takes <in_ch> <out_ch> <kh> <kw>")
            stride = int(options.pop("stride", 1))
            padding = int(options.pop("padding", 0))
            if options:
                raise ConfigError(f"{ctx}: unknown conv2d options {sorted(options)}")
            return Conv2d(
                int(positional[0]), int(positional[1]), int(positional[2]),
                int(positional[3]), stride, padding, prunable,
            )
        if kind == "relu":
            return ReLU()
        if kind == "flatten":
            return Flatten()
    except ValueError as exc:
        raise ConfigError(f"{ctx}: {exc}") from None
    raise ConfigError(f"{ctx}: unknown layer kind {kind!r}")


def _parse_dataset(section: _Section) -> DatasetSpec:
    kind = (section.get("kind", required=True) or "").lower()
    if kind == "synthetic-blobs":
        return SyntheticBlobs(
            n_samples=section.get_int("n_samples", required=True),
            n_features=section.get_int("n_features", required=True),
            n_classes=section.get_int("n_classes", required=True),
            seed=section.get_int("seed", 0),
        )
    if kind == "csv":
        return CsvSource(
            path=section.get("path", required=True),
            label_column=section.get_int("label_column", required=True),
        )
    if kind == "idx":
        return IdxSource(
            images_path=section.get("images", required=True),
            labels_path=section.get("labels", required=True),
        )
    raise ConfigError(f"[dataset] has unknown kind {kind!r}")


def _parse_scorer(section: _Section) -> ScorerSpec:
    kind = (section.get("kind", required=True) or "").lower()
    if kind == "nmf":
        return NmfConfig(
            k=section.get_int("k", required=True),
            n_iter=section.get_int("n_iter", 200),
            epsilon=section.get_float("epsilon", 1e-12),
        )
    if kind == "magnitude":
        return MagnitudeScorer()
    raise ConfigError(f"[scorer] has unknown kind {kind!r}")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    sections = _parse_sections(text, source)

    def want(name: str) -> _Section:
        if name not in sections:
            raise ConfigError(f"{source}: missing required section [{name}]")
        return _Section(name, sections[name], source)

    known = {"run", "model", "dataset", "scorer", "threshold", "gamma_search", "train"}
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"{source}: unknown sections {sorted(unknown)}")

    model_section = want("model")
    model = [_parse_layer(lineno, value, source) for lineno, value in model_section.layers()]
    if not model:
        raise ConfigError(f"{source}: [model] defines no layers")

    dataset = _parse_dataset(want("dataset"))
    scorer = _parse_scorer(want("scorer"))

    threshold_section = want("threshold")
    t_type = threshold_section.get("type", required=True)
    fixed_gamma = threshold_section.get_float("gamma")

    gamma_search: GammaSearchConfig | None = None
    if "gamma_search" in sections:
        gs = _Section("gamma_search", sections["gamma_search"], source)
        gamma_search = GammaSearchConfig(
            s_target=gs.get_float("s_target", required=True),
            epsilon_sparsity=gs.get_float("epsilon_sparsity", 0.005),
            n_search=gs.get_int("n_search", 30),
            gamma_min=gs.get_float("gamma_min", 0.01),
            gamma_max=gs.get_float("gamma_max", 10.0),
            gamma_guess=gs.get_float("gamma_guess", 1.0),
            epsilon_gamma_conv=gs.get_float("epsilon_gamma_conv", 1e-4),
        )
    if gamma_search is not None and fixed_gamma is not None:
        raise ConfigError(
            f"{source}: give either [threshold] gamma or a [gamma_search] section, not both"
        )
    if gamma_search is None and fixed_gamma is None:
        raise ConfigError(
            f"{source}: masking needs either [threshold] gamma or a [gamma_search] section"
        )

    train_section = want("train")
    milestones: tuple[int, ...] = ()
    if train_section.has("milestones"):
        lineno, value = train_section.kv["milestones"]
        try:
            milestones = tuple(int(t) for t in value.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: milestones must be integers") from None

    try:
        train = TrainConfig(
            epochs=train_section.get_int("epochs", required=True),
            lr=train_section.get_float("lr", required=True),
            momentum=train_section.get_float("momentum", 0.9),
            weight_decay=train_section.get_float("weight_decay", 5e-4),
            batch_size=train_section.get_int("batch_size", 128),
            lr_milestones=milestones,
            lr_gamma=train_section.get_float("lr_gamma", 0.1),
        )
        threshold = ThresholdConfig(
            t_type=t_type, gamma=fixed_gamma if fixed_gamma is not None else 1.0
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None

    run_section = (
        _Section("run", sections["run"], source) if "run" in sections
        else _Section("run", [], source)
    )
    return RunConfig(
        model=model,
        dataset=dataset,
        scorer=scorer,
        threshold=threshold,
        gamma_search=gamma_search,
        train=train,
        output_dir=Path(run_section.get("output", "runs/run")),
        seed=run_section.get_int("seed", 0),
        checkpoint_every=run_section.get_int("checkpoint_every"),
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))
