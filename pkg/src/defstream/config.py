"""Plain-text run configuration: grammar, schema, and schedule building.

The format is line-oriented and diff-friendly (see docs/config.md):
``[section]`` or ``[section.sub]`` headers, ``key = value`` entries, ``#``
comments.  Scalars parse as bool/int/float/string; ``a/b`` is a rational
float literal (so budgets read like 8/255); comma-separated values form
lists.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .attacks import AttackSpec, canonical_family, make_spec
from .augment import default_pool
from .consistency import ConsistencyConfig
from .training import Schedule, StagePlan


class ConfigError(ValueError):
    """Unparseable or semantically invalid configuration."""


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if "/" in text:
        num, _, den = text.partition("/")
        try:
            return float(num) / float(den)
        except ValueError:
            pass
    return text


def parse_value(text: str):
    if "," in text:
        return [_parse_scalar(p) for p in text.split(",") if p.strip()]
    return _parse_scalar(text)


def parse_config_text(text: str) -> dict:
    """Nested dict of sections; raises ConfigError with the line number."""
    tree: dict = {}
    section = tree
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = tree
            for part in line[1:-1].strip().split("."):
                if not part:
                    raise ConfigError(f"line {lineno}: empty section name")
                section = section.setdefault(part, {})
                if not isinstance(section, dict):
                    raise ConfigError(
                        f"line {lineno}: section {part!r} collides with a key")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value': {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        section[key] = parse_value(value)
    return tree


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def _get(tree: dict, section: str, key: str, default):
    try:
        value = tree[section][key]
    except KeyError:
        if default is None:
            raise ConfigError(f"missing required config key [{section}] {key}")
        return default
    return value


def _as_list(value) -> list:
    return value if isinstance(value, list) else [value]


@dataclass
class RunConfig:
    """Everything a run needs: schedule shape, data geometry, and the
    ablation switches that pick one of the four training variants."""

    seeds: list[int]
    out_dir: str
    replay: bool
    consistency: bool

    classes: int
    image_hw: tuple[int, int]
    per_class_train: int
    per_class_test: int
    noise: float

    hidden: list[int]

    lr_clean: float
    lr_adv: float
    momentum: float
    weight_decay: float
    batch_size: int
    epochs_clean: int
    epochs_adv: int

    capacity: int
    views: int
    jitter_scale: float
    shear_max_deg: float
    cutout_side: int

    tau: float
    weight: float
    inner_family: str
    inner_epsilon: float | None
    inner_alpha: float | None
    inner_steps: int

    epsilon: float
    alpha: float | None
    steps: int
    momentum_decay: float

    stage_families: list[str]

    raw: dict = field(default_factory=dict, repr=False)

    @property
    def variant(self) -> str:
        return variant_name(self.replay, self.consistency)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_tree(load_config_file(path))

    @classmethod
    def from_tree(cls, tree: dict) -> "RunConfig":
        hw = int(_get(tree, "data", "image_hw", 8))
        raw_families = _as_list(_get(tree, "schedule", "stages",
                                     ["fgsm", "bim", "pgd", "rfgsm", "mim"]))
        try:
            families = [canonical_family(str(f)) for f in raw_families]
        except ValueError as exc:
            raise ConfigError(f"schedule.stages: {exc}") from exc
        cfg = cls(
            seeds=[int(s) for s in _as_list(_get(tree, "run", "seeds", [0]))],
            out_dir=str(_get(tree, "run", "out", "runs/default")),
            replay=bool(_get(tree, "run", "replay", True)),
            consistency=bool(_get(tree, "run", "consistency", True)),
            classes=int(_get(tree, "data", "classes", 10)),
            image_hw=(hw, hw),
            per_class_train=int(_get(tree, "data", "per_class_train", 100)),
            per_class_test=int(_get(tree, "data", "per_class_test", 100)),
            noise=float(_get(tree, "data", "noise", 0.1)),
            hidden=[int(h) for h in _as_list(_get(tree, "model", "hidden",
                                                  [64, 64]))],
            lr_clean=float(_get(tree, "optim", "lr_clean", 0.05)),
            lr_adv=float(_get(tree, "optim", "lr_adv", 0.05)),
            momentum=float(_get(tree, "optim", "momentum", 0.9)),
            weight_decay=float(_get(tree, "optim", "weight_decay", 5e-4)),
            batch_size=int(_get(tree, "optim", "batch_size", 8)),
            epochs_clean=int(_get(tree, "optim", "epochs_clean", 10)),
            epochs_adv=int(_get(tree, "optim", "epochs_adv", 5)),
            capacity=int(_get(tree, "replay", "capacity", 1000)),
            views=int(_get(tree, "replay", "views", 8)),
            jitter_scale=float(_get(tree, "replay", "jitter_scale", 0.2)),
            shear_max_deg=float(_get(tree, "replay", "shear_max_deg", 30.0)),
            cutout_side=int(_get(tree, "replay", "cutout_side", 2)),
            tau=float(_get(tree, "consistency", "tau", 0.5)),
            weight=float(_get(tree, "consistency", "weight", 1.0)),
            inner_family=str(_get(tree, "consistency", "attack", "pgd")),
            inner_epsilon=_opt_float(tree, "consistency", "epsilon"),
            inner_alpha=_opt_float(tree, "consistency", "alpha"),
            inner_steps=int(_get(tree, "consistency", "steps", 10)),
            epsilon=float(_get(tree, "attacks", "epsilon", 8 / 255)),
            alpha=_opt_float(tree, "attacks", "alpha"),
            steps=int(_get(tree, "attacks", "steps", 10)),
            momentum_decay=float(_get(tree, "attacks", "momentum_decay", 1.0)),
            stage_families=families,
            raw=tree,
        )
        if cfg.classes < 2:
            raise ConfigError("data.classes must be at least 2")
        if not cfg.stage_families:
            raise ConfigError("schedule.stages must name at least one attack")
        return cfg

    # ------------------------------------------------------------- builders

    @property
    def layer_widths(self) -> list[int]:
        return [self.image_hw[0] * self.image_hw[1], *self.hidden, self.classes]

    def stage_attack(self, family: str) -> AttackSpec:
        return make_spec(family, self.epsilon, alpha=self.alpha,
                         steps=self.steps, momentum_decay=self.momentum_decay)

    def consistency_config(self) -> ConsistencyConfig:
        eps = self.epsilon if self.inner_epsilon is None else self.inner_epsilon
        if eps == 0:
            inner = AttackSpec("pgd", 0.0, 0.0)
        else:
            alpha = self.inner_alpha if self.inner_alpha else eps / 4
            inner = AttackSpec(canonical_family(self.inner_family), eps, alpha,
                               steps=self.inner_steps,
                               random_start=canonical_family(self.inner_family)
                               in ("pgd", "rfgsm"))
        pool = default_pool(self.jitter_scale, self.shear_max_deg,
                            self.cutout_side)
        return ConsistencyConfig(tau=self.tau, weight=self.weight, attack=inner,
                                 augmentations=tuple(pool),
                                 image_hw=self.image_hw)

    def schedule(self, seed: int) -> Schedule:
        stages = [StagePlan(0, "clean", None, self.epochs_clean, self.lr_clean)]
        for t, fam in enumerate(self.stage_families, start=1):
            stages.append(StagePlan(t, fam, self.stage_attack(fam),
                                    self.epochs_adv, self.lr_adv))
        return Schedule(stages, self.layer_widths, self.capacity,
                        self.consistency_config(), self.views, self.batch_size,
                        self.momentum, self.weight_decay, master_seed=seed)

    def resolved_text(self, seed: int | None = None) -> str:
        """Frozen copy of the effective configuration for the run directory."""
        seeds = [seed] if seed is not None else self.seeds
        lines = [
            "# resolved configuration (frozen at run time)",
            "[run]",
            f"out = {self.out_dir}",
            f"seeds = {', '.join(str(s) for s in seeds)}",
            f"replay = {str(self.replay).lower()}",
            f"consistency = {str(self.consistency).lower()}",
            "[data]",
            f"classes = {self.classes}",
            f"image_hw = {self.image_hw[0]}",
            f"per_class_train = {self.per_class_train}",
            f"per_class_test = {self.per_class_test}",
            f"noise = {self.noise!r}",
            "[model]",
            f"hidden = {', '.join(str(h) for h in self.hidden)}",
            "[optim]",
            f"lr_clean = {self.lr_clean!r}",
            f"lr_adv = {self.lr_adv!r}",
            f"momentum = {self.momentum!r}",
            f"weight_decay = {self.weight_decay!r}",
            f"batch_size = {self.batch_size}",
            f"epochs_clean = {self.epochs_clean}",
            f"epochs_adv = {self.epochs_adv}",
            "[replay]",
            f"capacity = {self.capacity}",
            f"views = {self.views}",
            f"jitter_scale = {self.jitter_scale!r}",
            f"shear_max_deg = {self.shear_max_deg!r}",
            f"cutout_side = {self.cutout_side}",
            "[consistency]",
            f"tau = {self.tau!r}",
            f"weight = {self.weight!r}",
            f"attack = {self.inner_family}",
        ]
        if self.inner_epsilon is not None:
            lines.append(f"epsilon = {self.inner_epsilon!r}")
        if self.inner_alpha is not None:
            lines.append(f"alpha = {self.inner_alpha!r}")
        lines += [
            f"steps = {self.inner_steps}",
            "[attacks]",
            f"epsilon = {self.epsilon!r}",
        ]
        if self.alpha is not None:
            lines.append(f"alpha = {self.alpha!r}")
        lines += [
            f"steps = {self.steps}",
            f"momentum_decay = {self.momentum_decay!r}",
            "[schedule]",
            f"stages = {', '.join(self.stage_families)}",
        ]
        return "\n".join(lines) + "\n"


def _opt_float(tree: dict, section: str, key: str) -> float | None:
    try:
        return float(tree[section][key])
    except KeyError:
        return None


def variant_name(replay: bool, consistency: bool) -> str:
    """Each switch pair maps to exactly one ablation variant."""
    return {
        (False, False): "baseline",
        (False, True): "consistency",
        (True, False): "replay",
        (True, True): "full",
    }[(bool(replay), bool(consistency))]


VARIANT_LABELS = {
    "baseline": "baseline",
    "consistency": "+consistency",
    "replay": "+replay",
    "full": "+replay+consistency",
}

VARIANT_SWITCHES = {
    "baseline": (False, False),
    "consistency": (False, True),
    "replay": (True, False),
    "full": (True, True),
}
