"""Configuration for corpus layout and pipeline knobs.

One plain-text ``key = value`` file drives both dataset generation and
evaluation. Full-line comments start with ``#``; keys are case-sensitive.
The palette is given as ``palette.<pixel> = <name>`` lines, where
``<pixel>`` is either a single 8-bit gray value or an ``r,g,b`` triple.
Background must map from pixel value 0 (or color 0,0,0) and always gets
category id 0; change categories are numbered in file order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError

CONNECTIVITIES = ("four", "eight")
LAYOUTS = ("split_dirs", "flat")
GPT_MODES = ("off", "stub", "live")
IMAGE_MODES = ("attachments", "stitched")
SPLITS = ("train", "val", "test")

BACKGROUND = 0


@dataclass(frozen=True)
class Palette:
    """Pixel-value/color -> category mapping decoded from config."""

    names: tuple[str, ...]                      # index == category id
    gray: dict[int, int] = field(default_factory=dict)
    rgb: dict[tuple[int, int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.names) < 2:
            raise ConfigError("palette needs background plus at least one change category")
        if self.gray.get(0, None) != BACKGROUND and self.rgb.get((0, 0, 0), None) != BACKGROUND:
            raise ConfigError("palette must map pixel value 0 (or color 0,0,0) to the background")

    @property
    def change_categories(self) -> list[tuple[int, str]]:
        return [(i, n) for i, n in enumerate(self.names) if i != BACKGROUND]

    def name_of(self, category_id: int) -> str:
        return self.names[category_id]


def default_palette() -> Palette:
    return Palette(names=("background", "road", "building"), gray={0: 0, 128: 1, 255: 2})


def _parse_palette_entries(entries: list[tuple[str, str]]) -> Palette:
    names: list[str] = []
    gray: dict[int, int] = {}
    rgb: dict[tuple[int, int, int], int] = {}

    def category_id(name: str, is_background: bool) -> int:
        if is_background:
            if not names:
                names.append(name)
            elif names[0] != name:
                raise ConfigError(f"background named twice: {names[0]!r} vs {name!r}")
            return BACKGROUND
        if name in names:
            return names.index(name)
        names.append(name)
        return len(names) - 1

    background_seen = False
    for spec, name in entries:
        if "," in spec:
            parts = [p.strip() for p in spec.split(",")]
            if len(parts) != 3 or not all(p.isdigit() for p in parts):
                raise ConfigError(f"bad palette color spec {spec!r}")
            color = tuple(int(p) for p in parts)
            is_bg = color == (0, 0, 0)
            rgb[color] = category_id(name, is_bg)
        else:
            if not spec.isdigit():
                raise ConfigError(f"bad palette value spec {spec!r}")
            value = int(spec)
            is_bg = value == 0
            gray[value] = category_id(name, is_bg)
        background_seen = background_seen or is_bg
    if not background_seen:
        raise ConfigError("palette is missing the background entry (pixel 0)")
    return Palette(names=tuple(names), gray=gray, rgb=rgb)


@dataclass(frozen=True)
class CorpusConfig:
    """Where the corpus lives on disk and how its change maps are coded."""

    dir_a: str = "A"
    dir_b: str = "B"
    dir_label: str = "label"
    caption_index: str = "captions.json"
    layout: str = "split_dirs"
    image_width: int = 256
    image_height: int = 256
    palette: Palette = field(default_factory=default_palette)


@dataclass(frozen=True)
class RunConfig:
    """Every pipeline knob; mirrored one-to-one by CLI flags."""

    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    seed: int = 0
    connectivity: str = "eight"
    epsilon: float | None = None        # None = auto (2% of max image dimension)
    precision: int = 2
    min_area: int = 0
    skip_unchanged: bool = False
    gpt_mode: str = "off"
    gpt_qa_pairs: int = 2
    gpt_fine_pairs: int = 2
    endpoint_base_url: str = ""
    endpoint_model: str = "stub-model"
    endpoint_auth_env: str = "OPENAI_API_KEY"
    endpoint_max_retries: int = 3
    endpoint_timeout: float = 30.0
    endpoint_concurrency: int = 2
    endpoint_temperature: float = 0.2
    image_mode: str = "attachments"
    eval_split: str = "test"
    jobs: int = 1
    prompt_overrides: dict = field(default_factory=dict)

    def epsilon_px(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 0.02 * max(self.corpus.image_width, self.corpus.image_height)

    def validate(self) -> None:
        if self.connectivity not in CONNECTIVITIES:
            raise ConfigError(f"connectivity must be one of {CONNECTIVITIES}")
        if self.corpus.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}")
        if self.gpt_mode not in GPT_MODES:
            raise ConfigError(f"gpt_mode must be one of {GPT_MODES}")
        if self.image_mode not in IMAGE_MODES:
            raise ConfigError(f"image_mode must be one of {IMAGE_MODES}")
        if not 1 <= self.precision <= 6:
            raise ConfigError("precision must be in [1, 6]")
        if self.min_area < 0:
            raise ConfigError("min_area must be >= 0")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.endpoint_max_retries < 0:
            raise ConfigError("endpoint_max_retries must be >= 0")
        if self.endpoint_concurrency < 1:
            raise ConfigError("endpoint_concurrency must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.corpus.image_width <= 0 or self.corpus.image_height <= 0:
            raise ConfigError("image dimensions must be positive")


_BOOL_TRUE = {"true", "1", "yes", "on"}
_BOOL_FALSE = {"false", "0", "no", "off"}


def _as_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in _BOOL_TRUE:
        return True
    if lowered in _BOOL_FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _as_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _as_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def parse_config_text(text: str) -> RunConfig:
    pairs: list[tuple[str, str]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))

    corpus_kwargs: dict = {}
    run_kwargs: dict = {}
    palette_entries: list[tuple[str, str]] = []
    prompt_overrides: dict = {}

    corpus_str = {"dir_a", "dir_b", "dir_label", "caption_index", "layout"}
    corpus_int = {"image_width", "image_height"}
    run_str = {
        "connectivity", "gpt_mode", "endpoint_base_url", "endpoint_model",
        "endpoint_auth_env", "image_mode", "eval_split",
    }
    run_int = {
        "seed", "precision", "min_area", "gpt_qa_pairs", "gpt_fine_pairs",
        "endpoint_max_retries", "endpoint_concurrency", "jobs",
    }
    run_float = {"endpoint_timeout", "endpoint_temperature"}
    run_bool = {"skip_unchanged"}

    for key, value in pairs:
        if key.startswith("palette."):
            palette_entries.append((key[len("palette."):], value))
        elif key.startswith("prompt."):
            prompt_overrides[key[len("prompt."):]] = value
        elif key in corpus_str:
            corpus_kwargs[key] = value
        elif key in corpus_int:
            corpus_kwargs[key] = _as_int(key, value)
        elif key == "epsilon":
            run_kwargs[key] = None if value.lower() == "auto" else _as_float(key, value)
        elif key in run_str:
            run_kwargs[key] = value
        elif key in run_int:
            run_kwargs[key] = _as_int(key, value)
        elif key in run_float:
            run_kwargs[key] = _as_float(key, value)
        elif key in run_bool:
            run_kwargs[key] = _as_bool(key, value)
        else:
            raise ConfigError(f"unknown config key {key!r}")

    if palette_entries:
        corpus_kwargs["palette"] = _parse_palette_entries(palette_entries)
    config = RunConfig(corpus=CorpusConfig(**corpus_kwargs), prompt_overrides=prompt_overrides, **run_kwargs)
    config.validate()
    return config


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def config_to_text(config: RunConfig) -> str:
    """Serialize the effective config; parse_config_text() inverts this."""
    c = config.corpus
    lines = [
        "# corpus layout",
        f"dir_a = {c.dir_a}",
        f"dir_b = {c.dir_b}",
        f"dir_label = {c.dir_label}",
        f"caption_index = {c.caption_index}",
        f"layout = {c.layout}",
        f"image_width = {c.image_width}",
        f"image_height = {c.image_height}",
    ]
    for value, cat in sorted(c.palette.gray.items()):
        lines.append(f"palette.{value} = {c.palette.names[cat]}")
    for color, cat in sorted(c.palette.rgb.items()):
        lines.append(f"palette.{color[0]},{color[1]},{color[2]} = {c.palette.names[cat]}")
    lines += [
        "",
        "# generation",
        f"seed = {config.seed}",
        f"connectivity = {config.connectivity}",
        f"epsilon = {'auto' if config.epsilon is None else config.epsilon}",
        f"precision = {config.precision}",
        f"min_area = {config.min_area}",
        f"skip_unchanged = {str(config.skip_unchanged).lower()}",
        f"gpt_mode = {config.gpt_mode}",
        f"gpt_qa_pairs = {config.gpt_qa_pairs}",
        f"gpt_fine_pairs = {config.gpt_fine_pairs}",
        "",
        "# endpoint",
        f"endpoint_base_url = {config.endpoint_base_url}",
        f"endpoint_model = {config.endpoint_model}",
        f"endpoint_auth_env = {config.endpoint_auth_env}",
        f"endpoint_max_retries = {config.endpoint_max_retries}",
        f"endpoint_timeout = {config.endpoint_timeout}",
        f"endpoint_concurrency = {config.endpoint_concurrency}",
        f"endpoint_temperature = {config.endpoint_temperature}",
        f"image_mode = {config.image_mode}",
        "",
        "# evaluation",
        f"eval_split = {config.eval_split}",
        f"jobs = {config.jobs}",
    ]
    for key in sorted(config.prompt_overrides):
        lines.append(f"prompt.{key} = {config.prompt_overrides[key]}")
    return "\n".join(lines) + "\n"


def apply_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Return a copy with non-None overrides applied (CLI flags beat file)."""
    corpus_fields = {"dir_a", "dir_b", "dir_label", "caption_index", "layout", "image_width", "image_height"}
    corpus_updates = {k: v for k, v in overrides.items() if k in corpus_fields and v is not None}
    run_updates = {k: v for k, v in overrides.items() if k not in corpus_fields and v is not None}
    updated = replace(
        config,
        corpus=replace(config.corpus, **corpus_updates) if corpus_updates else config.corpus,
        **run_updates,
    )
    updated.validate()
    return updated
