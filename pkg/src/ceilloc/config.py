"""Runtime configuration: parameter bundle and the ``key = value`` file format.

Defaults follow the deployed heavy-vehicle configuration (search range 40 px,
patch 40 px, suppression 0.5 over 10 px, min inlier fraction 60%, max
displacement 2 m). Unknown keys in a config file are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .homest import Intrinsics
from .matcher import MatchConfig
from .sampler import SelectConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    """Refinement acceptance filters."""

    n_th: float = 0.60  # min inlier fraction
    d_th: float = 2.0   # max |translation| per axis, metres

    def __post_init__(self):
        if not (0.0 < self.n_th <= 1.0):
            raise ValueError("n_th must be in (0, 1]")
        if self.d_th <= 0:
            raise ValueError("d_th must be positive")


@dataclass(frozen=True)
class RansacConfig:
    epsilon: float = 3.0
    max_iters: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one refinement run needs."""

    l_patch: int = 40
    l_sr: int = 40
    reject_ratio: float = 0.8
    max_sad: float = 40.0
    n_points: int = 12
    rho: float = 0.5
    l_n: int = 10
    margin: int = 0          # 0 = derive from the patch size
    grid_points: int = 24
    sampler: str = "auto"    # auto | heatmap | grid
    ransac_epsilon: float = 3.0
    ransac_max_iters: int = 500
    ransac_seed: int = 0
    n_th: float = 0.60
    d_th: float = 2.0
    k_refs: int = 1
    scale_m_per_px: float | None = None
    ceiling_height: float | None = None
    fx: float | None = None
    fy: float | None = None
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        if self.sampler not in ("auto", "heatmap", "grid"):
            raise ValueError(f"bad sampler mode {self.sampler!r}")
        if self.k_refs < 1:
            raise ValueError("k_refs must be >= 1")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.scale_m_per_px is not None and self.scale_m_per_px <= 0:
            raise ValueError("scale_m_per_px must be positive")
        # constructing the sub-configs validates the remaining fields
        self.match_config()
        self.filter_config()
        self.ransac_config()

    def match_config(self) -> MatchConfig:
        return MatchConfig(l_patch=self.l_patch, l_sr=self.l_sr,
                           reject_ratio=self.reject_ratio, max_sad=self.max_sad)

    def effective_margin(self) -> int:
        return self.margin if self.margin > 0 else self.match_config().margin

    def select_config(self) -> SelectConfig:
        return SelectConfig(n_points=self.n_points, rho=self.rho, l_n=self.l_n,
                            margin=self.effective_margin())

    def filter_config(self) -> FilterConfig:
        return FilterConfig(n_th=self.n_th, d_th=self.d_th)

    def ransac_config(self) -> RansacConfig:
        return RansacConfig(epsilon=self.ransac_epsilon,
                            max_iters=self.ransac_max_iters, seed=self.ransac_seed)

    def intrinsics(self, image_size: tuple[int, int] | None = None) -> Intrinsics:
        """Configured intrinsics, or the uncalibrated fast-path convention
        (unit focal length, principal point at the image centre)."""
        if self.fx is not None and self.fy is not None:
            cx = self.cx if self.cx is not None else 0.0
            cy = self.cy if self.cy is not None else 0.0
            return Intrinsics(fx=self.fx, fy=self.fy, cx=cx, cy=cy)
        if image_size is not None:
            w, h = image_size
            return Intrinsics(fx=1.0, fy=1.0, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0)
        return Intrinsics()


_INT_KEYS = {"l_patch", "l_sr", "n_points", "l_n", "margin", "grid_points",
             "ransac_max_iters", "ransac_seed", "k_refs"}
_FLOAT_KEYS = {"reject_ratio", "max_sad", "rho", "ransac_epsilon", "n_th", "d_th",
               "scale_m_per_px", "ceiling_height", "fx", "fy", "cx", "cy"}
_STR_KEYS = {"sampler"}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def parse_config(path: str | Path) -> PipelineConfig:
    """Parse a ``key = value`` file; '#' lines are comments, unknown keys are
    errors."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in _ALL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from e
    try:
        return PipelineConfig(**values)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


def write_config(cfg: PipelineConfig, path: str | Path) -> None:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")
