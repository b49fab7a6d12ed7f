import os
from dataclasses import dataclass, field


def _to_bool(val: str | None, default: bool = False) -> bool:
    if val is None:
        return default
    return val.strip().lower() in {"1", "true", "yes", "y", "on"}


def _to_int(val: str | None) -> int | None:
    return int(val) if val not in (None, "") else None


@dataclass
class Settings:
    # unset values fall back to the scenario file
    results_dir: str | None = field(default_factory=lambda: os.environ.get("SLAPRICING_RESULTS_DIR"))
    scenario: str | None = field(default_factory=lambda: os.environ.get("SLAPRICING_SCENARIO"))
    seed: int | None = field(default_factory=lambda: _to_int(os.environ.get("SLAPRICING_SEED")))
    jobs: int | None = field(default_factory=lambda: _to_int(os.environ.get("SLAPRICING_JOBS")))
    parallel: int = field(default_factory=lambda: int(os.environ.get("SLAPRICING_PARALLEL", "1")))
    progress: bool = field(default_factory=lambda: _to_bool(os.environ.get("SLAPRICING_PROGRESS"), True))
    debug: bool = field(
        default_factory=lambda: _to_bool(os.environ.get("SLAPRICING_DEBUG") or os.environ.get("DEBUG"), False)
    )


def get_settings() -> Settings:
    return Settings()
