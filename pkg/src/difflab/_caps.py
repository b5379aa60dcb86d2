import os

DEFAULT_DENSE_CAP = 4096
HARD_DENSE_CAP = 65536


def dense_cap() -> int:
    """Dense state-space cap, overridable through DIFFLAB_DENSE_CAP."""
    raw = os.environ.get("DIFFLAB_DENSE_CAP")
    if not raw:
        return DEFAULT_DENSE_CAP
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"DIFFLAB_DENSE_CAP must be an integer, got {raw!r}") from exc
    if cap < 1 or cap > HARD_DENSE_CAP:
        raise ValueError(f"DIFFLAB_DENSE_CAP must be in [1, {HARD_DENSE_CAP}]")
    return cap
