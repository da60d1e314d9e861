"""Named problem sizes.

The cg small/medium/large cubes are the usual HPCCG problem sizes.  Anything
labelled ``desk`` or ``bench`` is sized for a laptop.
"""

from dataclasses import dataclass

PRESETS = {
    "cg": {
        "desk": (16, 16, 16),
        "bench": (16, 16, 32),
        "small": (64, 64, 64),
        "medium": (128, 128, 128),
        "large": (192, 192, 192),
    },
    "jacobi": {
        "desk": (64, 64),
        "small": (128, 128),
        "medium": (256, 256),
        "large": (512, 512),
    },
}

DIMS = {"cg": 3, "jacobi": 2}
DEFAULT_ITERS = {"cg": 60, "jacobi": 100}


@dataclass(frozen=True)
class InputPreset:
    workload: str
    label: str
    dims: tuple


def resolve_input(workload, value=None):
    """``value`` is a preset label or explicit ``WxH[xD]`` dimensions."""
    if workload not in PRESETS:
        raise ValueError(f"unknown workload {workload!r}; choose from {sorted(PRESETS)}")
    if value is None:
        value = "desk"
    if isinstance(value, (tuple, list)):
        dims = tuple(int(d) for d in value)
        label = "x".join(map(str, dims))
    elif value in PRESETS[workload]:
        return InputPreset(workload, value, PRESETS[workload][value])
    else:
        try:
            dims = tuple(int(d) for d in str(value).lower().split("x"))
        except ValueError:
            raise ValueError(f"bad input {value!r}: expected a preset "
                             f"({'|'.join(PRESETS[workload])}) or dimensions") from None
        label = str(value).lower()
    if len(dims) != DIMS[workload] or any(d < 1 for d in dims):
        raise ValueError(f"{workload} needs {DIMS[workload]} positive dimensions, got {value!r}")
    return InputPreset(workload, label, dims)
