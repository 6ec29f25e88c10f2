import json
import math
from pathlib import Path

import pandas as pd

from core.errors import KernelError
from core.kernels import (
    Kernel,
    bump_kernel,
    hilbert_kernel,
    riesz_kernel,
    tabulated_kernel,
    zero_kernel,
)

ASSET_DIR = Path(__file__).resolve().parent

with open(ASSET_DIR / "kernel_library.json", "r") as f:
    KERNELS = json.load(f)
assert KERNELS is not None, "Kernel library not loaded properly"


def load_tabulated_kernel(path: str | Path, size_constant: float) -> Kernel:
    """Read a CSV of (x, K(x)) samples; the first two columns are used whatever their names."""
    path = Path(path)
    if not path.exists():
        raise KernelError(f"kernel table {path} does not exist")
    try:
        frame = pd.read_csv(path)
    except (OSError, UnicodeDecodeError, pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise KernelError(f"{path}: cannot read kernel table: {e}") from e
    if frame.shape[1] < 2:
        raise KernelError(f"{path}: expected two columns x,value")
    try:
        xs = frame.iloc[:, 0].to_numpy(dtype=float)
        values = frame.iloc[:, 1].to_numpy(dtype=float)
    except (TypeError, ValueError) as e:
        raise KernelError(f"{path}: non-numeric entries: {e}") from e
    return tabulated_kernel(xs, values, size_constant, label=f"custom:{path}")


def load_kernel(label: str, n: int | None = None, size_constant: float | None = None) -> Kernel:
    """
    Resolve a kernel label: zero, hilbert, bump, riesz:i or custom:<path>.
    `n` picks the dimension where the family allows several; `size_constant` is
    required for custom tables and overrides the registry value for built-ins.
    """
    name, _, arg = label.partition(":")
    if name == "custom":
        if not arg:
            raise KernelError("custom kernels need a path: custom:<path>")
        if size_constant is None:
            raise KernelError("custom kernels need a size constant A")
        return load_tabulated_kernel(arg, size_constant)

    if name not in KERNELS:
        raise KernelError(f"unknown kernel {label!r}; expected one of {sorted(KERNELS)} or custom:<path>")
    entry = KERNELS[name]
    dimensions = entry["dimensions"]
    n = dimensions[0] if n is None else n
    if n not in dimensions:
        raise KernelError(f"kernel {name!r} is available for n in {dimensions}, got {n}")
    A = entry["size_constant"] if size_constant is None else size_constant

    match name:
        case "zero":
            return zero_kernel(n, A)
        case "hilbert":
            return hilbert_kernel(A)
        case "bump":
            return bump_kernel(n, A)
        case "riesz":
            try:
                component = int(arg)
            except ValueError:
                raise KernelError(f"riesz kernels are labelled riesz:i, got {label!r}")
            return riesz_kernel(component, n, A)
    raise KernelError(f"no constructor for kernel {label!r}")


def kernel_oracle(name: str, key: str) -> float | None:
    return KERNELS.get(name, {}).get("oracles", {}).get(key)


def seminorm_oracle_key(family: str, r: float) -> str:
    """Oracle key of a seminorm run, e.g. hr_inf, hr_1, watson_1, hormander."""
    if family == "hormander":
        return family
    return f"{family}_{'inf' if math.isinf(r) else format(r, 'g')}"


def kernel_description(label: str) -> str:
    name = label.partition(":")[0]
    return KERNELS.get(name, {}).get("description", "tabulated kernel" if name == "custom" else "")
