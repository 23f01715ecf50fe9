"""Named parameter storage and weight initialization."""

from __future__ import annotations

import numpy as np

from .autodiff import Gradients, Tensor
from .errors import ShapeError, ValidationError


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init on [-s, s] with s = sqrt(6 / (fan_in + fan_out))."""
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


class ParameterStore:
    """Insertion-ordered map of parameter name -> Tensor.

    Iteration order is the registration order, which is fixed per model
    configuration, so optimizer sweeps and checkpoints are deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValidationError(f"parameter '{name}' registered twice")
        t = Tensor(np.array(array, dtype=np.float64))
        self._params[name] = t
        return t

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensor(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ValidationError(f"unknown parameter '{name}'") from None

    def value(self, name: str) -> np.ndarray:
        return self.tensor(name).value

    def assign(self, name: str, array: np.ndarray) -> None:
        """Overwrite a parameter's value in place (optimizer use only)."""
        t = self.tensor(name)
        array = np.asarray(array, dtype=np.float64)
        if array.shape != t.value.shape:
            raise ShapeError(
                f"assign to '{name}': expected shape {t.value.shape}, got {array.shape}"
            )
        t.value[...] = array

    def n_parameters(self) -> int:
        return sum(t.value.size for t in self._params.values())

    def grads_by_name(self, grads: Gradients) -> dict[str, np.ndarray]:
        """Gradient per parameter; zeros for parameters off the loss path."""
        return {name: grads.get(t) for name, t in self._params.items()}

    def state_dict(self) -> dict:
        return {
            name: {"shape": list(t.value.shape), "data": t.value.ravel().tolist()}
            for name, t in self._params.items()
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "ParameterStore":
        store = cls()
        for name, entry in state.items():
            try:
                shape = tuple(int(d) for d in entry["shape"])
                flat = np.asarray(entry["data"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as err:
                raise ValidationError(f"malformed parameter entry '{name}': {err}") from None
            if flat.size != int(np.prod(shape, dtype=np.int64)):
                raise ValidationError(
                    f"parameter '{name}': {flat.size} values do not fill shape {shape}"
                )
            if not np.all(np.isfinite(flat)):
                raise ValidationError(f"parameter '{name}' contains non-finite values")
            store.add(name, flat.reshape(shape))
        return store
