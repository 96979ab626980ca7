"""Named parameters, their optimizer state, and Adam / RMSprop updates."""

import logging

import numpy as np

from autodiff.tensor import Tensor
from facesculpt.exceptions import MissingGradientError, NonFiniteError
from facesculpt.storage import load_bundle, save_bundle

logger = logging.getLogger(__name__)


class ParamStore:
    """Parameter tensors keyed by name plus per-parameter optimizer state."""

    def __init__(self, dtype="float64"):
        self.dtype = np.dtype(dtype)
        self.params = {}
        self.state = {}
        self.step = 0
        self.hyper = {}

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def __len__(self):
        return len(self.params)

    def add(self, name, value):
        tensor = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = tensor
        self.state[name] = {}
        return tensor

    def names(self, prefix=None):
        return [name for name in self.params if prefix is None or name.startswith(prefix)]

    def values(self, names=None):
        return {name: self.params[name].value.copy() for name in (names or self.params)}

    def zero_grad(self, names=None):
        for name in names or self.params:
            self.params[name].grad = None

    def check_finite(self):
        for name, tensor in self.params.items():
            if not np.all(np.isfinite(tensor.value)):
                raise NonFiniteError(f"Parameter {name!r} is not finite", details={"param": name})
            if tensor.grad is not None and not np.all(np.isfinite(tensor.grad)):
                raise NonFiniteError(f"Gradient of {name!r} is not finite", details={"param": name})

    def _gradients(self, names):
        grads = {}
        for name in names:
            grad = self.params[name].grad
            if grad is None:
                raise MissingGradientError(f"No gradient for parameter {name!r}", details={"param": name})
            grads[name] = grad
        return grads

    def save(self, stem, metadata=None):
        arrays = {}
        entries = []
        for name, tensor in self.params.items():
            arrays[f"param/{name}"] = tensor.value
            state_keys = sorted(self.state[name])
            for key in state_keys:
                arrays[f"{key}/{name}"] = self.state[name][key]
            entries.append({"name": name, "shape": list(tensor.shape), "state": state_keys})
        manifest = {
            "params": entries,
            "hyper": self.hyper,
            "step": self.step,
            "param_dtype": self.dtype.name,
        }
        manifest.update(metadata or {})
        return save_bundle(stem, arrays, manifest, dtype=self.dtype.name)

    @classmethod
    def load(cls, stem):
        arrays, manifest = load_bundle(stem)
        store = cls(dtype=manifest.get("param_dtype", "float64"))
        for entry in manifest["params"]:
            name = entry["name"]
            store.add(name, arrays[f"param/{name}"])
            for key in entry["state"]:
                store.state[name][key] = arrays[f"{key}/{name}"].astype(store.dtype)
        store.step = manifest.get("step", 0)
        store.hyper = manifest.get("hyper", {})
        return store, manifest


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
    """Bias-corrected Adam update of ``names`` (default: every parameter)."""
    names = list(names or store.params)
    grads = store._gradients(names)
    for name in names:
        param = store.params[name]
        state = store.state[name]
        grad = grads[name]
        if "adam_m" not in state:
            state["adam_m"] = np.zeros_like(param.value)
            state["adam_v"] = np.zeros_like(param.value)
            state["adam_t"] = np.zeros((), dtype=store.dtype)
        state["adam_t"] = state["adam_t"] + 1
        t = float(state["adam_t"])
        state["adam_m"] = beta1 * state["adam_m"] + (1.0 - beta1) * grad
        state["adam_v"] = beta2 * state["adam_v"] + (1.0 - beta2) * grad * grad
        m_hat = state["adam_m"] / (1.0 - beta1**t)
        v_hat = state["adam_v"] / (1.0 - beta2**t)
        param.value = (param.value - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(store.dtype)
    store.step += 1
    store.hyper["adam"] = {"lr": lr, "beta1": beta1, "beta2": beta2, "eps": eps}


def rmsprop_step(store, lr, decay=0.99, eps=1e-8, names=None):
    """RMSprop update with a running mean of squared gradients."""
    names = list(names or store.params)
    grads = store._gradients(names)
    for name in names:
        param = store.params[name]
        state = store.state[name]
        grad = grads[name]
        if "rms_ms" not in state:
            state["rms_ms"] = np.zeros_like(param.value)
        state["rms_ms"] = decay * state["rms_ms"] + (1.0 - decay) * grad * grad
        param.value = (param.value - lr * grad / (np.sqrt(state["rms_ms"]) + eps)).astype(store.dtype)
    store.step += 1
    store.hyper["rmsprop"] = {"lr": lr, "decay": decay, "eps": eps}
