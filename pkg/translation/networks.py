"""Landmark translation network: autoencoder branch, disentangling translation
branch, discriminator and style-class classifier, all plain MLPs over PCA
coefficient vectors.
"""

import json
import logging
from pathlib import Path

import numpy as np

from autodiff import ops
from autodiff.params import ParamStore
from autodiff.tensor import Tensor

logger = logging.getLogger(__name__)

# name -> number of affine layers
LAYER_COUNTS = {
    "E_X": 8,
    "G_X": 8,
    "E_Y_C": 8,
    "E_Y_S": 16,
    "G_Y": 8,
    "D_Y": 4,
    "CL": 4,
}


def network_dims(name, coeff_dim, style_dim, hidden, n_classes):
    inputs = {
        "E_X": coeff_dim,
        "G_X": coeff_dim,
        "E_Y_C": coeff_dim,
        "E_Y_S": coeff_dim,
        "G_Y": coeff_dim + style_dim,
        "D_Y": coeff_dim,
        "CL": coeff_dim,
    }
    outputs = {
        "E_X": coeff_dim,
        "G_X": coeff_dim,
        "E_Y_C": coeff_dim,
        "E_Y_S": 2 * style_dim,
        "G_Y": coeff_dim,
        "D_Y": 1,
        "CL": n_classes,
    }
    layers = LAYER_COUNTS[name]
    return [inputs[name]] + [hidden] * (layers - 1) + [outputs[name]]


class Mlp:
    """Affine layers with ReLU between them; the last layer stays affine."""

    def __init__(self, name, dims, store):
        self.name = name
        self.dims = list(dims)
        self.store = store

    @property
    def n_layers(self):
        return len(self.dims) - 1

    def param_names(self):
        return [f"{self.name}.{i}.{kind}" for i in range(self.n_layers) for kind in ("weight", "bias")]

    def initialize(self, rng):
        for i, (fan_in, fan_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            gain = 2.0 if i < self.n_layers - 1 else 1.0
            weight = rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_out, fan_in))
            self.store.add(f"{self.name}.{i}.weight", weight)
            self.store.add(f"{self.name}.{i}.bias", np.zeros(fan_out))

    def __call__(self, x):
        h = x
        for i in range(self.n_layers):
            h = ops.affine(h, self.store[f"{self.name}.{i}.weight"], self.store[f"{self.name}.{i}.bias"])
            if i < self.n_layers - 1:
                h = ops.relu(h)
        return h


class TranslationModel:
    def __init__(self, store, coeff_dim=32, style_dim=8, hidden=128, n_classes=25, frozen=()):
        self.store = store
        self.coeff_dim = coeff_dim
        self.style_dim = style_dim
        self.hidden = hidden
        self.n_classes = n_classes
        self.frozen = set(frozen)
        self.networks = {
            name: Mlp(name, network_dims(name, coeff_dim, style_dim, hidden, n_classes), store)
            for name in LAYER_COUNTS
        }

    @classmethod
    def build(cls, seed=0, coeff_dim=32, style_dim=8, hidden=128, n_classes=25, dtype="float64"):
        store = ParamStore(dtype=dtype)
        model = cls(store, coeff_dim, style_dim, hidden, n_classes)
        rng = np.random.default_rng(seed)
        for network in model.networks.values():
            network.initialize(rng)
        logger.info(
            "translation_model_built params=%d hidden=%d style_dim=%d classes=%d",
            sum(t.size for t in store.params.values()),
            hidden,
            style_dim,
            n_classes,
        )
        return model

    @property
    def dtype(self):
        return self.store.dtype

    def tensor(self, values):
        if isinstance(values, Tensor):
            return values
        return Tensor(np.asarray(values, dtype=self.dtype))

    def param_names(self, *networks):
        names = []
        for name in networks:
            names.extend(self.networks[name].param_names())
        return names

    def trainable(self, *networks):
        return [name for name in self.param_names(*networks) if name.split(".")[0] not in self.frozen]

    def freeze(self, *networks):
        self.frozen.update(networks)

    # Forward passes

    def encode_x(self, coeffs):
        return self.networks["E_X"](self.tensor(coeffs))

    def decode_x(self, content):
        return self.networks["G_X"](self.tensor(content))

    def encode_content_y(self, coeffs):
        return self.networks["E_Y_C"](self.tensor(coeffs))

    def encode_style_y(self, coeffs):
        """Style code mean and log-variance."""
        out = self.networks["E_Y_S"](self.tensor(coeffs))
        return ops.slice_cols(out, 0, self.style_dim), ops.slice_cols(out, self.style_dim, 2 * self.style_dim)

    def decode_y(self, content, style):
        return self.networks["G_Y"](ops.concat([self.tensor(content), self.tensor(style)], axis=1))

    def discriminate(self, coeffs):
        return self.networks["D_Y"](self.tensor(coeffs))

    def classify(self, coeffs):
        return self.networks["CL"](self.tensor(coeffs))

    def sample_style(self, mean, log_var, noise):
        return ops.add(mean, ops.mul(ops.exp(ops.scale(log_var, 0.5)), self.tensor(noise)))

    # Persistence

    def architecture(self):
        return {
            "coeff_dim": self.coeff_dim,
            "style_dim": self.style_dim,
            "hidden": self.hidden,
            "n_classes": self.n_classes,
            "frozen": sorted(self.frozen),
            "networks": {
                name: {"layers": net.n_layers, "dims": net.dims} for name, net in self.networks.items()
            },
        }

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "architecture.json").write_text(json.dumps(self.architecture(), indent=2, sort_keys=True))
        self.store.save(directory / "params", metadata={"architecture": self.architecture()})
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        architecture = json.loads((directory / "architecture.json").read_text())
        store, _ = ParamStore.load(directory / "params")
        return cls(
            store,
            coeff_dim=architecture["coeff_dim"],
            style_dim=architecture["style_dim"],
            hidden=architecture["hidden"],
            n_classes=architecture["n_classes"],
            frozen=architecture["frozen"],
        )
