"""MLP feature extractor with a two-layer projection head.

``features`` gives the unit-norm raw features used by the nearest-mean
classifier, prototypes and the correlation penalty; ``embeddings`` passes the
same trunk output through the head and is only used by the metric-learning and
entropy terms.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as nd


@dataclass(frozen=True)
class ExtractorConfig:
    input_dim: int = 16
    hidden: tuple = (64, 64)
    feature_dim: int = 32
    head_hidden: int = 32
    head_out: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        dims = (self.input_dim, *self.hidden, self.feature_dim, self.head_hidden, self.head_out)
        if min(dims) < 1:
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.head_out < 2:
            raise ValueError("head_out must be at least 2")

    @property
    def trunk_dims(self):
        return (self.input_dim, *self.hidden, self.feature_dim)

    @property
    def head_dims(self):
        return (self.feature_dim, self.head_hidden, self.head_out)


def _linear_init(rng, fan_in, fan_out):
    # unit-variance pre-activations for standard-normal inputs
    bound = np.sqrt(3.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=fan_out)
    return w, b


@dataclass
class Extractor:
    config: ExtractorConfig
    trunk: list = field(default_factory=list)   # [(W, b), ...] as Tensors
    head: list = field(default_factory=list)

    @property
    def parameters(self):
        return [t for layer in self.trunk + self.head for t in layer]

    def parameter_arrays(self):
        return [p.data.copy() for p in self.parameters]

    def load_arrays(self, arrays):
        params = self.parameters
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise ValueError(f"parameter shape mismatch: {a.shape} vs {p.shape}")
            p.data = a.copy()
            p.zero_grad()

    def zero_grad(self):
        for p in self.parameters:
            p.zero_grad()

    def _check_input(self, x):
        x = np.asarray(x.data if isinstance(x, nd.Tensor) else x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] != self.config.input_dim:
            raise ValueError(f"expected a nonempty batch with {self.config.input_dim} columns, "
                             f"got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input batch contains non-finite values")
        return x

    def _layers(self, grad):
        if grad:
            return self.trunk, self.head
        detach = lambda layers: [(nd.Tensor(w.data), nd.Tensor(b.data)) for w, b in layers]
        return detach(self.trunk), detach(self.head)

    @staticmethod
    def _mlp(h, layers):
        for i, (w, b) in enumerate(layers):
            h = h @ w + b
            if i < len(layers) - 1:
                h = nd.relu(h)
        return h

    def trunk_output(self, x, grad=True):
        trunk, _ = self._layers(grad)
        return self._mlp(nd.Tensor(self._check_input(x)), trunk)

    def features(self, x, grad=True):
        return nd.l2_normalize(self.trunk_output(x, grad))

    def embeddings(self, x, grad=True):
        return self.forward(x, grad)[1]

    def forward(self, x, grad=True):
        """Return ``(features, embeddings)`` sharing one trunk pass."""
        trunk, head = self._layers(grad)
        raw = self._mlp(nd.Tensor(self._check_input(x)), trunk)
        return nd.l2_normalize(raw), nd.l2_normalize(self._mlp(raw, head))

    def features_array(self, x):
        return self.features(x, grad=False).data

    def copy(self):
        other = init_parameters(self.config, self.config.seed)
        other.load_arrays(self.parameter_arrays())
        return other


def init_parameters(cfg, seed=None):
    """Fan-in scaled uniform initialisation, fully determined by ``seed``."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)

    def build(dims):
        layers = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w, b = _linear_init(rng, fan_in, fan_out)
            layers.append((nd.Tensor(w, requires_grad=True), nd.Tensor(b, requires_grad=True)))
        return layers

    return Extractor(cfg, build(cfg.trunk_dims), build(cfg.head_dims))
