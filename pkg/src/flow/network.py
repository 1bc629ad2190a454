"""
The IDFF network.

A shared SiLU trunk reads ``[x_t, time embedding, step embedding]`` and feeds
K+1 zero-initialized linear heads: a residual denoiser head (x1_hat = x_t +
head) and one standardized noise head per derivative order.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import ConfigurationError, DimensionMismatchError, DomainError, ZeroBandwidthError
from src.core.rng import make_rng
from src.core.tensor import Graph, Tensor, forward_eval
from src.data.models import ModelConfig, PathConfig
from src.utils.logging import get_logger

logger = get_logger(__name__)

TIME_FREQUENCIES = np.geomspace(1.0, 64.0, 8)
TIME_FEATURES = 2 * TIME_FREQUENCIES.size

StepLike = Union[None, int, Sequence[int], np.ndarray]


def sinusoidal_features(t: Union[float, np.ndarray]) -> np.ndarray:
    """[sin(f t), cos(f t)] over log-spaced frequencies; returns (B, 16)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    phase = t[:, None] * TIME_FREQUENCIES[None, :]
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=1)


@dataclass
class HeadOutputs:
    """Denoiser estimate and the K standardized derivative predictions."""
    x1_hat: np.ndarray
    n_hat: List[np.ndarray] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.n_hat)


@dataclass
class NetworkNodes:
    """Node ids of a built network graph."""
    x1_hat: int
    heads: List[int]
    param_names: List[str]


def score_from_heads(out: HeadOutputs, sigma_t: Union[float, np.ndarray]) -> List[np.ndarray]:
    """
    Convert standardized head outputs into derivative estimates.

    Order 1: -n/sigma, order 2 (diagonal): -n/sigma^2, order k >= 3: n/sigma^3.
    ``sigma_t`` is a scalar or one value per batch row.
    """
    sigma = np.asarray(sigma_t, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise ZeroBandwidthError(f"sigma_t must be positive, got {sigma_t}")
    if sigma.ndim == 1 and out.x1_hat.ndim == 2:
        sigma = sigma[:, None]
    estimates: List[np.ndarray] = []
    for order, n_hat in enumerate(out.n_hat, start=1):
        if order == 1:
            estimates.append(-n_hat / sigma)
        elif order == 2:
            estimates.append(-n_hat / (sigma * sigma))
        else:
            estimates.append(n_hat / sigma**3)
    return estimates


class IDFFNet:
    """
    MLP trunk with time/step embeddings and K+1 heads.

    ``path`` is the bridge the heads were trained on; samplers default to it.
    """

    def __init__(
        self,
        config: ModelConfig,
        seed: Union[int, np.random.Generator] = 0,
        path: Optional[PathConfig] = None,
    ):
        self.config = config
        self.path = path or PathConfig()
        self.logger = logger.bind(name="IDFFNet")
        rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
        self.params: Dict[str, Tensor] = self._init_params(rng)

    # -- parameters -------------------------------------------------------

    @property
    def K(self) -> int:
        return self.config.K

    @property
    def data_dim(self) -> int:
        return self.config.data_dim

    @property
    def n_steps(self) -> Optional[int]:
        return self.config.n_embed

    def _init_params(self, rng: np.random.Generator) -> Dict[str, Tensor]:
        cfg = self.config
        emb = cfg.time_embed_dim
        params: Dict[str, np.ndarray] = {}

        params["time_w"] = rng.standard_normal((TIME_FEATURES, emb)) / np.sqrt(TIME_FEATURES)
        params["time_b"] = np.zeros(emb)
        width = cfg.data_dim + emb
        if cfg.n_embed is not None:
            params["step_table"] = rng.standard_normal((cfg.n_embed, emb))
            width += emb

        for layer in range(cfg.depth):
            params[f"trunk{layer}_w"] = rng.standard_normal((width, cfg.hidden_dim)) * np.sqrt(2.0 / width)
            params[f"trunk{layer}_b"] = np.zeros(cfg.hidden_dim)
            width = cfg.hidden_dim

        # Zero heads: x1_hat == xt and every noise head is 0 at initialization.
        for order in range(cfg.K + 1):
            params[f"head{order}_w"] = np.zeros((cfg.hidden_dim, cfg.data_dim))
            params[f"head{order}_b"] = np.zeros(cfg.data_dim)

        return {name: Tensor(value, requires_grad=True) for name, value in params.items()}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ConfigurationError(
                f"parameter names {sorted(state)} do not match the model {sorted(self.params)}"
            )
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            if value.shape != self.params[name].shape:
                raise DimensionMismatchError(
                    f"parameter '{name}' has shape {value.shape}, expected {self.params[name].shape}"
                )
            self.params[name] = Tensor(value.copy(), requires_grad=True)

    def copy(self) -> "IDFFNet":
        clone = IDFFNet.__new__(IDFFNet)
        clone.config = self.config
        clone.path = self.path
        clone.logger = self.logger
        clone.params = {name: Tensor(t.data.copy(), requires_grad=True) for name, t in self.params.items()}
        return clone

    # -- graph ------------------------------------------------------------

    def build(self, graph: Graph) -> NetworkNodes:
        """Append the network to ``graph``; inputs are ``xt``, ``time_feat`` and ``step_onehot``."""
        cfg = self.config
        node = {name: graph.input(name) for name in self.params}
        xt = graph.input("xt")
        time_feat = graph.input("time_feat")

        parts = [xt, graph.affine(time_feat, node["time_w"], node["time_b"])]
        if cfg.n_embed is not None:
            onehot = graph.input("step_onehot")
            parts.append(graph.matmul(onehot, node["step_table"]))
        h = graph.concat(parts, axis=-1)

        for layer in range(cfg.depth):
            h = graph.silu(graph.affine(h, node[f"trunk{layer}_w"], node[f"trunk{layer}_b"]))

        x1_hat = graph.add(xt, graph.affine(h, node["head0_w"], node["head0_b"]))
        heads = [
            graph.affine(h, node[f"head{order}_w"], node[f"head{order}_b"])
            for order in range(1, cfg.K + 1)
        ]
        return NetworkNodes(x1_hat=x1_hat, heads=heads, param_names=list(self.params))

    def encode_inputs(
        self, xt: np.ndarray, t: Union[float, np.ndarray], n: StepLike = None
    ) -> Tuple[Dict[str, np.ndarray], bool]:
        """Validate (xt, t, n) and return the graph feed plus whether xt was a single vector."""
        xt = np.asarray(xt, dtype=np.float64)
        single = xt.ndim == 1
        batch = xt[None, :] if single else xt
        if batch.ndim != 2 or batch.shape[1] != self.data_dim:
            raise DimensionMismatchError(f"xt has shape {xt.shape}, model expects dimension {self.data_dim}")
        B = batch.shape[0]

        t_arr = np.asarray(t, dtype=np.float64)
        if t_arr.ndim == 0:
            t_arr = np.full(B, float(t_arr))
        if t_arr.shape != (B,):
            raise DimensionMismatchError(f"t has shape {t_arr.shape}, expected ({B},)")
        if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
            raise DomainError("t must lie in [0, 1]")

        feed: Dict[str, np.ndarray] = {"xt": batch, "time_feat": sinusoidal_features(t_arr)}
        N = self.config.n_embed
        if N is None:
            if n is not None:
                raise ConfigurationError("step index given to a model without step embedding")
        else:
            if n is None:
                raise ConfigurationError("time-series model requires a step index n")
            n_arr = np.asarray(n, dtype=np.int64)
            if n_arr.ndim == 0:
                n_arr = np.full(B, int(n_arr))
            if n_arr.shape != (B,):
                raise DimensionMismatchError(f"n has shape {n_arr.shape}, expected ({B},)")
            if np.any(n_arr < 1) or np.any(n_arr > N):
                raise DomainError(f"step index must lie in 1..{N}")
            feed["step_onehot"] = np.eye(N)[n_arr - 1]
        return feed, single

    def forward(self, xt: np.ndarray, t: Union[float, np.ndarray], n: StepLike = None) -> HeadOutputs:
        """Evaluate all heads at (xt, t, n); ``xt`` is one vector or a (B, d) batch."""
        feed, single = self.encode_inputs(xt, t, n)
        graph = Graph()
        nodes = self.build(graph)
        inputs: Dict[str, object] = dict(feed)
        inputs.update({name: Tensor(p.data) for name, p in self.params.items()})
        x1_hat = forward_eval(graph, inputs, output=nodes.x1_hat).data  # type: ignore[arg-type]
        n_hat = [graph.value(head).copy() for head in nodes.heads]
        if single:
            return HeadOutputs(x1_hat=x1_hat[0], n_hat=[h[0] for h in n_hat])
        return HeadOutputs(x1_hat=x1_hat, n_hat=n_hat)

    predict = forward
