"""Interaction scoring heads over gathered per-entity feature rows.

Every predictor consumes a batch of gathered inputs and returns one scalar
score per interaction, with an explicit backward pass that produces exact
gradients with respect to both the inputs and its own parameters. All math
is float64.

Input layouts:
  rows    - (m, n_inputs, width): one feature row per tensor dimension.
  stacked - (m, n_inputs, width): slab of per-layer rows, entity-major;
            n_inputs counts rows of the slab, width is the layer rank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import propagation

__all__ = [
    "CpPredictor",
    "TuckerPredictor",
    "MlpPredictor",
    "ConvPredictor",
    "make_predictor",
    "cp_score",
    "tucker_score",
    "mlp_score",
    "conv_score",
    "ScoreBatch",
    "score_batch",
]

_LETTERS = "abcdefgh"


def _check_inputs(inputs: np.ndarray, n_inputs: int, width: int) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != n_inputs or x.shape[2] != width:
        raise ValueError(
            f"expected (m, {n_inputs}, {width}) inputs, got {x.shape}"
        )
    return x


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class CpPredictor:
    """Sum over components of the elementwise product of the input rows."""

    kind = "cp"
    layout = "rows"

    def __init__(self, n_inputs: int, width: int):
        self.n_inputs = n_inputs
        self.width = width

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {}

    def forward(self, inputs, params):
        x = _check_inputs(inputs, self.n_inputs, self.width)
        scores = x.prod(axis=1).sum(axis=1)
        return scores, {"inputs": x}

    def backward(self, d_scores, params, cache):
        x = cache["inputs"]
        d = np.asarray(d_scores, dtype=np.float64)
        d_in = np.empty_like(x)
        for n in range(self.n_inputs):
            others = [m for m in range(self.n_inputs) if m != n]
            d_in[:, n, :] = d[:, None] * x[:, others, :].prod(axis=1)
        return d_in, {}


class TuckerPredictor:
    """Dense-core contraction of the input rows.

    The core is initialized superdiagonal-one, so an untrained head starts
    out equal to the plain product score and learns off-diagonal mixing.
    """

    kind = "tucker"
    layout = "rows"

    def __init__(self, n_inputs: int, width: int):
        if n_inputs > len(_LETTERS):
            raise ValueError(f"core contraction supports <= {len(_LETTERS)} ways")
        self.n_inputs = n_inputs
        self.width = width
        dims = _LETTERS[: n_inputs]
        row_ops = ",".join(f"z{c}" for c in dims)
        self._fwd = f"{dims},{row_ops}->z"
        self._d_core = f"z,{row_ops}->{dims}"
        self._d_row = []
        for n in range(n_inputs):
            rest = ",".join(f"z{c}" for m, c in enumerate(dims) if m != n)
            rhs = f"->z{dims[n]}"
            self._d_row.append(f"{dims},z{',' if rest else ''}{rest}{rhs}")

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        core = np.zeros((self.width,) * self.n_inputs)
        idx = np.arange(self.width)
        core[tuple(idx for _ in range(self.n_inputs))] = 1.0
        return {"core": core}

    def forward(self, inputs, params):
        x = _check_inputs(inputs, self.n_inputs, self.width)
        core = params["core"]
        if core.shape != (self.width,) * self.n_inputs:
            raise ValueError(f"core must have shape {(self.width,) * self.n_inputs}")
        rows = [x[:, n, :] for n in range(self.n_inputs)]
        scores = np.einsum(self._fwd, core, *rows, optimize=True)
        return scores, {"rows": rows}

    def backward(self, d_scores, params, cache):
        rows = cache["rows"]
        core = params["core"]
        d = np.asarray(d_scores, dtype=np.float64)
        d_core = np.einsum(self._d_core, d, *rows, optimize=True)
        d_in = np.empty((d.size, self.n_inputs, self.width))
        for n in range(self.n_inputs):
            rest = [r for m, r in enumerate(rows) if m != n]
            d_in[:, n, :] = np.einsum(self._d_row[n], core, d, *rest, optimize=True)
        return d_in, {"core": d_core}


class MlpPredictor:
    """Feedforward head over the flattened input rows.

    Hidden layers use the rectifier; the output layer is linear with a
    scalar output.
    """

    kind = "mlp"
    layout = "rows"

    def __init__(self, n_inputs: int, width: int, hidden: tuple[int, ...] = (64, 64)):
        if not hidden or any(h < 1 for h in hidden):
            raise ValueError(f"hidden widths must be positive, got {hidden}")
        self.n_inputs = n_inputs
        self.width = width
        self.hidden = tuple(int(h) for h in hidden)
        self.in_dim = n_inputs * width

    def _layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.in_dim, *self.hidden, 1]
        return list(zip(widths[:-1], widths[1:]))

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for i, (din, dout) in enumerate(self._layer_dims()):
            params[f"w{i}"] = _glorot(rng, (dout, din), din, dout)
            params[f"b{i}"] = np.zeros(dout)
        return params

    def forward(self, inputs, params):
        x = _check_inputs(inputs, self.n_inputs, self.width)
        h = x.reshape(x.shape[0], self.in_dim)
        acts = [h]
        pres = []
        n_layers = len(self._layer_dims())
        for i in range(n_layers):
            z = acts[-1] @ params[f"w{i}"].T + params[f"b{i}"]
            pres.append(z)
            acts.append(np.maximum(z, 0.0) if i < n_layers - 1 else z)
        scores = acts[-1][:, 0]
        return scores, {"acts": acts, "pres": pres}

    def backward(self, d_scores, params, cache):
        acts, pres = cache["acts"], cache["pres"]
        d = np.asarray(d_scores, dtype=np.float64)
        n_layers = len(self._layer_dims())
        g = d[:, None]
        d_params = {}
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1:
                g = g * (pres[i] > 0)
            d_params[f"w{i}"] = g.T @ acts[i]
            d_params[f"b{i}"] = g.sum(axis=0)
            g = g @ params[f"w{i}"]
        d_in = g.reshape(d.size, self.n_inputs, self.width)
        return d_in, d_params


class ConvPredictor:
    """Two-stage convolutional head over an input slab.

    Stage one slides ``channels`` column filters of height n_inputs over the
    slab (valid, stride 1), giving a channels-by-width activation map.
    Stage two reduces the width axis with ``channels`` filters that also sum
    across stage-one channels, giving a channel vector. A two-layer
    perceptron maps that vector to the score. Both stages and the perceptron
    hidden layer use the rectifier.
    """

    kind = "conv"

    def __init__(
        self,
        n_inputs: int,
        width: int,
        channels: int | None = None,
        head_hidden: int = 64,
        layout: str = "rows",
    ):
        self.n_inputs = n_inputs
        self.width = width
        self.channels = int(channels) if channels else width
        self.head_hidden = int(head_hidden)
        self.layout = layout
        if self.channels < 1 or self.head_hidden < 1:
            raise ValueError("channels and head_hidden must be positive")

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        c, m, r, h = self.channels, self.n_inputs, self.width, self.head_hidden
        return {
            "w1": _glorot(rng, (c, m), m, c),
            "b1": np.zeros(c),
            "w2": _glorot(rng, (c, c, r), c * r, c),
            "b2": np.zeros(c),
            "wh": _glorot(rng, (h, c), c, h),
            "bh": np.zeros(h),
            "wo": _glorot(rng, (1, h), h, 1),
            "bo": np.zeros(1),
        }

    def forward(self, inputs, params):
        x = _check_inputs(inputs, self.n_inputs, self.width)
        z1 = np.einsum("cm,bmr->bcr", params["w1"], x) + params["b1"][:, None]
        h1 = np.maximum(z1, 0.0)
        z2 = np.einsum("dcr,bcr->bd", params["w2"], h1) + params["b2"]
        h2 = np.maximum(z2, 0.0)
        z3 = h2 @ params["wh"].T + params["bh"]
        h3 = np.maximum(z3, 0.0)
        scores = (h3 @ params["wo"].T + params["bo"])[:, 0]
        cache = {"x": x, "z1": z1, "h1": h1, "z2": z2, "h2": h2, "z3": z3, "h3": h3}
        return scores, cache

    def backward(self, d_scores, params, cache):
        d = np.asarray(d_scores, dtype=np.float64)
        g3 = d[:, None] * params["wo"]
        g3 = g3 * (cache["z3"] > 0)
        d_wh = g3.T @ cache["h2"]
        d_bh = g3.sum(axis=0)
        g2 = g3 @ params["wh"]
        g2 = g2 * (cache["z2"] > 0)
        d_w2 = np.einsum("bd,bcr->dcr", g2, cache["h1"])
        d_b2 = g2.sum(axis=0)
        g1 = np.einsum("bd,dcr->bcr", g2, params["w2"])
        g1 = g1 * (cache["z1"] > 0)
        d_w1 = np.einsum("bcr,bmr->cm", g1, cache["x"])
        d_b1 = g1.sum(axis=(0, 2))
        d_in = np.einsum("bcr,cm->bmr", g1, params["w1"])
        d_params = {
            "w1": d_w1,
            "b1": d_b1,
            "w2": d_w2,
            "b2": d_b2,
            "wh": d_wh,
            "bh": d_bh,
            "wo": (d[None, :] @ cache["h3"]),
            "bo": np.array([d.sum()]),
        }
        return d_in, d_params


def make_predictor(
    kind: str,
    n_dims: int,
    rank: int,
    n_layers: int,
    fusion: str,
    mlp_hidden: tuple[int, ...] = (64, 64),
    conv_channels: int | None = None,
    head_hidden: int = 64,
):
    """Build a predictor sized for the given fusion geometry.

    Under concat fusion the row-consuming heads see width (L+1)*rank, while
    the convolutional head sees a stacked slab of (L+1)*N rows at the layer
    rank. Under the other fusion operators every head sees N rows of the
    layer rank.
    """
    concat = fusion == "concat"
    width = (n_layers + 1) * rank if concat else rank
    if kind == "cp":
        return CpPredictor(n_dims, width)
    if kind == "tucker":
        return TuckerPredictor(n_dims, width)
    if kind == "mlp":
        return MlpPredictor(n_dims, width, hidden=mlp_hidden)
    if kind == "conv":
        n_rows = (n_layers + 1) * n_dims if concat else n_dims
        return ConvPredictor(
            n_rows,
            rank,
            channels=conv_channels,
            head_hidden=head_hidden,
            layout="stacked" if concat else "rows",
        )
    raise ValueError(f"unknown predictor kind {kind!r}")


def cp_score(rows: np.ndarray) -> float:
    """Score one interaction from its (N, width) feature rows."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected (N, width) rows, got {rows.shape}")
    return float(rows.prod(axis=0).sum())


def tucker_score(rows: np.ndarray, core: np.ndarray) -> float:
    """Score one interaction by contracting its rows against a dense core."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected (N, width) rows, got {rows.shape}")
    p = TuckerPredictor(rows.shape[0], rows.shape[1])
    scores, _ = p.forward(rows[None], {"core": np.asarray(core, dtype=np.float64)})
    return float(scores[0])


def mlp_score(rows: np.ndarray, params: dict[str, np.ndarray]) -> float:
    """Score one interaction with a feedforward head; geometry from params."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError(f"expected (N, width) rows, got {rows.shape}")
    n_hidden = len(params) // 2 - 1
    hidden = tuple(params[f"w{i}"].shape[0] for i in range(n_hidden))
    p = MlpPredictor(rows.shape[0], rows.shape[1], hidden=hidden)
    scores, _ = p.forward(rows[None], params)
    return float(scores[0])


def conv_score(slab: np.ndarray, params: dict[str, np.ndarray]) -> float:
    """Score one interaction slab with the convolutional head."""
    slab = np.asarray(slab, dtype=np.float64)
    if slab.ndim != 2:
        raise ValueError(f"expected (rows, width) slab, got {slab.shape}")
    p = ConvPredictor(
        slab.shape[0],
        slab.shape[1],
        channels=params["w1"].shape[0],
        head_hidden=params["wh"].shape[0],
    )
    scores, _ = p.forward(slab[None], params)
    return float(scores[0])


@dataclass(eq=False)
class ScoreBatch:
    """Scores for a batch of interactions plus the state to differentiate them."""

    scores: np.ndarray
    predictor: object
    params: dict[str, np.ndarray]
    cache: dict

    def backward(self, d_scores: np.ndarray):
        """Per-example input gradients and parameter gradients."""
        return self.predictor.backward(d_scores, self.params, self.cache)


def score_batch(
    predictor,
    features,
    interactions: np.ndarray,
    offsets: tuple[int, ...],
    params: dict[str, np.ndarray],
) -> ScoreBatch:
    """Gather per-interaction inputs from fused features and score them.

    ``features`` is the fused (n_nodes, width) matrix for row-consuming
    predictors, or the list of per-layer matrices for the slab-consuming
    convolutional head.
    """
    if predictor.layout == "stacked":
        layers = features if isinstance(features, list) else [features]
        inputs = propagation.gather_stacked(layers, interactions, offsets)
    else:
        inputs = propagation.gather_rows(features, interactions, offsets)
    scores, cache = predictor.forward(inputs, params)
    return ScoreBatch(scores=scores, predictor=predictor, params=params, cache=cache)
