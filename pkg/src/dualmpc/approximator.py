"""ReLU network approximation of the MPC law and the dual-mode controller.

The network is a plain numpy MLP with hand-written backpropagation,
trained full-batch with Adam on the mean squared input error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dualmpc import polytope as pt
from dualmpc.polytope import HPolytope


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights ``W_i`` (out x in) and biases ``b_i`` of each affine layer.

    `input_scale`, when set, divides the input elementwise before the
    first layer.
    """

    weights: tuple
    biases: tuple
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ValueError("need at least two affine layers with matching biases")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.size:
                raise ValueError(f"layer {i}: bias size {b.size} != {W.shape[0]} outputs")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width does not chain")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def copy(self):
        return MlpParams(tuple(W.copy() for W in self.weights), tuple(b.copy() for b in self.biases),
                         None if self.input_scale is None else self.input_scale.copy())

    def to_text(self, header=None) -> str:
        lines = [f"# {ln}" for ln in header.splitlines()] if header else []
        lines.append("layers " + " ".join(str(s) for s in self.layer_sizes))
        if self.input_scale is None:
            lines.append("input_scale none")
        else:
            lines.append("input_scale " + " ".join(f"{v:.17g}" for v in self.input_scale))
        for i, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            lines.append(f"W{i} {W.shape[0]} {W.shape[1]}")
            lines.extend(" ".join(f"{v:.17g}" for v in row) for row in W)
            lines.append(f"b{i} {b.size}")
            lines.append(" ".join(f"{v:.17g}" for v in b))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        it = iter(lines)
        head = next(it).split()
        if head[0] != "layers":
            raise ValueError("model record must start with 'layers'")
        sizes = [int(v) for v in head[1:]]
        scale_line = next(it).split()
        input_scale = None if scale_line[1] == "none" else np.array([float(v) for v in scale_line[1:]])
        weights, biases = [], []
        for i in range(1, len(sizes)):
            tag, r, c = next(it).split()
            if tag != f"W{i}" or (int(r), int(c)) != (sizes[i], sizes[i - 1]):
                raise ValueError(f"unexpected weight block header {tag} {r} {c}")
            weights.append(np.array([[float(v) for v in next(it).split()] for _ in range(int(r))]))
            tag, k = next(it).split()
            if tag != f"b{i}" or int(k) != sizes[i]:
                raise ValueError(f"unexpected bias block header {tag} {k}")
            biases.append(np.array([float(v) for v in next(it).split()]))
        return cls(tuple(weights), tuple(biases), input_scale)


def init_mlp(layer_sizes, seed, input_scale=None) -> MlpParams:
    """Uniform fan-in initialization: weights in ``+-sqrt(6 / fan_in)``,
    biases in ``+-1 / sqrt(fan_in)``."""
    layer_sizes = [int(s) for s in layer_sizes]
    if len(layer_sizes) < 3:
        raise ValueError("layer_sizes needs input, at least one hidden and an output width")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in))
    scale = None if input_scale is None else np.asarray(input_scale, float)
    return MlpParams(tuple(weights), tuple(biases), scale)


def _forward(params, X):
    """Activations of every layer for a batch ``X`` of shape (k, m)."""
    a = X if params.input_scale is None else X / params.input_scale
    acts = [a]
    pre = []
    L = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < L - 1 else z
        acts.append(a)
    return acts, pre


def mlp_forward(params: MlpParams, x):
    """Network output for one state (shape (m,)) or a batch (shape (k, m))."""
    x = np.asarray(x, dtype=float)
    m = params.weights[0].shape[1]
    if x.shape[-1] != m:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {m}")
    single = x.ndim == 1
    out = _forward(params, np.atleast_2d(x))[0][-1]
    return out[0] if single else out


def loss_and_gradient(params: MlpParams, X, U):
    """Mean over samples of ``||u - net(x)||^2`` and its parameter gradients.

    Returns
    -------
    loss : float
    grads : list of (dW, db)
    """
    X = np.atleast_2d(np.asarray(X, float))
    k = X.shape[0]
    if k == 0:
        raise ValueError("empty batch")
    U = np.asarray(U, float).reshape(k, -1)
    acts, pre = _forward(params, X)
    err = acts[-1] - U
    with np.errstate(over="ignore", invalid="ignore"):
        loss = float(np.sum(err ** 2) / k)
    delta = 2.0 * err / k
    grads = []
    for i in range(len(params.weights) - 1, -1, -1):
        grads.append((delta.T @ acts[i], delta.sum(axis=0)))
        if i:
            delta = (delta @ params.weights[i]) * (pre[i - 1] > 0.0)
    grads.reverse()
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 1000
    seed: int = 0
    validation_fraction: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainResult:
    params: MlpParams
    loss_history: list
    initial_loss: float
    final_loss: float
    validation_mse: float | None
    train_index: np.ndarray = field(repr=False, default=None)


def split_indices(n, fraction, seed):
    """Seeded train/validation split."""
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_val = int(round(fraction * n))
    if n - n_val < 1:
        n_val = n - 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(X, U, layer_sizes, config: TrainConfig = TrainConfig(), input_scale=None) -> TrainResult:
    """Fit a ReLU network to ``(X, U)`` with full-batch Adam.

    `loss_history[e]` is the training loss before the update of epoch
    ``e``; `final_loss` is measured after the last update.
    """
    X = np.atleast_2d(np.asarray(X, float))
    U = np.asarray(U, float).reshape(X.shape[0], -1)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    sizes = list(layer_sizes)
    if sizes[0] != X.shape[1] or sizes[-1] != U.shape[1]:
        raise ValueError(f"layer sizes {sizes} do not match data ({X.shape[1]} -> {U.shape[1]})")

    tr, va = split_indices(X.shape[0], config.validation_fraction, config.seed)
    Xt, Ut = X[tr], U[tr]
    params = init_mlp(sizes, [config.seed, 0], input_scale)
    Ws = [W.copy() for W in params.weights]
    bs = [b.copy() for b in params.biases]
    mW = [np.zeros_like(W) for W in Ws]
    vW = [np.zeros_like(W) for W in Ws]
    mb = [np.zeros_like(b) for b in bs]
    vb = [np.zeros_like(b) for b in bs]
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps_adam
    history = []
    for epoch in range(1, config.epochs + 1):
        current = MlpParams(tuple(Ws), tuple(bs), params.input_scale)
        loss, grads = loss_and_gradient(current, Xt, Ut)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at epoch {epoch}")
        history.append(loss)
        c1 = 1.0 - b1 ** epoch
        c2 = 1.0 - b2 ** epoch
        for i, (gW, gb) in enumerate(grads):
            mW[i] = b1 * mW[i] + (1 - b1) * gW
            vW[i] = b2 * vW[i] + (1 - b2) * gW ** 2
            mb[i] = b1 * mb[i] + (1 - b1) * gb
            vb[i] = b2 * vb[i] + (1 - b2) * gb ** 2
            Ws[i] = Ws[i] - lr * (mW[i] / c1) / (np.sqrt(vW[i] / c2) + eps)
            bs[i] = bs[i] - lr * (mb[i] / c1) / (np.sqrt(vb[i] / c2) + eps)
    trained = MlpParams(tuple(Ws), tuple(bs), params.input_scale)
    final = loss_and_gradient(trained, Xt, Ut)[0]
    if not np.isfinite(final):
        raise TrainingDivergedError("final loss is not finite")
    initial = history[0] if history else final
    val = None
    if len(va):
        val = float(np.mean(np.sum((mlp_forward(trained, X[va]) - U[va]) ** 2, axis=1)))
    return TrainResult(trained, history, initial, final, val, tr)


@dataclass(frozen=True, eq=False)
class DualModeController:
    """``Kx`` inside the LQR admissible set, the network outside it."""

    K: np.ndarray
    sigma_inf: HPolytope
    mlp: MlpParams
    boundary_tol: float = 1e-9

    def __call__(self, x):
        return dual_mode_eval(self, x)

    def in_terminal_mode(self, x) -> bool:
        return pt.contains(self.sigma_inf, x, self.boundary_tol)


def dual_mode_eval(controller: DualModeController, x):
    x = np.asarray(x, dtype=float).ravel()
    if controller.in_terminal_mode(x):
        return controller.K @ x
    return np.atleast_1d(mlp_forward(controller.mlp, x))
