"""Biased matrix-factorization baseline trained by per-interaction SGD."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .errors import DivergenceError, ReviewRecError

logger = logging.getLogger(__name__)

RATING_MIN = 1.0
RATING_MAX = 5.0


@dataclass
class MFHyperParams:
    n_factors: int = 32
    learning_rate: float = 0.005
    l2: float = 0.02
    epochs: int = 30
    seed: int = 0


@dataclass
class MFModel:
    global_mean: float
    user_bias: dict[str, float]
    item_bias: dict[str, float]
    user_factors: dict[str, np.ndarray]
    item_factors: dict[str, np.ndarray]
    hyperparams: MFHyperParams = field(default_factory=MFHyperParams)

    def predict(self, user: str, item: str) -> float:
        """Clipped score; unknown entities fall back to bias/mean terms."""
        score = self.global_mean
        score += self.user_bias.get(user, 0.0)
        score += self.item_bias.get(item, 0.0)
        if user in self.user_factors and item in self.item_factors:
            score += float(self.user_factors[user] @ self.item_factors[item])
        return float(min(RATING_MAX, max(RATING_MIN, score)))

    def save(self, path):
        doc = {
            "global_mean": self.global_mean,
            "user_bias": self.user_bias,
            "item_bias": self.item_bias,
            "user_factors": {u: v.tolist() for u, v in self.user_factors.items()},
            "item_factors": {i: v.tolist() for i, v in self.item_factors.items()},
            "hyperparams": vars(self.hyperparams),
        }
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "MFModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            global_mean=doc["global_mean"],
            user_bias=dict(doc["user_bias"]),
            item_bias=dict(doc["item_bias"]),
            user_factors={u: np.asarray(v) for u, v in doc["user_factors"].items()},
            item_factors={i: np.asarray(v) for i, v in doc["item_factors"].items()},
            hyperparams=MFHyperParams(**doc["hyperparams"]),
        )


def pointwise_loss(mu, b_u, b_i, p_u, q_i, rating, l2) -> float:
    """Regularized squared error for one interaction."""
    err = mu + b_u + b_i + float(p_u @ q_i) - rating
    reg = l2 * (b_u**2 + b_i**2 + float(p_u @ p_u) + float(q_i @ q_i))
    return err**2 + reg


def pointwise_grad(mu, b_u, b_i, p_u, q_i, rating, l2):
    """Analytic gradient of pointwise_loss w.r.t. (b_u, b_i, p_u, q_i)."""
    err = mu + b_u + b_i + float(p_u @ q_i) - rating
    g_bu = 2 * err + 2 * l2 * b_u
    g_bi = 2 * err + 2 * l2 * b_i
    g_pu = 2 * err * q_i + 2 * l2 * p_u
    g_qi = 2 * err * p_u + 2 * l2 * q_i
    return g_bu, g_bi, g_pu, g_qi


def fit_triples(triples, hyperparams: MFHyperParams | None = None) -> MFModel:
    """SGD over shuffled epochs on mu + b_u + b_i + p_u . q_i with L2.

    ``triples`` is a sequence of (user, item, rating); ratings may be
    continuous.  Deterministic for a given seed.  Raises DivergenceError
    when the loss becomes non-finite.
    """
    triples = [(str(u), str(i), float(r)) for u, i, r in triples]
    if not triples:
        raise ReviewRecError("cannot fit on an empty rating set")
    hp = hyperparams or MFHyperParams()
    rng = np.random.default_rng(hp.seed)
    mu = sum(r for _, _, r in triples) / len(triples)
    users = sorted({u for u, _, _ in triples})
    items = sorted({i for _, i, _ in triples})
    user_bias = {u: 0.0 for u in users}
    item_bias = {i: 0.0 for i in items}
    user_factors = {
        u: rng.uniform(-0.05, 0.05, hp.n_factors) for u in users
    }
    item_factors = {
        i: rng.uniform(-0.05, 0.05, hp.n_factors) for i in items
    }
    lr = hp.learning_rate
    # overflow on a divergent run is expected; it surfaces as DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_epochs(
            triples, hp, rng, mu, user_bias, item_bias, user_factors, item_factors, lr
        )


def _run_epochs(
    triples, hp, rng, mu, user_bias, item_bias, user_factors, item_factors, lr
) -> MFModel:
    for epoch in range(hp.epochs):
        order = rng.permutation(len(triples))
        sq_err = 0.0
        for idx in order:
            u, i, r = triples[idx]
            b_u, b_i = user_bias[u], item_bias[i]
            p_u, q_i = user_factors[u], item_factors[i]
            err = mu + b_u + b_i + float(p_u @ q_i) - r
            sq_err += err * err
            # half the pointwise_loss gradient; the factor folds into lr
            user_bias[u] = b_u - lr * (err + hp.l2 * b_u)
            item_bias[i] = b_i - lr * (err + hp.l2 * b_i)
            user_factors[u] = p_u - lr * (err * q_i + hp.l2 * p_u)
            item_factors[i] = q_i - lr * (err * p_u + hp.l2 * q_i)
        if not np.isfinite(sq_err):
            raise DivergenceError(
                f"training diverged at epoch {epoch + 1}; reduce the learning rate"
            )
        logger.debug("epoch %d train mse %.5f", epoch + 1, sq_err / len(triples))
    return MFModel(
        global_mean=mu,
        user_bias=user_bias,
        item_bias=item_bias,
        user_factors=user_factors,
        item_factors=item_factors,
        hyperparams=hp,
    )


def fit(train: Corpus, hyperparams: MFHyperParams | None = None) -> MFModel:
    return fit_triples(
        ((it.user_id, it.item_id, it.rating) for it in train), hyperparams
    )


def rmse_on_triples(model: MFModel, triples) -> float:
    errors = [model.predict(u, i) - r for u, i, r in triples]
    return float(np.sqrt(np.mean(np.square(errors)))) if errors else 0.0


def evaluate_rmse(model: MFModel, corpus: Corpus) -> float:
    return rmse_on_triples(
        model, ((it.user_id, it.item_id, it.rating) for it in corpus)
    )


def grid_search(
    train: Corpus,
    valid: Corpus,
    n_factors=(16, 32),
    learning_rates=(0.005, 0.01),
    l2s=(0.02, 0.05),
    epochs: int = 30,
    seed: int = 0,
) -> tuple[MFModel, MFHyperParams, float]:
    """Small validation-split grid over the main hyperparameters."""
    best = None
    for d in n_factors:
        for lr in learning_rates:
            for l2 in l2s:
                hp = MFHyperParams(
                    n_factors=d, learning_rate=lr, l2=l2, epochs=epochs, seed=seed
                )
                try:
                    model = fit(train, hp)
                except DivergenceError:
                    logger.warning("grid point %s diverged; skipping", vars(hp))
                    continue
                rmse = evaluate_rmse(model, valid)
                logger.info("grid point %s valid rmse %.4f", vars(hp), rmse)
                if best is None or rmse < best[2]:
                    best = (model, hp, rmse)
    if best is None:
        raise DivergenceError("every grid point diverged")
    return best
