"""Synthetic datasets with known generating distributions, for tests and demos."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .table import CONTINUOUS, DISCRETE, Column, Schema, Table


@dataclass(frozen=True)
class MixtureSpec:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        modes = rng.choice(len(self.weights), size=n, p=self.weights)
        return np.asarray(self.means)[modes] + np.asarray(self.stds)[modes] * rng.standard_normal(n)


TWO_MODE = MixtureSpec((0.5, 0.5), (0.0, 5.0), (1.0, 1.0))
SKEWED_TWO_MODE = MixtureSpec((0.3, 0.7), (-2.0, 3.0), (0.5, 1.0))
COLOR_FREQS = {"blue": 0.2, "green": 0.3, "red": 0.5}
LABEL_FREQS = {"no": 0.6, "yes": 0.4}


def known_mixture_table(n: int, seed: int = 0) -> Table:
    """Two independent 2-mode continuous columns plus two categorical ones.

    Columns ``x`` and ``y`` follow ``TWO_MODE`` and ``SKEWED_TWO_MODE``;
    ``color`` and the label ``target`` follow ``COLOR_FREQS`` and ``LABEL_FREQS``.
    """
    rng = np.random.default_rng(seed)
    schema = Schema([Column("x", CONTINUOUS), Column("y", CONTINUOUS),
                     Column("color", DISCRETE), Column("target", DISCRETE, is_label=True)])
    data = {
        "x": TWO_MODE.sample(n, rng),
        "y": SKEWED_TWO_MODE.sample(n, rng),
        "color": rng.choice(list(COLOR_FREQS), size=n, p=list(COLOR_FREQS.values())),
        "target": rng.choice(list(LABEL_FREQS), size=n, p=list(LABEL_FREQS.values())),
    }
    return Table(schema, data)


CLASS_FREQS = (0.5, 0.3, 0.2)


def three_class_table(n: int, seed: int = 0, separation: float = 1.5) -> Table:
    """3-class problem with Gaussian class-conditional features.

    Class means of ``f1`` and ``f2`` lie on a line, ordered like the class
    frequencies, so the label is monotone in the informative features (a
    dependence a Gaussian copula can carry). ``f3`` and ``f4`` are noise and
    ``kind`` is a categorical feature whose distribution shifts with the class.
    """
    rng = np.random.default_rng(seed)
    classes = np.array(["c0", "c1", "c2"])
    y = rng.choice(3, size=n, p=CLASS_FREQS)
    offset = separation * np.array([1.0, 0.0, -1.0])
    f1 = offset[y] + rng.standard_normal(n)
    f2 = 0.5 * offset[y] + rng.standard_normal(n)
    noise = rng.standard_normal((n, 2)) * np.array([1.0, 2.0]) + np.array([0.0, 3.0])
    cat_probs = np.array([[0.6, 0.3, 0.1], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]])
    cats = np.array(["a", "b", "c"])
    u = rng.random(n)[:, None]
    cat = cats[(u > np.cumsum(cat_probs[y], axis=1)).sum(axis=1)]
    schema = Schema([Column("f1", CONTINUOUS), Column("f2", CONTINUOUS),
                     Column("f3", CONTINUOUS), Column("f4", CONTINUOUS),
                     Column("kind", DISCRETE), Column("label", DISCRETE, is_label=True)])
    data = {"f1": f1, "f2": f2, "f3": noise[:, 0], "f4": noise[:, 1],
            "kind": cat, "label": classes[y]}
    return Table(schema, data)


def clinical_schema() -> Schema:
    """7 continuous and 5 discrete columns (the last discrete one is the label)."""
    cols = [Column(f"lab_{i}", CONTINUOUS) for i in range(7)]
    cols += [Column(f"flag_{i}", DISCRETE) for i in range(4)]
    cols.append(Column("outcome", DISCRETE, is_label=True))
    return Schema(cols)


def clinical_table(n: int, seed: int = 0) -> Table:
    """Random table on ``clinical_schema`` with mildly correlated columns."""
    rng = np.random.default_rng(seed)
    schema = clinical_schema()
    latent = rng.standard_normal((n, 3))
    data = {}
    for i in range(7):
        mix = latent[:, i % 3] + 0.5 * rng.standard_normal(n)
        data[f"lab_{i}"] = np.where(rng.random(n) < 0.3, mix - 3.0, mix + 1.0) * (i + 1)
    for i in range(4):
        cut = np.quantile(latent[:, i % 3], [0.2, 0.6])
        data[f"flag_{i}"] = np.array(["lo", "mid", "hi"])[np.searchsorted(cut, latent[:, i % 3])]
    data["outcome"] = np.where(latent.sum(axis=1) + rng.standard_normal(n) > 0.5, "pos", "neg")
    return Table(schema, data)
