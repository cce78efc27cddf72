"""Exact Bayes risk of flow-matching regression on finite toy problems.

A toy is a finite joint law over ``(x0, x1, c, k)`` combined with an
independent finite law over ``t``. All arithmetic uses ``Fraction`` so
interpolated points collide exactly and the variance identities hold with
zero rounding error.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction


def _q(v):
    return tuple(Fraction(a) for a in (v if hasattr(v, "__len__") else (v,)))


@dataclass(frozen=True)
class Atom:
    x0: tuple
    x1: tuple
    c: int
    k: int
    p: Fraction


class DiscreteToy:
    """Finite-support coupling of source and target points with labels."""

    def __init__(self, atoms, t_grid):
        self.atoms = [Atom(_q(a[0]), _q(a[1]), int(a[2]), int(a[3]), Fraction(a[4])) for a in atoms]
        if not self.atoms:
            raise ValueError("empty support")
        if isinstance(t_grid, dict):
            self.t_grid = {Fraction(t): Fraction(p) for t, p in t_grid.items()}
        else:
            ts = [Fraction(t) for t in t_grid]
            self.t_grid = {t: Fraction(1, len(ts)) for t in ts}
        if not self.t_grid:
            raise ValueError("empty t grid")
        if any(t < 0 or t > 1 for t in self.t_grid):
            raise ValueError("t must lie in [0, 1]")
        total = sum(a.p for a in self.atoms)
        if total != 1 or sum(self.t_grid.values()) != 1:
            raise ValueError("probabilities must sum to 1")

    @classmethod
    def independent(cls, sources: dict, targets, t_grid):
        """Independent coupling: ``x0 ~ sources[(c, k)]`` given each target's labels.

        ``sources`` maps (c, k) to a list of ``(x0, p)``; ``targets`` is a
        list of ``(x1, c, k, p)``.
        """
        atoms = []
        for x1, c, k, p in targets:
            for x0, q in sources[(c, k)]:
                atoms.append((x0, x1, c, k, Fraction(p) * Fraction(q)))
        return cls(atoms, t_grid)

    def triples(self):
        for a in self.atoms:
            d = tuple(b - s for s, b in zip(a.x0, a.x1))
            for t, pt in self.t_grid.items():
                xt = tuple((1 - t) * s + t * b for s, b in zip(a.x0, a.x1))
                yield xt, t, a.c, a.k, d, a.p * pt


def _moments(rows):
    """Probability mass, mean vector and E||d||^2 for a list of (d, p)."""
    mass = sum(p for _, p in rows)
    dim = len(rows[0][0])
    mean = tuple(sum(p * d[i] for d, p in rows) / mass for i in range(dim))
    second = sum(p * sum(v * v for v in d) for d, p in rows) / mass
    return mass, mean, second


def _expected_var(groups) -> Fraction:
    total = Fraction(0)
    for rows in groups.values():
        mass, mean, second = _moments(rows)
        total += mass * (second - sum(m * m for m in mean))
    return total


def bayes_risk_exact(toy: DiscreteToy, conditioning: str = "c") -> Fraction:
    """E[Var(d | x_t, t, cond)] with cond = c or (c, k); trace of the covariance."""
    groups = defaultdict(list)
    for xt, t, c, k, d, p in toy.triples():
        key = (xt, t, c) if conditioning == "c" else (xt, t, c, k)
        groups[key].append((d, p))
    return _expected_var(groups)


def bayes_risk_enumerate(toy: DiscreteToy, conditioning: str = "c") -> float:
    if conditioning not in ("c", "ck"):
        raise ValueError("conditioning must be 'c' or 'ck'")
    return float(bayes_risk_exact(toy, conditioning))


def verify_total_variance(toy: DiscreteToy):
    """Both sides of the subclass-refinement variance decomposition.

    lhs = E Var(d | x_t, t, c) - E Var(d | x_t, t, c, k)
    rhs = E Var(E[d | x_t, t, c, k] | x_t, t, c)
    Returns ``(lhs, rhs, |lhs - rhs|)`` as floats; computed exactly.
    """
    lhs = bayes_risk_exact(toy, "c") - bayes_risk_exact(toy, "ck")
    outer = defaultdict(lambda: defaultdict(list))
    for xt, t, c, k, d, p in toy.triples():
        outer[(xt, t, c)][k].append((d, p))
    rhs = Fraction(0)
    for sub in outer.values():
        stats = [_moments(rows) for rows in sub.values()]
        mass = sum(m for m, _, _ in stats)
        dim = len(stats[0][1])
        grand = tuple(sum(m * mu[i] for m, mu, _ in stats) / mass for i in range(dim))
        rhs += sum(m * sum((mu[i] - grand[i]) ** 2 for i in range(dim)) for m, mu, _ in stats)
    return float(lhs), float(rhs), float(abs(lhs - rhs))
