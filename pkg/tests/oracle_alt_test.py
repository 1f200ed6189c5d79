"""Independent brute-force reference for the annotator-replacement statistics.

Written straight from the definition, with no code shared with the package:
plain loops, consensus as sum/len, and the binomial tail summed from
binomial coefficients. Used to cross-check compute_alt_test exactly.
"""

from __future__ import annotations

from math import comb


def binom_tail_at_least(k: int, n: int) -> float:
    """P[Binomial(n, 1/2) >= k]."""
    return sum(comb(n, i) for i in range(k, n + 1)) / 2**n


def brute_force_alt_test(
    item_ids: list[str],
    human_ids: list[str],
    scores: dict[str, dict[str, int]],
    llm_id: str,
    epsilon: float = 0.0,
    alpha: float = 0.05,
) -> dict:
    per = {}
    for j in human_ids:
        hits = []
        for item in item_ids:
            if item not in scores.get(j, {}) or item not in scores.get(llm_id, {}):
                continue
            others = [
                scores[other][item]
                for other in human_ids
                if other != j and item in scores.get(other, {})
            ]
            if not others:
                continue
            consensus = sum(others) / len(others)
            llm_distance = abs(scores[llm_id][item] - consensus)
            own_distance = abs(scores[j][item] - consensus)
            hits.append(1 if llm_distance <= own_distance + epsilon else 0)
        rho = sum(hits) / len(hits)
        p = binom_tail_at_least(sum(hits), len(hits))
        per[j] = {"rho": rho, "p_value": p, "win": p < alpha}
    return {
        "per_annotator": per,
        "winning_rate": sum(1 for v in per.values() if v["win"]) / len(per),
        "advantage_probability": sum(v["rho"] for v in per.values()) / len(per),
    }
