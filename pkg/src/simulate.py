"""
Simulated census-sample corpus
A seeded, schema-compatible stand-in for licence-restricted microdata: twelve
variables with planted dependencies between age, marital status, economic
position, qualifications, class, family type, tenure, ethnicity and birthplace
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np

from src.errors import EmptyDataset
from src.presets import sars_schema
from src.tabular import Dataset, Schema

logger = logging.getLogger(__name__)


def _normalise(p: Sequence[float]) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p / p.sum()


def _draw(rng: np.random.Generator, P: np.ndarray) -> np.ndarray:
    """One categorical draw per row of a row-stochastic matrix"""
    u = rng.random(P.shape[0])[:, None]
    idx = (np.cumsum(P, axis=1) < u).sum(axis=1)
    return np.minimum(idx, P.shape[1] - 1)


def _table(n: int, default: Sequence[float], cases: Sequence) -> np.ndarray:
    """Per-row probabilities: `default` unless one of the (mask, probs) cases applies; later cases win"""
    P = np.tile(_normalise(default), (n, 1))
    for mask, probs in cases:
        P[mask] = _normalise(probs)
    return P


def simulate_sars(n: int = 10000, seed: int = 0, schema: Optional[Schema] = None) -> Dataset:
    """Draw `n` person records; identical (n, seed) give identical datasets"""
    if n < 1:
        raise EmptyDataset(f"cannot simulate {n} rows")
    schema = schema or sars_schema()
    rng = np.random.default_rng(seed)
    codes: Dict[str, np.ndarray] = {}

    # area: a few large urban areas, a long tail of small ones
    area_weights = np.array([9, 7, 6] + [3] * 8 + [2] * 10, dtype=float)
    codes["AREAP"] = rng.choice(21, size=n, p=_normalise(area_weights))
    urban = codes["AREAP"] < 3

    ages = np.arange(96)
    age_weights = np.where(ages < 60, 1.0, np.exp(-(ages - 60) / 12.0))
    age = rng.choice(96, size=n, p=_normalise(age_weights))
    codes["AGE"] = age
    child, young, old = age <= 15, (age >= 16) & (age <= 24), age >= 65
    working_age = ~child & ~old

    codes["SEX"] = (rng.random(n) < 0.51).astype(np.int64)

    eth_rural = [93, 1, 1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5]
    eth_urban = [70, 4, 3, 5, 6, 4, 2, 2, 2, 2]
    ethgroup = _draw(rng, _table(n, eth_rural, [(urban, eth_urban)]))
    codes["ETHGROUP"] = ethgroup

    cob_native = [94, 1, 1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.3, 0.3, 0.4]
    cob_minority = [45, 2, 2, 6, 8, 8, 6, 5, 5, 4, 3, 3, 3]
    codes["COBIRTH"] = _draw(rng, _table(n, cob_native, [(ethgroup > 0, cob_minority)]))

    # single, married, remarried, divorced, widowed
    mstatus = _draw(rng, _table(n, [20, 60, 8, 10, 2], [
        (young, [80, 18, 0, 2, 0]),
        (age >= 60, [6, 55, 6, 5, 28]),
        (child, [1, 0, 0, 0, 0]),
    ]))
    codes["MSTATUS"] = mstatus

    # qualifications 0 / 1 / 2+
    qualnum = _draw(rng, _table(n, [80, 12, 8], [
        ((age >= 25) & (age <= 45), [70, 16, 14]),
        (old, [92, 5, 3]),
        (child, [1, 0, 0]),
    ]))
    codes["QUALNUM"] = qualnum

    # economic position 1..9 (8 = retired, 7 = permanently sick), NA for children
    econ_na = schema["ECONPRIM"].missing_code
    male = codes["SEX"] == 0
    econ = _draw(rng, _table(n, [45, 10, 6, 6, 8, 10, 4, 2, 9], [
        (working_age & male, [60, 12, 7, 4, 4, 1, 5, 2, 5]),
        (young, [35, 6, 10, 4, 30, 5, 1, 0, 9]),
        (old, [3, 1, 0, 1, 0, 4, 4, 85, 2]),
    ]))
    econ = np.where(child, econ_na, econ)
    codes["ECONPRIM"] = econ

    # social class 1..8, NA when there is no economic position or no occupation
    soc_na = schema["SOCLASS"].missing_code
    soclass = _draw(rng, _table(n, [3, 18, 16, 20, 17, 8, 4, 14], [
        (qualnum == 2, [20, 45, 15, 8, 5, 2, 1, 4]),
        (qualnum == 1, [8, 30, 22, 18, 10, 5, 2, 5]),
    ]))
    no_occupation = np.isin(econ, [4, 8]) & (rng.random(n) < 0.85)
    codes["SOCLASS"] = np.where(child | no_occupation, soc_na, soclass)

    # limiting long-term illness: 1 yes / 2 no, rising with age and with sickness
    p_ill = 1.0 / (1.0 + np.exp(-(-4.2 + 0.055 * age)))
    p_ill = np.where(econ == 6, 0.85, p_ill)
    codes["LTILL"] = (rng.random(n) >= p_ill).astype(np.int64)

    # family type 1..9 driven by marital status and age
    couple = (mstatus == 1) | (mstatus == 2)
    codes["FAMTYPE"] = _draw(rng, _table(n, [40, 5, 5, 5, 25, 5, 5, 5, 5], [
        (couple, [3, 30, 45, 10, 2, 4, 3, 2, 1]),
        (couple & old, [3, 75, 10, 3, 1, 4, 2, 1, 1]),
        (mstatus == 4, [70, 3, 2, 2, 10, 3, 4, 3, 3]),
        (child, [2, 0, 62, 18, 14, 2, 1, 0.5, 0.5]),
    ]))

    # tenure 1..7: owned outright, mortgage, council, housing association, private rent, ...
    tenure_default = [22, 40, 20, 3, 8, 4, 3]
    codes["TENURE"] = _draw(rng, _table(n, tenure_default, [
        (old, [55, 8, 25, 4, 4, 2, 2]),
        (urban, [15, 30, 35, 6, 8, 3, 3]),
        (np.isin(soclass, [0, 1]) & ~child & ~old, [12, 75, 3, 1, 6, 2, 1]),
        (young & ~couple, [5, 20, 20, 5, 40, 6, 4]),
    ]))

    ds = Dataset.from_codes(schema, codes)
    logger.info(
        f"Simulated {n} records",
        extra={"extra_data": {"event_type": "simulate", "rows": n, "seed": seed}},
    )
    return ds
