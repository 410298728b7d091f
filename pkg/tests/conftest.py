"""Shared fixtures: small hand-built datasets and the simulated census corpus"""
import numpy as np
import pytest

from src.presets import sars_schema
from src.simulate import simulate_sars
from src.tabular import Dataset, Schema


@pytest.fixture
def small_schema():
    return Schema.model_validate({
        "dataset_name": "small",
        "variables": [
            {"name": "A", "kind": "categorical", "categories": ["a", "b"]},
            {"name": "B", "kind": "categorical", "categories": ["x", "y", "z"], "missing": True},
            {"name": "AGE", "kind": "integer", "min": 0, "max": 20},
        ],
    })


@pytest.fixture
def small_dataset(small_schema):
    return Dataset.from_labels(small_schema, {
        "A": ["a", "a", "b", "b", "a", "b", "a", "b"],
        "B": ["x", "y", "z", "NA", "x", "y", "", "z"],
        "AGE": ["1", "5", "7", "12", "20", "0", "9", "15"],
    })


@pytest.fixture
def random_dataset():
    """Factory for random datasets over small categorical spaces"""
    def _make(n=200, seed=0, levels=(2, 3, 4, 2)):
        schema = Schema.model_validate({
            "dataset_name": f"random{seed}",
            "variables": [
                {"name": f"V{i}", "kind": "categorical", "categories": [str(c) for c in range(k)]}
                for i, k in enumerate(levels)
            ],
        })
        rng = np.random.default_rng(seed)
        return Dataset.from_codes(schema, {f"V{i}": rng.integers(0, k, size=n) for i, k in enumerate(levels)})
    return _make


@pytest.fixture(scope="session")
def sars_orig():
    return simulate_sars(n=3000, seed=11)


@pytest.fixture(scope="session")
def sars_schema_fixture():
    return sars_schema()


@pytest.fixture
def csv_file(tmp_path):
    """Write text to a CSV file under tmp_path"""
    def _write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return _write
