# Copyright 2024 The lowdata-audio Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

from typing import Any

import json
import datetime
from dataclasses import asdict, is_dataclass

import numpy as np
from haikunator import Haikunator


def timestamp() -> str:
    """Return a current timestamp."""
    return datetime.datetime.now().strftime("%Y%m%d%H%M%S")


def haikunate() -> str:
    """Return a random name."""
    return Haikunator().haikunate()


def run_name() -> str:
    """Return a name for an output directory of a run."""
    return f"{timestamp()}-{haikunate()}"


def load_json(path: str) -> dict[str, Any]:
    """Load JSON file content."""
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_json(data: dict[str, Any], path: str) -> None:
    """Write a dictionary to a JSON file."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2)


def pprint_dict(dictionary: dict) -> str:
    """Return a pretty string of a dictionary."""
    return json.dumps(
        dictionary,
        ensure_ascii=False,
        indent=2,
        default=str
    )


def pprint_dcls(dcls: Any) -> str:
    """Return a pretty string representation of a dataclass."""
    if not is_dataclass(dcls):
        raise TypeError(f"Expected a dataclass instance but got {type(dcls)}")
    return pprint_dict(asdict(dcls))


def derive_seed(*keys: int) -> int:
    """Derive an independent 32-bit seed from a tuple of integers.

    Args:
        keys: For example the plan seed, a fold index and a run index.

    Returns:
        A seed that only depends on the keys.
    """
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def make_rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Return a generator for a seed (or pass a generator through)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
