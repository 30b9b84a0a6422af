import enum
from dataclasses import dataclass

import pytest
from hypothesis import given, strategies as st

from hdrradar import config as kv
from hdrradar.errors import ConfigError


class Color(enum.Enum):
    RED = "red"
    BLUE = "blue"


@dataclass(frozen=True)
class Sample:
    x: float = 1.5
    n: int = 3
    flag: bool = False
    name: str = "a"
    pair: tuple = (1, 2)
    color: Color = Color.RED
    opt: object = None

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")


@given(st.floats(allow_nan=False, allow_infinity=False), st.integers(0, 10**12), st.booleans(),
       st.lists(st.integers(-5, 5), min_size=1, max_size=4))
def test_round_trip(x, n, flag, pair):
    s = Sample(x=x, n=n, flag=flag, pair=tuple(pair), color=Color.BLUE)
    back = kv.dataclass_from_items(Sample, kv.dataclass_items(s))
    assert back == s


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        kv.dataclass_from_items(Sample, {"nn": "1"})


def test_bad_value_and_validation():
    with pytest.raises(ConfigError):
        kv.dataclass_from_items(Sample, {"n": "three"})
    with pytest.raises(ConfigError):
        kv.dataclass_from_items(Sample, {"n": "-1"})
    with pytest.raises(ConfigError):
        kv.dataclass_from_items(Sample, {"flag": "maybe"})


def test_parse_and_dump():
    cp = kv.parse_text("[a]\nKey = 1\n")
    assert dict(cp["a"]) == {"Key": "1"}
    assert "Key = 1" in kv.dump(cp)
    with pytest.raises(ConfigError):
        kv.parse_text("no section header")


def test_empty_tuple_default_accepts_floats():
    @dataclass
    class T:
        xs: tuple = ()
    assert kv.dataclass_from_items(T, {"xs": "11.0,12.5"}).xs == (11.0, 12.5)
